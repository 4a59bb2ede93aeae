//! Constitutive laws: damage-dependent elasticity and viscosity, thermal
//! expansion, conductivity with truncation, gradient regularization and the
//! unidirectional dissipation density.
//!
//! All tensors are isotropic. An isotropic tensor with Lamé pair `(λ, μ)`
//! acts on symmetric 2×2 matrices as `A ↦ λ tr(A) I + 2μ A`, so its
//! eigenvalues are `2μ` (deviatoric) and `2μ + 2λ` (spherical).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric 2×2 tensor stored as `(xx, yy, xy)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Frobenius product `A : B`.
    pub fn dot(&self, other: &Sym2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(s * self.xx, s * self.yy, s * self.xy)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }
}

/// Isotropic fourth-order tensor given by a Lamé pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isotropic {
    pub lambda: f64,
    pub mu: f64,
}

impl Isotropic {
    pub fn apply(&self, e: &Sym2) -> Sym2 {
        let l = self.lambda * e.trace();
        Sym2::new(l + 2.0 * self.mu * e.xx, l + 2.0 * self.mu * e.yy, 2.0 * self.mu * e.xy)
    }

    /// `T a : b`.
    pub fn contract(&self, a: &Sym2, b: &Sym2) -> f64 {
        self.lambda * a.trace() * b.trace() + 2.0 * self.mu * a.dot(b)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        (2.0 * self.mu).min(2.0 * self.mu + 2.0 * self.lambda)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        (2.0 * self.mu).max(2.0 * self.mu + 2.0 * self.lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ViscosityProfile {
    /// `d(z, θ) = 1`.
    #[default]
    Constant,
    /// `d(z, θ) = c(z)`, the viscosity degrades with the stiffness.
    Damage,
}

/// Quadratic potential `W(z) = w0 + w1 z + w2 z²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for Potential {
    fn default() -> Self {
        // W(z) = ½(1 + z²)
        Self {
            w0: 0.5,
            w1: 0.0,
            w2: 0.5,
        }
    }
}

impl Potential {
    pub fn value(&self, z: f64) -> f64 {
        self.w0 + z * (self.w1 + z * self.w2)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.w1 + 2.0 * self.w2 * z
    }
}

/// Derived coercivity and growth constants of a [`MaterialLaws`] instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    pub elastic_lower: f64,
    pub elastic_upper: f64,
    pub viscous_lower: f64,
    pub viscous_upper: f64,
    pub conductivity_lower: f64,
    pub conductivity_upper: f64,
    /// Frobenius norm of the thermal expansion matrix.
    pub expansion_norm: f64,
    /// `C_𝔹² / (2 C¹_𝔻)`, the rate of the temperature comparison floor.
    pub cbar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialLaws {
    pub elastic: Isotropic,
    /// Residual stiffness fraction of the fully damaged state.
    pub delta: f64,
    pub viscous: Isotropic,
    pub viscosity_profile: ViscosityProfile,
    /// Thermal expansion coefficient `b`, `𝔹 = b I`.
    pub expansion: f64,
    pub k0: f64,
    pub kappa: f64,
    pub q: f64,
    pub gradient_prefactor: f64,
    pub potential: Potential,
    pub density: f64,
}

impl Default for MaterialLaws {
    fn default() -> Self {
        Self {
            elastic: Isotropic {
                lambda: 1.0,
                mu: 1.0,
            },
            delta: 0.1,
            viscous: Isotropic {
                lambda: 0.0,
                mu: 0.05,
            },
            viscosity_profile: ViscosityProfile::Constant,
            expansion: 0.1,
            k0: 1.0,
            kappa: 1.5,
            q: 2.0,
            gradient_prefactor: 1.0,
            potential: Potential::default(),
            density: 1.0,
        }
    }
}

/// `R₁(v)`: `|v|` for nonpositive rates, `+∞` otherwise.
pub fn r1(v: f64) -> f64 {
    if v <= 0.0 {
        -v
    } else {
        f64::INFINITY
    }
}

/// The truncation operator `𝒯_M`, clamping a temperature to `[0, M]`.
pub fn truncate(theta: f64, level: f64) -> Result<f64> {
    if level.is_nan() || level <= 0.0 {
        return Err(Error::Domain(format!("truncation level must be positive, got {level}")));
    }
    Ok(truncate_unchecked(theta, level))
}

#[inline]
pub(crate) fn truncate_unchecked(theta: f64, level: f64) -> f64 {
    if theta < 0.0 {
        0.0
    } else if theta > level {
        level
    } else {
        theta
    }
}

fn check_damage(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(Error::Domain(format!("damage {z} outside [0, 1]")))
    }
}

impl MaterialLaws {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("material.{name} must be positive, got {v}")))
            }
        };
        pos("elastic (min eigenvalue)", self.elastic.min_eigenvalue())?;
        pos("viscous (min eigenvalue)", self.viscous.min_eigenvalue())?;
        pos("delta", self.delta)?;
        pos("conductivity", self.k0)?;
        pos("density", self.density)?;
        pos("gradient_prefactor", self.gradient_prefactor)?;
        if !(self.kappa > 1.0 && self.kappa < 2.0) {
            return Err(Error::Config(format!(
                "material.kappa must lie in (1, 2) in two dimensions, got {}",
                self.kappa
            )));
        }
        if self.q <= 1.0 {
            return Err(Error::Config(format!("material.q must exceed 1, got {}", self.q)));
        }
        if !self.expansion.is_finite() || self.expansion < 0.0 {
            return Err(Error::Config("material.expansion must be nonnegative".into()));
        }
        Ok(())
    }

    /// Damage profile `c(z) = z² + δ`.
    pub fn stiffness_factor(&self, z: f64) -> f64 {
        z * z + self.delta
    }

    pub fn stiffness_factor_derivative(&self, z: f64) -> f64 {
        2.0 * z
    }

    /// `d(z, θ)` with `𝔻(z, θ) = d(z, θ) 𝔻₀`.
    pub fn viscosity_factor(&self, z: f64, _theta: f64) -> f64 {
        match self.viscosity_profile {
            ViscosityProfile::Constant => 1.0,
            ViscosityProfile::Damage => self.stiffness_factor(z),
        }
    }

    /// `𝔻(z, θ) a : b`.
    pub fn viscous_contract(&self, z: f64, theta: f64, a: &Sym2, b: &Sym2) -> f64 {
        self.viscosity_factor(z, theta) * self.viscous.contract(a, b)
    }

    /// `ℂ(z) a : b`.
    pub fn elastic_contract(&self, z: f64, a: &Sym2, b: &Sym2) -> f64 {
        self.stiffness_factor(z) * self.elastic.contract(a, b)
    }

    /// `½ ℂ(z) e : e` and its derivative in `z`.
    pub fn elastic_energy_density(&self, z: f64, e: &Sym2) -> Result<(f64, f64)> {
        check_damage(z)?;
        let base = 0.5 * self.elastic.contract(e, e);
        Ok((
            self.stiffness_factor(z) * base,
            self.stiffness_factor_derivative(z) * base,
        ))
    }

    /// `G(z, ξ) = g₁|ξ|^q + W(z) + I_[0,1](z)` with partial derivatives
    /// `(value, ∂z, ∂ξ)`. Outside `[0, 1]` the value is `+∞` and the
    /// derivatives are NaN.
    pub fn gradient_energy_density(&self, z: f64, grad: [f64; 2]) -> (f64, f64, [f64; 2]) {
        if !(0.0..=1.0).contains(&z) {
            return (f64::INFINITY, f64::NAN, [f64::NAN; 2]);
        }
        let (gv, gd) = self.gradient_term(grad);
        (
            gv + self.potential.value(z),
            self.potential.derivative(z),
            gd,
        )
    }

    /// `g₁|ξ|^q` and its gradient.
    pub fn gradient_term(&self, grad: [f64; 2]) -> (f64, [f64; 2]) {
        let n2 = grad[0] * grad[0] + grad[1] * grad[1];
        if n2 == 0.0 {
            return (0.0, [0.0, 0.0]);
        }
        let g1 = self.gradient_prefactor;
        let value = if self.q == 2.0 { g1 * n2 } else { g1 * n2.powf(0.5 * self.q) };
        let s = if self.q == 2.0 {
            2.0 * g1
        } else {
            g1 * self.q * n2.powf(0.5 * self.q - 1.0)
        };
        (value, [s * grad[0], s * grad[1]])
    }

    /// Isotropic conductivity `k(z, θ) = k₀(1 + |θ|^κ)`.
    pub fn conductivity(&self, _z: f64, theta: f64) -> f64 {
        self.k0 * (1.0 + theta.abs().powf(self.kappa))
    }

    /// `∂k/∂θ`.
    pub fn conductivity_derivative(&self, _z: f64, theta: f64) -> f64 {
        if theta == 0.0 {
            0.0
        } else {
            self.k0 * self.kappa * theta.abs().powf(self.kappa - 1.0) * theta.signum()
        }
    }

    pub fn bounds(&self) -> BoundConstants {
        let (cmin, cmax) = (self.stiffness_factor(0.0), self.stiffness_factor(1.0));
        let (dmin, dmax) = match self.viscosity_profile {
            ViscosityProfile::Constant => (1.0, 1.0),
            ViscosityProfile::Damage => (cmin, cmax),
        };
        let viscous_lower = dmin * self.viscous.min_eigenvalue();
        let expansion_norm = self.expansion * 2f64.sqrt();
        BoundConstants {
            elastic_lower: cmin * self.elastic.min_eigenvalue(),
            elastic_upper: cmax * self.elastic.max_eigenvalue(),
            viscous_lower,
            viscous_upper: dmax * self.viscous.max_eigenvalue(),
            conductivity_lower: self.k0,
            conductivity_upper: self.k0 * 2f64.sqrt(),
            expansion_norm,
            cbar: expansion_norm * expansion_norm / (2.0 * viscous_lower),
        }
    }
}
