//! Finite-element operators for the discrete momentum balance, heat equation
//! and damage energy on P1 triangles.
//!
//! Damage- and temperature-dependent coefficients are sampled at the element
//! centroid; polynomial P1 products are integrated exactly. Element
//! contributions are computed in parallel and merged in element order, so the
//! assembled operators do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{truncate_unchecked, Isotropic, MaterialLaws, Sym2};
use crate::mesh::{BoundaryLabel, DofMap, Mesh2D, Side, TriangleGeometry};
use crate::sparse::SparseOperator;

/// Scalar data as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeFunction {
    Constant { value: f64 },
    /// `start + slope · t`.
    Ramp { start: f64, slope: f64 },
    /// `Σ cᵢ tⁱ`.
    Polynomial { coefficients: Vec<f64> },
    /// Piecewise linear through `(times, values)`, constant beyond the ends.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl Default for TimeFunction {
    fn default() -> Self {
        TimeFunction::Constant { value: 0.0 }
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Mean of `f` over `[a, b]` by 3-point Gauss–Legendre.
pub fn gauss3_mean(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    0.5 * GAUSS3.iter().map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        TimeFunction::Constant { value }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            TimeFunction::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::Config(format!(
                        "{name}: tabulated function needs matching nonempty times and values"
                    )));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config(format!("{name}: tabulated times must increase")));
                }
            }
            TimeFunction::Polynomial { coefficients } if coefficients.is_empty() => {
                return Err(Error::Config(format!("{name}: polynomial needs coefficients")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Ramp { start, slope } => start + slope * t,
            TimeFunction::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            TimeFunction::Tabulated { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                (1.0 - w) * values[i] + w * values[i + 1]
            }
        }
    }

    /// Exact mean over `[a, b]` for constant, ramp and polynomial data;
    /// 3-point Gauss for tabulated data.
    pub fn mean(&self, a: f64, b: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Ramp { start, slope } => start + slope * 0.5 * (a + b),
            TimeFunction::Polynomial { coefficients } => {
                let anti = |t: f64| {
                    coefficients
                        .iter()
                        .enumerate()
                        .rev()
                        .fold(0.0, |acc, (i, c)| acc * t + c / (i as f64 + 1.0))
                        * t
                };
                if b == a {
                    self.value(a)
                } else {
                    (anti(b) - anti(a)) / (b - a)
                }
            }
            TimeFunction::Tabulated { .. } => gauss3_mean(|t| self.value(t), a, b),
        }
    }

    /// Lower bound of the function on `[0, horizon]` (sampled for polynomials).
    pub fn min_on(&self, horizon: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Ramp { .. } => self.value(0.0).min(self.value(horizon)),
            TimeFunction::Tabulated { times, values } => {
                let inside = times
                    .iter()
                    .zip(values)
                    .filter(|(t, _)| **t > 0.0 && **t < horizon)
                    .map(|(_, v)| *v);
                inside.fold(self.value(0.0).min(self.value(horizon)), f64::min)
            }
            TimeFunction::Polynomial { .. } => (0..=1000)
                .map(|i| self.value(horizon * i as f64 / 1000.0))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Local mean `(1/τ) ∫_{t_{k-1}}^{t_k} g(s) ds` over step `k` of `n`.
pub fn local_mean(g: &TimeFunction, k: usize, n: usize, tau: f64) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Input(format!("step index {k} outside 1..={n}")));
    }
    let a = (k - 1) as f64 * tau;
    Ok(g.mean(a, a + tau))
}

/// Spatially uniform loads: volume force, Neumann traction on selected sides,
/// volumetric heat source and boundary heat flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LoadData {
    pub body_force: [TimeFunction; 2],
    pub traction: [TimeFunction; 2],
    /// Sides receiving the traction; empty means every Neumann edge.
    pub traction_sides: Vec<Side>,
    pub heat_source: TimeFunction,
    pub heat_flux: TimeFunction,
}

/// Load values at one time level.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LoadSample {
    pub body_force: [f64; 2],
    pub traction: [f64; 2],
    pub heat_source: f64,
    pub heat_flux: f64,
}

impl LoadSample {
    pub fn scaled_heat(self, factor: f64) -> Self {
        Self {
            heat_source: factor * self.heat_source,
            heat_flux: factor * self.heat_flux,
            ..self
        }
    }
}

impl LoadData {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        for (name, f) in [
            ("loads.body_force[0]", &self.body_force[0]),
            ("loads.body_force[1]", &self.body_force[1]),
            ("loads.traction[0]", &self.traction[0]),
            ("loads.traction[1]", &self.traction[1]),
            ("loads.heat_source", &self.heat_source),
            ("loads.heat_flux", &self.heat_flux),
        ] {
            f.validate(name)?;
        }
        if self.heat_source.min_on(horizon) < 0.0 {
            return Err(Error::Config(
                "loads.heat_source: the volumetric heat source must satisfy H ≥ 0".into(),
            ));
        }
        if self.heat_flux.min_on(horizon) < 0.0 {
            return Err(Error::Config(
                "loads.heat_flux: the boundary heat flux must satisfy h ≥ 0".into(),
            ));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> LoadSample {
        LoadSample {
            body_force: [self.body_force[0].value(t), self.body_force[1].value(t)],
            traction: [self.traction[0].value(t), self.traction[1].value(t)],
            heat_source: self.heat_source.value(t),
            heat_flux: self.heat_flux.value(t),
        }
    }

    /// Local means over step `k` (of `n`, size `tau`).
    pub fn mean(&self, k: usize, n: usize, tau: f64) -> Result<LoadSample> {
        let m = |g: &TimeFunction| local_mean(g, k, n, tau);
        Ok(LoadSample {
            body_force: [m(&self.body_force[0])?, m(&self.body_force[1])?],
            traction: [m(&self.traction[0])?, m(&self.traction[1])?],
            heat_source: m(&self.heat_source)?,
            heat_flux: m(&self.heat_flux)?,
        })
    }

    /// The combined mechanical load functional as a dual vector on all
    /// displacement dofs.
    pub fn force_vector(&self, mesh: &Mesh2D, dofs: &DofMap, s: &LoadSample) -> Vec<f64> {
        let mut f = assemble_body_force(mesh, dofs, s.body_force);
        let t = assemble_traction(mesh, dofs, s.traction, &self.traction_sides);
        for (a, b) in f.iter_mut().zip(t) {
            *a += b;
        }
        f
    }

    /// `∫ H φᵢ + ∫_∂Ω h φᵢ`.
    pub fn heat_vector(&self, mesh: &Mesh2D, s: &LoadSample) -> Vec<f64> {
        let mut v = assemble_source(mesh, |_| s.heat_source);
        let b = assemble_boundary_flux(mesh, |_, _| s.heat_flux);
        for (a, b) in v.iter_mut().zip(b) {
            *a += b;
        }
        v
    }
}

/// Strains of the six vector basis functions of a triangle, in local dof
/// order `2a + c` (node `a`, component `c`).
pub fn strain_basis(g: &TriangleGeometry) -> [Sym2; 6] {
    let mut out = [Sym2::ZERO; 6];
    for a in 0..3 {
        let [gx, gy] = g.grads[a];
        out[2 * a] = Sym2::new(gx, 0.0, 0.5 * gy);
        out[2 * a + 1] = Sym2::new(0.0, gy, 0.5 * gx);
    }
    out
}

/// Constant strain `e(u)` on a triangle from a full nodal displacement vector.
pub fn element_strain(g: &TriangleGeometry, tri: &[usize; 3], u: &[f64]) -> Sym2 {
    let mut e = Sym2::ZERO;
    for a in 0..3 {
        let (ux, uy) = (u[2 * tri[a]], u[2 * tri[a] + 1]);
        let [gx, gy] = g.grads[a];
        e.xx += ux * gx;
        e.yy += uy * gy;
        e.xy += 0.5 * (ux * gy + uy * gx);
    }
    e
}

pub fn element_gradient(g: &TriangleGeometry, tri: &[usize; 3], f: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for a in 0..3 {
        out[0] += f[tri[a]] * g.grads[a][0];
        out[1] += f[tri[a]] * g.grads[a][1];
    }
    out
}

pub fn centroid_value(tri: &[usize; 3], f: &[f64]) -> f64 {
    (f[tri[0]] + f[tri[1]] + f[tri[2]]) / 3.0
}

/// Per-element strains of a displacement field.
pub fn strains(mesh: &Mesh2D, u: &[f64]) -> Vec<Sym2> {
    mesh.triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| element_strain(g, t, u))
        .collect()
}

fn vector_dofs(tri: &[usize; 3]) -> [usize; 6] {
    [
        2 * tri[0],
        2 * tri[0] + 1,
        2 * tri[1],
        2 * tri[1] + 1,
        2 * tri[2],
        2 * tri[2] + 1,
    ]
}

fn merge<const N: usize>(
    n: usize,
    locals: Vec<([usize; N], [[f64; N]; N])>,
    symmetric: bool,
) -> SparseOperator {
    let mut trip = Vec::with_capacity(locals.len() * N * N);
    for (dofs, k) in locals {
        for i in 0..N {
            for j in 0..N {
                trip.push((dofs[i], dofs[j], k[i][j]));
            }
        }
    }
    SparseOperator::from_triplets(n, &trip, symmetric)
}

fn merge_vec<const N: usize>(n: usize, locals: Vec<([usize; N], [f64; N])>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (dofs, v) in locals {
        for i in 0..N {
            out[dofs[i]] += v[i];
        }
    }
    out
}

const P1_MASS: [[f64; 3]; 3] = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];

/// Consistent scalar P1 mass matrix `ρ ∫ φᵢ φⱼ`.
pub fn assemble_scalar_mass(mesh: &Mesh2D, rho: f64) -> SparseOperator {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = rho * g.area / 12.0 * P1_MASS[i][j];
                }
            }
            (*t, k)
        })
        .collect();
    merge(mesh.n_nodes(), locals, true)
}

/// Consistent vector mass matrix `ρ ∫ φᵢ φⱼ δ_cd` on displacement dofs.
pub fn assemble_mass(mesh: &Mesh2D, dofs: &DofMap, rho: f64) -> SparseOperator {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let mut k = [[0.0; 6]; 6];
            for a in 0..3 {
                for b in 0..3 {
                    let m = rho * g.area / 12.0 * P1_MASS[a][b];
                    k[2 * a][2 * b] = m;
                    k[2 * a + 1][2 * b + 1] = m;
                }
            }
            (vector_dofs(t), k)
        })
        .collect();
    merge(dofs.n_vector(), locals, true)
}

/// `Σₑ coeffₑ ∫ T e(φᵢ) : e(φⱼ)` for an isotropic tensor `T`.
pub fn assemble_isotropic_stiffness(
    mesh: &Mesh2D,
    dofs: &DofMap,
    tensor: &Isotropic,
    coeff: &[f64],
) -> SparseOperator {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .zip(coeff)
        .map(|((t, g), &c)| {
            let b = strain_basis(g);
            let mut k = [[0.0; 6]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    k[i][j] = c * g.area * tensor.contract(&b[i], &b[j]);
                }
            }
            (vector_dofs(t), k)
        })
        .collect();
    merge(dofs.n_vector(), locals, true)
}

fn check_damage_field(z: &[f64]) -> Result<()> {
    match z.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::Domain(format!("damage {} at node {i} outside [0, 1]", z[i]))),
        None => Ok(()),
    }
}

/// Elastic stiffness with `c(z)` sampled at each centroid.
pub fn assemble_elastic(mesh: &Mesh2D, dofs: &DofMap, z: &[f64], mat: &MaterialLaws) -> Result<SparseOperator> {
    check_damage_field(z)?;
    let coeff: Vec<f64> = mesh
        .triangles()
        .iter()
        .map(|t| mat.stiffness_factor(centroid_value(t, z)))
        .collect();
    Ok(assemble_isotropic_stiffness(mesh, dofs, &mat.elastic, &coeff))
}

/// Viscous stiffness `∫ 𝔻(z, θ) e(φᵢ) : e(φⱼ)` with centroid sampling.
pub fn assemble_viscous(mesh: &Mesh2D, dofs: &DofMap, z: &[f64], theta: &[f64], mat: &MaterialLaws) -> SparseOperator {
    let coeff: Vec<f64> = viscosity_coefficients(mesh, z, theta, mat);
    assemble_isotropic_stiffness(mesh, dofs, &mat.viscous, &coeff)
}

pub fn viscosity_coefficients(mesh: &Mesh2D, z: &[f64], theta: &[f64], mat: &MaterialLaws) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| mat.viscosity_factor(centroid_value(t, z), centroid_value(t, theta)))
        .collect()
}

/// Residual and Jacobian of the regularization `τ ∫ |e(u)|^{γ−2} e(u) : e(v)`.
pub fn assemble_gamma_term(
    mesh: &Mesh2D,
    dofs: &DofMap,
    u: &[f64],
    tau: f64,
    gamma: f64,
) -> Result<(Vec<f64>, SparseOperator)> {
    if gamma <= 4.0 {
        return Err(Error::Config(format!("regularization exponent must exceed 4, got {gamma}")));
    }
    let locals: Vec<_> = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let e = element_strain(g, t, u);
            let b = strain_basis(g);
            let n2 = e.norm_sq();
            let mut r = [0.0; 6];
            let mut k = [[0.0; 6]; 6];
            if n2 > 0.0 {
                let n = n2.sqrt();
                let s = tau * g.area * n.powf(gamma - 2.0);
                let s2 = tau * g.area * (gamma - 2.0) * n.powf(gamma - 4.0);
                let eb: [f64; 6] = std::array::from_fn(|i| e.dot(&b[i]));
                for i in 0..6 {
                    r[i] = s * eb[i];
                    for j in 0..6 {
                        k[i][j] = s * b[i].dot(&b[j]) + s2 * eb[i] * eb[j];
                    }
                }
            }
            let d = vector_dofs(t);
            ((d, r), (d, k))
        })
        .collect();
    let (rv, kv): (Vec<_>, Vec<_>) = locals.into_iter().unzip();
    Ok((merge_vec(dofs.n_vector(), rv), merge(dofs.n_vector(), kv, true)))
}

/// `(τ/γ) ∫ |e(u)|^γ`.
pub fn gamma_energy(mesh: &Mesh2D, u: &[f64], tau: f64, gamma: f64) -> f64 {
    mesh.triangles()
        .iter()
        .zip(mesh.geometry())
        .map(|(t, g)| g.area * element_strain(g, t, u).norm().powf(gamma))
        .sum::<f64>()
        * tau
        / gamma
}

/// Thermal stress load `∫ θ 𝔹 : e(φ_a)` with `𝔹 = b I`; `θ` enters through
/// its exact element mean.
pub fn assemble_thermal_stress(mesh: &Mesh2D, dofs: &DofMap, theta: &[f64], b: f64) -> Vec<f64> {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let th = centroid_value(t, theta);
            let basis = strain_basis(g);
            let r: [f64; 6] = std::array::from_fn(|i| g.area * b * th * basis[i].trace());
            (vector_dofs(t), r)
        })
        .collect();
    merge_vec(dofs.n_vector(), locals)
}

/// Constant body force `∫ f · φ`.
pub fn assemble_body_force(mesh: &Mesh2D, dofs: &DofMap, f: [f64; 2]) -> Vec<f64> {
    let mut out = vec![0.0; dofs.n_vector()];
    if f == [0.0, 0.0] {
        return out;
    }
    for (t, g) in mesh.triangles().iter().zip(mesh.geometry()) {
        for &n in t {
            out[2 * n] += f[0] * g.area / 3.0;
            out[2 * n + 1] += f[1] * g.area / 3.0;
        }
    }
    out
}

/// Constant traction on Neumann edges of the selected sides (all Neumann
/// edges when `sides` is empty).
pub fn assemble_traction(mesh: &Mesh2D, dofs: &DofMap, t: [f64; 2], sides: &[Side]) -> Vec<f64> {
    let mut out = vec![0.0; dofs.n_vector()];
    if t == [0.0, 0.0] {
        return out;
    }
    for e in mesh.boundary_edges() {
        if e.label != BoundaryLabel::Neumann {
            continue;
        }
        if !sides.is_empty() && !e.side.is_some_and(|s| sides.contains(&s)) {
            continue;
        }
        for &n in &e.nodes {
            out[2 * n] += 0.5 * t[0] * e.length;
            out[2 * n + 1] += 0.5 * t[1] * e.length;
        }
    }
    out
}

/// `∫ H φᵢ` with the edge-midpoint rule (exact for quadratic integrands).
pub fn assemble_source(mesh: &Mesh2D, h: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_nodes()];
    let p = mesh.nodes();
    for (t, g) in mesh.triangles().iter().zip(mesh.geometry()) {
        for m in 0..3 {
            let (a, b) = (t[m], t[(m + 1) % 3]);
            let x = [0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])];
            let v = h(x) * g.area / 3.0 * 0.5;
            out[a] += v;
            out[b] += v;
        }
    }
    out
}

/// `∫_∂Ω h φᵢ` with 2-point Gauss per edge; `h` receives the point and the
/// outward normal.
pub fn assemble_boundary_flux(mesh: &Mesh2D, h: impl Fn([f64; 2], [f64; 2]) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_nodes()];
    let p = mesh.nodes();
    let s = 0.5 / 3f64.sqrt();
    for e in mesh.boundary_edges() {
        let (a, b) = (p[e.nodes[0]], p[e.nodes[1]]);
        for lam in [0.5 - s, 0.5 + s] {
            let x = [(1.0 - lam) * a[0] + lam * b[0], (1.0 - lam) * a[1] + lam * b[1]];
            let w = 0.5 * e.length * h(x, e.normal);
            out[e.nodes[0]] += w * (1.0 - lam);
            out[e.nodes[1]] += w * lam;
        }
    }
    out
}

/// How the conductivity sees the temperature during assembly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    Level(f64),
    None,
}

impl Truncation {
    pub fn apply(&self, theta: f64) -> f64 {
        match self {
            Truncation::Level(m) => truncate_unchecked(theta, *m),
            Truncation::None => theta,
        }
    }

    /// Derivative of the truncation.
    pub fn slope(&self, theta: f64) -> f64 {
        match self {
            Truncation::Level(m) if theta < 0.0 || theta > *m => 0.0,
            _ => 1.0,
        }
    }
}

/// Scalar stiffness `Σₑ coeffₑ ∫ ∇φᵢ · ∇φⱼ`.
pub fn assemble_scalar_laplacian(mesh: &Mesh2D, coeff: &[f64]) -> SparseOperator {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .zip(coeff)
        .map(|((t, g), &c)| {
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = c * g.area * (g.grads[i][0] * g.grads[j][0] + g.grads[i][1] * g.grads[j][1]);
                }
            }
            (*t, k)
        })
        .collect();
    merge(mesh.n_nodes(), locals, true)
}

pub fn conductivity_coefficients(
    mesh: &Mesh2D,
    z: &[f64],
    theta: &[f64],
    level: Truncation,
    mat: &MaterialLaws,
) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| mat.conductivity(centroid_value(t, z), level.apply(centroid_value(t, theta))))
        .collect()
}

/// Conductivity stiffness with `k(z, 𝒯_M(θ))` at centroids.
pub fn assemble_heat_stiffness(
    mesh: &Mesh2D,
    z: &[f64],
    theta: &[f64],
    level: Truncation,
    mat: &MaterialLaws,
) -> SparseOperator {
    assemble_scalar_laplacian(mesh, &conductivity_coefficients(mesh, z, theta, level, mat))
}

/// Jacobian of `θ ↦ K(z, θ) θ`, including the derivative of the centroid
/// conductivity. Not symmetric.
pub fn assemble_heat_jacobian(
    mesh: &Mesh2D,
    z: &[f64],
    theta: &[f64],
    level: Truncation,
    mat: &MaterialLaws,
) -> SparseOperator {
    let locals = mesh
        .triangles()
        .par_iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let zc = centroid_value(t, z);
            let tc = centroid_value(t, theta);
            let tt = level.apply(tc);
            let k = mat.conductivity(zc, tt);
            let dk = mat.conductivity_derivative(zc, tt) * level.slope(tc);
            let gt = element_gradient(g, t, theta);
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                let flux = g.grads[i][0] * gt[0] + g.grads[i][1] * gt[1];
                for j in 0..3 {
                    let lap = g.grads[i][0] * g.grads[j][0] + g.grads[i][1] * g.grads[j][1];
                    m[i][j] = g.area * (k * lap + dk / 3.0 * flux);
                }
            }
            (*t, m)
        })
        .collect();
    merge(mesh.n_nodes(), locals, false)
}

/// Right-hand-side ingredients of the discrete heat equation for one step,
/// all tested against the P1 basis with lumped (vertex) quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatSources {
    /// `∫ (z_{k−1} − z_k)/τ φᵢ`.
    pub damage_rate: Vec<f64>,
    /// `∫ 𝔻(z_{k−1}, θ_{k−1}) e(u̇) : e(u̇) φᵢ`.
    pub viscous: Vec<f64>,
    /// Diagonal coefficients `sᵢ = ∫ 𝔹 : e(u̇) φᵢ`; the coupling term is `sᵢ θᵢ`.
    pub coupling: Vec<f64>,
}

impl HeatSources {
    pub fn assemble(
        mesh: &Mesh2D,
        mat: &MaterialLaws,
        z_prev: &[f64],
        z_new: &[f64],
        theta_prev: &[f64],
        velocity: &[f64],
        tau: f64,
    ) -> Self {
        let n = mesh.n_nodes();
        let damage_rate = mesh
            .node_areas()
            .iter()
            .zip(z_prev.iter().zip(z_new))
            .map(|(m, (a, b))| m * (a - b) / tau)
            .collect();
        let mut viscous = vec![0.0; n];
        let mut coupling = vec![0.0; n];
        for (t, g) in mesh.triangles().iter().zip(mesh.geometry()) {
            let e = element_strain(g, t, velocity);
            let d = mat.viscous_contract(centroid_value(t, z_prev), centroid_value(t, theta_prev), &e, &e);
            let s = mat.expansion * e.trace();
            for &i in t {
                viscous[i] += g.area / 3.0 * d;
                coupling[i] += g.area / 3.0 * s;
            }
        }
        Self {
            damage_rate,
            viscous,
            coupling,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            damage_rate: vec![0.0; n],
            viscous: vec![0.0; n],
            coupling: vec![0.0; n],
        }
    }
}

/// Conductivity stiffness together with the coupling and source vectors of
/// one heat step.
#[allow(clippy::too_many_arguments)]
pub fn assemble_heat(
    mesh: &Mesh2D,
    mat: &MaterialLaws,
    z_prev: &[f64],
    z_new: &[f64],
    theta_prev: &[f64],
    theta: &[f64],
    velocity: &[f64],
    tau: f64,
    level: Truncation,
) -> (SparseOperator, HeatSources) {
    (
        assemble_heat_stiffness(mesh, z_new, theta, level, mat),
        HeatSources::assemble(mesh, mat, z_prev, z_new, theta_prev, velocity, tau),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1e-300)
    }

    #[test]
    fn local_means() {
        let c = TimeFunction::constant(5.0);
        assert_eq!(local_mean(&c, 3, 10, 0.1).unwrap(), 5.0);
        let r = TimeFunction::Ramp { start: 0.0, slope: 1.0 };
        assert!((local_mean(&r, 1, 10, 0.1).unwrap() - 0.05).abs() < 1e-15);
        let p = TimeFunction::Polynomial { coefficients: vec![0.0, 0.0, 1.0] };
        assert!((local_mean(&p, 1, 1, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((gauss3_mean(|t| t * t, 0.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!(local_mean(&c, 0, 10, 0.1).is_err());
        assert!(local_mean(&c, 11, 10, 0.1).is_err());
        let tab = TimeFunction::Tabulated { times: vec![0.0, 1.0], values: vec![0.0, 2.0] };
        assert!((local_mean(&tab, 2, 4, 0.25).unwrap() - 0.75).abs() < 1e-14);
        assert_eq!(tab.value(3.0), 2.0);
    }

    #[test]
    fn negative_heat_rejected() {
        let l = LoadData {
            heat_source: TimeFunction::Ramp { start: 1.0, slope: -2.0 },
            ..LoadData::default()
        };
        assert!(l.validate(1.0).is_err());
        assert!(l.validate(0.4).is_ok());
    }

    #[test]
    fn reference_triangle_mass() {
        let mesh = Mesh2D::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                crate::mesh::RawBoundaryEdge { nodes: [0, 1], label: Some(BoundaryLabel::Dirichlet), side: None },
                crate::mesh::RawBoundaryEdge { nodes: [1, 2], label: Some(BoundaryLabel::Neumann), side: None },
                crate::mesh::RawBoundaryEdge { nodes: [2, 0], label: Some(BoundaryLabel::Neumann), side: None },
            ],
        )
        .unwrap();
        let m = assemble_scalar_mass(&mesh, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = 0.5 / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((m.get(i, j) - expect).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn mass_row_sums_and_definiteness() {
        let mesh = generate_unit_square(6, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let m = assemble_scalar_mass(&mesh, 2.5);
        let ones = vec![1.0; mesh.n_nodes()];
        let rows = m.apply(&ones);
        for (r, a) in rows.iter().zip(mesh.node_areas()) {
            assert!((r - 2.5 * a).abs() < 1e-15);
        }
        let mv = assemble_mass(&mesh, &dofs, 1.0).restrict(dofs.free());
        assert!(mv.check_symmetry());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..mv.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(mv.quadratic_form(&x) > 0.0);
        }
    }

    #[test]
    fn elastic_profile_scaling_and_rigid_modes() {
        let mesh = generate_unit_square(4, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let mat = MaterialLaws::default();
        let n = mesh.n_nodes();
        let k1 = assemble_elastic(&mesh, &dofs, &vec![1.0; n], &mat).unwrap();
        let k0 = assemble_elastic(&mesh, &dofs, &vec![0.0; n], &mat).unwrap();
        assert!(k1.check_symmetry());
        for (i, j, v) in k1.matrix.triplet_iter() {
            assert!((k0.get(i, j) - 0.1 / 1.1 * v).abs() <= 1e-14 * v.abs().max(1.0));
        }
        let mut u = vec![0.0; 2 * n];
        for i in 0..n {
            u[2 * i] = 0.3;
            u[2 * i + 1] = -1.2;
        }
        assert!(k1.apply(&u).iter().all(|r| r.abs() < 1e-13));
        // infinitesimal rotation
        for (i, p) in mesh.nodes().iter().enumerate() {
            u[2 * i] = -p[1];
            u[2 * i + 1] = p[0];
        }
        assert!(k1.apply(&u).iter().all(|r| r.abs() < 1e-13));
        assert!(assemble_elastic(&mesh, &dofs, &vec![1.1; n], &mat).is_err());
    }

    #[test]
    fn patch_test_constant_stress() {
        // Linear displacement u = (0.01 x + 0.02 y, -0.005 x + 0.03 y) on the
        // two-triangle square: every element carries the same strain, and the
        // nodal reactions equal the boundary tractions σν integrated exactly.
        let mesh = generate_unit_square(1, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let mat = MaterialLaws::default();
        let (a, b, c, d) = (0.01, 0.02, -0.005, 0.03);
        let mut u = vec![0.0; 8];
        for (i, p) in mesh.nodes().iter().enumerate() {
            u[2 * i] = a * p[0] + b * p[1];
            u[2 * i + 1] = c * p[0] + d * p[1];
        }
        let e = Sym2::new(a, d, 0.5 * (b + c));
        let z = vec![1.0; 4];
        let sigma = mat.elastic.apply(&e).scale(mat.stiffness_factor(1.0));
        for s in strains(&mesh, &u) {
            assert!((s.xx - e.xx).abs() < 1e-16 && (s.yy - e.yy).abs() < 1e-16 && (s.xy - e.xy).abs() < 1e-16);
        }
        let k = assemble_elastic(&mesh, &dofs, &z, &mat).unwrap();
        let f = k.apply(&u);
        let mut expect = vec![0.0; 8];
        for edge in mesh.boundary_edges() {
            let nu = edge.normal;
            let t = [sigma.xx * nu[0] + sigma.xy * nu[1], sigma.xy * nu[0] + sigma.yy * nu[1]];
            for &n in &edge.nodes {
                expect[2 * n] += 0.5 * edge.length * t[0];
                expect[2 * n + 1] += 0.5 * edge.length * t[1];
            }
        }
        for i in 0..8 {
            assert!((f[i] - expect[i]).abs() < 1e-15, "{i}: {} vs {}", f[i], expect[i]);
        }
    }

    #[test]
    fn gamma_term_properties() {
        let mesh = generate_unit_square(3, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let n = dofs.n_vector();
        let (r, j) = assemble_gamma_term(&mesh, &dofs, &vec![0.0; n], 0.1, 5.0).unwrap();
        assert!(r.iter().all(|v| *v == 0.0) && j.max_abs() == 0.0);
        assert!(assemble_gamma_term(&mesh, &dofs, &vec![0.0; n], 0.1, 4.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        let gamma = 5.5;
        let (r1, _) = assemble_gamma_term(&mesh, &dofs, &u, 0.1, gamma).unwrap();
        let (r2, jac) = assemble_gamma_term(&mesh, &dofs, &u2, 0.1, gamma).unwrap();
        let f = 2f64.powf(gamma - 1.0);
        let scale = r2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            assert!((r2[i] - f * r1[i]).abs() <= 1e-12 * scale);
        }
        assert!(jac.check_symmetry());
    }

    #[test]
    fn gamma_jacobian_matches_differences() {
        let mesh = generate_unit_square(3, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let n = dofs.n_vector();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let (_, jac) = assemble_gamma_term(&mesh, &dofs, &u, 0.2, 5.0).unwrap();
            let h = 1e-6;
            let scale = jac.max_abs();
            for j in 0..n {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let rp = assemble_gamma_term(&mesh, &dofs, &up, 0.2, 5.0).unwrap().0;
                let rm = assemble_gamma_term(&mesh, &dofs, &um, 0.2, 5.0).unwrap().0;
                for i in 0..n {
                    let fd = (rp[i] - rm[i]) / (2.0 * h);
                    assert!(rel(jac.get(i, j), fd, scale) <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn heat_stiffness_truncation_and_kernel() {
        let mesh = generate_unit_square(4, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let n = mesh.n_nodes();
        let z = vec![1.0; n];
        let k0 = assemble_heat_stiffness(&mesh, &z, &vec![0.0; n], Truncation::None, &mat);
        let lap = assemble_scalar_laplacian(&mesh, &vec![1.0; mesh.n_triangles()]);
        assert!(SparseOperator::combine(&[(1.0, &k0), (-mat.k0, &lap)]).max_abs() < 1e-15);

        let a = assemble_heat_stiffness(&mesh, &z, &vec![10.0; n], Truncation::Level(1.0), &mat);
        let b = assemble_heat_stiffness(&mesh, &z, &vec![1.0; n], Truncation::Level(1.0), &mat);
        assert_eq!(a.to_dense(), b.to_dense());

        // positive semidefinite with constants in the kernel
        assert!(k0.apply(&vec![1.0; n]).iter().all(|v| v.abs() < 1e-13));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(k0.quadratic_form(&x) >= -1e-13);
        }
        let src = HeatSources::assemble(&mesh, &mat, &z, &z, &vec![1.0; n], &vec![0.0; 2 * n], 0.1);
        assert!(src.viscous.iter().all(|v| *v == 0.0));
        assert!(src.coupling.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heat_jacobian_matches_differences() {
        let mesh = generate_unit_square(3, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let n = mesh.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        for _ in 0..5 {
            let th: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
            let jac = assemble_heat_jacobian(&mesh, &z, &th, Truncation::None, &mat);
            let res = |t: &[f64]| assemble_heat_stiffness(&mesh, &z, t, Truncation::None, &mat).apply(t);
            let h = 1e-6;
            let scale = jac.max_abs();
            for j in 0..n {
                let mut p = th.clone();
                let mut m = th.clone();
                p[j] += h;
                m[j] -= h;
                let (rp, rm) = (res(&p), res(&m));
                for i in 0..n {
                    assert!(rel(jac.get(i, j), (rp[i] - rm[i]) / (2.0 * h), scale) <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn traction_distribution() {
        let mesh = generate_unit_square(4, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let f = assemble_traction(&mesh, &dofs, [2.0, -1.0], &[Side::Right]);
        let fx: f64 = f.iter().step_by(2).sum();
        let fy: f64 = f.iter().skip(1).step_by(2).sum();
        assert!((fx - 2.0).abs() < 1e-14 && (fy + 1.0).abs() < 1e-14);
        // one edge of length ¼ gets ½/½
        let e = mesh.boundary_edges().iter().find(|e| e.side == Some(Side::Right)).unwrap();
        let single = {
            let mut v = vec![0.0; dofs.n_vector()];
            for &n in &e.nodes {
                v[2 * n] += 0.5 * 2.0 * e.length;
            }
            v
        };
        assert!((single[2 * e.nodes[0]] - 0.25).abs() < 1e-15);
        let body = assemble_body_force(&mesh, &dofs, [0.0, 3.0]);
        assert!((body.iter().skip(1).step_by(2).sum::<f64>() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn heat_load_vectors() {
        let mesh = generate_unit_square(5, &[Side::Left]).unwrap();
        let h = assemble_source(&mesh, |_| 1.0);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let x2 = assemble_source(&mesh, |x| x[0] * x[0]);
        assert!((x2.iter().sum::<f64>() - 1.0 / 3.0).abs() < 1e-14);
        let b = assemble_boundary_flux(&mesh, |_, _| 2.0);
        assert!((b.iter().sum::<f64>() - 8.0).abs() < 1e-13);
    }

    #[test]
    fn assembly_is_thread_independent() {
        let mesh = generate_unit_square(12, &[Side::Left]).unwrap();
        let dofs = DofMap::new(&mesh);
        let mat = MaterialLaws::default();
        let n = mesh.n_nodes();
        let z: Vec<f64> = (0..n).map(|i| 0.5 + 0.5 * ((i as f64) * 0.37).sin().abs()).collect();
        let u: Vec<f64> = (0..2 * n).map(|i| 0.01 * ((i as f64) * 0.11).cos()).collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let k = assemble_elastic(&mesh, &dofs, &z, &mat).unwrap();
                let (r, j) = assemble_gamma_term(&mesh, &dofs, &u, 0.1, 5.0).unwrap();
                (k.matrix.values().to_vec(), r, j.matrix.values().to_vec())
            })
        };
        assert_eq!(run(1), run(4));
    }
}
