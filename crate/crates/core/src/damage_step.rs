//! Unidirectional incremental minimization of the damage variable and the
//! a-posteriori semistability sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{centroid_value, element_gradient, strains};
use crate::error::{Error, Result};
use crate::material::{MaterialLaws, Potential};
use crate::mesh::Mesh2D;
use crate::optimize::{minimize_box, BoxOptions};

/// The `z`-dependent part of the stored energy at frozen displacement.
pub trait DamageEnergy: Sync {
    fn n_dofs(&self) -> usize;

    /// Lumped weights `mᵢ = ∫ φᵢ`; the dissipation on the admissible box is
    /// `Σ mᵢ (z_prevᵢ − zᵢ)`.
    fn weights(&self) -> &[f64];

    /// Energy value; `+∞` when some `zᵢ ∉ [0, 1]`.
    fn energy(&self, z: &[f64]) -> f64;

    /// Energy value and gradient.
    fn energy_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

/// The finite-element damage energy at a frozen strain field: centroid
/// stiffness `c(z̄ₑ) · ½ℂ₀e:e`, gradient term `g₁|∇z|^q` and the potential `W`
/// integrated at edge midpoints.
pub struct FeDamageEnergy<'a> {
    mesh: &'a Mesh2D,
    mat: &'a MaterialLaws,
    /// `½ ℂ₀ e(u) : e(u)` per element.
    driving: Vec<f64>,
}

impl<'a> FeDamageEnergy<'a> {
    pub fn new(mesh: &'a Mesh2D, mat: &'a MaterialLaws, u: &[f64]) -> Self {
        let driving = strains(mesh, u)
            .iter()
            .map(|e| 0.5 * mat.elastic.contract(e, e))
            .collect();
        Self { mesh, mat, driving }
    }

    pub fn driving_density(&self) -> &[f64] {
        &self.driving
    }

    /// Stored elastic energy `Σₑ |T| c(z̄ₑ) ½ℂ₀e:e`.
    pub fn elastic(&self, z: &[f64]) -> f64 {
        self.mesh
            .triangles()
            .iter()
            .zip(self.mesh.geometry())
            .zip(&self.driving)
            .map(|((t, g), a)| g.area * self.mat.stiffness_factor(centroid_value(t, z)) * a)
            .sum()
    }

    /// Gradient energy `𝒢(z)` alone.
    pub fn gradient_energy(&self, z: &[f64]) -> f64 {
        gradient_energy(self.mesh, self.mat, z)
    }
}

/// `Σₑ |T| (g₁|∇z|^q + ⅓ Σ_mid W(z_mid))`; `+∞` outside `[0, 1]`.
pub fn gradient_energy(mesh: &Mesh2D, mat: &MaterialLaws, z: &[f64]) -> f64 {
    if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return f64::INFINITY;
    }
    mesh.triangles()
        .iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let (gv, _) = mat.gradient_term(element_gradient(g, t, z));
            let w: f64 = (0..3)
                .map(|m| mat.potential.value(0.5 * (z[t[m]] + z[t[(m + 1) % 3]])))
                .sum();
            g.area * (gv + w / 3.0)
        })
        .sum()
}

impl DamageEnergy for FeDamageEnergy<'_> {
    fn n_dofs(&self) -> usize {
        self.mesh.n_nodes()
    }

    fn weights(&self) -> &[f64] {
        self.mesh.node_areas()
    }

    fn energy(&self, z: &[f64]) -> f64 {
        let g = gradient_energy(self.mesh, self.mat, z);
        if g.is_infinite() {
            return g;
        }
        self.elastic(z) + g
    }

    fn energy_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            grad.iter_mut().for_each(|v| *v = f64::NAN);
            return f64::INFINITY;
        }
        let mat = self.mat;
        let locals: Vec<(f64, [f64; 3])> = self
            .mesh
            .triangles()
            .par_iter()
            .zip(self.mesh.geometry())
            .zip(&self.driving)
            .map(|((t, g), a)| {
                let zc = centroid_value(t, z);
                let (gv, gd) = mat.gradient_term(element_gradient(g, t, z));
                let mut value = g.area * (mat.stiffness_factor(zc) * a + gv);
                let de = g.area * mat.stiffness_factor_derivative(zc) * a / 3.0;
                let mut d = [0.0; 3];
                for i in 0..3 {
                    d[i] = de + g.area * (gd[0] * g.grads[i][0] + gd[1] * g.grads[i][1]);
                }
                for m in 0..3 {
                    let zm = 0.5 * (z[t[m]] + z[t[(m + 1) % 3]]);
                    value += g.area / 3.0 * mat.potential.value(zm);
                    let dw = g.area / 3.0 * 0.5 * mat.potential.derivative(zm);
                    d[m] += dw;
                    d[(m + 1) % 3] += dw;
                }
                (value, d)
            })
            .collect();
        let mut value = 0.0;
        for ((v, d), t) in locals.into_iter().zip(self.mesh.triangles()) {
            value += v;
            for i in 0..3 {
                grad[t[i]] += d[i];
            }
        }
        value
    }
}

/// A lumped chain of damage dofs: dof `i` carries weight `wᵢ`, driving
/// density `aᵢ` (stiffness `c(z) = z² + δ`) and potential `W`; neighbours
/// interact through `g (z_{i+1} − zᵢ)²`.
#[derive(Clone, Debug)]
pub struct ChainDamageEnergy {
    pub weights: Vec<f64>,
    pub driving: Vec<f64>,
    pub coupling: f64,
    pub delta: f64,
    pub potential: Potential,
}

impl DamageEnergy for ChainDamageEnergy {
    fn n_dofs(&self) -> usize {
        self.weights.len()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn energy(&self, z: &[f64]) -> f64 {
        let mut g = vec![0.0; z.len()];
        self.energy_gradient(z, &mut g)
    }

    fn energy_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        if z.iter().any(|v| !(0.0..=1.0).contains(v)) {
            grad.iter_mut().for_each(|v| *v = f64::NAN);
            return f64::INFINITY;
        }
        let mut value = 0.0;
        for i in 0..z.len() {
            let w = self.weights[i];
            value += w * (self.driving[i] * (z[i] * z[i] + self.delta) + self.potential.value(z[i]));
            grad[i] = w * (2.0 * self.driving[i] * z[i] + self.potential.derivative(z[i]));
        }
        for i in 1..z.len() {
            let d = z[i] - z[i - 1];
            value += self.coupling * d * d;
            grad[i] += 2.0 * self.coupling * d;
            grad[i - 1] -= 2.0 * self.coupling * d;
        }
        value
    }
}

/// One damage increment: minimize `E(z) + Σ mᵢ (z_prevᵢ − zᵢ)` over
/// `0 ≤ z ≤ z_prev`.
pub struct DamageProblem<'a, E: DamageEnergy> {
    pub energy: &'a E,
    pub z_prev: &'a [f64],
    pub time: f64,
}

impl<E: DamageEnergy> DamageProblem<'_, E> {
    pub fn objective(&self, z: &[f64]) -> f64 {
        self.energy.energy(z) + dissipation(self.energy.weights(), self.z_prev, z)
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.z_prev.len()], self.z_prev.to_vec())
    }
}

/// `Σ mᵢ (fromᵢ − toᵢ)`.
pub fn dissipation(weights: &[f64], from: &[f64], to: &[f64]) -> f64 {
    weights.iter().zip(from.iter().zip(to)).map(|(m, (a, b))| m * (a - b)).sum()
}

#[derive(Clone, Debug)]
pub struct DamageSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    /// The absolute tolerance that was enforced.
    pub tol: f64,
}

/// Default relative tolerance and iteration cap.
pub const DAMAGE_TOL: f64 = 1e-9;
pub const DAMAGE_MAX_ITER: usize = 10_000;

/// Projected Barzilai–Borwein minimization. `rel_tol` is scaled by the
/// objective density `|F(z_prev)| / Σmᵢ` (at least 1).
pub fn minimize_damage<E: DamageEnergy>(problem: &DamageProblem<'_, E>, rel_tol: f64) -> Result<DamageSolution> {
    minimize_damage_with(problem, rel_tol, DAMAGE_MAX_ITER)
}

pub fn minimize_damage_with<E: DamageEnergy>(
    problem: &DamageProblem<'_, E>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<DamageSolution> {
    let e = problem.energy;
    let n = e.n_dofs();
    if problem.z_prev.len() != n {
        return Err(Error::Input(format!(
            "previous damage has {} entries, expected {n}",
            problem.z_prev.len()
        )));
    }
    if let Some(i) = problem.z_prev.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input(format!(
            "previous damage {} at dof {i} outside [0, 1]",
            problem.z_prev[i]
        )));
    }
    let f0 = problem.objective(problem.z_prev);
    if !f0.is_finite() {
        return Err(Error::Input(format!("damage objective is not finite at the previous state ({f0})")));
    }
    let total: f64 = e.weights().iter().sum();
    let tol = rel_tol * (f0.abs() / total).max(1.0);
    let (lo, hi) = problem.bounds();
    if hi.iter().all(|v| *v == 0.0) {
        return Ok(DamageSolution {
            z: hi,
            objective: f0,
            iterations: 0,
            residual: 0.0,
            tol,
        });
    }
    let weights = e.weights();
    let eval = |z: &[f64], g: &mut [f64]| -> Result<f64> {
        let v = e.energy_gradient(z, g);
        for i in 0..n {
            g[i] -= weights[i];
        }
        Ok(v + dissipation(weights, problem.z_prev, z))
    };
    let r = minimize_box(eval, problem.z_prev, &lo, &hi, weights, &BoxOptions { tol, max_iter })?;
    // exact unidirectionality: the projection already clamps to z_prev
    let z: Vec<f64> = r.x.iter().zip(problem.z_prev).map(|(a, b)| a.min(*b).max(0.0)).collect();
    Ok(DamageSolution {
        z,
        objective: r.value,
        iterations: r.iterations,
        residual: r.residual,
        tol,
    })
}

/// The semistability residual `E(z̃) + Σ mᵢ (zᵢ − z̃ᵢ) − E(z)`.
pub fn semistability_residual<E: DamageEnergy>(energy: &E, z: &[f64], competitor: &[f64]) -> f64 {
    energy.energy(competitor) + dissipation(energy.weights(), z, competitor) - energy.energy(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitorKind {
    /// Independent random relative drops at every node.
    Random,
    /// One node lowered.
    SingleNode,
    /// `z − d` clamped at zero, uniform `d`.
    Uniform,
}

#[derive(Clone, Debug, Serialize)]
pub struct SemistabilityReport {
    pub min_residual: f64,
    pub worst: Option<CompetitorKind>,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Samples `n_samples` competitors `z̃ ≤ z` (cycling through random nodal
/// perturbations, single-node drops and uniform drops) and reports the
/// smallest semistability residual. PASS iff it is `≥ −tol`.
pub fn check_semistability<E: DamageEnergy>(
    energy: &E,
    z: &[f64],
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> SemistabilityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = z.len();
    let competitors: Vec<(CompetitorKind, Vec<f64>)> = (0..n_samples)
        .map(|s| match s % 3 {
            0 => {
                let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
                let zt = z.iter().map(|v| v * (1.0 - scale * rng.gen::<f64>())).collect();
                (CompetitorKind::Random, zt)
            }
            1 => {
                let mut zt = z.to_vec();
                let i = rng.gen_range(0..n);
                zt[i] *= rng.gen::<f64>();
                (CompetitorKind::SingleNode, zt)
            }
            _ => {
                let d = 10f64.powf(rng.gen_range(-4.0..-0.5));
                (CompetitorKind::Uniform, z.iter().map(|v| (v - d).max(0.0)).collect())
            }
        })
        .collect();
    let base = energy.energy(z);
    let residuals: Vec<f64> = competitors
        .par_iter()
        .map(|(_, zt)| energy.energy(zt) + dissipation(energy.weights(), z, zt) - base)
        .collect();
    let mut min_residual = f64::INFINITY;
    let mut worst = None;
    for ((kind, _), r) in competitors.iter().zip(residuals) {
        if r < min_residual {
            min_residual = r;
            worst = Some(*kind);
        }
    }
    if n_samples == 0 {
        min_residual = 0.0;
    }
    SemistabilityReport {
        min_residual,
        worst,
        samples: n_samples,
        tol,
        pass: min_residual >= -tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_unit_square, Side};

    fn chain(w: Vec<f64>, a: Vec<f64>, g: f64) -> ChainDamageEnergy {
        ChainDamageEnergy {
            weights: w,
            driving: a,
            coupling: g,
            delta: 0.1,
            potential: Potential::default(),
        }
    }

    #[test]
    fn single_dof_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let w = rng.gen_range(0.1..2.0);
            let a = rng.gen_range(0.0..3.0);
            let zp = rng.gen_range(0.05..1.0);
            let e = chain(vec![w], vec![a], 0.0);
            let p = DamageProblem { energy: &e, z_prev: &[zp], time: 0.0 };
            let z = minimize_damage(&p, 1e-12).unwrap().z[0];
            // w[(2a + 1) z − 1] = 0
            let expect = (1.0 / (2.0 * a + 1.0)).clamp(0.0, zp);
            assert!((z - expect).abs() < 1e-9, "{z} vs {expect}");
        }
    }

    #[test]
    fn collapsed_bounds_stay_at_zero() {
        let mesh = generate_unit_square(4, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let u: Vec<f64> = (0..2 * mesh.n_nodes()).map(|i| i as f64 * 0.01).collect();
        let e = FeDamageEnergy::new(&mesh, &mat, &u);
        let zp = vec![0.0; mesh.n_nodes()];
        let s = minimize_damage(&DamageProblem { energy: &e, z_prev: &zp, time: 0.0 }, DAMAGE_TOL).unwrap();
        assert!(s.z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unloaded_undamaged_state_stays_put() {
        let mesh = generate_unit_square(4, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let e = FeDamageEnergy::new(&mesh, &mat, &vec![0.0; 2 * mesh.n_nodes()]);
        let zp = vec![1.0; mesh.n_nodes()];
        let s = minimize_damage(&DamageProblem { energy: &e, z_prev: &zp, time: 0.0 }, DAMAGE_TOL).unwrap();
        assert!(s.z.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn uniform_drop_closed_form() {
        let mesh = generate_unit_square(3, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let e = FeDamageEnergy::new(&mesh, &mat, &vec![0.0; 2 * mesh.n_nodes()]);
        let z = vec![1.0; mesh.n_nodes()];
        let zt = vec![0.9; mesh.n_nodes()];
        // ∫ (0.1 − [W(1) − W(0.9)]) with W = ½(1 + z²)
        assert!((semistability_residual(&e, &z, &zt) - 0.005).abs() < 1e-14);
        assert_eq!(semistability_residual(&e, &z, &z), 0.0);
    }

    #[test]
    fn fe_gradient_matches_differences() {
        let mesh = generate_unit_square(3, &[Side::Left]).unwrap();
        let mut mat = MaterialLaws::default();
        mat.q = 2.5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..2 * mesh.n_nodes()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let e = FeDamageEnergy::new(&mesh, &mat, &u);
        for _ in 0..5 {
            let z: Vec<f64> = (0..mesh.n_nodes()).map(|_| rng.gen_range(0.1..0.9)).collect();
            let mut g = vec![0.0; z.len()];
            e.energy_gradient(&z, &mut g);
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..z.len() {
                let h = 1e-6;
                let mut p = z.clone();
                let mut m = z.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (e.energy(&p) - e.energy(&m)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * scale, "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn minimized_state_is_semistable_and_unidirectional() {
        let mesh = generate_unit_square(6, &[Side::Left]).unwrap();
        let mat = MaterialLaws::default();
        let u: Vec<f64> = mesh.nodes().iter().flat_map(|p| [0.8 * p[0], 0.0]).collect();
        let e = FeDamageEnergy::new(&mesh, &mat, &u);
        let zp = vec![1.0; mesh.n_nodes()];
        let p = DamageProblem { energy: &e, z_prev: &zp, time: 0.0 };
        let s = minimize_damage(&p, DAMAGE_TOL).unwrap();
        assert!(s.z.iter().zip(&zp).all(|(a, b)| a <= b));
        assert!(s.z.iter().any(|v| *v < 0.99));
        assert!(p.objective(&s.z) <= p.objective(&zp));
        let r = check_semistability(&e, &s.z, 100, 1e-8, 3);
        assert!(r.pass, "{r:?}");
        let again = check_semistability(&e, &s.z, 100, 1e-8, 3);
        assert_eq!(r.min_residual, again.min_residual);
    }

    #[test]
    fn objective_scaling_keeps_argmin() {
        let base = chain(vec![0.5, 0.5], vec![0.7, 1.9], 0.3);
        let mut scaled = base.clone();
        let c = 7.0;
        scaled.weights.iter_mut().for_each(|w| *w *= c);
        scaled.coupling *= c;
        // scaling both the energy and the dissipation weights scales the whole objective
        let zp = [0.9, 0.95];
        let a = minimize_damage(&DamageProblem { energy: &base, z_prev: &zp, time: 0.0 }, 1e-12).unwrap();
        let b = minimize_damage(&DamageProblem { energy: &scaled, z_prev: &zp, time: 0.0 }, 1e-12).unwrap();
        for i in 0..2 {
            assert!((a.z[i] - b.z[i]).abs() < 1e-10, "{a:?} {b:?}");
        }
    }

    #[test]
    fn invalid_previous_damage_is_input_error() {
        let e = chain(vec![1.0], vec![1.0], 0.0);
        let r = minimize_damage(&DamageProblem { energy: &e, z_prev: &[1.2], time: 0.0 }, 1e-9);
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
