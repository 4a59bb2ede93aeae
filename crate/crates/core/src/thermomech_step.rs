//! The coupled momentum/heat solve of one time step, and the temperature
//! comparison floor.
//!
//! The heat equation is discretized with a lumped (vertex-quadrature) mass
//! and lumped coupling terms. On meshes whose conductivity matrix has
//! nonpositive off-diagonals this gives a discrete comparison principle, so
//! the nodal minimum of the temperature obeys the scalar floor recursion.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_gamma_term, assemble_heat_jacobian, assemble_heat_stiffness, assemble_thermal_stress,
    assemble_viscous, HeatSources, Truncation,
};
use crate::error::{Error, Result};
use crate::material::{truncate_unchecked, MaterialLaws};
use crate::mesh::{DofMap, Mesh2D};
use crate::sparse::{solve_general, solve_spd, LinearSolver, SparseOperator};

/// Coefficients of the rescaled system; `eps = 1, beta = 0` is the base
/// system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub eps: f64,
    pub beta: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { eps: 1.0, beta: 0.0 };

    pub fn inertia(&self) -> f64 {
        self.eps * self.eps
    }

    pub fn viscosity(&self) -> f64 {
        self.eps
    }

    pub fn conductivity(&self) -> f64 {
        self.eps.powf(-self.beta)
    }

    /// Factor of `θ̇` in the heat equation.
    pub fn heat_rate(&self) -> f64 {
        self.eps
    }

    /// Factor of the dissipation rate and of the thermal coupling sink.
    pub fn dissipation(&self) -> f64 {
        self.eps
    }

    /// Factor of the viscous heating `𝔻e(u̇):e(u̇)`.
    pub fn heating(&self) -> f64 {
        self.eps * self.eps
    }

    /// Effective rate of the temperature floor for this scaling:
    /// `c̄ · dissipation² / (heating · heat_rate)`.
    pub fn floor_rate(&self, cbar: f64) -> f64 {
        cbar * self.dissipation() * self.dissipation() / (self.heating() * self.heat_rate())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeatSolver {
    /// Conductivity lagged at the previous iterate.
    #[default]
    Picard,
    /// Newton on the full heat residual (dense LU).
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupledOptions {
    /// Residual tolerances relative to the first-iterate residual.
    pub momentum_tol: f64,
    pub heat_tol: f64,
    /// Max-norm change of `(u, θ)` between alternations.
    pub alternation_tol: f64,
    pub max_alternations: usize,
    pub max_newton: usize,
    /// Truncation levels; doubled further if the last one is still active.
    pub truncation_levels: Vec<f64>,
    pub heat_solver: HeatSolver,
    pub linear_solver: LinearSolver,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self {
            momentum_tol: 1e-10,
            heat_tol: 1e-10,
            alternation_tol: 1e-11,
            max_alternations: 200,
            max_newton: 50,
            truncation_levels: (4..=14).map(|p| 2f64.powi(p)).collect(),
            heat_solver: HeatSolver::Picard,
            linear_solver: LinearSolver::Direct,
        }
    }
}

/// Data of one coupled step.
pub struct CoupledProblem<'a> {
    pub mesh: &'a Mesh2D,
    pub dofs: &'a DofMap,
    pub mat: &'a MaterialLaws,
    /// Vector mass matrix including the density.
    pub mass: &'a SparseOperator,
    pub scaling: Scaling,
    pub step: usize,
    pub tau: f64,
    pub gamma: f64,
    pub u_prev: &'a [f64],
    pub u_prev2: &'a [f64],
    pub theta_prev: &'a [f64],
    pub z_prev: &'a [f64],
    pub z_new: &'a [f64],
    /// Mechanical load functional on all displacement dofs.
    pub force: &'a [f64],
    /// `∫ H φᵢ + ∫_∂Ω h φᵢ`.
    pub heat_load: &'a [f64],
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InnerStats {
    pub truncation_level: f64,
    pub levels_tried: usize,
    pub alternations: usize,
    pub newton_iterations: usize,
    pub heat_iterations: usize,
    pub momentum_residual: f64,
    pub heat_residual: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledSolution {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub stats: InnerStats,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The linear part of the momentum balance:
/// `A u − r` with `A = (ρ·inertia/τ²) M + (visc/τ) D + K(z_k)`.
pub struct MomentumSystem<'a> {
    pub problem: &'a CoupledProblem<'a>,
    pub linear: SparseOperator,
    pub linear_free: SparseOperator,
    pub rhs: Vec<f64>,
}

impl<'a> MomentumSystem<'a> {
    pub fn new(p: &'a CoupledProblem<'a>) -> Result<Self> {
        let tau = p.tau;
        let am = p.scaling.inertia() / (tau * tau);
        let ad = p.scaling.viscosity() / tau;
        let visc = assemble_viscous(p.mesh, p.dofs, p.z_prev, p.theta_prev, p.mat);
        let stiff = crate::assembly::assemble_elastic(p.mesh, p.dofs, p.z_new, p.mat)?;
        let linear = SparseOperator::combine(&[(am, p.mass), (ad, &visc), (1.0, &stiff)]);
        let hist: Vec<f64> = p.u_prev.iter().zip(p.u_prev2).map(|(a, b)| 2.0 * a - b).collect();
        let mh = p.mass.apply(&hist);
        let du = visc.apply(p.u_prev);
        let rhs = (0..hist.len()).map(|i| am * mh[i] + ad * du[i] + p.force[i]).collect();
        let linear_free = linear.restrict(p.dofs.free());
        Ok(Self {
            problem: p,
            linear,
            linear_free,
            rhs,
        })
    }

    /// Full residual on free dofs at displacement `u` and (possibly
    /// truncated) temperature `theta`.
    pub fn residual(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let (g, _) = assemble_gamma_term(p.mesh, p.dofs, u, p.tau, p.gamma)?;
        let b = assemble_thermal_stress(p.mesh, p.dofs, theta, p.mat.expansion);
        let au = self.linear.apply(u);
        let full: Vec<f64> = (0..u.len()).map(|i| au[i] + g[i] - b[i] - self.rhs[i]).collect();
        Ok(p.dofs.restrict(&full))
    }

    /// Magnitude of the individual terms, used to floor relative tolerances.
    pub fn scale(&self, u: &[f64], theta: &[f64]) -> f64 {
        let p = self.problem;
        let b = assemble_thermal_stress(p.mesh, p.dofs, theta, p.mat.expansion);
        norm2(&p.dofs.restrict(&self.rhs)) + norm2(&p.dofs.restrict(&b)) + norm2(&p.dofs.restrict(&self.linear.apply(u)))
    }

    /// Newton with backtracking on the residual norm.
    pub fn solve(&self, u0: &[f64], theta: &[f64], tol: f64, max_iter: usize, solver: LinearSolver) -> Result<(Vec<f64>, usize, f64)> {
        let p = self.problem;
        let mut u = u0.to_vec();
        let mut r = self.residual(&u, theta)?;
        let mut rn = norm2(&r);
        let mut it = 0;
        while rn > tol.max(1e-13 * self.scale(&u, theta)) {
            if it >= max_iter {
                return Err(Error::StepFailure {
                    step: p.step,
                    reason: format!("momentum Newton did not converge in {max_iter} iterations (residual {rn:e})"),
                });
            }
            it += 1;
            let (_, jg) = assemble_gamma_term(p.mesh, p.dofs, &u, p.tau, p.gamma)?;
            let jac = SparseOperator::combine(&[(1.0, &self.linear_free), (1.0, &jg.restrict(p.dofs.free()))]);
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = solve_spd(&jac, &neg, solver)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = u.clone();
                for (k, &d) in p.dofs.free().iter().enumerate() {
                    trial[d] += t * delta[k];
                }
                let rt = self.residual(&trial, theta)?;
                let rtn = norm2(&rt);
                if rtn <= (1.0 - 1e-4 * t) * rn {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no further decrease at rounding level: accept when the
                // Newton correction itself is negligible
                let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let size = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if step <= 1e-14 * size.max(1e-300) {
                    break;
                }
                return Err(Error::StepFailure {
                    step: p.step,
                    reason: format!("momentum line search failed (residual {rn:e})"),
                });
            }
        }
        Ok((u, it, rn))
    }
}

/// The lumped heat equation of one step at a given displacement:
/// `(ϱ/τ) m∘(θ − θ_old) + κ K(θ) θ + c_z s∘θ = c_z ż⁻ + c_v 𝔻ė:ė + H + h`.
pub struct HeatSystem<'a> {
    pub mesh: &'a Mesh2D,
    pub mat: &'a MaterialLaws,
    pub scaling: Scaling,
    pub tau: f64,
    pub z: &'a [f64],
    pub theta_old: &'a [f64],
    pub sources: HeatSources,
    pub heat_load: &'a [f64],
}

impl HeatSystem<'_> {
    fn diagonal(&self) -> Vec<f64> {
        let rate = self.scaling.heat_rate() / self.tau;
        let cz = self.scaling.dissipation();
        self.mesh
            .node_areas()
            .iter()
            .zip(&self.sources.coupling)
            .map(|(m, s)| rate * m + cz * s)
            .collect()
    }

    pub fn rhs(&self) -> Vec<f64> {
        let rate = self.scaling.heat_rate() / self.tau;
        let (cz, cv) = (self.scaling.dissipation(), self.scaling.heating());
        let m = self.mesh.node_areas();
        (0..m.len())
            .map(|i| {
                rate * m[i] * self.theta_old[i]
                    + cz * self.sources.damage_rate[i]
                    + cv * self.sources.viscous[i]
                    + self.heat_load[i]
            })
            .collect()
    }

    /// System matrix with conductivity evaluated at `lag`.
    pub fn matrix(&self, lag: &[f64], level: Truncation) -> SparseOperator {
        let k = assemble_heat_stiffness(self.mesh, self.z, lag, level, self.mat);
        SparseOperator::combine(&[(self.scaling.conductivity(), &k)]).add_diagonal(&self.diagonal())
    }

    pub fn residual(&self, theta: &[f64], level: Truncation) -> Vec<f64> {
        let a = self.matrix(theta, level).apply(theta);
        a.iter().zip(self.rhs()).map(|(x, y)| x - y).collect()
    }

    pub fn jacobian(&self, theta: &[f64], level: Truncation) -> SparseOperator {
        let j = assemble_heat_jacobian(self.mesh, self.z, theta, level, self.mat);
        SparseOperator::combine(&[(self.scaling.conductivity(), &j)]).add_diagonal(&self.diagonal())
    }

    /// Magnitude of the terms at `theta`, used to floor relative tolerances.
    pub fn scale(&self, theta: &[f64]) -> f64 {
        norm2(&self.rhs()) + self.matrix(theta, Truncation::None).max_abs() * norm2(theta)
    }

    /// Solves to `‖R‖ ≤ tol`; returns the temperature and the iteration count.
    pub fn solve(&self, theta0: &[f64], level: Truncation, tol: f64, mode: HeatSolver, solver: LinearSolver) -> Result<(Vec<f64>, usize, f64)> {
        let rhs = self.rhs();
        let mut theta = theta0.to_vec();
        let mut rn = norm2(&self.residual(&theta, level));
        let mut it = 0;
        let mut growth = 0;
        let floor = 1e-13 * self.scale(theta0);
        while rn > tol.max(floor) {
            if it >= 200 || growth >= 5 {
                return Err(Error::LinearSolve(format!(
                    "heat iteration stalled after {it} iterations (residual {rn:e})"
                )));
            }
            it += 1;
            let next = match mode {
                HeatSolver::Picard => solve_spd(&self.matrix(&theta, level), &rhs, solver)?,
                HeatSolver::Newton => {
                    let r = self.residual(&theta, level);
                    let d = solve_general(&self.jacobian(&theta, level), &r)?;
                    theta.iter().zip(d).map(|(t, d)| t - d).collect()
                }
            };
            let change = max_diff(&next, &theta);
            theta = next;
            let new_rn = norm2(&self.residual(&theta, level));
            growth = if new_rn > rn { growth + 1 } else { 0 };
            rn = new_rn;
            if change <= 1e-15 * theta.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
                break;
            }
        }
        Ok((theta, it, rn))
    }
}

/// Solves the coupled step by truncation continuation and alternating
/// momentum (Newton) and heat (Picard or Newton) solves.
pub fn solve_coupled(p: &CoupledProblem<'_>, opts: &CoupledOptions) -> Result<CoupledSolution> {
    if !(p.tau > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {}", p.tau)));
    }
    if let Some(i) = p.theta_prev.iter().position(|t| !(*t >= 0.0)) {
        return Err(Error::NegativeTemperature {
            node: i,
            value: p.theta_prev[i],
        });
    }
    let fail = |reason: String| Error::StepFailure { step: p.step, reason };
    let mom = MomentumSystem::new(p)?;
    let heat_at = |u: &[f64]| {
        let vel: Vec<f64> = u.iter().zip(p.u_prev).map(|(a, b)| (a - b) / p.tau).collect();
        HeatSystem {
            mesh: p.mesh,
            mat: p.mat,
            scaling: p.scaling,
            tau: p.tau,
            z: p.z_new,
            theta_old: p.theta_prev,
            sources: HeatSources::assemble(p.mesh, p.mat, p.z_prev, p.z_new, p.theta_prev, &vel, p.tau),
            heat_load: p.heat_load,
        }
    };

    let mut u = p.u_prev.to_vec();
    let mut theta = p.theta_prev.to_vec();
    let m_tol = {
        let r0 = norm2(&mom.residual(&u, &theta)?);
        (opts.momentum_tol * r0).max(1e-13 * mom.scale(&u, &theta)).max(f64::MIN_POSITIVE)
    };
    let h_tol = {
        let h = heat_at(&u);
        let r0 = norm2(&h.residual(&theta, Truncation::None));
        (opts.heat_tol * r0).max(1e-13 * h.scale(&theta)).max(f64::MIN_POSITIVE)
    };

    let mut stats = InnerStats::default();
    let mut levels = opts.truncation_levels.clone();
    let mut li = 0;
    loop {
        if li >= levels.len() {
            let last = levels.last().copied().unwrap_or(16.0);
            if last >= 2f64.powi(40) {
                return Err(fail("temperature exceeds every truncation level".into()));
            }
            levels.push(2.0 * last);
        }
        let level = levels[li];
        li += 1;
        stats.levels_tried += 1;
        let mut last_change = f64::INFINITY;
        let mut growth = 0;
        let mut converged = false;
        for _ in 0..opts.max_alternations {
            stats.alternations += 1;
            let th_trunc: Vec<f64> = theta.iter().map(|t| truncate_unchecked(*t, level)).collect();
            let (u_new, nit, _) = mom.solve(&u, &th_trunc, m_tol, opts.max_newton, opts.linear_solver)?;
            stats.newton_iterations += nit;
            let h = heat_at(&u_new);
            let (th_new, hit, _) = h
                .solve(&theta, Truncation::Level(level), h_tol, opts.heat_solver, opts.linear_solver)
                .map_err(|e| fail(e.to_string()))?;
            stats.heat_iterations += hit;
            let change = max_diff(&u_new, &u).max(max_diff(&th_new, &theta));
            u = u_new;
            theta = th_new;
            if change <= opts.alternation_tol {
                let h = heat_at(&u);
                let mr = norm2(&mom.residual(&u, &theta)?);
                let hr = norm2(&h.residual(&theta, Truncation::None));
                stats.momentum_residual = mr;
                stats.heat_residual = hr;
                if mr <= m_tol.max(1e-13 * mom.scale(&u, &theta)) && hr <= h_tol.max(1e-13 * h.scale(&theta)) {
                    converged = true;
                    break;
                }
            }
            growth = if change > last_change { growth + 1 } else { 0 };
            if growth >= 5 {
                return Err(fail(format!(
                    "momentum/heat alternation diverging at truncation level {level} (change {change:e})"
                )));
            }
            last_change = change;
        }
        if !converged {
            return Err(fail(format!(
                "momentum/heat alternation did not converge in {} iterations at truncation level {level}",
                opts.max_alternations
            )));
        }
        let tmax = theta.iter().fold(f64::NEG_INFINITY, |m, t| m.max(*t));
        if tmax < level {
            stats.truncation_level = level;
            break;
        }
    }
    if let Some(i) = theta.iter().position(|t| *t < 0.0) {
        return Err(Error::NegativeTemperature { node: i, value: theta[i] });
    }
    Ok(CoupledSolution { u, theta, stats })
}

/// Scalar comparison sequences bounding the temperature from below.
#[derive(Clone, Debug, Serialize)]
pub struct PositivityMonitor {
    pub theta_star: f64,
    pub cbar: f64,
    pub h_star: Option<f64>,
    pub horizon: f64,
    pub v: Vec<f64>,
    pub v_tilde: Vec<f64>,
}

fn implicit_root(prev: f64, tau: f64, c: f64) -> f64 {
    // positive root of τ c v² + v − prev = 0
    2.0 * prev / (1.0 + (1.0 + 4.0 * tau * c * prev).sqrt())
}

impl PositivityMonitor {
    pub fn new(theta_star: f64, cbar: f64, h_star: Option<f64>, horizon: f64) -> Result<Self> {
        if !(theta_star > 0.0) {
            return Err(Error::Config(format!(
                "positivity.theta_star must be positive, got {theta_star}"
            )));
        }
        if h_star.is_some_and(|h| !(h >= 0.0)) {
            return Err(Error::Config("positivity.h_star must be nonnegative".into()));
        }
        let vt0 = match h_star {
            Some(h) if cbar > 0.0 => theta_star.max((h / cbar).sqrt()),
            _ => theta_star,
        };
        Ok(Self {
            theta_star,
            cbar,
            h_star,
            horizon,
            v: vec![theta_star],
            v_tilde: vec![vt0],
        })
    }

    /// `θ̃ = (c̄T + 1/θ_*)⁻¹`.
    pub fn theta_tilde(&self) -> f64 {
        1.0 / (self.cbar * self.horizon + 1.0 / self.theta_star)
    }

    /// Extends the sequences through step `k` with step size `tau`.
    pub fn advance_to(&mut self, k: usize, tau: f64) {
        while self.v.len() <= k {
            let v = implicit_root(*self.v.last().unwrap(), tau, self.cbar);
            let h = self.h_star.unwrap_or(0.0);
            let vt = implicit_root(self.v_tilde.last().unwrap() + tau * h, tau, self.cbar);
            self.v.push(v);
            self.v_tilde.push(vt);
        }
    }

    /// The floor enforced at step `k`.
    pub fn floor(&self, k: usize) -> f64 {
        match self.h_star {
            Some(_) => self.v[k].max(self.v_tilde[k]),
            None => self.v[k],
        }
    }
}

/// `(v_k, ṽ_k, θ̃)`.
pub fn positivity_floor(monitor: &mut PositivityMonitor, k: usize, tau: f64) -> (f64, f64, f64) {
    monitor.advance_to(k, tau);
    (monitor.v[k], monitor.v_tilde[k], monitor.theta_tilde())
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityReport {
    pub pass: bool,
    pub floor: f64,
    pub min_theta: f64,
    /// Node attaining the minimum.
    pub node: usize,
    /// `min θ − floor`.
    pub margin: f64,
}

/// PASS iff `min θ_k ≥ floor_k − 1e-10`.
pub fn verify_positivity(theta: &[f64], monitor: &PositivityMonitor, k: usize) -> PositivityReport {
    let (node, min_theta) = theta
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &t)| if t < bv { (i, t) } else { (bi, bv) });
    let floor = monitor.floor(k);
    PositivityReport {
        pass: min_theta >= floor - 1e-10,
        floor,
        min_theta,
        node,
        margin: min_theta - floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_boundary_flux, assemble_elastic, assemble_mass, assemble_source};
    use crate::mesh::{generate_unit_square, Side};

    #[test]
    fn floor_examples() {
        let mut m = PositivityMonitor::new(1.0, 1.0, None, 1.0).unwrap();
        assert_eq!(m.theta_tilde(), 0.5);
        for k in 1..=100 {
            let (v, _, tt) = positivity_floor(&mut m, k, 0.01);
            assert!(v >= tt && v > 0.0);
            assert!(v < m.v[k - 1]);
        }
        let mut fine = PositivityMonitor::new(2.0, 3.0, None, 1.0).unwrap();
        let (v, _, _) = positivity_floor(&mut fine, 3, 1e-9);
        assert!((v - 2.0).abs() < 1e-7);
        let mut eq = PositivityMonitor::new(1.5, 2.0, Some(2.0 * 1.5 * 1.5), 1.0).unwrap();
        for k in 1..20 {
            let (_, vt, _) = positivity_floor(&mut eq, k, 0.05);
            assert!((vt - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn injected_violation_fails_naming_node() {
        let m = PositivityMonitor::new(1.0, 1.0, None, 1.0).unwrap();
        let mut theta = vec![1.0; 10];
        let r = verify_positivity(&theta, &m, 0);
        assert!(r.pass && r.margin == 0.0);
        theta[7] = 0.25;
        let r = verify_positivity(&theta, &m, 0);
        assert!(!r.pass && r.node == 7);
    }

    #[test]
    fn scaling_identity_factors() {
        let s = Scaling::IDENTITY;
        for f in [s.inertia(), s.viscosity(), s.conductivity(), s.heat_rate(), s.dissipation(), s.heating()] {
            assert_eq!(f, 1.0);
        }
        let h = Scaling { eps: 0.5, beta: 2.0 };
        assert_eq!(h.conductivity(), 4.0);
        assert_eq!(h.floor_rate(1.0), 2.0);
    }

    struct Setup {
        mesh: Mesh2D,
        dofs: DofMap,
        mat: MaterialLaws,
        mass: SparseOperator,
    }

    fn setup(n: usize, sides: &[Side], mat: MaterialLaws) -> Setup {
        let mesh = generate_unit_square(n, sides).unwrap();
        let dofs = DofMap::new(&mesh);
        let mass = assemble_mass(&mesh, &dofs, mat.density);
        Setup { mesh, dofs, mat, mass }
    }

    #[test]
    fn constant_state_is_a_fixed_point() {
        let s = setup(4, &[Side::Left, Side::Right, Side::Top, Side::Bottom], MaterialLaws::default());
        let n = s.mesh.n_nodes();
        let zero = vec![0.0; 2 * n];
        let theta = vec![1.7; n];
        let z = vec![0.8; n];
        let hl = vec![0.0; n];
        let p = CoupledProblem {
            mesh: &s.mesh,
            dofs: &s.dofs,
            mat: &s.mat,
            mass: &s.mass,
            scaling: Scaling::IDENTITY,
            step: 1,
            tau: 0.1,
            gamma: 5.0,
            u_prev: &zero,
            u_prev2: &zero,
            theta_prev: &theta,
            z_prev: &z,
            z_new: &z,
            force: &zero,
            heat_load: &hl,
        };
        let sol = solve_coupled(&p, &CoupledOptions::default()).unwrap();
        assert!(sol.u.iter().all(|v| v.abs() < 1e-14));
        assert!(sol.theta.iter().all(|t| (t - 1.7).abs() < 1e-13));
    }

    #[test]
    fn decoupled_mechanics_matches_standalone_solve() {
        let mat = MaterialLaws { expansion: 0.0, ..MaterialLaws::default() };
        let s = setup(4, &[Side::Left], mat);
        let n = s.mesh.n_nodes();
        let (tau, gamma) = (0.05, 5.0);
        let u1: Vec<f64> = s.mesh.nodes().iter().flat_map(|p| [0.02 * p[0] * p[1], -0.01 * p[0]]).collect();
        let u2: Vec<f64> = u1.iter().map(|v| 0.9 * v).collect();
        let theta = vec![1.0; n];
        let z_prev = vec![1.0; n];
        let z_new: Vec<f64> = s.mesh.nodes().iter().map(|p| 1.0 - 0.3 * p[0]).collect();
        let force = crate::assembly::assemble_traction(&s.mesh, &s.dofs, [0.3, 0.1], &[Side::Right]);
        let hl = vec![0.0; n];
        let p = CoupledProblem {
            mesh: &s.mesh,
            dofs: &s.dofs,
            mat: &s.mat,
            mass: &s.mass,
            scaling: Scaling::IDENTITY,
            step: 1,
            tau,
            gamma,
            u_prev: &u1,
            u_prev2: &u2,
            theta_prev: &theta,
            z_prev: &z_prev,
            z_new: &z_new,
            force: &force,
            heat_load: &hl,
        };
        let sol = solve_coupled(&p, &CoupledOptions::default()).unwrap();

        // independent dense Newton on the viscoelastodynamic step
        let free = s.dofs.free();
        let md = s.mass.to_dense();
        let kd = assemble_elastic(&s.mesh, &s.dofs, &z_new, &s.mat).unwrap().to_dense();
        let dd = assemble_viscous(&s.mesh, &s.dofs, &z_prev, &theta, &s.mat).to_dense();
        let to_v = |x: &[f64]| nalgebra::DVector::from_column_slice(x);
        let (vu1, vu2) = (to_v(&u1), to_v(&u2));
        let mut u = vu1.clone();
        for _ in 0..30 {
            let (g, jg) = assemble_gamma_term(&s.mesh, &s.dofs, u.as_slice(), tau, gamma).unwrap();
            let r = &md * (&u - 2.0 * &vu1 + &vu2) / (tau * tau) + &dd * (&u - &vu1) / tau + &kd * &u + to_v(&g) - to_v(&force);
            let j = &md / (tau * tau) + &dd / tau + &kd + jg.to_dense();
            let rf = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&i| r[i]));
            let jf = nalgebra::DMatrix::from_fn(free.len(), free.len(), |a, b| j[(free[a], free[b])]);
            let d = jf.lu().solve(&rf).unwrap();
            for (a, &i) in free.iter().enumerate() {
                u[i] -= d[a];
            }
        }
        let scale = u.amax();
        for i in 0..u.len() {
            assert!((u[i] - sol.u[i]).abs() <= 1e-10 * scale.max(1.0), "{i}");
        }
    }

    /// One heat step with the mechanics at rest: `θ_old = θ_exact` linear in
    /// `x`, source and flux manufactured so that `θ_exact` solves the
    /// continuous equation.
    fn manufactured_error(n: usize) -> f64 {
        let mat = MaterialLaws::default();
        let mesh = generate_unit_square(n, &[Side::Left]).unwrap();
        let exact = |x: [f64; 2]| 1.0 + 0.5 * x[0];
        let theta_old: Vec<f64> = mesh.nodes().iter().map(|p| exact(*p)).collect();
        let z = vec![1.0; mesh.n_nodes()];
        let src = assemble_source(&mesh, |x| -mat.conductivity_derivative(1.0, exact(x)) * 0.25);
        let flux = assemble_boundary_flux(&mesh, |x, nu| mat.conductivity(1.0, exact(x)) * 0.5 * nu[0]);
        let load: Vec<f64> = src.iter().zip(&flux).map(|(a, b)| a + b).collect();
        let h = HeatSystem {
            mesh: &mesh,
            mat: &mat,
            scaling: Scaling::IDENTITY,
            tau: 0.1,
            z: &z,
            theta_old: &theta_old,
            sources: HeatSources::zeros(mesh.n_nodes()),
            heat_load: &load,
        };
        let (th, _, _) = h.solve(&theta_old, Truncation::None, 1e-13, HeatSolver::Picard, LinearSolver::Direct).unwrap();
        max_diff(&th, &theta_old)
    }

    #[test]
    fn manufactured_heat_solution_is_second_order() {
        let e: Vec<f64> = [4, 8, 16].iter().map(|&n| manufactured_error(n)).collect();
        assert!(e[0] / e[1] > 3.0 && e[1] / e[2] > 3.0, "{e:?}");
    }

    #[test]
    fn heat_newton_agrees_with_picard() {
        let mat = MaterialLaws::default();
        let mesh = generate_unit_square(5, &[Side::Left]).unwrap();
        let n = mesh.n_nodes();
        let theta_old: Vec<f64> = mesh.nodes().iter().map(|p| 1.0 + p[0] * p[1]).collect();
        let z = vec![1.0; n];
        let load = assemble_source(&mesh, |x| 1.0 + x[1]);
        let h = HeatSystem {
            mesh: &mesh,
            mat: &mat,
            scaling: Scaling::IDENTITY,
            tau: 0.1,
            z: &z,
            theta_old: &theta_old,
            sources: HeatSources::zeros(n),
            heat_load: &load,
        };
        let (a, _, _) = h.solve(&theta_old, Truncation::None, 1e-13, HeatSolver::Picard, LinearSolver::Direct).unwrap();
        let (b, _, _) = h.solve(&theta_old, Truncation::None, 1e-13, HeatSolver::Newton, LinearSolver::Direct).unwrap();
        assert!(max_diff(&a, &b) < 1e-11);
    }
}
