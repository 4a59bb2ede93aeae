//! The time-stepping driver and the energy ledger certifying every step.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{
    assemble_mass, centroid_value, element_strain, gamma_energy, strains, viscosity_coefficients, LoadSample,
};
use crate::config::SimConfig;
use crate::damage_step::{
    check_semistability, gradient_energy, minimize_damage_with, DamageProblem, FeDamageEnergy,
    SemistabilityReport,
};
use crate::error::{Error, Result};
use crate::material::MaterialLaws;
use crate::mesh::{DofMap, Mesh2D};
use crate::sparse::SparseOperator;
use crate::thermomech_step::{
    solve_coupled, verify_positivity, CoupledProblem, InnerStats, PositivityMonitor, Scaling,
};

/// Nodal state at time level `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub k: usize,
    pub t: f64,
    pub u: Vec<f64>,
    /// `(u_k − u_{k−1})/τ`; the initial velocity at `k = 0`.
    pub u_dot: Vec<f64>,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Flag {
    Pass,
    Fail,
    /// Not checked at this step.
    Skip,
}

impl Flag {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Flag::Pass
        } else {
            Flag::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::Pass => "PASS",
            Flag::Fail => "FAIL",
            Flag::Skip => "-",
        }
    }

    pub fn failed(&self) -> bool {
        *self == Flag::Fail
    }
}

/// One ledger row. Cumulative quantities sum over steps `1..=k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub k: usize,
    pub t: f64,
    pub kinetic: f64,
    pub elastic: f64,
    pub gradient: f64,
    pub gamma: f64,
    pub load_potential: f64,
    /// Stored energy: elastic + gradient + gamma + load potential.
    pub energy: f64,
    /// `∫ (z₀ − z_k)`.
    pub dissipated_damage: f64,
    /// `visc ∫ 𝔻(z_{k−1}, θ_{k−1}) e(u̇_k) : e(u̇_k)`.
    pub viscous_power: f64,
    /// `∫ θ_k 𝔹 : e(u̇_k)`.
    pub coupling_power: f64,
    pub viscous_cum: f64,
    /// `∫ θ_k`.
    pub thermal: f64,
    /// `Σ τ ⟨(f_j − f_{j−1})/τ, u_{j−1}⟩`.
    pub load_power_cum: f64,
    /// `Σ τ (∫H + ∫h) / heat_rate`.
    pub heat_intake_cum: f64,
    pub mech_residual: f64,
    pub total_residual: f64,
    /// Largest energy magnitude seen so far.
    pub energy_scale: f64,
    /// `max (z_k − z_{k−1})`.
    pub max_dz: f64,
    pub min_theta: f64,
    pub theta_floor: f64,
    /// Smallest sampled semistability residual, when sampled.
    pub semistability: Option<f64>,
    pub unidirectional: Flag,
    pub mech: Flag,
    pub total: Flag,
    pub positivity: Flag,
    pub semistable: Flag,
}

impl LedgerRow {
    pub fn all_pass(&self) -> bool {
        ![self.unidirectional, self.mech, self.total, self.positivity, self.semistable]
            .iter()
            .any(Flag::failed)
    }

    fn magnitude(&self) -> f64 {
        [
            self.kinetic,
            self.elastic,
            self.gradient,
            self.gamma,
            self.load_potential,
            self.energy,
            self.dissipated_damage,
            self.viscous_cum,
            self.thermal,
            self.load_power_cum,
            self.heat_intake_cum,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

/// Signed residual RHS − LHS of the discrete mechanical energy inequality.
pub fn mech_energy_residual(ledger: &EnergyLedger, k: usize) -> f64 {
    ledger.rows[k].mech_residual
}

/// Signed residual RHS − LHS of the discrete total energy inequality.
pub fn total_energy_residual(ledger: &EnergyLedger, k: usize) -> f64 {
    ledger.rows[k].total_residual
}

fn mech_sides(r: &LedgerRow, r0: &LedgerRow) -> (f64, f64) {
    let rhs = r0.kinetic + r0.energy - r.load_power_cum;
    let lhs = r.kinetic + r.energy + r.dissipated_damage + r.viscous_cum;
    (lhs, rhs)
}

fn total_sides(r: &LedgerRow, r0: &LedgerRow) -> (f64, f64) {
    let rhs = r0.kinetic + r0.energy + r0.thermal - r.load_power_cum + r.heat_intake_cum;
    let lhs = r.kinetic + r.energy + r.thermal;
    (lhs, rhs)
}

/// Everything needed to evaluate the ledger and certifications of a
/// trajectory, shared by the live run and by offline verification.
pub struct Context {
    pub cfg: SimConfig,
    pub mesh: Mesh2D,
    pub dofs: DofMap,
    pub mat: MaterialLaws,
    pub mass: SparseOperator,
    pub scaling: Scaling,
    /// Factor applied to the heat source and flux data.
    pub heat_scale: f64,
    pub tau: f64,
}

impl Context {
    pub fn new(cfg: SimConfig, mesh: Mesh2D, scaling: Scaling, heat_scale: f64) -> Result<Self> {
        cfg.validate()?;
        let dofs = DofMap::new(&mesh);
        let mat = cfg.laws();
        let mass = assemble_mass(&mesh, &dofs, mat.density);
        let tau = cfg.tau();
        Ok(Self {
            cfg,
            mesh,
            dofs,
            mat,
            mass,
            scaling,
            heat_scale,
            tau,
        })
    }

    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        let mesh = cfg.build_mesh()?;
        Self::new(cfg.clone(), mesh, Scaling::IDENTITY, 1.0)
    }

    pub fn n_steps(&self) -> usize {
        self.cfg.time.steps
    }

    /// Load sample at level `k`: the point value at `t = 0`, the local
    /// mean over step `k` afterwards.
    pub fn load_sample(&self, k: usize) -> Result<LoadSample> {
        let s = if k == 0 {
            self.cfg.loads.at(0.0)
        } else {
            self.cfg.loads.mean(k, self.n_steps(), self.tau)?
        };
        Ok(s.scaled_heat(self.heat_scale))
    }

    pub fn force(&self, k: usize) -> Result<Vec<f64>> {
        Ok(self.cfg.loads.force_vector(&self.mesh, &self.dofs, &self.load_sample(k)?))
    }

    pub fn heat_load(&self, k: usize) -> Result<Vec<f64>> {
        Ok(self.cfg.loads.heat_vector(&self.mesh, &self.load_sample(k)?))
    }

    pub fn initial_state(&self) -> Result<State> {
        let n = self.mesh.n_nodes();
        let init = &self.cfg.initial;
        let mut u = self.cfg.vector_field(&init.u0, n)?;
        let mut u_dot = self.cfg.vector_field(&init.u_dot0, n)?;
        let mut reset = 0;
        for &d in self.dofs.constrained() {
            if u[d] != 0.0 || u_dot[d] != 0.0 {
                reset += 1;
            }
            u[d] = 0.0;
            u_dot[d] = 0.0;
        }
        if reset > 0 {
            log::warn!("initial displacement/velocity set to zero on {reset} Dirichlet dofs");
        }
        let z = self.cfg.scalar_field(&init.z0, n)?;
        if let Some(i) = z.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("initial.z0: value {} at node {i} outside [0, 1]", z[i])));
        }
        let theta = self.cfg.scalar_field(&init.theta0, n)?;
        let ts = self.cfg.positivity.theta_star;
        if let Some(i) = theta.iter().position(|v| !(*v >= ts)) {
            return Err(Error::Config(format!(
                "initial.theta0: requires θ₀ ≥ θ_* > 0, got {} at node {i} with θ_* = {ts}",
                theta[i]
            )));
        }
        Ok(State {
            k: 0,
            t: 0.0,
            u,
            u_dot,
            z,
            theta,
        })
    }

    pub fn positivity_monitor(&self) -> Result<PositivityMonitor> {
        let s = self.scaling;
        let h_star = self
            .cfg
            .positivity
            .h_star
            .map(|h| h * self.heat_scale / s.heat_rate());
        PositivityMonitor::new(
            self.cfg.positivity.theta_star,
            s.floor_rate(self.mat.bounds().cbar),
            h_star,
            self.cfg.time.horizon,
        )
    }

    pub fn semistability_seed(&self, k: usize) -> u64 {
        self.cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k as u64)
    }

    pub fn samples_semistability(&self, k: usize) -> bool {
        let every = self.cfg.semistability.every;
        k == 0 || k == self.n_steps() || (every > 0 && k % every == 0)
    }

    /// Energy components of a single state.
    fn energies(&self, s: &State, force: &[f64]) -> (f64, f64, f64, f64, f64) {
        let v = self.mass.apply(&s.u_dot);
        let kinetic = 0.5 * self.scaling.inertia() * s.u_dot.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let elastic = FeDamageEnergy::new(&self.mesh, &self.mat, &s.u).elastic(&s.z);
        let gradient = gradient_energy(&self.mesh, &self.mat, &s.z);
        let gamma = gamma_energy(&self.mesh, &s.u, self.tau, self.cfg.material.gamma);
        let load = -force.iter().zip(&s.u).map(|(f, u)| f * u).sum::<f64>();
        (kinetic, elastic, gradient, gamma, load)
    }

    /// Viscous and coupling powers of step `k` (from `prev` to `cur`).
    fn powers(&self, prev: &State, cur: &State) -> (f64, f64) {
        let d = viscosity_coefficients(&self.mesh, &prev.z, &prev.theta, &self.mat);
        let mut visc = 0.0;
        let mut coup = 0.0;
        for (((t, g), e), dc) in self
            .mesh
            .triangles()
            .iter()
            .zip(self.mesh.geometry())
            .zip(strains(&self.mesh, &cur.u_dot))
            .zip(d)
        {
            visc += g.area * dc * self.mat.viscous.contract(&e, &e);
            coup += g.area * centroid_value(t, &cur.theta) * self.mat.expansion * e.trace();
        }
        (self.scaling.viscosity() * visc, coup)
    }

    fn semistability(&self, u_frozen: &[f64], z: &[f64], k: usize, scale: f64) -> SemistabilityReport {
        let e = FeDamageEnergy::new(&self.mesh, &self.mat, u_frozen);
        check_semistability(
            &e,
            z,
            self.cfg.semistability.samples,
            self.cfg.tolerances.semistability * scale,
            self.semistability_seed(k),
        )
    }
}

/// Builds ledger rows one state at a time.
pub struct LedgerBuilder<'a> {
    ctx: &'a Context,
    pub ledger: EnergyLedger,
    monitor: PositivityMonitor,
    prev_force: Vec<f64>,
    initial_z: Vec<f64>,
    scale: f64,
}

impl<'a> LedgerBuilder<'a> {
    pub fn new(ctx: &'a Context) -> Result<Self> {
        Ok(Self {
            ctx,
            ledger: EnergyLedger::default(),
            monitor: ctx.positivity_monitor()?,
            prev_force: Vec::new(),
            initial_z: Vec::new(),
            scale: 0.0,
        })
    }

    /// Appends the row of `cur`; `prev` is the state at level `k − 1`
    /// (`None` at `k = 0`).
    pub fn push(&mut self, prev: Option<&State>, cur: &State) -> Result<&LedgerRow> {
        let ctx = self.ctx;
        let k = cur.k;
        let force = ctx.force(k)?;
        let (kinetic, elastic, gradient, gamma, load_potential) = ctx.energies(cur, &force);
        let energy = elastic + gradient + gamma + load_potential;
        let thermal: f64 = ctx.mesh.node_areas().iter().zip(&cur.theta).map(|(m, t)| m * t).sum();
        let mut row = LedgerRow {
            k,
            t: cur.t,
            kinetic,
            elastic,
            gradient,
            gamma,
            load_potential,
            energy,
            dissipated_damage: 0.0,
            viscous_power: 0.0,
            coupling_power: 0.0,
            viscous_cum: 0.0,
            thermal,
            load_power_cum: 0.0,
            heat_intake_cum: 0.0,
            mech_residual: 0.0,
            total_residual: 0.0,
            energy_scale: 0.0,
            max_dz: 0.0,
            min_theta: cur.theta.iter().copied().fold(f64::INFINITY, f64::min),
            theta_floor: 0.0,
            semistability: None,
            unidirectional: Flag::Pass,
            mech: Flag::Pass,
            total: Flag::Pass,
            positivity: Flag::Pass,
            semistable: Flag::Skip,
        };
        let frozen_u;
        if let Some(prev) = prev {
            if prev.k + 1 != k {
                return Err(Error::Input(format!("ledger expects level {} after {}, got {k}", prev.k + 1, prev.k)));
            }
            let last = self.ledger.rows.last().expect("row 0 precedes");
            let z0 = &self.initial_z;
            row.dissipated_damage = ctx.mesh.node_areas().iter().zip(z0.iter().zip(&cur.z)).map(|(m, (a, b))| m * (a - b)).sum();
            let (vp, cp) = ctx.powers(prev, cur);
            row.viscous_power = vp;
            row.coupling_power = cp;
            row.viscous_cum = last.viscous_cum + ctx.tau * (vp - cp);
            let df: f64 = force.iter().zip(&self.prev_force).zip(&prev.u).map(|((a, b), u)| (a - b) * u).sum();
            row.load_power_cum = last.load_power_cum + df;
            let heat_in: f64 = ctx.heat_load(k)?.iter().sum();
            row.heat_intake_cum = last.heat_intake_cum + ctx.tau * heat_in / ctx.scaling.heat_rate();
            row.max_dz = cur.z.iter().zip(&prev.z).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
            frozen_u = &prev.u;
        } else {
            self.initial_z = cur.z.clone();
            frozen_u = &cur.u;
        }
        self.prev_force = force;
        self.scale = self.scale.max(row.magnitude());
        row.energy_scale = self.scale;
        let r0 = self.ledger.rows.first().unwrap_or(&row).clone();
        let (ml, mr) = mech_sides(&row, &r0);
        let (tl, tr) = total_sides(&row, &r0);
        row.mech_residual = mr - ml;
        row.total_residual = tr - tl;
        let tol = ctx.cfg.tolerances.energy * self.scale;
        row.mech = Flag::from_bool(row.mech_residual >= -tol);
        row.total = Flag::from_bool(row.total_residual >= -tol);
        row.unidirectional = Flag::from_bool(row.max_dz <= ctx.cfg.tolerances.unidirectionality);
        self.monitor.advance_to(k, ctx.tau);
        let pos = verify_positivity(&cur.theta, &self.monitor, k);
        row.theta_floor = pos.floor;
        row.positivity = Flag::from_bool(pos.pass);
        if ctx.samples_semistability(k) {
            let rep = ctx.semistability(frozen_u, &cur.z, k, self.scale);
            row.semistability = Some(rep.min_residual);
            row.semistable = Flag::from_bool(rep.pass);
        }
        self.ledger.rows.push(row);
        Ok(self.ledger.rows.last().unwrap())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StepStats {
    pub k: usize,
    pub damage_iterations: usize,
    pub damage_residual: f64,
    pub coupled: InnerStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub steps_completed: usize,
    pub all_pass: bool,
    pub worst_mech_residual: f64,
    pub worst_total_residual: f64,
    pub worst_positivity_margin: f64,
    pub worst_semistability: f64,
    pub max_dz: f64,
    pub failures: Vec<String>,
    pub wall_time_s: f64,
    pub seed: u64,
}

pub struct RunOutput {
    pub states: Vec<State>,
    pub ledger: EnergyLedger,
    pub stats: Vec<StepStats>,
    pub summary: RunSummary,
    /// Hard failure that ended the run early.
    pub failure: Option<Error>,
}

pub fn summarize(ledger: &EnergyLedger, seed: u64, wall: f64) -> RunSummary {
    let mut s = RunSummary {
        steps_completed: ledger.rows.len().saturating_sub(1),
        all_pass: true,
        worst_mech_residual: f64::INFINITY,
        worst_total_residual: f64::INFINITY,
        worst_positivity_margin: f64::INFINITY,
        worst_semistability: f64::INFINITY,
        max_dz: f64::NEG_INFINITY,
        failures: Vec::new(),
        wall_time_s: wall,
        seed,
    };
    for r in &ledger.rows {
        s.worst_mech_residual = s.worst_mech_residual.min(r.mech_residual);
        s.worst_total_residual = s.worst_total_residual.min(r.total_residual);
        s.worst_positivity_margin = s.worst_positivity_margin.min(r.min_theta - r.theta_floor);
        if let Some(v) = r.semistability {
            s.worst_semistability = s.worst_semistability.min(v);
        }
        if r.k > 0 {
            s.max_dz = s.max_dz.max(r.max_dz);
        }
        for (name, f) in [
            ("unidirectionality", r.unidirectional),
            ("mechanical energy", r.mech),
            ("total energy", r.total),
            ("positivity", r.positivity),
            ("semistability", r.semistable),
        ] {
            if f.failed() {
                s.all_pass = false;
                s.failures.push(format!("step {}: {name} FAIL", r.k));
            }
        }
    }
    s
}

/// Runs the scheme on a prepared context. Hard failures end the run and are
/// returned in `failure` together with everything computed before them.
/// With `strict`, the run also stops after the first failed certification.
pub fn run_context(ctx: &Context, strict: bool, mut observer: impl FnMut(&State, &LedgerRow)) -> RunOutput {
    let start = Instant::now();
    let mut states = Vec::new();
    let mut stats = Vec::new();
    let mut builder = match LedgerBuilder::new(ctx) {
        Ok(b) => b,
        Err(e) => return failed(ctx, states, EnergyLedger::default(), stats, e, start),
    };
    let result = (|| -> Result<()> {
        let s0 = ctx.initial_state()?;
        let row = builder.push(None, &s0)?;
        observer(&s0, row);
        let stop = strict && !row.all_pass();
        let u_back: Vec<f64> = s0.u.iter().zip(&s0.u_dot).map(|(u, v)| u - ctx.tau * v).collect();
        states.push(s0);
        if stop {
            return Ok(());
        }
        let mut u_prev2 = u_back;
        for k in 1..=ctx.n_steps() {
            let prev = states.last().unwrap();
            let t = k as f64 * ctx.tau;
            let energy = FeDamageEnergy::new(&ctx.mesh, &ctx.mat, &prev.u);
            let dp = DamageProblem {
                energy: &energy,
                z_prev: &prev.z,
                time: t,
            };
            let dsol = minimize_damage_with(&dp, ctx.cfg.tolerances.damage, ctx.cfg.tolerances.damage_max_iter)
                .map_err(|e| Error::StepFailure {
                    step: k,
                    reason: format!("damage minimization: {e}"),
                })?;
            let force = ctx.force(k)?;
            let heat_load = ctx.heat_load(k)?;
            let cp = CoupledProblem {
                mesh: &ctx.mesh,
                dofs: &ctx.dofs,
                mat: &ctx.mat,
                mass: &ctx.mass,
                scaling: ctx.scaling,
                step: k,
                tau: ctx.tau,
                gamma: ctx.cfg.material.gamma,
                u_prev: &prev.u,
                u_prev2: &u_prev2,
                theta_prev: &prev.theta,
                z_prev: &prev.z,
                z_new: &dsol.z,
                force: &force,
                heat_load: &heat_load,
            };
            let sol = solve_coupled(&cp, &ctx.cfg.solver)?;
            let u_dot = sol.u.iter().zip(&prev.u).map(|(a, b)| (a - b) / ctx.tau).collect();
            let state = State {
                k,
                t,
                u: sol.u,
                u_dot,
                z: dsol.z,
                theta: sol.theta,
            };
            stats.push(StepStats {
                k,
                damage_iterations: dsol.iterations,
                damage_residual: dsol.residual,
                coupled: sol.stats,
            });
            let row = builder.push(Some(prev), &state)?;
            observer(&state, row);
            let stop = strict && !row.all_pass();
            u_prev2 = prev.u.clone();
            states.push(state);
            if stop {
                break;
            }
        }
        Ok(())
    })();
    let ledger = builder.ledger;
    match result {
        Ok(()) => {
            let summary = summarize(&ledger, ctx.cfg.seed, start.elapsed().as_secs_f64());
            RunOutput {
                states,
                ledger,
                stats,
                summary,
                failure: None,
            }
        }
        Err(e) => failed(ctx, states, ledger, stats, e, start),
    }
}

fn failed(ctx: &Context, states: Vec<State>, ledger: EnergyLedger, stats: Vec<StepStats>, e: Error, start: Instant) -> RunOutput {
    let mut summary = summarize(&ledger, ctx.cfg.seed, start.elapsed().as_secs_f64());
    summary.all_pass = false;
    summary.failures.push(e.to_string());
    RunOutput {
        states,
        ledger,
        stats,
        summary,
        failure: Some(e),
    }
}

/// Runs a configuration; hard failures are returned as errors.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    let ctx = Context::from_config(cfg)?;
    let mut out = run_context(&ctx, false, |_, _| {});
    match out.failure.take() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Recomputes the ledger and every certification from stored states.
pub fn recompute_ledger(ctx: &Context, states: &[State]) -> Result<EnergyLedger> {
    let mut b = LedgerBuilder::new(ctx)?;
    for (i, s) in states.iter().enumerate() {
        if s.k != i {
            return Err(Error::Input(format!("trajectory is missing level {i}")));
        }
        b.push(if i == 0 { None } else { Some(&states[i - 1]) }, s)?;
    }
    Ok(b.ledger)
}

/// Strain of a state's velocity on every element, for diagnostics.
pub fn velocity_strain_sq(ctx: &Context, s: &State) -> f64 {
    ctx.mesh
        .triangles()
        .iter()
        .zip(ctx.mesh.geometry())
        .map(|(t, g)| g.area * element_strain(g, t, &s.u_dot).norm_sq())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::TimeFunction;
    use crate::config::MeshConfig;
    use crate::mesh::Side;

    fn config(n: usize, sides: Vec<Side>, steps: usize) -> SimConfig {
        let mut c = SimConfig::default();
        c.mesh = MeshConfig::Generated { n, dirichlet: sides };
        c.time.steps = steps;
        c
    }

    #[test]
    fn equilibrium_run_is_stationary() {
        let c = config(4, vec![Side::Left, Side::Right, Side::Bottom, Side::Top], 5);
        let out = run(&c).unwrap();
        assert!(out.summary.all_pass, "{:?}", out.summary.failures);
        for s in &out.states {
            assert!(s.u.iter().all(|v| v.abs() < 1e-14));
            assert!(s.z.iter().all(|v| *v == 1.0));
            assert!(s.theta.iter().all(|t| (t - 1.0).abs() < 1e-12));
        }
        for r in &out.ledger.rows {
            assert!(r.mech_residual.abs() <= 1e-12 && r.total_residual.abs() <= 1e-12, "{r:?}");
        }
        assert_eq!(mech_energy_residual(&out.ledger, 0), 0.0);
        assert_eq!(total_energy_residual(&out.ledger, 0), 0.0);
    }

    #[test]
    fn heat_intake_of_unit_source() {
        let mut c = config(4, vec![Side::Left, Side::Right, Side::Bottom, Side::Top], 1);
        c.time.horizon = 0.1;
        c.loads.heat_source = TimeFunction::constant(1.0);
        let out = run(&c).unwrap();
        assert!((out.ledger.rows[1].heat_intake_cum - 0.1).abs() < 1e-14);
        assert!(out.summary.all_pass, "{:?}", out.summary.failures);
    }

    #[test]
    fn loaded_run_certifies_and_recomputes() {
        let mut c = config(6, vec![Side::Left], 10);
        c.loads.traction[0] = TimeFunction::Ramp { start: 0.0, slope: 1.0 };
        c.loads.traction_sides = vec![Side::Right];
        let ctx = Context::from_config(&c).unwrap();
        let out = run_context(&ctx, false, |_, _| {});
        assert!(out.failure.is_none());
        assert!(out.summary.all_pass, "{:?}", out.summary.failures);
        assert!(out.states.last().unwrap().z.iter().any(|z| *z < 1.0));
        let again = recompute_ledger(&ctx, &out.states).unwrap();
        assert_eq!(again.rows, out.ledger.rows);
    }
}
