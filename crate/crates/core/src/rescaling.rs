//! Vanishing viscosity and inertia: runs of the rescaled system for a list
//! of `ε`, their scaling diagnostics, and the limit temperature equation.

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_scalar_mass, element_gradient};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::time_loop::{run_context, velocity_strain_sq, Context, LedgerRow, RunOutput, State};
use crate::thermomech_step::Scaling;

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub eps: f64,
    /// `‖∇θ_ε‖_{L²(0,T;L²)}`.
    pub grad_theta: f64,
    /// `ε ‖e(u̇_ε)‖_{L²(0,T;L²)}`.
    pub eps_strain_rate: f64,
    /// `sup_t ‖θ_ε(t) − mean θ_ε(t)‖_{L²}`.
    pub theta_oscillation: f64,
    /// Defect density `ε ∫ 𝔻 e(u̇):e(u̇)` per step (step 0 excluded).
    pub mu: Vec<f64>,
    /// Limit temperature equation residual per level.
    pub ode_residual: Vec<f64>,
    pub all_pass: bool,
}

pub struct RescaledRun {
    pub output: RunOutput,
    pub diagnostics: Diagnostics,
    pub context: Context,
}

/// Rescaled context: coefficients `(ε², ε, ε^{−β})`, heat data scaled by `ε`.
pub fn rescaled_context(cfg: &SimConfig, eps: f64) -> Result<Context> {
    let r = cfg
        .rescaling
        .as_ref()
        .ok_or_else(|| Error::Config("rescaling: section missing".into()))?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("rescaling.eps: values must be positive, got {eps}")));
    }
    let mesh = cfg.build_mesh()?;
    if !mesh.all_dirichlet() {
        return Err(Error::Config(
            "rescaling: the displacement must be clamped on the whole boundary".into(),
        ));
    }
    Context::new(cfg.clone(), mesh, Scaling { eps, beta: r.beta }, eps)
}

/// Diagnostics of a finished rescaled run.
pub fn diagnostics(ctx: &Context, states: &[State], rows: &[LedgerRow]) -> Diagnostics {
    let tau = ctx.tau;
    let mesh = &ctx.mesh;
    let mass = assemble_scalar_mass(mesh, 1.0);
    let area = mesh.total_area();
    let (mut g2, mut e2, mut osc) = (0.0, 0.0, 0.0f64);
    for s in states.iter().skip(1) {
        g2 += tau
            * mesh
                .triangles()
                .iter()
                .zip(mesh.geometry())
                .map(|(t, g)| {
                    let d = element_gradient(g, t, &s.theta);
                    g.area * (d[0] * d[0] + d[1] * d[1])
                })
                .sum::<f64>();
        e2 += tau * velocity_strain_sq(ctx, s);
        let mean = mesh.node_areas().iter().zip(&s.theta).map(|(m, t)| m * t).sum::<f64>() / area;
        let dev: Vec<f64> = s.theta.iter().map(|t| t - mean).collect();
        osc = osc.max(mass.quadratic_form(&dev).max(0.0).sqrt());
    }
    Diagnostics {
        eps: ctx.scaling.eps,
        grad_theta: g2.sqrt(),
        eps_strain_rate: ctx.scaling.eps * e2.sqrt(),
        theta_oscillation: osc,
        mu: rows.iter().skip(1).map(|r| r.viscous_power).collect(),
        ode_residual: theta_ode_residual(rows, tau),
        all_pass: rows.iter().all(LedgerRow::all_pass),
    }
}

/// Residual of the limit temperature equation tested with `η ≡ 1`:
/// `[∫θ_k − ∫θ_0] − [Σ τ μ_j + ∫(z_0 − z_k) + Σ τ ∫H̃_j]`, where the source
/// term is the heat intake divided by the heat-rate factor (which recovers
/// `H̃` from `H_ε = εH̃`).
pub fn theta_ode_residual(rows: &[LedgerRow], tau: f64) -> Vec<f64> {
    let Some(r0) = rows.first() else {
        return Vec::new();
    };
    let mut mu_cum = 0.0;
    rows.iter()
        .map(|r| {
            if r.k > 0 {
                mu_cum += tau * r.viscous_power;
            }
            (r.thermal - r0.thermal) - (mu_cum + r.dissipated_damage + r.heat_intake_cum)
        })
        .collect()
}

pub fn run_rescaled(cfg: &SimConfig, eps: f64) -> Result<RescaledRun> {
    let ctx = rescaled_context(cfg, eps)?;
    let mut output = run_context(&ctx, false, |_, _| {});
    if let Some(e) = output.failure.take() {
        return Err(e);
    }
    let diagnostics = diagnostics(&ctx, &output.states, &output.ledger.rows);
    Ok(RescaledRun {
        output,
        diagnostics,
        context: ctx,
    })
}

/// Least-squares slope of `log y` against `log x`; NaN when some `y ≤ 0`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub beta: f64,
    pub members: Vec<Diagnostics>,
    pub slope_grad_theta: f64,
    pub slope_eps_strain_rate: f64,
    pub slope_theta_oscillation: f64,
    pub slope_ode_residual: f64,
    /// The sweep is outside the hypotheses of the limit theorem (`β < 2`).
    pub beta_flagged: bool,
}

impl SweepReport {
    pub fn from_members(beta: f64, mut members: Vec<Diagnostics>) -> Self {
        members.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let eps: Vec<f64> = members.iter().map(|d| d.eps).collect();
        let col = |f: &dyn Fn(&Diagnostics) -> f64| members.iter().map(f).collect::<Vec<_>>();
        let slope = |f: &dyn Fn(&Diagnostics) -> f64| loglog_slope(&eps, &col(f));
        Self {
            beta,
            slope_grad_theta: slope(&|d| d.grad_theta),
            slope_eps_strain_rate: slope(&|d| d.eps_strain_rate),
            slope_theta_oscillation: slope(&|d| d.theta_oscillation),
            slope_ode_residual: slope(&|d| d.ode_residual.last().copied().unwrap_or(0.0).abs()),
            beta_flagged: beta < 2.0,
            members,
        }
    }
}

/// Runs every `ε` of the rescaling block (concurrently when configured) and
/// fits the diagnostic slopes. Members are reported in decreasing `ε`.
pub fn sweep(cfg: &SimConfig) -> Result<(SweepReport, Vec<RescaledRun>)> {
    let r = cfg
        .rescaling
        .as_ref()
        .ok_or_else(|| Error::Config("rescaling: section missing".into()))?;
    if r.eps.len() < 3 {
        return Err(Error::Config("rescaling.eps: a sweep needs at least 3 values".into()));
    }
    let runs: Vec<Result<RescaledRun>> = if r.parallel {
        r.eps.par_iter().map(|&e| run_rescaled(cfg, e)).collect()
    } else {
        r.eps.iter().map(|&e| run_rescaled(cfg, e)).collect()
    };
    let mut ok = Vec::new();
    for run in runs {
        ok.push(run?);
    }
    ok.sort_by(|a, b| b.diagnostics.eps.total_cmp(&a.diagnostics.eps));
    let report = SweepReport::from_members(r.beta, ok.iter().map(|x| x.diagnostics.clone()).collect());
    Ok((report, ok))
}
