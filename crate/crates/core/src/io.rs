//! Run output: legacy VTK states, the ledger CSV, `run.json`, failure dumps,
//! and offline verification of a written run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::mesh::Mesh2D;
use crate::rescaling::{RescaledRun, SweepReport};
use crate::thermomech_step::Scaling;
use crate::time_loop::{recompute_ledger, summarize, Context, EnergyLedger, LedgerRow, RunOutput, RunSummary, State};

pub const LEDGER_COLUMNS: [&str; 27] = [
    "k",
    "t",
    "kinetic",
    "elastic",
    "gradient",
    "gamma",
    "load_potential",
    "energy",
    "dissipated_damage",
    "viscous_power",
    "coupling_power",
    "viscous_cum",
    "thermal",
    "load_power_cum",
    "heat_intake_cum",
    "mech_residual",
    "total_residual",
    "energy_scale",
    "max_dz",
    "min_theta",
    "theta_floor",
    "semistability",
    "unidirectional",
    "mech",
    "total",
    "positivity",
    "semistable",
];

pub fn state_file_name(k: usize) -> String {
    format!("state_{k:05}.vtk")
}

/// Legacy ASCII VTK (2.0) unstructured grid with `u` (padded to 3
/// components), `z` and `theta` as point data.
pub fn vtk_string(mesh: &Mesh2D, s: &State) -> String {
    let n = mesh.n_nodes();
    let m = mesh.n_triangles();
    let mut o = String::with_capacity(64 * n);
    let _ = writeln!(o, "# vtk DataFile Version 2.0");
    let _ = writeln!(o, "thermodamage k={} t={:.16e}", s.k, s.t);
    let _ = writeln!(o, "ASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS {n} double");
    for p in mesh.nodes() {
        let _ = writeln!(o, "{:.16e} {:.16e} 0", p[0], p[1]);
    }
    let _ = writeln!(o, "CELLS {m} {}", 4 * m);
    for t in mesh.triangles() {
        let _ = writeln!(o, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(o, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(o, "5");
    }
    let _ = writeln!(o, "POINT_DATA {n}\nVECTORS u double");
    for i in 0..n {
        let _ = writeln!(o, "{:.16e} {:.16e} 0", s.u[2 * i], s.u[2 * i + 1]);
    }
    for (name, f) in [("z", &s.z), ("theta", &s.theta)] {
        let _ = writeln!(o, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in f.iter() {
            let _ = writeln!(o, "{v:.16e}");
        }
    }
    o
}

pub fn write_vtk(path: impl AsRef<Path>, mesh: &Mesh2D, s: &State) -> Result<()> {
    fs::write(path, vtk_string(mesh, s))?;
    Ok(())
}

/// Fields read back from a VTK state file.
#[derive(Clone, Debug, PartialEq)]
pub struct VtkState {
    pub k: usize,
    pub t: f64,
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
}

pub fn read_vtk(path: impl AsRef<Path>) -> Result<VtkState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| perr(0, format!("unexpected end of file, expected {what}")));

    let (ln, l) = next("header")?;
    if !l.starts_with("# vtk DataFile Version") {
        return Err(perr(ln, "not a legacy VTK file".into()));
    }
    let (ln, title) = next("title")?;
    let mut k = None;
    let mut t = None;
    for tok in title.split_whitespace() {
        if let Some(v) = tok.strip_prefix("k=") {
            k = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("t=") {
            t = v.parse().ok();
        }
    }
    let (k, t) = k.zip(t).ok_or_else(|| perr(ln, "title must carry k= and t=".into()))?;
    let (ln, l) = next("ASCII")?;
    if l != "ASCII" {
        return Err(perr(ln, format!("expected ASCII, found {l:?}")));
    }
    let (ln, l) = next("DATASET")?;
    if l != "DATASET UNSTRUCTURED_GRID" {
        return Err(perr(ln, format!("expected an unstructured grid, found {l:?}")));
    }

    let mut points = Vec::new();
    let mut triangles = Vec::new();
    let mut u = Vec::new();
    let mut z = Vec::new();
    let mut theta = Vec::new();
    let mut n_points = 0;
    let nums = |ln: usize, l: &str, want: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| perr(ln, format!("invalid number {x:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != want {
            return Err(perr(ln, format!("expected {want} values, found {}", v.len())));
        }
        Ok(v)
    };
    while let Ok((ln, l)) = next("section") {
        let head: Vec<&str> = l.split_whitespace().collect();
        let count = |i: usize| -> Result<usize> {
            head.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr(ln, format!("malformed section header {l:?}")))
        };
        match head[0] {
            "POINTS" => {
                n_points = count(1)?;
                for _ in 0..n_points {
                    let (ln, l) = next("point")?;
                    let v = nums(ln, l, 3)?;
                    points.push([v[0], v[1]]);
                }
            }
            "CELLS" => {
                for _ in 0..count(1)? {
                    let (ln, l) = next("cell")?;
                    let v = nums(ln, l, 4)?;
                    if v[0] != 3.0 {
                        return Err(perr(ln, "only triangles are supported".into()));
                    }
                    triangles.push([v[1] as usize, v[2] as usize, v[3] as usize]);
                }
            }
            "CELL_TYPES" => {
                for _ in 0..count(1)? {
                    next("cell type")?;
                }
            }
            "POINT_DATA" => {
                if count(1)? != n_points {
                    return Err(perr(ln, "POINT_DATA size differs from POINTS".into()));
                }
            }
            "VECTORS" if head.get(1) == Some(&"u") => {
                for _ in 0..n_points {
                    let (ln, l) = next("vector")?;
                    let v = nums(ln, l, 3)?;
                    u.extend_from_slice(&v[..2]);
                }
            }
            "SCALARS" => {
                let target = match head.get(1) {
                    Some(&"z") => &mut z,
                    Some(&"theta") => &mut theta,
                    _ => return Err(perr(ln, format!("unknown field {l:?}"))),
                };
                next("LOOKUP_TABLE")?;
                for _ in 0..n_points {
                    let (ln, l) = next("scalar")?;
                    target.push(nums(ln, l, 1)?[0]);
                }
            }
            _ => return Err(perr(ln, format!("unexpected section {l:?}"))),
        }
    }
    if u.len() != 2 * n_points || z.len() != n_points || theta.len() != n_points {
        return Err(perr(0, "missing u, z or theta point data".into()));
    }
    Ok(VtkState {
        k,
        t,
        points,
        triangles,
        u,
        z,
        theta,
    })
}

fn flag_or_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.16e}"))
}

pub fn ledger_csv(ledger: &EnergyLedger) -> String {
    let mut o = LEDGER_COLUMNS.join(",");
    o.push('\n');
    for r in &ledger.rows {
        o.push_str(&ledger_csv_row(r));
        o.push('\n');
    }
    o
}

fn ledger_csv_row(r: &LedgerRow) -> String {
    let mut cells = vec![r.k.to_string()];
    cells.extend(
        [
            r.t,
            r.kinetic,
            r.elastic,
            r.gradient,
            r.gamma,
            r.load_potential,
            r.energy,
            r.dissipated_damage,
            r.viscous_power,
            r.coupling_power,
            r.viscous_cum,
            r.thermal,
            r.load_power_cum,
            r.heat_intake_cum,
            r.mech_residual,
            r.total_residual,
            r.energy_scale,
            r.max_dz,
            r.min_theta,
            r.theta_floor,
        ]
        .iter()
        .map(|v| format!("{v:.16e}")),
    );
    cells.push(flag_or_value(r.semistability));
    for f in [r.unidirectional, r.mech, r.total, r.positivity, r.semistable] {
        cells.push(f.as_str().to_string());
    }
    cells.join(",")
}

/// Contents of `run.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: SimConfig,
    /// Directory of the original configuration, for relative field paths.
    pub config_dir: PathBuf,
    pub scaling: Scaling,
    pub heat_scale: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Time levels written as VTK files.
    pub written: Vec<usize>,
    pub summary: serde_json::Value,
    pub stats: serde_json::Value,
    pub failure: Option<String>,
}

/// Writes a run: VTK states every `output.every` levels (and the last),
/// `ledger.csv`, `run.json`, and on a hard failure a dump of the last
/// accepted state with `failure.txt`.
pub fn write_run(dir: impl AsRef<Path>, ctx: &Context, out: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let every = ctx.cfg.output.every.max(1);
    let last = out.states.len().saturating_sub(1);
    let mut written = Vec::new();
    for s in &out.states {
        if s.k % every == 0 || s.k == last {
            write_vtk(dir.join(state_file_name(s.k)), &ctx.mesh, s)?;
            written.push(s.k);
        }
    }
    fs::write(dir.join("ledger.csv"), ledger_csv(&out.ledger))?;
    let to_json = |e: serde_json::Error| Error::Input(format!("cannot serialize run record: {e}"));
    let record = RunRecord {
        config: ctx.cfg.clone(),
        config_dir: ctx.cfg.base_dir.canonicalize().unwrap_or_else(|_| ctx.cfg.base_dir.clone()),
        scaling: ctx.scaling,
        heat_scale: ctx.heat_scale,
        seed: ctx.cfg.seed,
        wall_time_s: out.summary.wall_time_s,
        written,
        summary: serde_json::to_value(&out.summary).map_err(to_json)?,
        stats: serde_json::to_value(&out.stats).map_err(to_json)?,
        failure: out.failure.as_ref().map(|e| e.to_string()),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record).map_err(to_json)?)?;
    if let Some(e) = &out.failure {
        if let Some(s) = out.states.last() {
            write_vtk(dir.join("failure_state.vtk"), &ctx.mesh, s)?;
        }
        let mut report = format!("run aborted: {e}\n");
        let _ = writeln!(report, "last accepted level: {}", out.states.last().map_or(-1, |s| s.k as i64));
        if let Some(st) = out.stats.last() {
            let _ = writeln!(report, "last step statistics: {st:?}");
        }
        fs::write(dir.join("failure.txt"), report)?;
    }
    Ok(())
}

pub fn read_record(dir: impl AsRef<Path>) -> Result<RunRecord> {
    let path = dir.as_ref().join("run.json");
    let text = fs::read_to_string(&path)?;
    let mut rec: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    rec.config.base_dir = rec.config_dir.clone();
    Ok(rec)
}

/// Result of re-certifying a written run from its files alone.
pub struct VerifyReport {
    pub ledger: EnergyLedger,
    pub summary: RunSummary,
    /// Levels whose recomputed ledger row differs from `ledger.csv`.
    pub mismatched_rows: Vec<usize>,
    pub pass: bool,
}

/// Rebuilds the trajectory from the VTK files and recomputes the ledger and
/// all certifications. Needs every level on disk (`output.every = 1`).
pub fn verify_run(dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let dir = dir.as_ref();
    let rec = read_record(dir)?;
    let mesh = rec.config.build_mesh()?;
    let ctx = Context::new(rec.config.clone(), mesh, rec.scaling, rec.heat_scale)?;
    let n = rec.written.last().map_or(0, |k| k + 1);
    if rec.written.len() != n {
        return Err(Error::Input(
            "verification needs every time level; rerun with output.every = 1".into(),
        ));
    }
    let mut states: Vec<State> = Vec::with_capacity(n);
    for k in 0..n {
        let path = dir.join(state_file_name(k));
        let v = read_vtk(&path)?;
        if v.k != k || v.points.len() != ctx.mesh.n_nodes() || v.triangles != ctx.mesh.triangles() {
            return Err(Error::Input(format!(
                "{}: level or mesh does not match the run configuration",
                path.display()
            )));
        }
        let u_dot = match states.last() {
            None => ctx.initial_state()?.u_dot,
            Some(p) => v.u.iter().zip(&p.u).map(|(a, b)| (a - b) / ctx.tau).collect(),
        };
        states.push(State {
            k,
            t: v.t,
            u: v.u,
            u_dot,
            z: v.z,
            theta: v.theta,
        });
    }
    let ledger = recompute_ledger(&ctx, &states)?;
    let stored = fs::read_to_string(dir.join("ledger.csv")).unwrap_or_default();
    let stored: Vec<&str> = stored.lines().skip(1).collect();
    let mismatched_rows = ledger
        .rows
        .iter()
        .filter(|r| stored.get(r.k).map_or(true, |l| *l != ledger_csv_row(r)))
        .map(|r| r.k)
        .collect();
    let summary = summarize(&ledger, rec.seed, 0.0);
    Ok(VerifyReport {
        pass: summary.all_pass,
        ledger,
        summary,
        mismatched_rows,
    })
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut o = String::from("eps,grad_theta,eps_strain_rate,theta_oscillation,ode_residual_final,min_mu,all_pass\n");
    for d in &report.members {
        let min_mu = d.mu.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(
            o,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            d.eps,
            d.grad_theta,
            d.eps_strain_rate,
            d.theta_oscillation,
            d.ode_residual.last().copied().unwrap_or(0.0),
            min_mu,
            if d.all_pass { "PASS" } else { "FAIL" }
        );
    }
    for (name, v) in [
        ("grad_theta", report.slope_grad_theta),
        ("eps_strain_rate", report.slope_eps_strain_rate),
        ("theta_oscillation", report.slope_theta_oscillation),
        ("ode_residual", report.slope_ode_residual),
    ] {
        let _ = writeln!(o, "# slope {name} {v:.6e}");
    }
    o
}

/// Writes every member run to `eps_<value>/` plus `sweep_report.csv` and
/// `sweep.json`.
pub fn write_sweep(dir: impl AsRef<Path>, report: &SweepReport, runs: &[RescaledRun]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for r in runs {
        write_run(dir.join(format!("eps_{}", r.diagnostics.eps)), &r.context, &r.output)?;
    }
    fs::write(dir.join("sweep_report.csv"), sweep_csv(report))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Input(format!("cannot serialize sweep report: {e}")))?;
    fs::write(dir.join("sweep.json"), json)?;
    Ok(())
}
