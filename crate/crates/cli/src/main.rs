use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermodamage::config::{parse_config, SimConfig};
use thermodamage::io::{verify_run, write_run, write_sweep};
use thermodamage::rescaling::sweep;
use thermodamage::time_loop::{run_context, Context, RunSummary};

#[derive(Parser)]
#[command(name = "thermodamage", version, about = "Thermo-viscoelastic partial damage simulator")]
struct Cli {
    /// Worker threads (default: THERMODAMAGE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "output")]
        output: PathBuf,
        /// Stop at the first failed certification and exit with 1.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the vanishing viscosity/inertia sweep of the `rescaling` block.
    SweepEps {
        config: PathBuf,
        #[arg(short, long, default_value = "sweep")]
        output: PathBuf,
        /// Exit with 1 when a member fails a certification.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the ledger and certifications of a written run.
    Verify { run_dir: PathBuf },
}

fn load(path: &Path, seed: Option<u64>) -> Result<SimConfig, String> {
    let mut cfg = parse_config(path).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_summary(s: &RunSummary) {
    println!("steps completed        {}", s.steps_completed);
    println!("worst mech residual    {:.6e}", s.worst_mech_residual);
    println!("worst total residual   {:.6e}", s.worst_total_residual);
    println!("worst positivity margin {:.6e}", s.worst_positivity_margin);
    println!("worst semistability    {:.6e}", s.worst_semistability);
    println!("max dz                 {:.6e}", s.max_dz);
    for f in &s.failures {
        println!("FAIL {f}");
    }
    println!("certification          {}", if s.all_pass { "PASS" } else { "FAIL" });
}

fn run(config: &Path, output: &Path, strict: bool, seed: Option<u64>) -> Result<u8, String> {
    let cfg = load(config, seed)?;
    let ctx = Context::from_config(&cfg).map_err(|e| e.to_string())?;
    let out = run_context(&ctx, strict, |s, r| {
        log::info!("step {} t={:.4} E={:.6e} min θ={:.6e}", s.k, s.t, r.energy, r.min_theta);
    });
    write_run(output, &ctx, &out).map_err(|e| e.to_string())?;
    print_summary(&out.summary);
    println!("output                 {}", output.display());
    if let Some(e) = &out.failure {
        eprintln!("error: {e}");
        return Ok(2);
    }
    if !out.summary.all_pass {
        if strict {
            return Ok(1);
        }
        log::warn!("certification failed; rerun with --strict to stop at the first failure");
    }
    Ok(0)
}

fn sweep_eps(config: &Path, output: &Path, strict: bool, seed: Option<u64>) -> Result<u8, String> {
    let cfg = load(config, seed)?;
    let (report, runs) = sweep(&cfg).map_err(|e| e.to_string())?;
    write_sweep(output, &report, &runs).map_err(|e| e.to_string())?;
    println!("{:>10} {:>14} {:>14} {:>14} {:>14}  cert", "eps", "|grad θ|", "eps|e(u')|", "osc θ", "ode residual");
    for d in &report.members {
        println!(
            "{:>10} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}  {}",
            d.eps,
            d.grad_theta,
            d.eps_strain_rate,
            d.theta_oscillation,
            d.ode_residual.last().copied().unwrap_or(0.0),
            if d.all_pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "slopes: grad θ {:.3}  eps|e(u')| {:.3}  osc {:.3}  ode {:.3}",
        report.slope_grad_theta, report.slope_eps_strain_rate, report.slope_theta_oscillation, report.slope_ode_residual
    );
    if report.beta_flagged {
        log::warn!("beta = {} < 2: outside the range covered by the limit analysis", report.beta);
    }
    Ok(if strict && report.members.iter().any(|d| !d.all_pass) { 1 } else { 0 })
}

fn verify(dir: &Path) -> Result<u8, String> {
    let rep = verify_run(dir).map_err(|e| e.to_string())?;
    print_summary(&rep.summary);
    if !rep.mismatched_rows.is_empty() {
        println!("recomputed ledger differs from ledger.csv at levels {:?}", rep.mismatched_rows);
    }
    Ok(if rep.pass { 0 } else { 1 })
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("THERMODAMAGE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("THERMODAMAGE_THREADS: expected a thread count, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = threads(cli.threads).and_then(|n| {
        if let Some(n) = n {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| format!("cannot start thread pool: {e}"))?;
        }
        match &cli.command {
            Command::Run { config, output, strict, seed } => run(config, output, *strict, *seed),
            Command::SweepEps { config, output, strict, seed } => sweep_eps(config, output, *strict, *seed),
            Command::Verify { run_dir } => verify(run_dir),
        }
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
