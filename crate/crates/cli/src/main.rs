use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyelast_core::harness::{check_operators, run_convergence, run_single, RUN_CSV_HEADER};
use polyelast_core::relative_entropy::equivalence_constants;
use polyelast_core::{check_hypotheses, Error, RunConfig};

const RUN_HELP: &str = "\
Writes <out>/run.csv with one row per knot, columns in this order:
  j, t, totalEntropy, dissipationIncrement, cumulativeDissipation, curlResidual, p2Residual, optimizerIterations
and v/Xi snapshots under <out>/snapshots/ at the configured times.";

const CONVERGE_HELP: &str = "\
Writes <out>/study.json, <out>/study.csv with columns
  h, steps, supE, initialE, inFit
and, unless disabled, <out>/budget_rung<k>.csv per ladder rung with columns
  j, t, E, relativeEntropy, Q, D, S, identityResidual, maxQOverD";

const EXIT_HELP: &str = "\
Exit status: 0 on success, 1 on invalid input or a failed self-test, 2 on solver failure.
POLYELAST_THREADS caps the worker threads used by `converge`.";

#[derive(Parser)]
#[command(name = "polyelast", version, about = "Variational time stepping for polyconvex elastodynamics on the periodic unit cube", after_help = EXIT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory with step `h`.
    #[command(after_help = RUN_HELP)]
    Run(Common),
    /// Run the reference and every ladder step, then fit the convergence rate.
    #[command(after_help = CONVERGE_HELP)]
    Converge(Common),
    /// Sample the growth and convexity inequalities of the stored energy.
    CheckEnergy(Common),
    /// Finite-difference and discrete-calculus self-checks.
    CheckOps(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized self-tests, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

enum Failure {
    Error(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn run(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(c) => {
            let cfg = c.config()?;
            let out = run_single(&cfg, &cfg.output.dir)?;
            if !c.quiet {
                let cum = out.trajectory.cumulative_dissipation();
                println!("steps: {}", out.trajectory.steps());
                println!("cumulative dissipation: {:.6e} (bound {:.6e})", cum.last().copied().unwrap_or(0.0), out.dissipation_bound);
                println!("columns: {}", RUN_CSV_HEADER.join(","));
                println!("wrote {}", out.csv_path.display());
            }
            Ok(())
        }
        Command::Converge(c) => {
            let cfg = c.config()?;
            let out = run_convergence(&cfg, Some(&cfg.output.dir))?;
            if !c.quiet {
                for r in &out.study.rungs {
                    println!("h = {:.6e}  steps = {:5}  sup E = {:.6e}{}", r.h, r.steps, r.sup_e, if r.in_fit { "" } else { "  (not fitted)" });
                }
                println!("slope: {:.4}", out.study.slope);
                println!("wrote {}", cfg.output.dir.join("study.json").display());
            }
            Ok(())
        }
        Command::CheckEnergy(c) => {
            let cfg = c.config()?;
            let model = cfg.model()?;
            let s = cfg.sampling;
            let report = check_hypotheses(&model, s.hypothesis_samples, s.hypothesis_radius, cfg.seed)?;
            let eq = equivalence_constants(&model, s.equivalence_samples, s.equivalence_radius, cfg.seed)?;
            if !c.quiet {
                println!("kappa = {:.6e}, kappa' = {:.6e}, gamma = {:.6e}, gamma' = {:.6e}", report.kappa, report.kappa_prime, report.gamma, report.gamma_prime);
                for r in &report.hypothesis_residuals {
                    println!("{:<40} worst excess {:+.3e}", r.name, r.worst);
                }
                println!("mu = {:.6e}, mu' = {:.6e} over {} pairs", eq.mu, eq.mu_prime, eq.samples_used);
            }
            write_json(&cfg.output.dir, "energy_report.json", &report)?;
            if !report.is_satisfied() {
                let names: Vec<&str> = report.violations().iter().map(|r| r.name.as_str()).collect();
                return Err(Failure::Check(format!("violated: {}", names.join(", "))));
            }
            if eq.mu.is_nan() || eq.mu <= 0.0 {
                return Err(Failure::Check(format!("equivalence constant mu = {} is not positive", eq.mu)));
            }
            Ok(())
        }
        Command::CheckOps(c) => {
            let cfg = c.config()?;
            let report = check_operators(&cfg.model()?, cfg.sampling.operator_samples, cfg.seed)?;
            if !c.quiet {
                for ch in &report.checks {
                    println!("{:<28} {:.3e} (tol {:.0e}) {}", ch.name, ch.worst, ch.tolerance, if ch.passed() { "ok" } else { "FAILED" });
                }
            }
            write_json(&cfg.output.dir, "operator_report.json", &report)?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check("operator checks failed".into()))
            }
        }
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 2 } else { 1 })
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
