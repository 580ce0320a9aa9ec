use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{make_initial_data, RunConfig};
use crate::error::{Error, Result};
use crate::grid::write_snapshot;
use crate::interpolants::Trajectory;
use crate::relative_entropy::EntropyBudget;
use crate::stepper::{iteration_bound, run_trajectory_with, step_count, State, StepReport};

/// Column order of the per-step CSV written by [`run_single`].
pub const RUN_CSV_HEADER: [&str; 8] = [
    "j",
    "t",
    "totalEntropy",
    "dissipationIncrement",
    "cumulativeDissipation",
    "curlResidual",
    "p2Residual",
    "optimizerIterations",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    /// Bound on the cumulative dissipation from the initial data.
    pub dissipation_bound: f64,
    pub csv_path: PathBuf,
    pub snapshots: Vec<PathBuf>,
}

/// Knot indices at which snapshots are due: the first knot at or after
/// each requested time, clipped to the run.
fn snapshot_steps(cfg: &RunConfig) -> Vec<usize> {
    let total = step_count(cfg.h, cfg.horizon);
    let mut steps: Vec<usize> =
        cfg.output.snapshot_times.iter().filter(|t| t.is_finite() && **t >= 0.0).map(|&t| step_count(cfg.h, t).min(total)).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
}

fn write_state_snapshot(dir: &Path, j: usize, state: &State) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let v_path = dir.join(format!("v_{j:06}.bin"));
    let file = File::create(&v_path).map_err(|e| Error::io(&v_path, e))?;
    write_snapshot(BufWriter::new(file), &state.v).map_err(|e| Error::io(&v_path, e))?;
    out.push(v_path);
    let xi_path = dir.join(format!("xi_{j:06}.bin"));
    let file = File::create(&xi_path).map_err(|e| Error::io(&xi_path, e))?;
    write_snapshot(BufWriter::new(file), &state.xi).map_err(|e| Error::io(&xi_path, e))?;
    out.push(xi_path);
    Ok(out)
}

/// Runs one trajectory with step `cfg.h`, writing `run.csv` and snapshots
/// to `out_dir`. Rows are flushed as they are produced, so a failed run
/// leaves every completed step on disk.
pub fn run_single(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let model = cfg.model()?;
    let initial = make_initial_data(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("run.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(RUN_CSV_HEADER)?;

    let snap_dir = out_dir.join("snapshots");
    let due = snapshot_steps(cfg);
    let mut snapshots = Vec::new();

    let row = |w: &mut csv::Writer<File>, j: usize, state: &State, r: Option<&StepReport>, cum: f64| -> Result<()> {
        w.write_record([
            j.to_string(),
            num(state.time),
            num(state.total_entropy(&model)),
            num(r.map_or(0.0, |r| r.dissipation_increment)),
            num(cum),
            num(state.curl_residual()),
            num(r.map_or(0.0, |r| r.residual_p2)),
            r.map_or(0, |r| r.optimizer_iterations).to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(&csv_path, e))
    };

    row(&mut w, 0, &initial, None, 0.0)?;
    if due.first() == Some(&0) {
        snapshots.extend(write_state_snapshot(&snap_dir, 0, &initial)?);
    }
    let dissipation_bound = iteration_bound(&model, &initial);
    let mut cum = 0.0;
    let trajectory = run_trajectory_with(&model, initial, cfg.h, cfg.horizon, &cfg.solver, |j, state, report| {
        cum += report.dissipation_increment;
        row(&mut w, j, state, Some(report), cum)?;
        if due.binary_search(&j).is_ok() {
            snapshots.extend(write_state_snapshot(&snap_dir, j, state)?);
        }
        Ok(())
    })?;
    Ok(RunOutcome { trajectory, dissipation_bound, csv_path, snapshots })
}

/// Writes entropy-budget rows as CSV.
pub fn write_budget_csv(path: &Path, rows: &[EntropyBudget]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["j", "t", "E", "relativeEntropy", "Q", "D", "S", "identityResidual", "maxQOverD"])?;
    for b in rows {
        w.write_record([
            b.j.to_string(),
            num(b.t),
            num(b.e),
            num(b.eta_rel_integral),
            num(b.q_integral),
            num(b.d_integral),
            num(b.s_integral),
            num(b.identity_residual),
            num(b.q_ratio_max),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::InitialData;

    fn read_rows(path: &Path) -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
    }

    #[test]
    fn zero_horizon_writes_only_the_initial_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { n: 4, horizon: 0.0, ..Default::default() };
        let out = run_single(&cfg, dir.path()).unwrap();
        assert_eq!(read_rows(&out.csv_path).len(), 1);
    }

    #[test]
    fn equilibrium_has_constant_entropy_column() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            n: 4,
            horizon: 0.1,
            initial: InitialData { epsilon: 0.0, ..Default::default() },
            output: super::super::OutputConfig { snapshot_times: vec![0.0, 0.05], ..Default::default() },
            ..Default::default()
        };
        let out = run_single(&cfg, dir.path()).unwrap();
        let rows = read_rows(&out.csv_path);
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r[2] == rows[0][2]));
        assert_eq!(out.snapshots.len(), 4);
    }
}
