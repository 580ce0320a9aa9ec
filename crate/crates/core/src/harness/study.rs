use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_initial_data, thread_cap, RunConfig};
use crate::energy::StoredEnergy;
use crate::error::{Error, Result};
use crate::interpolants::Trajectory;
use crate::relative_entropy::{efunc, entropy_budget, EntropyBudget, PairState};
use crate::stepper::{run_trajectory, step_count};

/// Relative tolerance for "is an integer multiple of `h_ref`".
const MULTIPLE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub h: f64,
    pub steps: usize,
    /// `sup_j E(t_j)` over the rung's knots.
    pub sup_e: f64,
    /// `E(0)` against the reference.
    pub e_initial: f64,
    pub in_fit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reference_h: f64,
    pub horizon: f64,
    pub rungs: Vec<Rung>,
    /// Least-squares slope of `log sup E` against `log h`.
    pub slope: f64,
    pub intercept: f64,
}

/// A study together with the trajectories it was computed from.
#[derive(Clone, Debug)]
pub struct StudyOutcome {
    pub study: ConvergenceStudy,
    pub reference: Trajectory,
    pub runs: Vec<Trajectory>,
}

/// Least-squares line through `(ln x, ln y)`; returns `(slope, intercept)`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::DegenerateStudy(format!("{} usable points, need at least 2", points.len())));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateStudy("all usable steps are equal".into()));
    }
    let slope = sxy / sxx;
    if !slope.is_finite() {
        return Err(Error::DegenerateStudy("non-finite slope".into()));
    }
    Ok((slope, my - slope * mx))
}

fn validate_ladder(ladder: &[f64], reference_h: f64) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::ConfigInvalid(format!("ladder has {} steps, need at least 3", ladder.len())));
    }
    if !(reference_h.is_finite() && reference_h > 0.0) {
        return Err(Error::ConfigInvalid(format!("reference step {reference_h} must be positive")));
    }
    for &h in ladder {
        let ratio = h / reference_h;
        if !(h.is_finite() && h > 0.0) || ratio < 1.0 - MULTIPLE_TOL || (ratio - ratio.round()).abs() > MULTIPLE_TOL * ratio {
            return Err(Error::ConfigInvalid(format!("ladder step {h} is not a multiple of the reference step {reference_h}")));
        }
    }
    let min_h = ladder.iter().copied().filter(|&h| !is_reference(h, reference_h)).fold(f64::INFINITY, f64::min);
    if min_h.is_finite() && reference_h > min_h / 8.0 * (1.0 + MULTIPLE_TOL) {
        return Err(Error::ReferenceTooCoarse { reference_h, min_h });
    }
    Ok(())
}

fn is_reference(h: f64, reference_h: f64) -> bool {
    (h / reference_h - 1.0).abs() <= MULTIPLE_TOL
}

/// `sup_j E(Θ^{(h)}(t_j), Θ̄(t_j))` over the knots of `run`, and `E(0)`.
fn sup_error(model: &(impl StoredEnergy + ?Sized), run: &Trajectory, reference: &Trajectory) -> Result<(f64, f64)> {
    let mut sup = 0.0_f64;
    let mut e0 = 0.0;
    for (j, state) in run.states().iter().enumerate() {
        let r = reference.eval_linear(j as f64 * run.h())?;
        let e = efunc(model, PairState::new(state, &r)?);
        if j == 0 {
            e0 = e;
        }
        sup = sup.max(e);
    }
    Ok((sup, e0))
}

/// Runs the reference, then every ladder rung (in parallel), and fits the
/// convergence rate. Artifacts are written to `out_dir` when given.
pub fn run_convergence(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<StudyOutcome> {
    cfg.validate()?;
    let model = cfg.model()?;
    let ladder = &cfg.study.ladder;
    validate_ladder(ladder, cfg.study.reference_h)?;
    let initial = make_initial_data(cfg)?;

    let reference = run_trajectory(&model, initial.clone(), cfg.study.reference_h, cfg.horizon, &cfg.solver)?;

    let work = || -> Result<Vec<Trajectory>> {
        ladder
            .par_iter()
            .map(|&h| {
                if is_reference(h, cfg.study.reference_h) {
                    Ok(reference.clone())
                } else {
                    run_trajectory(&model, initial.clone(), h, cfg.horizon, &cfg.solver)
                }
            })
            .collect()
    };
    let runs = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut rungs = Vec::with_capacity(runs.len());
    for (run, &h) in runs.iter().zip(ladder) {
        let (sup_e, e_initial) = sup_error(&model, run, &reference)?;
        let in_fit = !is_reference(h, cfg.study.reference_h) && sup_e > 0.0 && sup_e.is_finite();
        rungs.push(Rung { h, steps: step_count(h, cfg.horizon), sup_e, e_initial, in_fit });
    }
    let points: Vec<(f64, f64)> = rungs.iter().filter(|r| r.in_fit).map(|r| (r.h, r.sup_e)).collect();
    let fit = fit_loglog(&points);

    let (slope, intercept) = match fit {
        Ok(f) => f,
        Err(e) => {
            if let Some(dir) = out_dir {
                let partial = ConvergenceStudy { reference_h: cfg.study.reference_h, horizon: cfg.horizon, rungs, slope: f64::NAN, intercept: f64::NAN };
                write_study(dir, &partial)?;
            }
            return Err(e);
        }
    };
    let study = ConvergenceStudy { reference_h: cfg.study.reference_h, horizon: cfg.horizon, rungs, slope, intercept };

    if let Some(dir) = out_dir {
        write_study(dir, &study)?;
        if cfg.output.budgets {
            let budgets: Vec<Vec<EntropyBudget>> =
                runs.par_iter().map(|run| entropy_budget(&model, run, &reference)).collect::<Result<_>>()?;
            for (k, rows) in budgets.iter().enumerate() {
                super::write_budget_csv(&dir.join(format!("budget_rung{k}.csv")), rows)?;
            }
        }
    }
    Ok(StudyOutcome { study, reference, runs })
}

fn write_study(dir: &Path, study: &ConvergenceStudy) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("study.json");
    let json = serde_json::to_string_pretty(study)?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

    let csv_path = dir.join("study.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["h", "steps", "supE", "initialE", "inFit"])?;
    for r in &study.rungs {
        w.write_record([
            format!("{:.16e}", r.h),
            r.steps.to_string(),
            format!("{:.16e}", r.sup_e),
            format!("{:.16e}", r.e_initial),
            r.in_fit.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h.powf(1.5))).collect();
        let (s, c) = fit_loglog(&pts).unwrap();
        assert!((s - 1.5).abs() < 1e-12);
        assert!((c - 3.0_f64.ln()).abs() < 1e-12);
        assert!(matches!(fit_loglog(&pts[..1]), Err(Error::DegenerateStudy(_))));
    }

    #[test]
    fn ladder_validation() {
        let r = 1.0 / 2560.0;
        assert!(validate_ladder(&[1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0, 1.0 / 320.0], r).is_ok());
        assert!(validate_ladder(&[1.0 / 40.0, 1.0 / 80.0, r], r).is_ok());
        assert!(matches!(validate_ladder(&[0.1, 0.05, 0.025], 0.005), Err(Error::ReferenceTooCoarse { .. })));
        assert!(validate_ladder(&[0.1, 0.05], 0.001).is_err());
        assert!(validate_ladder(&[0.1, 0.05, 0.0333], 0.001).is_err());
    }
}
