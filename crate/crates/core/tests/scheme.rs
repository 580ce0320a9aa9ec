use std::f64::consts::PI;

use polyelast_core::error::Error;
use polyelast_core::grid::{self, Grid, TensorField, VectorField, XiField};
use polyelast_core::harness::{fit_loglog, run_convergence, run_single, InitialData, StudyConfig};
use polyelast_core::stepper::{iteration_bound, run_trajectory, State, StepOptions};
use polyelast_core::tensor::{dphi, Matrix3, Xi19};
use polyelast_core::{EnergyModel, RunConfig};

const TAU: f64 = 2.0 * PI;

/// `max |dphi(F)∇w − D_α(Φ′_{·iα}(F) w_i)|` with `F = I + ∇u` and `∇w`
/// sampled exactly.
fn transport_residual(n: usize) -> f64 {
    let g = Grid::new(n).unwrap();
    let u = |x: [f64; 3]| -> Matrix3 {
        let c = 0.02 * TAU * (TAU * (2.0 * x[0] + x[1])).cos();
        let d = 0.03 * TAU * (TAU * (x[1] + 2.0 * x[2])).cos();
        Matrix3::IDENTITY + Matrix3::from_fn(|i, a| c * [1.0, 1.0, 0.0][i] * [2.0, 1.0, 0.0][a] + d * [0.5, 0.0, 1.0][i] * [0.0, 1.0, 2.0][a])
    };
    let w = |x: [f64; 3]| -> [f64; 3] {
        let s = (TAU * (x[0] + x[2])).sin();
        [0.1 * s, 0.2 * s, -0.1 * s]
    };
    let grad_w = |x: [f64; 3]| -> Matrix3 {
        let c = TAU * (TAU * (x[0] + x[2])).cos();
        Matrix3::from_fn(|i, a| [0.1, 0.2, -0.1][i] * c * [1.0, 0.0, 1.0][a])
    };
    let exact = XiField::from_fn(g, |x| dphi(&u(x)).apply(&grad_w(x)));
    let mut worst = 0.0_f64;
    let fluxes: Vec<XiField> = (0..3)
        .map(|alpha| {
            XiField::from_fn(g, |x| {
                let jac = dphi(&u(x));
                let wx = w(x);
                Xi19(std::array::from_fn(|a| (0..3).map(|i| jac.get(a, i, alpha) * wx[i]).sum()))
            })
        })
        .collect();
    let div = (0..3).fold(XiField::zeros(g), |acc, a| acc.add(&grid::diff(&fluxes[a], a)));
    for c in 0..g.len() {
        worst = worst.max((div[c] - exact[c]).max_abs());
    }
    worst
}

#[test]
fn transport_identity_is_second_order() {
    let pts: Vec<(f64, f64)> = [8, 16, 32].iter().map(|&n| (1.0 / n as f64, transport_residual(n))).collect();
    let (slope, _) = fit_loglog(&pts).unwrap();
    assert!((slope - 2.0).abs() <= 0.2, "slope {slope}, residuals {pts:?}");
}

#[test]
fn dissipation_stays_below_iteration_bound() {
    let model = EnergyModel::new(6.0, 1.0, 1.0).unwrap();
    let cfg = RunConfig::default();
    let initial = polyelast_core::make_initial_data(&cfg).unwrap();
    let bound = iteration_bound(&model, &initial);
    // E₀ recomputed from the run's own initial entropy.
    let c4 = model.constants().c4;
    let e0 = (2.0_f64).max(2.0 / model.gamma()) * (initial.total_entropy(&model) + c4);
    assert!((bound - e0).abs() <= 1e-12 * e0);
    let traj = run_trajectory(&model, initial, 1e-2, 0.2, &StepOptions::default()).unwrap();
    let cum = traj.cumulative_dissipation();
    assert_eq!(traj.steps(), 20);
    assert!(cum.iter().all(|&d| d <= bound), "{cum:?} vs {bound}");
}

#[test]
fn single_run_is_deterministic_and_within_bound() {
    let cfg = RunConfig { n: 4, h: 0.05, horizon: 0.2, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_single(&cfg, a.path()).unwrap();
    let rb = run_single(&cfg, b.path()).unwrap();
    let (ta, tb) = (std::fs::read(&ra.csv_path).unwrap(), std::fs::read(&rb.csv_path).unwrap());
    assert_eq!(ta, tb);
    let mut rdr = csv::Reader::from_reader(ta.as_slice());
    for rec in rdr.records() {
        let cum: f64 = rec.unwrap()[4].parse().unwrap();
        assert!(cum <= ra.dissipation_bound);
    }
}

#[test]
fn default_study_decreases_along_the_ladder() {
    let out = run_convergence(&RunConfig::default(), None).unwrap();
    let e: Vec<f64> = out.study.rungs.iter().map(|r| r.sup_e).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    assert!(out.study.rungs.iter().all(|r| r.e_initial == 0.0));
    assert!(out.study.slope.is_finite());
}

#[test]
fn reference_rung_is_excluded_from_fit() {
    let cfg = RunConfig {
        n: 4,
        horizon: 0.1,
        study: StudyConfig { ladder: vec![0.05, 0.025, 1.0 / 320.0], reference_h: 1.0 / 320.0 },
        ..Default::default()
    };
    let out = run_convergence(&cfg, None).unwrap();
    let last = out.study.rungs.last().unwrap();
    assert_eq!(last.sup_e, 0.0);
    assert!(!last.in_fit);
}

#[test]
fn equilibrium_study_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { n: 4, horizon: 0.1, initial: InitialData { epsilon: 0.0, ..Default::default() }, ..Default::default() };
    let err = run_convergence(&cfg, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::DegenerateStudy(_)), "{err}");
    assert!(dir.path().join("study.json").exists());
}

#[test]
fn coarse_reference_is_rejected() {
    let cfg = RunConfig { study: StudyConfig { ladder: vec![0.1, 0.05, 0.025], reference_h: 0.025 / 4.0 }, ..Default::default() };
    assert!(matches!(run_convergence(&cfg, None), Err(Error::ReferenceTooCoarse { .. })));
}

#[test]
fn lifted_state_has_matching_blocks() {
    let g = Grid::new(3).unwrap();
    let f = TensorField::from_fn(g, |x| Matrix3::from_fn(|i, a| (i + 2 * a) as f64 * 0.1 + x[i]));
    let s = State::lifted(VectorField::zeros(g), &f, None, 0.0);
    for c in 0..g.len() {
        let m = f[c];
        // cofactor by explicit 2x2 minors
        let minor = |i: usize, a: usize| {
            let (r, q) = ([(i + 1) % 3, (i + 2) % 3], [(a + 1) % 3, (a + 2) % 3]);
            m.0[r[0]][q[0]] * m.0[r[1]][q[1]] - m.0[r[0]][q[1]] * m.0[r[1]][q[0]]
        };
        let z = s.xi[c].z_block();
        for i in 0..3 {
            for a in 0..3 {
                assert!((z.0[i][a] - minor(i, a)).abs() < 1e-14);
            }
        }
        let det: f64 = (0..3).map(|a| m.0[0][a] * minor(0, a)).sum();
        assert!((s.xi[c].w() - det).abs() < 1e-14);
    }
}
