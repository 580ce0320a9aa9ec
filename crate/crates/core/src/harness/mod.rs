//! Run configuration, initial data and experiment drivers.

mod checks;
mod run;
mod study;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::grid::{Grid, VectorField};
use crate::stepper::{State, StepOptions};

pub use checks::{check_operators, piola_residual, OperatorCheck, OperatorReport};
pub use run::{run_single, write_budget_csv, RunOutcome, RUN_CSV_HEADER};
pub use study::{fit_loglog, run_convergence, ConvergenceStudy, Rung, StudyOutcome};

/// Env var capping the number of worker threads used by convergence studies.
pub const THREADS_ENV: &str = "POLYELAST_THREADS";

/// One Fourier mode `a sin(2π k·x + φ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub wavevector: [i32; 3],
    pub amplitude: [f64; 3],
    #[serde(default)]
    pub phase: f64,
}

impl Mode {
    fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let k = self.wavevector.map(f64::from);
        let s = (2.0 * PI * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]) + self.phase).sin();
        self.amplitude.map(|a| a * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialData {
    /// Overall amplitude `ε` applied to every mode.
    pub epsilon: f64,
    pub displacement: Vec<Mode>,
    pub velocity: Vec<Mode>,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            displacement: vec![Mode { wavevector: [1, 0, 0], amplitude: [0.0, 1.0, 0.0], phase: 0.0 }],
            velocity: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub p: f64,
    pub c_h: f64,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { p: 6.0, c_h: 1.0, gamma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Times at which `v` and `Ξ` snapshots are written (rounded up to the
    /// next knot).
    pub snapshot_times: Vec<f64>,
    /// Write per-step entropy budgets for every convergence rung.
    pub budgets: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_times: Vec::new(), budgets: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub ladder: Vec<f64>,
    pub reference_h: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { ladder: vec![1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0, 1.0 / 320.0], reference_h: 1.0 / 2560.0 }
    }
}

/// Sample sizes for the hypothesis and equivalence self-tests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub hypothesis_samples: usize,
    pub hypothesis_radius: f64,
    pub equivalence_samples: usize,
    pub equivalence_radius: f64,
    pub operator_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            hypothesis_samples: 10_000,
            hypothesis_radius: 10.0,
            equivalence_samples: 10_000,
            equivalence_radius: 5.0,
            operator_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cells per axis.
    pub n: usize,
    /// Time step of a single run.
    pub h: f64,
    /// Final time `T`.
    pub horizon: f64,
    /// Seeds every randomized self-test.
    pub seed: u64,
    pub model: ModelConfig,
    pub initial: InitialData,
    pub solver: StepOptions,
    pub study: StudyConfig,
    pub sampling: SamplingConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 8,
            h: 1.0 / 40.0,
            horizon: 0.2,
            seed: 0,
            model: ModelConfig::default(),
            initial: InitialData::default(),
            solver: StepOptions::default(),
            study: StudyConfig::default(),
            sampling: SamplingConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigInvalid(msg) => Error::ConfigInvalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("h = {} must be positive", self.h));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon = {} must be non-negative", self.horizon));
        }
        if !(self.initial.epsilon.is_finite() && self.initial.epsilon >= 0.0) {
            return bad(format!("epsilon = {} must be non-negative", self.initial.epsilon));
        }
        let modes = self.initial.displacement.iter().chain(&self.initial.velocity);
        if modes.clone().any(|m| m.amplitude.iter().chain([&m.phase]).any(|x| !x.is_finite())) {
            return bad("mode amplitudes and phases must be finite".into());
        }
        if !(self.solver.tolerance_rms.is_finite() && self.solver.tolerance_rms > 0.0) {
            return bad(format!("solver tolerance {} must be positive", self.solver.tolerance_rms));
        }
        self.model()?;
        Ok(())
    }

    pub fn model(&self) -> Result<EnergyModel> {
        EnergyModel::new(self.model.p, self.model.c_h, self.model.gamma)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n)
    }
}

/// `u = ε Σ a sin(2π k·x + φ)`, `F⁰ = I + gradient(u)`, `v⁰` from the
/// velocity modes and `Ξ⁰ = Φ(F⁰)`.
pub fn make_initial_data(cfg: &RunConfig) -> Result<State> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let eps = cfg.initial.epsilon;
    let superpose = |modes: &[Mode]| {
        VectorField::from_fn(grid, |x| {
            modes.iter().fold([0.0; 3], |acc, m| {
                let y = m.eval(x);
                [acc[0] + eps * y[0], acc[1] + eps * y[1], acc[2] + eps * y[2]]
            })
        })
    };
    let u = superpose(&cfg.initial.displacement);
    let v = superpose(&cfg.initial.velocity);
    let state = State::from_displacement(v, u, 0.0);
    if !state.xi.values().iter().all(|x| x.is_finite()) {
        return Err(Error::ConfigInvalid("initial data is not finite".into()));
    }
    Ok(state)
}

/// Thread count for parallel rungs: `POLYELAST_THREADS` if set and positive.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{cof, Matrix3};

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_fields() {
        assert!(RunConfig::from_toml("n = 1").is_err());
        assert!(RunConfig::from_toml("h = 0.0").is_err());
        assert!(RunConfig::from_toml("[model]\np = 4.0").is_err());
        assert!(RunConfig::from_toml("[initial]\nepsilon = -1.0").is_err());
        assert!(RunConfig::from_toml("unknown = 3").is_err());
    }

    #[test]
    fn zero_amplitude_is_the_identity() {
        let cfg = RunConfig { initial: InitialData { epsilon: 0.0, ..Default::default() }, ..Default::default() };
        let s = make_initial_data(&cfg).unwrap();
        for x in s.xi.values() {
            assert_eq!(x.f_block(), Matrix3::IDENTITY);
            assert_eq!(x.z_block(), Matrix3::IDENTITY);
            assert_eq!(x.w(), 1.0);
        }
        assert_eq!(s.v.max_abs(), 0.0);
    }

    #[test]
    fn single_mode_varies_along_its_axis() {
        let cfg = RunConfig {
            initial: InitialData {
                epsilon: 0.1,
                displacement: vec![Mode { wavevector: [1, 0, 0], amplitude: [1.0, 0.0, 0.0], phase: 0.3 }],
                velocity: Vec::new(),
            },
            ..Default::default()
        };
        let s = make_initial_data(&cfg).unwrap();
        let g = s.grid();
        for c in 0..g.len() {
            let k = g.coords(c);
            let other = s.xi[g.index([k[0], (k[1] + 3) % g.n(), (k[2] + 5) % g.n()])];
            assert_eq!(s.xi[c], other);
            let f = s.xi[c].f_block();
            assert_eq!(cof(&f), s.xi[c].z_block());
        }
        assert!(s.curl_residual() <= 1e-13);
    }
}
