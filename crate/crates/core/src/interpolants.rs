//! Time reconstructions of a discrete trajectory.
//!
//! With `I_j = [(j−1)h, jh)`:
//! * the linear interpolant is `Θ^{j−1} + a(t)(Θ^j − Θ^{j−1})`, `a(t) = (t − (j−1)h)/h`;
//! * the constant interpolant is `θ = Θ^j` on `I_j`;
//! * the shifted gradient is `f̃ = F^{j−1}` on `I_j`.
//!
//! `t = Jh` is evaluated on the closure of the last interval.

use crate::error::{Error, Result};
use crate::grid::TensorField;
use crate::stepper::{State, StepReport};

/// Relative tolerance (in units of `h`) for snapping a time onto a knot.
pub const KNOT_SNAP: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct Trajectory {
    h: f64,
    states: Vec<State>,
    reports: Vec<StepReport>,
}

/// Where a time falls: `interval` is `j` with `t ∈ I_j` (or `J` at the end
/// point) and `a` the local coordinate in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub interval: usize,
    pub a: f64,
}

impl Trajectory {
    pub fn new(h: f64, initial: State) -> Self {
        Self { h, states: vec![initial], reports: Vec::new() }
    }

    /// Rebuilds a trajectory from stored parts. `reports` must be one
    /// shorter than `states`.
    pub fn from_parts(h: f64, states: Vec<State>, reports: Vec<StepReport>) -> Result<Self> {
        if states.is_empty() || reports.len() + 1 != states.len() {
            return Err(Error::ConfigInvalid(format!(
                "trajectory needs one report per step ({} states, {} reports)",
                states.len(),
                reports.len()
            )));
        }
        let grid = states[0].grid();
        if states.iter().any(|s| s.grid() != grid) {
            return Err(Error::ConfigInvalid("trajectory states live on different grids".into()));
        }
        Ok(Self { h, states, reports })
    }

    pub fn push(&mut self, state: State, report: StepReport) {
        assert_eq!(state.grid(), self.states[0].grid(), "trajectory states live on different grids");
        self.states.push(state);
        self.reports.push(report);
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of steps `J`.
    pub fn steps(&self) -> usize {
        self.reports.len()
    }

    /// Final time `J·h`.
    pub fn end_time(&self) -> f64 {
        self.steps() as f64 * self.h
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn reports(&self) -> &[StepReport] {
        &self.reports
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("a trajectory holds its initial state")
    }

    /// `Σ_{i≤j} ‖Θ^i − Θ^{i−1}‖²` for each `j = 0..=J`.
    pub fn cumulative_dissipation(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.reports.iter().map(|r| {
                acc += r.dissipation_increment;
                acc
            }))
            .collect()
    }

    /// Knot index `k` if `t` lies within [`KNOT_SNAP`]`·h` of `k·h`.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let k = (t / self.h).round();
        (k >= 0.0 && (t - k * self.h).abs() <= KNOT_SNAP * self.h).then_some(k as usize)
    }

    /// Locates `t ∈ [0, Jh]`.
    pub fn locate(&self, t: f64) -> Result<Location> {
        let end = self.end_time();
        let out_of_range = Error::OutOfRange { t, end };
        if !t.is_finite() {
            return Err(out_of_range);
        }
        let j_total = self.steps();
        if let Some(k) = self.knot_index(t) {
            return match k {
                _ if k > j_total => Err(out_of_range),
                _ if j_total == 0 => Ok(Location { interval: 0, a: 0.0 }),
                _ if k == j_total => Ok(Location { interval: j_total, a: 1.0 }),
                _ => Ok(Location { interval: k + 1, a: 0.0 }),
            };
        }
        if t < 0.0 || t > end {
            return Err(out_of_range);
        }
        let j = ((t / self.h).floor() as usize + 1).clamp(1, j_total);
        let a = ((t - (j - 1) as f64 * self.h) / self.h).clamp(0.0, 1.0);
        Ok(Location { interval: j, a })
    }

    /// Linear interpolant at `t`. Knot times return the stored iterate.
    pub fn eval_linear(&self, t: f64) -> Result<State> {
        let Location { interval: j, a } = self.locate(t)?;
        if j == 0 {
            return Ok(self.states[0].clone());
        }
        if a == 0.0 {
            return Ok(self.states[j - 1].clone());
        }
        if a == 1.0 {
            return Ok(self.states[j].clone());
        }
        let mut s = self.states[j - 1].lerp(&self.states[j], a);
        s.time = t;
        Ok(s)
    }

    /// Constant interpolant `θ = Θ^j` for `t ∈ I_j`.
    pub fn eval_constant(&self, t: f64) -> Result<State> {
        let j = self.constant_interval(t)?;
        Ok(self.states[j].clone())
    }

    /// Shifted constant interpolant `f̃ = F^{j−1}` for `t ∈ I_j`.
    pub fn eval_shifted_f(&self, t: f64) -> Result<TensorField> {
        let j = self.constant_interval(t)?;
        Ok(self.states[j - 1].deformation_gradient())
    }

    /// The `j` with `t ∈ I_j`; needs at least one step.
    pub fn constant_interval(&self, t: f64) -> Result<usize> {
        match self.locate(t)? {
            Location { interval: 0, .. } => Err(Error::OutOfRange { t, end: self.end_time() }),
            Location { interval, .. } => Ok(interval),
        }
    }
}
