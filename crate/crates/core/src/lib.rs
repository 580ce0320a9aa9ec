//! Variational time stepping for polyconvex elastodynamics on the periodic
//! unit 3-torus, with relative-entropy diagnostics and convergence studies.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod grid;
pub mod harness;
pub mod interpolants;
pub mod optimizer;
pub mod relative_entropy;
pub mod stepper;
pub mod tensor;

pub use energy::{check_hypotheses, EnergyModel, EnergyReport, StoredEnergy};
pub use error::{Error, Result};
pub use grid::{Field, Grid, ScalarField, TensorField, VectorField, XiField};
pub use harness::{make_initial_data, run_convergence, run_single, RunConfig};
pub use interpolants::Trajectory;
pub use relative_entropy::{efunc, eta_rel, identity_residual, EntropyBudget, PairState};
pub use stepper::{run_trajectory, step, State, StepOptions, StepReport};
pub use tensor::{cof, det, dphi, phi, Matrix3, PhiJacobian, Xi19};
