use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::study::fit_loglog;
use crate::energy::{random_xi, EnergyModel, StoredEnergy};
use crate::error::Result;
use crate::grid::{self, Grid, ScalarField, TensorField, VectorField};
use crate::stepper::{step_objective, State};
use crate::tensor::{cof, d2phi_contract, dphi, phi, Matrix3, Xi19};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorCheck {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl OperatorCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub checks: Vec<OperatorCheck>,
}

impl OperatorReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OperatorCheck::passed)
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

/// Directional derivatives are compared relative to `|∇f| |z|`, so nearly
/// orthogonal directions do not inflate the error.
fn rel(err: f64, size: f64) -> f64 {
    err / size.max(1e-8)
}

fn random_matrix(rng: &mut ChaCha8Rng, scale: f64) -> Matrix3 {
    Matrix3::from_fn(|_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// `max |D_α (cof F)_{iα}|` on an `n³` grid for `F = I + ∇u` sampled from
/// a fixed smooth periodic `u`. The exact field is divergence free, so this
/// is the truncation error of the discrete divergence on it.
pub fn piola_residual(n: usize) -> Result<f64> {
    let g = Grid::new(n)?;
    let (a, tau) = (1e-3, 2.0 * PI);
    // u = a Σ e sin(2π κ·x) over (κ, e)
    let modes: [([f64; 3], [f64; 3]); 3] =
        [([2.0, 1.0, 0.0], [1.0, 1.0, 0.0]), ([0.0, 1.0, 2.0], [0.0, 1.0, 0.5]), ([1.0, 0.0, 2.0], [0.3, 0.0, 1.0])];
    let f = TensorField::from_fn(g, |x| {
        let mut grad = Matrix3::IDENTITY;
        for (k, e) in &modes {
            let c = a * tau * (tau * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2])).cos();
            grad += Matrix3::from_fn(|i, alpha| c * e[i] * k[alpha]);
        }
        grad
    });
    Ok(grid::divergence(&f.map(cof)).max_abs())
}

/// Finite-difference and discrete-calculus self-checks.
pub fn check_operators(model: &EnergyModel, samples: usize, seed: u64) -> Result<OperatorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0_f64; 5];
    let h = FD_STEP;
    for _ in 0..samples {
        let xi = random_xi(&mut rng, 2.0);
        let z = random_xi(&mut rng, 1.0);
        // gradient of G along z
        let fd = (model.value(&(xi + z * h)) - model.value(&(xi - z * h))) / (2.0 * h);
        let grad = model.gradient(&xi);
        worst[0] = worst[0].max(rel((fd - grad.dot(&z)).abs(), grad.norm() * z.norm()));
        // Hessian action
        let fd = (model.gradient(&(xi + z * h)) - model.gradient(&(xi - z * h))) * (0.5 / h);
        let an = model.hessian_apply(&xi, &z);
        worst[1] = worst[1].max(rel((fd - an).norm(), an.norm()));
        // dphi and d2phi along a random direction
        let f = random_matrix(&mut rng, 1.5);
        let u = random_matrix(&mut rng, 1.0);
        let fd: Xi19 = (phi(&(f + u * h)) - phi(&(f - u * h))) * (0.5 / h);
        let an = dphi(&f).apply(&u);
        worst[2] = worst[2].max(rel((fd - an).norm(), an.norm()));
        let w = random_matrix(&mut rng, 1.0);
        let fd = (dphi(&(f + u * h)).apply(&w) - dphi(&(f - u * h)).apply(&w)) * (0.5 / h);
        let an = d2phi_contract(&f, &u).apply(&w);
        worst[3] = worst[3].max(rel((fd - an).norm(), an.norm()));
    }

    // Step objective along random directions on a small grid.
    let grid = Grid::new(3)?;
    let objective_samples = samples.clamp(1, 20);
    for _ in 0..objective_samples {
        let u = VectorField::from_fn(grid, |_| [0.1 * rng.random::<f64>(), 0.1 * rng.random::<f64>(), 0.1 * rng.random::<f64>()]);
        let v0 = VectorField::from_fn(grid, |_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
        let prev = State::from_displacement(v0, u, 0.0);
        let v = prev.v.map(|x| [x[0] + 0.1, x[1] - 0.05, x[2]]);
        let d = VectorField::from_fn(grid, |_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
        let dt = 0.05;
        let (jp, _) = step_objective(model, &prev, dt, &v.axpy(h, &d));
        let (jm, _) = step_objective(model, &prev, dt, &v.axpy(-h, &d));
        let (_, g) = step_objective(model, &prev, dt, &v);
        let fd = (jp - jm) / (2.0 * h);
        let an = grid::inner_l2(&g, &d);
        let bound = (grid::inner_l2(&g, &g) * grid::inner_l2(&d, &d)).sqrt();
        worst[4] = worst[4].max(rel((fd - an).abs(), bound));
    }

    // Summation by parts on a random pair.
    let g8 = Grid::new(8)?;
    let a = ScalarField::from_fn(g8, |_| rng.random::<f64>() - 0.5);
    let b = ScalarField::from_fn(g8, |_| rng.random::<f64>() - 0.5);
    let mut sbp = 0.0_f64;
    for axis in 0..3 {
        let (da, db) = (grid::diff(&a, axis), grid::diff(&b, axis));
        let lhs = grid::inner_l2(&a, &db) + grid::inner_l2(&da, &b);
        let scale = grid::integrate(&a.zip_map(&db, |x, y| (x * y).abs()));
        sbp = sbp.max(lhs.abs() / scale);
    }

    let residuals: Vec<(f64, f64)> = [8, 16, 32].iter().map(|&n| Ok((1.0 / n as f64, piola_residual(n)?))).collect::<Result<_>>()?;
    let (slope, _) = fit_loglog(&residuals)?;

    let names = ["gradient of G", "Hessian action of G", "dphi", "d2phi_contract", "step objective gradient"];
    let mut checks: Vec<OperatorCheck> =
        names.iter().zip(worst).map(|(n, w)| OperatorCheck { name: (*n).into(), worst: w, tolerance: FD_TOL }).collect();
    checks.push(OperatorCheck { name: "summation by parts".into(), worst: sbp, tolerance: 1e-13 });
    checks.push(OperatorCheck { name: "Piola residual slope - 2".into(), worst: (slope - 2.0).abs(), tolerance: 0.2 });
    Ok(OperatorReport { checks })
}
