//! One step of the variational scheme and whole trajectories.
//!
//! Given `(v^{j−1}, Ξ^{j−1})` and a step `h`, the new extended state is tied
//! to the velocity by the affine transport constraint
//!
//! ```text
//! Ξ_A = Ξ^{j−1}_A + h D_α( Φ^A_{,iα}(F^{j−1}) v_i )
//! ```
//!
//! so the step reduces to the unconstrained convex problem
//! `min_v ∫ ½|v − v^{j−1}|² + G(Ξ(v)) dx`. Its gradient is assembled with the
//! discrete adjoint `−Φ^A_{,iα} D_α`, which is exact because the central
//! difference is skew-adjoint on the periodic grid. The fluxes always use
//! `F^{j−1}`, never the unknown `F^j`.

use serde::{Deserialize, Serialize};

use crate::energy::StoredEnergy;
use crate::error::{Error, Result};
use crate::grid::{self, curl_residual, Field, Grid, TensorField, VectorField, XiField};
use crate::interpolants::Trajectory;
use crate::optimizer::{self, ConvexObjective, NewtonOptions};
use crate::tensor::{dphi, phi, Matrix3, PhiJacobian, Xi19, XI_LEN};

/// An iterate `Θ^j = (v^j, Ξ^j)` with an optional periodic displacement
/// `u = y − id` kept alongside when `F` is a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub v: VectorField,
    pub xi: XiField,
    pub displacement: Option<VectorField>,
    pub time: f64,
}

impl State {
    /// Builds a state with `Ξ = Φ(F)` pointwise.
    pub fn lifted(v: VectorField, f: &TensorField, displacement: Option<VectorField>, time: f64) -> Self {
        assert_eq!(v.grid(), f.grid(), "fields live on different grids");
        Self { xi: f.map(phi), v, displacement, time }
    }

    /// A state whose deformation gradient is `I + gradient(u)`.
    pub fn from_displacement(v: VectorField, displacement: VectorField, time: f64) -> Self {
        let f = grid::gradient(&displacement).map(|g| Matrix3::IDENTITY + *g);
        Self::lifted(v, &f, Some(displacement), time)
    }

    pub fn grid(&self) -> Grid {
        self.v.grid()
    }

    /// The `F` block of `Ξ`.
    pub fn deformation_gradient(&self) -> TensorField {
        self.xi.map(|x| x.f_block())
    }

    /// `∫ η(v, Ξ) dx`.
    pub fn total_entropy(&self, model: &(impl StoredEnergy + ?Sized)) -> f64 {
        grid::integrate(&self.v.zip_map(&self.xi, |v, x| model.entropy(v, x)))
    }

    /// Largest discrete curl `|D_β F_{iα} − D_α F_{iβ}|` of the `F` block.
    pub fn curl_residual(&self) -> f64 {
        curl_residual(&self.deformation_gradient())
    }

    /// `self + s·(other − self)` on every field, including time.
    pub fn lerp(&self, other: &Self, s: f64) -> Self {
        let displacement = match (&self.displacement, &other.displacement) {
            (Some(a), Some(b)) => Some(a.axpy(s, &b.sub(a))),
            _ => None,
        };
        Self {
            v: self.v.axpy(s, &other.v.sub(&self.v)),
            xi: self.xi.axpy(s, &other.xi.sub(&self.xi)),
            displacement,
            time: self.time + s * (other.time - self.time),
        }
    }

    /// `‖Θ − other‖²_{L²}` over velocity and extended state.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        let dv = self.v.sub(&other.v);
        let dx = self.xi.sub(&other.xi);
        grid::inner_l2(&dv, &dv) + grid::inner_l2(&dx, &dx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepOptions {
    /// Target for the root-mean-square of the objective gradient; the
    /// absolute Euclidean target is this times `sqrt(3N³)`.
    pub tolerance_rms: f64,
    pub max_newton_iterations: usize,
    pub max_cg_iterations: usize,
    pub fallback_iterations: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { tolerance_rms: 1e-10, max_newton_iterations: 50, max_cg_iterations: 500, fallback_iterations: 20_000 }
    }
}

impl StepOptions {
    /// Absolute Euclidean gradient-norm tolerance on `grid`.
    pub fn tolerance(&self, grid: Grid) -> f64 {
        self.tolerance_rms * ((3 * grid.len()) as f64).sqrt()
    }

    fn newton(&self, grid: Grid) -> NewtonOptions {
        NewtonOptions {
            tolerance: self.tolerance(grid),
            max_iterations: self.max_newton_iterations,
            max_cg_iterations: self.max_cg_iterations,
            fallback_iterations: self.fallback_iterations,
            ..NewtonOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub optimizer_iterations: usize,
    pub cg_iterations: usize,
    pub used_fallback: bool,
    /// Euclidean norm of the final objective gradient.
    pub gradient_norm: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `‖Θ^j − Θ^{j−1}‖²_{L²}`.
    pub dissipation_increment: f64,
    /// Euclidean norm of `(v^j − v^{j−1})/h − Φ^A_{,iα}(F^{j−1}) D_α G_{,A}(Ξ^j)`,
    /// recomputed from the accepted iterate.
    pub residual_p2: f64,
    /// Same residual with the flux in divergence form,
    /// `D_α(G_{,A}(Ξ^j) Φ^A_{,iα}(F^{j−1}))`. Differs from `residual_p2` by the
    /// discrete null-Lagrangian defect, which is `O(dx²)`.
    pub residual_divergence_form: f64,
    /// Largest `|Ξ^j − Ξ^{j−1} − h D_α(Φ^A_{,iα}(F^{j−1}) v^j_i)|`.
    pub residual_xi_update: f64,
}

/// Transport flux `P_{Aα} = Φ^A_{,iα} v_i` per cell.
type Flux = [[f64; 3]; XI_LEN];

/// The per-step problem: previous iterate, frozen Jacobians `Φ′(F^{j−1})`
/// and the step size.
pub struct StepProblem<'a, E: ?Sized> {
    model: &'a E,
    grid: Grid,
    v_prev: &'a VectorField,
    xi_prev: &'a XiField,
    jac: Vec<PhiJacobian>,
    h: f64,
}

impl<'a, E: StoredEnergy + ?Sized> StepProblem<'a, E> {
    pub fn new(model: &'a E, v_prev: &'a VectorField, xi_prev: &'a XiField, f_prev: &TensorField, h: f64) -> Self {
        let grid = v_prev.grid();
        assert_eq!(grid, xi_prev.grid(), "fields live on different grids");
        assert_eq!(grid, f_prev.grid(), "fields live on different grids");
        Self { model, grid, v_prev, xi_prev, jac: f_prev.values().iter().map(dphi).collect(), h }
    }

    /// The problem of advancing `prev` by `h`.
    pub fn from_state(model: &'a E, prev: &'a State, h: f64) -> Self {
        Self::new(model, &prev.v, &prev.xi, &prev.deformation_gradient(), h)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// `(B v)_A = Σ_α D_α(Φ^A_{,iα} v_i)` per cell.
    fn transport(&self, v: &[[f64; 3]]) -> Vec<Xi19> {
        let fluxes: Vec<Flux> = self.jac.iter().zip(v).map(|(m, v)| m.contract_velocity(v)).collect();
        let inv = 0.5 / self.grid.dx();
        (0..self.grid.len())
            .map(|c| {
                let mut out = Xi19::ZERO;
                for alpha in 0..3 {
                    let (m, p) = self.grid.neighbours(c, alpha);
                    for a in 0..XI_LEN {
                        out.0[a] += (fluxes[p][a][alpha] - fluxes[m][a][alpha]) * inv;
                    }
                }
                out
            })
            .collect()
    }

    /// Adjoint of [`transport`](Self::transport) under the grid pairing:
    /// `(Bᵀ g)_i = −Σ_{A,α} Φ^A_{,iα} D_α g_A`.
    fn transport_adjoint(&self, g: &[Xi19]) -> Vec<[f64; 3]> {
        let inv = 0.5 / self.grid.dx();
        (0..self.grid.len())
            .map(|c| {
                let mut dg: Flux = [[0.0; 3]; XI_LEN];
                for alpha in 0..3 {
                    let (m, p) = self.grid.neighbours(c, alpha);
                    for a in 0..XI_LEN {
                        dg[a][alpha] = -(g[p].0[a] - g[m].0[a]) * inv;
                    }
                }
                self.jac[c].contract_flux_transpose(&dg)
            })
            .collect()
    }

    /// `Ξ(v) = Ξ^{j−1} + h B v`.
    pub fn constrained_xi(&self, v: &VectorField) -> XiField {
        let bv = self.transport(v.values());
        let data = self.xi_prev.values().iter().zip(bv).map(|(x, b)| *x + b * self.h).collect();
        Field::from_vec(self.grid, data).expect("same grid")
    }

    fn pointwise_value_and_gradient(&self, v: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>, Vec<Xi19>) {
        let bv = self.transport(v);
        let xi: Vec<Xi19> = self.xi_prev.values().iter().zip(bv).map(|(x, b)| *x + b * self.h).collect();
        let mut terms = Vec::with_capacity(v.len());
        let mut grads = Vec::with_capacity(v.len());
        for ((vc, vp), x) in v.iter().zip(self.v_prev.values()).zip(&xi) {
            let d = [vc[0] - vp[0], vc[1] - vp[1], vc[2] - vp[2]];
            terms.push(0.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + self.model.value(x));
            grads.push(self.model.gradient(x));
        }
        let adj = self.transport_adjoint(&grads);
        let gradient = v
            .iter()
            .zip(self.v_prev.values())
            .zip(adj)
            .map(|((vc, vp), a)| [vc[0] - vp[0] + self.h * a[0], vc[1] - vp[1] + self.h * a[1], vc[2] - vp[2] + self.h * a[2]])
            .collect();
        (grid::pairwise_sum(&terms), gradient, xi)
    }

    /// Objective `J(v) = ∫ ½|v − v^{j−1}|² + G(Ξ(v)) dx` and its `L²` gradient
    /// (the field `g` with `dJ[δv] = ∫ g·δv dx`).
    pub fn objective(&self, v: &VectorField) -> (f64, VectorField) {
        let (sum, grad, _) = self.pointwise_value_and_gradient(v.values());
        (sum * self.grid.cell_volume(), Field::from_vec(self.grid, grad).expect("same grid"))
    }

    /// `L²` Hessian action `δv + h² Bᵀ ∇²G(Ξ(v)) B δv`.
    pub fn hessian_apply(&self, v: &VectorField, dv: &VectorField) -> VectorField {
        let xi = self.constrained_xi(v);
        let out = self.hessian_apply_at(xi.values(), dv.values());
        Field::from_vec(self.grid, out).expect("same grid")
    }

    fn hessian_apply_at(&self, xi: &[Xi19], dv: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let bdv = self.transport(dv);
        let w: Vec<Xi19> = xi.iter().zip(&bdv).map(|(x, d)| self.model.hessian_apply(x, d)).collect();
        let adj = self.transport_adjoint(&w);
        let h2 = self.h * self.h;
        dv.iter().zip(adj).map(|(d, a)| [d[0] + h2 * a[0], d[1] + h2 * a[1], d[2] + h2 * a[2]]).collect()
    }
}

fn flatten(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflatten(x: &[f64]) -> Vec<[f64; 3]> {
    x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl<E: StoredEnergy + ?Sized> ConvexObjective for StepProblem<'_, E> {
    type Linearization = Vec<Xi19>;

    // Works with J/dV so that the Euclidean gradient is the pointwise one.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (sum, grad, _) = self.pointwise_value_and_gradient(&unflatten(x));
        (sum, flatten(&grad))
    }

    fn linearize(&self, x: &[f64]) -> Vec<Xi19> {
        let v = Field::from_vec(self.grid, unflatten(x)).expect("same grid");
        self.constrained_xi(&v).into_values()
    }

    fn hessian_apply(&self, xi: &Vec<Xi19>, d: &[f64]) -> Vec<f64> {
        flatten(&self.hessian_apply_at(xi, &unflatten(d)))
    }
}

/// The unique element of the affine constraint set determined by `v`:
/// `Ξ_A = Ξ^{prev}_A + h D_α(Φ^A_{,iα}(F^{prev}) v_i)`.
pub fn constrained_xi(xi_prev: &XiField, f_prev: &TensorField, v: &VectorField, h: f64) -> XiField {
    let grid = v.grid();
    assert_eq!(grid, xi_prev.grid(), "fields live on different grids");
    assert_eq!(grid, f_prev.grid(), "fields live on different grids");
    // The energy plays no role in the constraint.
    struct NoEnergy;
    impl StoredEnergy for NoEnergy {
        fn value(&self, _: &Xi19) -> f64 {
            0.0
        }
        fn gradient(&self, _: &Xi19) -> Xi19 {
            Xi19::ZERO
        }
        fn hessian_apply(&self, _: &Xi19, _: &Xi19) -> Xi19 {
            Xi19::ZERO
        }
        fn growth_exponent(&self) -> f64 {
            6.0
        }
        fn convexity_modulus(&self) -> f64 {
            0.0
        }
    }
    StepProblem::new(&NoEnergy, v, xi_prev, f_prev, h).constrained_xi(v)
}

/// Value and `L²` gradient of the step objective at `v`.
pub fn step_objective<E: StoredEnergy + ?Sized>(model: &E, prev: &State, h: f64, v: &VectorField) -> (f64, VectorField) {
    StepProblem::from_state(model, prev, h).objective(v)
}

/// Euclidean norms of the two forms of the discrete momentum residual and
/// the max-norm of the `Ξ` update residual, recomputed from the fields.
fn scheme_residuals(model: &(impl StoredEnergy + ?Sized), prev: &State, next: &State, h: f64) -> (f64, f64, f64) {
    let f_prev = prev.deformation_gradient();
    let jac: Vec<PhiJacobian> = f_prev.values().iter().map(dphi).collect();
    let g = next.xi.map(|x| model.gradient(x));
    let grid = prev.grid();
    let accel = next.v.sub(&prev.v).scale(1.0 / h);

    let dg = [grid::diff(&g, 0), grid::diff(&g, 1), grid::diff(&g, 2)];
    let mut adjoint_sq = 0.0;
    let stress = Field::from_vec(grid, g.values().iter().zip(&jac).map(|(g, m)| m.contract_stress(g)).collect())
        .expect("same grid");
    let div = grid::divergence(&stress);
    let mut div_sq = 0.0;
    for c in 0..grid.len() {
        let mut q = [[0.0; 3]; XI_LEN];
        for (alpha, d) in dg.iter().enumerate() {
            for a in 0..XI_LEN {
                q[a][alpha] = d[c].0[a];
            }
        }
        let force = jac[c].contract_flux_transpose(&q);
        for i in 0..3 {
            adjoint_sq += (accel[c][i] - force[i]).powi(2);
            div_sq += (accel[c][i] - div[c][i]).powi(2);
        }
    }

    let fluxes: Vec<Flux> = jac.iter().zip(next.v.values()).map(|(m, v)| m.contract_velocity(v)).collect();
    let mut increment = vec![Xi19::ZERO; grid.len()];
    for alpha in 0..3 {
        for a in 0..XI_LEN {
            let comp = Field::from_vec(grid, fluxes.iter().map(|f| f[a][alpha]).collect()).expect("same grid");
            let d = grid::diff(&comp, alpha);
            for (inc, x) in increment.iter_mut().zip(d.values()) {
                inc.0[a] += x;
            }
        }
    }
    let mut xi_res = 0.0_f64;
    for c in 0..grid.len() {
        let r = next.xi[c] - prev.xi[c] - increment[c] * h;
        xi_res = xi_res.max(r.max_abs());
    }
    (adjoint_sq.sqrt(), div_sq.sqrt(), xi_res)
}

/// Advances `prev` by one step of size `h`.
pub fn step<E: StoredEnergy + ?Sized>(model: &E, prev: &State, h: f64, opts: &StepOptions) -> Result<(State, StepReport)> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::ConfigInvalid(format!("time step h = {h} must be positive")));
    }
    let grid = prev.grid();
    let problem = StepProblem::from_state(model, prev, h);
    let minimum = optimizer::minimize(&problem, flatten(prev.v.values()), &opts.newton(grid))?;
    if !minimum.value.is_finite() || minimum.x.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEnergy);
    }

    let v = Field::from_vec(grid, unflatten(&minimum.x)).expect("same grid");
    let xi = problem.constrained_xi(&v);
    let displacement = prev.displacement.as_ref().map(|u| u.axpy(h, &v));
    let next = State { v, xi, displacement, time: prev.time + h };

    let energy_before = prev.total_entropy(model);
    let energy_after = next.total_entropy(model);
    if !energy_after.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    let (residual_p2, residual_divergence_form, residual_xi_update) = scheme_residuals(model, prev, &next, h);
    let report = StepReport {
        optimizer_iterations: minimum.iterations,
        cg_iterations: minimum.cg_iterations,
        used_fallback: minimum.used_fallback,
        gradient_norm: minimum.gradient_norm,
        energy_before,
        energy_after,
        dissipation_increment: next.distance_sq(prev),
        residual_p2,
        residual_divergence_form,
        residual_xi_update,
    };
    Ok((next, report))
}

/// Number of steps needed to reach `horizon` with step `h`, i.e. `⌈T/h⌉`
/// with knots that land on `T` up to rounding counted exactly.
pub fn step_count(h: f64, horizon: f64) -> usize {
    let ratio = horizon / h;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Runs `⌈T/h⌉` steps from `initial`.
pub fn run_trajectory<E: StoredEnergy + ?Sized>(
    model: &E,
    initial: State,
    h: f64,
    horizon: f64,
    opts: &StepOptions,
) -> Result<Trajectory> {
    run_trajectory_with(model, initial, h, horizon, opts, |_, _, _| Ok(()))
}

/// Like [`run_trajectory`], calling `observe(j, state, report)` after each
/// accepted step.
pub fn run_trajectory_with<E: StoredEnergy + ?Sized>(
    model: &E,
    initial: State,
    h: f64,
    horizon: f64,
    opts: &StepOptions,
    mut observe: impl FnMut(usize, &State, &StepReport) -> Result<()>,
) -> Result<Trajectory> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::ConfigInvalid(format!("time step h = {h} must be positive")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::ConfigInvalid(format!("horizon T = {horizon} must be non-negative")));
    }
    let steps = step_count(h, horizon);
    let mut traj = Trajectory::new(h, initial);
    for j in 1..=steps {
        let (next, report) = step(model, traj.last(), h, opts).map_err(|e| Error::StepFailed { index: j, source: Box::new(e) })?;
        let next = State { time: j as f64 * h, ..next };
        observe(j, &next, &report)?;
        traj.push(next, report);
    }
    Ok(traj)
}

/// Bound on `sup_j(‖v^j‖² + ∫G(Ξ^j)) + Σ_j ‖δΘ^j‖²` from the initial data:
/// `max(2, 2/γ)·(∫η(Θ⁰) + c₄)` where `γ` is the convexity modulus of `G`.
pub fn iteration_bound<E: StoredEnergy + ?Sized>(model: &E, initial: &State) -> f64 {
    let factor = 2.0_f64.max(2.0 / model.convexity_modulus());
    factor * (initial.total_entropy(model) + model.lower_bound_offset())
}
