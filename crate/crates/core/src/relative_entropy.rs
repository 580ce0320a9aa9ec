//! Relative entropy between a discrete trajectory and a reference solution.
//!
//! Terms contracting `∂_α V̄_i` with `Φ^A_{,iα}(X)` for a gradient field `X`
//! are evaluated in divergence form,
//!
//! ```text
//! K(X)_A = D_α( Φ^A_{,iα}(X) V̄_i ),
//! ```
//!
//! which equals `Φ^A_{,iα}(X) ∂_α V̄_i` for smooth gradients (the columns of
//! `Φ′` are divergence free) and makes the discrete identity close under
//! summation by parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{random_unit, random_xi, StoredEnergy};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid, ScalarField, TensorField, VectorField, XiField};
use crate::interpolants::Trajectory;
use crate::stepper::{constrained_xi, State};
use crate::tensor::{dphi, Matrix3, PhiJacobian, Xi19, XI_LEN};

/// A candidate state and a reference state on one grid at one time.
#[derive(Clone, Copy, Debug)]
pub struct PairState<'a> {
    pub candidate: &'a State,
    pub reference: &'a State,
}

impl<'a> PairState<'a> {
    pub fn new(candidate: &'a State, reference: &'a State) -> Result<Self> {
        if candidate.grid() != reference.grid() {
            return Err(Error::ConfigInvalid(format!(
                "candidate on N = {} but reference on N = {}",
                candidate.grid().n(),
                reference.grid().n()
            )));
        }
        Ok(Self { candidate, reference })
    }

    pub fn grid(&self) -> Grid {
        self.candidate.grid()
    }
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Pointwise `η^r = η(Θ) − η(Θ̄) − ∇η(Θ̄)·(Θ − Θ̄)`.
pub fn eta_rel_point(model: &(impl StoredEnergy + ?Sized), v: &[f64; 3], xi: &Xi19, v_bar: &[f64; 3], xi_bar: &Xi19) -> f64 {
    let dv = sub3(v, v_bar);
    0.5 * dot3(&dv, &dv) + model.bregman(xi, xi_bar)
}

pub fn eta_rel(model: &(impl StoredEnergy + ?Sized), pair: PairState<'_>) -> ScalarField {
    let (c, r) = (pair.candidate, pair.reference);
    let data = (0..pair.grid().len()).map(|k| eta_rel_point(model, &c.v[k], &c.xi[k], &r.v[k], &r.xi[k])).collect();
    Field::from_vec(pair.grid(), data).expect("same grid")
}

/// Pointwise `d = (1 + |F₁|^{p−2} + |F₂|^{p−2})|F₁ − F₂|² + |Θ₁ − Θ₂|²`.
pub fn dist_point(p: f64, v1: &[f64; 3], xi1: &Xi19, v2: &[f64; 3], xi2: &Xi19) -> f64 {
    let (f1, f2) = (xi1.f_block(), xi2.f_block());
    let weight = 1.0 + f1.norm().powf(p - 2.0) + f2.norm().powf(p - 2.0);
    let dv = sub3(v1, v2);
    weight * (f1 - f2).norm_sq() + dot3(&dv, &dv) + (*xi1 - *xi2).norm_sq()
}

pub fn dist(model: &(impl StoredEnergy + ?Sized), pair: PairState<'_>) -> ScalarField {
    let p = model.growth_exponent();
    let (c, r) = (pair.candidate, pair.reference);
    let data = (0..pair.grid().len()).map(|k| dist_point(p, &c.v[k], &c.xi[k], &r.v[k], &r.xi[k])).collect();
    Field::from_vec(pair.grid(), data).expect("same grid")
}

/// `E = ∫ d(Θ, Θ̄) dx`.
pub fn efunc(model: &(impl StoredEnergy + ?Sized), pair: PairState<'_>) -> f64 {
    grid::integrate(&dist(model, pair))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConstants {
    /// Smallest sampled `η^r/d`.
    pub mu: f64,
    /// Largest sampled `η^r/d`.
    pub mu_prime: f64,
    /// Pairs with `d > 0` that entered the extremes.
    pub samples_used: usize,
}

/// `η^r/d` for `count` random pairs with `|Θ| ≤ radius`, skipping pairs at
/// zero distance. Every third pair is a small perturbation of its base
/// point, probing the local (Hessian) regime.
pub fn sampled_ratios(model: &(impl StoredEnergy + ?Sized), count: usize, radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = model.growth_exponent();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let xi_bar = random_xi(&mut rng, radius);
        let v_bar = random_vec(&mut rng, radius);
        let (v, xi) = if k % 3 == 2 {
            let s = 1e-3 * radius;
            let dv = random_vec(&mut rng, s);
            ([v_bar[0] + dv[0], v_bar[1] + dv[1], v_bar[2] + dv[2]], xi_bar + random_xi(&mut rng, s))
        } else {
            (random_vec(&mut rng, radius), random_xi(&mut rng, radius))
        };
        let d = dist_point(p, &v, &xi, &v_bar, &xi_bar);
        if d > 0.0 {
            out.push(eta_rel_point(model, &v, &xi, &v_bar, &xi_bar) / d);
        }
    }
    out
}

fn random_vec(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    use rand::Rng;
    let r = radius * rng.random::<f64>();
    random_unit::<3>(rng).map(|x| x * r)
}

/// Empirical `μ, μ′` with `μ d ≤ η^r ≤ μ′ d` on the sampled pairs.
pub fn equivalence_constants(
    model: &(impl StoredEnergy + ?Sized),
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<EquivalenceConstants> {
    if sample_count == 0 {
        return Err(Error::ConfigInvalid("sample count must be at least 1".into()));
    }
    let ratios = sampled_ratios(model, sample_count, radius, seed);
    if ratios.is_empty() {
        return Err(Error::DegenerateSample);
    }
    let mu = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_prime = ratios.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceConstants { mu, mu_prime, samples_used: ratios.len() })
}

/// Pointwise `q^r_α = (v_i − V̄_i)(G_{,A}(ξ) − G_{,A}(Ξ̄)) Φ^A_{,iα}(f̃)`.
pub fn flux_qr_point(
    model: &(impl StoredEnergy + ?Sized),
    v: &[f64; 3],
    xi: &Xi19,
    v_bar: &[f64; 3],
    xi_bar: &Xi19,
    f_tilde: &Matrix3,
) -> [f64; 3] {
    let stress = dphi(f_tilde).contract_stress(&(model.gradient(xi) - model.gradient(xi_bar)));
    let dv = sub3(v, v_bar);
    std::array::from_fn(|alpha| (0..3).map(|i| dv[i] * stress[(i, alpha)]).sum())
}

/// Relative flux with `θ = (v, ξ)` the constant interpolant.
pub fn flux_qr(model: &(impl StoredEnergy + ?Sized), theta: &State, reference: &State, f_tilde: &TensorField) -> VectorField {
    let data = (0..theta.grid().len())
        .map(|k| flux_qr_point(model, &theta.v[k], &theta.xi[k], &reference.v[k], &reference.xi[k], &f_tilde[k]))
        .collect();
    Field::from_vec(theta.grid(), data).expect("same grid")
}

/// `Σ_α dg[α]_A P_{Aα}` for a transport flux `P = Φ′·w`.
fn stress_pairing(dg: &[Xi19; 3], jac: &PhiJacobian, w: &[f64; 3]) -> f64 {
    let p = jac.contract_velocity(w);
    (0..XI_LEN).map(|a| (0..3).map(|alpha| dg[alpha].0[a] * p[a][alpha]).sum::<f64>()).sum()
}

/// Per-cell reference derivative data: `dg[α] = D_α G_{,A}(Ξ̄)` and the
/// divergence-form contractions `K(X)` for `X = F̄, F, f̃`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceJets {
    pub dg: [Xi19; 3],
    pub k_ref: Xi19,
    pub k_linear: Xi19,
    pub k_shifted: Xi19,
}

/// Pointwise `Q` for candidate `(V, Ξ)` and reference `(V̄, Ξ̄)`.
pub fn term_q_point(
    model: &(impl StoredEnergy + ?Sized),
    big_v: &[f64; 3],
    big_xi: &Xi19,
    v_bar: &[f64; 3],
    xi_bar: &Xi19,
    jets: &ReferenceJets,
) -> f64 {
    let jac_f = dphi(&big_xi.f_block());
    let jac_bar = dphi(&xi_bar.f_block());
    let g = model.gradient(big_xi);
    let g_bar = model.gradient(xi_bar);
    let dxi = *big_xi - *xi_bar;
    let taylor = g - g_bar - model.hessian_apply(xi_bar, &dxi);

    stress_pairing(&jets.dg, &(jac_f - jac_bar), &sub3(big_v, v_bar))
        + (g - g_bar).dot(&(jets.k_linear - jets.k_ref))
        + taylor.dot(&jets.k_ref)
}

/// Pointwise `D^j = (∇η(θ) − ∇η(Θ))·δΘ^j`.
pub fn term_d_point(
    model: &(impl StoredEnergy + ?Sized),
    v: &[f64; 3],
    xi: &Xi19,
    big_v: &[f64; 3],
    big_xi: &Xi19,
    delta_v: &[f64; 3],
    delta_xi: &Xi19,
) -> f64 {
    dot3(&sub3(v, big_v), delta_v) + (model.gradient(xi) - model.gradient(big_xi)).dot(delta_xi)
}

/// Pointwise `S` for constant interpolant `(v, ξ)` with shifted gradient
/// `f̃`, linear interpolant `(V, Ξ)` and reference `(V̄, Ξ̄)`.
#[allow(clippy::too_many_arguments)]
pub fn term_s_point(
    model: &(impl StoredEnergy + ?Sized),
    v: &[f64; 3],
    xi: &Xi19,
    big_v: &[f64; 3],
    big_xi: &Xi19,
    v_bar: &[f64; 3],
    xi_bar: &Xi19,
    f_tilde: &Matrix3,
    jets: &ReferenceJets,
) -> f64 {
    let jac_tilde = dphi(f_tilde);
    let jac_f = dphi(&big_xi.f_block());
    let jac_bar = dphi(&xi_bar.f_block());
    let g_small = model.gradient(xi);
    let g = model.gradient(big_xi);
    let g_bar = model.gradient(xi_bar);
    let lag = sub3(v, big_v);
    let err = sub3(big_v, v_bar);
    let shift = jac_tilde - jac_f;
    let (k_shift, k_gap) = (jets.k_shifted - jets.k_linear, jets.k_linear - jets.k_ref);

    stress_pairing(&jets.dg, &jac_bar, &lag)
        + stress_pairing(&jets.dg, &(jac_f - jac_bar), &lag)
        + stress_pairing(&jets.dg, &shift, &lag)
        + stress_pairing(&jets.dg, &shift, &err)
        + (g_small - g).dot(&jets.k_ref)
        + (g_small - g).dot(&k_shift)
        + (g_small - g).dot(&k_gap)
        + (g - g_bar).dot(&k_shift)
}

/// Everything needed to evaluate the identity's integrands at one time.
pub struct Frame {
    /// Linear interpolant `Θ(t)`.
    pub linear: State,
    /// Constant interpolant `θ(t)`.
    pub constant: State,
    pub f_tilde: TensorField,
    pub delta_v: VectorField,
    pub delta_xi: XiField,
    /// Reference `Θ̄(t)`.
    pub reference: State,
}

impl Frame {
    /// Frame at `t` inside `I_j` of `traj` (not at a knot of `traj`).
    pub fn at(traj: &Trajectory, reference: &Trajectory, t: f64) -> Result<Self> {
        let j = traj.constant_interval(t)?;
        let (prev, next) = (&traj.states()[j - 1], &traj.states()[j]);
        let reference = reference.eval_linear(t)?;
        if reference.grid() != prev.grid() {
            return Err(Error::ConfigInvalid("candidate and reference live on different grids".into()));
        }
        Ok(Self {
            linear: traj.eval_linear(t)?,
            constant: next.clone(),
            f_tilde: prev.deformation_gradient(),
            delta_v: next.v.sub(&prev.v),
            delta_xi: next.xi.sub(&prev.xi),
            reference,
        })
    }

    fn jets(&self, model: &(impl StoredEnergy + ?Sized)) -> Vec<ReferenceJets> {
        let grid = self.reference.grid();
        let g_bar = self.reference.xi.map(|x| model.gradient(x));
        let dg = [grid::diff(&g_bar, 0), grid::diff(&g_bar, 1), grid::diff(&g_bar, 2)];
        let zero = XiField::zeros(grid);
        let k = |x: &TensorField| constrained_xi(&zero, x, &self.reference.v, 1.0);
        let k_ref = k(&self.reference.deformation_gradient());
        let k_linear = k(&self.linear.deformation_gradient());
        let k_shifted = k(&self.f_tilde);
        (0..grid.len())
            .map(|c| ReferenceJets {
                dg: [dg[0][c], dg[1][c], dg[2][c]],
                k_ref: k_ref[c],
                k_linear: k_linear[c],
                k_shifted: k_shifted[c],
            })
            .collect()
    }

    /// Spatial integrals of the identity's terms at this time.
    pub fn integrals(&self, model: &(impl StoredEnergy + ?Sized), h: f64) -> FrameIntegrals {
        let grid = self.reference.grid();
        let jets = self.jets(model);
        let (th, lin, rf) = (&self.constant, &self.linear, &self.reference);
        let mut q = Vec::with_capacity(grid.len());
        let mut d = Vec::with_capacity(grid.len());
        let mut s = Vec::with_capacity(grid.len());
        let mut q_ratio_max = 0.0_f64;
        let p = model.growth_exponent();
        for c in 0..grid.len() {
            let qc = term_q_point(model, &lin.v[c], &lin.xi[c], &rf.v[c], &rf.xi[c], &jets[c]);
            let dist = dist_point(p, &lin.v[c], &lin.xi[c], &rf.v[c], &rf.xi[c]);
            if dist > 0.0 {
                q_ratio_max = q_ratio_max.max(qc.abs() / dist);
            }
            q.push(qc);
            d.push(term_d_point(model, &th.v[c], &th.xi[c], &lin.v[c], &lin.xi[c], &self.delta_v[c], &self.delta_xi[c]));
            s.push(term_s_point(model, &th.v[c], &th.xi[c], &lin.v[c], &lin.xi[c], &rf.v[c], &rf.xi[c], &self.f_tilde[c], &jets[c]));
        }
        let q_flux = flux_qr(model, th, rf, &self.f_tilde);
        let as_field = |v: Vec<f64>| Field::from_vec(grid, v).expect("same grid");
        let (q, d, s) = (as_field(q), as_field(d), as_field(s));
        let abs = |f: &ScalarField| grid::integrate(&f.map(|x| x.abs()));
        FrameIntegrals {
            q: grid::integrate(&q),
            d_over_h: grid::integrate(&d) / h,
            s: grid::integrate(&s),
            div_flux: grid::integrate(&grid::divergence_vector(&q_flux)),
            abs_sum: abs(&q) + abs(&d) / h + abs(&s),
            d_min: d.values().iter().copied().fold(f64::INFINITY, f64::min),
            q_ratio_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FrameIntegrals {
    pub q: f64,
    pub d_over_h: f64,
    pub s: f64,
    pub div_flux: f64,
    /// `∫ |Q| + |D|/h + |S| dx`.
    pub abs_sum: f64,
    /// Smallest pointwise `D^j`.
    pub d_min: f64,
    /// Largest pointwise `|Q|/d` over cells with `d > 0`.
    pub q_ratio_max: f64,
}

impl FrameIntegrals {
    fn scaled_add(&mut self, w: f64, o: &FrameIntegrals) {
        self.q += w * o.q;
        self.d_over_h += w * o.d_over_h;
        self.s += w * o.s;
        self.div_flux += w * o.div_flux;
        self.abs_sum += w * o.abs_sum;
        self.d_min = self.d_min.min(o.d_min);
        self.q_ratio_max = self.q_ratio_max.max(o.q_ratio_max);
    }
}

/// Both sides of the time-integrated identity over a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub t_start: f64,
    pub t_end: f64,
    /// `∫η^r(t_end) − ∫η^r(t_start) − ∫∫ div q^r`.
    pub lhs: f64,
    /// `∫∫ Q − D/h + S`.
    pub rhs: f64,
    pub q_integral: f64,
    pub d_integral: f64,
    pub s_integral: f64,
    /// Magnitude the residual should be compared against.
    pub scale: f64,
    pub d_min: f64,
    pub q_ratio_max: f64,
}

impl IdentityCheck {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Four-point Gauss-Legendre nodes and weights on `[−1, 1]`.
const GAUSS_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GAUSS_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_8, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_8];

/// Integrates both sides of the identity over `window = (t_a, t_b)`, with
/// Gauss-Legendre quadrature between consecutive knots of either trajectory.
pub fn identity_residual(
    model: &(impl StoredEnergy + ?Sized),
    traj: &Trajectory,
    reference: &Trajectory,
    window: (f64, f64),
) -> Result<IdentityCheck> {
    let (t_a, t_b) = window;
    let end = traj.end_time().min(reference.end_time());
    if !(t_a >= 0.0 && t_a <= t_b && t_b <= end * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange { t: if t_a < 0.0 || t_a > t_b { t_a } else { t_b }, end });
    }
    let mut cuts = vec![t_a, t_b];
    for tr in [traj, reference] {
        let first = (t_a / tr.h()).floor() as usize;
        let last = (t_b / tr.h()).ceil() as usize;
        cuts.extend((first..=last).map(|k| k as f64 * tr.h()).filter(|&t| t > t_a && t < t_b));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * traj.h().min(reference.h()));

    let mut acc = FrameIntegrals { d_min: f64::INFINITY, ..Default::default() };
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        if half <= 0.0 {
            continue;
        }
        for (x, wt) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let t = 0.5 * (lo + hi) + half * x;
            let frame = Frame::at(traj, reference, t)?;
            acc.scaled_add(wt * half, &frame.integrals(model, traj.h()));
        }
    }

    let eta_at = |t: f64| -> Result<f64> {
        let (c, r) = (traj.eval_linear(t)?, reference.eval_linear(t)?);
        Ok(grid::integrate(&eta_rel(model, PairState::new(&c, &r)?)))
    };
    let (eta_a, eta_b) = (eta_at(t_a)?, eta_at(t_b)?);
    let lhs = eta_b - eta_a - acc.div_flux;
    let rhs = acc.q - acc.d_over_h + acc.s;
    Ok(IdentityCheck {
        t_start: t_a,
        t_end: t_b,
        lhs,
        rhs,
        q_integral: acc.q,
        d_integral: acc.d_over_h,
        s_integral: acc.s,
        scale: acc.abs_sum + eta_a.abs() + eta_b.abs(),
        d_min: acc.d_min,
        q_ratio_max: acc.q_ratio_max,
    })
}

/// Per-step entropy bookkeeping of a candidate run against a reference.
/// Time integrals are over `I_j`; point values at `t_j = jh`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBudget {
    pub j: usize,
    pub t: f64,
    pub e: f64,
    pub eta_rel_integral: f64,
    pub q_integral: f64,
    pub d_integral: f64,
    pub s_integral: f64,
    pub identity_residual: f64,
    pub q_ratio_max: f64,
}

/// One [`EntropyBudget`] row per step of `traj`.
pub fn entropy_budget(model: &(impl StoredEnergy + ?Sized), traj: &Trajectory, reference: &Trajectory) -> Result<Vec<EntropyBudget>> {
    (1..=traj.steps())
        .map(|j| {
            let (t_a, t_b) = ((j - 1) as f64 * traj.h(), j as f64 * traj.h());
            let check = identity_residual(model, traj, reference, (t_a, t_b))?;
            let (c, r) = (&traj.states()[j], reference.eval_linear(t_b)?);
            let pair = PairState::new(c, &r)?;
            Ok(EntropyBudget {
                j,
                t: t_b,
                e: efunc(model, pair),
                eta_rel_integral: grid::integrate(&eta_rel(model, pair)),
                q_integral: check.q_integral,
                d_integral: check.d_integral,
                s_integral: check.s_integral,
                identity_residual: check.residual(),
                q_ratio_max: check.q_ratio_max,
            })
        })
        .collect()
}
