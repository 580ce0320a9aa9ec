//! Convex stored energy `G(Ξ) = H(F) + R(Ξ)` on the extended state.
//!
//! The default [`EnergyModel`] uses `H(F) = c_H |F|^p` and
//! `R(Ξ) = (γ/2)|Ξ|²`. Both pieces have closed-form growth and convexity
//! constants, which [`check_hypotheses`] verifies by sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix3, Xi19, XI_LEN};

/// A convex function of the extended state with first and second derivatives.
///
/// Implementors must be strictly convex; the per-step minimization relies on
/// it for uniqueness.
pub trait StoredEnergy: Send + Sync {
    fn value(&self, xi: &Xi19) -> f64;

    fn gradient(&self, xi: &Xi19) -> Xi19;

    /// Hessian-vector product `∇²G(Ξ) z`.
    fn hessian_apply(&self, xi: &Xi19, z: &Xi19) -> Xi19;

    /// Growth exponent `p` of the `F` block, used by the distance function.
    fn growth_exponent(&self) -> f64;

    /// Uniform lower bound on the Hessian of `G`.
    fn convexity_modulus(&self) -> f64;

    /// Constant `c₄ ≥ 0` with `G ≥ −c₄`.
    fn lower_bound_offset(&self) -> f64 {
        0.0
    }

    /// Bregman gap `G(Ξ) − G(base) − ∇G(base)·(Ξ − base)`.
    fn bregman(&self, xi: &Xi19, base: &Xi19) -> f64 {
        self.value(xi) - self.value(base) - self.gradient(base).dot(&(*xi - *base))
    }

    /// Entropy `η(v, Ξ) = ½|v|² + G(Ξ)`.
    fn entropy(&self, v: &[f64; 3], xi: &Xi19) -> f64 {
        0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + self.value(xi)
    }
}

/// `G(Ξ) = c_H |F|^p + (γ/2)|Ξ|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    p: f64,
    c_h: f64,
    gamma: f64,
}

impl EnergyModel {
    /// Validates `p ≥ 6`, `c_H ≥ 0` and `γ > 0`.
    ///
    /// `c_H = 0` is accepted: it leaves the purely quadratic energy, which is
    /// still uniformly convex through `R`.
    pub fn new(p: f64, c_h: f64, gamma: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 6.0) {
            return Err(Error::ConfigInvalid(format!("exponent p = {p} must satisfy p >= 6")));
        }
        if !(c_h.is_finite() && c_h >= 0.0) {
            return Err(Error::ConfigInvalid(format!("c_h = {c_h} must be non-negative")));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::ConfigInvalid(format!("gamma = {gamma} must be positive")));
        }
        Ok(Self { p, c_h, gamma })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `|F|^e`, with `0^e = 0` for every exponent (the removable singularity
    /// at `F = 0` is only reached with `e ≥ 0` when `p ≥ 6`).
    #[inline]
    fn norm_pow(norm_sq: f64, e: f64) -> f64 {
        if norm_sq == 0.0 {
            0.0
        } else {
            norm_sq.powf(0.5 * e)
        }
    }

    pub fn eval_h(&self, f: &Matrix3) -> f64 {
        self.c_h * Self::norm_pow(f.norm_sq(), self.p)
    }

    pub fn grad_h(&self, f: &Matrix3) -> Matrix3 {
        *f * (self.c_h * self.p * Self::norm_pow(f.norm_sq(), self.p - 2.0))
    }

    pub fn hess_h_apply(&self, f: &Matrix3, z: &Matrix3) -> Matrix3 {
        let n2 = f.norm_sq();
        let a = self.c_h * self.p * Self::norm_pow(n2, self.p - 2.0);
        let b = self.c_h * self.p * (self.p - 2.0) * Self::norm_pow(n2, self.p - 4.0) * f.dot(z);
        *z * a + *f * b
    }

    /// Trilinear third derivative `D³H(F)[a, b, c]`.
    pub fn third_h(&self, f: &Matrix3, a: &Matrix3, b: &Matrix3, c: &Matrix3) -> f64 {
        let p = self.p;
        let n2 = f.norm_sq();
        let (fa, fb, fc) = (f.dot(a), f.dot(b), f.dot(c));
        let sym = a.dot(b) * fc + a.dot(c) * fb + b.dot(c) * fa;
        self.c_h
            * p
            * (p - 2.0)
            * (Self::norm_pow(n2, p - 4.0) * sym + (p - 4.0) * Self::norm_pow(n2, p - 6.0) * fa * fb * fc)
    }

    pub fn eval_r(&self, xi: &Xi19) -> f64 {
        0.5 * self.gamma * xi.norm_sq()
    }

    pub fn grad_r(&self, xi: &Xi19) -> Xi19 {
        *xi * self.gamma
    }

    pub fn hess_r_apply(&self, _xi: &Xi19, z: &Xi19) -> Xi19 {
        *z * self.gamma
    }

    /// Closed-form constants of the growth and convexity bounds.
    pub fn constants(&self) -> HypothesisConstants {
        let (p, ch, g) = (self.p, self.c_h, self.gamma);
        let p_conj = p / (p - 1.0);
        let q_z = p / (p - 2.0);
        let q_w = p / (p - 3.0);
        // |G_F| ≤ c_H p |F|^{p-1} + γ|F|, then (a+b)^s ≤ 2^{s-1}(a^s + b^s) and |x|^s ≤ |x|^p + 1.
        let c6 = 2f64.powf(p_conj - 1.0) * ((ch * p).powf(p_conj) + g.powf(p_conj)) + g.powf(q_z) + g.powf(q_w);
        HypothesisConstants {
            kappa: ch * p,
            kappa_prime: ch * p * (p - 1.0),
            gamma: g,
            gamma_prime: g,
            c1: ch,
            c2: 0.5 * g,
            c3: 0.5 * g,
            c4: 0.0,
            c5: ch + 0.5 * g,
            c6,
            c7: ch * p * (p - 2.0) * (3.0 + (p - 4.0).abs()),
            c8: 0.0,
        }
    }
}

impl StoredEnergy for EnergyModel {
    fn value(&self, xi: &Xi19) -> f64 {
        self.eval_h(&xi.f_block()) + self.eval_r(xi)
    }

    fn gradient(&self, xi: &Xi19) -> Xi19 {
        let mut g = self.grad_r(xi);
        let gh = self.grad_h(&xi.f_block()).to_flat();
        for (a, x) in gh.iter().enumerate() {
            g.0[a] += x;
        }
        g
    }

    fn hessian_apply(&self, xi: &Xi19, z: &Xi19) -> Xi19 {
        let mut out = self.hess_r_apply(xi, z);
        let hz = self.hess_h_apply(&xi.f_block(), &z.f_block()).to_flat();
        for (a, x) in hz.iter().enumerate() {
            out.0[a] += x;
        }
        out
    }

    fn growth_exponent(&self) -> f64 {
        self.p
    }

    fn convexity_modulus(&self) -> f64 {
        self.gamma
    }

    fn lower_bound_offset(&self) -> f64 {
        self.constants().c4
    }

    fn bregman(&self, xi: &Xi19, base: &Xi19) -> f64 {
        // The quadratic part is evaluated in closed form to avoid cancellation.
        let (f, fb) = (xi.f_block(), base.f_block());
        let h_gap = self.eval_h(&f) - self.eval_h(&fb) - self.grad_h(&fb).dot(&(f - fb));
        h_gap.max(0.0) + 0.5 * self.gamma * (*xi - *base).norm_sq()
    }
}

/// Constants `κ, κ′, γ, γ′, c₁ … c₈` of the default model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    pub kappa: f64,
    pub kappa_prime: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
}

/// Worst sampled violation of one inequality, as a relative excess.
/// Non-positive means the inequality held at every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResidual {
    pub name: String,
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kappa: f64,
    pub kappa_prime: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub constants: HypothesisConstants,
    pub samples: usize,
    pub radius: f64,
    pub hypothesis_residuals: Vec<HypothesisResidual>,
}

/// Relative slack allowed for rounding in the sampled inequalities.
pub const HYPOTHESIS_SLACK: f64 = 1e-12;

impl EnergyReport {
    pub fn violations(&self) -> Vec<&HypothesisResidual> {
        self.hypothesis_residuals.iter().filter(|r| r.worst > HYPOTHESIS_SLACK).collect()
    }

    pub fn is_satisfied(&self) -> bool {
        self.violations().is_empty()
    }
}

pub(crate) fn random_unit<const N: usize>(rng: &mut impl Rng) -> [f64; N] {
    loop {
        let mut v = [0.0; N];
        for x in v.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// A random extended state with norm uniformly distributed in `[0, radius]`.
pub(crate) fn random_xi(rng: &mut impl Rng, radius: f64) -> Xi19 {
    let dir = random_unit::<XI_LEN>(rng);
    let r = radius * rng.random::<f64>();
    Xi19(dir.map(|x| x * r))
}

fn random_matrix(rng: &mut impl Rng) -> Matrix3 {
    Matrix3::from_flat(&random_unit::<9>(rng))
}

/// Samples every growth and convexity inequality of the default model at
/// `sample_count` random states with `|Ξ| ≤ radius`.
pub fn check_hypotheses(model: &EnergyModel, sample_count: usize, radius: f64, seed: u64) -> Result<EnergyReport> {
    if sample_count == 0 {
        return Err(Error::ConfigInvalid("sample count must be at least 1".into()));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::ConfigInvalid(format!("sampling radius {radius} must be positive")));
    }
    let k = model.constants();
    let p = model.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let names = [
        "Hessian of H lower bound (kappa)",
        "Hessian of H upper bound (kappa')",
        "Hessian of R lower bound (gamma)",
        "Hessian of R upper bound (gamma')",
        "coercivity",
        "upper growth",
        "gradient growth",
        "third derivative of H",
        "third derivative of R",
        "convexity of G",
    ];
    let mut worst = [f64::NEG_INFINITY; 10];
    let mut record = |slot: usize, excess: f64| {
        if excess > worst[slot] {
            worst[slot] = excess;
        }
    };
    let rel = |lhs: f64, rhs: f64| (lhs - rhs) / rhs.abs().max(1e-300);

    for s in 0..sample_count {
        let xi = random_xi(&mut rng, radius);
        let f = xi.f_block();
        let z_dir = random_matrix(&mut rng);
        // every fourth sample probes the equality direction z ∥ F of the upper bound
        let z = if s % 4 == 0 && f.norm_sq() > 0.0 { f * (1.0 / f.norm()) } else { z_dir };
        let fp2 = f.norm().powf(p - 2.0);
        let quad = z.dot(&model.hess_h_apply(&f, &z));
        if fp2 > 0.0 {
            let scale = fp2 * z.norm_sq();
            if k.kappa > 0.0 {
                record(0, rel(k.kappa * scale, quad));
            } else {
                record(0, -quad);
            }
            record(1, if k.kappa_prime > 0.0 { rel(quad, k.kappa_prime * scale) } else { quad });
        }

        let zr = random_xi(&mut rng, 1.0);
        if zr.norm_sq() > 0.0 {
            let qr = zr.dot(&model.hess_r_apply(&xi, &zr)) / zr.norm_sq();
            record(2, rel(k.gamma, qr));
            record(3, rel(qr, k.gamma_prime));
        }

        let g = model.value(&xi);
        let (nf, nz, nw) = (f.norm(), xi.z_block().norm(), xi.w().abs());
        let fp = nf.powf(p);
        record(4, rel(k.c1 * fp + k.c2 * nz * nz + k.c3 * nw * nw - k.c4, g));
        let bound = fp + nz * nz + nw * nw + 1.0;
        record(5, rel(g, k.c5 * bound));

        let grad = model.gradient(&xi);
        let lhs = grad.f_block().norm().powf(p / (p - 1.0))
            + grad.z_block().norm().powf(p / (p - 2.0))
            + grad.w().abs().powf(p / (p - 3.0));
        record(6, rel(lhs, k.c6 * bound));

        let (a, b, c) = (random_matrix(&mut rng), random_matrix(&mut rng), random_matrix(&mut rng));
        let third = model.third_h(&f, &a, &b, &c).abs();
        let rhs = k.c7 * nf.powf(p - 3.0);
        record(7, if rhs > 0.0 { rel(third, rhs) } else { third });
        // R is quadratic: its Hessian does not depend on Ξ.
        let dz = random_xi(&mut rng, 1.0);
        let third_r = (model.hess_r_apply(&(xi + dz), &zr) - model.hess_r_apply(&xi, &zr)).max_abs();
        record(8, third_r - k.c8);

        let other = random_xi(&mut rng, radius);
        let theta: f64 = rng.random();
        let mid = xi * theta + other * (1.0 - theta);
        let chord = theta * g + (1.0 - theta) * model.value(&other);
        record(9, (model.value(&mid) - chord) / chord.abs().max(1.0));
    }

    Ok(EnergyReport {
        kappa: k.kappa,
        kappa_prime: k.kappa_prime,
        gamma: k.gamma,
        gamma_prime: k.gamma_prime,
        constants: k,
        samples: sample_count,
        radius,
        hypothesis_residuals: names
            .iter()
            .zip(worst)
            .map(|(n, w)| HypothesisResidual {
                name: n.to_string(),
                worst: if w.is_finite() { w } else { 0.0 },
            })
            .collect(),
    })
}
