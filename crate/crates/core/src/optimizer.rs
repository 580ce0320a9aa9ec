//! Newton-CG with backtracking line search for smooth convex objectives,
//! with a gradient-descent fallback.

use crate::error::{Error, Result};

/// A smooth convex objective on `R^n` with Hessian-vector products.
pub trait ConvexObjective {
    /// Data cached at a linearization point and reused across CG iterations.
    type Linearization;

    /// Value and Euclidean gradient. A non-finite value marks `x` as
    /// outside the usable domain.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn linearize(&self, x: &[f64]) -> Self::Linearization;

    fn hessian_apply(&self, lin: &Self::Linearization, d: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Absolute Euclidean gradient-norm target.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_cg_iterations: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Iteration cap for the gradient-descent fallback.
    pub fallback_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            max_cg_iterations: 500,
            armijo: 1e-4,
            max_backtracks: 40,
            fallback_iterations: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    /// Outer iterations (Newton plus any fallback iterations).
    pub iterations: usize,
    pub cg_iterations: usize,
    pub used_fallback: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], s: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + s * b).collect()
}

/// Solves `H p = rhs` by conjugate gradients to absolute residual `target`.
/// Returns the iterate and the number of iterations used.
fn conjugate_gradient<O: ConvexObjective>(
    obj: &O,
    lin: &O::Linearization,
    rhs: &[f64],
    target: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= target {
            return (x, it);
        }
        let hd = obj.hessian_apply(lin, &d);
        let curv = dot(&d, &hd);
        if curv <= 0.0 || !curv.is_finite() {
            // not expected for a convex objective; keep what we have
            if it == 0 {
                return (rhs.to_vec(), 0);
            }
            return (x, it);
        }
        let alpha = rr / curv;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * hd[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
    }
    (x, max_iter)
}

/// Values closer than this (relative) are indistinguishable in the Armijo test.
fn value_noise(f: f64) -> f64 {
    64.0 * f64::EPSILON * f.abs().max(1.0)
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: ConvexObjective>(obj: &O, x0: Vec<f64>, opts: &NewtonOptions) -> Result<Minimum> {
    let (mut f, mut g) = obj.value_and_gradient(&x0);
    if !f.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    let mut x = x0;
    let mut gn = norm(&g);
    let mut iterations = 0;
    let mut cg_total = 0;

    while gn > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let lin = obj.linearize(&x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let forcing = gn.sqrt().min(0.5);
        let target = (forcing * gn).max(0.1 * opts.tolerance);
        let (mut p, cg_its) = conjugate_gradient(obj, &lin, &neg_g, target, opts.max_cg_iterations);
        cg_total += cg_its;
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            p = neg_g;
            slope = -gn * gn;
        }
        match line_search(obj, &x, f, gn, &p, slope, opts) {
            Some((xn, fnew, gnew)) => {
                x = xn;
                f = fnew;
                gn = norm(&gnew);
                g = gnew;
            }
            None => break,
        }
    }

    if gn <= opts.tolerance {
        return Ok(Minimum { x, value: f, gradient: g, gradient_norm: gn, iterations, cg_iterations: cg_total, used_fallback: false });
    }

    let fb = gradient_descent(obj, x, f, g, opts)?;
    Ok(Minimum { iterations: iterations + fb.iterations, cg_iterations: cg_total, used_fallback: true, ..fb })
}

fn line_search<O: ConvexObjective>(
    obj: &O,
    x: &[f64],
    f: f64,
    gn: f64,
    p: &[f64],
    slope: f64,
    opts: &NewtonOptions,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let mut alpha = 1.0;
    for _ in 0..opts.max_backtracks {
        let xn = axpy(x, alpha, p);
        let (fnew, gnew) = obj.value_and_gradient(&xn);
        if fnew.is_finite() {
            if fnew <= f + opts.armijo * alpha * slope {
                return Some((xn, fnew, gnew));
            }
            // Near the minimizer the decrease drowns in rounding; fall back
            // to requiring a smaller gradient.
            if (fnew - f).abs() <= value_noise(f) && norm(&gnew) < gn {
                return Some((xn, fnew, gnew));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Steepest descent with Barzilai-Borwein step lengths safeguarded by
/// backtracking.
fn gradient_descent<O: ConvexObjective>(
    obj: &O,
    mut x: Vec<f64>,
    mut f: f64,
    mut g: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<Minimum> {
    let mut gn = norm(&g);
    let mut step = 1.0;
    for it in 0..opts.fallback_iterations {
        if gn <= opts.tolerance {
            return Ok(Minimum { x, value: f, gradient: g, gradient_norm: gn, iterations: it, cg_iterations: 0, used_fallback: true });
        }
        let mut accepted = None;
        let mut t = step;
        for _ in 0..opts.max_backtracks {
            let xn = axpy(&x, -t, &g);
            let (fnew, gnew) = obj.value_and_gradient(&xn);
            if fnew.is_finite()
                && (fnew <= f - opts.armijo * t * gn * gn || ((fnew - f).abs() <= value_noise(f) && norm(&gnew) < gn))
            {
                accepted = Some((xn, fnew, gnew, t));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew, t)) = accepted else {
            return Err(Error::OptimizerDiverged {
                iterations: it,
                gradient_norm: gn,
                reason: "gradient-descent line search failed".into(),
            });
        };
        let s: Vec<f64> = g.iter().map(|v| -t * v).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * t };
        x = xn;
        f = fnew;
        g = gnew;
        gn = norm(&g);
    }
    if gn <= opts.tolerance {
        return Ok(Minimum { x, value: f, gradient: g, gradient_norm: gn, iterations: opts.fallback_iterations, cg_iterations: 0, used_fallback: true });
    }
    Err(Error::OptimizerDiverged {
        iterations: opts.fallback_iterations,
        gradient_norm: gn,
        reason: "iteration limit reached".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `f(x) = Σ (c_i/4) x_i⁴ + ½ xᵀ A x − bᵀx` with a tridiagonal SPD `A`.
    struct Quartic {
        c: Vec<f64>,
        b: Vec<f64>,
    }

    impl Quartic {
        fn a_mul(&self, x: &[f64]) -> Vec<f64> {
            let n = x.len();
            (0..n)
                .map(|i| {
                    let mut s = 3.0 * x[i];
                    if i > 0 {
                        s -= x[i - 1];
                    }
                    if i + 1 < n {
                        s -= x[i + 1];
                    }
                    s
                })
                .collect()
        }
    }

    impl ConvexObjective for Quartic {
        type Linearization = Vec<f64>;

        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            let ax = self.a_mul(x);
            let f = x.iter().zip(&self.c).map(|(x, c)| 0.25 * c * x.powi(4)).sum::<f64>() + 0.5 * dot(x, &ax)
                - dot(&self.b, x);
            let g = (0..x.len()).map(|i| self.c[i] * x[i].powi(3) + ax[i] - self.b[i]).collect();
            (f, g)
        }

        fn linearize(&self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.c).map(|(x, c)| 3.0 * c * x * x).collect()
        }

        fn hessian_apply(&self, lin: &Vec<f64>, d: &[f64]) -> Vec<f64> {
            self.a_mul(d).iter().zip(lin).zip(d).map(|((a, l), d)| a + l * d).collect()
        }
    }

    fn problem() -> Quartic {
        let n = 40;
        Quartic {
            c: (0..n).map(|i| 1.0 + (i % 3) as f64).collect(),
            b: (0..n).map(|i| ((i as f64) * 0.7).sin() * 5.0).collect(),
        }
    }

    #[test]
    fn newton_reaches_tolerance() {
        let p = problem();
        let opts = NewtonOptions { tolerance: 1e-12, ..Default::default() };
        let m = minimize(&p, vec![0.0; 40], &opts).unwrap();
        assert!(m.gradient_norm <= 1e-12);
        assert!(!m.used_fallback);
        assert!(m.iterations < 30);
    }

    #[test]
    fn fallback_agrees_with_newton() {
        let p = problem();
        let newton = minimize(&p, vec![0.0; 40], &NewtonOptions { tolerance: 1e-11, ..Default::default() }).unwrap();
        let opts = NewtonOptions { tolerance: 1e-11, max_iterations: 0, ..Default::default() };
        let gd = minimize(&p, vec![0.0; 40], &opts).unwrap();
        assert!(gd.used_fallback);
        let diff = newton.x.iter().zip(&gd.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn non_finite_start_is_reported() {
        struct Bad;
        impl ConvexObjective for Bad {
            type Linearization = ();
            fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
                (f64::INFINITY, x.to_vec())
            }
            fn linearize(&self, _: &[f64]) {}
            fn hessian_apply(&self, _: &(), d: &[f64]) -> Vec<f64> {
                d.to_vec()
            }
        }
        assert!(matches!(minimize(&Bad, vec![1.0], &NewtonOptions::default()), Err(Error::NonFiniteEnergy)));
    }
}
