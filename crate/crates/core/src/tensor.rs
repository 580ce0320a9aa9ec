//! 3×3 matrix algebra and the null-Lagrangian map `Φ(F) = (F, cof F, det F)`.
//!
//! The 19 components of `Ξ = (F, Z, w)` are flattened as: indices `0..9` hold
//! the `F` block (row-major `i, α`), `9..18` the `Z` block (row-major), and
//! `18` the scalar `w`. Every module in the crate uses this order.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

/// Number of components of the extended state `Ξ`.
pub const XI_LEN: usize = 19;
/// Offset of the cofactor block inside `Ξ`.
pub const Z_OFFSET: usize = 9;
/// Index of the determinant slot inside `Ξ`.
pub const W_INDEX: usize = 18;

/// A 3×3 real matrix `F_{iα}`, stored row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub const ZERO: Self = Matrix3([[0.0; 3]; 3]);
    pub const IDENTITY: Self = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for a in 0..3 {
                m.0[i][a] = f(i, a);
            }
        }
        m
    }

    pub fn diag(d: [f64; 3]) -> Self {
        Self::from_fn(|i, a| if i == a { d[i] } else { 0.0 })
    }

    /// Builds a matrix from its row-major flattening.
    pub fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "Matrix3 needs 9 entries");
        Self::from_fn(|i, a| v[3 * i + a])
    }

    pub fn to_flat(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for a in 0..3 {
                out[3 * i + a] = self.0[i][a];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, a| self.0[a][i])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Frobenius inner product `A : B`.
    pub fn dot(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for a in 0..3 {
                s += self.0[i][a] * other.0[i][a];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self::from_fn(|i, a| (0..3).map(|k| self.0[i][k] * other.0[k][a]).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix3 {
    type Output = f64;
    fn index(&self, (i, a): (usize, usize)) -> &f64 {
        &self.0[i][a]
    }
}

impl IndexMut<(usize, usize)> for Matrix3 {
    fn index_mut(&mut self, (i, a): (usize, usize)) -> &mut f64 {
        &mut self.0[i][a]
    }
}

impl Add for Matrix3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, a| self.0[i][a] + rhs.0[i][a])
    }
}

impl Sub for Matrix3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, a| self.0[i][a] - rhs.0[i][a])
    }
}

impl Mul<f64> for Matrix3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::from_fn(|i, a| self.0[i][a] * s)
    }
}

impl Neg for Matrix3 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl AddAssign for Matrix3 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for Matrix3 {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

/// Levi-Civita symbol on `{0,1,2}`.
#[inline]
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Cofactor matrix, `(cof F)_{iα} = ½ ε_{ijk} ε_{αβγ} F_{jβ} F_{kγ}`.
///
/// Evaluated from signed 2×2 minors, so it is defined for singular `F` as well.
pub fn cof(f: &Matrix3) -> Matrix3 {
    let m = &f.0;
    Matrix3::from_fn(|i, a| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        m[j][b] * m[k][c] - m[j][c] * m[k][b]
    })
}

/// Determinant by cofactor expansion along the first row.
pub fn det(f: &Matrix3) -> f64 {
    let m = &f.0;
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Derivative of the cofactor map at `f` in direction `u`:
/// `(d cof(F)[u])_{iα} = ε_{ijk} ε_{αβγ} u_{jβ} F_{kγ}`.
pub fn cof_derivative(f: &Matrix3, u: &Matrix3) -> Matrix3 {
    let (m, d) = (&f.0, &u.0);
    Matrix3::from_fn(|i, a| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        d[j][b] * m[k][c] + m[j][b] * d[k][c] - d[j][c] * m[k][b] - m[j][c] * d[k][b]
    })
}

/// The extended state `Ξ = (F, Z, w) ∈ R¹⁹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Xi19(pub [f64; XI_LEN]);

impl Default for Xi19 {
    fn default() -> Self {
        Self::ZERO
    }
}

impl Xi19 {
    pub const ZERO: Self = Xi19([0.0; XI_LEN]);

    pub fn from_blocks(f: &Matrix3, z: &Matrix3, w: f64) -> Self {
        let mut out = [0.0; XI_LEN];
        out[..9].copy_from_slice(&f.to_flat());
        out[Z_OFFSET..W_INDEX].copy_from_slice(&z.to_flat());
        out[W_INDEX] = w;
        Xi19(out)
    }

    pub fn f_block(&self) -> Matrix3 {
        Matrix3::from_flat(&self.0[..9])
    }

    pub fn z_block(&self) -> Matrix3 {
        Matrix3::from_flat(&self.0[Z_OFFSET..W_INDEX])
    }

    pub fn w(&self) -> f64 {
        self.0[W_INDEX]
    }

    pub fn set_f_block(&mut self, f: &Matrix3) {
        self.0[..9].copy_from_slice(&f.to_flat());
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for Xi19 {
    type Output = f64;
    fn index(&self, a: usize) -> &f64 {
        &self.0[a]
    }
}

impl IndexMut<usize> for Xi19 {
    fn index_mut(&mut self, a: usize) -> &mut f64 {
        &mut self.0[a]
    }
}

impl Add for Xi19 {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl Sub for Xi19 {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for Xi19 {
    type Output = Self;
    fn mul(mut self, s: f64) -> Self {
        for a in self.0.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Neg for Xi19 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl AddAssign for Xi19 {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl SubAssign for Xi19 {
    fn sub_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
    }
}

/// Lifts `F` to the null-Lagrangian vector `(F, cof F, det F)`.
pub fn phi(f: &Matrix3) -> Xi19 {
    Xi19::from_blocks(f, &cof(f), det(f))
}

/// The Jacobian `Φ^A_{,iα}`: 19 rows indexed by `A`, 9 columns indexed by
/// the flattened pair `3i + α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiJacobian(pub [[f64; 9]; XI_LEN]);

impl PhiJacobian {
    pub const ZERO: Self = PhiJacobian([[0.0; 9]; XI_LEN]);

    #[inline]
    pub fn get(&self, a: usize, i: usize, alpha: usize) -> f64 {
        self.0[a][3 * i + alpha]
    }

    /// `Σ_{iα} Φ^A_{,iα} u_{iα}`: the directional derivative of `Φ` along `u`.
    pub fn apply(&self, u: &Matrix3) -> Xi19 {
        let u = u.to_flat();
        let mut out = Xi19::ZERO;
        for (a, row) in self.0.iter().enumerate() {
            out.0[a] = row.iter().zip(u.iter()).map(|(m, x)| m * x).sum();
        }
        out
    }

    /// Transport flux `P_{Aα} = Φ^A_{,iα} v_i`.
    pub fn contract_velocity(&self, v: &[f64; 3]) -> [[f64; 3]; XI_LEN] {
        let mut out = [[0.0; 3]; XI_LEN];
        for (a, row) in self.0.iter().enumerate() {
            for alpha in 0..3 {
                out[a][alpha] = row[alpha] * v[0] + row[3 + alpha] * v[1] + row[6 + alpha] * v[2];
            }
        }
        out
    }

    /// Stress-like contraction `g_{iα} = g_A Φ^A_{,iα}`.
    pub fn contract_stress(&self, g: &Xi19) -> Matrix3 {
        let mut out = [0.0; 9];
        for (a, row) in self.0.iter().enumerate() {
            let ga = g.0[a];
            if ga == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(row.iter()) {
                *o += ga * m;
            }
        }
        Matrix3::from_flat(&out)
    }

    /// `Σ_{A,α} Φ^A_{,iα} q_{Aα}` for each `i`: the transpose of
    /// [`contract_velocity`](Self::contract_velocity).
    pub fn contract_flux_transpose(&self, q: &[[f64; 3]; XI_LEN]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (row, qa) in self.0.iter().zip(q.iter()) {
            for i in 0..3 {
                out[i] += row[3 * i] * qa[0] + row[3 * i + 1] * qa[1] + row[3 * i + 2] * qa[2];
            }
        }
        out
    }
}

impl Sub for PhiJacobian {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (r, s) in self.0.iter_mut().zip(rhs.0.iter()) {
            for (a, b) in r.iter_mut().zip(s.iter()) {
                *a -= b;
            }
        }
        self
    }
}

/// Fills the cofactor block rows of a Jacobian with
/// `∂Z_{kγ}/∂F_{iα} = ε_{kil} ε_{γαδ} m_{lδ}`.
fn fill_cofactor_rows(out: &mut PhiJacobian, m: &Matrix3) {
    for k in 0..3 {
        for g in 0..3 {
            let row = &mut out.0[Z_OFFSET + 3 * k + g];
            for i in 0..3 {
                for a in 0..3 {
                    let mut s = 0.0;
                    for l in 0..3 {
                        let e1 = levi_civita(k, i, l);
                        if e1 == 0.0 {
                            continue;
                        }
                        for d in 0..3 {
                            let e2 = levi_civita(g, a, d);
                            if e2 != 0.0 {
                                s += e1 * e2 * m.0[l][d];
                            }
                        }
                    }
                    row[3 * i + a] = s;
                }
            }
        }
    }
}

/// First derivative `∂Φ^A/∂F_{iα}` at `f`.
pub fn dphi(f: &Matrix3) -> PhiJacobian {
    let mut out = PhiJacobian::ZERO;
    for (k, row) in out.0.iter_mut().take(9).enumerate() {
        row[k] = 1.0;
    }
    fill_cofactor_rows(&mut out, f);
    out.0[W_INDEX] = cof(f).to_flat();
    out
}

/// Directional derivative of [`dphi`] at `f` along `u`.
///
/// The `F` block is zero, the `Z` block depends only on `u`, and the `w` row
/// is `d cof(F)[u]`.
pub fn d2phi_contract(f: &Matrix3, u: &Matrix3) -> PhiJacobian {
    let mut out = PhiJacobian::ZERO;
    fill_cofactor_rows(&mut out, u);
    out.0[W_INDEX] = cof_derivative(f, u).to_flat();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u64) -> Matrix3 {
        // small LCG, enough for unit tests
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix3::from_fn(|_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn leibniz_det(f: &Matrix3) -> f64 {
        let perms = [
            ([0, 1, 2], 1.0),
            ([1, 2, 0], 1.0),
            ([2, 0, 1], 1.0),
            ([0, 2, 1], -1.0),
            ([2, 1, 0], -1.0),
            ([1, 0, 2], -1.0),
        ];
        perms
            .iter()
            .map(|(p, s)| s * f.0[0][p[0]] * f.0[1][p[1]] * f.0[2][p[2]])
            .sum()
    }

    #[test]
    fn cofactor_of_identity_and_diagonal() {
        assert_eq!(cof(&Matrix3::IDENTITY), Matrix3::IDENTITY);
        assert_eq!(cof(&Matrix3::diag([1.0, 2.0, 3.0])), Matrix3::diag([6.0, 3.0, 2.0]));
    }

    #[test]
    fn cofactor_identity_holds() {
        for seed in 0..200 {
            let f = sample(seed);
            let c = cof(&f);
            let d = det(&f);
            let lhs = c.transpose().matmul(&f);
            let rhs = f.matmul(&c.transpose());
            for i in 0..3 {
                for a in 0..3 {
                    let e = if i == a { d } else { 0.0 };
                    assert!((lhs.0[i][a] - e).abs() < 1e-13);
                    assert!((rhs.0[i][a] - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn determinant_matches_permutation_sum() {
        assert_eq!(det(&Matrix3::IDENTITY), 1.0);
        assert_eq!(det(&Matrix3::diag([1.0, 2.0, 3.0])), 6.0);
        for seed in 0..200 {
            let f = sample(seed);
            assert!((det(&f) - leibniz_det(&f)).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_examples() {
        let one = phi(&Matrix3::IDENTITY);
        assert_eq!(one, Xi19::from_blocks(&Matrix3::IDENTITY, &Matrix3::IDENTITY, 1.0));
        assert_eq!(phi(&Matrix3::ZERO), Xi19::ZERO);
        let d = Matrix3::diag([2.0, 1.0, 1.0]);
        assert_eq!(phi(&d), Xi19::from_blocks(&d, &Matrix3::diag([1.0, 2.0, 2.0]), 2.0));
    }

    #[test]
    fn phi_is_scale_covariant() {
        let f = sample(7);
        for s in [-2.0, -0.5, 0.0, 0.3, 3.0] {
            let lifted = phi(&(f * s));
            let base = phi(&f);
            let expect = Xi19::from_blocks(&(f * s), &(base.z_block() * (s * s)), base.w() * s * s * s);
            assert!((lifted - expect).max_abs() < 1e-13);
        }
    }

    #[test]
    fn dphi_structure() {
        let f = sample(3);
        let j = dphi(&f);
        for a in 0..9 {
            for col in 0..9 {
                assert_eq!(j.0[a][col], if a == col { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(j.0[W_INDEX], cof(&f).to_flat());
        assert_eq!(dphi(&Matrix3::IDENTITY).0[W_INDEX], Matrix3::IDENTITY.to_flat());
    }

    #[test]
    fn d2phi_at_identity_is_cofactor_derivative() {
        let u = sample(11);
        let j = d2phi_contract(&Matrix3::IDENTITY, &u);
        let expect = Matrix3::IDENTITY * u.trace() - u.transpose();
        let got = Matrix3::from_flat(&j.0[W_INDEX]);
        assert!((got - expect).max_abs() < 1e-15);
        for row in &j.0[..9] {
            assert!(row.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn contractions_are_mutually_transposed() {
        let j = dphi(&sample(5));
        let v = [0.3, -1.1, 0.7];
        let p = j.contract_velocity(&v);
        let mut q = [[0.0; 3]; XI_LEN];
        for (a, row) in q.iter_mut().enumerate() {
            for (b, x) in row.iter_mut().enumerate() {
                *x = ((a * 3 + b) as f64).sin();
            }
        }
        let lhs: f64 = p.iter().zip(q.iter()).map(|(r, s)| r[0] * s[0] + r[1] * s[1] + r[2] * s[2]).sum();
        let t = j.contract_flux_transpose(&q);
        let rhs = t[0] * v[0] + t[1] * v[1] + t[2] * v[2];
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
