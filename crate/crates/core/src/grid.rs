//! Uniform periodic grid on the unit torus `[0,1)³`.
//!
//! Cells are stored axis-major with axis 0 slowest: the cell with integer
//! coordinates `(k0, k1, k2)` lives at `(k0·N + k1)·N + k2`, and sits at the
//! point `x = (k0, k1, k2)·dx`. Derivatives are second-order central
//! differences, which are exactly skew-adjoint under the midpoint quadrature
//! and commute with each other.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Matrix3, Xi19, XI_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::ConfigInvalid(format!("grid size N = {n} must be at least 2")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of cells, `N³`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(3)
    }

    #[inline]
    pub fn index(&self, k: [usize; 3]) -> usize {
        (k[0] * self.n + k[1]) * self.n + k[2]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        self.coords(idx).map(|k| k as f64 * self.dx())
    }

    /// Stride of one step along `axis` in the flat layout.
    #[inline]
    fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.n * self.n,
            1 => self.n,
            2 => 1,
            _ => panic!("axis {axis} out of range 0..3"),
        }
    }

    /// Flat indices of the `(minus, plus)` neighbours of `idx` along `axis`.
    #[inline]
    pub fn neighbours(&self, idx: usize, axis: usize) -> (usize, usize) {
        let stride = self.stride(axis);
        let k = self.coords(idx)[axis];
        let base = idx - k * stride;
        let n = self.n;
        (base + ((k + n - 1) % n) * stride, base + ((k + 1) % n) * stride)
    }
}

/// Values that can live on grid cells: reals, 3-vectors, 3×3 matrices and
/// extended states.
pub trait FieldValue: Copy + Send + Sync + 'static {
    const COMPONENTS: usize;
    const KIND: &'static str;

    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn sub(self, other: Self) -> Self;
    fn scale(self, s: f64) -> Self;
    fn push_components(&self, out: &mut Vec<f64>);
    fn from_components(c: &[f64]) -> Self;
    fn max_abs(&self) -> f64;

    /// `self + s·other`.
    #[inline]
    fn axpy(self, s: f64, other: Self) -> Self {
        self.add(other.scale(s))
    }
}

impl FieldValue for f64 {
    const COMPONENTS: usize = 1;
    const KIND: &'static str = "scalar";

    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn sub(self, other: Self) -> Self {
        self - other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn push_components(&self, out: &mut Vec<f64>) {
        out.push(*self);
    }
    fn from_components(c: &[f64]) -> Self {
        c[0]
    }
    fn max_abs(&self) -> f64 {
        self.abs()
    }
}

impl FieldValue for [f64; 3] {
    const COMPONENTS: usize = 3;
    const KIND: &'static str = "vector";

    fn zero() -> Self {
        [0.0; 3]
    }
    fn add(self, o: Self) -> Self {
        [self[0] + o[0], self[1] + o[1], self[2] + o[2]]
    }
    fn sub(self, o: Self) -> Self {
        [self[0] - o[0], self[1] - o[1], self[2] - o[2]]
    }
    fn scale(self, s: f64) -> Self {
        self.map(|x| x * s)
    }
    fn push_components(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self);
    }
    fn from_components(c: &[f64]) -> Self {
        [c[0], c[1], c[2]]
    }
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl FieldValue for Matrix3 {
    const COMPONENTS: usize = 9;
    const KIND: &'static str = "tensor";

    fn zero() -> Self {
        Matrix3::ZERO
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn push_components(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.to_flat());
    }
    fn from_components(c: &[f64]) -> Self {
        Matrix3::from_flat(&c[..9])
    }
    fn max_abs(&self) -> f64 {
        Matrix3::max_abs(self)
    }
}

impl FieldValue for Xi19 {
    const COMPONENTS: usize = XI_LEN;
    const KIND: &'static str = "xi";

    fn zero() -> Self {
        Xi19::ZERO
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn push_components(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.0);
    }
    fn from_components(c: &[f64]) -> Self {
        let mut x = Xi19::ZERO;
        x.0.copy_from_slice(&c[..XI_LEN]);
        x
    }
    fn max_abs(&self) -> f64 {
        Xi19::max_abs(self)
    }
}

/// Per-cell values on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    data: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<[f64; 3]>;
pub type TensorField = Field<Matrix3>;
pub type XiField = Field<Xi19>;

impl<T: FieldValue> Field<T> {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Grid, value: T) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ConfigInvalid(format!(
                "field has {} cells, grid expects {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Evaluates `f` at every cell position.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> T) -> Self {
        Self { grid, data: (0..grid.len()).map(|i| f(grid.position(i))).collect() }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(&T) -> U) -> Field<U> {
        Field { grid: self.grid, data: self.data.iter().map(f).collect() }
    }

    pub fn zip_map<U: FieldValue, V: FieldValue>(&self, other: &Field<U>, f: impl Fn(&T, &U) -> V) -> Field<V> {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Field { grid: self.grid, data: self.data.iter().zip(other.data.iter()).map(|(a, b)| f(a, b)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a.add(*b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a.sub(*b))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|a| a.scale(s))
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a.axpy(s, *b))
    }

    /// Largest absolute component over all cells.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.max_abs()))
    }

    /// All components, cell-major.
    pub fn components(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len() * T::COMPONENTS);
        for v in &self.data {
            v.push_components(&mut out);
        }
        out
    }

    pub fn from_components(grid: Grid, c: &[f64]) -> Result<Self> {
        if c.len() != grid.len() * T::COMPONENTS {
            return Err(Error::ConfigInvalid(format!(
                "expected {} components, got {}",
                grid.len() * T::COMPONENTS,
                c.len()
            )));
        }
        Ok(Self { grid, data: c.chunks_exact(T::COMPONENTS).map(T::from_components).collect() })
    }
}

impl<T> std::ops::Index<usize> for Field<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<usize> for Field<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Periodic central difference `(f_{k+1} − f_{k−1}) / (2 dx)` along `axis`
/// (0-based).
pub fn diff<T: FieldValue>(field: &Field<T>, axis: usize) -> Field<T> {
    let grid = field.grid;
    let inv = 0.5 / grid.dx();
    let data = (0..grid.len())
        .map(|idx| {
            let (m, p) = grid.neighbours(idx, axis);
            field.data[p].sub(field.data[m]).scale(inv)
        })
        .collect();
    Field { grid, data }
}

/// `gradient(u)_{iα} = D_α u_i`.
pub fn gradient(u: &VectorField) -> TensorField {
    let d = [diff(u, 0), diff(u, 1), diff(u, 2)];
    Field::from_vec(
        u.grid,
        (0..u.grid.len()).map(|c| Matrix3::from_fn(|i, a| d[a].data[c][i])).collect(),
    )
    .expect("same grid")
}

/// `divergence(T)_i = Σ_α D_α T_{iα}`.
pub fn divergence(t: &TensorField) -> VectorField {
    let grid = t.grid;
    let mut out = VectorField::zeros(grid);
    for axis in 0..3 {
        let column = t.map(|m| [m.0[0][axis], m.0[1][axis], m.0[2][axis]]);
        let d = diff(&column, axis);
        for (o, x) in out.data.iter_mut().zip(d.data.iter()) {
            *o = o.add(*x);
        }
    }
    out
}

/// Divergence of a vector flux, `Σ_α D_α q_α`.
pub fn divergence_vector(q: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(q.grid);
    for axis in 0..3 {
        let d = diff(&q.map(|v| v[axis]), axis);
        for (o, x) in out.data.iter_mut().zip(d.data.iter()) {
            *o += x;
        }
    }
    out
}

/// Largest `|D_β F_{iα} − D_α F_{iβ}|` over cells, rows and axis pairs.
pub fn curl_residual(f: &TensorField) -> f64 {
    let d = [diff(f, 0), diff(f, 1), diff(f, 2)];
    let mut worst = 0.0_f64;
    for c in 0..f.grid.len() {
        for i in 0..3 {
            for a in 0..3 {
                for b in (a + 1)..3 {
                    worst = worst.max((d[b].data[c].0[i][a] - d[a].data[c].0[i][b]).abs());
                }
            }
        }
    }
    worst
}

/// Deterministic pairwise summation with a fixed split order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Midpoint quadrature over the torus.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid.cell_volume() * pairwise_sum(&f.data)
}

/// `∫ a·b dx` with the Euclidean pairing of components.
pub fn inner_l2<T: FieldValue>(a: &Field<T>, b: &Field<T>) -> f64 {
    assert_eq!(a.grid, b.grid, "fields live on different grids");
    let (ca, cb) = (a.components(), b.components());
    let prods: Vec<f64> = ca.iter().zip(cb.iter()).map(|(x, y)| x * y).collect();
    a.grid.cell_volume() * pairwise_sum(&prods)
}

/// `‖f‖_{L^p}` for `p ≥ 1` (pointwise Euclidean norm of the components);
/// `p = ∞` gives the max norm.
pub fn norm_lp<T: FieldValue>(f: &Field<T>, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::ConfigInvalid(format!("Lp exponent {p} must be at least 1")));
    }
    let norms: Vec<f64> = f
        .data
        .iter()
        .map(|v| {
            let mut c = Vec::with_capacity(T::COMPONENTS);
            v.push_components(&mut c);
            c.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    if p.is_infinite() {
        return Ok(norms.iter().fold(0.0, |m: f64, x| m.max(*x)));
    }
    let powered: Vec<f64> = norms.iter().map(|x| x.powf(p)).collect();
    Ok((f.grid.cell_volume() * pairwise_sum(&powered)).powf(1.0 / p))
}

const SNAPSHOT_MAGIC: &str = "POLYELAST1";

/// Writes `POLYELAST1 <kind> <N> <components>\n` followed by the
/// components as little-endian `f64`, cell-major in grid order.
pub fn write_snapshot<T: FieldValue>(mut w: impl Write, field: &Field<T>) -> std::io::Result<()> {
    writeln!(w, "{SNAPSHOT_MAGIC} {} {} {}", T::KIND, field.grid.n, T::COMPONENTS)?;
    let mut buf = Vec::with_capacity(field.data.len() * T::COMPONENTS * 8);
    for x in field.components() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_snapshot<T: FieldValue>(r: impl Read) -> Result<Field<T>> {
    let mut r = std::io::BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| Error::Snapshot(e.to_string()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("bad header {:?}", header.trim_end())));
    }
    if parts[1] != T::KIND {
        return Err(Error::Snapshot(format!("expected kind {}, found {}", T::KIND, parts[1])));
    }
    let n: usize = parts[2].parse().map_err(|_| Error::Snapshot(format!("bad size {:?}", parts[2])))?;
    let comps: usize = parts[3].parse().map_err(|_| Error::Snapshot(format!("bad component count {:?}", parts[3])))?;
    if comps != T::COMPONENTS {
        return Err(Error::Snapshot(format!("expected {} components, found {comps}", T::COMPONENTS)));
    }
    let grid = Grid::new(n)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Snapshot(e.to_string()))?;
    if bytes.len() != grid.len() * comps * 8 {
        return Err(Error::Snapshot(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            grid.len() * comps * 8
        )));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Field::from_components(grid, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(Grid::new(1).is_err());
        assert!(Grid::new(2).is_ok());
    }

    #[test]
    fn indexing_round_trips_and_wraps() {
        let g = grid(5);
        for idx in 0..g.len() {
            assert_eq!(g.index(g.coords(idx)), idx);
        }
        let idx = g.index([0, 4, 2]);
        assert_eq!(g.neighbours(idx, 1), (g.index([0, 3, 2]), g.index([0, 0, 2])));
        assert_eq!(g.neighbours(idx, 0), (g.index([4, 4, 2]), g.index([1, 4, 2])));
    }

    #[test]
    fn diff_of_constant_is_zero() {
        let f = ScalarField::constant(grid(6), 3.5);
        for axis in 0..3 {
            assert!(diff(&f, axis).values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn diff_of_single_mode_matches_discrete_symbol() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let d = diff(&f, 0);
        let symbol = (2.0 * PI * g.dx()).sin() / (2.0 * PI * g.dx());
        for idx in 0..g.len() {
            let x = g.position(idx);
            let expect = 2.0 * PI * (2.0 * PI * x[0]).cos() * symbol;
            assert!((d[idx] - expect).abs() < 1e-12);
        }
        assert!(diff(&f, 1).max_abs() == 0.0);
    }

    #[test]
    fn integrals_of_simple_fields() {
        let g = grid(8);
        assert!((integrate(&ScalarField::constant(g, 1.0)) - 1.0).abs() < 1e-15);
        let s = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        assert!(integrate(&s).abs() < 1e-14);
        assert!(norm_lp(&s, 0.5).is_err());
    }

    #[test]
    fn gradient_and_divergence_of_constants_vanish() {
        let g = grid(4);
        let u = VectorField::constant(g, [1.0, -2.0, 0.5]);
        assert_eq!(gradient(&u).max_abs(), 0.0);
        let t = TensorField::constant(g, Matrix3::diag([1.0, 2.0, 3.0]));
        assert_eq!(divergence(&t).max_abs(), 0.0);
    }

    #[test]
    fn snapshot_round_trip_and_header() {
        let g = grid(3);
        let f = XiField::from_fn(g, |x| {
            let mut xi = Xi19::ZERO;
            xi.0[0] = x[0];
            xi.0[18] = x[2] - x[1];
            xi
        });
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &f).unwrap();
        assert!(buf.starts_with(b"POLYELAST1 xi 3 19\n"));
        assert_eq!(buf.len(), "POLYELAST1 xi 3 19\n".len() + 27 * 19 * 8);
        let back: XiField = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert!(read_snapshot::<[f64; 3]>(&buf[..]).is_err());
        assert!(read_snapshot::<Xi19>(&buf[..buf.len() - 1]).is_err());
    }
}
