//! Finite-dimensional complex-matrix substrate.
//!
//! States, observables and propagators all live on the full matrix algebra of
//! a `d`-dimensional Hilbert space. Every value here is immutable after
//! construction; constructors check the invariants of their type against a
//! [`Tolerances`] set.
//!
//! Units follow the `hbar = 1` convention: a propagator over `dt` is
//! `exp(-i h dt)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Numerical tolerances used by every validation in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub norm: f64,
    pub idempotency: f64,
    pub psd: f64,
    pub unitarity: f64,
    pub numeric: f64,
    /// Residual allowed in `sum_v w_v F_v^dag F_v = I`.
    pub normalization: f64,
    /// Branches with probability at or below this are impossible.
    pub zero_probability: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-9,
            norm: 1e-9,
            idempotency: 1e-9,
            psd: 1e-9,
            unitarity: 1e-10,
            numeric: 1e-10,
            normalization: 1e-9,
            zero_probability: 1e-12,
        }
    }
}

/// Dense complex matrix with finite entries.
///
/// Serializes as `{"rows", "cols", "re", "im"}` with row-major entry lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct ComplexMatrix(DMatrix<C64>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TryFrom<MatrixJson> for ComplexMatrix {
    type Error = Error;

    fn try_from(m: MatrixJson) -> Result<Self> {
        ComplexMatrix::from_re_im(m.rows, m.cols, &m.re, &m.im)
    }
}

impl From<ComplexMatrix> for MatrixJson {
    fn from(m: ComplexMatrix) -> Self {
        let (rows, cols) = m.0.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                re.push(m.0[(r, c)].re);
                im.push(m.0[(r, c)].im);
            }
        }
        MatrixJson { rows, cols, re, im }
    }
}

impl ComplexMatrix {
    /// Build from row-major entries.
    pub fn new(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    /// Build from separate row-major real and imaginary parts.
    pub fn from_re_im(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Dimension(format!(
                "re has {} entries but im has {}",
                re.len(),
                im.len()
            )));
        }
        let entries = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| C64::new(a, b))
            .collect();
        Self::new(rows, cols, entries)
    }

    /// Build from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, re: &[f64]) -> Result<Self> {
        Self::new(rows, cols, re.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerics("matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    /// Wrap a matrix produced by arithmetic on already-finite inputs.
    pub(crate) fn wrap(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.0[(r, c)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<Self> {
        if self.0.shape() != other.0.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.0.shape(),
                other.0.shape()
            )));
        }
        Ok(Self(&self.0 + &other.0))
    }

    pub fn try_mul(&self, other: &ComplexMatrix) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Self(&self.0 * &other.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Max-modulus entrywise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }

    /// `max |M - M^dag|` entrywise.
    pub fn hermiticity_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        max_abs_diff(&self.0, &self.0.adjoint())
    }

    /// `max |U^dag U - I|` entrywise.
    pub fn unitarity_residual(&self) -> f64 {
        let g = self.0.adjoint() * &self.0;
        max_abs_diff(&g, &DMatrix::identity(self.cols(), self.cols()))
    }

    pub fn kron(&self, other: &ComplexMatrix) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<C64> {
        let (r, c) = self.0.shape();
        (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| self.0[(i, j)])
            .collect()
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    /// Panics on shape mismatch; use [`ComplexMatrix::try_mul`] for checked products.
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl fmt::Display for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows() {
            let row: Vec<String> = (0..self.cols())
                .map(|c| {
                    let z = self.0[(r, c)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Square matrix equal to its adjoint within `hermiticity` tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HermitianOperator(ComplexMatrix);

impl HermitianOperator {
    pub fn new(m: ComplexMatrix, tol: &Tolerances) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let residual = m.hermiticity_residual();
        if residual > tol.hermiticity {
            return Err(Error::Domain(format!(
                "operator is not Hermitian (residual {residual:.3e})"
            )));
        }
        Ok(Self(m))
    }

    /// `(M + M^dag) / 2`, Hermitian by construction.
    pub fn symmetrized(m: &ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let h = (&m.0 + m.0.adjoint()) * C64::new(0.5, 0.0);
        Ok(Self(ComplexMatrix(h)))
    }

    pub fn identity(d: usize) -> Self {
        Self(ComplexMatrix::identity(d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(ComplexMatrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    /// Real linear combination of Hermitian operators of equal dimension.
    pub fn linear_combination(terms: &[(f64, &HermitianOperator)], dim: usize) -> Result<Self> {
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for (c, h) in terms {
            if h.dim() != dim {
                return Err(Error::Dimension(format!(
                    "expected dimension {dim}, got {}",
                    h.dim()
                )));
            }
            acc += h.0.as_dmatrix() * C64::new(*c, 0.0);
        }
        ComplexMatrix::from_dmatrix(acc).map(Self)
    }

    pub fn spectral(&self) -> Spectral {
        Spectral::of(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectral().values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Eigendecomposition `H = V diag(values) V^dag` of a Hermitian operator.
#[derive(Clone, Debug)]
pub struct Spectral {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Spectral {
    pub fn of(h: &HermitianOperator) -> Self {
        // Solver reads one triangle only, so feed it the exact Hermitian part.
        let m = h.0.as_dmatrix();
        let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    /// `V diag(f(lambda)) V^dag`.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let s = f(lambda);
            for i in 0..d {
                scaled[(i, j)] *= s;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i H dt)`.
    pub fn propagator(&self, dt: f64) -> ComplexMatrix {
        ComplexMatrix(self.apply(|lambda| C64::new(0.0, -lambda * dt).exp()))
    }
}

/// Unit vector in the Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket(DVector<C64>);

impl Ket {
    pub fn new(amplitudes: Vec<C64>, tol: &Tolerances) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Dimension("ket must have positive dimension".into()));
        }
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerics("ket has non-finite amplitudes".into()));
        }
        let v = DVector::from_vec(amplitudes);
        let n = v.norm();
        if (n - 1.0).abs() > tol.norm {
            return Err(Error::State(format!("ket norm is {n}, expected 1")));
        }
        Ok(Self(v))
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(v: DVector<C64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::State(format!("cannot normalize vector of norm {n}")));
        }
        Ok(Self(v.unscale(n)))
    }

    /// Computational basis vector `|k>`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::Dimension(format!(
                "basis index {k} out of range for dimension {dim}"
            )));
        }
        let mut v = DVector::zeros(dim);
        v[k] = ONE;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Ket) -> C64 {
        self.0.dotc(&other.0)
    }

    /// Phase-invariant overlap `|<self|other>|`.
    pub fn fidelity(&self, other: &Ket) -> f64 {
        self.inner(other).norm()
    }

    /// `<psi|Q psi>`, real part.
    pub fn expectation(&self, q: &HermitianOperator) -> f64 {
        let qv = q.matrix().as_dmatrix() * &self.0;
        self.0.dotc(&qv).re
    }
}

impl Serialize for Ket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct KetJson {
            re: Vec<f64>,
            im: Vec<f64>,
        }
        KetJson {
            re: self.0.iter().map(|z| z.re).collect(),
            im: self.0.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

/// Positive trace-one operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityOperator(ComplexMatrix);

impl DensityOperator {
    pub fn new(m: ComplexMatrix, tol: &Tolerances) -> Result<Self> {
        let h = HermitianOperator::new(m, tol).map_err(|e| match e {
            Error::Domain(msg) => Error::State(msg),
            other => other,
        })?;
        let tr = h.matrix().trace();
        if (tr.re - 1.0).abs() > tol.norm || tr.im.abs() > tol.norm {
            return Err(Error::State(format!("density trace is {tr}, expected 1")));
        }
        let min = h.min_eigenvalue();
        if min < -tol.psd {
            return Err(Error::State(format!(
                "density operator has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self(h.0))
    }

    pub(crate) fn wrap(m: ComplexMatrix) -> Self {
        Self(m)
    }

    /// Maximally mixed state `I/d`.
    pub fn maximally_mixed(d: usize) -> Self {
        Self(ComplexMatrix::identity(d).scale(C64::new(1.0 / d as f64, 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }
}

/// Hermitian idempotent with an outcome label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projector {
    pub label: String,
    pub matrix: ComplexMatrix,
}

impl Projector {
    pub fn new(matrix: ComplexMatrix, label: impl Into<String>, tol: &Tolerances) -> Result<Self> {
        let h = HermitianOperator::new(matrix, tol)?;
        let m = h.matrix().as_dmatrix();
        let residual = max_abs_diff(&(m * m), m);
        if residual > tol.idempotency {
            return Err(Error::Domain(format!(
                "projector is not idempotent (residual {residual:.3e})"
            )));
        }
        Ok(Self {
            label: label.into(),
            matrix: h.0,
        })
    }

    /// `|psi><psi|`.
    pub fn onto(psi: &Ket, label: impl Into<String>) -> Self {
        let v = psi.amplitudes();
        Self {
            label: label.into(),
            matrix: ComplexMatrix(v * v.adjoint()),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.trace().re.round().max(0.0) as usize
    }

    /// Unit vector spanning the range of a rank-one projector.
    ///
    /// Uses the column of largest norm, so the phase is fixed by that column.
    pub fn range_vector(&self) -> Result<Ket> {
        let m = self.matrix.as_dmatrix();
        let best = (0..m.ncols())
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
            .ok_or_else(|| Error::Dimension("empty projector".into()))?;
        Ket::normalized(m.column(best).into_owned())
    }
}

/// `Re tr(rho Q)`; fails if the discarded imaginary part exceeds `numeric`.
pub fn expect(rho: &DensityOperator, q: &HermitianOperator, tol: &Tolerances) -> Result<f64> {
    if rho.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "state has dimension {} but observable has dimension {}",
            rho.dim(),
            q.dim()
        )));
    }
    let r = rho.matrix().as_dmatrix();
    let m = q.matrix().as_dmatrix();
    let d = rho.dim();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += r[(i, j)] * m[(j, i)];
        }
    }
    if acc.im.abs() > tol.numeric {
        return Err(Error::Numerics(format!(
            "tr(rho Q) has imaginary part {:.3e}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// `|psi><psi|`.
pub fn ket_to_density(psi: &Ket, tol: &Tolerances) -> Result<DensityOperator> {
    let n = psi.norm();
    if (n - 1.0).abs() > tol.norm {
        return Err(Error::State(format!("ket norm is {n}, expected 1")));
    }
    let v = psi.amplitudes();
    Ok(DensityOperator(ComplexMatrix(v * v.adjoint())))
}

/// `exp(-i h dt)` by Hermitian eigendecomposition.
pub fn propagator_step(h: &HermitianOperator, dt: f64) -> Result<ComplexMatrix> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::Domain(format!(
            "propagator duration must be finite and nonnegative, got {dt}"
        )));
    }
    if dt == 0.0 {
        return Ok(ComplexMatrix::identity(h.dim()));
    }
    Ok(h.spectral().propagator(dt))
}

/// Result of a Choi-matrix positivity test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpReport {
    pub min_eigenvalue: f64,
    pub choi_dim: usize,
    pub passed: bool,
}

fn choi_report(choi: DMatrix<C64>, tol: &Tolerances) -> CpReport {
    let choi_dim = choi.nrows();
    let h = HermitianOperator(ComplexMatrix(choi));
    let min_eigenvalue = h.min_eigenvalue();
    CpReport {
        min_eigenvalue,
        choi_dim,
        passed: min_eigenvalue >= -tol.psd,
    }
}

/// Choi test for the map `rho -> sum_v F_v rho F_v^dag`.
///
/// The Choi matrix is `C = sum_{ij} |i><j| (x) Phi(|i><j|)`; for a Kraus family
/// it equals `sum_v w_v w_v^dag` with `w_v[(i, a)] = F_v[a, i]`.
pub fn check_complete_positivity(kraus: &[ComplexMatrix], tol: &Tolerances) -> Result<CpReport> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::Dimension("empty Kraus family".into()))?;
    let (d_out, d_in) = (first.rows(), first.cols());
    if let Some(bad) = kraus.iter().find(|f| f.rows() != d_out || f.cols() != d_in) {
        return Err(Error::Dimension(format!(
            "Kraus operators must share shape {d_out}x{d_in}, found {}x{}",
            bad.rows(),
            bad.cols()
        )));
    }
    let n = d_in * d_out;
    let mut choi = DMatrix::<C64>::zeros(n, n);
    for f in kraus {
        let m = f.as_dmatrix();
        let w = DVector::from_fn(n, |k, _| m[(k % d_out, k / d_out)]);
        choi += &w * w.adjoint();
    }
    Ok(choi_report(choi, tol))
}

/// Choi test for a raw superoperator acting on row-major vectorized matrices:
/// `vec(Phi(rho)) = S vec(rho)`, with `S` of shape `d_out^2 x d_in^2`.
pub fn check_superoperator_cp(
    superop: &ComplexMatrix,
    d_in: usize,
    d_out: usize,
    tol: &Tolerances,
) -> Result<CpReport> {
    if superop.rows() != d_out * d_out || superop.cols() != d_in * d_in {
        return Err(Error::Dimension(format!(
            "superoperator for {d_in} -> {d_out} must be {}x{}, got {}x{}",
            d_out * d_out,
            d_in * d_in,
            superop.rows(),
            superop.cols()
        )));
    }
    let s = superop.as_dmatrix();
    let n = d_in * d_out;
    let choi = DMatrix::from_fn(n, n, |r, c| {
        let (i, a) = (r / d_out, r % d_out);
        let (j, b) = (c / d_out, c % d_out);
        s[(a * d_out + b, i * d_in + j)]
    });
    Ok(choi_report(choi, tol))
}

/// Pauli matrices and other fixed qubit operators.
pub mod pauli {
    use super::{ComplexMatrix, C64};

    fn m(entries: [C64; 4]) -> ComplexMatrix {
        ComplexMatrix::new(2, 2, entries.to_vec()).expect("2x2 literal")
    }

    pub fn x() -> ComplexMatrix {
        let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        m([o, l, l, o])
    }

    pub fn y() -> ComplexMatrix {
        let o = C64::new(0.0, 0.0);
        m([o, C64::new(0.0, -1.0), C64::new(0.0, 1.0), o])
    }

    pub fn z() -> ComplexMatrix {
        let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        m([l, o, o, -l])
    }
}
