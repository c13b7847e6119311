//! Dense complex matrix foundation.
//!
//! Everything downstream works with small dense operators: Hermitian control
//! terms, unitary frames, step operators and walk products. This module holds
//! the checked wrappers for those, a Hermitian eigensolver with deterministic
//! frames, functional calculus, Hilbert–Schmidt geometry and basis completion.
//!
//! Hermitian matrices are frequently flattened into real vectors of length
//! `n²` (see [`Hermitian::to_real_vector`]). The flattening is an isometry for
//! the real Hilbert–Schmidt inner product `Re Tr(A†B)`, so spans, projections
//! and Gram–Schmidt on Hermitian operators become ordinary real linear algebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type StateVector = DVector<Complex64>;
pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

/// Component threshold for picking canonical pivots inside an eigenspace.
const PIVOT_THRESHOLD: f64 = 1e-6;
/// Minimum residual for a standard basis element to enter a completion.
const COMPLETION_THRESHOLD: f64 = 1e-6;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Numerical tolerances of the matrix layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative bound on `max|H - H†|` accepted at construction.
    pub hermiticity: f64,
    /// Bound on `‖U†U - I‖_F / √n`.
    pub unitarity: f64,
    /// Relative gap below which eigenvalues share a cluster.
    pub eigen_cluster: f64,
    /// Relative Gram–Schmidt residual below which a control is pruned.
    pub prune: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-12,
            unitarity: 1e-10,
            eigen_cluster: 1e-9,
            prune: 1e-9,
        }
    }
}

fn check_square(m: &ComplexMatrix) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::Input(format!("matrix is {r}x{c}, expected square")));
    }
    if r == 0 {
        return Err(Error::Input("matrix has dimension 0".into()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    Ok(r)
}

fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Hermitian part `(M + M†)/2`.
fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// A Hermitian operator. The stored matrix is exactly Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermitian(ComplexMatrix);

impl Hermitian {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().hermiticity)
    }

    pub fn with_tolerance(m: ComplexMatrix, tol: f64) -> Result<Self> {
        check_square(&m)?;
        let scale = max_abs(&m);
        let defect = max_abs(&(&m - m.adjoint()));
        if defect > tol * scale {
            return Err(Error::Input(format!(
                "matrix is not Hermitian: max|H - H†| = {defect:.3e} (scale {scale:.3e})"
            )));
        }
        Ok(Self(hermitian_part(&m)))
    }

    /// Hermitian part of a computed matrix, for results that are Hermitian
    /// in exact arithmetic.
    pub(crate) fn symmetrize(m: ComplexMatrix) -> Self {
        Self(hermitian_part(&m))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| c64(x, 0.0)));
        Self(ComplexMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn kron(&self, other: &Hermitian) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Flatten into `n²` real coordinates: diagonal entries first, then
    /// `√2·Re` and `√2·Im` of each upper off-diagonal entry.
    pub fn to_real_vector(&self) -> RealVector {
        let n = self.dim();
        let mut v = Vec::with_capacity(n * n);
        for j in 0..n {
            v.push(self.0[(j, j)].re);
        }
        let r2 = std::f64::consts::SQRT_2;
        for j in 0..n {
            for k in j + 1..n {
                let z = self.0[(j, k)];
                v.push(r2 * z.re);
                v.push(r2 * z.im);
            }
        }
        RealVector::from_vec(v)
    }

    /// Inverse of [`Hermitian::to_real_vector`].
    pub fn from_real_vector(n: usize, v: &RealVector) -> Result<Self> {
        if v.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                found: v.len(),
            });
        }
        let mut m = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            m[(j, j)] = c64(v[j], 0.0);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut idx = n;
        for j in 0..n {
            for k in j + 1..n {
                let z = c64(h * v[idx], h * v[idx + 1]);
                m[(j, k)] = z;
                m[(k, j)] = z.conj();
                idx += 2;
            }
        }
        Ok(Self(m))
    }

    /// `Σ coeffs[i] · elements[i]`.
    pub fn linear_combination(coeffs: &[f64], elements: &[Hermitian]) -> Result<Self> {
        let n = elements
            .first()
            .map(Hermitian::dim)
            .ok_or_else(|| Error::Input("empty linear combination".into()))?;
        if coeffs.len() != elements.len() {
            return Err(Error::Dimension {
                expected: elements.len(),
                found: coeffs.len(),
            });
        }
        let mut m = ComplexMatrix::zeros(n, n);
        for (c, h) in coeffs.iter().zip(elements) {
            if h.dim() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: h.dim(),
                });
            }
            m += h.0.scale(*c);
        }
        Ok(Self(m))
    }
}

/// A unitary operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary(ComplexMatrix);

impl Unitary {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().unitarity)
    }

    pub fn with_tolerance(m: ComplexMatrix, tol: f64) -> Result<Self> {
        let n = check_square(&m)?;
        let defect = (m.adjoint() * &m - ComplexMatrix::identity(n, n)).norm();
        if defect > tol * (n as f64).sqrt() {
            return Err(Error::Input(format!(
                "matrix is not unitary: ‖U†U - I‖_F = {defect:.3e}"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// `U H U†`.
    pub fn conjugate(&self, h: &Hermitian) -> Hermitian {
        Hermitian::symmetrize(&self.0 * h.matrix() * self.0.adjoint())
    }

    /// `U diag(d) U†` for real `d`.
    pub fn with_diagonal(&self, d: &[f64]) -> Hermitian {
        self.conjugate(&Hermitian::from_real_diagonal(d))
    }
}

/// Ascending eigenvalues with an orthonormal eigenframe (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub frame: Unitary,
}

impl EigenSystem {
    pub fn reconstruct(&self) -> Hermitian {
        self.frame.with_diagonal(&self.eigenvalues)
    }

    /// Groups of consecutive indices whose eigenvalues agree within `tol`
    /// (absolute).
    pub fn clusters(&self, tol: f64) -> Vec<std::ops::Range<usize>> {
        cluster_sorted(&self.eigenvalues, tol)
    }
}

pub(crate) fn cluster_sorted(values: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > tol {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// `(AB + BA)/2`.
pub fn anticommutator(a: &Hermitian, b: &Hermitian) -> Result<Hermitian> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let ab = a.matrix() * b.matrix();
    let ba = b.matrix() * a.matrix();
    Ok(Hermitian::symmetrize((ab + ba).scale(0.5)))
}

pub fn eigensystem(h: &Hermitian) -> Result<EigenSystem> {
    eigensystem_with(h, &Tolerances::default())
}

/// Hermitian eigendecomposition with deterministic frames.
///
/// Within each eigenvalue cluster the columns are replaced by the canonical
/// basis of the eigenspace: the projections of `e_0, e_1, …` orthonormalized
/// in index order, each with a positive real pivot. Any two solvers that agree
/// on the eigenspaces therefore return the same frame.
pub fn eigensystem_with(h: &Hermitian, tol: &Tolerances) -> Result<EigenSystem> {
    let n = h.dim();
    let eig = SymmetricEigen::try_new(h.matrix().clone(), f64::EPSILON, 1000 * n.max(10))
        .ok_or_else(|| {
            Error::Numerical(format!(
                "Hermitian eigensolver did not converge (n = {n}, ‖H‖_F = {:.3e}, max|H_ij| = {:.3e})",
                h.norm(),
                max_abs(h.matrix())
            ))
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    let scale = eigenvalues
        .iter()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let mut frame = ComplexMatrix::zeros(n, n);
    for range in cluster_sorted(&eigenvalues, tol.eigen_cluster * scale) {
        let cols = vectors.columns(range.start, range.len()).into_owned();
        let canon = canonical_subspace_basis(&cols)?;
        frame.columns_mut(range.start, range.len()).copy_from(&canon);
    }
    Ok(EigenSystem {
        eigenvalues,
        frame: Unitary::with_tolerance(frame, 1e-8)?,
    })
}

/// Canonical orthonormal basis of the column span of `v` (which must have
/// orthonormal columns).
pub fn canonical_subspace_basis(v: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (n, k) = v.shape();
    let mut basis: Vec<StateVector> = Vec::with_capacity(k);
    for j in 0..n {
        if basis.len() == k {
            break;
        }
        let coeffs: StateVector = v.row(j).transpose().map(|z| z.conj());
        let mut w: StateVector = v * coeffs;
        for _ in 0..2 {
            for u in &basis {
                let proj = u.dotc(&w);
                w -= u * proj;
            }
        }
        let norm = w.norm();
        if norm > PIVOT_THRESHOLD {
            w /= c64(norm, 0.0);
            let pivot = w[j];
            w *= (pivot / pivot.norm()).conj();
            basis.push(w);
        }
    }
    if basis.len() != k {
        return Err(Error::Numerical(format!(
            "could not build a canonical basis for a {k}-dimensional subspace"
        )));
    }
    Ok(ComplexMatrix::from_columns(&basis))
}

/// `U f(Λ) U†`. Fails if `f` is not finite at some eigenvalue.
pub fn scalar_function<F: Fn(f64) -> f64>(h: &Hermitian, f: F) -> Result<Hermitian> {
    let eig = eigensystem(h)?;
    apply_on_spectrum(&eig, f)
}

/// Functional calculus on an existing decomposition.
pub fn apply_on_spectrum<F: Fn(f64) -> f64>(eig: &EigenSystem, f: F) -> Result<Hermitian> {
    let values = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let y = f(l);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::Domain { eigenvalue: l })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(eig.frame.with_diagonal(&values))
}

/// Hilbert–Schmidt inner product `Tr(A†B)`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<Complex64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// An ordered, Hilbert–Schmidt orthonormal set of Hermitian operators.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    pub elements: Vec<Hermitian>,
    /// The first `span_count` elements span the (non-pruned) controls.
    pub span_count: usize,
    /// Input control indices dropped as linearly dependent.
    pub pruned: Vec<usize>,
}

impl HermitianBasis {
    pub fn count(&self) -> usize {
        self.elements.len()
    }

    pub fn dim(&self) -> usize {
        self.elements.first().map_or(0, Hermitian::dim)
    }

    /// Real coordinate vectors of the elements as matrix columns.
    pub fn real_columns(&self) -> RealMatrix {
        real_columns(&self.elements)
    }
}

pub(crate) fn real_columns(elements: &[Hermitian]) -> RealMatrix {
    let vecs: Vec<RealVector> = elements.iter().map(Hermitian::to_real_vector).collect();
    RealMatrix::from_columns(&vecs)
}

/// Orthonormal basis of all Hermitian `n×n` matrices whose leading elements
/// span `controls`.
pub fn complete_basis(controls: &[Hermitian]) -> Result<HermitianBasis> {
    complete_basis_with(controls, &[], &Tolerances::default())
}

/// Like [`complete_basis`], but `preferred` candidates are tried before the
/// standard Hermitian basis when filling the complement.
pub fn complete_basis_with(
    controls: &[Hermitian],
    preferred: &[Hermitian],
    tol: &Tolerances,
) -> Result<HermitianBasis> {
    let n = controls
        .first()
        .map(Hermitian::dim)
        .ok_or_else(|| Error::Input("no controls given".into()))?;
    for h in controls.iter().chain(preferred) {
        if h.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                found: h.dim(),
            });
        }
    }
    let mut gs = GramSchmidt::new(n * n);
    let mut pruned = Vec::new();
    for (i, h) in controls.iter().enumerate() {
        if !gs.push_relative(h.to_real_vector(), tol.prune) {
            log::warn!("control {i} is linearly dependent on earlier controls; dropped");
            pruned.push(i);
        }
    }
    let span_count = gs.len();
    for h in preferred {
        gs.push_relative(h.to_real_vector(), tol.prune);
    }
    for j in 0..n * n {
        if gs.len() == n * n {
            break;
        }
        gs.push_absolute(RealVector::from_fn(n * n, |i, _| if i == j { 1.0 } else { 0.0 }), COMPLETION_THRESHOLD);
    }
    let elements = gs
        .into_vectors()
        .iter()
        .map(|v| Hermitian::from_real_vector(n, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(HermitianBasis {
        elements,
        span_count,
        pruned,
    })
}

/// Modified Gram–Schmidt with re-orthogonalization over real vectors.
#[derive(Debug, Clone)]
pub(crate) struct GramSchmidt {
    dim: usize,
    vectors: Vec<RealVector>,
}

impl GramSchmidt {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.vectors.len()
    }

    fn residual(&self, mut v: RealVector) -> RealVector {
        for _ in 0..2 {
            for u in &self.vectors {
                let p = u.dot(&v);
                v.axpy(-p, u, 1.0);
            }
        }
        v
    }

    /// Accept `v` if its residual exceeds `tol·‖v‖`.
    pub(crate) fn push_relative(&mut self, v: RealVector, tol: f64) -> bool {
        let norm = v.norm();
        self.push_absolute(v, tol * norm.max(f64::MIN_POSITIVE))
    }

    pub(crate) fn push_absolute(&mut self, v: RealVector, threshold: f64) -> bool {
        if self.vectors.len() == self.dim {
            return false;
        }
        let r = self.residual(v);
        let norm = r.norm();
        if norm > threshold && norm > 0.0 {
            self.vectors.push(r / norm);
            true
        } else {
            false
        }
    }

    pub(crate) fn into_vectors(self) -> Vec<RealVector> {
        self.vectors
    }
}

/// Numerical rank with singular values above `rel_tol·σ_max`.
pub(crate) fn real_rank(m: &RealMatrix, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Orthonormal basis (columns) of the null space of `m`, for singular values
/// at most `abs_tol`.
pub(crate) fn real_null_space(m: &RealMatrix, abs_tol: f64) -> RealMatrix {
    let cols = m.ncols();
    let padded = if m.nrows() < cols {
        let mut p = RealMatrix::zeros(cols, cols);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let null: Vec<RealVector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= abs_tol)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if null.is_empty() {
        RealMatrix::zeros(cols, 0)
    } else {
        RealMatrix::from_columns(&null)
    }
}

/// Pauli matrices and tensor products.
pub mod pauli {
    use super::{c64, ComplexMatrix, Hermitian};

    pub fn identity(n: usize) -> Hermitian {
        Hermitian::identity(n)
    }

    pub fn x() -> Hermitian {
        Hermitian::symmetrize(ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(0., 0.), c64(1., 0.), c64(1., 0.), c64(0., 0.)],
        ))
    }

    pub fn y() -> Hermitian {
        Hermitian::symmetrize(ComplexMatrix::from_row_slice(
            2,
            2,
            &[c64(0., 0.), c64(0., -1.), c64(0., 1.), c64(0., 0.)],
        ))
    }

    pub fn z() -> Hermitian {
        Hermitian::from_real_diagonal(&[1.0, -1.0])
    }

    /// Tensor product of single-qubit Paulis from a label like `"XI"`.
    pub fn string(label: &str) -> Hermitian {
        let mut out = Hermitian::identity(1);
        for ch in label.chars() {
            let p = match ch {
                'I' => identity(2),
                'X' => x(),
                'Y' => y(),
                'Z' => z(),
                other => panic!("unknown Pauli label {other}"),
            };
            out = out.kron(&p);
        }
        out
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    c64(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Random Hermitian matrix with Gaussian entries.
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Hermitian {
    let m = ComplexMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    Hermitian::symmetrize(m)
}

/// Haar-distributed unitary via phase-corrected QR.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Unitary {
    let m = ComplexMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            let mut col = q.column_mut(j);
            col *= phase;
        }
    }
    Unitary(q)
}

/// Random real orthogonal matrix (as a unitary).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Unitary {
    let m = RealMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    Unitary(q.map(|x| c64(x, 0.0)))
}

/// Random unit state vector.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> StateVector {
    let v = StateVector::from_fn(n, |_, _| complex_gaussian(rng));
    let norm = v.norm();
    v / c64(norm, 0.0)
}
