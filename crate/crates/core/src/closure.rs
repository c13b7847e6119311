//! Enumeration of anticommutation-closed control subspaces.
//!
//! A reversible schedule must stay inside a span of controls that is closed
//! under the Jordan product. Starting from the full control span, every
//! out-of-span structure form `Γ^(k)` is an obstruction; its Witt
//! decomposition (hyperbolic planes ⊕ null space ⊕ anisotropic part) shows
//! that `pᵀΓ^(k)p = 0` forces `p` into one isotropic line per hyperbolic plane
//! plus the null space. Each sign choice is a branch; the search recurses on
//! the branch subspace until the span closes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcore::{
    anticommutator, eigensystem, GramSchmidt, Hermitian, RealMatrix, RealVector,
};
use crate::structure::{compute_gamma, control_form, QuadraticForm};

/// Witt decomposition of a real quadratic form.
///
/// `isometry` maps canonical coordinates to control coordinates. Its columns
/// are, in order: one `(+, -)` pair per hyperbolic plane, the anisotropic
/// directions, then the null directions. In canonical coordinates the form is
/// `diag(1, -1, …, 1, -1, ±1, …, 0, …)`.
#[derive(Debug, Clone, Serialize)]
pub struct WittDecomposition {
    #[serde(skip)]
    pub isometry: RealMatrix,
    pub hyperbolic_count: usize,
    #[serde(skip)]
    pub null_basis: Vec<RealVector>,
    #[serde(skip)]
    pub aniso_basis: Vec<RealVector>,
    /// Sign of the form on each anisotropic direction.
    pub aniso_signature: Vec<i8>,
    pub positive: usize,
    pub negative: usize,
    pub null: usize,
    /// Spectrum of the form, ascending; records the rank decision.
    pub eigenvalues: Vec<f64>,
}

impl WittDecomposition {
    /// The canonical diagonal form.
    pub fn canonical_form(&self) -> RealMatrix {
        let d = self.isometry.ncols();
        let mut diag = Vec::with_capacity(d);
        for _ in 0..self.hyperbolic_count {
            diag.extend([1.0, -1.0]);
        }
        diag.extend(self.aniso_signature.iter().map(|&s| f64::from(s)));
        diag.resize(d, 0.0);
        RealMatrix::from_diagonal(&RealVector::from_vec(diag))
    }

    /// `‖T⁻ᵀ D T⁻¹ - Q‖_max`: how well the isometry reproduces `q`.
    pub fn reproduction_error(&self, q: &QuadraticForm) -> f64 {
        let Some(inv) = self.isometry.clone().try_inverse() else {
            return f64::INFINITY;
        };
        let rebuilt = inv.transpose() * self.canonical_form() * inv;
        (rebuilt - q.matrix()).amax()
    }
}

/// Decompose `q`; eigenvalues with `|λ| ≤ tol·max|λ|` count as null.
pub fn witt_decompose(q: &QuadraticForm, tol: f64) -> Result<WittDecomposition> {
    let d = q.dim();
    let herm = Hermitian::new(q.matrix().map(|x| crate::matcore::c64(x, 0.0)))?;
    let eig = eigensystem(&herm)?;
    let vec_of = |i: usize| -> RealVector { eig.frame.matrix().column(i).map(|z| z.re) };
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()));
    let threshold = tol * scale;

    // positives largest first, negatives most negative first
    let mut pos: Vec<usize> = (0..d)
        .filter(|&i| scale > 0.0 && eig.eigenvalues[i] > threshold)
        .collect();
    pos.reverse();
    let neg: Vec<usize> = (0..d)
        .filter(|&i| scale > 0.0 && eig.eigenvalues[i] < -threshold)
        .collect();
    let null: Vec<usize> = (0..d)
        .filter(|&i| scale == 0.0 || eig.eigenvalues[i].abs() <= threshold)
        .collect();

    let planes = pos.len().min(neg.len());
    let mut columns = Vec::with_capacity(d);
    for i in 0..planes {
        let (a, b) = (pos[i], neg[i]);
        columns.push(vec_of(a) / eig.eigenvalues[a].sqrt());
        columns.push(vec_of(b) / (-eig.eigenvalues[b]).sqrt());
    }
    let mut aniso_basis = Vec::new();
    let mut aniso_signature = Vec::new();
    for &i in pos[planes..].iter().chain(&neg[planes..]) {
        let l = eig.eigenvalues[i];
        let v = vec_of(i) / l.abs().sqrt();
        aniso_signature.push(if l > 0.0 { 1 } else { -1 });
        aniso_basis.push(v.clone());
        columns.push(v);
    }
    let null_basis: Vec<RealVector> = null.iter().map(|&i| vec_of(i)).collect();
    columns.extend(null_basis.iter().cloned());

    Ok(WittDecomposition {
        isometry: RealMatrix::from_columns(&columns),
        hyperbolic_count: planes,
        null_basis,
        aniso_basis,
        aniso_signature,
        positive: pos.len(),
        negative: neg.len(),
        null: null.len(),
        eigenvalues: eig.eigenvalues.clone(),
    })
}

/// One totally isotropic subspace picked from a Witt decomposition.
#[derive(Debug, Clone)]
pub struct Branch {
    /// `x_i = ±1` per hyperbolic plane.
    pub signs: Vec<i8>,
    /// Unit vectors spanning the branch, in control coordinates.
    pub subspace_basis: Vec<RealVector>,
}

impl Branch {
    /// `max |vᵀQw|` over basis pairs.
    pub fn form_residual(&self, q: &QuadraticForm) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.subspace_basis {
            for w in &self.subspace_basis {
                worst = worst.max(q.bilinear(v.as_slice(), w.as_slice()).abs());
            }
        }
        worst
    }
}

pub const DEFAULT_BRANCH_CAP: usize = 16;

/// All `2^N` branches: one isotropic line `T[1, x_i]` per hyperbolic plane,
/// plus the null space.
pub fn isotropic_branches(w: &WittDecomposition, cap: usize) -> Result<Vec<Branch>> {
    let planes = w.hyperbolic_count;
    if planes > cap {
        return Err(Error::Resource(format!(
            "{planes} hyperbolic planes exceed the branch cap of {cap}"
        )));
    }
    let mut out = Vec::with_capacity(1 << planes);
    for mask in 0u64..(1u64 << planes) {
        let signs: Vec<i8> = (0..planes)
            .map(|i| if mask >> i & 1 == 0 { 1 } else { -1 })
            .collect();
        let mut basis = Vec::with_capacity(planes + w.null_basis.len());
        for (i, &s) in signs.iter().enumerate() {
            let v = w.isometry.column(2 * i) + w.isometry.column(2 * i + 1) * f64::from(s);
            let norm = v.norm();
            basis.push(v / norm);
        }
        basis.extend(w.null_basis.iter().cloned());
        out.push(Branch {
            signs,
            subspace_basis: basis,
        });
    }
    Ok(out)
}

/// Orthonormal real columns spanning `basis`.
fn span_columns(basis: &[Hermitian]) -> RealMatrix {
    let n = basis[0].dim();
    let mut gs = GramSchmidt::new(n * n);
    for h in basis {
        gs.push_relative(h.to_real_vector(), 1e-9);
    }
    let vecs = gs.into_vectors();
    if vecs.is_empty() {
        RealMatrix::zeros(n * n, 0)
    } else {
        RealMatrix::from_columns(&vecs)
    }
}

/// Closure test: largest Frobenius norm of the out-of-span part of
/// `½{B_i, B_j}` over an orthonormalized basis of the span.
pub fn closure_check(basis: &[Hermitian], tol: f64) -> Result<(bool, f64)> {
    let first = basis
        .first()
        .ok_or_else(|| Error::Input("closure check needs a nonempty basis".into()))?;
    let n = first.dim();
    let span = span_columns(basis);
    let ortho: Vec<Hermitian> = span
        .column_iter()
        .map(|c| Hermitian::from_real_vector(n, &c.into_owned()))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..ortho.len() {
        for j in i..ortho.len() {
            let a = anticommutator(&ortho[i], &ortho[j])?.to_real_vector();
            let off = &a - &span * (span.transpose() * &a);
            worst = worst.max(off.norm());
        }
    }
    Ok((worst <= tol, worst))
}

/// One recursion step: which structure form was split and which branch taken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Choice {
    pub k: usize,
    pub signs: Vec<i8>,
    pub positive: usize,
    pub negative: usize,
    pub null: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedSubspace {
    /// `I` first, then an orthonormal basis of the traceless remainder.
    #[serde(skip)]
    pub matrix_basis: Vec<Hermitian>,
    pub closure_residual: f64,
    pub provenance: Vec<Choice>,
}

impl ClosedSubspace {
    pub fn dim(&self) -> usize {
        self.matrix_basis.len()
    }

    pub fn system_dim(&self) -> usize {
        self.matrix_basis[0].dim()
    }

    fn columns(&self) -> RealMatrix {
        span_columns(&self.matrix_basis)
    }

    /// Whether `h` lies in the span, up to `tol` in Frobenius norm.
    pub fn contains(&self, h: &Hermitian, tol: f64) -> bool {
        let s = self.columns();
        let v = h.to_real_vector();
        (&v - &s * (s.transpose() * &v)).norm() <= tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClosureOptions {
    pub closure_tol: f64,
    /// Relative null-eigenvalue tolerance for the Witt step.
    pub witt_tol: f64,
    pub branch_cap: usize,
    pub max_nodes: usize,
    /// Explore every violating `k` at each node instead of the smallest one.
    pub exhaustive: bool,
    /// Keep non-maximal subspaces in the result.
    pub keep_all: bool,
}

impl Default for ClosureOptions {
    fn default() -> Self {
        Self {
            closure_tol: 1e-8,
            witt_tol: 1e-9,
            branch_cap: DEFAULT_BRANCH_CAP,
            max_nodes: 10_000,
            exhaustive: false,
            keep_all: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosureResult {
    pub subspaces: Vec<ClosedSubspace>,
    pub nodes_visited: usize,
}

const SPAN_TOL: f64 = 1e-8;

/// `I` followed by an orthonormal basis of the rest of the span.
fn identity_first_basis(spanning: &[Hermitian]) -> Result<Vec<Hermitian>> {
    let n = spanning[0].dim();
    let id = Hermitian::identity(n);
    let mut gs = GramSchmidt::new(n * n);
    gs.push_relative(id.to_real_vector(), 1e-9);
    for h in spanning {
        gs.push_relative(h.to_real_vector(), 1e-9);
    }
    let mut out = vec![id];
    for v in gs.into_vectors().iter().skip(1) {
        out.push(Hermitian::from_real_vector(n, v)?);
    }
    Ok(out)
}

fn same_span(a: &RealMatrix, b: &RealMatrix) -> bool {
    if a.ncols() != b.ncols() {
        return false;
    }
    let pa = a * a.transpose();
    let pb = b * b.transpose();
    (pa - pb).norm() <= SPAN_TOL
}

fn contained_in(a: &RealMatrix, b: &RealMatrix) -> bool {
    (a - b * (b.transpose() * a)).norm() <= SPAN_TOL
}

struct Search<'a> {
    opts: &'a ClosureOptions,
    visited: Vec<RealMatrix>,
    found: Vec<(RealMatrix, ClosedSubspace)>,
    nodes: usize,
}

impl Search<'_> {
    fn explore(&mut self, basis: Vec<Hermitian>, provenance: Vec<Choice>) -> Result<()> {
        let cols = span_columns(&basis);
        if self.visited.iter().any(|v| same_span(v, &cols)) {
            return Ok(());
        }
        self.visited.push(cols.clone());
        self.nodes += 1;
        if self.nodes > self.opts.max_nodes {
            return Err(Error::Resource(format!(
                "closure search exceeded {} nodes",
                self.opts.max_nodes
            )));
        }

        let (closed, residual) = closure_check(&basis, self.opts.closure_tol)?;
        if closed {
            self.found.push((
                cols,
                ClosedSubspace {
                    matrix_basis: basis,
                    closure_residual: residual,
                    provenance,
                },
            ));
            return Ok(());
        }

        let gamma = compute_gamma(&basis)?;
        let r = gamma.control_count();
        let n = gamma.system_dim();
        let form_tol = self.opts.closure_tol / n as f64;
        let mut violating = Vec::new();
        for k in r..gamma.basis_size() {
            let q = control_form(&gamma, k)?;
            if !q.is_zero(form_tol) {
                violating.push((k, q));
                if !self.opts.exhaustive {
                    break;
                }
            }
        }
        if violating.is_empty() {
            return Err(Error::Numerical(format!(
                "span fails closure (residual {residual:.3e}) but no structure form violates"
            )));
        }

        for (k, q) in violating {
            let witt = witt_decompose(&q, self.opts.witt_tol)?;
            for branch in isotropic_branches(&witt, self.opts.branch_cap)? {
                let spanning = branch
                    .subspace_basis
                    .iter()
                    .map(|v| Hermitian::linear_combination(v.as_slice(), gamma.controls()))
                    .collect::<Result<Vec<_>>>()?;
                let next = if spanning.is_empty() {
                    vec![Hermitian::identity(n)]
                } else {
                    identity_first_basis(&spanning)?
                };
                let mut prov = provenance.clone();
                prov.push(Choice {
                    k,
                    signs: branch.signs.clone(),
                    positive: witt.positive,
                    negative: witt.negative,
                    null: witt.null,
                });
                self.explore(next, prov)?;
            }
        }
        Ok(())
    }

    fn partial_summary(&self) -> String {
        self.found
            .iter()
            .map(|(_, s)| format!("dim {} via {:?}", s.dim(), s.provenance.iter().map(|c| (c.k, c.signs.clone())).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Enumerate closed subspaces inside `span(I, controls)`.
///
/// Results are deduplicated by span projector and, unless
/// [`ClosureOptions::keep_all`] is set, reduced to the maximal ones. Order is
/// the depth-first discovery order, which is deterministic.
pub fn find_closed_subspaces(controls: &[Hermitian], opts: &ClosureOptions) -> Result<ClosureResult> {
    if controls.is_empty() {
        return Err(Error::Input("no controls given".into()));
    }
    let n = controls[0].dim();
    if let Some(bad) = controls.iter().find(|h| h.dim() != n) {
        return Err(Error::Dimension {
            expected: n,
            found: bad.dim(),
        });
    }
    let root = identity_first_basis(controls)?;
    let mut search = Search {
        opts,
        visited: Vec::new(),
        found: Vec::new(),
        nodes: 0,
    };
    if let Err(e) = search.explore(root, Vec::new()) {
        return Err(match e {
            Error::Resource(msg) => Error::Resource(format!(
                "{msg}; partial results: [{}]",
                search.partial_summary()
            )),
            other => other,
        });
    }

    let mut unique: Vec<(RealMatrix, ClosedSubspace)> = Vec::new();
    for (cols, sub) in search.found {
        if !unique.iter().any(|(c, _)| same_span(c, &cols)) {
            unique.push((cols, sub));
        }
    }
    let subspaces = if opts.keep_all {
        unique.into_iter().map(|(_, s)| s).collect()
    } else {
        let keep: Vec<bool> = unique
            .iter()
            .map(|(a, _)| {
                !unique
                    .iter()
                    .any(|(b, _)| b.ncols() > a.ncols() && contained_in(a, b))
            })
            .collect();
        unique
            .into_iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|((_, s), _)| s)
            .collect()
    };
    Ok(ClosureResult {
        subspaces,
        nodes_visited: search.nodes,
    })
}
