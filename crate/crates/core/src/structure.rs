//! Anticommutator structure constants of a control set.
//!
//! For controls `H_0 = I, H_1, …, H_d` the Jordan product is expanded as
//!
//! ```text
//! ½{H_i, H_j} = Σ_{k<r} Γ_ij^k H_k  +  Σ_{k≥r} Γ_ij^k B_k
//! ```
//!
//! where `r = d + 1` and `B_r, …, B_{n²-1}` is a Hilbert–Schmidt orthonormal
//! completion of the control span. Coordinates `k < r` are therefore the
//! control coordinates themselves (`H_0` is plain `I`), and the reversibility
//! flow reads `∂x p_k = 2 pᵀΓ^(k)p + α δ_k0` for `k < r` together with the
//! constraints `pᵀΓ^(k)p = 0` for `k ≥ r`.

use nalgebra::LU;

use crate::error::{Error, Result};
use crate::matcore::{
    anticommutator, complete_basis_with, Hermitian, HermitianBasis, RealMatrix, RealVector,
    Tolerances,
};

/// Structure constants `Γ_ij^k` for control rows `i, j < r` and every basis
/// coordinate `k < n²`.
#[derive(Debug, Clone)]
pub struct GammaTensor {
    controls: Vec<Hermitian>,
    basis: HermitianBasis,
    /// Row-major `(i, j, k)`.
    values: Vec<f64>,
    /// `R = Bspanᵀ C`, maps control coordinates to orthonormal span coordinates.
    span_from_controls: RealMatrix,
    identity_prepended: bool,
    pruned: Vec<usize>,
}

/// A real symmetric form over control coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    matrix: RealMatrix,
}

impl QuadraticForm {
    pub fn new(matrix: RealMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Input("quadratic form must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(Error::Input(format!(
                "quadratic form is not symmetric (defect {asym:.3e})"
            )));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix: sym })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }

    pub fn evaluate(&self, p: &[f64]) -> f64 {
        self.bilinear(p, p)
    }

    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        let (p, q) = (RealVector::from_column_slice(p), RealVector::from_column_slice(q));
        p.dot(&(&self.matrix * q))
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.matrix.amax() <= tol
    }
}

fn is_identity(h: &Hermitian) -> bool {
    let n = h.dim();
    (h.matrix() - Hermitian::identity(n).matrix()).norm() <= 1e-12 * (n as f64)
}

impl GammaTensor {
    /// Number of control coordinates `r = d + 1`.
    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    /// Number of basis coordinates `n²`.
    pub fn basis_size(&self) -> usize {
        self.basis.count()
    }

    pub fn system_dim(&self) -> usize {
        self.basis.dim()
    }

    /// Controls actually used, `H_0 = I` first, dependent ones removed.
    pub fn controls(&self) -> &[Hermitian] {
        &self.controls
    }

    pub fn basis(&self) -> &HermitianBasis {
        &self.basis
    }

    pub fn identity_prepended(&self) -> bool {
        self.identity_prepended
    }

    /// Indices into the caller's control list that were dropped as dependent.
    pub fn pruned(&self) -> &[usize] {
        &self.pruned
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let r = self.control_count();
        let m = self.basis_size();
        self.values[(i * r + j) * m + k]
    }

    /// The operator carrying coordinate `k`: `H_k` for `k < r`, else `B_k`.
    pub fn coordinate_element(&self, k: usize) -> &Hermitian {
        if k < self.control_count() {
            &self.controls[k]
        } else {
            &self.basis.elements[k]
        }
    }

    /// Control coordinate indices `0..r`.
    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.control_count()).collect()
    }

    /// Expand an arbitrary Hermitian operator in the mixed coordinates.
    pub fn coordinates_of(&self, h: &Hermitian) -> Result<Vec<f64>> {
        if h.dim() != self.system_dim() {
            return Err(Error::Dimension {
                expected: self.system_dim(),
                found: h.dim(),
            });
        }
        Ok(self.coordinates_of_vector(&h.to_real_vector()))
    }

    fn coordinates_of_vector(&self, a: &RealVector) -> Vec<f64> {
        let r = self.control_count();
        let cols = self.basis.real_columns();
        let ortho = cols.transpose() * a;
        let span_part = ortho.rows(0, r).into_owned();
        let control_part = LU::new(self.span_from_controls.clone())
            .solve(&span_part)
            .expect("control span matrix is invertible after pruning");
        let mut out = Vec::with_capacity(cols.ncols());
        out.extend(control_part.iter());
        out.extend(ortho.iter().skip(r));
        out
    }

    /// Largest reconstruction error `‖½{H_i,H_j} - Σ_k Γ_ij^k E_k‖_F`.
    pub fn reconstruction_residual(&self) -> f64 {
        let r = self.control_count();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let target = anticommutator(&self.controls[i], &self.controls[j])
                    .expect("controls share a dimension");
                let mut acc = target.into_matrix();
                for k in 0..self.basis_size() {
                    let g = self.get(i, j, k);
                    if g != 0.0 {
                        acc -= self.coordinate_element(k).matrix().scale(g);
                    }
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    /// `pᵀ Γ^(k) p` for every coordinate `k`.
    pub fn quadratic_values(&self, p: &[f64]) -> Vec<f64> {
        let r = self.control_count();
        let m = self.basis_size();
        let mut out = vec![0.0; m];
        for i in 0..r {
            if p[i] == 0.0 {
                continue;
            }
            for j in 0..r {
                let w = p[i] * p[j];
                if w == 0.0 {
                    continue;
                }
                let row = &self.values[(i * r + j) * m..(i * r + j + 1) * m];
                for (o, g) in out.iter_mut().zip(row) {
                    *o += w * g;
                }
            }
        }
        out
    }
}

/// Structure constants of `controls` with default tolerances.
pub fn compute_gamma(controls: &[Hermitian]) -> Result<GammaTensor> {
    compute_gamma_with(controls, &Tolerances::default())
}

pub fn compute_gamma_with(controls: &[Hermitian], tol: &Tolerances) -> Result<GammaTensor> {
    let n = controls
        .first()
        .map(Hermitian::dim)
        .ok_or_else(|| Error::Input("no controls given".into()))?;
    for h in controls {
        if h.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                found: h.dim(),
            });
        }
    }
    let identity_prepended = !is_identity(&controls[0]);
    let mut all = Vec::with_capacity(controls.len() + 1);
    if identity_prepended {
        all.push(Hermitian::identity(n));
    }
    all.extend(controls.iter().cloned());

    // Anticommutators go first in the completion so that off-span products
    // get basis elements aligned with them.
    let mut products = Vec::new();
    for i in 0..all.len() {
        for j in i..all.len() {
            products.push(anticommutator(&all[i], &all[j])?);
        }
    }
    let basis = complete_basis_with(&all, &products, tol)?;
    let offset = usize::from(identity_prepended);
    if basis.pruned.first() == Some(&0) {
        return Err(Error::Numerical("identity control was pruned".into()));
    }
    let pruned: Vec<usize> = basis.pruned.iter().map(|&i| i - offset).collect();
    let kept: Vec<Hermitian> = all
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !basis.pruned.contains(i))
        .map(|(_, h)| h)
        .collect();

    let r = kept.len();
    let cols = basis.real_columns();
    let span = cols.columns(0, r).into_owned();
    let control_cols = crate::matcore::real_columns(&kept);
    let span_from_controls = span.transpose() * &control_cols;

    let mut tensor = GammaTensor {
        controls: kept,
        basis,
        values: Vec::new(),
        span_from_controls,
        identity_prepended,
        pruned,
    };
    let m = tensor.basis_size();
    let mut values = vec![0.0; r * r * m];
    for i in 0..r {
        for j in i..r {
            let a = anticommutator(&tensor.controls[i], &tensor.controls[j])?;
            let coords = tensor.coordinates_of_vector(&a.to_real_vector());
            for (k, g) in coords.into_iter().enumerate() {
                values[(i * r + j) * m + k] = g;
                values[(j * r + i) * m + k] = g;
            }
        }
    }
    tensor.values = values;
    Ok(tensor)
}

/// The symmetric matrix `Γ^(k)` over control indices.
pub fn control_form(gamma: &GammaTensor, k: usize) -> Result<QuadraticForm> {
    if k >= gamma.basis_size() {
        return Err(Error::Input(format!(
            "basis index {k} out of range 0..{}",
            gamma.basis_size()
        )));
    }
    let r = gamma.control_count();
    QuadraticForm::new(RealMatrix::from_fn(r, r, |i, j| gamma.get(i, j, k)))
}

/// `max_{k ∉ keep} |pᵀ Γ^(k) p|`.
pub fn constraint_residual(p: &[f64], gamma: &GammaTensor, keep: &[usize]) -> Result<f64> {
    if p.len() != gamma.control_count() {
        return Err(Error::Dimension {
            expected: gamma.control_count(),
            found: p.len(),
        });
    }
    Ok(gamma
        .quadratic_values(p)
        .into_iter()
        .enumerate()
        .filter(|(k, _)| !keep.contains(k))
        .fold(0.0, |acc, (_, v)| acc.max(v.abs())))
}
