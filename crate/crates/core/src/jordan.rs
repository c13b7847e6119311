//! Splitting a closed control span into simple Jordan components.
//!
//! The finest block partition of the state space is read off the commutant
//! of the span: eigenspaces of a generic Hermitian commutant element are the
//! irreducible invariant subspaces. Irreducible subspaces on which the span
//! acts through the same simple ideal are grouped into one block, which is
//! then classified by its size and algebra dimension.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::closure::ClosedSubspace;
use crate::error::{Error, Result};
use crate::matcore::{
    c64, canonical_subspace_basis, eigensystem, real_null_space, real_rank, ComplexMatrix,
    Hermitian, RealMatrix, RealVector, Unitary,
};

/// Rows of the classification table of simple Jordan algebra representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeTag {
    /// `H_n(ℝ)` on `ℝ^n`.
    RealSym,
    /// `H_n(ℂ)` on `ℂ^n`.
    ComplexHerm,
    /// `H_n(ℂ)` realified on `ℝ^{2n}`.
    ComplexInReal,
    /// `H_n(ℍ)` on `ℂ^{2n}`.
    QuatInComplex,
    /// `H_n(ℍ)` realified on `ℝ^{4n}`.
    QuatInReal,
}

impl TypeTag {
    /// Preference order used to break ties.
    pub const ALL: [TypeTag; 5] = [
        TypeTag::RealSym,
        TypeTag::ComplexHerm,
        TypeTag::ComplexInReal,
        TypeTag::QuatInComplex,
        TypeTag::QuatInReal,
    ];

    pub fn multiplicity(self) -> usize {
        match self {
            TypeTag::RealSym | TypeTag::ComplexHerm => 1,
            TypeTag::ComplexInReal | TypeTag::QuatInComplex => 2,
            TypeTag::QuatInReal => 4,
        }
    }

    /// Dimension of the rank-`n` algebra.
    pub fn algebra_dim(self, n: usize) -> usize {
        match self {
            TypeTag::RealSym => n * (n + 1) / 2,
            TypeTag::ComplexHerm | TypeTag::ComplexInReal => n * n,
            TypeTag::QuatInComplex | TypeTag::QuatInReal => n * (2 * n - 1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TypeTag::RealSym => "H_n(R)",
            TypeTag::ComplexHerm => "H_n(C)",
            TypeTag::ComplexInReal => "H_n(C) in H_2n(R)",
            TypeTag::QuatInComplex => "H_n(H) in H_2n(C)",
            TypeTag::QuatInReal => "H_n(H) in H_4n(R)",
        }
    }
}

/// Result of matching a block against the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub type_tag: TypeTag,
    pub rank: usize,
    pub multiplicity: usize,
    /// Other rows that also fit, as `(type, rank)`.
    pub alternatives: Vec<(TypeTag, usize)>,
}

/// Match a block of size `m` carrying a `d`-dimensional algebra.
pub fn classify_block(m: usize, d: usize) -> Result<Classification> {
    let mut hits = Vec::new();
    if m >= 1 && d >= 1 {
        for tag in TypeTag::ALL {
            let mult = tag.multiplicity();
            if !m.is_multiple_of(mult) {
                continue;
            }
            let n = m / mult;
            if tag.algebra_dim(n) == d {
                hits.push((tag, n));
            }
        }
    }
    let Some(&(type_tag, rank)) = hits.first() else {
        return Err(Error::Classification { m, d });
    };
    let multiplicity = type_tag.multiplicity();
    let alternatives: Vec<_> = hits[1..].to_vec();
    if alternatives
        .iter()
        .any(|(t, _)| t.multiplicity() != multiplicity)
    {
        log::warn!("block (m={m}, d={d}) matches rows with different multiplicities: {hits:?}");
    }
    Ok(Classification {
        type_tag,
        rank,
        multiplicity,
        alternatives,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JordanBlock {
    /// Columns of the frame spanned by this block.
    pub state_indices: Range<usize>,
    pub type_tag: TypeTag,
    pub rank: usize,
    pub multiplicity: usize,
    pub algebra_dim: usize,
    /// Number of irreducible copies merged into the block.
    pub copies: usize,
}

impl JordanBlock {
    pub fn size(&self) -> usize {
        self.state_indices.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockDecomposition {
    #[serde(skip)]
    pub frame: Unitary,
    pub blocks: Vec<JordanBlock>,
    /// Largest off-block Frobenius mass over the rotated basis.
    pub off_block_mass: f64,
    pub warnings: Vec<String>,
}

impl BlockDecomposition {
    /// Number of simple components.
    pub fn count(&self) -> usize {
        self.blocks.len()
    }

    /// Frame columns of block `l`.
    pub fn block_columns(&self, l: usize) -> ComplexMatrix {
        let r = &self.blocks[l].state_indices;
        self.frame.matrix().columns(r.start, r.len()).into_owned()
    }

    /// `U† H U`.
    pub fn rotate(&self, h: &ComplexMatrix) -> ComplexMatrix {
        self.frame.matrix().adjoint() * h * self.frame.matrix()
    }

    /// Frobenius norm of the part of `U† H U` outside the diagonal blocks.
    pub fn off_block_norm(&self, h: &ComplexMatrix) -> f64 {
        let r = self.rotate(h);
        let mut mass = 0.0;
        for (a, ba) in self.blocks.iter().enumerate() {
            for (b, bb) in self.blocks.iter().enumerate() {
                if a == b {
                    continue;
                }
                for i in ba.state_indices.clone() {
                    for j in bb.state_indices.clone() {
                        mass += r[(i, j)].norm_sqr();
                    }
                }
            }
        }
        mass.sqrt()
    }
}

/// `Σ_l rank(B_l)`: how many distinct eigenvalues an element can carry.
pub fn spectrum_capacity(b: &BlockDecomposition) -> usize {
    b.blocks.iter().map(|blk| blk.rank).sum()
}

const NULL_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-8;
const COUPLING_TOL: f64 = 1e-8;
const MAX_ATTEMPTS: u64 = 5;
pub const DEFAULT_SEED: u64 = 0x6a6f_7264_616e;

/// Real coordinates of the Hermitian commutant of `elements`, as columns.
fn hermitian_commutant(elements: &[ComplexMatrix]) -> Result<RealMatrix> {
    let k = elements[0].nrows();
    let dim = k * k;
    let mut rows = RealMatrix::zeros(elements.len() * dim, dim);
    for j in 0..dim {
        let mut e = RealVector::zeros(dim);
        e[j] = 1.0;
        let a = Hermitian::from_real_vector(k, &e)?;
        let a = a.matrix();
        for (i, b) in elements.iter().enumerate() {
            // i[A, B] is Hermitian
            let c = (a * b - b * a) * c64(0.0, 1.0);
            let v = Hermitian::symmetrize(c).to_real_vector();
            rows.view_mut((i * dim, j), (dim, 1)).copy_from(&v);
        }
    }
    let sv = rows.clone().singular_values();
    if let Some(gap) = sv
        .iter()
        .filter(|&&s| s > NULL_TOL && s < 100.0 * NULL_TOL)
        .copied()
        .reduce(f64::min)
    {
        return Err(Error::Numerical(format!(
            "commutant rank is ambiguous: singular value {gap:.3e} near the null threshold"
        )));
    }
    Ok(real_null_space(&rows, NULL_TOL))
}

/// `Q† B Q` for each element.
fn restrict(elements: &[ComplexMatrix], q: &ComplexMatrix) -> Vec<ComplexMatrix> {
    elements.iter().map(|b| q.adjoint() * b * q).collect()
}

fn restricted_dim(elements: &[ComplexMatrix], qs: &[&ComplexMatrix]) -> usize {
    let cols: Vec<RealVector> = elements
        .iter()
        .map(|b| {
            let parts: Vec<f64> = qs
                .iter()
                .flat_map(|q| {
                    Hermitian::symmetrize(q.adjoint() * b * *q)
                        .to_real_vector()
                        .iter()
                        .copied()
                        .collect::<Vec<_>>()
                })
                .collect();
            RealVector::from_vec(parts)
        })
        .collect();
    real_rank(&RealMatrix::from_columns(&cols), RANK_TOL)
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Irreducible invariant subspaces from one commutant probe, or `None` if
/// the probe was not generic enough.
fn probe_split(
    elements: &[ComplexMatrix],
    commutant: &RealMatrix,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<ComplexMatrix>>> {
    let coeffs = RealVector::from_fn(commutant.ncols(), |_, _| StandardNormal.sample(rng));
    let probe = Hermitian::from_real_vector(n, &(commutant * coeffs))?;
    let eig = eigensystem(&probe)?;
    let spread = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, l| a.max(l.abs()))
        .max(1.0);
    let mut spaces = Vec::new();
    for range in eig.clusters(1e-8 * spread) {
        let cols = eig.frame.matrix().columns(range.start, range.len()).into_owned();
        let q = canonical_subspace_basis(&cols)?;
        let local = restrict(elements, &q);
        if hermitian_commutant(&local)?.ncols() != 1 {
            return Ok(None);
        }
        spaces.push(q);
    }
    Ok(Some(spaces))
}

fn support_start(q: &ComplexMatrix) -> usize {
    (0..q.nrows())
        .find(|&i| q.row(i).norm_squared() > 1e-8)
        .unwrap_or(q.nrows())
}

/// Block decomposition with the default probe seed.
pub fn block_decompose(v: &ClosedSubspace) -> Result<BlockDecomposition> {
    block_decompose_with(&v.matrix_basis, DEFAULT_SEED)
}

/// Finest block partition of a closed span given by `basis`.
pub fn block_decompose_with(basis: &[Hermitian], seed: u64) -> Result<BlockDecomposition> {
    let n = basis
        .first()
        .map(Hermitian::dim)
        .ok_or_else(|| Error::Input("empty basis".into()))?;
    let elements: Vec<ComplexMatrix> = basis
        .iter()
        .filter(|h| h.norm() > 0.0)
        .map(|h| h.matrix() / c64(h.norm(), 0.0))
        .collect();
    if elements.is_empty() {
        return Err(Error::Input("basis has no nonzero element".into()));
    }
    let commutant = hermitian_commutant(&elements)?;

    let mut spaces = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        if let Some(s) = probe_split(&elements, &commutant, n, &mut rng)? {
            spaces = Some(s);
            break;
        }
        log::debug!("commutant probe {attempt} not generic, retrying");
    }
    let spaces = spaces.ok_or_else(|| {
        Error::Numerical(format!(
            "no irreducible split after {MAX_ATTEMPTS} commutant probes"
        ))
    })?;

    let s = spaces.len();
    let dims: Vec<usize> = spaces
        .iter()
        .map(|q| restricted_dim(&elements, &[q]))
        .collect();
    let mut parent: Vec<usize> = (0..s).collect();
    for a in 0..s {
        for b in a + 1..s {
            let coupled = elements
                .iter()
                .any(|e| (spaces[a].adjoint() * e * &spaces[b]).norm() > COUPLING_TOL);
            let linked = dims[a] == dims[b]
                && restricted_dim(&elements, &[&spaces[a], &spaces[b]]) == dims[a];
            if coupled || linked {
                union(&mut parent, a, b);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..s {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|g| find(&mut parent, g[0]) == root) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    for g in &mut groups {
        g.sort_by_key(|&i| (support_start(&spaces[i]), i));
    }
    groups.sort_by_key(|g| (support_start(&spaces[g[0]]), g[0]));

    let mut columns = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(groups.len());
    let mut warnings = Vec::new();
    for g in &groups {
        let start = columns.len();
        for &i in g {
            columns.extend(spaces[i].column_iter().map(|c| c.into_owned()));
        }
        let m = columns.len() - start;
        let qs: Vec<&ComplexMatrix> = g.iter().map(|&i| &spaces[i]).collect();
        let d = restricted_dim(&elements, &qs);
        let class = match classify_block(m, d) {
            Ok(c) => c,
            Err(_) => {
                let copy = spaces[g[0]].ncols();
                if g.iter().any(|&i| spaces[i].ncols() != copy) {
                    return Err(Error::Classification { m, d });
                }
                let single = classify_block(copy, d)?;
                let msg = format!(
                    "block (m={m}, d={d}) matches no table row; classified as {} copies of {} with n={}",
                    g.len(),
                    single.type_tag.label(),
                    single.rank
                );
                log::warn!("{msg}");
                warnings.push(msg);
                Classification {
                    multiplicity: single.multiplicity * g.len(),
                    ..single
                }
            }
        };
        blocks.push(JordanBlock {
            state_indices: start..columns.len(),
            type_tag: class.type_tag,
            rank: class.rank,
            multiplicity: class.multiplicity,
            algebra_dim: d,
            copies: g.len(),
        });
    }
    let frame = Unitary::with_tolerance(ComplexMatrix::from_columns(&columns), 1e-8)?;
    let mut decomposition = BlockDecomposition {
        frame,
        blocks,
        off_block_mass: 0.0,
        warnings,
    };
    decomposition.off_block_mass = basis
        .iter()
        .map(|h| decomposition.off_block_norm(h.matrix()))
        .fold(0.0, f64::max);
    if decomposition.off_block_mass > 1e-8 {
        return Err(Error::Numerical(format!(
            "rotated basis leaves off-block mass {:.3e}",
            decomposition.off_block_mass
        )));
    }
    Ok(decomposition)
}
