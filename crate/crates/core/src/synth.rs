//! Achievability of a target two-outcome measurement and schedule synthesis.
//!
//! A target `M1` is realizable when its positive part `P1 = (M1†M1)^{1/2}`
//! lies in the closed control algebra with spectrum strictly inside `(0, 1)`.
//! Each eigenvalue `λ_i` is then produced by an eigenflow center `c_i`, found
//! against the exact discrete walk product. A non-positive `M1` is handled by
//! a polar split into `W1·P1`, with `W1` applied conditionally afterwards.

use serde::Serialize;

use crate::dynamics::{derive_scale, CenterBlock, ClosedForm, EpsilonSchedule, CENTER_CAP};
use crate::error::{Error, Result};
use crate::jordan::{spectrum_capacity, BlockDecomposition};
use crate::matcore::{
    c64, cluster_sorted, eigensystem, ComplexMatrix, Hermitian, StateVector, Unitary,
};
use crate::walk::{endpoint_pair, total_walk_operator};

/// A requested `M1`; `M2 = (I - M1†M1)^{1/2}` is implied.
#[derive(Debug, Clone)]
pub struct TargetMeasurement {
    pub m1: ComplexMatrix,
    pub tolerance: f64,
}

impl TargetMeasurement {
    pub fn new(m1: ComplexMatrix, tolerance: f64) -> Result<Self> {
        if !m1.is_square() {
            return Err(Error::Input(format!("target must be square, got {:?}", m1.shape())));
        }
        if m1.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Input("target has non-finite entries".into()));
        }
        if !(tolerance > 0.0 && tolerance < 0.5) {
            return Err(Error::Input(format!("tolerance must lie in (0, 0.5), got {tolerance}")));
        }
        Ok(Self { m1, tolerance })
    }

    pub fn dim(&self) -> usize {
        self.m1.nrows()
    }

    /// `(M1†M1)^{1/2}`.
    pub fn positive_part(&self) -> Result<Hermitian> {
        psd_sqrt(&(self.m1.adjoint() * &self.m1))
    }
}

fn psd_sqrt(m: &ComplexMatrix) -> Result<Hermitian> {
    let h = Hermitian::with_tolerance(m.clone(), 1e-9 * (1.0 + m.norm()))?;
    let eig = eigensystem(&h)?;
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    Ok(eig.frame.with_diagonal(&roots))
}

/// Eigenvalues of the target restricted to one block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockAssignment {
    pub block: usize,
    pub values: Vec<f64>,
    pub multiplicities: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AchievabilityReport {
    pub achievable: bool,
    pub block_assignment: Vec<BlockAssignment>,
    pub violations: Vec<String>,
    /// `Σ_l rank(B_l)` of the decomposition.
    pub spectrum_count: usize,
    /// Distinct eigenvalues of the target's positive part.
    pub distinct_values: usize,
    /// Whether `M1` differs from its positive part, so that a polar plan is needed.
    pub needs_polar: bool,
}

pub const VIOLATION_INTERVAL: &str = "eigenvalue outside open interval";
pub const VIOLATION_CAPACITY: &str = "spectrum capacity";
pub const VIOLATION_MULTIPLICITY: &str = "eigenvalue multiplicity";
pub const VIOLATION_BLOCKS: &str = "frame mixes blocks";
pub const VIOLATION_ALGEBRA: &str = "outside control algebra";
pub const VIOLATION_DIMENSION: &str = "dimension mismatch";

/// Check the target against a block decomposition of the control algebra
/// spanned by `algebra`. Every failed clause is listed.
pub fn check_achievable(
    target: &TargetMeasurement,
    blocks: &BlockDecomposition,
    algebra: &[Hermitian],
) -> AchievabilityReport {
    let tol = target.tolerance;
    let mut report = AchievabilityReport {
        achievable: false,
        block_assignment: Vec::new(),
        violations: Vec::new(),
        spectrum_count: spectrum_capacity(blocks),
        distinct_values: 0,
        needs_polar: false,
    };
    let n = target.dim();
    if blocks.frame.dim() != n || algebra.iter().any(|h| h.dim() != n) {
        report.violations.push(format!(
            "{VIOLATION_DIMENSION}: target is {n}x{n}, algebra acts on {}",
            blocks.frame.dim()
        ));
        return report;
    }
    let p1 = match target.positive_part() {
        Ok(p) => p,
        Err(e) => {
            report.violations.push(format!("positive part unavailable: {e}"));
            return report;
        }
    };
    report.needs_polar = (&target.m1 - p1.matrix()).norm() > 1e-10 * (1.0 + p1.norm());

    let eig = match eigensystem(&p1) {
        Ok(e) => e,
        Err(e) => {
            report.violations.push(format!("eigendecomposition failed: {e}"));
            return report;
        }
    };
    let cluster_tol = tol.min(1e-6);
    report.distinct_values = cluster_sorted(&eig.eigenvalues, cluster_tol).len();
    for &l in &eig.eigenvalues {
        if !(l > tol && l < 1.0 - tol) {
            report
                .violations
                .push(format!("{VIOLATION_INTERVAL}: {l} not in ({tol}, {})", 1.0 - tol));
        }
    }
    if report.distinct_values > report.spectrum_count {
        report.violations.push(format!(
            "{VIOLATION_CAPACITY}: {} distinct values exceed capacity {}",
            report.distinct_values, report.spectrum_count
        ));
    }

    let off = blocks.off_block_norm(p1.matrix());
    if off > 1e-8 * (1.0 + p1.norm()) {
        report
            .violations
            .push(format!("{VIOLATION_BLOCKS}: off-block mass {off:.3e}"));
    }
    let rotated = blocks.rotate(p1.matrix());
    for (l, blk) in blocks.blocks.iter().enumerate() {
        let r = &blk.state_indices;
        let sub = rotated.view((r.start, r.start), (r.len(), r.len())).into_owned();
        let Ok(sub_eig) = Hermitian::with_tolerance(sub, 1e-8).and_then(|h| eigensystem(&h)) else {
            report.violations.push(format!("block {l}: restriction is not Hermitian"));
            continue;
        };
        let clusters = cluster_sorted(&sub_eig.eigenvalues, cluster_tol);
        let values: Vec<f64> = clusters
            .iter()
            .map(|c| sub_eig.eigenvalues[c.clone()].iter().sum::<f64>() / c.len() as f64)
            .collect();
        let multiplicities: Vec<usize> = clusters.iter().map(|c| c.len()).collect();
        for (v, m) in values.iter().zip(&multiplicities) {
            if m % blk.multiplicity != 0 {
                report.violations.push(format!(
                    "{VIOLATION_MULTIPLICITY}: value {v} occurs {m} times in block {l} of multiplicity {}",
                    blk.multiplicity
                ));
            }
        }
        if values.len() > blk.rank {
            report.violations.push(format!(
                "{VIOLATION_CAPACITY}: block {l} carries {} distinct values, rank {}",
                values.len(),
                blk.rank
            ));
        }
        report.block_assignment.push(BlockAssignment {
            block: l,
            values,
            multiplicities,
        });
    }

    if !algebra.is_empty() {
        let residual = span_residual(algebra, &p1);
        if residual > 1e-8 * (1.0 + p1.norm()) {
            report
                .violations
                .push(format!("{VIOLATION_ALGEBRA}: distance {residual:.3e} from the span"));
        }
    }
    report.achievable = report.violations.is_empty();
    report
}

/// Frobenius distance from `h` to the real span of `algebra`.
fn span_residual(algebra: &[Hermitian], h: &Hermitian) -> f64 {
    let cols = crate::matcore::real_columns(algebra);
    let svd = cols.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    let keep: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * top)
        .map(|i| u.column(i).into_owned())
        .collect();
    let v = h.to_real_vector();
    let mut r = v.clone();
    for q in &keep {
        r -= q * q.dot(&v);
    }
    r.norm()
}

/// Per-slot endpoint products of the discrete walk for one eigenflow.
fn slot_products(c: f64, x_max: f64, delta: f64) -> (f64, f64) {
    let s = derive_scale().s;
    let steps = (x_max / delta).round() as usize;
    let (mut u, mut v) = (1.0f64, 1.0f64);
    for j in 0..steps {
        let x = j as f64 * delta;
        let dp = s * (x - c).tanh();
        let dm = s * (-x - c).tanh();
        u *= (delta * dp).cos() - (delta * dp).sin();
        v *= (delta * dm).cos() + (delta * dm).sin();
    }
    (u, v)
}

/// Least-squares `(a², b²)` for `a²u_i² + b²v_i² ≈ 1`, minimum norm when
/// the system is rank one.
fn normalization(products: &[(f64, f64)]) -> (f64, f64) {
    let (mut g11, mut g12, mut g22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v) in products {
        let (uu, vv) = (u * u, v * v);
        g11 += uu * uu;
        g12 += uu * vv;
        g22 += vv * vv;
        r1 += uu;
        r2 += vv;
    }
    let gram = nalgebra::Matrix2::new(g11, g12, g12, g22);
    let sol = gram
        .pseudo_inverse(1e-12 * gram.norm())
        .map(|p| p * nalgebra::Vector2::new(r1, r2))
        .unwrap_or_else(|_| nalgebra::Vector2::new(f64::NAN, f64::NAN));
    (sol[0], sol[1])
}

fn completeness(products: &[(f64, f64)], a2: f64, b2: f64) -> f64 {
    products
        .iter()
        .map(|(u, v)| (a2 * u * u + b2 * v * v - 1.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Centers and the endpoint data they produce.
#[derive(Debug, Clone, Serialize)]
pub struct CenterSolution {
    pub centers: Vec<f64>,
    /// Endpoint eigenvalues the centers produce on the discrete walk.
    pub predicted: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub completeness_residual: f64,
    pub iterations: usize,
}

pub const MAX_ITERATIONS: usize = 100;
const CENTER_TOL: f64 = 1e-10;
pub const COMPLETENESS_LIMIT: f64 = 1e-4;

/// Bisection for a decreasing function `f` on `[-CENTER_CAP, CENTER_CAP]`.
fn bisect_decreasing(target: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut lo, mut hi) = (-CENTER_CAP, CENTER_CAP);
    if !(target < f(lo) && target > f(hi)) {
        return None;
    }
    while hi - lo > CENTER_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Solve for flow centers so that the discrete walk on `[-X, X]` with step
/// `delta` ends in `M1` eigenvalues `lambdas` (one entry per slot).
pub fn centers_from_eigenvalues(lambdas: &[f64], x_max: f64, delta: f64) -> Result<CenterSolution> {
    if lambdas.is_empty() {
        return Err(Error::Input("no eigenvalues given".into()));
    }
    if let Some(&bad) = lambdas.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Input(format!("eigenvalue {bad} outside (0, 1)")));
    }
    let ratio = x_max / delta;
    if !(delta > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 0.5 {
        return Err(Error::Input(format!("X = {x_max} must be a positive multiple of delta = {delta}")));
    }
    let saturation = |l: f64| Error::Saturation {
        lambda: l,
        cap: CENTER_CAP,
    };

    let spread = lambdas.iter().fold(0.0_f64, |m, l| m.max((l - lambdas[0]).abs()));
    if spread <= 1e-14 {
        // one distinct value: the normalization itself moves with the center
        let l = lambdas[0];
        let lam = |c: f64| {
            let p = slot_products(c, x_max, delta);
            let (a2, _) = normalization(&[p]);
            (a2.max(0.0)).sqrt() * p.0
        };
        let c = bisect_decreasing(l, lam).ok_or_else(|| saturation(l))?;
        let p = slot_products(c, x_max, delta);
        let (a2, b2) = normalization(&[p]);
        let products = vec![p; lambdas.len()];
        return Ok(CenterSolution {
            centers: vec![c; lambdas.len()],
            predicted: vec![a2.sqrt() * p.0; lambdas.len()],
            a: a2.sqrt(),
            b: b2.sqrt(),
            completeness_residual: completeness(&products, a2, b2),
            iterations: 1,
        });
    }

    // continuum guess: λ² = (1 - tanh X · tanh c) / 2
    let mut centers: Vec<f64> = lambdas
        .iter()
        .map(|l| ((1.0 - 2.0 * l * l) / x_max.tanh()).clamp(-0.999_999, 0.999_999).atanh())
        .map(|c| c.clamp(-CENTER_CAP, CENTER_CAP))
        .collect();
    let start: Vec<_> = centers.iter().map(|&c| slot_products(c, x_max, delta)).collect();
    let mut a = normalization(&start).0.max(f64::MIN_POSITIVE).sqrt();
    let mut iterations = 0;
    let mut converged = false;
    let mut stuck: Option<f64> = None;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        stuck = None;
        let mut change: f64 = 0.0;
        for (c, &l) in centers.iter_mut().zip(lambdas) {
            let next = match bisect_decreasing(l, |x| a * slot_products(x, x_max, delta).0) {
                Some(v) => v,
                None => {
                    stuck = Some(l);
                    if l / a >= slot_products(-CENTER_CAP, x_max, delta).0 {
                        -CENTER_CAP
                    } else {
                        CENTER_CAP
                    }
                }
            };
            change = change.max((next - *c).abs());
            *c = next;
        }
        let products: Vec<_> = centers.iter().map(|&c| slot_products(c, x_max, delta)).collect();
        let (a2, _) = normalization(&products);
        if !(a2 > 0.0) {
            return Err(Error::Normalization {
                residual: f64::INFINITY,
                limit: COMPLETENESS_LIMIT,
            });
        }
        let next_a = a2.sqrt();
        let a_change = (next_a - a).abs() / a;
        a = next_a;
        if change <= CENTER_TOL && a_change <= 1e-13 {
            converged = true;
            break;
        }
    }
    if let Some(l) = stuck {
        return Err(saturation(l));
    }
    if !converged {
        log::warn!("center iteration stopped after {MAX_ITERATIONS} rounds");
    }
    let products: Vec<_> = centers.iter().map(|&c| slot_products(c, x_max, delta)).collect();
    let (a2, b2) = normalization(&products);
    let residual = completeness(&products, a2, b2);
    if residual > COMPLETENESS_LIMIT {
        return Err(Error::Normalization {
            residual,
            limit: COMPLETENESS_LIMIT,
        });
    }
    Ok(CenterSolution {
        predicted: products.iter().map(|p| a2.sqrt() * p.0).collect(),
        centers,
        a: a2.sqrt(),
        b: b2.sqrt(),
        completeness_residual: residual,
        iterations,
    })
}

/// A synthesized schedule and its roundtrip through the walk.
#[derive(Debug, Clone, Serialize)]
pub struct Synthesis {
    pub target_eigenvalues: Vec<f64>,
    pub solution: CenterSolution,
    /// `M1` eigenvalues recovered from the rebuilt walk, in frame order.
    pub recovered: Vec<f64>,
    pub roundtrip_error: f64,
    #[serde(skip)]
    pub schedule: EpsilonSchedule,
}

/// Build a closed-form schedule in the eigenframe of `P1` and verify it by
/// running the exact walk products and endpoint normalization.
pub fn synthesize(target: &TargetMeasurement, x_max: f64, delta: f64) -> Result<Synthesis> {
    let p1 = target.positive_part()?;
    let eig = eigensystem(&p1)?;
    let mut lambdas = eig.eigenvalues.clone();
    // equal eigenvalues get exactly equal centers
    let mut blocks = Vec::new();
    for r in cluster_sorted(&eig.eigenvalues, target.tolerance.min(1e-9)) {
        let mean = lambdas[r.clone()].iter().sum::<f64>() / r.len() as f64;
        lambdas[r.clone()].iter_mut().for_each(|l| *l = mean);
        blocks.push(r);
    }
    let solution = centers_from_eigenvalues(&lambdas, x_max, delta)?;
    let mut centers = solution.centers.clone();
    for r in &blocks {
        let c = centers[r.start];
        centers[r.clone()].iter_mut().for_each(|x| *x = c);
    }
    let schedule: EpsilonSchedule = ClosedForm::new(eig.frame.clone(), centers, x_max)?
        .with_blocks(
            blocks
                .iter()
                .map(|r| CenterBlock {
                    start: r.start,
                    len: r.len(),
                    multiplicity: r.len(),
                })
                .collect(),
        )?
        .into();
    let walk = total_walk_operator(&schedule, x_max, delta)?;
    let pair = endpoint_pair(&walk)?;
    let rotated = eig.frame.matrix().adjoint() * &pair.m1 * eig.frame.matrix();
    let recovered: Vec<f64> = (0..lambdas.len()).map(|i| rotated[(i, i)].re).collect();
    let roundtrip_error = recovered
        .iter()
        .zip(&eig.eigenvalues)
        .fold(0.0_f64, |m, (r, l)| m.max((r - l).abs()));
    Ok(Synthesis {
        target_eigenvalues: eig.eigenvalues.clone(),
        solution,
        recovered,
        roundtrip_error,
        schedule,
    })
}

/// Polar factors `M_i = W_i P_i`.
#[derive(Debug, Clone)]
pub struct PolarPlan {
    pub w1: Unitary,
    pub w2: Unitary,
    pub p1: Hermitian,
    pub p2: Hermitian,
}

const SUPPORT_TOL: f64 = 1e-10;

fn polar(m: &ComplexMatrix) -> Result<(Unitary, Hermitian)> {
    let n = m.nrows();
    let gram = Hermitian::with_tolerance(m.adjoint() * m, 1e-9 * (1.0 + m.norm_squared()))?;
    let eig = eigensystem(&gram)?;
    let sigmas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let p = eig.frame.with_diagonal(&sigmas);
    let top = sigmas.iter().fold(0.0_f64, |a, &b| a.max(b));
    let v = eig.frame.matrix();

    // images of the support directions, largest singular values first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigmas[j].total_cmp(&sigmas[i]));
    let mut out_cols: Vec<Option<StateVector>> = vec![None; n];
    let mut basis: Vec<StateVector> = Vec::new();
    for &k in &order {
        if sigmas[k] <= SUPPORT_TOL * top.max(f64::MIN_POSITIVE) {
            continue;
        }
        let mut w: StateVector = m * v.column(k) / c64(sigmas[k], 0.0);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&w);
                w -= b * proj;
            }
        }
        let norm = w.norm();
        w /= c64(norm, 0.0);
        basis.push(w.clone());
        out_cols[k] = Some(w);
    }
    // canonical completion on the kernel, standard basis in index order
    let mut e = 0;
    for col in out_cols.iter_mut().filter(|c| c.is_none()) {
        loop {
            let mut w = StateVector::zeros(n);
            w[e] = c64(1.0, 0.0);
            e += 1;
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dotc(&w);
                    w -= b * proj;
                }
            }
            let norm = w.norm();
            if norm > 1e-6 {
                w /= c64(norm, 0.0);
                basis.push(w.clone());
                *col = Some(w);
                break;
            }
        }
    }
    let out = ComplexMatrix::from_columns(
        &out_cols
            .into_iter()
            .map(|c| c.expect("every column assigned"))
            .collect::<Vec<_>>(),
    );
    let w = Unitary::with_tolerance(out * v.adjoint(), 1e-9)?;
    Ok((w, p))
}

/// Polar decompositions of an endpoint pair.
pub fn polar_plan(m1: &ComplexMatrix, m2: &ComplexMatrix) -> Result<PolarPlan> {
    if m1.shape() != m2.shape() || !m1.is_square() {
        return Err(Error::Input("endpoint operators must be square and of equal size".into()));
    }
    let n = m1.nrows();
    let residual = (m1.adjoint() * m1 + m2.adjoint() * m2 - ComplexMatrix::identity(n, n)).norm();
    if residual > 1e-6 {
        return Err(Error::Input(format!(
            "endpoint pair is not complete: residual {residual:.3e}"
        )));
    }
    let (w1, p1) = polar(m1)?;
    let (w2, p2) = polar(m2)?;
    Ok(PolarPlan { w1, w2, p1, p2 })
}
