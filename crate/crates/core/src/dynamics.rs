//! Control schedules `ε(x)` that satisfy the reversibility flow
//! `∂x ε = 2ε² + α I`.
//!
//! Two representations are supported. A closed form keeps a constant frame
//! and moves each eigenvalue along `s·tanh(x - c_i)`. A tabulated schedule
//! stores control coefficients on a grid, typically produced by integrating
//! the flow in control coordinates, and interpolates them with monotone
//! cubic Hermite pieces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{c64, ComplexMatrix, Hermitian, Unitary};
use crate::structure::{constraint_residual, GammaTensor};
use crate::walk::step_operators;

/// Largest admissible `|c|` before `tanh` saturates in double precision.
pub const CENTER_CAP: f64 = 10.0;

/// Constants of the eigenvalue flow `d(x) = s·tanh(b(x - c))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleConvention {
    pub s: f64,
    pub alpha: f64,
    pub b: f64,
}

/// Fix `b = 1` and match coefficients of `a·tanh(b(x-c))` in
/// `∂x d = 2d² + α`: the `tanh²` terms give `b = -2a`, the constant terms
/// give `α = ab = -2a²`.
pub fn derive_scale() -> ScaleConvention {
    let b = 1.0;
    let a = -b / 2.0;
    ScaleConvention {
        s: a,
        alpha: a * b,
        b,
    }
}

/// `α(x)` stored as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Alpha {
    Constant { value: f64 },
    /// Piecewise linear, held constant outside the grid.
    Piecewise { grid: Vec<f64>, values: Vec<f64> },
}

impl Alpha {
    pub fn constant(value: f64) -> Self {
        Alpha::Constant { value }
    }

    pub fn at(&self, x: f64) -> f64 {
        match self {
            Alpha::Constant { value } => *value,
            Alpha::Piecewise { grid, values } => {
                if x <= grid[0] {
                    return values[0];
                }
                let last = grid.len() - 1;
                if x >= grid[last] {
                    return values[last];
                }
                let i = grid.partition_point(|&g| g <= x) - 1;
                let t = (x - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Alpha::Piecewise { grid, values } = self {
            if grid.is_empty() || grid.len() != values.len() {
                return Err(Error::Input("alpha grid and values must be nonempty and equal in length".into()));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Input("alpha grid must be strictly increasing".into()));
            }
        }
        Ok(())
    }
}

/// A run of frame columns whose centers come in groups of `multiplicity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterBlock {
    pub start: usize,
    pub len: usize,
    pub multiplicity: usize,
}

/// `ε(x) = U diag(s·tanh(x - c_i)) U†`.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    frame: Unitary,
    centers: Vec<f64>,
    scale: f64,
    alpha: f64,
    x_max: f64,
    blocks: Vec<CenterBlock>,
}

impl ClosedForm {
    /// Schedule on `[-x_max, x_max]` with the derived scale convention.
    pub fn new(frame: Unitary, centers: Vec<f64>, x_max: f64) -> Result<Self> {
        let conv = derive_scale();
        Self::with_constants(frame, centers, x_max, conv.s, conv.alpha)
    }

    pub fn with_constants(
        frame: Unitary,
        centers: Vec<f64>,
        x_max: f64,
        scale: f64,
        alpha: f64,
    ) -> Result<Self> {
        if centers.len() != frame.dim() {
            return Err(Error::Dimension {
                expected: frame.dim(),
                found: centers.len(),
            });
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::Input(format!("schedule range must be positive, got {x_max}")));
        }
        if centers.iter().chain([&scale, &alpha]).any(|v| !v.is_finite()) {
            return Err(Error::Input("schedule constants must be finite".into()));
        }
        Ok(Self {
            frame,
            centers,
            scale,
            alpha,
            x_max,
            blocks: Vec::new(),
        })
    }

    /// Attach block metadata, checking that within each block every center
    /// value occurs a multiple of the block's multiplicity times.
    pub fn with_blocks(mut self, blocks: Vec<CenterBlock>) -> Result<Self> {
        for b in &blocks {
            if b.multiplicity == 0 || b.start + b.len > self.centers.len() {
                return Err(Error::Input(format!("invalid center block {b:?}")));
            }
            let mut values: Vec<f64> = self.centers[b.start..b.start + b.len].to_vec();
            values.sort_by(f64::total_cmp);
            let mut i = 0;
            while i < values.len() {
                let j = values[i..]
                    .iter()
                    .position(|v| (v - values[i]).abs() > 1e-12)
                    .map_or(values.len(), |p| i + p);
                if (j - i) % b.multiplicity != 0 {
                    return Err(Error::Input(format!(
                        "center {} repeats {} times in a block of multiplicity {}",
                        values[i],
                        j - i,
                        b.multiplicity
                    )));
                }
                i = j;
            }
        }
        self.blocks = blocks;
        Ok(self)
    }

    pub fn frame(&self) -> &Unitary {
        &self.frame
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn blocks(&self) -> &[CenterBlock] {
        &self.blocks
    }

    /// Diagonal of `U† ε(x) U`.
    pub fn eigenvalues_at(&self, x: f64) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| self.scale * (x - c).tanh())
            .collect()
    }
}

/// Coefficients on a grid, interpolated by cubic Hermite pieces.
#[derive(Debug, Clone)]
pub struct Tabulated {
    grid: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    controls: Vec<Hermitian>,
    alpha: Alpha,
}

impl Tabulated {
    /// Without `slopes`, node derivatives are estimated by the
    /// Fritsch–Butland harmonic mean.
    pub fn new(
        grid: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
        slopes: Option<Vec<Vec<f64>>>,
        controls: Vec<Hermitian>,
        alpha: Alpha,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Input("tabulated schedule needs at least two grid points".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("schedule grid must be strictly increasing".into()));
        }
        let r = controls.len();
        if r == 0 {
            return Err(Error::Input("tabulated schedule needs controls".into()));
        }
        let n = controls[0].dim();
        if let Some(bad) = controls.iter().find(|h| h.dim() != n) {
            return Err(Error::Dimension {
                expected: n,
                found: bad.dim(),
            });
        }
        if coefficients.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                found: coefficients.len(),
            });
        }
        if let Some(bad) = coefficients.iter().find(|p| p.len() != r) {
            return Err(Error::Dimension {
                expected: r,
                found: bad.len(),
            });
        }
        alpha.validate()?;
        let slopes = match slopes {
            Some(s) => {
                if s.len() != grid.len() || s.iter().any(|v| v.len() != r) {
                    return Err(Error::Input("slopes must match the coefficient table".into()));
                }
                s
            }
            None => estimate_slopes(&grid, &coefficients),
        };
        Ok(Self {
            grid,
            coefficients,
            slopes,
            controls,
            alpha,
        })
    }

    /// A schedule that is `e` everywhere on `[-x_max, x_max]`.
    pub fn constant(e: Hermitian, x_max: f64) -> Result<Self> {
        Self::new(
            vec![-x_max, x_max],
            vec![vec![1.0], vec![1.0]],
            Some(vec![vec![0.0], vec![0.0]]),
            vec![e],
            Alpha::constant(0.0),
        )
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn slopes(&self) -> &[Vec<f64>] {
        &self.slopes
    }

    pub fn controls(&self) -> &[Hermitian] {
        &self.controls
    }

    pub fn alpha(&self) -> &Alpha {
        &self.alpha
    }

    /// Interpolated control coefficients at `x` (inside the grid).
    pub fn coefficients_at(&self, x: f64) -> Vec<f64> {
        let last = self.grid.len() - 1;
        let i = (self.grid.partition_point(|&g| g <= x).max(1) - 1).min(last - 1);
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (0..self.controls.len())
            .map(|k| {
                let (y0, y1) = (self.coefficients[i][k], self.coefficients[i + 1][k]);
                let (m0, m1) = limit_slopes(y0, y1, h, self.slopes[i][k], self.slopes[i + 1][k]);
                h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1
            })
            .collect()
    }
}

/// Fritsch–Carlson limiter on one interval. Applied only where the data and
/// both node slopes are monotone in the same direction, so that exact node
/// derivatives are kept through genuine extrema.
fn limit_slopes(y0: f64, y1: f64, h: f64, m0: f64, m1: f64) -> (f64, f64) {
    let secant = (y1 - y0) / h;
    if secant == 0.0 || m0 * secant <= 0.0 || m1 * secant <= 0.0 {
        return (m0, m1);
    }
    let (a, b) = (m0 / secant, m1 / secant);
    let r2 = a * a + b * b;
    if r2 > 9.0 {
        let tau = 3.0 / r2.sqrt();
        (tau * m0, tau * m1)
    } else {
        (m0, m1)
    }
}

fn estimate_slopes(grid: &[f64], values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = grid.len();
    let r = values[0].len();
    let mut out = vec![vec![0.0; r]; m];
    for k in 0..r {
        let d: Vec<f64> = (0..m - 1)
            .map(|i| (values[i + 1][k] - values[i][k]) / (grid[i + 1] - grid[i]))
            .collect();
        out[0][k] = d[0];
        out[m - 1][k] = d[m - 2];
        for i in 1..m - 1 {
            let (a, b) = (d[i - 1], d[i]);
            out[i][k] = if a * b <= 0.0 {
                0.0
            } else {
                let (h0, h1) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
                let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
    }
    out
}

/// A control schedule `x ↦ ε(x)` on a bounded interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub enum EpsilonSchedule {
    ClosedForm(ClosedForm),
    Tabulated(Tabulated),
}

impl From<ClosedForm> for EpsilonSchedule {
    fn from(c: ClosedForm) -> Self {
        EpsilonSchedule::ClosedForm(c)
    }
}

impl From<Tabulated> for EpsilonSchedule {
    fn from(t: Tabulated) -> Self {
        EpsilonSchedule::Tabulated(t)
    }
}

impl EpsilonSchedule {
    /// Constant schedule; it violates the flow unless `e² ∝ I`.
    pub fn constant(e: Hermitian, x_max: f64) -> Result<Self> {
        Ok(Tabulated::constant(e, x_max)?.into())
    }

    pub fn zero(n: usize, x_max: f64) -> Result<Self> {
        Self::constant(Hermitian::zeros(n), x_max)
    }

    pub fn dim(&self) -> usize {
        match self {
            EpsilonSchedule::ClosedForm(c) => c.frame.dim(),
            EpsilonSchedule::Tabulated(t) => t.controls[0].dim(),
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            EpsilonSchedule::ClosedForm(c) => (-c.x_max, c.x_max),
            EpsilonSchedule::Tabulated(t) => (t.grid[0], t.grid[t.grid.len() - 1]),
        }
    }

    pub fn check_range(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.range();
        // grid endpoints built from sums of steps may be off by rounding
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if x.is_finite() && x >= lo - slack && x <= hi + slack {
            Ok(())
        } else {
            Err(Error::Range { x, lo, hi })
        }
    }

    /// `ε(x)`.
    pub fn evaluate(&self, x: f64) -> Result<Hermitian> {
        self.check_range(x)?;
        Ok(match self {
            EpsilonSchedule::ClosedForm(c) => c.frame.with_diagonal(&c.eigenvalues_at(x)),
            EpsilonSchedule::Tabulated(t) => {
                let p = t.coefficients_at(x);
                Hermitian::linear_combination(&p, &t.controls)?
            }
        })
    }

    /// `α(x)` of the flow the schedule was built for.
    pub fn alpha_at(&self, x: f64) -> f64 {
        match self {
            EpsilonSchedule::ClosedForm(c) => c.alpha,
            EpsilonSchedule::Tabulated(t) => t.alpha.at(x),
        }
    }

    pub fn as_closed_form(&self) -> Option<&ClosedForm> {
        match self {
            EpsilonSchedule::ClosedForm(c) => Some(c),
            EpsilonSchedule::Tabulated(_) => None,
        }
    }
}

/// Largest traceless part of `M_∓(x ± δ) M_±(x)` over both orders.
pub fn reversibility_residual(schedule: &EpsilonSchedule, x: f64, delta: f64) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Input(format!("step must be non-negative, got {delta}")));
    }
    schedule.check_range(x)?;
    schedule.check_range(x + delta)?;
    schedule.check_range(x - delta)?;
    if delta == 0.0 {
        return Ok(0.0);
    }
    let (p0, m0) = step_operators(&schedule.evaluate(x)?, delta)?;
    let (_, m_up) = step_operators(&schedule.evaluate(x + delta)?, delta)?;
    let (p_down, _) = step_operators(&schedule.evaluate(x - delta)?, delta)?;
    let n = schedule.dim();
    let traceless = |a: ComplexMatrix| {
        let t = a.trace() / c64(n as f64, 0.0);
        (a - ComplexMatrix::identity(n, n) * t).norm()
    };
    Ok(traceless(m_up * p0).max(traceless(p_down * m0)))
}

/// Diagnostics of a control-coordinate integration.
#[derive(Debug, Clone, Serialize)]
pub struct OdeReport {
    /// Largest monitored constraint `|pᵀΓ^(k)p|` on the grid.
    pub constraint_drift: f64,
    pub step: f64,
    pub steps: usize,
    /// `log2` of successive endpoint differences at `h`, `h/2`, `h/4`.
    pub order_estimate: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub drift_limit: f64,
    pub blowup: f64,
    pub estimate_order: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            drift_limit: 1e-6,
            blowup: 1e8,
            estimate_order: true,
        }
    }
}

struct Flow<'a> {
    gamma: &'a GammaTensor,
    alpha: &'a Alpha,
    r: usize,
}

impl Flow<'_> {
    fn rhs(&self, x: f64, p: &[f64]) -> Vec<f64> {
        let q = self.gamma.quadratic_values(p);
        let mut out: Vec<f64> = q[..self.r].iter().map(|v| 2.0 * v).collect();
        out[0] += self.alpha.at(x);
        out
    }

    fn rk4_step(&self, x: f64, h: f64, p: &[f64]) -> Vec<f64> {
        let shift = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            base.iter().zip(k).map(|(b, d)| b + s * d).collect()
        };
        let k1 = self.rhs(x, p);
        let k2 = self.rhs(x + h / 2.0, &shift(p, &k1, h / 2.0));
        let k3 = self.rhs(x + h / 2.0, &shift(p, &k2, h / 2.0));
        let k4 = self.rhs(x + h, &shift(p, &k3, h));
        (0..p.len())
            .map(|i| p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Endpoint only, for the order estimate.
    fn endpoint(&self, p0: &[f64], xa: f64, h: f64, steps: usize, blowup: f64) -> Option<Vec<f64>> {
        let mut p = p0.to_vec();
        for j in 0..steps {
            p = self.rk4_step(xa + j as f64 * h, h, &p);
            if !p.iter().all(|v| v.is_finite() && v.abs() <= blowup) {
                return None;
            }
        }
        Some(p)
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Integrate `∂x p_k = 2 pᵀΓ^(k)p + α(x) δ_k0` over control coordinates with
/// classical RK4 from `p(range.0) = p0` to `range.1`.
///
/// Every basis coordinate not in `keep` is a constraint `pᵀΓ^(k)p = 0` that
/// is monitored at each grid point.
pub fn integrate_controls(
    p0: &[f64],
    gamma: &GammaTensor,
    keep: &[usize],
    range: (f64, f64),
    h: f64,
    alpha: &Alpha,
    opts: &IntegrateOptions,
) -> Result<(EpsilonSchedule, OdeReport)> {
    let r = gamma.control_count();
    if p0.len() != r {
        return Err(Error::Dimension {
            expected: r,
            found: p0.len(),
        });
    }
    let (xa, xb) = range;
    if !(h > 0.0) || !(xb > xa) {
        return Err(Error::Input(format!("need h > 0 and a nonempty range, got h={h}, [{xa}, {xb}]")));
    }
    let ratio = (xb - xa) / h;
    let steps = ratio.round() as usize;
    if (ratio - steps as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Input(format!("range length {} is not a multiple of h = {h}", xb - xa)));
    }
    let start = constraint_residual(p0, gamma, keep)?;
    if start > 1e-8 {
        return Err(Error::Input(format!("initial point violates the constraints by {start:.3e}")));
    }
    alpha.validate()?;

    let flow = Flow { gamma, alpha, r };
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    let mut drift: f64 = start;
    let mut p = p0.to_vec();
    for j in 0..=steps {
        let x = if j == steps { xb } else { xa + j as f64 * h };
        if j > 0 {
            p = flow.rk4_step(xa + (j - 1) as f64 * h, h, &p);
            if !p.iter().all(|v| v.is_finite() && v.abs() <= opts.blowup) {
                return Err(Error::Singularity {
                    escape: x,
                    bound: opts.blowup,
                });
            }
            let c = constraint_residual(&p, gamma, keep)?;
            if c > opts.drift_limit {
                return Err(Error::Drift {
                    x,
                    drift: c,
                    limit: opts.drift_limit,
                });
            }
            drift = drift.max(c);
        }
        grid.push(x);
        slopes.push(flow.rhs(x, &p));
        values.push(p.clone());
    }

    let order_estimate = if opts.estimate_order {
        let half = flow.endpoint(p0, xa, h / 2.0, 2 * steps, opts.blowup);
        let quarter = flow.endpoint(p0, xa, h / 4.0, 4 * steps, opts.blowup);
        match (half, quarter) {
            (Some(a), Some(b)) => {
                let e1 = max_diff(&values[steps], &a);
                let e2 = max_diff(&a, &b);
                (e2 > 1e-14 * (1.0 + b.iter().fold(0.0_f64, |m, v| m.max(v.abs()))))
                    .then(|| (e1 / e2).log2())
            }
            _ => None,
        }
    } else {
        None
    };

    let schedule = Tabulated::new(grid, values, Some(slopes), gamma.controls().to_vec(), alpha.clone())?;
    Ok((
        schedule.into(),
        OdeReport {
            constraint_drift: drift,
            step: h,
            steps,
            order_estimate,
        },
    ))
}

/// Row-major complex matrix as `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension {
                expected: self.rows * self.cols,
                found: self.data.len(),
            });
        }
        Ok(ComplexMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c64(re, im)
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", deny_unknown_fields)]
pub enum ScheduleDoc {
    ClosedForm {
        x_max: f64,
        frame: MatrixDoc,
        centers: Vec<f64>,
        scale: f64,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        blocks: Vec<CenterBlock>,
    },
    Tabulated {
        grid: Vec<f64>,
        coefficients: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slopes: Option<Vec<Vec<f64>>>,
        controls: Vec<MatrixDoc>,
        alpha: Alpha,
    },
}

impl From<EpsilonSchedule> for ScheduleDoc {
    fn from(s: EpsilonSchedule) -> Self {
        match s {
            EpsilonSchedule::ClosedForm(c) => ScheduleDoc::ClosedForm {
                x_max: c.x_max,
                frame: MatrixDoc::from_matrix(c.frame.matrix()),
                centers: c.centers,
                scale: c.scale,
                alpha: c.alpha,
                blocks: c.blocks,
            },
            EpsilonSchedule::Tabulated(t) => ScheduleDoc::Tabulated {
                grid: t.grid,
                coefficients: t.coefficients,
                slopes: Some(t.slopes),
                controls: t.controls.iter().map(|h| MatrixDoc::from_matrix(h.matrix())).collect(),
                alpha: t.alpha,
            },
        }
    }
}

impl TryFrom<ScheduleDoc> for EpsilonSchedule {
    type Error = Error;

    fn try_from(doc: ScheduleDoc) -> Result<Self> {
        Ok(match doc {
            ScheduleDoc::ClosedForm {
                x_max,
                frame,
                centers,
                scale,
                alpha,
                blocks,
            } => {
                let frame = Unitary::new(frame.to_matrix()?)?;
                ClosedForm::with_constants(frame, centers, x_max, scale, alpha)?
                    .with_blocks(blocks)?
                    .into()
            }
            ScheduleDoc::Tabulated {
                grid,
                coefficients,
                slopes,
                controls,
                alpha,
            } => {
                let controls = controls
                    .iter()
                    .map(|m| Hermitian::new(m.to_matrix()?))
                    .collect::<Result<Vec<_>>>()?;
                Tabulated::new(grid, coefficients, slopes, controls, alpha)?.into()
            }
        })
    }
}
