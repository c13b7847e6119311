//! The feedback random walk.
//!
//! A probe qubit starts in `|0⟩`, couples through `exp(iδ Y⊗ε(x))` and is
//! read out in the `|±⟩` basis. Outcome `±` applies
//! `M_± = (cos δε ∓ sin δε)/√2` to the system and moves the pointer to
//! `x ± δ`. The walk stops when `|x|` reaches `X = Nδ`.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::EpsilonSchedule;
use crate::error::{Error, Result};
use crate::matcore::{c64, eigensystem, ComplexMatrix, Hermitian, StateVector, Unitary};

/// Exact step operators `(M_+, M_-)` for interaction `e` and strength `delta`.
pub fn step_operators(e: &Hermitian, delta: f64) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !(delta >= 0.0) {
        return Err(Error::Input(format!("step must be non-negative, got {delta}")));
    }
    let eig = eigensystem(e)?;
    Ok(step_operators_in_frame(&eig.frame, &eig.eigenvalues, delta))
}

fn step_operators_in_frame(
    frame: &Unitary,
    eigenvalues: &[f64],
    delta: f64,
) -> (ComplexMatrix, ComplexMatrix) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let plus: Vec<f64> = eigenvalues
        .iter()
        .map(|l| r * ((delta * l).cos() - (delta * l).sin()))
        .collect();
    let minus: Vec<f64> = eigenvalues
        .iter()
        .map(|l| r * ((delta * l).cos() + (delta * l).sin()))
        .collect();
    (
        frame.with_diagonal(&plus).into_matrix(),
        frame.with_diagonal(&minus).into_matrix(),
    )
}

/// Step operators of `schedule` at pointer `x`.
pub fn schedule_step_operators(
    schedule: &EpsilonSchedule,
    x: f64,
    delta: f64,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    match schedule.as_closed_form() {
        Some(c) => {
            schedule.check_range(x)?;
            Ok(step_operators_in_frame(c.frame(), &c.eigenvalues_at(x), delta))
        }
        None => step_operators(&schedule.evaluate(x)?, delta),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i64 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Plus => "plus",
            Outcome::Minus => "minus",
        }
    }
}

const SUM_TOL: f64 = 1e-9;

fn sample(p_plus: f64, p_minus: f64, rng: &mut impl Rng) -> Result<Outcome> {
    let total = p_plus + p_minus;
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::Consistency(format!(
            "step probabilities sum to {total}, not 1"
        )));
    }
    let u: f64 = rng.random();
    Ok(if u * total < p_plus {
        Outcome::Plus
    } else {
        Outcome::Minus
    })
}

/// One measurement step from pointer `x`, returning `(x ± δ, ψ', outcome)`.
pub fn walk_step<R: Rng>(
    x: f64,
    psi: &StateVector,
    schedule: &EpsilonSchedule,
    delta: f64,
    rng: &mut R,
) -> Result<(f64, StateVector, Outcome)> {
    let (mp, mm) = schedule_step_operators(schedule, x, delta)?;
    let (vp, vm) = (&mp * psi, &mm * psi);
    let (pp, pm) = (vp.norm_squared(), vm.norm_squared());
    let outcome = sample(pp, pm, rng)?;
    let (v, p) = match outcome {
        Outcome::Plus => (vp, pp),
        Outcome::Minus => (vm, pm),
    };
    Ok((
        x + outcome.sign() as f64 * delta,
        v / c64(p.sqrt(), 0.0),
        outcome,
    ))
}

/// Parameters of a walk.
#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub delta: f64,
    pub x_max: f64,
    pub psi0: StateVector,
    pub schedule: EpsilonSchedule,
    pub seed: u64,
    pub trajectories: usize,
}

impl WalkConfig {
    pub fn new(schedule: EpsilonSchedule, delta: f64, x_max: f64, psi0: StateVector) -> Result<Self> {
        let cfg = Self {
            delta,
            x_max,
            psi0,
            schedule,
            seed: 0,
            trajectories: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, count: usize) -> Self {
        self.trajectories = count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Input(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return Err(Error::Input(format!("X must be positive, got {}", self.x_max)));
        }
        let ratio = self.x_max / self.delta;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Input(format!(
                "X = {} is not a multiple of delta = {}",
                self.x_max, self.delta
            )));
        }
        if self.psi0.len() != self.schedule.dim() {
            return Err(Error::Dimension {
                expected: self.schedule.dim(),
                found: self.psi0.len(),
            });
        }
        let norm = self.psi0.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("initial state has norm {norm}, expected 1")));
        }
        let reach = (self.steps_to_boundary() as f64 - 1.0) * self.delta;
        self.schedule.check_range(reach)?;
        self.schedule.check_range(-reach)?;
        Ok(())
    }

    /// `N = X/δ`.
    pub fn steps_to_boundary(&self) -> usize {
        (self.x_max / self.delta).round() as usize
    }

    /// Runaway cap `100·N²`.
    pub fn step_cap(&self) -> usize {
        let n = self.steps_to_boundary();
        100 * n * n
    }
}

/// Precomputed `M_±(jδ)` for interior pointer positions, flat row-major.
#[derive(Debug, Clone)]
pub struct StepTable {
    dim: usize,
    boundary: i64,
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
}

impl StepTable {
    pub fn new(schedule: &EpsilonSchedule, delta: f64, boundary: usize) -> Result<Self> {
        let dim = schedule.dim();
        let b = boundary as i64;
        let mut plus = Vec::with_capacity((2 * boundary).saturating_sub(1) * dim * dim);
        let mut minus = Vec::with_capacity(plus.capacity());
        for j in -(b - 1)..b {
            let (mp, mm) = schedule_step_operators(schedule, j as f64 * delta, delta)?;
            for i in 0..dim {
                for k in 0..dim {
                    plus.push(mp[(i, k)]);
                    minus.push(mm[(i, k)]);
                }
            }
        }
        Ok(Self {
            dim,
            boundary: b,
            plus,
            minus,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn block(&self, pos: i64, outcome: Outcome) -> &[Complex64] {
        let n2 = self.dim * self.dim;
        let idx = (pos + self.boundary - 1) as usize * n2;
        match outcome {
            Outcome::Plus => &self.plus[idx..idx + n2],
            Outcome::Minus => &self.minus[idx..idx + n2],
        }
    }

    /// `out = M_outcome(pos) psi`; returns `‖out‖²`.
    fn apply(&self, pos: i64, outcome: Outcome, psi: &[Complex64], out: &mut [Complex64]) -> f64 {
        let m = self.block(pos, outcome);
        let n = self.dim;
        let mut norm = 0.0;
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(psi) {
                acc += a * b;
            }
            out[i] = acc;
            norm += acc.norm_sqr();
        }
        norm
    }
}

/// Result of one absorbed walk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_state: StateVector,
    pub path_checksum: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_push(hash: u64, byte: u8) -> u64 {
    (hash ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
}

/// FNV-1a over the `+`/`-` characters of a step sequence.
pub fn path_checksum(steps: &[Outcome]) -> u64 {
    steps.iter().fold(FNV_OFFSET, |h, o| {
        fnv_push(h, if *o == Outcome::Plus { b'+' } else { b'-' })
    })
}

/// A validated configuration with its step table.
#[derive(Debug, Clone)]
pub struct Walker {
    config: WalkConfig,
    table: StepTable,
}

impl Walker {
    pub fn new(config: WalkConfig) -> Result<Self> {
        config.validate()?;
        let table = StepTable::new(&config.schedule, config.delta, config.steps_to_boundary())?;
        Ok(Self { config, table })
    }

    pub fn config(&self) -> &WalkConfig {
        &self.config
    }

    /// Trajectory `index`, drawing from ChaCha stream `index` of the seed.
    pub fn run(&self, index: usize) -> Result<TrajectoryRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        let n = self.table.dim;
        let boundary = self.table.boundary;
        let cap = self.config.step_cap();
        let mut psi: Vec<Complex64> = self.config.psi0.iter().copied().collect();
        let mut vp = vec![Complex64::new(0.0, 0.0); n];
        let mut vm = vp.clone();
        let mut pos = 0i64;
        let mut steps = 0usize;
        let mut hash = FNV_OFFSET;
        loop {
            let pp = self.table.apply(pos, Outcome::Plus, &psi, &mut vp);
            let pm = self.table.apply(pos, Outcome::Minus, &psi, &mut vm);
            let outcome = sample(pp, pm, &mut rng)?;
            let (v, p) = match outcome {
                Outcome::Plus => (&vp, pp),
                Outcome::Minus => (&vm, pm),
            };
            let scale = 1.0 / p.sqrt();
            for (d, s) in psi.iter_mut().zip(v) {
                *d = s * scale;
            }
            hash = fnv_push(hash, if outcome == Outcome::Plus { b'+' } else { b'-' });
            pos += outcome.sign();
            steps += 1;
            if pos.abs() >= boundary {
                return Ok(TrajectoryRecord {
                    index,
                    outcome,
                    steps,
                    final_state: StateVector::from_vec(psi),
                    path_checksum: hash,
                });
            }
            if steps >= cap {
                return Err(Error::Runaway { steps });
            }
        }
    }

    /// All configured trajectories in index order, run in parallel.
    pub fn run_all(&self) -> Result<Vec<TrajectoryRecord>> {
        (0..self.config.trajectories)
            .into_par_iter()
            .map(|i| self.run(i))
            .collect()
    }
}

/// Single trajectory with index 0 under `seed`.
pub fn run_trajectory(config: &WalkConfig, seed: u64) -> Result<TrajectoryRecord> {
    Walker::new(config.clone().with_seed(seed))?.run(0)
}

/// Endpoint products of a schedule and their continuum cross-check.
#[derive(Debug, Clone, Serialize)]
pub struct WalkOperators {
    #[serde(skip)]
    pub m_plus: ComplexMatrix,
    #[serde(skip)]
    pub m_minus: ComplexMatrix,
    #[serde(skip)]
    pub diag_frame: Unitary,
    /// Diagonal of `U† M(+X) U`.
    pub n_diagonal_plus: Vec<f64>,
    /// Diagonal of `U† M(-X) U`.
    pub n_diagonal_minus: Vec<f64>,
    /// Relative Frobenius mass off the diagonal, worst of both endpoints.
    pub off_diagonal_mass: f64,
    /// Distance between the normalized product and ODE operators.
    pub ode_discrepancy: f64,
    pub ode_tolerance: f64,
}

fn rotated_diagonal(frame: &Unitary, m: &ComplexMatrix) -> (Vec<f64>, f64) {
    let r = frame.matrix().adjoint() * m * frame.matrix();
    let n = r.nrows();
    let diag = (0..n).map(|i| r[(i, i)].re).collect();
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += r[(i, j)].norm_sqr();
            }
        }
        off += r[(i, i)].im * r[(i, i)].im;
    }
    (diag, off.sqrt() / r.norm().max(f64::MIN_POSITIVE))
}

/// RK4 for `∂y M = σ ε(σ' y) M` with `M(0) = I`.
fn propagate_ode(
    schedule: &EpsilonSchedule,
    x_max: f64,
    steps: usize,
    towards_plus: bool,
) -> Result<ComplexMatrix> {
    let n = schedule.dim();
    let h = x_max / steps as f64;
    let gen = |y: f64| -> Result<ComplexMatrix> {
        let e = schedule.evaluate(if towards_plus { y } else { -y })?.into_matrix();
        Ok(if towards_plus { -e } else { e })
    };
    let mut m = ComplexMatrix::identity(n, n);
    let half = c64(h / 2.0, 0.0);
    let full = c64(h, 0.0);
    for j in 0..steps {
        let y = j as f64 * h;
        let (g0, g1, g2) = (gen(y)?, gen(y + h / 2.0)?, gen((y + h).min(x_max))?);
        let k1 = &g0 * &m;
        let k2 = &g1 * (&m + &k1 * half);
        let k3 = &g1 * (&m + &k2 * half);
        let k4 = &g2 * (&m + &k3 * full);
        m += (k1 + k2 * c64(2.0, 0.0) + k3 * c64(2.0, 0.0) + k4) * c64(h / 6.0, 0.0);
    }
    Ok(m)
}

fn normalized(m: &ComplexMatrix) -> ComplexMatrix {
    m / c64(m.norm(), 0.0)
}

/// `M(±X) = Π_{j=N-1..0} √2·M_±(±jδ)` with the continuum cross-check.
pub fn total_walk_operator(schedule: &EpsilonSchedule, x_max: f64, delta: f64) -> Result<WalkOperators> {
    let probe = WalkConfig {
        delta,
        x_max,
        psi0: {
            let mut v = StateVector::zeros(schedule.dim());
            v[0] = c64(1.0, 0.0);
            v
        },
        schedule: schedule.clone(),
        seed: 0,
        trajectories: 0,
    };
    probe.validate()?;
    let n_steps = probe.steps_to_boundary();
    let n = schedule.dim();
    let r2 = c64(std::f64::consts::SQRT_2, 0.0);
    let mut m_plus = ComplexMatrix::identity(n, n);
    let mut m_minus = ComplexMatrix::identity(n, n);
    let mut e_max: f64 = 0.0;
    for j in 0..n_steps {
        let x = j as f64 * delta;
        let (p, _) = schedule_step_operators(schedule, x, delta)?;
        let (_, m) = schedule_step_operators(schedule, -x, delta)?;
        m_plus = p * r2 * m_plus;
        m_minus = m * r2 * m_minus;
        for y in [x, -x] {
            e_max = e_max.max(schedule.evaluate(y)?.norm());
        }
    }

    let ode_steps = 4 * n_steps;
    let ode_plus = propagate_ode(schedule, x_max, ode_steps, true)?;
    let ode_minus = propagate_ode(schedule, x_max, ode_steps, false)?;
    let ode_discrepancy = (normalized(&m_plus) - normalized(&ode_plus))
        .norm()
        .max((normalized(&m_minus) - normalized(&ode_minus)).norm());
    let ode_tolerance = 1e-9 + 0.25 * delta * delta * x_max * (1.0 + e_max).powi(3);
    if ode_discrepancy > ode_tolerance {
        return Err(Error::Consistency(format!(
            "walk product and continuum propagation differ by {ode_discrepancy:.3e} (tolerance {ode_tolerance:.3e})"
        )));
    }

    let diag_frame = match schedule.as_closed_form() {
        Some(c) => c.frame().clone(),
        None => {
            let (lo, hi) = schedule.range();
            eigensystem(&schedule.evaluate(0.0f64.clamp(lo, hi))?)?.frame
        }
    };
    let (n_diagonal_plus, off_p) = rotated_diagonal(&diag_frame, &m_plus);
    let (n_diagonal_minus, off_m) = rotated_diagonal(&diag_frame, &m_minus);
    Ok(WalkOperators {
        m_plus,
        m_minus,
        diag_frame,
        n_diagonal_plus,
        n_diagonal_minus,
        off_diagonal_mass: off_p.max(off_m),
        ode_discrepancy,
        ode_tolerance,
    })
}

/// Normalized endpoint operators `{M1, M2}`.
#[derive(Debug, Clone, Serialize)]
pub struct MeasurementPair {
    #[serde(skip)]
    pub m1: ComplexMatrix,
    #[serde(skip)]
    pub m2: ComplexMatrix,
    pub a: f64,
    pub b: f64,
    pub completeness_residual: f64,
}

impl MeasurementPair {
    /// Born probability of the `+X` endpoint, `‖M1 ψ‖²`.
    pub fn born_plus(&self, psi: &StateVector) -> f64 {
        (&self.m1 * psi).norm_squared()
    }
}

pub const NORMALIZATION_LIMIT: f64 = 1e-4;

/// Scale the endpoint products so that `a²A + b²B ≈ I`, where
/// `A = M₊†M₊` and `B = M₋†M₋`, by least squares in `(a², b²)`.
pub fn endpoint_pair(w: &WalkOperators) -> Result<MeasurementPair> {
    endpoint_pair_with_limit(w, NORMALIZATION_LIMIT)
}

pub fn endpoint_pair_with_limit(w: &WalkOperators, limit: f64) -> Result<MeasurementPair> {
    let n = w.m_plus.nrows();
    let a = w.m_plus.adjoint() * &w.m_plus;
    let b = w.m_minus.adjoint() * &w.m_minus;
    let id = ComplexMatrix::identity(n, n);
    let ip = |x: &ComplexMatrix, y: &ComplexMatrix| x.dotc(y).re;
    let gram = nalgebra::Matrix2::new(ip(&a, &a), ip(&a, &b), ip(&a, &b), ip(&b, &b));
    let rhs = nalgebra::Vector2::new(ip(&a, &id), ip(&b, &id));
    let sol = gram
        .pseudo_inverse(1e-12 * gram.norm())
        .map_err(|e| Error::Numerical(e.to_string()))?
        * rhs;
    let (u, v) = (sol[0], sol[1]);
    if !(u > 0.0 && v > 0.0) {
        return Err(Error::Normalization {
            residual: f64::INFINITY,
            limit,
        });
    }
    let (sa, sb) = (u.sqrt(), v.sqrt());
    let m1 = &w.m_plus * c64(sa, 0.0);
    let m2 = &w.m_minus * c64(sb, 0.0);
    let residual = (m1.adjoint() * &m1 + m2.adjoint() * &m2 - id).norm();
    if residual > limit {
        return Err(Error::Normalization { residual, limit });
    }
    Ok(MeasurementPair {
        m1,
        m2,
        a: sa,
        b: sb,
        completeness_residual: residual,
    })
}

/// Limits for the exhaustive path sum.
#[derive(Debug, Clone, Copy)]
pub struct EnumerateOptions {
    pub max_n: usize,
    /// States with fidelity at least `1 - merge_tol` share one entry.
    pub merge_tol: f64,
    /// Stop once the unabsorbed probability drops below this.
    pub mass_tol: f64,
    pub max_entries: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        Self {
            max_n: 12,
            merge_tol: 1e-13,
            mass_tol: 1e-12,
            max_entries: 1 << 20,
        }
    }
}

/// A conditioned final state and the paths that reach it.
#[derive(Debug, Clone)]
pub struct ConditionedState {
    pub state: StateVector,
    pub probability: f64,
    /// `log2` of the number of merged paths.
    pub log2_paths: f64,
}

#[derive(Debug, Clone)]
pub struct PathEnumeration {
    pub p_plus: f64,
    pub p_minus: f64,
    /// Probability still inside the interval when the sum stopped.
    pub unabsorbed: f64,
    pub steps: usize,
    pub plus_states: Vec<ConditionedState>,
    pub minus_states: Vec<ConditionedState>,
}

impl PathEnumeration {
    /// `1 - min |⟨a|b⟩|²` over pairs of conditioned states with one outcome.
    pub fn fidelity_spread(&self, outcome: Outcome) -> f64 {
        let states = match outcome {
            Outcome::Plus => &self.plus_states,
            Outcome::Minus => &self.minus_states,
        };
        let mut worst: f64 = 0.0;
        for (i, a) in states.iter().enumerate() {
            for b in &states[i + 1..] {
                worst = worst.max(1.0 - a.state.dotc(&b.state).norm_sqr());
            }
        }
        worst
    }
}

fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (1.0 + (lo - hi).exp2()).log2()
    }
}

#[derive(Clone, Copy)]
struct Entry {
    offset: usize,
    weight: f64,
    log2_paths: f64,
}

struct Layer {
    dim: usize,
    arena: Vec<Complex64>,
    slots: Vec<Vec<Entry>>,
    entries: usize,
}

impl Layer {
    fn new(dim: usize, positions: usize) -> Self {
        Self {
            dim,
            arena: Vec::new(),
            slots: vec![Vec::new(); positions],
            entries: 0,
        }
    }

    fn clear(&mut self) {
        self.arena.clear();
        self.entries = 0;
        for s in &mut self.slots {
            s.clear();
        }
    }

    fn state(&self, e: &Entry) -> &[Complex64] {
        &self.arena[e.offset..e.offset + self.dim]
    }

    /// Add a unit state to `slot`, merging with a matching entry.
    fn insert(&mut self, slot: usize, psi: &[Complex64], weight: f64, log2_paths: f64, merge_tol: f64) {
        let dim = self.dim;
        for e in self.slots[slot].iter_mut() {
            let s = &self.arena[e.offset..e.offset + dim];
            let overlap: Complex64 = s.iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
            if overlap.norm_sqr() >= 1.0 - merge_tol {
                e.weight += weight;
                e.log2_paths = log2_add(e.log2_paths, log2_paths);
                return;
            }
        }
        let offset = self.arena.len();
        self.arena.extend_from_slice(psi);
        self.slots[slot].push(Entry {
            offset,
            weight,
            log2_paths,
        });
        self.entries += 1;
    }
}

/// Sum over all absorbing paths by dynamic programming on
/// `(pointer, conditioned state)`.
pub fn enumerate_paths(config: &WalkConfig, opts: &EnumerateOptions) -> Result<PathEnumeration> {
    config.validate()?;
    let big_n = config.steps_to_boundary();
    if big_n > opts.max_n {
        return Err(Error::Resource(format!(
            "path enumeration limited to N <= {}, got N = {big_n}",
            opts.max_n
        )));
    }
    let table = StepTable::new(&config.schedule, config.delta, big_n)?;
    let dim = table.dim;
    let b = big_n as i64;
    let positions = (2 * big_n - 1).max(1);
    let slot_of = |pos: i64| (pos + b - 1) as usize;

    let mut current = Layer::new(dim, positions);
    let mut next = Layer::new(dim, positions);
    let psi0: Vec<Complex64> = config.psi0.iter().copied().collect();
    current.insert(slot_of(0), &psi0, 1.0, 0.0, opts.merge_tol);
    let mut absorbed_plus = Layer::new(dim, 1);
    let mut absorbed_minus = Layer::new(dim, 1);
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    let mut steps = 0usize;
    let cap = config.step_cap().max(1);
    let mut remaining = 1.0;

    while remaining > opts.mass_tol && steps < cap {
        next.clear();
        for slot in 0..positions {
            let pos = slot as i64 - (b - 1);
            for idx in 0..current.slots[slot].len() {
                let e = current.slots[slot][idx];
                for outcome in [Outcome::Plus, Outcome::Minus] {
                    let p = table.apply(pos, outcome, current.state(&e), &mut buf);
                    let w = e.weight * p;
                    if w == 0.0 {
                        continue;
                    }
                    let inv = 1.0 / p.sqrt();
                    buf.iter_mut().for_each(|z| *z *= inv);
                    let target = pos + outcome.sign();
                    if target.abs() >= b {
                        let layer = if outcome == Outcome::Plus {
                            &mut absorbed_plus
                        } else {
                            &mut absorbed_minus
                        };
                        layer.insert(0, &buf, w, e.log2_paths, opts.merge_tol);
                    } else {
                        next.insert(slot_of(target), &buf, w, e.log2_paths, opts.merge_tol);
                    }
                }
            }
        }
        let total = next.entries + absorbed_plus.entries + absorbed_minus.entries;
        if total > opts.max_entries {
            return Err(Error::Resource(format!(
                "path enumeration needs more than {} distinct states",
                opts.max_entries
            )));
        }
        std::mem::swap(&mut current, &mut next);
        remaining = current
            .slots
            .iter()
            .flatten()
            .map(|e| e.weight)
            .sum::<f64>();
        steps += 1;
    }

    let collect = |layer: &Layer| -> Vec<ConditionedState> {
        layer.slots[0]
            .iter()
            .map(|e| ConditionedState {
                state: StateVector::from_column_slice(layer.state(e)),
                probability: e.weight,
                log2_paths: e.log2_paths,
            })
            .collect()
    };
    let plus_states = collect(&absorbed_plus);
    let minus_states = collect(&absorbed_minus);
    Ok(PathEnumeration {
        p_plus: plus_states.iter().map(|s| s.probability).sum(),
        p_minus: minus_states.iter().map(|s| s.probability).sum(),
        unabsorbed: remaining,
        steps,
        plus_states,
        minus_states,
    })
}

/// Aggregate statistics of a batch of trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct WalkSummary {
    pub trajectories: usize,
    pub plus_count: usize,
    pub p_plus_empirical: f64,
    /// Binomial standard error at the Born prediction.
    pub sigma: f64,
    pub p_plus_born: f64,
    pub completeness_residual: f64,
    pub mean_steps: f64,
}

pub fn summarize(records: &[TrajectoryRecord], pair: &MeasurementPair, psi0: &StateVector) -> WalkSummary {
    let total = records.len();
    let plus_count = records.iter().filter(|r| r.outcome == Outcome::Plus).count();
    let p_born = pair.born_plus(psi0);
    let p_emp = if total == 0 { f64::NAN } else { plus_count as f64 / total as f64 };
    WalkSummary {
        trajectories: total,
        plus_count,
        p_plus_empirical: p_emp,
        sigma: (p_born * (1.0 - p_born) / total.max(1) as f64).sqrt(),
        p_plus_born: p_born,
        completeness_residual: pair.completeness_residual,
        mean_steps: records.iter().map(|r| r.steps as f64).sum::<f64>() / total.max(1) as f64,
    }
}

/// CSV header for states of dimension `n`.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["seed", "index", "outcome", "steps", "path_checksum"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..n).map(|i| format!("final_state_re_{i}")));
    cols.extend((0..n).map(|i| format!("final_state_im_{i}")));
    cols
}

/// Write trajectories as CSV with 17 significant digits per float.
pub fn write_trajectories_csv<W: Write>(out: W, seed: u64, records: &[TrajectoryRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.final_state.len());
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(csv_header(n)).map_err(io)?;
    for r in records {
        let mut row = vec![
            seed.to_string(),
            r.index.to_string(),
            r.outcome.label().to_string(),
            r.steps.to_string(),
            format!("{:016x}", r.path_checksum),
        ];
        row.extend(r.final_state.iter().map(|z| format!("{:.16e}", z.re)));
        row.extend(r.final_state.iter().map(|z| format!("{:.16e}", z.im)));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ClosedForm;
    use crate::matcore::{pauli, random_hermitian};
    use proptest::prelude::*;

    fn ket0(n: usize) -> StateVector {
        let mut v = StateVector::zeros(n);
        v[0] = c64(1.0, 0.0);
        v
    }

    fn plus_state() -> StateVector {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_vec(vec![c64(h, 0.0), c64(h, 0.0)])
    }

    fn qubit_closed(c: [f64; 2], x_max: f64) -> EpsilonSchedule {
        ClosedForm::new(Unitary::identity(2), c.to_vec(), x_max).unwrap().into()
    }

    fn completeness(p: &ComplexMatrix, m: &ComplexMatrix) -> f64 {
        let n = p.nrows();
        (p.adjoint() * p + m.adjoint() * m - ComplexMatrix::identity(n, n)).norm()
    }

    #[test]
    fn step_operator_examples() {
        let (p, m) = step_operators(&Hermitian::zeros(3), 0.3).unwrap();
        let half = ComplexMatrix::identity(3, 3) * c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert!((p - &half).norm() < 1e-15 && (m - &half).norm() < 1e-15);

        let (p, _) = step_operators(&pauli::z(), 0.1).unwrap();
        let expect = (0.1f64.cos() - 0.1f64.sin()) / 2f64.sqrt();
        assert!((p[(0, 0)].re - expect).abs() < 1e-15);
        assert!(step_operators(&pauli::z(), -0.1).is_err());
    }

    #[test]
    fn step_operators_match_the_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_hermitian(4, &mut rng);
        let id = ComplexMatrix::identity(4, 4);
        let mut prev = None;
        for delta in [1e-2, 5e-3] {
            let (p, _) = step_operators(&e, delta).unwrap();
            let em = e.matrix();
            let approx = (&id - em * c64(delta, 0.0) - em * em * c64(delta * delta / 2.0, 0.0))
                * c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let err = (p - approx).norm();
            if let Some(pe) = prev {
                let ratio: f64 = pe / err;
                assert!((ratio.log2() - 3.0).abs() < 0.2, "order {}", ratio.log2());
            }
            prev = Some(err);
        }
    }

    #[test]
    fn zero_schedule_steps_are_unbiased() {
        let s = EpsilonSchedule::zero(2, 1.0).unwrap();
        let psi = plus_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mp, mm) = schedule_step_operators(&s, 0.0, 0.1).unwrap();
        assert!(((&mp * &psi).norm_squared() - 0.5).abs() < 1e-15);
        assert!(((&mm * &psi).norm_squared() - 0.5).abs() < 1e-15);
        let (x, out, _) = walk_step(0.0, &psi, &s, 0.1, &mut rng).unwrap();
        assert!((x.abs() - 0.1).abs() < 1e-15);
        assert!((out - psi).norm() < 1e-15);
    }

    #[test]
    fn forward_then_back_returns_the_state() {
        let s = qubit_closed([0.6, -0.4], 2.0);
        let psi = plus_state();
        let delta = 0.01;
        let (mp, _) = schedule_step_operators(&s, 0.2, delta).unwrap();
        let (_, mm) = schedule_step_operators(&s, 0.2 + delta, delta).unwrap();
        let v = mm * mp * &psi;
        let v = &v / c64(v.norm(), 0.0);
        assert!(1.0 - v.dotc(&psi).norm_sqr() < delta.powi(3));
    }

    #[test]
    fn single_step_walk_reproduces_first_step_probabilities() {
        let s: EpsilonSchedule = EpsilonSchedule::constant(pauli::z(), 0.1).unwrap();
        let cfg = WalkConfig::new(s, 0.1, 0.1, ket0(2)).unwrap();
        let e = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
        let expect = (0.1f64.cos() - 0.1f64.sin()).powi(2) / 2.0;
        assert!((e.p_plus - expect).abs() < 1e-15);
        assert_eq!(e.steps, 1);
        let r = run_trajectory(&cfg, 9).unwrap();
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn symmetric_walk_is_fair() {
        let s = EpsilonSchedule::zero(2, 0.4).unwrap();
        let cfg = WalkConfig::new(s, 0.1, 0.4, plus_state()).unwrap();
        let e = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
        assert!((e.p_plus - 0.5).abs() < 1e-12);
        let walker = Walker::new(cfg.with_trajectories(4000).with_seed(11)).unwrap();
        let recs = walker.run_all().unwrap();
        let plus = recs.iter().filter(|r| r.outcome == Outcome::Plus).count() as f64 / 4000.0;
        assert!((plus - 0.5).abs() < 3.0 * (0.25f64 / 4000.0).sqrt());
    }

    #[test]
    fn closed_form_paths_are_path_independent() {
        let s = qubit_closed([0.8, -0.8], 0.2);
        let cfg = WalkConfig::new(s, 0.05, 0.2, plus_state()).unwrap();
        let e = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
        assert!(e.fidelity_spread(Outcome::Plus) <= 1e-8);
        assert!(e.fidelity_spread(Outcome::Minus) <= 1e-8);
        assert!((e.p_plus + e.p_minus + e.unabsorbed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectories_agree_with_enumerated_states() {
        let s = qubit_closed([0.8, -0.8], 0.2);
        let cfg = WalkConfig::new(s, 0.05, 0.2, plus_state()).unwrap();
        let e = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
        let walker = Walker::new(cfg.with_trajectories(200).with_seed(3)).unwrap();
        for r in walker.run_all().unwrap() {
            let states = if r.outcome == Outcome::Plus { &e.plus_states } else { &e.minus_states };
            let best = states
                .iter()
                .map(|c| c.state.dotc(&r.final_state).norm_sqr())
                .fold(0.0, f64::max);
            assert!(best >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let s = qubit_closed([0.3, -1.2], 0.5);
        let cfg = WalkConfig::new(s, 0.05, 0.5, plus_state()).unwrap().with_seed(42).with_trajectories(50);
        let a = Walker::new(cfg.clone()).unwrap().run_all().unwrap();
        let b = Walker::new(cfg).unwrap().run_all().unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_trajectories_csv(&mut buf_a, 42, &a).unwrap();
        write_trajectories_csv(&mut buf_b, 42, &b).unwrap();
        assert_eq!(buf_a, buf_b);
        let text = String::from_utf8(buf_a).unwrap();
        assert!(text.starts_with("seed,index,outcome,steps,path_checksum,final_state_re_0,final_state_re_1,final_state_im_0,final_state_im_1\n"));
    }

    #[test]
    fn checksum_matches_the_sequence() {
        let cfg = WalkConfig::new(EpsilonSchedule::zero(1, 0.3).unwrap(), 0.1, 0.3, ket0(1)).unwrap();
        let walker = Walker::new(cfg.with_seed(8)).unwrap();
        let r = walker.run(0).unwrap();
        // the pointer path is a ±1 walk ending at ±3; recover it by replaying
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        rng.set_stream(0);
        let mut seq = Vec::new();
        let mut pos = 0i64;
        while pos.abs() < 3 {
            let o = if rng.random::<f64>() < 0.5 { Outcome::Plus } else { Outcome::Minus };
            pos += o.sign();
            seq.push(o);
        }
        assert_eq!(r.steps, seq.len());
        assert_eq!(r.path_checksum, path_checksum(&seq));
    }

    #[test]
    fn zero_schedule_walk_operators_are_identity() {
        let s = EpsilonSchedule::zero(2, 1.0).unwrap();
        let w = total_walk_operator(&s, 1.0, 0.1).unwrap();
        let id = ComplexMatrix::identity(2, 2);
        assert!((&w.m_plus - &id).norm() < 1e-14 && (&w.m_minus - &id).norm() < 1e-14);
        let pair = endpoint_pair(&w).unwrap();
        let half = &id * c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert!((pair.m1 - &half).norm() < 1e-14 && (pair.m2 - &half).norm() < 1e-14);
    }

    fn continuum_diagonal(c: f64, x: f64) -> f64 {
        (x - c).cosh().ln() * 0.5 - c.cosh().ln() * 0.5
    }

    #[test]
    fn diagonal_walk_operator_follows_log_cosh() {
        let centers = [0.7, -0.4];
        let x_max = 2.0;
        let delta = 1e-3;
        let s = qubit_closed(centers, x_max);
        let w = total_walk_operator(&s, x_max, delta).unwrap();
        assert!(w.off_diagonal_mass <= 1e-8);
        // the common factor cancels in the ratio of the two entries
        let got = (w.n_diagonal_plus[0] / w.n_diagonal_plus[1]).ln();
        let expect = continuum_diagonal(centers[0], x_max) - continuum_diagonal(centers[1], x_max);
        assert!((got - expect).abs() < 1e-6, "got {got}, expected {expect}");
        let got = (w.n_diagonal_minus[0] / w.n_diagonal_minus[1]).ln();
        let expect = continuum_diagonal(-centers[0], x_max) - continuum_diagonal(-centers[1], x_max);
        assert!((got - expect).abs() < 1e-6, "got {got}, expected {expect}");
    }

    #[test]
    fn endpoint_eigenvalues_are_interior_and_monotone() {
        let mut prev = f64::INFINITY;
        for c in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let s = qubit_closed([c, -c], 2.0);
            let pair = endpoint_pair(&total_walk_operator(&s, 2.0, 0.01).unwrap()).unwrap();
            let l = pair.m1[(0, 0)].re;
            assert!(l > 0.0 && l < 1.0);
            assert!(pair.m1[(1, 1)].re > 0.0 && pair.m1[(1, 1)].re < 1.0);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn rotated_closed_form_endpoints_are_diagonal_in_its_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = crate::matcore::random_unitary(3, &mut rng);
        let s: EpsilonSchedule = ClosedForm::new(u, vec![0.4, -0.9, 1.5], 1.0).unwrap().into();
        let w = total_walk_operator(&s, 1.0, 0.01).unwrap();
        assert!(w.off_diagonal_mass <= 1e-8);
        let pair = endpoint_pair(&w).unwrap();
        assert!(pair.completeness_residual <= 1e-4);
    }

    #[test]
    fn constant_schedule_is_not_path_independent() {
        let s = EpsilonSchedule::constant(Hermitian::from_real_diagonal(&[1.0, 0.0]), 0.4).unwrap();
        let cfg = WalkConfig::new(s, 0.1, 0.4, plus_state()).unwrap();
        let e = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
        assert!(e.fidelity_spread(Outcome::Plus) > 1e-4);
    }

    #[test]
    fn enumeration_respects_size_limit() {
        let cfg = WalkConfig::new(EpsilonSchedule::zero(1, 2.0).unwrap(), 0.1, 2.0, ket0(1)).unwrap();
        assert!(matches!(enumerate_paths(&cfg, &EnumerateOptions::default()), Err(Error::Resource(_))));
    }

    #[test]
    fn config_validation() {
        let s = EpsilonSchedule::zero(2, 1.0).unwrap();
        assert!(WalkConfig::new(s.clone(), 0.3, 1.0, ket0(2)).is_err());
        assert!(WalkConfig::new(s.clone(), 0.1, 1.0, ket0(2) * c64(2.0, 0.0)).is_err());
        assert!(WalkConfig::new(s.clone(), 0.0, 1.0, ket0(2)).is_err());
        assert!(WalkConfig::new(s, 0.1, 2.0, ket0(2)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn steps_are_complete(seed in any::<u64>(), n in 1usize..=8, d in prop::sample::select(vec![0.2, 0.05, 0.01])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_hermitian(n, &mut rng);
            let (p, m) = step_operators(&e, d).unwrap();
            prop_assert!(completeness(&p, &m) <= 1e-12);
        }
    }
}
