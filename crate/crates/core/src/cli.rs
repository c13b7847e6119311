//! Subcommand drivers for the `contdec` binary.
//!
//! Every numeric parameter comes from a JSON config; flags only pick paths,
//! the seed, tolerance overrides and verbosity. Reports are JSON with 17
//! significant digits per float, written atomically into the output directory.
//!
//! Exit codes: 0 ok, 1 input, 2 resource, 3 simulation, 4 not achievable.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::closure::{find_closed_subspaces, ClosureOptions};
use crate::dynamics::{
    reversibility_residual, CenterBlock, ClosedForm, EpsilonSchedule, MatrixDoc, ScheduleDoc,
};
use crate::error::{Error, Result};
use crate::jordan::{block_decompose_with, spectrum_capacity, BlockDecomposition, DEFAULT_SEED};
use crate::matcore::{c64, ComplexMatrix, Hermitian, StateVector, Unitary};
use crate::synth::{check_achievable, polar_plan, synthesize, AchievabilityReport, TargetMeasurement};
use crate::walk::{
    endpoint_pair_with_limit, enumerate_paths, schedule_step_operators, summarize, total_walk_operator,
    write_trajectories_csv, EnumerateOptions, Outcome, WalkConfig, WalkSummary, Walker,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 3;
pub const EXIT_NOT_ACHIEVABLE: i32 = 4;
pub const THREADS_ENV: &str = "CONTDEC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "contdec", version, about = "Continuous weak-measurement decomposition toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed subspaces and block structure of a control set.
    Analyze(CommonArgs),
    /// Monte Carlo trajectories of the feedback walk.
    Simulate(CommonArgs),
    /// Completeness, reversibility order and path independence checks.
    Verify(CommonArgs),
    /// Achievability check and schedule for a target measurement.
    Synthesize(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Explore every violating form at each closure node.
    #[arg(long)]
    pub exhaustive: bool,
    /// `key=value`; repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VALUE")]
    pub tol_override: Vec<String>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(short, long)]
    pub quiet: bool,
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Analyze(a) | Command::Simulate(a) | Command::Verify(a) | Command::Synthesize(a) => a,
        }
    }
}

/// Tolerances reachable through `--tol-override`.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub closure_tol: f64,
    pub witt_tol: f64,
    pub achievability_tol: f64,
    pub merge_tol: f64,
    pub mass_tol: f64,
    pub normalization_limit: f64,
    pub completeness: f64,
    pub path_fidelity: f64,
    pub order_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            closure_tol: 1e-8,
            witt_tol: 1e-9,
            achievability_tol: 1e-6,
            merge_tol: 1e-13,
            mass_tol: 1e-12,
            normalization_limit: 1e-4,
            completeness: 1e-12,
            path_fidelity: 1e-8,
            order_threshold: 2.5,
        }
    }
}

impl Tolerances {
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("--tol-override expects key=value, got {item:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("--tol-override {key}: not a number: {value:?}")))?;
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Input(format!("--tol-override {key}: must be positive")));
            }
            let slot = match key.trim() {
                "closure_tol" => &mut self.closure_tol,
                "witt_tol" => &mut self.witt_tol,
                "achievability_tol" => &mut self.achievability_tol,
                "merge_tol" => &mut self.merge_tol,
                "mass_tol" => &mut self.mass_tol,
                "normalization_limit" => &mut self.normalization_limit,
                "completeness" => &mut self.completeness,
                "path_fidelity" => &mut self.path_fidelity,
                "order_threshold" => &mut self.order_threshold,
                other => return Err(Error::Input(format!("unknown tolerance key {other:?}"))),
            };
            *slot = value;
        }
        Ok(())
    }
}

/// Complex matrix as separate real and imaginary row-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexDoc {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl ComplexDoc {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let rows = |f: fn(&num_complex::Complex64) -> f64| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Self {
            re: rows(|z| z.re),
            im: Some(rows(|z| z.im)),
        }
    }

    pub fn to_matrix(&self, field: &str) -> Result<ComplexMatrix> {
        let rows = self.re.len();
        let cols = self.re.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::Input(format!("{field}: empty matrix")));
        }
        if self.re.iter().any(|r| r.len() != cols) {
            return Err(Error::Input(format!("{field}.re: ragged rows")));
        }
        if let Some(im) = &self.im {
            if im.len() != rows || im.iter().any(|r| r.len() != cols) {
                return Err(Error::Input(format!("{field}.im: shape differs from re")));
            }
        }
        let m = ComplexMatrix::from_fn(rows, cols, |i, j| {
            let im = self.im.as_ref().map_or(0.0, |m| m[i][j]);
            c64(self.re[i][j], im)
        });
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Input(format!("{field}: non-finite entry")));
        }
        Ok(m)
    }

    pub fn to_hermitian(&self, field: &str) -> Result<Hermitian> {
        let m = self.to_matrix(field)?;
        Hermitian::new(m).map_err(|e| Error::Input(format!("{field}: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorDoc {
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Option<Vec<f64>>,
}

impl VectorDoc {
    /// The state, normalized.
    pub fn to_state(&self, field: &str) -> Result<StateVector> {
        let n = self.re.len();
        if n == 0 {
            return Err(Error::Input(format!("{field}: empty vector")));
        }
        if self.im.as_ref().is_some_and(|im| im.len() != n) {
            return Err(Error::Input(format!("{field}.im: length differs from re")));
        }
        let v = StateVector::from_fn(n, |i, _| c64(self.re[i], self.im.as_ref().map_or(0.0, |m| m[i])));
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Input(format!("{field}: state must be finite and nonzero")));
        }
        if (norm - 1.0).abs() > 1e-12 {
            log::warn!("{field}: normalizing state of norm {norm}");
        }
        Ok(v / c64(norm, 0.0))
    }
}

/// How the interaction schedule is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `ε(x) = U diag(-½ tanh(x - c_i)) U†`, `U` the identity if absent.
    Centers {
        centers: Vec<f64>,
        #[serde(default)]
        frame: Option<ComplexDoc>,
        #[serde(default)]
        blocks: Vec<CenterBlock>,
    },
    Constant {
        e: ComplexDoc,
    },
    Zero {
        dim: usize,
    },
    /// A schedule document as written by `synthesize`, relative to the config.
    File {
        path: PathBuf,
    },
}

impl ScheduleSpec {
    fn build(&self, x_max: f64, base: &Path) -> Result<EpsilonSchedule> {
        match self {
            ScheduleSpec::Centers { centers, frame, blocks } => {
                let frame = match frame {
                    Some(f) => Unitary::new(f.to_matrix("schedule.frame")?)
                        .map_err(|e| Error::Input(format!("schedule.frame: {e}")))?,
                    None => Unitary::identity(centers.len()),
                };
                Ok(ClosedForm::new(frame, centers.clone(), x_max)?
                    .with_blocks(blocks.clone())?
                    .into())
            }
            ScheduleSpec::Constant { e } => EpsilonSchedule::constant(e.to_hermitian("schedule.e")?, x_max),
            ScheduleSpec::Zero { dim } => {
                if *dim == 0 {
                    return Err(Error::Input("schedule.dim: must be positive".into()));
                }
                EpsilonSchedule::zero(*dim, x_max)
            }
            ScheduleSpec::File { path } => {
                let doc: ScheduleDoc = read_json(&base.join(path))?;
                EpsilonSchedule::try_from(doc)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub controls: Vec<ComplexDoc>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub branch_cap: Option<usize>,
    #[serde(default)]
    pub max_nodes: Option<usize>,
    /// Report non-maximal closed subspaces too.
    #[serde(default)]
    pub keep_all: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schedule: ScheduleSpec,
    pub delta: f64,
    #[serde(rename = "X")]
    pub x_max: f64,
    pub psi0: VectorDoc,
    pub trajectories: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Run the exact path sum as an oracle when `N` is at most this.
    #[serde(default = "default_oracle_max_n")]
    pub oracle_max_n: usize,
}

fn default_oracle_max_n() -> usize {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub schedule: ScheduleSpec,
    pub delta: f64,
    #[serde(rename = "X")]
    pub x_max: f64,
    #[serde(default)]
    pub psi0: Option<VectorDoc>,
    /// Step at which the reversibility order is measured.
    #[serde(default = "default_reversibility_delta")]
    pub reversibility_delta: f64,
    /// Walk used for the path-independence check; defaults to `delta`, `X`.
    #[serde(default)]
    pub path_delta: Option<f64>,
    #[serde(default, rename = "path_X")]
    pub path_x_max: Option<f64>,
    #[serde(default = "default_oracle_max_n")]
    pub path_max_n: usize,
}

fn default_reversibility_delta() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub controls: Vec<ComplexDoc>,
    pub target: ComplexDoc,
    /// `M2`; `(I - M1†M1)^{1/2}` if absent.
    #[serde(default)]
    pub target_m2: Option<ComplexDoc>,
    pub delta: f64,
    #[serde(rename = "X")]
    pub x_max: f64,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("{field}: must be positive and finite, got {v}")))
    }
}

/// Read a JSON document; errors name the offending field path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Input(format!("{path}: {}", e.into_inner()))
    })
}

/// Writes every float as `{:.16e}`, i.e. 17 significant digits.
struct SigFormatter;

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serializer emits UTF-8"))
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn controls_from(docs: &[ComplexDoc]) -> Result<Vec<Hermitian>> {
    if docs.is_empty() {
        return Err(Error::Input("controls: at least one control is required".into()));
    }
    let controls = docs
        .iter()
        .enumerate()
        .map(|(i, d)| d.to_hermitian(&format!("controls[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let n = controls[0].dim();
    if let Some(i) = controls.iter().position(|h| h.dim() != n) {
        return Err(Error::Input(format!("controls[{i}]: size differs from controls[0]")));
    }
    Ok(controls)
}

/// Run one parsed command line; returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Synthesize(a) => cmd_synthesize(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn tolerances(args: &CommonArgs) -> Result<Tolerances> {
    let mut t = Tolerances::default();
    t.apply_overrides(&args.tol_override)?;
    Ok(t)
}

fn config_dir(args: &CommonArgs) -> PathBuf {
    args.config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn emit<T: Serialize>(args: &CommonArgs, name: &str, report: &T) -> Result<()> {
    let text = to_json(report)?;
    let path = args.out.join(name);
    write_atomic(&path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SubspaceReport {
    pub dim: usize,
    pub closure_residual: f64,
    pub provenance: Vec<crate::closure::Choice>,
    pub decomposition: BlockDecomposition,
    pub spectrum_capacity: usize,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub system_dim: usize,
    pub control_count: usize,
    pub nodes_visited: usize,
    pub subspaces: Vec<SubspaceReport>,
}

pub fn cmd_analyze(args: &CommonArgs) -> Result<i32> {
    let tol = tolerances(args)?;
    let cfg: AnalyzeConfig = read_json(&args.config)?;
    let controls = controls_from(&cfg.controls)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut opts = ClosureOptions {
        closure_tol: tol.closure_tol,
        witt_tol: tol.witt_tol,
        exhaustive: args.exhaustive,
        keep_all: cfg.keep_all,
        ..ClosureOptions::default()
    };
    if let Some(c) = cfg.branch_cap {
        opts.branch_cap = c;
    }
    if let Some(m) = cfg.max_nodes {
        opts.max_nodes = m;
    }
    let found = find_closed_subspaces(&controls, &opts)?;
    let mut subspaces = Vec::new();
    for s in &found.subspaces {
        let decomposition = block_decompose_with(&s.matrix_basis, seed)?;
        subspaces.push(SubspaceReport {
            dim: s.dim(),
            closure_residual: s.closure_residual,
            provenance: s.provenance.clone(),
            spectrum_capacity: spectrum_capacity(&decomposition),
            decomposition,
        });
    }
    let report = AnalyzeReport {
        system_dim: controls[0].dim(),
        control_count: controls.len(),
        nodes_visited: found.nodes_visited,
        subspaces,
    };
    emit(args, "analyze.json", &report)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub p_plus: f64,
    pub p_minus: f64,
    pub unabsorbed: f64,
    pub steps: usize,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub delta: f64,
    #[serde(rename = "X")]
    pub x_max: f64,
    pub steps_to_boundary: usize,
    pub summary: WalkSummary,
    /// `(p̂ - p_Born)/σ`.
    pub z_score: f64,
    pub within_3_sigma: bool,
    pub ode_discrepancy: f64,
    pub enumeration: Option<OracleReport>,
    pub csv: String,
}

pub fn cmd_simulate(args: &CommonArgs) -> Result<i32> {
    let tol = tolerances(args)?;
    let cfg: SimulateConfig = read_json(&args.config)?;
    positive("delta", cfg.delta)?;
    positive("X", cfg.x_max)?;
    if cfg.trajectories == 0 {
        return Err(Error::Input("trajectories: must be positive".into()));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let schedule = cfg.schedule.build(cfg.x_max, &config_dir(args))?;
    let psi0 = cfg.psi0.to_state("psi0")?;
    let walk = WalkConfig::new(schedule, cfg.delta, cfg.x_max, psi0.clone())?
        .with_seed(seed)
        .with_trajectories(cfg.trajectories);
    let ops = total_walk_operator(&walk.schedule, cfg.x_max, cfg.delta)?;
    let pair = endpoint_pair_with_limit(&ops, tol.normalization_limit)?;
    let records = Walker::new(walk.clone())?.run_all()?;

    let mut csv = Vec::new();
    write_trajectories_csv(&mut csv, seed, &records)?;
    let csv_path = args.out.join("trajectories.csv");
    write_atomic(&csv_path, &csv)?;

    let summary = summarize(&records, &pair, &psi0);
    let z_score = if summary.sigma > 0.0 {
        (summary.p_plus_empirical - summary.p_plus_born) / summary.sigma
    } else {
        0.0
    };
    let enumeration = if walk.steps_to_boundary() <= cfg.oracle_max_n {
        let opts = EnumerateOptions {
            max_n: cfg.oracle_max_n,
            merge_tol: tol.merge_tol,
            mass_tol: tol.mass_tol,
            ..EnumerateOptions::default()
        };
        let e = enumerate_paths(&walk, &opts)?;
        Some(OracleReport {
            p_plus: e.p_plus,
            p_minus: e.p_minus,
            unabsorbed: e.unabsorbed,
            steps: e.steps,
        })
    } else {
        None
    };
    let report = SimulateReport {
        seed,
        delta: cfg.delta,
        x_max: cfg.x_max,
        steps_to_boundary: walk.steps_to_boundary(),
        within_3_sigma: z_score.abs() <= 3.0,
        z_score,
        summary,
        ode_discrepancy: ops.ode_discrepancy,
        enumeration,
        csv: "trajectories.csv".into(),
    };
    emit(args, "summary.json", &report)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub all_pass: bool,
    pub checks: Vec<CheckResult>,
}

/// Residual floor below which a schedule counts as exactly reversible.
const REVERSIBLE_FLOOR: f64 = 1e-14;

/// Local order of the reversibility residual from halving `delta`, sampled
/// at five interior points. `None` when the residual is at roundoff.
pub fn reversibility_order(schedule: &EpsilonSchedule, x_max: f64, delta: f64) -> Result<(Option<f64>, f64, f64)> {
    let span = (x_max - delta).max(0.0) * 0.5;
    let points: Vec<f64> = (0..5).map(|i| -span + span * 0.5 * i as f64).collect();
    let worst = |d: f64| -> Result<f64> {
        points
            .iter()
            .try_fold(0.0_f64, |m, &x| Ok(m.max(reversibility_residual(schedule, x, d)?)))
    };
    let r1 = worst(delta)?;
    let r2 = worst(delta / 2.0)?;
    if r1 <= REVERSIBLE_FLOOR {
        return Ok((None, r1, r2));
    }
    Ok((Some((r1 / r2).log2()), r1, r2))
}

pub fn cmd_verify(args: &CommonArgs) -> Result<i32> {
    let tol = tolerances(args)?;
    let cfg: VerifyConfig = read_json(&args.config)?;
    positive("delta", cfg.delta)?;
    positive("X", cfg.x_max)?;
    positive("reversibility_delta", cfg.reversibility_delta)?;
    let schedule = cfg.schedule.build(cfg.x_max, &config_dir(args))?;
    let n = schedule.dim();
    let psi0 = match &cfg.psi0 {
        Some(v) => v.to_state("psi0")?,
        None => StateVector::from_element(n, c64(1.0 / (n as f64).sqrt(), 0.0)),
    };
    let walk = WalkConfig::new(schedule.clone(), cfg.delta, cfg.x_max, psi0.clone())?;
    let mut checks = Vec::new();

    let steps = walk.steps_to_boundary() as i64;
    let id = ComplexMatrix::identity(n, n);
    let mut worst: f64 = 0.0;
    for j in (1 - steps)..steps {
        let (p, m) = schedule_step_operators(&schedule, j as f64 * cfg.delta, cfg.delta)?;
        worst = worst.max((p.adjoint() * &p + m.adjoint() * &m - &id).norm());
    }
    checks.push(CheckResult {
        name: "step_completeness".into(),
        pass: worst <= tol.completeness,
        value: Some(worst),
        limit: Some(tol.completeness),
        detail: format!("max over {} pointer positions", 2 * steps - 1),
    });

    let (order, r1, r2) = reversibility_order(&schedule, cfg.x_max, cfg.reversibility_delta)?;
    checks.push(CheckResult {
        name: "reversibility_order".into(),
        pass: order.is_none_or(|o| o > tol.order_threshold),
        value: order,
        limit: Some(tol.order_threshold),
        detail: format!(
            "residual {r1:.3e} at delta {}, {r2:.3e} at half step",
            cfg.reversibility_delta
        ),
    });

    match total_walk_operator(&schedule, cfg.x_max, cfg.delta)
        .and_then(|ops| endpoint_pair_with_limit(&ops, tol.normalization_limit).map(|p| (ops, p)))
    {
        Ok((ops, pair)) => {
            checks.push(CheckResult {
                name: "endpoint_normalization".into(),
                pass: true,
                value: Some(pair.completeness_residual),
                limit: Some(tol.normalization_limit),
                detail: format!("a = {}, b = {}", pair.a, pair.b),
            });
            checks.push(CheckResult {
                name: "walk_matches_flow".into(),
                pass: ops.ode_discrepancy <= ops.ode_tolerance,
                value: Some(ops.ode_discrepancy),
                limit: Some(ops.ode_tolerance),
                detail: "step product against the continuum flow".into(),
            });
        }
        Err(e @ Error::Normalization { .. }) => checks.push(CheckResult {
            name: "endpoint_normalization".into(),
            pass: false,
            value: None,
            limit: Some(tol.normalization_limit),
            detail: e.to_string(),
        }),
        Err(e @ Error::Consistency(_)) => checks.push(CheckResult {
            name: "walk_matches_flow".into(),
            pass: false,
            value: None,
            limit: None,
            detail: e.to_string(),
        }),
        Err(e) => return Err(e),
    }

    let path_delta = cfg.path_delta.unwrap_or(cfg.delta);
    let path_x = cfg.path_x_max.unwrap_or(cfg.x_max);
    positive("path_delta", path_delta)?;
    positive("path_X", path_x)?;
    let path_walk = WalkConfig::new(schedule.clone(), path_delta, path_x, psi0)?;
    if path_walk.steps_to_boundary() <= cfg.path_max_n {
        let opts = EnumerateOptions {
            max_n: cfg.path_max_n,
            merge_tol: tol.merge_tol,
            mass_tol: tol.mass_tol,
            ..EnumerateOptions::default()
        };
        let e = enumerate_paths(&path_walk, &opts)?;
        let spread = e.fidelity_spread(Outcome::Plus).max(e.fidelity_spread(Outcome::Minus));
        checks.push(CheckResult {
            name: "path_independence".into(),
            pass: spread <= tol.path_fidelity,
            value: Some(spread),
            limit: Some(tol.path_fidelity),
            detail: format!(
                "N = {}, {} + {} distinct conditioned states",
                path_walk.steps_to_boundary(),
                e.plus_states.len(),
                e.minus_states.len()
            ),
        });
    } else {
        checks.push(CheckResult {
            name: "path_independence".into(),
            pass: true,
            value: None,
            limit: Some(tol.path_fidelity),
            detail: format!(
                "skipped: N = {} exceeds path_max_n = {}",
                path_walk.steps_to_boundary(),
                cfg.path_max_n
            ),
        });
    }

    let all_pass = checks.iter().all(|c| c.pass);
    emit(args, "verify.json", &VerifyReport { all_pass, checks })?;
    Ok(if all_pass { EXIT_OK } else { EXIT_FAILED_CHECK })
}

#[derive(Debug, Serialize)]
pub struct CandidateReport {
    pub subspace: usize,
    pub dim: usize,
    pub report: AchievabilityReport,
}

#[derive(Debug, Serialize)]
pub struct SynthesisReport {
    pub centers: Vec<f64>,
    pub target_eigenvalues: Vec<f64>,
    pub predicted: Vec<f64>,
    pub recovered: Vec<f64>,
    pub roundtrip_error: f64,
    pub a: f64,
    pub b: f64,
    pub completeness_residual: f64,
    pub iterations: usize,
    pub schedule_file: String,
}

#[derive(Debug, Serialize)]
pub struct PolarReport {
    pub w1: MatrixDoc,
    pub w2: MatrixDoc,
    pub p1: MatrixDoc,
    pub p2: MatrixDoc,
}

#[derive(Debug, Serialize)]
pub struct SynthesizeReport {
    pub achievable: bool,
    pub selected: Option<usize>,
    pub candidates: Vec<CandidateReport>,
    pub synthesis: Option<SynthesisReport>,
    pub polar: Option<PolarReport>,
}

pub fn cmd_synthesize(args: &CommonArgs) -> Result<i32> {
    let tol = tolerances(args)?;
    let cfg: SynthesizeConfig = read_json(&args.config)?;
    positive("delta", cfg.delta)?;
    positive("X", cfg.x_max)?;
    let controls = controls_from(&cfg.controls)?;
    let m1 = cfg.target.to_matrix("target")?;
    if m1.nrows() != controls[0].dim() || !m1.is_square() {
        return Err(Error::Input(format!(
            "target: expected {n}x{n}, got {}x{}",
            m1.nrows(),
            m1.ncols(),
            n = controls[0].dim()
        )));
    }
    let tolerance = args
        .tol_override
        .iter()
        .any(|o| o.trim_start().starts_with("achievability_tol"))
        .then_some(tol.achievability_tol)
        .or(cfg.tolerance)
        .unwrap_or(tol.achievability_tol);
    let target = TargetMeasurement::new(m1.clone(), tolerance)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);

    let opts = ClosureOptions {
        closure_tol: tol.closure_tol,
        witt_tol: tol.witt_tol,
        exhaustive: args.exhaustive,
        ..ClosureOptions::default()
    };
    let found = find_closed_subspaces(&controls, &opts)?;
    let mut candidates = Vec::new();
    for (i, s) in found.subspaces.iter().enumerate() {
        let decomposition = block_decompose_with(&s.matrix_basis, seed)?;
        candidates.push(CandidateReport {
            subspace: i,
            dim: s.dim(),
            report: check_achievable(&target, &decomposition, &s.matrix_basis),
        });
    }
    let selected = candidates.iter().position(|c| c.report.achievable);
    let mut report = SynthesizeReport {
        achievable: selected.is_some(),
        selected,
        candidates,
        synthesis: None,
        polar: None,
    };
    if selected.is_none() {
        for c in &report.candidates {
            for v in &c.report.violations {
                eprintln!("subspace {}: {v}", c.subspace);
            }
        }
        emit(args, "synthesize.json", &report)?;
        return Ok(EXIT_NOT_ACHIEVABLE);
    }

    let synthesis = synthesize(&target, cfg.x_max, cfg.delta)?;
    let schedule_file = "schedule.json".to_string();
    let doc = ScheduleDoc::from(synthesis.schedule.clone());
    write_atomic(&args.out.join(&schedule_file), to_json(&doc)?.as_bytes())?;

    let m2 = match &cfg.target_m2 {
        Some(d) => d.to_matrix("target_m2")?,
        None => {
            let p1sq = m1.adjoint() * &m1;
            let rest = Hermitian::with_tolerance(ComplexMatrix::identity(m1.nrows(), m1.nrows()) - p1sq, 1e-9)?;
            crate::matcore::scalar_function(&rest, |l| l.max(0.0).sqrt())?.into_matrix()
        }
    };
    let plan = polar_plan(&m1, &m2)?;
    report.polar = Some(PolarReport {
        w1: MatrixDoc::from_matrix(plan.w1.matrix()),
        w2: MatrixDoc::from_matrix(plan.w2.matrix()),
        p1: MatrixDoc::from_matrix(plan.p1.matrix()),
        p2: MatrixDoc::from_matrix(plan.p2.matrix()),
    });
    report.synthesis = Some(SynthesisReport {
        centers: synthesis.solution.centers.clone(),
        target_eigenvalues: synthesis.target_eigenvalues.clone(),
        predicted: synthesis.solution.predicted.clone(),
        recovered: synthesis.recovered.clone(),
        roundtrip_error: synthesis.roundtrip_error,
        a: synthesis.solution.a,
        b: synthesis.solution.b,
        completeness_residual: synthesis.solution.completeness_residual,
        iterations: synthesis.solution.iterations,
        schedule_file,
    });
    emit(args, "synthesize.json", &report)?;
    Ok(EXIT_OK)
}

/// Configure logging and the worker pool from flags and the environment.
pub fn init(args: &CommonArgs) {
    let level = if args.quiet {
        log::LevelFilter::Error
    } else {
        match args.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => log::warn!("{THREADS_ENV}={v:?} ignored"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_and_reject_unknown_keys() {
        let mut t = Tolerances::default();
        t.apply_overrides(&["closure_tol=1e-6".into(), " merge_tol = 1e-10".into()])
            .unwrap();
        assert_eq!(t.closure_tol, 1e-6);
        assert_eq!(t.merge_tol, 1e-10);
        assert!(t.apply_overrides(&["nope=1".into()]).is_err());
        assert!(t.apply_overrides(&["closure_tol".into()]).is_err());
        assert!(t.apply_overrides(&["closure_tol=-1".into()]).is_err());
    }

    #[test]
    fn json_floats_round_trip_bit_exact() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0];
        let text = to_json(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(to_json(&f64::NAN).unwrap().trim(), "null");
    }

    #[test]
    fn unknown_fields_are_named() {
        let text = r#"{"controls": [{"re": [[1, 0], [0, 1]], "imag": [[0, 0], [0, 0]]}]}"#;
        let err = parse_json::<AnalyzeConfig>(text).unwrap_err().to_string();
        assert!(err.contains("controls[0]"), "{err}");
        assert!(err.contains("imag"), "{err}");
    }

    #[test]
    fn complex_doc_shapes() {
        let d = ComplexDoc {
            re: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
            im: None,
        };
        assert!(d.to_hermitian("z").is_ok());
        let ragged = ComplexDoc {
            re: vec![vec![1.0, 0.0], vec![0.0]],
            im: None,
        };
        assert!(matches!(ragged.to_matrix("r"), Err(Error::Input(_))));
        let m = ComplexMatrix::from_fn(2, 2, |i, j| c64(i as f64, j as f64));
        let back = ComplexDoc::from_matrix(&m).to_matrix("m").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn reversibility_orders() {
        let closed: EpsilonSchedule =
            ClosedForm::new(Unitary::identity(2), vec![1.0, -1.0], 2.0).unwrap().into();
        let (o, _, _) = reversibility_order(&closed, 2.0, 1e-2).unwrap();
        assert!(o.unwrap() > 2.5);
        let e = Hermitian::from_real_diagonal(&[1.0, 0.0]);
        let constant = EpsilonSchedule::constant(e, 2.0).unwrap();
        let (o, _, _) = reversibility_order(&constant, 2.0, 1e-2).unwrap();
        assert!((o.unwrap() - 2.0).abs() < 0.1);
        let zero = EpsilonSchedule::zero(2, 2.0).unwrap();
        assert!(reversibility_order(&zero, 2.0, 1e-2).unwrap().0.is_none());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
