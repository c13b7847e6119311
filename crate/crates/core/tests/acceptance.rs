//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured quantities and then asserts the criterion.

use std::time::{Duration, Instant};

use contdec::closure::{find_closed_subspaces, ClosureOptions};
use contdec::dynamics::{
    derive_scale, integrate_controls, reversibility_residual, Alpha, ClosedForm, EpsilonSchedule,
    IntegrateOptions,
};
use contdec::jordan::{block_decompose_with, spectrum_capacity, TypeTag, DEFAULT_SEED};
use contdec::matcore::{
    c64, eigensystem, pauli, random_hermitian, random_state, random_unitary, ComplexMatrix, Hermitian,
    StateVector, Unitary,
};
use contdec::structure::compute_gamma;
use contdec::synth::{centers_from_eigenvalues, check_achievable, synthesize, TargetMeasurement};
use contdec::walk::{
    endpoint_pair, enumerate_paths, step_operators, total_walk_operator, EnumerateOptions, Outcome, WalkConfig,
    Walker,
};
use contdec::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let ok = pass && elapsed < limit;
    println!(
        "criterion {id} ({name}): {} | {detail} | {:.2} s of {} s",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(elapsed < limit, "criterion {id} exceeded its runtime budget");
}

fn closed_form(frame: Unitary, centers: Vec<f64>, x_max: f64) -> EpsilonSchedule {
    ClosedForm::new(frame, centers, x_max).unwrap().into()
}

fn diag(values: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| c64(v, 0.0)),
    ))
}

fn real_sym_basis(n: usize) -> Vec<Hermitian> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            let mut m = ComplexMatrix::zeros(n, n);
            m[(i, j)] = c64(1.0, 0.0);
            m[(j, i)] = c64(1.0, 0.0);
            out.push(Hermitian::new(m).unwrap());
        }
    }
    out
}

fn full_herm2() -> Vec<Hermitian> {
    vec![pauli::identity(2), pauli::x(), pauli::y(), pauli::z()]
}

/// `A + iB ↦ [[A, -B], [B, A]]`.
fn realify(h: &Hermitian) -> Hermitian {
    let n = h.dim();
    let m = h.matrix();
    let out = ComplexMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        let v = match (i / n, j / n) {
            (0, 0) | (1, 1) => z.re,
            (0, 1) => -z.im,
            _ => z.im,
        };
        c64(v, 0.0)
    });
    Hermitian::new(out).unwrap()
}

/// Quaternionic Hermitian 2×2 matrices represented on `C^4`.
fn quat_in_complex() -> Vec<Hermitian> {
    ["II", "ZI", "XI", "YZ", "YY", "YX"].iter().map(|s| pauli::string(s)).collect()
}

fn direct_sum(a: &[Hermitian], b: &[Hermitian]) -> Vec<Hermitian> {
    let (na, nb) = (a[0].dim(), b[0].dim());
    let embed = |h: &Hermitian, off: usize| {
        let mut m = ComplexMatrix::zeros(na + nb, na + nb);
        m.view_mut((off, off), (h.dim(), h.dim())).copy_from(h.matrix());
        Hermitian::new(m).unwrap()
    };
    a.iter().map(|h| embed(h, 0)).chain(b.iter().map(|h| embed(h, na))).collect()
}

fn rotate(basis: &[Hermitian], rng: &mut ChaCha8Rng) -> Vec<Hermitian> {
    let u = random_unitary(basis[0].dim(), rng);
    basis.iter().map(|h| u.conjugate(h)).collect()
}

#[test]
fn criterion_1_step_completeness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let e = random_hermitian(n, &mut rng);
        for delta in [0.2, 0.05, 0.01] {
            let (p, m) = step_operators(&e, delta).unwrap();
            let r = (p.adjoint() * &p + m.adjoint() * &m - ComplexMatrix::identity(n, n)).norm();
            worst = worst.max(r);
        }
    }
    report(
        1,
        "step completeness",
        worst <= 1e-12,
        t0.elapsed(),
        Duration::from_secs(5),
        &format!("max residual {worst:.2e} over 300 cases (limit 1e-12)"),
    );
}

#[test]
fn criterion_2_reversibility_order() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let delta = 1e-2;
    let points = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let ratio = |s: &EpsilonSchedule, x: f64| {
        reversibility_residual(s, x, delta).unwrap() / reversibility_residual(s, x, delta / 2.0).unwrap()
    };
    let mut closed_ratios = Vec::new();
    for k in 0..10 {
        let n = 2 + k % 2;
        let centers: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = closed_form(random_unitary(n, &mut rng), centers, 2.0);
        for &x in &points {
            closed_ratios.push(ratio(&s, x));
        }
    }
    let constant = EpsilonSchedule::constant(Hermitian::from_real_diagonal(&[1.0, 0.0]), 2.0).unwrap();
    let control_ratios: Vec<f64> = points.iter().map(|&x| ratio(&constant, x)).collect();

    let within = |r: f64, target: f64| (r - target).abs() <= 0.3 * target;
    let closed_ok = closed_ratios.iter().all(|&r| within(r, 8.0));
    let control_ok = control_ratios.iter().all(|&r| within(r, 4.0));
    let (lo, hi) = closed_ratios
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), &r| (a.min(r), b.max(r)));
    let (clo, chi) = control_ratios
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(a, b), &r| (a.min(r), b.max(r)));
    report(
        2,
        "reversibility order",
        closed_ok && control_ok,
        t0.elapsed(),
        Duration::from_secs(5),
        &format!(
            "closed-form ratio in [{lo:.2}, {hi:.2}] (required 8 +/- 30%), constant control ratio in [{clo:.2}, {chi:.2}] (required 4 +/- 30%)"
        ),
    );
}

#[test]
fn criterion_3_path_independence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let opts = EnumerateOptions::default();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let plus = StateVector::from_vec(vec![c64(h, 0.0), c64(h, 0.0)]);
    let mut worst: f64 = 0.0;
    let mut schedules = vec![closed_form(Unitary::identity(2), vec![0.8, -0.8], 0.2)];
    for _ in 0..4 {
        let centers = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        schedules.push(closed_form(random_unitary(2, &mut rng), centers, 0.2));
    }
    for s in schedules {
        let cfg = WalkConfig::new(s, 0.05, 0.2, plus.clone()).unwrap();
        assert_eq!(cfg.steps_to_boundary(), 4);
        let e = enumerate_paths(&cfg, &opts).unwrap();
        worst = worst
            .max(e.fidelity_spread(Outcome::Plus))
            .max(e.fidelity_spread(Outcome::Minus));
    }
    let constant = EpsilonSchedule::constant(Hermitian::from_real_diagonal(&[1.0, 0.0]), 0.2).unwrap();
    let cfg = WalkConfig::new(constant, 0.05, 0.2, plus).unwrap();
    let e = enumerate_paths(&cfg, &opts).unwrap();
    let control = e.fidelity_spread(Outcome::Plus).max(e.fidelity_spread(Outcome::Minus));
    report(
        3,
        "path independence",
        worst <= 1e-8 && control > 1e-4,
        t0.elapsed(),
        Duration::from_secs(10),
        &format!("closed-form spread {worst:.2e} (limit 1e-8), constant control spread {control:.2e} (needs > 1e-4)"),
    );
}

#[test]
fn criterion_4_born_statistics() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let frame = random_unitary(2, &mut rng);
    let psi0 = random_state(2, &mut rng);

    // Monte Carlo against the exact path sum at N = 8
    let small = closed_form(frame.clone(), vec![0.5, -0.3], 0.2);
    let cfg = WalkConfig::new(small, 0.025, 0.2, psi0.clone())
        .unwrap()
        .with_seed(44)
        .with_trajectories(10_000);
    assert_eq!(cfg.steps_to_boundary(), 8);
    let exact = enumerate_paths(&cfg, &EnumerateOptions::default()).unwrap();
    let records = Walker::new(cfg).unwrap().run_all().unwrap();
    let hits = records.iter().filter(|r| r.outcome == Outcome::Plus).count();
    let p_hat = hits as f64 / records.len() as f64;
    let sigma = (exact.p_plus * (1.0 - exact.p_plus) / records.len() as f64).sqrt();
    let z = (p_hat - exact.p_plus) / sigma;

    // exact path sum against the endpoint Born rule at N = 200
    let big = closed_form(frame, vec![0.5, -0.3], 2.0);
    let cfg = WalkConfig::new(big.clone(), 0.01, 2.0, psi0.clone()).unwrap();
    let opts = EnumerateOptions {
        max_n: 200,
        ..EnumerateOptions::default()
    };
    let paths = enumerate_paths(&cfg, &opts).unwrap();
    let pair = endpoint_pair(&total_walk_operator(&big, 2.0, 0.01).unwrap()).unwrap();
    let born = pair.born_plus(&psi0);
    let gap = (paths.p_plus - born).abs();
    report(
        4,
        "Born statistics",
        z.abs() <= 3.0 && gap <= 1e-3,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!(
            "N=8: p_hat {p_hat:.4} vs exact {:.4} (z = {z:.2}); N=200: exact {:.6} vs Born {born:.6} (gap {gap:.1e}, limit 1e-3)",
            exact.p_plus, paths.p_plus
        ),
    );
}

#[test]
fn criterion_5_closure_enumeration() {
    let t0 = Instant::now();
    let opts = ClosureOptions::default();
    let tol = 1e-8;

    let pair = [pauli::string("II"), pauli::string("XI"), pauli::string("IX")];
    let found = find_closed_subspaces(&pair, &opts).unwrap().subspaces;
    let hand = [
        [pauli::string("II"), pauli::string("XI")],
        [pauli::string("II"), pauli::string("IX")],
    ];
    let pair_ok = found.len() == 2
        && hand.iter().all(|span| {
            found
                .iter()
                .filter(|s| s.dim() == 2 && span.iter().all(|h| s.contains(h, tol)))
                .count()
                == 1
        });

    let real = [pauli::identity(2), pauli::x(), pauli::z()];
    let found = find_closed_subspaces(&real, &opts).unwrap().subspaces;
    let real_ok = found.len() == 1 && found[0].dim() == 3 && real.iter().all(|h| found[0].contains(h, tol));

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut unchanged = 0;
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        let parts = rng.random_range(2..=n);
        let labels: Vec<usize> = (0..n).map(|i| if i < parts { i } else { rng.random_range(0..parts) }).collect();
        let projector = |b: usize| {
            Hermitian::from_real_diagonal(&labels.iter().map(|&l| f64::from(u8::from(l == b))).collect::<Vec<_>>())
        };
        let mut elems = vec![Hermitian::identity(n)];
        for _ in 1..parts {
            let coeffs: Vec<f64> = (0..parts).map(|_| rng.random_range(-1.0..1.0)).collect();
            let projs: Vec<Hermitian> = (0..parts).map(projector).collect();
            elems.push(Hermitian::linear_combination(&coeffs, &projs).unwrap());
        }
        let controls = rotate(&elems, &mut rng);
        let found = find_closed_subspaces(&controls, &opts).unwrap().subspaces;
        if found.len() == 1 && found[0].dim() == parts && controls.iter().all(|h| found[0].contains(h, tol)) {
            unchanged += 1;
        }
    }
    report(
        5,
        "closure enumeration",
        pair_ok && real_ok && unchanged == 20,
        t0.elapsed(),
        Duration::from_secs(10),
        &format!("{{I, XI, IX}} hand spans matched: {pair_ok}; {{I, X, Z}} unchanged: {real_ok}; random closed sets unchanged: {unchanged}/20"),
    );
}

#[test]
fn criterion_6_jordan_classification() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    type Row = (TypeTag, usize, usize, usize);
    let cases: Vec<(&str, Vec<Hermitian>, Vec<Row>)> = vec![
        (
            "S(3,R) + H(2,C)",
            direct_sum(&real_sym_basis(3), &full_herm2()),
            vec![(TypeTag::RealSym, 3, 1, 6), (TypeTag::ComplexHerm, 2, 1, 4)],
        ),
        ("H(2,C) in real form", full_herm2().iter().map(realify).collect(), vec![(TypeTag::ComplexInReal, 2, 2, 4)]),
        ("H(2,H) on C^4", quat_in_complex(), vec![(TypeTag::QuatInComplex, 2, 2, 6)]),
        ("H(2,H) in real form", quat_in_complex().iter().map(realify).collect(), vec![(TypeTag::QuatInReal, 2, 4, 6)]),
        (
            "H(2,C) + S(2,R)",
            direct_sum(&full_herm2(), &real_sym_basis(2)),
            vec![(TypeTag::RealSym, 2, 1, 3), (TypeTag::ComplexHerm, 2, 1, 4)],
        ),
    ];
    let mut failures = Vec::new();
    for (name, basis, mut expected) in cases {
        let rotated = rotate(&basis, &mut rng);
        let b = block_decompose_with(&rotated, DEFAULT_SEED).unwrap();
        let mut got: Vec<Row> = b
            .blocks
            .iter()
            .map(|blk| (blk.type_tag, blk.rank, blk.multiplicity, blk.algebra_dim))
            .collect();
        got.sort_by_key(|r| (r.1, r.3));
        expected.sort_by_key(|r| (r.1, r.3));
        let dims_ok = b.blocks.iter().map(|blk| blk.algebra_dim).sum::<usize>() == basis.len()
            && b.blocks.iter().all(|blk| {
                blk.size() == blk.rank * blk.multiplicity && blk.algebra_dim == blk.type_tag.algebra_dim(blk.rank)
            })
            && b.blocks.iter().map(|blk| blk.size()).sum::<usize>() == basis[0].dim();
        let capacity_ok = spectrum_capacity(&b) == expected.iter().map(|r| r.1).sum::<usize>();
        if got != expected || !dims_ok || !capacity_ok || b.off_block_mass > 1e-8 {
            failures.push(format!("{name}: got {got:?}"));
        }
    }
    report(
        6,
        "Jordan classification",
        failures.is_empty(),
        t0.elapsed(),
        Duration::from_secs(10),
        &if failures.is_empty() {
            "5 rotated constructions classified with exact dimension counts".to_string()
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_7_ode_fidelity() {
    let t0 = Instant::now();
    let opts = IntegrateOptions::default();
    let scalar = compute_gamma(&[pauli::identity(1)]).unwrap();
    let mut worst: f64 = 0.0;
    let mut check = |p0: f64, alpha: f64, end: f64, exact: &dyn Fn(f64) -> f64| {
        let (s, _) = integrate_controls(&[p0], &scalar, &[0], (0.0, end), 1e-4, &Alpha::constant(alpha), &opts).unwrap();
        let EpsilonSchedule::Tabulated(t) = &s else { unreachable!() };
        for (x, p) in t.grid().iter().zip(t.coefficients()) {
            worst = worst.max((p[0] - exact(*x)).abs());
        }
    };
    // ∂p = 2p²: pole at 1/(2 p0)
    check(0.5, 0.0, 0.9, &|x| 0.5 / (1.0 - x));
    // ∂p = 2p² - 1/2: bounded tanh kink
    let c = 0.4f64;
    check(-0.5 * (-c).tanh(), -0.5, 3.0, &|x| -0.5 * (x - c).tanh());
    // ∂p = 2p² + 1/2: pole where the tangent diverges
    let phi = (2.0f64 * 0.1).atan();
    let end = (0.9 * (std::f64::consts::FRAC_PI_2 - phi) * 1e4).floor() * 1e-4;
    check(0.1, 0.5, end, &|x| 0.5 * (x + phi).tan());
    let escape = integrate_controls(&[0.5], &scalar, &[0], (0.0, 1.5), 1e-3, &Alpha::constant(0.0), &opts);
    let escape_ok = matches!(escape, Err(Error::Singularity { escape, .. }) if (escape - 1.0).abs() < 0.01);

    // commuting controls {I, Z}: eigenvalues p0 ± p1 follow separate tanh kinks
    let gz = compute_gamma(&[pauli::identity(2), pauli::z()]).unwrap();
    let (ca, cb) = (0.7f64, -0.9f64);
    let e = |x: f64, c: f64| -0.5 * (x - c).tanh();
    let start = [0.5 * (e(-2.0, ca) + e(-2.0, cb)), 0.5 * (e(-2.0, ca) - e(-2.0, cb))];
    let (s, _) = integrate_controls(&start, &gz, &[0, 1], (-2.0, 2.0), 1e-3, &Alpha::constant(-0.5), &opts).unwrap();
    let EpsilonSchedule::Tabulated(t) = &s else { unreachable!() };
    let mut commuting: f64 = 0.0;
    for (x, p) in t.grid().iter().zip(t.coefficients()) {
        commuting = commuting
            .max((p[0] + p[1] - e(*x, ca)).abs())
            .max((p[0] - p[1] - e(*x, cb)).abs());
    }

    // order by step halving against the closed-form schedule on {I, X}
    let controls = [pauli::identity(2), pauli::x()];
    let gx = compute_gamma(&controls).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let frame = Unitary::new(ComplexMatrix::from_row_slice(2, 2, &[c64(h, 0.), c64(h, 0.), c64(h, 0.), c64(-h, 0.)])).unwrap();
    let closed = closed_form(frame, vec![0.5, -0.3], 2.0);
    let e0 = closed.evaluate(-2.0).unwrap();
    let p0 = [e0.matrix()[(0, 0)].re, e0.matrix()[(0, 1)].re];
    let alpha = Alpha::constant(derive_scale().alpha);
    let err_at = |step: f64| {
        let (tab, _) = integrate_controls(&p0, &gx, &[0, 1], (-2.0, 2.0), step, &alpha, &opts).unwrap();
        (closed.evaluate(2.0).unwrap().matrix() - tab.evaluate(2.0).unwrap().matrix()).norm()
    };
    let order = (err_at(0.02) / err_at(0.01)).log2();

    report(
        7,
        "ODE fidelity",
        worst <= 1e-8 && commuting <= 1e-8 && escape_ok && (3.5..=4.5).contains(&order),
        t0.elapsed(),
        Duration::from_secs(5),
        &format!("scalar error {worst:.1e}, commuting error {commuting:.1e} (limit 1e-8), escape detected: {escape_ok}, RK4 order {order:.3}"),
    );
}

#[test]
fn criterion_8_synthesis_roundtrip() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (x_max, delta) = (4.0, 0.01);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..20 {
        let n = if k < 10 { 2 } else { 4 };
        let lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let target = TargetMeasurement::new(diag(&lambdas), 1e-6).unwrap();
        match synthesize(&target, x_max, delta) {
            Ok(s) => worst = worst.max(s.roundtrip_error),
            Err(e) => failures.push(format!("{lambdas:?}: {e}")),
        }
    }
    let algebra = [pauli::identity(2), pauli::z()];
    let blocks = block_decompose_with(&algebra, DEFAULT_SEED).unwrap();
    let mut boundary_rejected = true;
    for edge in [[0.0, 0.4], [1.0, 0.4]] {
        let t = TargetMeasurement::new(diag(&edge), 1e-6).unwrap();
        let r = check_achievable(&t, &blocks, &algebra);
        boundary_rejected &= !r.achievable && r.violations.iter().any(|v| v.contains("open interval"));
        boundary_rejected &= matches!(centers_from_eigenvalues(&edge, x_max, delta), Err(Error::Input(_)));
    }
    report(
        8,
        "synthesis roundtrip",
        failures.is_empty() && worst <= 1e-4 && boundary_rejected,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!(
            "20 targets at X = {x_max}, delta = {delta}: max eigenvalue error {worst:.1e} (limit 1e-4), {} failures; boundary targets rejected: {boundary_rejected}",
            failures.len()
        ),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_9_spectrum_capacity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let algebras: Vec<Vec<Hermitian>> = vec![
        vec![pauli::identity(2), pauli::z()],
        full_herm2(),
        vec![pauli::string("II"), pauli::string("XI"), pauli::string("ZI")],
        vec![pauli::string("II"), pauli::string("ZI"), pauli::string("IZ"), pauli::string("ZZ")],
        direct_sum(&real_sym_basis(3), &full_herm2()),
    ];
    let (mut achievable, mut over_capacity, mut in_algebra_rejected) = (0, 0, 0);
    for algebra in &algebras {
        let closed = find_closed_subspaces(algebra, &ClosureOptions::default()).unwrap().subspaces;
        assert_eq!(closed.len(), 1);
        let basis = &closed[0].matrix_basis;
        let blocks = block_decompose_with(basis, DEFAULT_SEED).unwrap();
        let n = basis[0].dim();
        for trial in 0..20 {
            let target = if trial % 2 == 0 {
                // an element of the algebra, rescaled into [0.1, 0.9]
                let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h = Hermitian::linear_combination(&coeffs, basis).unwrap();
                let ev = eigensystem(&h).unwrap().eigenvalues;
                let (lo, hi) = (ev[0], ev[n - 1]);
                let scale = if hi - lo > 1e-9 { 0.8 / (hi - lo) } else { 0.0 };
                let id = ComplexMatrix::identity(n, n);
                (h.matrix() - &id * c64(lo, 0.0)) * c64(scale, 0.0) + id * c64(0.1 + if scale == 0.0 { 0.4 } else { 0.0 }, 0.0)
            } else {
                let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
                let u = random_unitary(n, &mut rng);
                u.matrix() * diag(&values) * u.matrix().adjoint()
            };
            let r = check_achievable(&TargetMeasurement::new(target, 1e-6).unwrap(), &blocks, basis);
            if r.achievable {
                achievable += 1;
                if r.distinct_values > r.spectrum_count {
                    over_capacity += 1;
                }
            } else if trial % 2 == 0 {
                in_algebra_rejected += 1;
            }
        }
    }

    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = tempfile::tempdir().unwrap();
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_contdec"))
        .args(["synthesize", "--config"])
        .arg(root.join("configs/synthesize_capacity.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&o.stderr);
    let cli_ok = o.status.code() == Some(4) && stderr.contains("spectrum capacity");
    report(
        9,
        "spectrum capacity",
        over_capacity == 0 && in_algebra_rejected == 0 && achievable >= 50 && cli_ok,
        t0.elapsed(),
        Duration::from_secs(5),
        &format!(
            "{achievable} achievable targets, {over_capacity} above capacity, {in_algebra_rejected} in-algebra targets rejected; capacity-violating CLI run exit {:?}",
            o.status.code()
        ),
    );
}
