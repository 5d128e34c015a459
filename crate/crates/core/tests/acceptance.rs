//! Acceptance suite. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`.

use std::f64::consts::PI;
use std::time::Instant;

use maxwell_ibvp::compat::{self, kernel_solve_node};
use maxwell_ibvp::divstruct::RecoveryOperators;
use maxwell_ibvp::expr::Expr;
use maxwell_ibvp::grid::{Field, Grid};
use maxwell_ibvp::harness::{self, Scenario};
use maxwell_ibvp::linalg::{self, Mat3, Mat6, Vec6};
use maxwell_ibvp::localize::{self, Chart, ChartData};
use maxwell_ibvp::materials::{assemble_coefficients, MaterialLaw};
use maxwell_ibvp::problem::{free_wave, pec_mode, standing_wave, Problem};
use maxwell_ibvp::solver::{self, Solver, SolverConfig};
use maxwell_ibvp::structmat::{build_structure_matrices, curl_coefficient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WAVE: &str = include_str!("../../../scenarios/vacuum_standing_wave.toml");
const ANISO: &str = include_str!("../../../scenarios/anisotropic_manufactured.toml");

fn report(id: usize, pass: bool, detail: String) {
    println!("criterion {id:2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn random_spd(rng: &mut ChaCha8Rng) -> Mat6<f64> {
    let b = Mat6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    b.transpose() * b * 0.5 + Mat6::identity() * 0.5
}

fn vacuum_wave(lengths: [f64; 3], counts: [usize; 3], u: Vec<Expr>) -> Problem<f64> {
    let g = Grid::new(lengths, counts).unwrap();
    let c = assemble_coefficients(&MaterialLaw::vacuum(), &g, &[0.0]).unwrap();
    free_wave(c, u, 0.0)
}

#[test]
fn c01_structure_algebra() {
    let start = Instant::now();
    let s = build_structure_matrices::<f64>().unwrap();
    let fac = s.factorization_residual();
    let split = s.symmetric_split_residual();
    let eig = linalg::symmetric_eigenvalues(s.a3());
    let pos = eig.iter().filter(|e| **e > 1e-12).count();
    let neg = eig.iter().filter(|e| **e < -1e-12).count();
    let kernel = s.a3_kernel_basis();
    let in_span = kernel
        .iter()
        .all(|v| [0, 1, 3, 4].iter().all(|&i| v[i].abs() < 1e-14));
    let secs = start.elapsed().as_secs_f64();
    let pass = fac <= 1e-14 && split <= 1e-14 && pos == 2 && neg == 2 && kernel.len() == 2 && in_span && secs < 1.0;
    report(
        1,
        pass,
        format!("factorization {fac:.1e}, split {split:.1e}, signature ({pos},{neg},{}), kernel dim {}, {secs:.3}s", 6 - pos - neg, kernel.len()),
    );
    assert!(pass);
}

#[test]
fn c02_cancellation_identity() {
    let start = Instant::now();
    let r = harness::cancellation_campaign(2024, 100, 1e-13);
    let secs = start.elapsed().as_secs_f64();
    let pass = r.pass && secs < 10.0;
    report(
        2,
        pass,
        format!(
            "100 trials: max trace {:.1e}, index-loop {:.1e}, disagreement {:.1e}, {secs:.2}s",
            r.max_residual, r.max_brute_force, r.max_disagreement
        ),
    );
    assert!(pass);
}

#[test]
fn c03_gaussian_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a3 = curl_coefficient::<f64>(2);
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let a0 = random_spd(&mut rng);
        min_eig = min_eig.min(linalg::min_eigenvalue(&a0));
        let ops = RecoveryOperators::new(&a0, &Mat3::identity(), &a3, 0).unwrap();
        worst = worst.max(ops.elimination_defect().amax());
    }
    let pass = worst <= 1e-12 && min_eig >= 0.5;
    report(3, pass, format!("max |G2 G1 mu_hat - M| = {worst:.1e} over 100 samples (min eig {min_eig:.3})"));
    assert!(pass);
}

#[test]
fn c04_kernel_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a3 = curl_coefficient::<f64>(2);
    let mut worst = 0.0f64;
    let mut amp = [0.0f64; 3];
    let mut bound = [0.0f64; 3];
    let mut within = true;
    for _ in 0..100 {
        let a0 = random_spd(&mut rng);
        let inv = linalg::inverse(&a0).unwrap();
        let v0 = Vec6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let lam = linalg::symmetric_norm(&a0);
        for p in 1..=3 {
            let v = kernel_solve_node(&a0, &v0, p).unwrap();
            let mut w = v;
            for _ in 0..p {
                w = -(inv * (a3 * w));
            }
            let res = (a3 * w - a3 * v0).amax() / v0.amax();
            worst = worst.max(res);
            let a = v.norm() / v0.norm();
            // per step: |Q| = 1, |Theta^-1| <= 2
            let b = (lam * (1.0 + 2.0 * lam)).powi(p as i32);
            within &= a <= b;
            amp[p - 1] = amp[p - 1].max(a);
            bound[p - 1] = bound[p - 1].max(b);
        }
    }
    // sample-independent ceiling: |A0| <= 0.5 + 0.5 * 36 for entries of B in [-1, 1]
    let lam_max = 18.5f64;
    let ceiling: Vec<f64> = (1..=3).map(|p| (lam_max * (1.0 + 2.0 * lam_max)).powi(p)).collect();
    let pass = worst <= 1e-10 && within && (0..3).all(|i| bound[i] <= ceiling[i]);
    report(
        4,
        pass,
        format!("residual {worst:.1e}; amplification p=1..3 {amp:.2?}, a priori bound {bound:.0?} <= {ceiling:.0?}"),
    );
    assert!(pass);
}

/// `|S_1 − (−3u0 + 4u1 − u2)/(2dt)|` for the standing wave on `counts`.
fn first_level_mismatch(counts: [usize; 3]) -> (f64, f64, f64) {
    let p = vacuum_wave([1.0, 1.0, 1.0], counts, standing_wave(2.0 * PI));
    let cfg = SolverConfig { t_end: 0.5, keep_first: 3, ..Default::default() };
    let s = Solver::new(p.clone(), cfg).unwrap();
    let rec = s.run().unwrap();
    let [u0, u1, u2] = [&rec.early[0].u, &rec.early[1].u, &rec.early[2].u];
    let dt = rec.dt;
    let diffed = u0.scale(-1.5 / dt).axpy(2.0 / dt, u1).axpy(-0.5 / dt, u2);
    let s1 = compat::s_mp(&p.coeffs, 0.0, &p.f, &p.u0_field(), 1).unwrap();
    let g = p.grid();
    let exact = maxwell_ibvp::grid::sample(g, &p.exact.as_ref().unwrap().iter().map(|e| e.diff(maxwell_ibvp::expr::Var::T)).collect::<Vec<_>>(), 0.0);
    (diffed.sub(&s1).l2_norm(g), s1.sub(&exact).l2_norm(g), dt)
}

#[test]
fn c05_compatibility_recursion() {
    let start = Instant::now();
    let (e1, s1_err, dt1) = first_level_mismatch([64, 4, 65]);
    let (e2, _, dt2) = first_level_mismatch([128, 8, 129]);
    let ratio = e1 / e2;
    let secs = start.elapsed().as_secs_f64();
    let pass = (ratio - 4.0).abs() <= 0.3 && secs < 60.0;
    report(
        5,
        pass,
        format!("mismatch {e1:.3e} (dt {dt1:.2e}) -> {e2:.3e} (dt {dt2:.2e}), ratio {ratio:.3}; S_1 vs exact {s1_err:.1e}; {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn c06_data_correction() {
    let s = Scenario::from_toml(ANISO).unwrap();
    let mut scaled = vec![];
    let mut worst = 0.0f64;
    for delta in [1e-3, 1e-4, 1e-5] {
        let r = harness::correction_report(&s, 2, delta).unwrap();
        worst = worst.max(r.compat.max_residual());
        assert!(r.compat.pass);
        scaled.push(r.h_norm_over_delta);
    }
    let max = scaled.iter().copied().fold(0.0, f64::max);
    let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    // linear in δ up to O(δ) relative corrections
    let pass = worst <= 1e-8 && max / min - 1.0 <= 1e-2 && min > 0.0;
    report(6, pass, format!("order-2 residual {worst:.1e}; |h|/delta over 1e-3..1e-5 = {scaled:.4?}"));
    assert!(pass);
}

fn wave_error(counts: [usize; 3]) -> f64 {
    let p = vacuum_wave([1.0, 1.0, 1.0], counts, standing_wave(2.0 * PI));
    let s = Solver::new(p.clone(), SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
    let rec = s.run().unwrap();
    solver::l2_error(&p, &rec.final_state.u, 1.0).unwrap()
}

#[test]
fn c07_solver_convergence_and_energy() {
    let start = Instant::now();
    let coarse = wave_error([32, 32, 33]);
    let fine = wave_error([64, 64, 65]);
    let ratio = coarse / fine;

    let p = vacuum_wave([1.0, 1.0, 1.0], [16, 16, 65], standing_wave(2.0 * PI));
    let probe = Solver::new(p.clone(), SolverConfig::default()).unwrap();
    let dt = probe.dt;
    let cfg = SolverConfig { dt: Some(dt), t_end: 1000.0 * dt, diagnostics_stride: 10, ..Default::default() };
    let s = Solver::new(p, cfg).unwrap();
    let rec = s.run().unwrap();
    let drift = rec.energy_drift();
    let secs = start.elapsed().as_secs_f64();
    let pass = (ratio - 4.0).abs() <= 0.3 && drift <= 1e-6 && rec.steps == 1000;
    report(
        7,
        pass,
        format!("L2 error {coarse:.3e} -> {fine:.3e}, ratio {ratio:.3}; drift {drift:.2e} over {} steps; {secs:.1}s", rec.steps),
    );
    assert!(pass);
}

/// TM and TE cavity modes superposed; both divergence free.
fn mixed_modes() -> Vec<Expr> {
    let (a, c) = (1.0f64, PI);
    let w = (a * a + c * c).sqrt();
    let tm: Vec<Expr> = [
        format!("{} * cos(x) * sin(pi*z) * sin({w}*t)", c / w),
        "0".into(),
        format!("{} * sin(x) * cos(pi*z) * sin({w}*t)", -a / w),
        "0".into(),
        "cos(x) * cos(pi*z) * cos(".to_string() + &format!("{w}*t)"),
        "0".into(),
    ]
    .iter()
    .map(|s| Expr::parse(s).unwrap())
    .collect();
    let te = pec_mode(a, c);
    tm.iter().zip(&te).map(|(x, y)| x.add(y)).collect()
}

#[test]
fn c08_divergence_propagation() {
    let mut cs = vec![];
    let mut detail = vec![];
    for n in [16, 32, 64] {
        let p = vacuum_wave([2.0 * PI, 1.0, 1.0], [n, 1, n + 1], mixed_modes());
        let s = Solver::new(p, SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
        let rec = s.run().unwrap();
        let g = s.grid();
        let h = (0..3).filter(|&a| g.counts[a] > 1).map(|a| g.spacing(a)).fold(0.0, f64::max);
        let c1 = rec.r1.iter().copied().fold(0.0, f64::max) / (h * h);
        let c2 = rec.r2.iter().copied().fold(0.0, f64::max) / (h * h);
        detail.push(format!("n={n}: C1 {c1:.3e} C2 {c2:.3e}"));
        cs.push((c1, c2));
    }
    // C must not grow under halving (a shrinking C means faster than h²)
    let bounded = |f: &dyn Fn(&(f64, f64)) -> f64| cs.windows(2).all(|w| f(&w[1]) <= 2.0 * f(&w[0]));
    let growth = |f: &dyn Fn(&(f64, f64)) -> f64| cs.windows(2).map(|w| f(&w[1]) / f(&w[0])).fold(0.0, f64::max);
    let (s1, s2) = (growth(&|c| c.0), growth(&|c| c.1));
    let pass = bounded(&|c| c.0) && bounded(&|c| c.1) && cs.iter().all(|c| c.1 > 0.0);
    report(8, pass, format!("{}; max C growth per halving: r1 {s1:.3}, r2 {s2:.3}", detail.join(", ")));
    assert!(pass);
}

#[test]
fn c09_transform() {
    let g = Grid::new([2.0 * PI, 2.0 * PI, 1.0], [12, 12, 13]).unwrap();
    let law = MaterialLaw::closed(
        maxwell_ibvp::materials::TensorExpr::parse(&[
            vec!["2 + 0.1*sin(x)".into(), "0.1".into(), "0".into()],
            vec!["0.1".into(), "1.5".into(), "0".into()],
            vec!["0".into(), "0".into(), "1.2".into()],
        ])
        .unwrap(),
        maxwell_ibvp::materials::TensorExpr::identity(),
        maxwell_ibvp::materials::TensorExpr::zero(),
    );
    let u0: Vec<Expr> = ["sin(z)*cos(y)", "z*cos(x)", "sin(x+y)", "cos(z)", "sin(y)*z", "cos(x)"]
        .iter()
        .map(|s| Expr::parse(s).unwrap())
        .collect();
    let data = ChartData {
        f: vec![Expr::zero(); 6],
        g: [Expr::zero(), Expr::zero()],
        u0,
        exact: None,
        t0: 0.0,
    };
    let mut worst = (0.0f64, 0.0f64);
    let mut names = vec![];
    for chart in [Chart::curved_wall(0.2), Chart::normal_stretch(0.5), Chart::tilt(0.4)] {
        let tr = localize::transport_operator(&chart, &law, &g, localize::DEFAULT_TAU).unwrap();
        let nz = localize::normalize(&tr, &data).unwrap();
        let defect = localize::normal_coefficient_defect(&nz.problem);
        let v = nz.problem.u0_field();
        let back = nz.normalizer.pushforward(&nz.normalizer.pullback_solution(&v));
        let rt = back.sub(&v).max_abs() / v.max_abs();
        worst = (worst.0.max(defect), worst.1.max(rt));
        names.push(chart.name.clone());
    }
    let pass = worst.0 <= 1e-12 && worst.1 <= 1e-13;
    report(9, pass, format!("charts {names:?}: max A3 defect {:.1e}, round trip {:.1e}", worst.0, worst.1));
    assert!(pass);
}

#[test]
fn c10_estimate_campaigns() {
    let s = Scenario::from_toml(WAVE).unwrap();
    let mut lines = vec![];
    let mut pass = true;
    let run = |name: &str, f: &dyn Fn() -> harness::EstimateReport| {
        let start = Instant::now();
        let r = f();
        (format!("{name} spread {:.3}", r.spread), r.pass && r.spread < 2.0, start.elapsed().as_secs_f64())
    };
    for (name, secs_limit, r) in [
        ("l2", 300.0, run("l2", &|| harness::verify_l2_estimate(&s).unwrap())),
        ("hm1", 300.0, run("hm m=1", &|| harness::verify_hm_estimate(&s, 1).unwrap())),
        ("hm2", 300.0, run("hm m=2", &|| harness::verify_hm_estimate(&s, 2).unwrap())),
        ("ta1", 300.0, run("tangential m=1", &|| harness::verify_tangential_estimate(&s, 1).unwrap())),
        ("ta2", 300.0, run("tangential m=2", &|| harness::verify_tangential_estimate(&s, 2).unwrap())),
    ] {
        let _ = name;
        pass &= r.1 && r.2 < secs_limit;
        lines.push(format!("{} ({:.1}s)", r.0, r.2));
    }
    report(10, pass, lines.join(", "));
    assert!(pass);
}

#[test]
fn f32_path_runs() {
    let g = Grid::<f32>::new([1.0, 1.0, 1.0], [4, 4, 17]).unwrap();
    let c = assemble_coefficients(&MaterialLaw::<f32>::vacuum(), &g, &[0.0]).unwrap();
    let p = free_wave(c, standing_wave(2.0 * PI), 0.0f32);
    let s = Solver::new(p.clone(), SolverConfig { t_end: 0.25, ..Default::default() }).unwrap();
    let rec = s.run().unwrap();
    let e: f32 = solver::l2_error(&p, &rec.final_state.u, rec.final_state.t).unwrap();
    assert!(e < 0.1, "{e}");
    let _: Field<f32> = rec.final_state.u;
}
