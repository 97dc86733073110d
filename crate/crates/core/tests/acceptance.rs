//! Acceptance checks A1-A8. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dba_core::data::{synth_two_gaussians, EmbeddedDataset};
use dba_core::geometry::{build_query_line, fit_hypersphere, project_onto_boundary, DEFAULT_RESOLUTION};
use dba_core::harness::{bench_noise, bench_strategies};
use dba_core::learner::{replay, run_experiment, AnnotationMode, ExperimentConfig, OracleKind, Transcript};
use dba_core::linalg::{dot, norm, sub};
use dba_core::metrics::{aulc, LearningCurve};
use dba_core::model::{loss, subgradient, BoundarySet, Label, LabeledSet, LinearBoundary};
use dba_core::oracle::{oracle_intersection, svm_oracle_annotate};
use dba_core::rng::Rng;
use dba_core::strategies::QueryStrategy;
use nalgebra::{DMatrix, DVector};

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(rng: &mut Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| scale * rng.normal()).collect()
}

/// Constrained least squares: the smallest correction `d` with
/// `w·(z + d) = -b`, from the SVD pseudo-inverse of the 1×K system.
fn least_squares_projection(z: &[f64], w: &[f64], b: f64) -> Vec<f64> {
    let k = w.len();
    let a = DMatrix::from_row_slice(1, k, w);
    let rhs = DVector::from_vec(vec![-(dot(w, z) + b)]);
    let d = a.svd(true, true).solve(&rhs, 0.0).expect("svd solve");
    z.iter().zip(d.iter()).map(|(zi, di)| zi + di).collect()
}

fn a1_projection() -> Check {
    let mut rng = Rng::seed_from_u64(0xa1);
    let mut worst_plane = 0.0f64;
    let mut worst_par = 0.0f64;
    let mut worst_ls = 0.0f64;
    let mut elapsed = Duration::ZERO;
    for &k in &[2usize, 64, 256] {
        let cases: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..10_000)
            .map(|_| {
                let wscale = 10f64.powf(4.0 * rng.uniform() - 2.0);
                let w = gaussian(&mut rng, k, wscale);
                let b = 5.0 * rng.normal() * wscale;
                let z = gaussian(&mut rng, k, 3.0);
                (w, b, z)
            })
            .collect();
        let start = Instant::now();
        let projected: Vec<Vec<f64>> = cases
            .iter()
            .map(|(w, b, z)| project_onto_boundary(z, w, *b).expect("projection"))
            .collect();
        elapsed += start.elapsed();
        for ((w, b, z), zp) in cases.iter().zip(&projected) {
            let wn = norm(w);
            let residual = (dot(w, zp) + b).abs() / (wn * norm(zp) + b.abs());
            worst_plane = worst_plane.max(residual);
            // Component of z* - z^p orthogonal to w, relative to its length.
            let d = sub(z, zp);
            let along = dot(&d, w) / (wn * wn);
            let off: Vec<f64> = d.iter().zip(w).map(|(di, wi)| di - along * wi).collect();
            if norm(&d) > 0.0 {
                worst_par = worst_par.max(norm(&off) / norm(&d));
            }
            let oracle = least_squares_projection(z, w, *b);
            let gap = norm(&sub(zp, &oracle)) / (1.0 + norm(&oracle));
            worst_ls = worst_ls.max(gap);
        }
    }
    ensure(worst_plane <= 1e-9, || format!("plane residual {worst_plane:e} > 1e-9"))?;
    ensure(worst_par <= 1e-9, || format!("z* - z^p not parallel to w: {worst_par:e}"))?;
    ensure(worst_ls <= 1e-8, || format!("least-squares gap {worst_ls:e} > 1e-8"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "3x10^4 cases; plane {worst_plane:.1e}, parallel {worst_par:.1e}, lsq {worst_ls:.1e}; {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

/// Integral of the piecewise-linear interpolant by two-point Gauss-Legendre
/// on each interval.
fn gauss_integral(acc: &[f64]) -> f64 {
    let g = 0.5 / 3f64.sqrt();
    acc.windows(2)
        .map(|w| {
            let at = |s: f64| w[0] + s * (w[1] - w[0]);
            0.5 * (at(0.5 - g) + at(0.5 + g))
        })
        .sum()
}

fn a2_aulc() -> Check {
    let mut curve = LearningCurve::default();
    for _ in 0..=150 {
        curve.push(1.0, 1.0);
    }
    let full = curve.aulc().map_err(|e| e.to_string())?;
    ensure(full == 150.0, || format!("constant curve gives {full}, not 150"))?;
    let mut rng = Rng::seed_from_u64(0xa2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + rng.below(300);
        let acc: Vec<f64> = (0..=n).map(|_| rng.uniform()).collect();
        let got = aulc(&acc).map_err(|e| e.to_string())?;
        worst = worst.max((got - gauss_integral(&acc)).abs());
    }
    ensure(worst <= 1e-12, || format!("random curves differ by {worst:e}"))?;
    Ok(format!("constant curve = 150 exactly; 1000 random curves within {worst:.1e}"))
}

struct Problem {
    a: LabeledSet,
    b: BoundarySet,
    lambda: f64,
}

fn random_problem(rng: &mut Rng, k: usize) -> Problem {
    let mut a = LabeledSet::new();
    for i in 0..2 + rng.below(20) {
        let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        a.push(gaussian(rng, k, 2.0), y).unwrap();
    }
    let mut b = BoundarySet::new();
    for _ in 0..rng.below(10) {
        b.push(gaussian(rng, k, 2.0)).unwrap();
    }
    let lambda = [0.0, 0.01, 1.0][rng.below(3)];
    Problem { a, b, lambda }
}

fn random_boundary(rng: &mut Rng, k: usize) -> LinearBoundary {
    LinearBoundary::new(gaussian(rng, k, 1.0), rng.normal())
}

fn a3_loss() -> Check {
    let mut rng = Rng::seed_from_u64(0xa3);
    let mut worst_convex = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let k = 1 + rng.below(8);
        let p = random_problem(&mut rng, k);
        let (t1, t2) = (random_boundary(&mut rng, k), random_boundary(&mut rng, k));
        let alpha = rng.uniform();
        let mix = LinearBoundary::new(
            t1.w.iter().zip(&t2.w).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect(),
            alpha * t1.b + (1.0 - alpha) * t2.b,
        );
        let f = |t: &LinearBoundary| loss(t, &p.a, &p.b, p.lambda).unwrap();
        let (l1, l2) = (f(&t1), f(&t2));
        let excess = f(&mix) - (alpha * l1 + (1.0 - alpha) * l2);
        worst_convex = worst_convex.max(excess / (1.0 + l1.abs() + l2.abs()));
    }
    ensure(worst_convex <= 1e-9, || format!("convexity violated by {worst_convex:e}"))?;

    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    let mut checked = 0;
    while checked < 1000 {
        let k = 1 + rng.below(8);
        let p = random_problem(&mut rng, k);
        let theta = random_boundary(&mut rng, k);
        // Differentiable: every hinge margin well away from its kink.
        let kink_free = p.a.entries().iter().all(|(z, y)| {
            let margin = y.value() * (dot(&theta.w, z) + theta.b);
            (margin - 1.0).abs() > 1e-3
        });
        if !kink_free {
            continue;
        }
        checked += 1;
        let (gw, gb) = subgradient(&theta, &p.a, &p.b, p.lambda).unwrap();
        let mut analytic = gw.clone();
        analytic.push(gb);
        let params: Vec<f64> = theta.w.iter().copied().chain([theta.b]).collect();
        let eval = |v: &[f64]| {
            let t = LinearBoundary::new(v[..k].to_vec(), v[k]);
            loss(&t, &p.a, &p.b, p.lambda).unwrap()
        };
        let numeric: Vec<f64> = (0..=k)
            .map(|i| {
                let (mut up, mut down) = (params.clone(), params.clone());
                up[i] += h;
                down[i] -= h;
                (eval(&up) - eval(&down)) / (2.0 * h)
            })
            .collect();
        let err = norm(&sub(&numeric, &analytic)) / norm(&analytic).max(1e-3);
        worst_fd = worst_fd.max(err);
    }
    ensure(worst_fd <= 1e-5, || format!("finite-difference relative error {worst_fd:e}"))?;
    Ok(format!("convexity slack {worst_convex:.1e}; gradient rel. err {worst_fd:.1e}"))
}

fn a4_oracle_geometry() -> Check {
    let mut rng = Rng::seed_from_u64(0xa4);
    let mut cases = 0;
    let mut attempts = 0;
    let mut worst_along = 0.0f64;
    let mut worst_plane = 0.0f64;
    while cases < 1000 {
        attempts += 1;
        ensure(attempts < 100_000, || format!("only {cases} cases with an in-segment crossing"))?;
        let k = 2 + rng.below(30);
        let cloud: Vec<Vec<f64>> = (0..50).map(|_| gaussian(&mut rng, k, 2.0)).collect();
        let sphere = fit_hypersphere(&cloud).unwrap();
        let current = random_boundary(&mut rng, k);
        let query = &cloud[rng.below(cloud.len())];
        let Ok(line) = build_query_line(query, &current, &sphere, DEFAULT_RESOLUTION) else {
            continue;
        };
        let oracle = random_boundary(&mut rng, k);
        let Some(true_t) = oracle_intersection(&line, &oracle) else {
            continue;
        };
        cases += 1;
        // Independent crossing: solve w·(base + t·d) + b = 0 directly.
        let own_t = -(dot(&oracle.w, &line.base) + oracle.b) / dot(&oracle.w, &line.direction);
        ensure((own_t - true_t).abs() <= 1e-9 * (1.0 + own_t.abs()), || {
            format!("crossing t {true_t} vs {own_t}")
        })?;
        let crossing = line.point_at(true_t);
        let plane = (dot(&oracle.w, &crossing) + oracle.b).abs() / (norm(&oracle.w) * norm(&crossing) + oracle.b.abs());
        worst_plane = worst_plane.max(plane);
        let record = svm_oracle_annotate(0, &line, &oracle).unwrap();
        let t = record.t.ok_or("noiseless oracle gave no point for a crossing line")?;
        let along = (t - true_t).abs() * line.direction_norm();
        worst_along = worst_along.max(along / line.resolution);
    }
    ensure(worst_along <= 0.5 + 1e-9, || format!("annotation {worst_along:.3} resolutions from the crossing"))?;
    ensure(worst_plane <= 1e-9, || format!("plane residual {worst_plane:e}"))?;
    Ok(format!(
        "{cases} lines; max offset {worst_along:.3} x resolution; plane residual {worst_plane:.1e}"
    ))
}

fn synth() -> Arc<EmbeddedDataset> {
    Arc::new(synth_two_gaussians(16, 2000, 1000, 3.0, 1).unwrap())
}

fn strategies() -> [QueryStrategy; 4] {
    [
        QueryStrategy::Uncertainty,
        QueryStrategy::UncertaintyDense { beta: 1.0 },
        QueryStrategy::ClusterCentroid { batch: 5 },
        QueryStrategy::Random,
    ]
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn a5_reduction() -> Check {
    let data = Arc::new(synth_two_gaussians(8, 400, 300, 3.0, 2).unwrap());
    let mut runs = 0;
    for strategy in strategies() {
        for oracle in [OracleKind::Svm, OracleKind::Noisy { sigma: 2.0 }] {
            for seed in 0..3 {
                let base = ExperimentConfig {
                    strategy,
                    oracle,
                    n_queries: 30,
                    seed,
                    ..Default::default()
                };
                let emptied = ExperimentConfig {
                    annotation_mode: AnnotationMode::Boundary,
                    discard_boundary: true,
                    ..base.clone()
                };
                let sample = ExperimentConfig {
                    annotation_mode: AnnotationMode::Sample,
                    ..base
                };
                let x = run_experiment(data.clone(), &emptied).map_err(|e| e.to_string())?;
                let y = run_experiment(data.clone(), &sample).map_err(|e| e.to_string())?;
                let same = bits(&x.curve.accuracies) == bits(&y.curve.accuracies)
                    && bits(&x.curve.average_precisions) == bits(&y.curve.average_precisions)
                    && bits(&x.boundary.w) == bits(&y.boundary.w)
                    && x.boundary.b.to_bits() == y.boundary.b.to_bits();
                ensure(same, || format!("{strategy} {oracle:?} seed {seed}: results differ"))?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} paired runs bitwise identical"))
}

fn a6_strategies() -> Check {
    let data = synth();
    let base = ExperimentConfig {
        n_queries: 50,
        seed: 1,
        ..Default::default()
    };
    let start = Instant::now();
    let table = bench_strategies(&data, &base, &strategies(), 15, 4).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut parts = Vec::new();
    for strategy in strategies() {
        let name = strategy.to_string();
        let s = table.row(&name, AnnotationMode::Sample).ok_or("missing row")?;
        let b = table.row(&name, AnnotationMode::Boundary).ok_or("missing row")?;
        ensure(b.aulc_mean > s.aulc_mean, || {
            format!("{name}: boundary {:.2} <= sample {:.2}", b.aulc_mean, s.aulc_mean)
        })?;
        if matches!(strategy, QueryStrategy::Uncertainty | QueryStrategy::Random) {
            ensure(b.p_value < 0.05, || format!("{name}: p = {:.3}", b.p_value))?;
        }
        parts.push(format!("{name} {:.2}>{:.2} (p={:.1e})", b.aulc_mean, s.aulc_mean, b.p_value));
    }
    ensure(elapsed < Duration::from_secs(180), || format!("took {elapsed:?}"))?;
    Ok(format!("{}; {:.1} s", parts.join(", "), elapsed.as_secs_f64()))
}

fn a7_noise() -> Check {
    let data = synth();
    let base = ExperimentConfig {
        n_queries: 50,
        seed: 1,
        ..Default::default()
    };
    let sigmas = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let table = bench_noise(&data, &base, &sigmas, 15, 4).map_err(|e| e.to_string())?;
    ensure(table.spearman <= 0.0, || format!("spearman {:.3} > 0", table.spearman))?;
    let sample = table.baseline().aulc_mean;
    for row in table.boundary_rows() {
        let sigma = row.sigma.unwrap_or_default();
        if sigma <= 2.0 {
            ensure(row.aulc_mean >= sample, || {
                format!("sigma {sigma}: boundary {:.2} < sample {sample:.2}", row.aulc_mean)
            })?;
        }
    }
    let means: Vec<String> = table.boundary_rows().map(|r| format!("{:.2}", r.aulc_mean)).collect();
    Ok(format!(
        "spearman {:.2}; boundary [{}] vs sample {sample:.2}",
        table.spearman,
        means.join(" ")
    ))
}

fn a8_replay() -> Check {
    let data = Arc::new(synth_two_gaussians(6, 500, 300, 3.0, 4).unwrap());
    let mut runs = 0;
    for strategy in strategies() {
        for (mode, oracle) in [
            (AnnotationMode::Boundary, OracleKind::Svm),
            (AnnotationMode::Boundary, OracleKind::Noisy { sigma: 3.0 }),
            (AnnotationMode::Sample, OracleKind::Svm),
        ] {
            let config = ExperimentConfig {
                strategy,
                oracle,
                annotation_mode: mode,
                n_queries: 40,
                seed: 11 + runs,
                ..Default::default()
            };
            let result = run_experiment(data.clone(), &config).map_err(|e| e.to_string())?;
            let text = result.transcript.to_jsonl().map_err(|e| e.to_string())?;
            let parsed = Transcript::read_jsonl(text.as_bytes()).map_err(|e| e.to_string())?;
            let replayed = replay(data.clone(), &parsed).map_err(|e| format!("{strategy} {mode}: {e}"))?;
            let curve = replayed.curve();
            let boundary = replayed.boundary();
            let same = bits(&curve.accuracies) == bits(&result.curve.accuracies)
                && bits(&curve.average_precisions) == bits(&result.curve.average_precisions)
                && bits(&boundary.w) == bits(&result.boundary.w)
                && boundary.b.to_bits() == result.boundary.b.to_bits();
            ensure(same, || format!("{strategy} {mode}: replay differs"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} transcripts replay bitwise"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("A1", "projection", a1_projection),
        ("A2", "AULC", a2_aulc),
        ("A3", "loss and gradient", a3_loss),
        ("A4", "oracle geometry", a4_oracle_geometry),
        ("A5", "empty-boundary reduction", a5_reduction),
        ("A6", "strategies: boundary vs sample", a6_strategies),
        ("A7", "noise trend", a7_noise),
        ("A8", "replay", a8_replay),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
