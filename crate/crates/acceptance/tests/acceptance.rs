//! One test per acceptance criterion, plus two desk-scale checks that are reported the
//! same way. Every test prints a `[PASS]` or `[FAIL]` line with the measured numbers.
//!
//! Run with `cargo test -p cmdnst-acceptance -- --nocapture --test-threads 1` to see the
//! verdict lines of passing tests too.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use cmdnst::encoder::{load_encoder, random_archive, Architecture, Encoder, EncoderSpec, WEIGHTS_ENV};
use cmdnst::experiments::{
    run_benchmark, run_lr_study, run_toy_experiment, BenchmarkConfig, ToyConfig, STUDY_LEARNING_RATES,
};
use cmdnst::image::{Image, Pattern};
use cmdnst::losses::{
    cmd_loss, cmd_loss_with_grad, gaussian_w2_loss, mmd_gram_loss, moment_match_loss, MomentWeights, Objective,
    StyleFamily, StyleLossConfig, StyleTarget,
};
use cmdnst::measures::{absolute_central_moments, marginal_central_moments, EmpiricalMeasure, FeatureMap, LayerId};
use cmdnst::optimizer::{stylize, OptimizationConfig, OptimizationRun, StopReason, Stylizer};
use cmdnst_acceptance::verdict;
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_map(rng: &mut ChaCha8Rng, c: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((c, n), |_| rng.random::<f64>())
}

fn fmap(values: Array2<f64>) -> FeatureMap {
    FeatureMap::new("f", values).unwrap()
}

fn tiny() -> Encoder {
    load_encoder(&EncoderSpec::tiny(0)).unwrap()
}

fn desk_pair() -> (Image, Image) {
    (
        Image::synthetic(Pattern::Scene, 64, 64, 0),
        Image::synthetic(Pattern::Stripes, 64, 64, 1),
    )
}

fn default_layers(enc: &Encoder, family: StyleFamily) -> StyleLossConfig {
    let spec = enc.spec();
    StyleLossConfig::equal_weights(family, &spec.style_layers, spec.content_layer.clone()).unwrap()
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

#[test]
fn c01_toy_alignment() {
    let t0 = Instant::now();
    let rep = run_toy_experiment(&ToyConfig::default(), 1).unwrap();
    let elapsed = t0.elapsed();
    let cmd = &rep.rows[0].gaps;
    let mm = &rep.rows[1].gaps;
    let cmd_ok = cmd[..5].iter().all(|g| *g < 1e-2);
    let mm_ok = mm[2] >= 10.0 * mm[0];
    verdict(
        "c01 toy alignment",
        cmd_ok && mm_ok && within(elapsed, 120),
        format!(
            "cmd gaps {}; mm order-3 {:.3e} vs order-1 {:.3e}; {elapsed:.1?}",
            sci(cmd),
            mm[2],
            mm[0]
        ),
    );
}

#[test]
fn c02_metric_axioms() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = MomentWeights::uniform(5).unwrap();
    let (mut worst_slack, mut failures) = (f64::INFINITY, Vec::new());
    for case in 0..200 {
        let c = rng.random_range(1..=8);
        let (n1, n2, n3) = (
            rng.random_range(2..=200),
            rng.random_range(2..=200),
            rng.random_range(2..=200),
        );
        let (a, b, d) = (
            unit_map(&mut rng, c, n1),
            unit_map(&mut rng, c, n2),
            unit_map(&mut rng, c, n3),
        );
        let m = |x: &Array2<f64>| EmpiricalMeasure::from_columns(x.clone()).unwrap();
        let (p, q, r) = (m(&a), m(&b), m(&d));
        let pp = cmd_loss(&p, &p, &w).unwrap();
        let (pq, qp) = (cmd_loss(&p, &q, &w).unwrap(), cmd_loss(&q, &p, &w).unwrap());
        let (qr, pr) = (cmd_loss(&q, &r, &w).unwrap(), cmd_loss(&p, &r, &w).unwrap());
        let slack = pq + qr - pr;
        worst_slack = worst_slack.min(slack);
        let (fa, fb) = (fmap(a), fmap(b));
        let others = [
            mmd_gram_loss(&fa, &fb).unwrap(),
            moment_match_loss(&fa, &fb).unwrap(),
            gaussian_w2_loss(&fa, &fb).unwrap(),
        ];
        if pp != 0.0 || pq != qp || slack < -1e-12 || pq < 0.0 || others.iter().any(|v| *v < 0.0) {
            failures.push(case);
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        "c02 metric axioms",
        failures.is_empty() && within(elapsed, 30),
        format!("200 cases, failing {failures:?}, worst triangle slack {worst_slack:.3e}; {elapsed:.1?}"),
    );
}

fn fd_relative_error(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let h = 1e-4;
    let mut fd = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[idx] += h;
        xm[idx] -= h;
        fd[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    let num = (&fd - analytic).mapv(|v| v * v).sum().sqrt();
    let den = fd.mapv(|v| v * v).sum().sqrt().max(1e-12);
    num / den
}

#[test]
fn c03_gradient_checks() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let families = [
        ("cmd", StyleFamily::cmd(5).unwrap()),
        ("mmd_gram", StyleFamily::MmdGram),
        ("mm", StyleFamily::MomentMatch),
        ("ot", StyleFamily::GaussianOt),
    ];
    for _ in 0..20 {
        for (name, family) in &families {
            let fo = unit_map(&mut rng, 3, 20) * 4.0 - 2.0;
            let fs = unit_map(&mut rng, 3, 20) * 4.0 - 2.0;
            let target = StyleTarget::new(family, &fmap(fs)).unwrap();
            let g = target.loss_and_grad(&fo).unwrap().grad;
            let e = fd_relative_error(&fo, &g, |x| target.loss_and_grad(x).unwrap().value);
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
        // bounded measures directly, without the logistic map
        let po = unit_map(&mut rng, 3, 20);
        let q = EmpiricalMeasure::from_columns(unit_map(&mut rng, 3, 20)).unwrap();
        let w5 = MomentWeights::uniform(5).unwrap();
        let at =
            |x: &Array2<f64>| cmd_loss_with_grad(&EmpiricalMeasure::from_columns(x.clone()).unwrap(), &q, &w5).unwrap();
        let e = fd_relative_error(&po, &at(&po).1, |x| at(x).0);
        let w = worst.entry("cmd_measure").or_insert(0.0);
        *w = w.max(e);

        let (fo, fc) = (unit_map(&mut rng, 3, 20), unit_map(&mut rng, 3, 20));
        let feats = |x: Array2<f64>| BTreeMap::from([(LayerId::from("f"), fmap(x))]);
        let cfg = StyleLossConfig::equal_weights(StyleFamily::MomentMatch, &[LayerId::from("f")], "f".into()).unwrap();
        let obj = Objective::new(&feats(fc.clone()), &feats(fc), &cfg, 1.0).unwrap();
        let (_, grads) = obj.evaluate_with_grad(&feats(fo.clone())).unwrap();
        let e = fd_relative_error(&fo, &grads[&LayerId::from("f")], |x| {
            obj.evaluate(&feats(x.clone())).unwrap().content
        });
        let w = worst.entry("content").or_insert(0.0);
        *w = w.max(e);
    }
    let elapsed = t0.elapsed();
    let max = worst.values().cloned().fold(0.0, f64::max);
    verdict(
        "c03 gradient checks",
        max <= 1e-4 && within(elapsed, 60),
        format!(
            "worst relative error per loss {}; {elapsed:.1?}",
            worst
                .iter()
                .map(|(k, v)| format!("{k} {v:.2e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

/// Biased MMD^2 with kernel `(x^T y)^2`, summed explicitly over sample pairs.
fn kernel_mmd2(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mean_k = |a: &Array2<f64>, b: &Array2<f64>| {
        let mut s = 0.0;
        for i in 0..a.ncols() {
            for j in 0..b.ncols() {
                s += a.column(i).dot(&b.column(j)).powi(2);
            }
        }
        s / (a.ncols() * b.ncols()) as f64
    };
    mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)
}

#[test]
fn c04_gram_mmd_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let c = rng.random_range(1..=8);
        let (n, m) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let x = unit_map(&mut rng, c, n) * 2.0 - 1.0;
        let y = unit_map(&mut rng, c, m) * 2.0 - 1.0;
        let want = kernel_mmd2(&x, &y) / (4.0 * (c * c) as f64);
        let got = mmd_gram_loss(&fmap(x), &fmap(y)).unwrap();
        worst = worst.max((got - want).abs() / want.abs().max(1e-300));
    }
    verdict(
        "c04 gram/mmd equivalence",
        worst <= 1e-8,
        format!("50 cases, worst relative error {worst:.2e}"),
    );
}

/// Two atoms at `mu +- sigma` have population mean `mu` and deviation `sigma`.
fn two_atoms(mu: f64, sigma: f64) -> FeatureMap {
    fmap(Array2::from_shape_vec((1, 2), vec![mu - sigma, mu + sigma]).unwrap())
}

/// Four points on the axes with zero mean and population covariance `diag(s0, s1)`.
fn axis_cross(mean: [f64; 2], s0: f64, s1: f64) -> FeatureMap {
    let (a, b) = ((2.0 * s0).sqrt(), (2.0 * s1).sqrt());
    let xs = [a, -a, 0.0, 0.0].map(|v| v + mean[0]);
    let ys = [0.0, 0.0, b, -b].map(|v| v + mean[1]);
    fmap(Array2::from_shape_vec((2, 4), xs.into_iter().chain(ys).collect()).unwrap())
}

#[test]
fn c05_gaussian_w2_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut pairs = vec![((0.0, 1.0), (3.0, 2.0))];
    for _ in 0..20 {
        pairs.push((
            (rng.random_range(-3.0..3.0), rng.random_range(0.1..3.0)),
            (rng.random_range(-3.0..3.0), rng.random_range(0.1..3.0)),
        ));
    }
    for ((m1, s1), (m2, s2)) in pairs {
        let got = gaussian_w2_loss(&two_atoms(m1, s1), &two_atoms(m2, s2)).unwrap();
        let want: f64 = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
        worst = worst.max((got - want).abs());
    }
    let diag = gaussian_w2_loss(&axis_cross([0.0; 2], 1.0, 4.0), &axis_cross([0.0; 2], 4.0, 1.0)).unwrap();
    let mut diag_err = (diag - 2.0).abs();
    for _ in 0..20 {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.1..4.0));
        let (mu, nu) = ([rng.random_range(-1.0..1.0), 0.5], [0.0, rng.random_range(-1.0..1.0)]);
        let got = gaussian_w2_loss(&axis_cross(mu, v[0], v[1]), &axis_cross(nu, v[2], v[3])).unwrap();
        let want = (mu[0] - nu[0]).powi(2)
            + (mu[1] - nu[1]).powi(2)
            + (v[0].sqrt() - v[2].sqrt()).powi(2)
            + (v[1].sqrt() - v[3].sqrt()).powi(2);
        diag_err = diag_err.max((got - want).abs());
    }
    let mut self_dist: f64 = 0.0;
    for _ in 0..20 {
        let x = fmap(unit_map(&mut rng, 4, 30) * 2.0);
        self_dist = self_dist.max(gaussian_w2_loss(&x, &x).unwrap());
    }
    verdict(
        "c05 gaussian w2 oracle",
        worst <= 1e-8 && diag_err <= 1e-8 && self_dist <= 1e-8,
        format!("1d error {worst:.2e}, diagonal error {diag_err:.2e}, d(X,X) {self_dist:.2e}"),
    );
}

#[test]
fn c06_bound_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut violations, mut max_c) = (0usize, 0.0f64);
    for _ in 0..100 {
        let c = rng.random_range(1..=8);
        let n = rng.random_range(2..=200);
        // skewed draws reach the edges of [0, 1] more often than uniform ones
        let pow = rng.random_range(0.2..5.0);
        let x = unit_map(&mut rng, c, n).mapv(|v: f64| v.powf(pow));
        let m = EmpiricalMeasure::from_columns(x).unwrap();
        let abs = absolute_central_moments(&m, 10);
        for i in 2..=9 {
            let (lo, hi) = (&abs[i - 2], &abs[i - 1]);
            violations += hi.iter().zip(lo.iter()).filter(|(h, l)| **h > **l).count();
        }
        let s = marginal_central_moments(&m, 10).unwrap();
        for i in 2..=10 {
            max_c = s.moment(i).iter().fold(max_c, |a, v| a.max(v.abs()));
        }
    }
    verdict(
        "c06 bound monotonicity",
        violations == 0 && max_c <= 0.25,
        format!("100 measures, {violations} envelope violations, max |c_i| {max_c:.4}"),
    );
}

#[test]
fn c07_tiny_pipeline_smoke() {
    let enc = tiny();
    let (content, style) = desk_pair();
    let cfg = default_layers(&enc, StyleFamily::cmd(5).unwrap());
    let opt = OptimizationConfig {
        alpha: 0.5,
        max_iterations: 300,
        seed: 0,
        ..Default::default()
    };
    let t0 = Instant::now();
    let a = stylize(&content, &style, &enc, &cfg, &opt).unwrap();
    let elapsed = t0.elapsed();
    let b = stylize(&content, &style, &enc, &cfg, &opt).unwrap();
    let ratio = a.last().style / a.initial().style;
    let stop_ok = a.iterations_executed >= opt.min_iterations
        && (a.stop_reason == StopReason::MaxIters || a.iterations_executed < opt.max_iterations);
    let deterministic = a.trace == b.trace && a.image == b.image;
    verdict(
        "c07 tiny pipeline smoke",
        ratio < 0.1 && stop_ok && deterministic && within(elapsed, 120),
        format!(
            "style ratio {ratio:.3} (needs < 0.1), {} iterations ({:?}), stop rule ok {stop_ok}, \
             deterministic {deterministic}; {elapsed:.1?}",
            a.iterations_executed, a.stop_reason
        ),
    );
}

fn mean_time(reports: &[cmdnst::experiments::BenchmarkReport], method: &str) -> f64 {
    reports.iter().find(|r| r.method == method).unwrap().mean_seconds
}

#[test]
fn c08_runtime_overhead() {
    let tiny_cfg = BenchmarkConfig {
        repeats: 3,
        ..Default::default()
    };
    let t = run_benchmark(&tiny_cfg, &tiny()).unwrap();
    eprintln!(
        "[INFO] tiny encoder 128x128: cmd {:.3}s, mmd_gram {:.3}s, ratio {:.2}",
        mean_time(&t, "cmd"),
        mean_time(&t, "mmd_gram"),
        mean_time(&t, "cmd") / mean_time(&t, "mmd_gram")
    );

    // timing does not depend on weight values, so random VGG-19 weights stand in for trained ones
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("vgg19.json");
    random_archive(Architecture::Vgg19, 0).write(&manifest).unwrap();
    let enc = load_encoder(&EncoderSpec::vgg19(&manifest)).unwrap();
    let r = run_benchmark(&BenchmarkConfig::default(), &enc).unwrap();
    let (cmd, mmd) = (mean_time(&r, "cmd"), mean_time(&r, "mmd_gram"));
    verdict(
        "c08 runtime overhead",
        cmd <= 1.25 * mmd,
        format!(
            "vgg19 128x128, 100 iterations, 5 repeats: cmd {cmd:.2}s, mmd_gram {mmd:.2}s, ratio {:.3}; {}",
            cmd / mmd,
            r[0].hardware
        ),
    );
}

#[test]
fn c09_user_study_excluded() {
    eprintln!(
        "[EXCLUDED] c09: user-study vote counts and qualitative comparisons with feed-forward \
         methods cannot be reproduced by computation; covered instead by c01 to c08"
    );
}

#[test]
fn c10_vgg19_full_quality() {
    let Some(manifest) = std::env::var_os(WEIGHTS_ENV) else {
        verdict(
            "c10 vgg19 full-quality stylization",
            false,
            format!("{WEIGHTS_ENV} is not set; pretrained VGG-19 weights are required and none are available here"),
        );
        return;
    };
    let enc = match load_encoder(&EncoderSpec::vgg19(manifest)) {
        Ok(e) => e,
        Err(e) => return verdict("c10 vgg19 full-quality stylization", false, e),
    };
    let (content, style) = (
        Image::synthetic(Pattern::Scene, 256, 256, 0),
        Image::synthetic(Pattern::Stripes, 256, 256, 1),
    );
    let cfg = default_layers(&enc, StyleFamily::cmd(5).unwrap());
    let run = stylize(&content, &style, &enc, &cfg, &OptimizationConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run.image.save(dir.path().join("out.png")).unwrap();
    run.write_trace_csv(dir.path().join("trace.csv")).unwrap();
    let png = Image::load(dir.path().join("out.png")).unwrap();
    let rows = std::fs::read_to_string(dir.path().join("trace.csv"))
        .unwrap()
        .lines()
        .count();
    verdict(
        "c10 vgg19 full-quality stylization",
        png.height() == 256 && rows == run.iterations_executed + 1,
        format!(
            "{} iterations ({:?}), trace rows {rows}",
            run.iterations_executed, run.stop_reason
        ),
    );
}

fn inversions(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] < w[0]).count()
}

#[test]
fn x1_lr_study_content_rises_with_lr() {
    let enc = tiny();
    let (content, style) = desk_pair();
    let cfg = default_layers(&enc, StyleFamily::cmd(5).unwrap());
    let out = run_lr_study(
        &content,
        &style,
        &enc,
        &cfg,
        &OptimizationConfig::default(),
        &STUDY_LEARNING_RATES,
        1,
    )
    .unwrap();
    let finals: Vec<f64> = out.iter().map(|o| o.final_content().unwrap_or(f64::INFINITY)).collect();
    verdict(
        "x1 lr study, content loss non-decreasing in lr (<= 1 inversion)",
        inversions(&finals) <= 1,
        format!(
            "lrs {STUDY_LEARNING_RATES:?}, final content {finals:.4?}, {} inversions",
            inversions(&finals)
        ),
    );
}

#[test]
fn x2_total_loss_moving_average_descends() {
    let enc = tiny();
    let (content, style) = desk_pair();
    let stylizer = Stylizer::new(
        &content,
        &style,
        &enc,
        &default_layers(&enc, StyleFamily::cmd(5).unwrap()),
    )
    .unwrap();
    let runs: Vec<(&str, OptimizationRun)> = [("alpha 0.5, 300 iterations", 0.5), ("alpha 0.2, 500 iterations", 0.2)]
        .into_iter()
        .map(|(name, alpha)| {
            let opt = OptimizationConfig {
                alpha,
                stopping: false,
                max_iterations: if alpha == 0.5 { 300 } else { 500 },
                ..Default::default()
            };
            (name, stylizer.run(&opt).unwrap())
        })
        .collect();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, run) in &runs {
        let totals: Vec<f64> = run.trace.iter().map(|r| r.total).collect();
        let ma: Vec<f64> = totals.windows(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
        let rises = ma.windows(2).filter(|w| w[1] > w[0]).count();
        let growth = ma.last().unwrap() / ma.iter().cloned().fold(f64::INFINITY, f64::min);
        pass &= rises == 0;
        details.push(format!("{name}: {rises} rises, last/min of moving average {growth:.3}"));
    }
    verdict("x2 total-loss moving average non-increasing", pass, details.join("; "));
}
