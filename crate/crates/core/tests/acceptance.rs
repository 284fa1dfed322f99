//! Acceptance criteria 1–12. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts. Run with `cargo test --test acceptance -- --nocapture`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;

use fedmgp::aggregation::{DynamicMode, Strategy};
use fedmgp::analysis::{
    comm_cost, expected_cfc, fit_line, intra_client_matrices, mean_off_diagonal, monotone_instance,
    noise_scaling_experiment, selection_frequency_table, set_mean_expectation, snr_ordering_experiment,
};
use fedmgp::commands::{cmd_run, compare, fedavg_pair, same_metric_streams, RunOptions, StrategySpec, NOISE_GRID};
use fedmgp::feature_space::build_basis;
use fedmgp::federation::{run_federation, FederationConfig};
use fedmgp::linalg::{axpy, dot, gaussian_vec, norm};
use fedmgp::prompt_model::{gradient_check_suite, DiversityForm};
use fedmgp::rng::{stream, Purpose};
use fedmgp::selection::{sample_without_replacement, selection_distribution};

fn report(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
    let ok = pass && elapsed < limit;
    println!(
        "criterion {n}: {} ({detail}; {:.2}s of {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {n}: {detail}");
    assert!(elapsed < limit, "criterion {n} exceeded its runtime budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn softmax_oracle(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

#[test]
fn criterion_01_similarity_closed_form() {
    let start = Instant::now();
    let mut rng = stream(101, Purpose::Analysis, &[]);
    let basis = build_basis(20, 4, 6, 0.3, &mut rng).unwrap();
    let u = &basis.global_dir;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c: f64 = rng.random_range(0.0..5.0);
        let s: f64 = rng.random_range(0.0..5.0);
        let mut w = gaussian_vec(&mut rng, basis.dim, 1.0);
        let along = dot(&w, u);
        axpy(&mut w, -along, u);
        let wn = norm(&w);
        w.iter_mut().for_each(|x| *x /= wn);
        let mut p: Vec<f64> = u.iter().map(|x| c * x).collect();
        axpy(&mut p, s, &w);
        let cos = dot(&p, u) / norm(&p);
        worst = worst.max((cos - c / (c * c + s * s).sqrt()).abs());
    }
    report(1, worst <= 1e-12, start.elapsed(), secs(1), format!("max abs error {worst:.2e}"));
}

#[test]
fn criterion_02_chebyshev_cfc() {
    let start = Instant::now();
    let mut rng = stream(102, Purpose::Analysis, &[]);
    let (mut violations, mut weak, mut mismatch) = (0, 0, 0.0f64);
    for _ in 0..10_000 {
        let g = rng.random_range(2..=8);
        let (c, s) = monotone_instance(g, &mut rng);
        let tau = rng.random_range(0.05..=10.0);
        let r = expected_cfc(&c, &s, tau).unwrap();
        let scores: Vec<f64> = c.iter().zip(&s).map(|(a, b)| a / (a * a + b * b).sqrt()).collect();
        let pi = softmax_oracle(&scores, tau);
        let e_pi: f64 = pi.iter().zip(&c).map(|(p, v)| p * v).sum();
        let e_unif = c.iter().sum::<f64>() / g as f64;
        mismatch = mismatch.max((r.e_pi - e_pi).abs()).max((r.e_unif - e_unif).abs());
        let non_constant = c.iter().any(|v| (v - c[0]).abs() > 0.0);
        if e_pi < e_unif {
            violations += 1;
        } else if non_constant && e_pi <= e_unif {
            weak += 1;
        }
    }
    let pass = violations == 0 && weak == 0 && mismatch < 1e-12;
    report(
        2,
        pass,
        start.elapsed(),
        secs(5),
        format!("10000 instances, {violations} violations, {weak} non-strict, oracle mismatch {mismatch:.1e}"),
    );
}

/// Probability of each unordered subset under sequential renormalized draws.
fn subset_oracle(p: &[f64], s: usize) -> HashMap<Vec<usize>, f64> {
    fn walk(p: &[f64], s: usize, prefix: &mut Vec<usize>, prob: f64, out: &mut HashMap<Vec<usize>, f64>) {
        if prefix.len() == s {
            let mut key = prefix.clone();
            key.sort_unstable();
            *out.entry(key).or_default() += prob;
            return;
        }
        let used: f64 = prefix.iter().map(|&i| p[i]).sum();
        for i in 0..p.len() {
            if !prefix.contains(&i) {
                prefix.push(i);
                walk(p, s, prefix, prob * p[i] / (1.0 - used), out);
                prefix.pop();
            }
        }
    }
    let mut out = HashMap::new();
    walk(p, s, &mut Vec::new(), 1.0, &mut out);
    out
}

#[test]
fn criterion_03_sampling_law() {
    let start = Instant::now();
    let mut rng = stream(103, Purpose::Selection, &[]);
    let draws = 1_000_000usize;
    let (mut cells, mut outside, mut worst_z) = (0, 0, 0.0f64);
    for g in 2..=6usize {
        for s in 1..=g.min(3) {
            let scores: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..1.0)).collect();
            let tau = rng.random_range(0.2..2.0);
            let probs = selection_distribution(&scores, tau).unwrap();
            let exact = subset_oracle(&softmax_oracle(&scores, tau), s);
            let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
            for _ in 0..draws {
                let mut pick = sample_without_replacement(&probs, s, &mut rng).unwrap();
                pick.sort_unstable();
                *counts.entry(pick).or_default() += 1;
            }
            for (subset, p) in &exact {
                let observed = *counts.get(subset).unwrap_or(&0) as f64 / draws as f64;
                let sigma = (p * (1.0 - p) / draws as f64).sqrt();
                let z = if sigma > 0.0 { (observed - p).abs() / sigma } else { 0.0 };
                cells += 1;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    outside += 1;
                }
            }
        }
    }
    let mut holds = 0;
    for _ in 0..1000 {
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
        holds += usize::from(set_mean_expectation(&c, &s, 1.0, 2).unwrap().holds);
    }
    println!("set mean >= E_pi on {holds}/1000 random G=5 k=2 instances");
    report(
        3,
        outside == 0,
        start.elapsed(),
        secs(30),
        format!("{cells} subset cells, {outside} beyond 3 sigma, worst z {worst_z:.2}"),
    );
}

#[test]
fn criterion_04_noise_scaling() {
    let start = Instant::now();
    let mut rng = stream(104, Purpose::Analysis, &[]);
    let basis = build_basis(24, 4, 8, 0.3, &mut rng).unwrap();
    let fit = noise_scaling_experiment(&basis, &NOISE_GRID, 200, 1.0, &mut rng).unwrap();
    let x: Vec<f64> = fit.points.iter().map(|p| ((p.n_clients * p.k) as f64).ln()).collect();
    let y: Vec<f64> = fit.points.iter().map(|p| p.power.ln()).collect();
    let (slope, _) = fit_line(&x, &y).unwrap();
    let products: Vec<usize> = NOISE_GRID.iter().map(|(n, k)| n * k).collect();
    let pass = (slope + 1.0).abs() <= 0.15 && (slope - fit.slope).abs() < 1e-12 && products == [2, 4, 8, 16, 32];
    report(4, pass, start.elapsed(), secs(10), format!("slope {slope:.4}"));
}

#[test]
fn criterion_05_snr_ordering() {
    let start = Instant::now();
    let mut rng = stream(105, Purpose::Analysis, &[]);
    let r = snr_ordering_experiment(200, &mut rng).unwrap();
    let ordered = r
        .instances
        .iter()
        .filter(|i| i.full <= i.fixed + 1e-12 && i.fixed <= i.dynamic + 1e-12)
        .count();
    let strict = r.instances.iter().filter(|i| i.dynamic > i.fixed).count();
    let pass = r.instances.len() == 200 && ordered == 200 && strict >= 180;
    report(5, pass, start.elapsed(), secs(10), format!("{ordered}/200 ordered, {strict}/200 strict"));
}

#[test]
fn criterion_06_gradients() {
    let start = Instant::now();
    let mut rng = stream(106, Purpose::Analysis, &[]);
    let cases = gradient_check_suite(8, &mut rng).unwrap();
    let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let forms = [DiversityForm::Cos, DiversityForm::CosLiteral, DiversityForm::L1, DiversityForm::L2];
    let covered = forms
        .iter()
        .all(|f| [0.0, 1.0, 5.0].iter().all(|l| cases.iter().any(|c| c.form == *f && c.lambda == *l)));
    let pass = cases.len() >= 20 && covered && worst < 1e-4;
    report(6, pass, start.elapsed(), secs(10), format!("{} configurations, max rel error {worst:.2e}", cases.len()));
}

#[test]
fn criterion_07_fedavg_reduction() {
    let start = Instant::now();
    let cfg = FederationConfig {
        rounds: 10,
        ..FederationConfig::benchmark()
    };
    let (full, dynamic) = fedavg_pair(&cfg).unwrap();
    let pass = full.records.len() == 10
        && same_metric_streams(&full.records, &dynamic.records)
        && full.checkpoint.clients == dynamic.checkpoint.clients;
    report(7, pass, start.elapsed(), secs(60), "full vs dynamic(policy=all, ordinal, s=G), 10 rounds".into());
}

#[test]
fn criterion_08_strategy_ordering_and_10_no_exclusion() {
    let start = Instant::now();
    let base = FederationConfig::benchmark();
    let specs: Vec<StrategySpec> = ["full", "fixed", "dynamic"]
        .iter()
        .map(|s| StrategySpec::parse(s).unwrap())
        .collect();
    let seeds: Vec<u64> = (0..10).collect();
    let rows = compare(&base, &specs, &seeds, None).unwrap();
    let (full, fixed, dynamic) = (&rows[0], &rows[1], &rows[2]);
    for r in &rows {
        println!(
            "{:8} local {:.4} base {:.4} novel {:.4} cm {:.4} ± {:.4}",
            r.strategy, r.local.0, r.base.0, r.novel.0, r.cm.0, r.cm.1
        );
    }
    let pass = dynamic.cm.0 > fixed.cm.0 && dynamic.cm.0 > full.cm.0 && fixed.local.0 > full.local.0;
    let elapsed8 = start.elapsed();

    let start10 = Instant::now();
    let cfg = FederationConfig {
        tau_sel: 1.0,
        ..FederationConfig::default()
    };
    let run = run_federation(&cfg).unwrap();
    let freq = selection_frequency_table(&run.records, cfg.groups);
    let pass10 = run.records.len() == 10 && freq.never_selected.is_empty();
    let elapsed10 = start10.elapsed();

    println!(
        "criterion 10: {} ({} (modality, group) pairs never selected; {:.2}s)",
        if pass10 { "PASS" } else { "FAIL" },
        freq.never_selected.len(),
        elapsed10.as_secs_f64()
    );
    report(
        8,
        pass,
        elapsed8,
        secs(600),
        format!(
            "cm dynamic {:.4} fixed {:.4} full {:.4}; local fixed {:.4} full {:.4}",
            dynamic.cm.0, fixed.cm.0, full.cm.0, fixed.local.0, full.local.0
        ),
    );
    assert!(pass10, "criterion 10: {:?} never selected", freq.never_selected);
}

fn mean_intra_visual(cfg: &FederationConfig) -> f64 {
    let run = run_federation(cfg).unwrap();
    let v: Vec<f64> = run
        .checkpoint
        .clients
        .iter()
        .map(|p| mean_off_diagonal(&intra_client_matrices(p).unwrap().1))
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_09_diversity_loss() {
    let start = Instant::now();
    let mut lower = 0;
    for seed in 0..10 {
        let with = FederationConfig {
            seed,
            lambda: 1.0,
            ..FederationConfig::benchmark()
        };
        let without = FederationConfig { lambda: 0.0, ..with.clone() };
        let (a, b) = (mean_intra_visual(&with), mean_intra_visual(&without));
        println!("seed {seed}: intra-client visual cosine {a:.4} (lambda 1) vs {b:.4} (lambda 0)");
        lower += usize::from(a < b);
    }
    report(9, lower >= 8, start.elapsed(), secs(600), format!("lower under lambda=1 in {lower}/10 seeds"));
}

#[test]
fn criterion_11_determinism_across_threads() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let digest = |threads: Option<usize>, name: &str| {
        let opts = RunOptions {
            out: dir.path().join(name),
            seed: Some(7),
            threads,
            ..RunOptions::default()
        };
        let r = cmd_run(&opts).unwrap();
        r.manifest.files.into_iter().find(|f| f.path == "metrics.csv").unwrap().sha256
    };
    let max = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    let one = digest(Some(1), "one");
    let again = digest(Some(1), "again");
    let many = digest(Some(max), "many");
    let pass = one == again && one == many;
    report(11, pass, start.elapsed(), secs(120), format!("1 thread vs {max} threads, metrics.csv {}", &one[..12]));
}

#[test]
fn criterion_12_communication() {
    let start = Instant::now();
    let (g, s, d) = (5, 2, 16);
    let full = comm_cost(Strategy::Full, DynamicMode::Ordinal, g, s, d, d);
    let dynamic = comm_cost(Strategy::Dynamic, DynamicMode::Ordinal, g, s, d, d);
    let cfg = FederationConfig::default();
    let pass = dynamic.uplink_prompt * g == full.uplink_prompt * s
        && dynamic.uplink_prompt == 64
        && dynamic.uplink_total() < full.uplink_total()
        && cfg.comm_cost() == dynamic;
    report(
        12,
        pass,
        start.elapsed(),
        secs(1),
        format!(
            "uplink prompt scalars {} vs {} (ratio {}/{}), with selection metadata {} vs {}",
            dynamic.uplink_prompt,
            full.uplink_prompt,
            s,
            g,
            dynamic.uplink_total(),
            full.uplink_total()
        ),
    );
}
