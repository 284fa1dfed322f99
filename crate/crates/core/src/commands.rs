//! The `run`, `verify`, `compare` and `report` commands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{DynamicMode, Strategy};
use crate::analysis::{
    alpha_trajectory, expected_cfc_with, inter_client_matrices, intra_client_matrices, mean_off_diagonal,
    monotone_instance, noise_scaling_experiment, selection_frequency_table, set_mean_expectation,
    set_mean_monte_carlo, snr_ordering_experiment, AlphaParams, DistributionFn,
};
use crate::config::{parse_config, parse_config_str, parse_strategy, render_config, strategy_name};
use crate::error::{Error, Result};
use crate::feature_space::{build_basis, theory_similarity};
use crate::federation::{run_federation_with_threads, Checkpoint, FederationConfig, FederationRun, RoundRecord};
use crate::linalg::{self, axpy, cosine};
use crate::prompt_model::gradient_check_suite;
use crate::report::{
    fmt_f64, frequency_table, matrix_csv, metrics_table, parse_table, selection_trace_table, sha256_hex, snr_table,
    FileDigest, RunManifest, Table, COMPARE_SCHEMA, VERIFY_SCHEMA,
};
use crate::rng::{stream, Purpose};
use crate::selection::{sample_without_replacement, selection_distribution, SelectionPolicy};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub rounds: Option<usize>,
    pub threads: Option<usize>,
}

pub fn load_config(path: Option<&Path>) -> Result<FederationConfig> {
    match path {
        Some(p) => parse_config(p),
        None => parse_config_str(""),
    }
}

fn apply_overrides(mut cfg: FederationConfig, opts: &RunOptions) -> Result<FederationConfig> {
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(s) = opts.strategy {
        cfg.strategy = s;
    }
    if let Some(r) = opts.rounds {
        cfg.rounds = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// In-memory output files, written together once everything succeeded.
#[derive(Debug, Default)]
pub struct OutputFiles {
    pub files: Vec<(String, String)>,
}

impl OutputFiles {
    pub fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every file, then `manifest.json` listing their digests.
    pub fn write(&self, out: &Path, config: &FederationConfig, started: String) -> Result<RunManifest> {
        create_dir(out)?;
        let mut digests = Vec::with_capacity(self.files.len());
        for (name, content) in &self.files {
            let path = out.join(name);
            if let Some(parent) = path.parent() {
                create_dir(parent)?;
            }
            write_file(&path, content)?;
            digests.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(content.as_bytes()),
            });
        }
        let manifest = RunManifest {
            config: render_config(config),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started,
            finished: now(),
            files: digests,
        };
        write_file(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(manifest)
    }
}

fn io_at<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    io_at(path, fs::write(path, content))
}

fn read_file(path: &Path) -> Result<String> {
    io_at(path, fs::read_to_string(path))
}

fn create_dir(path: &Path) -> Result<()> {
    io_at(path, fs::create_dir_all(path))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Output files of a finished federation run.
pub fn run_outputs(cfg: &FederationConfig, run: &FederationRun) -> Result<OutputFiles> {
    let mut files = OutputFiles::default();
    files.add("config.txt", render_config(cfg));
    files.add("metrics.csv", metrics_table(cfg, &run.records).render());
    files.add("selection_trace.csv", selection_trace_table(&run.records).render());
    files.add("snr.csv", snr_table(&run.records).render());
    if cfg.groups >= 2 {
        for (c, p) in run.checkpoint.clients.iter().enumerate() {
            let (t, v) = intra_client_matrices(p)?;
            files.add(format!("similarity/intra_client_{c}_text.csv"), matrix_csv(&t));
            files.add(format!("similarity/intra_client_{c}_visual.csv"), matrix_csv(&v));
        }
    }
    if cfg.n_clients >= 2 {
        let (t, v) = inter_client_matrices(&run.checkpoint.clients)?;
        files.add("similarity/inter_client_text.csv", matrix_csv(&t));
        files.add("similarity/inter_client_visual.csv", matrix_csv(&v));
    }
    files.add("records.json", serde_json::to_string(&run.records)? + "\n");
    files.add("checkpoint.json", serde_json::to_string(&run.checkpoint)? + "\n");
    Ok(files)
}

pub struct RunResult {
    pub config: FederationConfig,
    pub run: FederationRun,
    pub manifest: RunManifest,
}

pub fn cmd_run(opts: &RunOptions) -> Result<RunResult> {
    let started = now();
    let cfg = apply_overrides(load_config(opts.config.as_deref())?, opts)?;
    let run = run_federation_with_threads(&cfg, opts.threads)?;
    let files = run_outputs(&cfg, &run)?;
    let manifest = files.write(&opts.out, &cfg, started)?;
    Ok(RunResult {
        config: cfg,
        run,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub mandatory: bool,
    pub passed: bool,
    pub measured: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, mandatory: bool, passed: bool, measured: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            mandatory,
            passed,
            measured,
            detail,
        }
    }
}

/// Closed-form similarity of `c u_C + s w` against `u_C` on random pairs.
pub fn check_similarity_closed_form<R: Rng + ?Sized>(pairs: usize, rng: &mut R) -> Result<CheckResult> {
    let basis = build_basis(16, 3, 4, 0.3, rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (c, s): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        if c == 0.0 && s == 0.0 {
            continue;
        }
        let mut w = linalg::gaussian_vec(rng, basis.dim, 1.0);
        let along = linalg::dot(&w, &basis.global_dir);
        axpy(&mut w, -along, &basis.global_dir);
        let w = linalg::normalized(&w, "specific direction")?;
        let mut p = linalg::scaled(&basis.global_dir, c);
        axpy(&mut p, s, &w);
        let err = (cosine(&p, &basis.global_dir)? - theory_similarity(c, s)?).abs();
        worst = worst.max(err);
    }
    Ok(CheckResult::new(
        "similarity_closed_form",
        true,
        worst <= 1e-12,
        worst,
        format!("{pairs} pairs, max abs error"),
    ))
}

/// `E_π ≥ E_unif` on random instances with monotone scores.
pub fn check_chebyshev<R: Rng + ?Sized>(instances: usize, dist: DistributionFn, rng: &mut R) -> Result<CheckResult> {
    let (mut violations, mut weak) = (0usize, 0usize);
    let mut min_gap = f64::INFINITY;
    for _ in 0..instances {
        let g = rng.random_range(2..=8);
        let (c, s) = monotone_instance(g, rng);
        let tau = rng.random_range(0.05..10.0);
        let r = expected_cfc_with(&c, &s, tau, dist)?;
        min_gap = min_gap.min(r.gap);
        if r.gap < 0.0 {
            violations += 1;
        } else if r.gap == 0.0 {
            weak += 1;
        }
    }
    Ok(CheckResult::new(
        "chebyshev_cfc",
        true,
        violations == 0 && weak == 0,
        min_gap,
        format!("{instances} instances, {violations} violations, {weak} without strict gap; measured = min gap"),
    ))
}

pub fn check_set_mean<R: Rng + ?Sized>(rng: &mut R) -> Result<(CheckResult, CheckResult)> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let g = rng.random_range(2..=6);
        let c: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: Vec<f64> = (0..g).map(|_| rng.random_range(0.01..1.0)).collect();
        let all = set_mean_expectation(&c, &s, 1.0, g)?;
        let one = set_mean_expectation(&c, &s, 1.0, 1)?;
        worst = worst.max((all.set_mean - all.e_unif).abs()).max((one.set_mean - one.e_pi).abs());
    }
    let boundary = CheckResult::new(
        "set_mean_boundaries",
        true,
        worst < 1e-12,
        worst,
        "k=G equals uniform mean, k=1 equals E_pi".into(),
    );
    let mut holds = 0;
    for _ in 0..1000 {
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
        holds += usize::from(set_mean_expectation(&c, &s, 1.0, 2)?.holds);
    }
    let rate = holds as f64 / 1000.0;
    let verdict = CheckResult::new(
        "set_mean_ge_e_pi_rate",
        false,
        rate >= 0.99,
        rate,
        "fraction of G=5 k=2 instances with set mean >= E_pi (informational)".into(),
    );
    Ok((boundary, verdict))
}

/// Empirical subset frequencies against exact enumeration.
pub fn check_subset_law<R: Rng + ?Sized>(draws: usize, rng: &mut R) -> Result<CheckResult> {
    let probs = selection_distribution(&[0.9, 0.1, 0.5, 0.3, 0.7], 0.5)?;
    let s = 2;
    let g = probs.len();
    let mut exact = vec![0.0; g * g];
    for a in 0..g {
        for b in 0..g {
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                exact[lo * g + hi] += probs[a] * probs[b] / (1.0 - probs[a]);
            }
        }
    }
    let mut counts = vec![0usize; g * g];
    for _ in 0..draws {
        let mut pick = sample_without_replacement(&probs, s, rng)?;
        pick.sort_unstable();
        counts[pick[0] * g + pick[1]] += 1;
    }
    let mut worst_z: f64 = 0.0;
    for i in 0..g * g {
        if exact[i] > 0.0 {
            let p = exact[i];
            let sigma = (p * (1.0 - p) / draws as f64).max(0.0).sqrt();
            let z = (counts[i] as f64 / draws as f64 - p).abs() / sigma.max(1e-300);
            worst_z = worst_z.max(z);
        }
    }
    Ok(CheckResult::new(
        "subset_law",
        true,
        worst_z <= 4.0,
        worst_z,
        format!("{draws} draws, G=5 s=2; measured = worst z-score"),
    ))
}

pub fn check_snr_ordering<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> Result<CheckResult> {
    let r = snr_ordering_experiment(instances, rng)?;
    let frac = r.strict as f64 / instances as f64;
    Ok(CheckResult::new(
        "snr_ordering",
        true,
        r.ordered == instances && frac >= 0.9,
        frac,
        format!("{}/{instances} ordered, {} strict (dynamic > fixed)", r.ordered, r.strict),
    ))
}

pub const NOISE_GRID: [(usize, usize); 5] = [(2, 1), (4, 1), (8, 1), (8, 2), (16, 2)];

pub fn check_noise_slope<R: Rng + ?Sized>(repetitions: usize, rng: &mut R) -> Result<CheckResult> {
    let basis = build_basis(24, 4, 8, 0.3, rng)?;
    let fit = noise_scaling_experiment(&basis, &NOISE_GRID, repetitions, 1.0, rng)?;
    Ok(CheckResult::new(
        "noise_scaling_slope",
        true,
        (fit.slope + 1.0).abs() <= 0.15,
        fit.slope,
        format!("n*k in 2..32, {repetitions} repetitions"),
    ))
}

pub fn check_gradients<R: Rng + ?Sized>(rng: &mut R) -> Result<CheckResult> {
    let cases = gradient_check_suite(8, rng)?;
    let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(CheckResult::new(
        "gradient_check",
        true,
        worst < 1e-4,
        worst,
        format!("{} configurations, max relative error", cases.len()),
    ))
}

pub fn check_softmax<R: Rng + ?Sized>(rng: &mut R) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut order_ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..10);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let tau = rng.random_range(0.05..5.0);
        let shift = rng.random_range(-50.0..50.0);
        let p = selection_distribution(&s, tau)?;
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let q = selection_distribution(&shifted, tau)?;
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
        for i in 0..n {
            worst = worst.max((p[i] - q[i]).abs());
            for j in 0..n {
                if s[i] > s[j] && p[i] < p[j] {
                    order_ok = false;
                }
            }
        }
    }
    Ok(CheckResult::new(
        "softmax_invariances",
        true,
        order_ok && worst < 1e-12,
        worst,
        "normalization, shift invariance, order preservation".into(),
    ))
}

/// Streams that must agree between two runs: losses, metrics and SNR.
fn metric_stream(records: &[RoundRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    for r in records {
        for c in &r.clients {
            let m = c.metrics;
            out.extend([m.local, m.base, m.novel, m.hm, m.cm]);
            if let Some(l) = c.loss {
                out.extend([l.ce, l.div]);
            }
        }
        out.extend([r.min_snr, r.alpha_g]);
    }
    out
}

/// Whether two runs produced bit-identical metric streams.
pub fn same_metric_streams(a: &[RoundRecord], b: &[RoundRecord]) -> bool {
    let (x, y) = (metric_stream(a), metric_stream(b));
    x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits())
}

/// Full aggregation against dynamic aggregation that shares every group.
pub fn fedavg_pair(base: &FederationConfig) -> Result<(FederationRun, FederationRun)> {
    let full = FederationConfig {
        strategy: Strategy::Full,
        ..base.clone()
    };
    let dynamic = FederationConfig {
        strategy: Strategy::Dynamic,
        policy: SelectionPolicy::All,
        aggregation_mode: DynamicMode::Ordinal,
        select_s: base.groups,
        ..base.clone()
    };
    Ok((run_federation_with_threads(&full, None)?, run_federation_with_threads(&dynamic, None)?))
}

pub fn check_fedavg_reduction(seed: u64) -> Result<CheckResult> {
    let cfg = FederationConfig {
        n_clients: 4,
        rounds: 3,
        n_classes: 8,
        input_dim: 32,
        feature_dim: 32,
        train_per_class: 8,
        eval_per_class: 5,
        lr: 0.05,
        seed,
        ..FederationConfig::default()
    };
    let (a, b) = fedavg_pair(&cfg)?;
    let same = same_metric_streams(&a.records, &b.records) && a.checkpoint.clients == b.checkpoint.clients;
    Ok(CheckResult::new(
        "fedavg_reduction",
        true,
        same,
        f64::from(u8::from(same)),
        "full vs dynamic(policy=all, ordinal, s=G), equal weights".into(),
    ))
}

pub fn check_alpha_monotone<R: Rng + ?Sized>(rng: &mut R) -> Result<(CheckResult, CheckResult)> {
    let mut worst_drop: f64 = 0.0;
    let mut prob_drops = 0usize;
    for policy in [SelectionPolicy::TopS, SelectionPolicy::Probabilistic] {
        for _ in 0..100 {
            let groups = rng.random_range(2..8);
            let p = AlphaParams {
                n_clients: rng.random_range(2..10),
                groups,
                k: rng.random_range(1..=groups),
                rounds: 8,
                policy,
                tau: 1.0,
            };
            let a = alpha_trajectory(&p, rng)?;
            for w in a.windows(2) {
                let drop = w[0] - w[1];
                if policy == SelectionPolicy::TopS {
                    worst_drop = worst_drop.max(drop);
                } else if drop > 1e-9 {
                    prob_drops += 1;
                }
            }
        }
    }
    Ok((
        CheckResult::new(
            "alpha_monotone_top_s",
            true,
            worst_drop <= 1e-9,
            worst_drop,
            "pure aggregation; measured = largest round-over-round decrease".into(),
        ),
        CheckResult::new(
            "alpha_drops_probabilistic",
            false,
            true,
            prob_drops as f64,
            "decreasing steps under sampled selection (informational)".into(),
        ),
    ))
}

/// Every theory check, with the score-to-distribution map injectable.
pub fn run_checks(seed: u64, dist: DistributionFn) -> Result<Vec<CheckResult>> {
    let mut rng = stream(seed, Purpose::Analysis, &[]);
    let mut out = vec![
        check_similarity_closed_form(1000, &mut rng)?,
        check_chebyshev(10_000, dist, &mut rng)?,
    ];
    let (boundary, verdict) = check_set_mean(&mut rng)?;
    out.extend([boundary, verdict]);
    let mc = set_mean_monte_carlo(&[0.2, 0.9, 0.4, 0.6, 0.1, 0.8, 0.3, 0.5, 0.7], &[0.5; 9], 1.0, 3, 20_000, &mut rng)?;
    out.push(CheckResult::new(
        "set_mean_monte_carlo",
        false,
        true,
        mc.set_mean,
        format!("G=9 estimate, std error {}", fmt_f64(mc.std_error.unwrap_or(f64::NAN))),
    ));
    out.push(check_subset_law(200_000, &mut rng)?);
    out.push(check_snr_ordering(200, &mut rng)?);
    out.push(check_noise_slope(200, &mut rng)?);
    out.push(check_gradients(&mut rng)?);
    out.push(check_softmax(&mut rng)?);
    let (alpha, alpha_prob) = check_alpha_monotone(&mut rng)?;
    out.extend([alpha, alpha_prob]);
    out.push(check_fedavg_reduction(seed)?);
    Ok(out)
}

pub fn verify_table(checks: &[CheckResult]) -> Table {
    let mut t = Table::new(VERIFY_SCHEMA, vec!["check", "mandatory", "passed", "measured", "detail"]);
    for c in checks {
        t.push(vec![
            c.name.clone(),
            u8::from(c.mandatory).to_string(),
            u8::from(c.passed).to_string(),
            fmt_f64(c.measured),
            c.detail.replace(',', ";"),
        ]);
    }
    t
}

pub struct VerifyOutcome {
    pub checks: Vec<CheckResult>,
    pub failed: Vec<String>,
}

pub fn cmd_verify(out: &Path, seed: u64) -> Result<VerifyOutcome> {
    let checks = run_checks(seed, selection_distribution)?;
    create_dir(out)?;
    write_file(&out.join("verify_report.csv"), &verify_table(&checks).render())?;
    let failed = checks
        .iter()
        .filter(|c| c.mandatory && !c.passed)
        .map(|c| c.name.clone())
        .collect();
    Ok(VerifyOutcome { checks, failed })
}

/// `name` or `name(key=value,...)` with keys `policy`, `aggregation`, `select_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub label: String,
    pub overrides: String,
}

impl StrategySpec {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.split_once('(') {
            Some((n, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Validation(format!("unbalanced strategy spec `{text}`")))?;
                (n.trim(), inner)
            }
            None => (text, ""),
        };
        if parse_strategy(name).is_none() {
            return Err(Error::Validation(format!("unknown strategy `{name}`")));
        }
        let mut overrides = format!("strategy = {name}\n");
        for kv in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("expected key=value in `{kv}`")))?;
            let k = k.trim();
            if !["policy", "aggregation", "select_s", "pairing", "tau_sel"].contains(&k) {
                return Err(Error::Validation(format!("`{k}` cannot be set per strategy")));
            }
            overrides.push_str(&format!("{k} = {}\n", v.trim()));
        }
        Ok(Self {
            label: text.to_string(),
            overrides,
        })
    }

    /// `base` with this spec's keys replaced.
    pub fn apply(&self, base: &FederationConfig) -> Result<FederationConfig> {
        let keys: Vec<&str> = self.overrides.lines().filter_map(|l| l.split('=').next()).map(str::trim).collect();
        let kept: Vec<String> = render_config(base)
            .lines()
            .filter(|l| !keys.contains(&l.split('=').next().unwrap_or("").trim()))
            .map(str::to_string)
            .collect();
        let mut cfg = parse_config_str(&(kept.join("\n") + "\n" + &self.overrides))?;
        if cfg.strategy == Strategy::Dynamic && cfg.policy == SelectionPolicy::All {
            cfg.select_s = cfg.groups;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: String,
    pub seeds: usize,
    pub local: (f64, f64),
    pub base: (f64, f64),
    pub novel: (f64, f64),
    pub cm: (f64, f64),
    pub min_snr: (f64, f64),
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Final-round mean metrics of matched-seed runs per strategy.
pub fn compare(
    base: &FederationConfig,
    strategies: &[StrategySpec],
    seeds: &[u64],
    threads: Option<usize>,
) -> Result<Vec<CompareRow>> {
    if strategies.len() < 2 {
        return Err(Error::Validation("compare needs at least two strategies".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Validation("compare needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for spec in strategies {
        let mut finals = Vec::with_capacity(seeds.len());
        let mut snrs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = spec.apply(base)?;
            cfg.seed = seed;
            let run = run_federation_with_threads(&cfg, threads)?;
            let last = run.records.last().ok_or(Error::Validation("no rounds".into()))?;
            finals.push(last.mean);
            snrs.push(last.min_snr);
        }
        let col = |f: fn(&crate::federation::Metrics) -> f64| mean_std(&finals.iter().map(f).collect::<Vec<_>>());
        rows.push(CompareRow {
            strategy: spec.label.clone(),
            seeds: seeds.len(),
            local: col(|m| m.local),
            base: col(|m| m.base),
            novel: col(|m| m.novel),
            cm: col(|m| m.cm),
            min_snr: mean_std(&snrs),
        });
    }
    Ok(rows)
}

pub fn compare_table(rows: &[CompareRow]) -> Table {
    let mut t = Table::new(
        COMPARE_SCHEMA,
        vec![
            "strategy", "seeds", "local_mean", "local_std", "base_mean", "base_std", "novel_mean", "novel_std",
            "cm_mean", "cm_std", "min_snr_mean", "min_snr_std",
        ],
    );
    for r in rows {
        let mut row = vec![format!("\"{}\"", r.strategy), r.seeds.to_string()];
        for (m, s) in [r.local, r.base, r.novel, r.cm, r.min_snr] {
            row.push(fmt_f64(m));
            row.push(fmt_f64(s));
        }
        t.push(row);
    }
    t
}

pub fn cmd_compare(
    config: Option<&Path>,
    strategies: &[String],
    seeds: &[u64],
    out: &Path,
    threads: Option<usize>,
) -> Result<Vec<CompareRow>> {
    let base = match config {
        Some(p) => parse_config(p)?,
        None => FederationConfig::benchmark(),
    };
    let specs = strategies.iter().map(|s| StrategySpec::parse(s)).collect::<Result<Vec<_>>>()?;
    let rows = compare(&base, &specs, seeds, threads)?;
    create_dir(out)?;
    write_file(&out.join("compare.csv"), &compare_table(&rows).render())?;
    Ok(rows)
}

/// Derived tables from a finished run directory.
pub fn cmd_report(out: &Path) -> Result<Vec<String>> {
    let cfg = parse_config(&out.join("config.txt"))?;
    let records: Vec<RoundRecord> = serde_json::from_str(&read_file(&out.join("records.json"))?)?;
    let checkpoint: Checkpoint = serde_json::from_str(&read_file(&out.join("checkpoint.json"))?)?;
    let freq = selection_frequency_table(&records, cfg.groups);
    write_file(&out.join("selection_frequency.csv"), &frequency_table(&freq).render())?;

    let (header, rows) = parse_table(&read_file(&out.join("metrics.csv"))?);
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut lines = vec![format!("strategy: {}", strategy_name(cfg.strategy))];
    if let (Some(ci), Some(ri), Some(cm)) = (col("client"), col("round"), col("cm")) {
        for r in rows.iter().filter(|r| r[ci] == "mean") {
            lines.push(format!("round {}: cm {}", r[ri], r[cm]));
        }
    }
    if cfg.groups >= 2 {
        let visual: Vec<f64> = checkpoint
            .clients
            .iter()
            .map(|p| intra_client_matrices(p).map(|(_, v)| mean_off_diagonal(&v)))
            .collect::<Result<_>>()?;
        lines.push(format!(
            "mean intra-client visual cosine: {}",
            fmt_f64(visual.iter().sum::<f64>() / visual.len() as f64)
        ));
    }
    let never: Vec<String> = freq
        .never_selected
        .iter()
        .map(|(m, g)| format!("{}:{g}", m.as_str()))
        .collect();
    lines.push(format!(
        "never selected: {}",
        if never.is_empty() { "none".into() } else { never.join(" ") }
    ));
    write_file(&out.join("summary.txt"), &(lines.join("\n") + "\n"))?;
    Ok(lines)
}
