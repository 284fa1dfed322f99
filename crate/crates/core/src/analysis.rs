//! Theory harness: common-feature content, SNR of aggregated slots, exact
//! selection oracles, noise-suppression fits, selection frequencies and
//! prompt similarity matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_dynamic, aggregate_fixed, aggregate_full, DynamicMode, Strategy};
use crate::error::{Error, Result};
use crate::feature_space::{build_basis, theory_similarity, FeatureBasis};
use crate::federation::RoundRecord;
use crate::linalg::{self, axpy, check_len, cosine, dot, norm, norm_sq, ZERO_NORM};
use crate::prompt_model::PromptGroupSet;
use crate::selection::{
    group_similarity, sample_without_replacement, selection_distribution, top_s, ClientSelection, Modality,
    PairingMode, SelectionOutcome, SelectionPolicy,
};

/// Common-feature content `M(p) = ⟨p, u_C⟩`.
pub fn cfc(p: &[f64], basis: &FeatureBasis) -> Result<f64> {
    check_len(p, basis.dim)?;
    Ok(dot(p, &basis.global_dir))
}

/// Signature of a score-to-distribution map, so checks can run against
/// alternative (e.g. deliberately broken) implementations.
pub type DistributionFn = fn(&[f64], f64) -> Result<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfcExpectation {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub e_pi: f64,
    pub e_unif: f64,
    pub gap: f64,
}

/// A random instance whose scores are monotone in the common coefficients:
/// `c` and the specific-to-common angle are drawn in opposite orders, then
/// permuted together.
pub fn monotone_instance<R: Rng + ?Sized>(groups: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut c: Vec<f64> = (0..groups).map(|_| rng.random_range(1e-3..2.0)).collect();
    let mut theta: Vec<f64> = (0..groups).map(|_| rng.random_range(0.0..std::f64::consts::FRAC_PI_2 - 1e-3)).collect();
    c.sort_by(f64::total_cmp);
    theta.sort_by(|a, b| b.total_cmp(a));
    let mut pairs: Vec<(f64, f64)> = c.iter().zip(&theta).map(|(ci, t)| (*ci, ci * t.tan())).collect();
    rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), rng);
    pairs.into_iter().unzip()
}

pub fn expected_cfc(c: &[f64], s: &[f64], tau: f64) -> Result<CfcExpectation> {
    expected_cfc_with(c, s, tau, selection_distribution)
}

pub fn expected_cfc_with(c: &[f64], s: &[f64], tau: f64, dist: DistributionFn) -> Result<CfcExpectation> {
    if c.len() != s.len() {
        return Err(Error::LengthMismatch {
            expected: c.len(),
            actual: s.len(),
        });
    }
    if c.is_empty() {
        return Err(Error::InvalidParameter("no groups".into()));
    }
    let scores = c
        .iter()
        .zip(s)
        .map(|(ci, si)| theory_similarity(*ci, *si))
        .collect::<Result<Vec<_>>>()?;
    let probs = dist(&scores, tau)?;
    let e_pi: f64 = c.iter().zip(&probs).map(|(ci, p)| ci * p).sum();
    let e_unif = c.iter().sum::<f64>() / c.len() as f64;
    Ok(CfcExpectation {
        scores,
        probs,
        e_pi,
        e_unif,
        gap: e_pi - e_unif,
    })
}

/// Largest `G` handled by exact enumeration.
pub const ENUMERATION_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeanReport {
    pub set_mean: f64,
    pub e_pi: f64,
    pub e_unif: f64,
    /// Whether `set_mean ≥ e_pi` (within 1e-12).
    pub holds: bool,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
}

/// Exact `E[(1/k) Σ_{p∈S} M(p)]` over sequential renormalized draws.
pub fn set_mean_expectation(c: &[f64], s: &[f64], tau: f64, k: usize) -> Result<SetMeanReport> {
    let g = c.len();
    if g > ENUMERATION_LIMIT {
        return Err(Error::GroupsTooLarge {
            groups: g,
            limit: ENUMERATION_LIMIT,
        });
    }
    if k == 0 || k > g {
        return Err(Error::SelectionSize { s: k, groups: g });
    }
    let base = expected_cfc(c, s, tau)?;
    let probs = &base.probs;

    // Depth-first over ordered prefixes; `used` is a bitmask.
    fn walk(probs: &[f64], c: &[f64], k: usize, used: u32, depth: usize, p: f64, sum_c: f64, acc: &mut f64) {
        if depth == k {
            *acc += p * sum_c / k as f64;
            return;
        }
        let removed: f64 = (0..probs.len()).filter(|i| used & (1 << i) != 0).map(|i| probs[i]).sum();
        let left = 1.0 - removed;
        for i in 0..probs.len() {
            if used & (1 << i) == 0 && probs[i] > 0.0 {
                walk(probs, c, k, used | (1 << i), depth + 1, p * probs[i] / left, sum_c + c[i], acc);
            }
        }
    }
    let mut set_mean = 0.0;
    walk(probs, c, k, 0, 0, 1.0, 0.0, &mut set_mean);
    Ok(SetMeanReport {
        set_mean,
        e_pi: base.e_pi,
        e_unif: base.e_unif,
        holds: set_mean >= base.e_pi - 1e-12,
        std_error: None,
    })
}

/// Monte Carlo version of [`set_mean_expectation`] for any `G`.
pub fn set_mean_monte_carlo<R: Rng + ?Sized>(
    c: &[f64],
    s: &[f64],
    tau: f64,
    k: usize,
    draws: usize,
    rng: &mut R,
) -> Result<SetMeanReport> {
    if draws < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    let base = expected_cfc(c, s, tau)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let picks = sample_without_replacement(&base.probs, k, rng)?;
        let m = picks.iter().map(|&i| c[i]).sum::<f64>() / k as f64;
        sum += m;
        sum_sq += m * m;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(SetMeanReport {
        set_mean: mean,
        e_pi: base.e_pi,
        e_unif: base.e_unif,
        holds: mean >= base.e_pi - 1e-12,
        std_error: Some((var / n).sqrt()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfcReport {
    pub coefficients: Vec<f64>,
    pub probs: Vec<f64>,
    pub expected_cfc_pi: f64,
    pub expected_cfc_uniform: f64,
    pub expected_set_mean: f64,
    /// `α_G` per round, when a trajectory is supplied.
    pub global_common_coefficient: Vec<f64>,
}

pub fn cfc_report(c: &[f64], s: &[f64], tau: f64, k: usize, alpha: Vec<f64>) -> Result<CfcReport> {
    let e = expected_cfc(c, s, tau)?;
    let sm = set_mean_expectation(c, s, tau, k)?;
    Ok(CfcReport {
        coefficients: c.to_vec(),
        probs: e.probs,
        expected_cfc_pi: e.e_pi,
        expected_cfc_uniform: e.e_unif,
        expected_set_mean: sm.set_mean,
        global_common_coefficient: alpha,
    })
}

/// Noise power below which an SNR is reported as `+∞` and flagged.
pub const PURE_SIGNAL_PHI: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSnr {
    pub slot: usize,
    pub beta: f64,
    pub phi: f64,
    pub snr: f64,
    pub infinite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// Nonzero slots only.
    pub per_slot: Vec<SlotSnr>,
    pub min_snr: f64,
    pub any_infinite: bool,
    /// `β̄_sel / β̄_all` per slot where measured.
    pub selection_advantage: Vec<Option<f64>>,
}

impl SnrReport {
    pub fn mean_beta(&self) -> f64 {
        self.per_slot.iter().map(|s| s.beta).sum::<f64>() / self.per_slot.len() as f64
    }
}

/// `(β, φ)` of `v`: the global coefficient and all remaining energy, split
/// over the orthonormal frame plus the off-frame residual.
pub fn signal_noise(v: &[f64], basis: &FeatureBasis) -> Result<(f64, f64)> {
    check_len(v, basis.dim)?;
    let beta = dot(v, &basis.global_dir);
    let mut rest = v.to_vec();
    axpy(&mut rest, -beta, &basis.global_dir);
    let mut phi = 0.0;
    let specific = basis.shared_dir.iter().chain(&basis.private_dirs).chain(&basis.noise_dirs);
    for dir in specific {
        let p = dot(&rest, dir);
        phi += p * p;
        axpy(&mut rest, -p, dir);
    }
    phi += norm_sq(&rest);
    Ok((beta, phi))
}

/// Per-slot `SNR = β²/φ`; all-zero slots are skipped.
pub fn snr(slots: &[Vec<f64>], basis: &FeatureBasis) -> Result<SnrReport> {
    let mut per_slot = Vec::new();
    for (j, v) in slots.iter().enumerate() {
        if norm(v) < ZERO_NORM {
            continue;
        }
        let (beta, phi) = signal_noise(v, basis)?;
        let infinite = phi < PURE_SIGNAL_PHI;
        let snr = if infinite { f64::INFINITY } else { beta * beta / phi };
        per_slot.push(SlotSnr {
            slot: j,
            beta,
            phi,
            snr,
            infinite,
        });
    }
    if per_slot.is_empty() {
        return Err(Error::AllSlotsZero);
    }
    let min_snr = per_slot.iter().map(|s| s.snr).fold(f64::INFINITY, f64::min);
    Ok(SnrReport {
        any_infinite: per_slot.iter().any(|s| s.infinite),
        min_snr,
        selection_advantage: vec![None; slots.len()],
        per_slot,
    })
}

/// Outcome of one synthetic strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrComparison {
    pub n_clients: usize,
    pub groups: usize,
    pub s: usize,
    pub full: f64,
    pub fixed: f64,
    pub dynamic: f64,
    /// Mean of `β̄_sel / β̄_all` over slots chosen by dynamic aggregation.
    pub selection_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrOrderingSummary {
    pub instances: Vec<SnrComparison>,
    /// Instances with `full ≤ fixed ≤ dynamic` (up to 1e-12).
    pub ordered: usize,
    /// Instances with `dynamic > fixed`.
    pub strict: usize,
}

const SNR_CLIENTS: usize = 10;
const SNR_NOISE: usize = 6;

/// A strategy comparison on prompts of the form
/// `β u_C + γ μ_c + Σ_l η_l ξ_l`.
///
/// Every group has a quality level (its specific-to-global energy ratio)
/// shared by all clients up to small jitter; levels are randomly permuted
/// over group indices. Clients differ in how their specific energy splits
/// between `μ_c` and the noise directions. Dynamic aggregation uses top-s
/// slotwise selection against a previous global slot along `u_C` and the
/// literal indicator-average.
pub fn snr_ordering_instance<R: Rng + ?Sized>(basis: &FeatureBasis, rng: &mut R) -> Result<SnrComparison> {
    let n = rng.random_range(3..=basis.n_clients().min(SNR_CLIENTS));
    let g = rng.random_range(6..=8usize);
    let s = rng.random_range(2..=3usize);
    let mut levels: Vec<usize> = (0..g).collect();
    rand::seq::SliceRandom::shuffle(levels.as_mut_slice(), rng);
    let ratio_of = |level: usize| 0.4 * 1.6f64.powi(level as i32);

    let mut sets = Vec::with_capacity(n);
    let mut betas = vec![vec![0.0; g]; n];
    for (c, beta_row) in betas.iter_mut().enumerate() {
        let theta: f64 = rng.random_range(0.2..1.3);
        let weights = linalg::normalized(&linalg::gaussian_vec(rng, basis.n_noise(), 1.0), "noise weights")?;
        let mut groups = Vec::with_capacity(g);
        for (j, beta) in beta_row.iter_mut().enumerate() {
            let jitter = |rng: &mut R| 1.0 + rng.random_range(-0.04..0.04);
            *beta = jitter(rng);
            let strength = ratio_of(levels[j]) * jitter(rng);
            let mut p = linalg::scaled(&basis.global_dir, *beta);
            axpy(&mut p, strength * theta.cos(), &basis.client_dirs[c]);
            for (w, xi) in weights.iter().zip(&basis.noise_dirs) {
                axpy(&mut p, strength * theta.sin() * w, xi);
            }
            groups.push(p);
        }
        sets.push(PromptGroupSet::new(groups.clone(), groups)?);
    }
    let refs: Vec<&PromptGroupSet> = sets.iter().collect();
    let counts = vec![1usize; n];
    let previous = vec![basis.global_dir.clone(); g];

    let full = aggregate_full(&refs, &counts, 1)?;
    let fixed = aggregate_fixed(&refs, &counts, s, 1)?;
    let mut selections = Vec::with_capacity(n);
    for set in &sets {
        let scores = group_similarity(&set.text, &previous, PairingMode::Slotwise, Modality::Text)?.per_group;
        let outcome = SelectionOutcome {
            modality: Modality::Text,
            probs: selection_distribution(&scores, 1.0)?,
            selected: top_s(&scores, s)?,
            scores: Some(scores),
            policy: SelectionPolicy::TopS,
        };
        let mut visual = outcome.clone();
        visual.modality = Modality::Visual;
        selections.push(ClientSelection { text: outcome, visual });
    }
    let sel_refs: Vec<&ClientSelection> = selections.iter().collect();
    let dynamic = aggregate_dynamic(&refs, &sel_refs, &counts, DynamicMode::SlotwiseLiteral, None, 1)?;

    let mut advantage = Vec::new();
    for j in 0..g {
        let chosen: Vec<f64> = (0..n).filter(|&c| selections[c].text.is_selected(j)).map(|c| betas[c][j]).collect();
        if !chosen.is_empty() {
            let all = betas.iter().map(|row| row[j]).sum::<f64>() / n as f64;
            advantage.push(chosen.iter().sum::<f64>() / chosen.len() as f64 / all);
        }
    }
    Ok(SnrComparison {
        n_clients: n,
        groups: g,
        s,
        full: snr(&full.text_slots, basis)?.min_snr,
        fixed: snr(&fixed.text_slots, basis)?.min_snr,
        dynamic: snr(&dynamic.text_slots, basis)?.min_snr,
        selection_advantage: advantage.iter().sum::<f64>() / advantage.len() as f64,
    })
}

pub fn snr_ordering_experiment<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> Result<SnrOrderingSummary> {
    let dim = 1 + SNR_CLIENTS + 1 + SNR_NOISE + 4;
    let basis = build_basis(dim, SNR_CLIENTS, SNR_NOISE, 0.3, rng)?;
    let mut out = Vec::with_capacity(instances);
    for _ in 0..instances {
        out.push(snr_ordering_instance(&basis, rng)?);
    }
    let ordered = out
        .iter()
        .filter(|r| r.full <= r.fixed + 1e-12 && r.fixed <= r.dynamic + 1e-12)
        .count();
    let strict = out.iter().filter(|r| r.dynamic > r.fixed).count();
    Ok(SnrOrderingSummary {
        instances: out,
        ordered,
        strict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub n_clients: usize,
    pub k: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScalingFit {
    pub points: Vec<NoisePoint>,
    pub slope: f64,
    pub intercept: f64,
}

fn unit_in_complement<R: Rng + ?Sized>(basis: &FeatureBasis, rng: &mut R) -> Result<Vec<f64>> {
    loop {
        let mut v = linalg::gaussian_vec(rng, basis.dim, 1.0);
        let c = dot(&v, &basis.global_dir);
        axpy(&mut v, -c, &basis.global_dir);
        if norm(&v) > 1e-6 {
            return linalg::normalized(&v, "specific direction");
        }
    }
}

/// Least-squares line through `(x, y)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateGrid("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Power of the specific component left after averaging `n·k` prompts whose
/// specific parts have fixed strength and uniformly random directions.
pub fn noise_scaling_experiment<R: Rng + ?Sized>(
    basis: &FeatureBasis,
    grid: &[(usize, usize)],
    repetitions: usize,
    strength: f64,
    rng: &mut R,
) -> Result<NoiseScalingFit> {
    let mut products: Vec<usize> = grid.iter().map(|(n, k)| n * k).collect();
    products.sort_unstable();
    products.dedup();
    if products.len() < 3 || products.contains(&0) {
        return Err(Error::DegenerateGrid(format!("{} distinct n·k values", products.len())));
    }
    if repetitions == 0 {
        return Err(Error::DegenerateGrid("no repetitions".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &(n, k) in grid {
        let m = n * k;
        let mut total = 0.0;
        for _ in 0..repetitions {
            let mut agg = vec![0.0; basis.dim];
            for _ in 0..m {
                let mut p = linalg::scaled(&basis.global_dir, 1.0);
                axpy(&mut p, strength, &unit_in_complement(basis, rng)?);
                axpy(&mut agg, 1.0 / m as f64, &p);
            }
            let (_, phi) = signal_noise(&agg, basis)?;
            total += phi;
        }
        points.push(NoisePoint {
            n_clients: n,
            k,
            power: total / repetitions as f64,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| ((p.n_clients * p.k) as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.power.ln()).collect();
    let (slope, intercept) = fit_line(&x, &y)?;
    Ok(NoiseScalingFit {
        points,
        slope,
        intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaParams {
    pub n_clients: usize,
    pub groups: usize,
    pub k: usize,
    pub rounds: usize,
    pub policy: SelectionPolicy,
    pub tau: f64,
}

/// `α_G` trajectory under pure aggregation (no local training).
///
/// Client `c` holds `G` prompts `c_{g,c} u_C + s_c e_{g,c}` with orthonormal
/// specific directions and one specific strength per client, so scores are
/// monotone in `c_{g,c}`. Each round clients pick `k` groups by cosine to
/// `u_C`, the server averages them, and the selected groups take the new
/// common coefficient while keeping their specific parts. Entry 0 is the
/// uniform mean of the initial coefficients.
pub fn alpha_trajectory<R: Rng + ?Sized>(p: &AlphaParams, rng: &mut R) -> Result<Vec<f64>> {
    if p.k == 0 || p.k > p.groups {
        return Err(Error::SelectionSize { s: p.k, groups: p.groups });
    }
    let dim = 1 + p.n_clients * p.groups;
    let unit = |i: usize| {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        e
    };
    let u_c = unit(0);
    let mut prompts: Vec<Vec<Vec<f64>>> = (0..p.n_clients)
        .map(|c| {
            let strength: f64 = rng.random_range(0.2..1.5);
            (0..p.groups)
                .map(|g| {
                    let mut v = linalg::scaled(&unit(1 + c * p.groups + g), strength);
                    v[0] = rng.random_range(0.0..1.0);
                    v
                })
                .collect()
        })
        .collect();
    let total: f64 = prompts.iter().flatten().map(|v| dot(v, &u_c)).sum();
    let mut alphas = vec![total / (p.n_clients * p.groups) as f64];
    for _ in 0..p.rounds {
        let mut agg = vec![0.0; dim];
        let mut chosen = Vec::with_capacity(p.n_clients);
        for groups in &prompts {
            let scores = group_similarity(groups, std::slice::from_ref(&u_c), PairingMode::SetSum, Modality::Text)?.per_group;
            let pick = match p.policy {
                SelectionPolicy::TopS => top_s(&scores, p.k)?,
                SelectionPolicy::Probabilistic => {
                    sample_without_replacement(&selection_distribution(&scores, p.tau)?, p.k, rng)?
                }
                other => {
                    return Err(Error::InvalidParameter(format!("{other:?} has no score-driven ranking")));
                }
            };
            for &j in &pick {
                axpy(&mut agg, 1.0 / (p.n_clients * p.k) as f64, &groups[j]);
            }
            chosen.push(pick);
        }
        let alpha = dot(&agg, &u_c);
        for (groups, pick) in prompts.iter_mut().zip(&chosen) {
            for &j in pick {
                groups[j][0] = alpha;
            }
        }
        alphas.push(alpha);
    }
    Ok(alphas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub round: usize,
    pub modality: Modality,
    pub group: usize,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFrequencyTable {
    pub rows: Vec<FrequencyRow>,
    /// `(modality, group)` pairs never selected in any round.
    pub never_selected: Vec<(Modality, usize)>,
}

pub fn selection_frequency_table(records: &[RoundRecord], groups: usize) -> SelectionFrequencyTable {
    let mut rows = Vec::new();
    let mut totals = [vec![0usize; groups], vec![0usize; groups]];
    for rec in records {
        let participants = rec.selections.len().max(1);
        for (mi, m) in [Modality::Text, Modality::Visual].into_iter().enumerate() {
            let mut counts = vec![0usize; groups];
            for sel in rec.selections.iter() {
                for &j in &sel.get(m).selected {
                    if j < groups {
                        counts[j] += 1;
                    }
                }
            }
            for (j, &count) in counts.iter().enumerate() {
                totals[mi][j] += count;
                rows.push(FrequencyRow {
                    round: rec.round,
                    modality: m,
                    group: j,
                    count,
                    fraction: count as f64 / participants as f64,
                });
            }
        }
    }
    let never_selected = [Modality::Text, Modality::Visual]
        .into_iter()
        .enumerate()
        .flat_map(|(mi, m)| {
            totals[mi]
                .iter()
                .enumerate()
                .filter(|(_, c)| **c == 0)
                .map(move |(j, _)| (m, j))
                .collect::<Vec<_>>()
        })
        .collect();
    SelectionFrequencyTable { rows, never_selected }
}

/// Symmetric cosine matrix with unit diagonal.
pub fn cosine_matrix(items: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if items.len() < 2 {
        return Err(Error::InvalidParameter("need at least two items".into()));
    }
    let n = items.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        linalg::normalized(&items[i], "similarity item")?;
        m[i][i] = 1.0;
        for j in i + 1..n {
            let c = cosine(&items[i], &items[j])?;
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                sum += v;
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// Group-vs-group cosines within one client, per modality.
pub fn intra_client_matrices(prompts: &PromptGroupSet) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    Ok((cosine_matrix(&prompts.text)?, cosine_matrix(&prompts.visual)?))
}

/// Client-vs-client cosines of the concatenated prompt groups, per modality.
pub fn inter_client_matrices(clients: &[PromptGroupSet]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let flat = |m: Modality| -> Vec<Vec<f64>> {
        clients
            .iter()
            .map(|c| match m {
                Modality::Text => c.text.concat(),
                Modality::Visual => c.visual.concat(),
            })
            .collect()
    };
    Ok((cosine_matrix(&flat(Modality::Text))?, cosine_matrix(&flat(Modality::Visual))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    /// Prompt scalars sent by one client per round.
    pub uplink_prompt: usize,
    /// Selected-index metadata sent alongside.
    pub uplink_metadata: usize,
    /// Scalars broadcast to one client per round.
    pub downlink: usize,
}

impl CommCost {
    pub fn uplink_total(&self) -> usize {
        self.uplink_prompt + self.uplink_metadata
    }
}

/// Per-client, per-round communication for a strategy. Zeroed fixed slots
/// and slots nobody contributed to are not broadcast under fixed/ordinal.
pub fn comm_cost(
    strategy: Strategy,
    mode: DynamicMode,
    groups: usize,
    s: usize,
    text_dim: usize,
    visual_dim: usize,
) -> CommCost {
    let width = text_dim + visual_dim;
    match strategy {
        Strategy::Full => CommCost {
            uplink_prompt: groups * width,
            uplink_metadata: 0,
            downlink: groups * width,
        },
        Strategy::Fixed => CommCost {
            uplink_prompt: s * width,
            uplink_metadata: 0,
            downlink: s * width,
        },
        Strategy::Dynamic => CommCost {
            uplink_prompt: s * width,
            // one selected index per shared group and modality
            uplink_metadata: 2 * s,
            downlink: match mode {
                DynamicMode::Ordinal => s * width,
                _ => groups * width,
            },
        },
    }
}
