//! Similarity-guided choice of which prompt groups a client shares.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::prompt_model::PromptGroupSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Visual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Visual => "visual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingMode {
    /// `S_j = Σ_i cos(p_j, P̃_i)` over all global slots.
    SetSum,
    /// `S_j = cos(p_j, P̃_j)`; needs one global slot per group.
    Slotwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    Probabilistic,
    TopS,
    Random,
    All,
    /// Always the first `s` groups (the fixed-subset baseline).
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub modality: Modality,
    pub per_group: Vec<f64>,
    pub pairing_mode: PairingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub modality: Modality,
    /// Absent when no global reference existed (first round).
    pub scores: Option<Vec<f64>>,
    pub probs: Vec<f64>,
    /// Distinct group indices in draw order.
    pub selected: Vec<usize>,
    pub policy: SelectionPolicy,
}

impl SelectionOutcome {
    /// Selected groups in the order used to match global slots: by
    /// descending score for score-driven policies (ties to the lower index),
    /// otherwise by group index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut r = self.selected.clone();
        match (&self.scores, self.policy) {
            (Some(sc), SelectionPolicy::Probabilistic | SelectionPolicy::TopS) => {
                r.sort_by(|a, b| sc[*b].total_cmp(&sc[*a]).then(a.cmp(b)));
            }
            _ => r.sort_unstable(),
        }
        r
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.selected.contains(&j)
    }
}

/// Both modalities' outcomes for one client in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSelection {
    pub text: SelectionOutcome,
    pub visual: SelectionOutcome,
}

impl ClientSelection {
    pub fn get(&self, m: Modality) -> &SelectionOutcome {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
        }
    }
}

pub fn group_similarity(
    local: &[Vec<f64>],
    global_slots: &[Vec<f64>],
    pairing_mode: PairingMode,
    modality: Modality,
) -> Result<SelectionScores> {
    if global_slots.is_empty() {
        return Err(Error::InvalidParameter("no global slots to compare against".into()));
    }
    let per_group = match pairing_mode {
        PairingMode::SetSum => local
            .iter()
            .map(|p| global_slots.iter().map(|g| cosine(p, g)).sum::<Result<f64>>())
            .collect::<Result<Vec<_>>>()?,
        PairingMode::Slotwise => {
            if global_slots.len() != local.len() {
                return Err(Error::Arity(format!(
                    "slotwise pairing needs {} global slots, got {}",
                    local.len(),
                    global_slots.len()
                )));
            }
            local
                .iter()
                .zip(global_slots)
                .map(|(p, g)| cosine(p, g))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SelectionScores {
        modality,
        per_group,
        pairing_mode,
    })
}

/// Softmax of `scores / tau`.
pub fn selection_distribution(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite selection score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

/// Sequential draws, each from the renormalized remaining mass.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    probs: &[f64],
    s: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let g = probs.len();
    if s == 0 || s > g {
        return Err(Error::SelectionSize { s, groups: g });
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidParameter("invalid probability vector".into()));
    }
    let mut remaining: Vec<bool> = vec![true; g];
    let mut out = Vec::with_capacity(s);
    for _ in 0..s {
        let mass: f64 = (0..g).filter(|&i| remaining[i]).map(|i| probs[i]).sum();
        let pick = if mass > 0.0 {
            let u = rng.random::<f64>() * mass;
            let mut acc = 0.0;
            let mut choice = None;
            for i in (0..g).filter(|&i| remaining[i]) {
                acc += probs[i];
                if u < acc {
                    choice = Some(i);
                    break;
                }
            }
            // Rounding can leave u just past the last bucket.
            choice.unwrap_or_else(|| (0..g).rev().find(|&i| remaining[i] && probs[i] > 0.0).unwrap())
        } else {
            // Only zero-mass groups left: uniform among them.
            let left: Vec<usize> = (0..g).filter(|&i| remaining[i]).collect();
            left[rng.random_range(0..left.len())]
        };
        remaining[pick] = false;
        out.push(pick);
    }
    Ok(out)
}

/// Indices of the `s` largest scores; ties go to the lower index.
pub fn top_s(scores: &[f64], s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > scores.len() {
        return Err(Error::SelectionSize {
            s,
            groups: scores.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    idx.truncate(s);
    Ok(idx)
}

/// Global reference slots per modality from the previous round.
#[derive(Debug, Clone, Copy)]
pub struct GlobalReference<'a> {
    pub text: &'a [Vec<f64>],
    pub visual: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub policy: SelectionPolicy,
    pub s: usize,
    pub tau: f64,
    pub pairing_mode: PairingMode,
    /// One index set shared by both modalities.
    pub coupled: bool,
}

fn outcome_for<R: Rng + ?Sized>(
    modality: Modality,
    scores: Option<Vec<f64>>,
    params: &SelectionParams,
    round: usize,
    g: usize,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    let s = params.s;
    if s == 0 || s > g {
        return Err(Error::SelectionSize { s, groups: g });
    }
    let uniform = vec![1.0 / g as f64; g];
    let probs = match &scores {
        Some(sc) => selection_distribution(sc, params.tau)?,
        None => uniform.clone(),
    };
    let first_round = round <= 1 || scores.is_none();
    let selected = match params.policy {
        SelectionPolicy::All => (0..g).collect(),
        SelectionPolicy::Prefix => (0..s).collect(),
        SelectionPolicy::Random => index::sample(rng, g, s).into_vec(),
        _ if first_round => index::sample(rng, g, s).into_vec(),
        SelectionPolicy::Probabilistic => sample_without_replacement(&probs, s, rng)?,
        SelectionPolicy::TopS => top_s(scores.as_deref().unwrap_or(&uniform), s)?,
    };
    let probs = match params.policy {
        SelectionPolicy::Probabilistic | SelectionPolicy::TopS if !first_round => probs,
        _ => uniform,
    };
    Ok(SelectionOutcome {
        modality,
        scores,
        probs,
        selected,
        policy: params.policy,
    })
}

/// Chooses the groups each modality shares this round. Rounds are 1-based;
/// round 1 (or a missing reference) falls back to a uniform random subset.
pub fn select_groups<R: Rng + ?Sized>(
    local: &PromptGroupSet,
    global: Option<GlobalReference<'_>>,
    params: &SelectionParams,
    round: usize,
    rng: &mut R,
) -> Result<ClientSelection> {
    if round == 0 {
        return Err(Error::InvalidParameter("rounds are numbered from 1".into()));
    }
    let g = local.n_groups();
    let needs_scores = matches!(params.policy, SelectionPolicy::Probabilistic | SelectionPolicy::TopS);
    let (ts, vs) = match global {
        Some(r) if round > 1 && needs_scores => (
            Some(group_similarity(&local.text, r.text, params.pairing_mode, Modality::Text)?.per_group),
            Some(group_similarity(&local.visual, r.visual, params.pairing_mode, Modality::Visual)?.per_group),
        ),
        _ => (None, None),
    };
    if params.coupled {
        let joint = match (&ts, &vs) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()),
            _ => None,
        };
        let shared = outcome_for(Modality::Text, joint, params, round, g, rng)?;
        let mut text = shared.clone();
        let mut visual = shared;
        visual.modality = Modality::Visual;
        text.scores = ts.or(text.scores);
        visual.scores = vs.or(visual.scores);
        return Ok(ClientSelection { text, visual });
    }
    Ok(ClientSelection {
        text: outcome_for(Modality::Text, ts, params, round, g, rng)?,
        visual: outcome_for(Modality::Visual, vs, params, round, g, rng)?,
    })
}
