//! Server-side aggregation of client prompt groups and write-back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::prompt_model::PromptGroupSet;
use crate::selection::{ClientSelection, Modality, SelectionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Full,
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynamicMode {
    /// Slot `i` averages each client's `i`-th ranked selection.
    Ordinal,
    /// Slot `j` is `Σ_c w_c 𝕀(j ∈ S_c) P_{j,c}`; unselected entries count as zero.
    SlotwiseLiteral,
    /// As literal but divided by the selecting clients' weight; empty slots
    /// carry the previous value forward.
    SlotwiseRenormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPromptState {
    pub round: usize,
    pub strategy: Strategy,
    pub mode: Option<DynamicMode>,
    pub text_slots: Vec<Vec<f64>>,
    pub visual_slots: Vec<Vec<f64>>,
    /// Total client weight that contributed to each slot.
    pub text_weights: Vec<f64>,
    pub visual_weights: Vec<f64>,
    /// Number of clients that contributed to each slot.
    pub text_counts: Vec<usize>,
    pub visual_counts: Vec<usize>,
}

impl GlobalPromptState {
    /// Round-0 state seeded from an initial prompt set.
    pub fn initial(prompts: &PromptGroupSet, strategy: Strategy, mode: Option<DynamicMode>) -> Self {
        let g = prompts.n_groups();
        Self {
            round: 0,
            strategy,
            mode,
            text_slots: prompts.text.clone(),
            visual_slots: prompts.visual.clone(),
            text_weights: vec![1.0; g],
            visual_weights: vec![1.0; g],
            text_counts: vec![0; g],
            visual_counts: vec![0; g],
        }
    }

    pub fn slots(&self, m: Modality) -> &[Vec<f64>] {
        match m {
            Modality::Text => &self.text_slots,
            Modality::Visual => &self.visual_slots,
        }
    }

    pub fn counts(&self, m: Modality) -> &[usize] {
        match m {
            Modality::Text => &self.text_counts,
            Modality::Visual => &self.visual_counts,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.text_slots.len()
    }

    fn is_ordinal(&self) -> bool {
        self.strategy == Strategy::Dynamic && self.mode == Some(DynamicMode::Ordinal)
    }
}

/// `w_c = n_c / Σ n`.
pub fn client_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyClientSet);
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter("all client sample counts are zero".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

fn check_sets(sets: &[&PromptGroupSet], counts: &[usize]) -> Result<usize> {
    if sets.is_empty() {
        return Err(Error::EmptyClientSet);
    }
    if sets.len() != counts.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            actual: counts.len(),
        });
    }
    let g = sets[0].n_groups();
    let (td, vd) = (sets[0].text[0].len(), sets[0].visual[0].len());
    for s in sets {
        let same = s.n_groups() == g
            && s.text.iter().all(|p| p.len() == td)
            && s.visual.iter().all(|p| p.len() == vd);
        if !same {
            return Err(Error::ShapeMismatch("client prompt sets differ in shape".into()));
        }
    }
    Ok(g)
}

fn groups_of(set: &PromptGroupSet, m: Modality) -> &[Vec<f64>] {
    match m {
        Modality::Text => &set.text,
        Modality::Visual => &set.visual,
    }
}

struct ModalitySlots {
    slots: Vec<Vec<f64>>,
    weights: Vec<f64>,
    counts: Vec<usize>,
}

fn prefix_average(sets: &[&PromptGroupSet], w: &[f64], m: Modality, active: usize) -> ModalitySlots {
    let g = sets[0].n_groups();
    let dim = groups_of(sets[0], m)[0].len();
    let mut slots = vec![vec![0.0; dim]; g];
    for (set, wc) in sets.iter().zip(w) {
        for (slot, p) in slots.iter_mut().zip(groups_of(set, m)).take(active) {
            axpy(slot, *wc, p);
        }
    }
    ModalitySlots {
        slots,
        weights: (0..g).map(|j| if j < active { 1.0 } else { 0.0 }).collect(),
        counts: (0..g).map(|j| if j < active { sets.len() } else { 0 }).collect(),
    }
}

fn assemble(round: usize, strategy: Strategy, mode: Option<DynamicMode>, t: ModalitySlots, v: ModalitySlots) -> GlobalPromptState {
    GlobalPromptState {
        round,
        strategy,
        mode,
        text_slots: t.slots,
        visual_slots: v.slots,
        text_weights: t.weights,
        visual_weights: v.weights,
        text_counts: t.counts,
        visual_counts: v.counts,
    }
}

/// Every group of every client, weighted by sample count.
pub fn aggregate_full(sets: &[&PromptGroupSet], counts: &[usize], round: usize) -> Result<GlobalPromptState> {
    let g = check_sets(sets, counts)?;
    let w = client_weights(counts)?;
    Ok(assemble(
        round,
        Strategy::Full,
        None,
        prefix_average(sets, &w, Modality::Text, g),
        prefix_average(sets, &w, Modality::Visual, g),
    ))
}

/// The first `s` groups are shared; the remaining slots are zero.
pub fn aggregate_fixed(sets: &[&PromptGroupSet], counts: &[usize], s: usize, round: usize) -> Result<GlobalPromptState> {
    let g = check_sets(sets, counts)?;
    if s == 0 || s > g {
        return Err(Error::SelectionSize { s, groups: g });
    }
    let w = client_weights(counts)?;
    Ok(assemble(
        round,
        Strategy::Fixed,
        None,
        prefix_average(sets, &w, Modality::Text, s),
        prefix_average(sets, &w, Modality::Visual, s),
    ))
}

fn dynamic_modality(
    sets: &[&PromptGroupSet],
    sels: &[&SelectionOutcome],
    w: &[f64],
    m: Modality,
    mode: DynamicMode,
    previous: Option<&GlobalPromptState>,
) -> Result<ModalitySlots> {
    let g = sets[0].n_groups();
    let dim = groups_of(sets[0], m)[0].len();
    let s = sels[0].selected.len();
    for sel in sels {
        if sel.selected.is_empty() || sel.selected.len() != s {
            return Err(Error::InconsistentSelection(format!(
                "{} selections of sizes {} and {}",
                m.as_str(),
                s,
                sel.selected.len()
            )));
        }
        if sel.selected.iter().any(|&j| j >= g) {
            return Err(Error::InconsistentSelection("selected group out of range".into()));
        }
    }
    match mode {
        DynamicMode::Ordinal => {
            let mut slots = vec![vec![0.0; dim]; s];
            for ((set, sel), wc) in sets.iter().zip(sels).zip(w) {
                for (slot, j) in slots.iter_mut().zip(sel.ranked()) {
                    axpy(slot, *wc, &groups_of(set, m)[j]);
                }
            }
            Ok(ModalitySlots {
                slots,
                weights: vec![1.0; s],
                counts: vec![sets.len(); s],
            })
        }
        DynamicMode::SlotwiseLiteral | DynamicMode::SlotwiseRenormalized => {
            let mut slots = vec![vec![0.0; dim]; g];
            let mut weights = vec![0.0; g];
            let mut counts = vec![0usize; g];
            for ((set, sel), wc) in sets.iter().zip(sels).zip(w) {
                for &j in &sel.selected {
                    axpy(&mut slots[j], *wc, &groups_of(set, m)[j]);
                    weights[j] += wc;
                    counts[j] += 1;
                }
            }
            if mode == DynamicMode::SlotwiseRenormalized {
                for j in 0..g {
                    if counts[j] > 0 {
                        slots[j].iter_mut().for_each(|v| *v /= weights[j]);
                        weights[j] = 1.0;
                    } else if let Some(prev) = previous {
                        let carried = prev.slots(m);
                        if carried.len() != g {
                            return Err(Error::Arity(format!(
                                "cannot carry forward {} slots into {g}",
                                carried.len()
                            )));
                        }
                        slots[j] = carried[j].clone();
                    }
                }
            }
            Ok(ModalitySlots { slots, weights, counts })
        }
    }
}

/// Aggregates only the groups each client selected.
pub fn aggregate_dynamic(
    sets: &[&PromptGroupSet],
    selections: &[&ClientSelection],
    counts: &[usize],
    mode: DynamicMode,
    previous: Option<&GlobalPromptState>,
    round: usize,
) -> Result<GlobalPromptState> {
    check_sets(sets, counts)?;
    if selections.len() != sets.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            actual: selections.len(),
        });
    }
    let w = client_weights(counts)?;
    let text: Vec<&SelectionOutcome> = selections.iter().map(|s| &s.text).collect();
    let visual: Vec<&SelectionOutcome> = selections.iter().map(|s| &s.visual).collect();
    Ok(assemble(
        round,
        Strategy::Dynamic,
        Some(mode),
        dynamic_modality(sets, &text, &w, Modality::Text, mode, previous)?,
        dynamic_modality(sets, &visual, &w, Modality::Visual, mode, previous)?,
    ))
}

fn writeback_modality(
    groups: &mut [Vec<f64>],
    global: &GlobalPromptState,
    sel: &SelectionOutcome,
    m: Modality,
) -> Result<()> {
    let slots = global.slots(m);
    if sel.selected.is_empty() {
        return Err(Error::Arity("empty selection".into()));
    }
    if global.is_ordinal() {
        let ranked = sel.ranked();
        if ranked.len() != slots.len() {
            return Err(Error::Arity(format!(
                "{} ranked selections for {} ordinal slots",
                ranked.len(),
                slots.len()
            )));
        }
        for (slot, j) in slots.iter().zip(ranked) {
            let target = groups.get_mut(j).ok_or(Error::IndexOutOfRange { index: j, len: slots.len() })?;
            target.clone_from(slot);
        }
    } else {
        if slots.len() != groups.len() {
            return Err(Error::Arity(format!("{} slots for {} groups", slots.len(), groups.len())));
        }
        let counts = global.counts(m);
        for &j in &sel.selected {
            if j >= groups.len() {
                return Err(Error::IndexOutOfRange { index: j, len: groups.len() });
            }
            if counts[j] == 0 {
                return Err(Error::InconsistentSelection(format!(
                    "{} slot {j} received no contributions",
                    m.as_str()
                )));
            }
            groups[j].clone_from(&slots[j]);
        }
    }
    Ok(())
}

/// Overwrites the client's selected groups with their global counterparts.
pub fn writeback(prompts: &PromptGroupSet, global: &GlobalPromptState, selection: &ClientSelection) -> Result<PromptGroupSet> {
    let mut out = prompts.clone();
    writeback_modality(&mut out.text, global, &selection.text, Modality::Text)?;
    writeback_modality(&mut out.visual, global, &selection.visual, Modality::Visual)?;
    Ok(out)
}
