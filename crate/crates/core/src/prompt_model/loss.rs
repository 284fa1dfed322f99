use serde::{Deserialize, Serialize};

use super::{softmax_in_place, FrozenEncoders, PromptGroupSet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::synth_data::Sample;

/// Pairwise feature penalty between prompt groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiversityForm {
    /// Mean pairwise cosine similarity (minimized).
    Cos,
    /// The literal `Σ (1 − cos)` sum.
    CosLiteral,
    /// Negative mean pairwise L1 distance.
    L1,
    /// Negative mean pairwise squared L2 distance.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub div: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, div: f64, lambda: f64) -> Self {
        Self {
            ce,
            div,
            total: ce + lambda * div,
            lambda,
        }
    }
}

/// Gradients with respect to every text and visual prompt vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGradient {
    pub text: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
}

/// Pre-normalization vectors and unit features for one batch.
struct Forward {
    /// `[group][candidate]`
    text_raw: Vec<Vec<Vec<f64>>>,
    text_unit: Vec<Vec<Vec<f64>>>,
    /// `[sample][group]`
    image_raw: Vec<Vec<Vec<f64>>>,
    image_unit: Vec<Vec<Vec<f64>>>,
    label_pos: Vec<usize>,
}

fn forward(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    prompts.check_against(enc)?;
    for &k in candidates {
        enc.check_class(k)?;
    }
    let label_pos = batch
        .iter()
        .map(|s| {
            candidates
                .iter()
                .position(|&k| k == s.y)
                .ok_or_else(|| Error::InvalidParameter(format!("label {} not a candidate", s.y)))
        })
        .collect::<Result<Vec<_>>>()?;

    let unit = |raw: &Vec<f64>, what: &'static str| -> Result<Vec<f64>> {
        let n = norm(raw);
        if n < crate::linalg::ZERO_NORM {
            return Err(Error::ZeroNorm { context: what });
        }
        Ok(raw.iter().map(|v| v / n).collect())
    };

    let mut text_raw = Vec::with_capacity(prompts.n_groups());
    let mut text_unit = Vec::with_capacity(prompts.n_groups());
    for p_t in &prompts.text {
        let shift = enc.text_prompt_map().mul_vec(p_t);
        let raws: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&k| {
                let mut z = shift.clone();
                axpy(&mut z, 1.0, enc.text_base(k));
                z
            })
            .collect();
        text_unit.push(raws.iter().map(|z| unit(z, "text feature")).collect::<Result<_>>()?);
        text_raw.push(raws);
    }
    let visual_shift: Vec<Vec<f64>> = prompts
        .visual
        .iter()
        .map(|p| enc.image_prompt_map().mul_vec(p))
        .collect();
    let mut image_raw = Vec::with_capacity(batch.len());
    let mut image_unit = Vec::with_capacity(batch.len());
    for s in batch {
        crate::linalg::check_len(&s.x, enc.input_dim())?;
        let base = enc.image_map.mul_vec(&s.x);
        let raws: Vec<Vec<f64>> = visual_shift
            .iter()
            .map(|shift| {
                let mut y = base.clone();
                axpy(&mut y, 1.0, shift);
                y
            })
            .collect();
        image_unit.push(raws.iter().map(|y| unit(y, "image feature")).collect::<Result<_>>()?);
        image_raw.push(raws);
    }
    Ok(Forward {
        text_raw,
        text_unit,
        image_raw,
        image_unit,
        label_pos,
    })
}

/// Accumulates CE and its feature-space gradients.
fn ce_terms(
    fw: &Forward,
    temperature: f64,
    mut grads: Option<(&mut [Vec<Vec<f64>>], &mut [Vec<Vec<f64>>])>,
) -> f64 {
    let groups = fw.text_unit.len();
    let b = fw.image_unit.len();
    let scale = 1.0 / (groups * b) as f64;
    let mut loss = 0.0;
    for (i, feats) in fw.image_unit.iter().enumerate() {
        for (j, f) in feats.iter().enumerate() {
            let texts = &fw.text_unit[j];
            let mut probs: Vec<f64> = texts.iter().map(|g| dot(f, g) / temperature).collect();
            softmax_in_place(&mut probs);
            let y = fw.label_pos[i];
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
            if let Some((dtext, dimage)) = grads.as_mut() {
                for (k, g) in texts.iter().enumerate() {
                    let coef = (probs[k] - f64::from(u8::from(k == y))) * scale / temperature;
                    axpy(&mut dimage[i][j], coef, g);
                    axpy(&mut dtext[j][k], coef, f);
                }
            }
        }
    }
    loss * scale
}

/// Diversity value and (optionally) its feature-space gradients.
fn diversity_terms(
    fw: &Forward,
    form: DiversityForm,
    mut grads: Option<(&mut [Vec<Vec<f64>>], &mut [Vec<Vec<f64>>], f64)>,
) -> f64 {
    let groups = fw.text_unit.len();
    if groups < 2 {
        return 0.0;
    }
    let b = fw.image_unit.len() as f64;
    let pair_scale = match form {
        DiversityForm::CosLiteral => 1.0,
        _ => 1.0 / (groups * (groups - 1)) as f64,
    };

    // value and d/da of the per-pair penalty between features a and b
    let pair = |a: &[f64], other: &[f64]| -> (f64, Vec<f64>) {
        match form {
            DiversityForm::Cos => (dot(a, other), other.to_vec()),
            DiversityForm::CosLiteral => (1.0 - dot(a, other), other.iter().map(|v| -v).collect()),
            DiversityForm::L2 => {
                let diff: Vec<f64> = a.iter().zip(other).map(|(x, y)| x - y).collect();
                (-dot(&diff, &diff), diff.iter().map(|d| -2.0 * d).collect())
            }
            DiversityForm::L1 => {
                let mut v = 0.0;
                let g = a
                    .iter()
                    .zip(other)
                    .map(|(x, y)| {
                        let d = x - y;
                        v -= d.abs();
                        -sign(d)
                    })
                    .collect();
                (v, g)
            }
        }
    };

    let mut value = 0.0;
    let n_candidates = fw.text_unit[0].len();
    for j in 0..groups {
        for jp in 0..groups {
            if j == jp {
                continue;
            }
            for k in 0..n_candidates {
                let (v, g) = pair(&fw.text_unit[j][k], &fw.text_unit[jp][k]);
                value += pair_scale * v;
                if let Some((dtext, _, lambda)) = grads.as_mut() {
                    // The ordered pair (j', j) contributes the mirrored gradient.
                    axpy(&mut dtext[j][k], 2.0 * pair_scale * *lambda, &g);
                }
            }
            for i in 0..fw.image_unit.len() {
                let (v, g) = pair(&fw.image_unit[i][j], &fw.image_unit[i][jp]);
                value += pair_scale * v / b;
                if let Some((_, dimage, lambda)) = grads.as_mut() {
                    axpy(&mut dimage[i][j], 2.0 * pair_scale * *lambda / b, &g);
                }
            }
        }
    }
    value
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cross-entropy averaged over groups and the batch.
pub fn ce_loss(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
) -> Result<f64> {
    let fw = forward(enc, prompts, batch, candidates)?;
    Ok(ce_terms(&fw, enc.model_temperature, None))
}

pub fn diversity_loss(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
    form: DiversityForm,
) -> Result<f64> {
    if prompts.n_groups() < 2 {
        return Ok(0.0);
    }
    let fw = forward(enc, prompts, batch, candidates)?;
    Ok(diversity_terms(&fw, form, None))
}

/// Total loss `CE + λ·div` with analytic gradients for all `2G` prompts.
pub fn loss_and_gradient(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
    lambda: f64,
    form: DiversityForm,
) -> Result<(LossBreakdown, PromptGradient)> {
    let fw = forward(enc, prompts, batch, candidates)?;
    let groups = prompts.n_groups();
    let df = enc.feature_dim();
    let mut dtext = vec![vec![vec![0.0; df]; candidates.len()]; groups];
    let mut dimage = vec![vec![vec![0.0; df]; groups]; batch.len()];

    let ce = ce_terms(&fw, enc.model_temperature, Some((&mut dtext, &mut dimage)));
    let div = if lambda != 0.0 {
        diversity_terms(&fw, form, Some((&mut dtext, &mut dimage, lambda)))
    } else {
        diversity_terms(&fw, form, None)
    };

    // Back through normalization: d/dz (z/‖z‖) = (I − u uᵀ)/‖z‖.
    let through_norm = |grad: &[f64], unit: &[f64], raw: &[f64]| -> Vec<f64> {
        let n = norm(raw);
        let c = dot(grad, unit);
        grad.iter().zip(unit).map(|(g, u)| (g - c * u) / n).collect()
    };

    let mut text = Vec::with_capacity(groups);
    for j in 0..groups {
        let mut dz_sum = vec![0.0; df];
        for k in 0..candidates.len() {
            let dz = through_norm(&dtext[j][k], &fw.text_unit[j][k], &fw.text_raw[j][k]);
            axpy(&mut dz_sum, 1.0, &dz);
        }
        text.push(enc.text_prompt_map().tmul_vec(&dz_sum));
    }
    let mut visual = Vec::with_capacity(groups);
    for j in 0..groups {
        let mut dy_sum = vec![0.0; df];
        for i in 0..batch.len() {
            let dy = through_norm(&dimage[i][j], &fw.image_unit[i][j], &fw.image_raw[i][j]);
            axpy(&mut dy_sum, 1.0, &dy);
        }
        visual.push(enc.image_prompt_map().tmul_vec(&dy_sum));
    }

    Ok((LossBreakdown::new(ce, div, lambda), PromptGradient { text, visual }))
}
