use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_encoders, loss_and_gradient, DiversityForm, EncoderSpec, FrozenEncoders, PromptGradient, PromptGroupSet};
use crate::error::Result;
use crate::feature_space::build_basis;
use crate::linalg::{norm, sub};
use crate::synth_data::{build_task, draw_sample, Sample, SampleModel};

/// Central-difference gradient of the total loss.
pub fn finite_difference_gradient(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
    lambda: f64,
    form: DiversityForm,
    h: f64,
) -> Result<PromptGradient> {
    let total = |p: &PromptGroupSet| -> Result<f64> { Ok(loss_and_gradient(enc, p, batch, candidates, lambda, form)?.0.total) };
    let mut out = PromptGradient {
        text: prompts.text.iter().map(|p| vec![0.0; p.len()]).collect(),
        visual: prompts.visual.iter().map(|p| vec![0.0; p.len()]).collect(),
    };
    for j in 0..prompts.n_groups() {
        for i in 0..prompts.text[j].len() {
            let (mut a, mut b) = (prompts.clone(), prompts.clone());
            a.text[j][i] += h;
            b.text[j][i] -= h;
            out.text[j][i] = (total(&a)? - total(&b)?) / (2.0 * h);
        }
        for i in 0..prompts.visual[j].len() {
            let (mut a, mut b) = (prompts.clone(), prompts.clone());
            a.visual[j][i] += h;
            b.visual[j][i] -= h;
            out.visual[j][i] = (total(&a)? - total(&b)?) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `‖analytic − numeric‖ / max(‖numeric‖, 1e-8)`.
pub fn gradient_relative_error(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    batch: &[Sample],
    candidates: &[usize],
    lambda: f64,
    form: DiversityForm,
) -> Result<f64> {
    let (_, analytic) = loss_and_gradient(enc, prompts, batch, candidates, lambda, form)?;
    let numeric = finite_difference_gradient(enc, prompts, batch, candidates, lambda, form, 1e-5)?;
    let flat = |g: &PromptGradient| -> Vec<f64> { g.text.iter().chain(&g.visual).flatten().copied().collect() };
    let (a, n) = (flat(&analytic), flat(&numeric));
    Ok(norm(&sub(&a, &n)) / norm(&n).max(1e-8))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCase {
    pub form: DiversityForm,
    pub lambda: f64,
    pub groups: usize,
    pub rel_error: f64,
}

/// Gradient checks over every diversity form and `λ ∈ {0, 1, 5}`, plus
/// `extra` further random configurations, each on a fresh small world.
pub fn gradient_check_suite<R: Rng + ?Sized>(extra: usize, rng: &mut R) -> Result<Vec<GradientCase>> {
    let forms = [DiversityForm::Cos, DiversityForm::CosLiteral, DiversityForm::L1, DiversityForm::L2];
    let mut cases: Vec<(DiversityForm, f64)> = forms
        .iter()
        .flat_map(|f| [0.0, 1.0, 5.0].map(|l| (*f, l)))
        .collect();
    for _ in 0..extra {
        cases.push((forms[rng.random_range(0..forms.len())], rng.random_range(0.0..5.0)));
    }
    let mut out = Vec::with_capacity(cases.len());
    for (form, lambda) in cases {
        let k = rng.random_range(2..5usize);
        let groups = rng.random_range(1..5usize);
        let basis = build_basis(8 + k, 2, 2, 0.3, rng)?;
        let task = build_task(k, &basis, rng)?;
        let spec = EncoderSpec {
            feature_dim: basis.dim + 2,
            text_prompt_dim: rng.random_range(2..6),
            visual_prompt_dim: rng.random_range(2..6),
            temperature: [0.07, 0.5, 1.0][rng.random_range(0..3)],
            inject_scale: 1.0,
            embed_bias: 0.5,
        };
        let enc = build_encoders(&spec, &task, &basis, rng)?;
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 0.6,
            noise_sigma: 0.3,
        };
        let classes: Vec<usize> = (0..k).collect();
        let batch: Vec<Sample> = classes
            .iter()
            .map(|&c| draw_sample(&task, &basis, c, Some(0), model, rng))
            .collect();
        let prompts = PromptGroupSet::gaussian(groups, spec.text_prompt_dim, spec.visual_prompt_dim, 0.4, rng)?;
        out.push(GradientCase {
            form,
            lambda,
            groups,
            rel_error: gradient_relative_error(&enc, &prompts, &batch, &classes, lambda, form)?,
        });
    }
    Ok(out)
}
