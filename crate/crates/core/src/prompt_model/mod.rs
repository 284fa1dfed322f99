//! Frozen synthetic two-tower encoder with additive multi-group prompts.
//!
//! Text side: `g(t_{k,j}) = normalize(W_g (e_k + U p_{t,j}))`.
//! Image side: `f(v_j) = normalize(W_f (x + V p_{v,j}))`.
//! Group `j` scores class `k` by `⟨f(v_j), g(t_{k,j})⟩ / τ_m`.

mod gradcheck;
mod inference;
mod loss;
mod train;

pub use gradcheck::{finite_difference_gradient, gradient_check_suite, gradient_relative_error, GradientCase};
pub use inference::{ensemble_predict, InferenceStrategy, Predictor};
pub use loss::{
    ce_loss, diversity_loss, loss_and_gradient, DiversityForm, LossBreakdown, PromptGradient,
};
pub use train::{local_update, LocalUpdateOutcome, TrainParams};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::FeatureBasis;
use crate::linalg::{self, check_len, Matrix};
use crate::synth_data::SyntheticTask;

/// Construction parameters for the frozen encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    /// Output feature width `d_f` (must be ≥ the input dimension).
    pub feature_dim: usize,
    pub text_prompt_dim: usize,
    pub visual_prompt_dim: usize,
    /// Model temperature `τ_m`.
    pub temperature: f64,
    /// Column scale of the prompt injection maps `U` and `V`.
    pub inject_scale: f64,
    /// Strength of the class-embedding components that leak into the
    /// global/client/noise subspaces.
    pub embed_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEncoders {
    pub text_map: Matrix,
    pub image_map: Matrix,
    pub text_prompt_inject: Matrix,
    pub visual_prompt_inject: Matrix,
    pub class_embeddings: Vec<Vec<f64>>,
    pub model_temperature: f64,
    // Products cached at construction; the encoder never changes afterwards.
    #[serde(skip)]
    cache: EncoderCache,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct EncoderCache {
    text_base: Vec<Vec<f64>>,
    text_prompt_map: Option<Matrix>,
    image_prompt_map: Option<Matrix>,
}

impl FrozenEncoders {
    pub fn new(
        text_map: Matrix,
        image_map: Matrix,
        text_prompt_inject: Matrix,
        visual_prompt_inject: Matrix,
        class_embeddings: Vec<Vec<f64>>,
        model_temperature: f64,
    ) -> Result<Self> {
        if !(model_temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(model_temperature));
        }
        let d = text_map.cols;
        let shapes_ok = image_map.cols == d
            && image_map.rows == text_map.rows
            && text_prompt_inject.rows == d
            && visual_prompt_inject.rows == d
            && class_embeddings.iter().all(|e| e.len() == d);
        if !shapes_ok {
            return Err(Error::ShapeMismatch("encoder matrices".into()));
        }
        let mut enc = Self {
            text_map,
            image_map,
            text_prompt_inject,
            visual_prompt_inject,
            class_embeddings,
            model_temperature,
            cache: EncoderCache::default(),
        };
        enc.rebuild_cache();
        Ok(enc)
    }

    fn rebuild_cache(&mut self) {
        self.cache = EncoderCache {
            text_base: self
                .class_embeddings
                .iter()
                .map(|e| self.text_map.mul_vec(e))
                .collect(),
            text_prompt_map: Some(self.text_map.matmul(&self.text_prompt_inject)),
            image_prompt_map: Some(self.image_map.matmul(&self.visual_prompt_inject)),
        };
    }

    pub fn input_dim(&self) -> usize {
        self.text_map.cols
    }

    pub fn feature_dim(&self) -> usize {
        self.text_map.rows
    }

    pub fn n_classes(&self) -> usize {
        self.class_embeddings.len()
    }

    pub fn text_prompt_dim(&self) -> usize {
        self.text_prompt_inject.cols
    }

    pub fn visual_prompt_dim(&self) -> usize {
        self.visual_prompt_inject.cols
    }

    /// `W_g U`
    pub(crate) fn text_prompt_map(&self) -> &Matrix {
        self.cache.text_prompt_map.as_ref().expect("encoder cache built")
    }

    /// `W_f V`
    pub(crate) fn image_prompt_map(&self) -> &Matrix {
        self.cache.image_prompt_map.as_ref().expect("encoder cache built")
    }

    /// `W_g e_k`
    pub(crate) fn text_base(&self, class: usize) -> &[f64] {
        &self.cache.text_base[class]
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.n_classes() {
            return Err(Error::IndexOutOfRange {
                index: class,
                len: self.n_classes(),
            });
        }
        Ok(())
    }

    /// Restores cached products after deserialization.
    pub fn rehydrate(mut self) -> Self {
        self.rebuild_cache();
        self
    }
}

pub fn build_encoders<R: Rng + ?Sized>(
    spec: &EncoderSpec,
    task: &SyntheticTask,
    basis: &FeatureBasis,
    rng: &mut R,
) -> Result<FrozenEncoders> {
    let d = basis.dim;
    if spec.feature_dim < d {
        return Err(Error::InvalidParameter(format!(
            "feature_dim {} must be at least the input dimension {d}",
            spec.feature_dim
        )));
    }
    if spec.text_prompt_dim == 0 || spec.visual_prompt_dim == 0 {
        return Err(Error::InvalidParameter("prompt widths must be positive".into()));
    }
    // Both towers share one isometric projection, as in an aligned
    // contrastive embedding space.
    let shared = Matrix::random_isometry(spec.feature_dim, d, rng)?;
    let u = Matrix::gaussian(
        d,
        spec.text_prompt_dim,
        spec.inject_scale / (spec.text_prompt_dim as f64).sqrt(),
        rng,
    );
    let v = Matrix::gaussian(
        d,
        spec.visual_prompt_dim,
        spec.inject_scale / (spec.visual_prompt_dim as f64).sqrt(),
        rng,
    );
    let frame = basis.frame();
    let leak_std = spec.embed_bias / (frame.len() as f64).sqrt();
    let class_embeddings = task
        .class_dirs
        .iter()
        .map(|q| {
            let mut e = q.clone();
            for dir in &frame {
                let c = leak_std * rng.sample::<f64, _>(rand_distr::StandardNormal);
                linalg::axpy(&mut e, c, dir);
            }
            e
        })
        .collect();
    FrozenEncoders::new(shared.clone(), shared, u, v, class_embeddings, spec.temperature)
}

/// A client's `G` paired text/visual prompt vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroupSet {
    pub text: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
}

impl PromptGroupSet {
    pub fn new(text: Vec<Vec<f64>>, visual: Vec<Vec<f64>>) -> Result<Self> {
        if text.is_empty() || text.len() != visual.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} text vs {} visual groups",
                text.len(),
                visual.len()
            )));
        }
        let all_finite = text.iter().chain(&visual).flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter("non-finite prompt entry".into()));
        }
        Ok(Self { text, visual })
    }

    pub fn gaussian<R: Rng + ?Sized>(
        groups: usize,
        text_dim: usize,
        visual_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let text = (0..groups)
            .map(|_| linalg::gaussian_vec(rng, text_dim, std))
            .collect();
        let visual = (0..groups)
            .map(|_| linalg::gaussian_vec(rng, visual_dim, std))
            .collect();
        Self::new(text, visual)
    }

    pub fn n_groups(&self) -> usize {
        self.text.len()
    }

    /// Trainable scalars: `G · (d_pt + d_pv)`.
    pub fn param_count(&self) -> usize {
        self.text.iter().chain(&self.visual).map(Vec::len).sum()
    }

    pub(crate) fn check_group(&self, j: usize) -> Result<()> {
        if j >= self.n_groups() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.n_groups(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, enc: &FrozenEncoders) -> Result<()> {
        for p in &self.text {
            check_len(p, enc.text_prompt_dim())?;
        }
        for p in &self.visual {
            check_len(p, enc.visual_prompt_dim())?;
        }
        Ok(())
    }
}

/// `normalize(W_g (e_k + U p_t))`
pub fn text_feature(enc: &FrozenEncoders, class_id: usize, p_t: &[f64]) -> Result<Vec<f64>> {
    enc.check_class(class_id)?;
    check_len(p_t, enc.text_prompt_dim())?;
    let mut z = enc.text_prompt_map().mul_vec(p_t);
    linalg::axpy(&mut z, 1.0, enc.text_base(class_id));
    linalg::normalized(&z, "text feature")
}

/// `normalize(W_f (x + V p_v))`
pub fn image_feature(enc: &FrozenEncoders, x: &[f64], p_v: &[f64]) -> Result<Vec<f64>> {
    check_len(x, enc.input_dim())?;
    check_len(p_v, enc.visual_prompt_dim())?;
    let mut y = enc.image_map.mul_vec(x);
    linalg::axpy(&mut y, 1.0, &enc.image_prompt_map().mul_vec(p_v));
    linalg::normalized(&y, "image feature")
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Softmax probabilities of group `j` over `candidates`.
pub fn group_class_probs(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    j: usize,
    x: &[f64],
    candidates: &[usize],
) -> Result<Vec<f64>> {
    prompts.check_group(j)?;
    let f = image_feature(enc, x, &prompts.visual[j])?;
    let mut logits = candidates
        .iter()
        .map(|&k| {
            let g = text_feature(enc, k, &prompts.text[j])?;
            Ok(linalg::dot(&f, &g) / enc.model_temperature)
        })
        .collect::<Result<Vec<_>>>()?;
    softmax_in_place(&mut logits);
    Ok(logits)
}


#[cfg(test)]
mod tests {
    use super::test_support::toy;
    use super::*;
    use crate::linalg::{norm, scaled};

    #[test]
    fn zero_text_prompt_reduces_to_class_embedding() {
        let t = toy(1, 3, 0.07);
        let g = text_feature(&t.enc, 1, &[0.0; 4]).unwrap();
        let want = linalg::normalized(&t.enc.text_map.mul_vec(&t.enc.class_embeddings[1]), "t").unwrap();
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn features_are_scale_invariant() {
        let mut t = toy(2, 3, 0.07);
        let x = t.batch(&[0], 1).remove(0).x;
        let a = image_feature(&t.enc, &x, &[0.0; 3]).unwrap();
        let b = image_feature(&t.enc, &scaled(&x, 3.0), &[0.0; 3]).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        // scaling the whole pre-normalization input (class embedding + prompt)
        let p_t = vec![0.3, -0.2, 0.1, 0.5];
        let enc2 = FrozenEncoders::new(
            t.enc.text_map.clone(),
            t.enc.image_map.clone(),
            t.enc.text_prompt_inject.clone(),
            t.enc.visual_prompt_inject.clone(),
            t.enc.class_embeddings.iter().map(|e| scaled(e, 2.0)).collect(),
            0.07,
        )
        .unwrap();
        let g1 = text_feature(&t.enc, 2, &p_t).unwrap();
        let g2 = text_feature(&enc2, 2, &scaled(&p_t, 2.0)).unwrap();
        for (p, q) in g1.iter().zip(&g2) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    fn without_injection(enc: &FrozenEncoders) -> FrozenEncoders {
        FrozenEncoders::new(
            enc.text_map.clone(),
            enc.image_map.clone(),
            Matrix::zeros(enc.input_dim(), enc.text_prompt_dim()),
            Matrix::zeros(enc.input_dim(), enc.visual_prompt_dim()),
            enc.class_embeddings.clone(),
            enc.model_temperature,
        )
        .unwrap()
    }

    #[test]
    fn disabled_injection_ignores_prompts() {
        let mut t = toy(3, 3, 0.07);
        let enc = without_injection(&t.enc);
        let x = t.batch(&[1], 1).remove(0).x;
        assert_eq!(
            text_feature(&enc, 0, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            text_feature(&enc, 0, &[-4.0, 0.0, 1.0, 9.0]).unwrap()
        );
        assert_eq!(
            image_feature(&enc, &x, &[1.0, 0.0, 0.0]).unwrap(),
            image_feature(&enc, &x, &[0.0, 5.0, -1.0]).unwrap()
        );
    }

    #[test]
    fn degenerate_text_input_is_an_error() {
        let t = toy(4, 2, 0.07);
        let enc = FrozenEncoders::new(
            t.enc.text_map.clone(),
            t.enc.image_map.clone(),
            t.enc.text_prompt_inject.clone(),
            t.enc.visual_prompt_inject.clone(),
            vec![vec![0.0; t.enc.input_dim()]; 2],
            0.07,
        )
        .unwrap();
        assert!(matches!(
            text_feature(&enc, 0, &[0.0; 4]),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn group_probs_single_class_and_uniform() {
        let mut t = toy(5, 3, 0.07);
        let p = t.prompts(2, 0.1);
        let x = t.batch(&[0], 1).remove(0).x;
        assert_eq!(group_class_probs(&t.enc, &p, 1, &x, &[2]).unwrap(), vec![1.0]);

        let same = vec![t.enc.class_embeddings[0].clone(); 3];
        let enc = FrozenEncoders::new(
            t.enc.text_map.clone(),
            t.enc.image_map.clone(),
            t.enc.text_prompt_inject.clone(),
            t.enc.visual_prompt_inject.clone(),
            same,
            0.07,
        )
        .unwrap();
        let probs = group_class_probs(&enc, &p, 0, &x, &[0, 1, 2]).unwrap();
        for q in probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(group_class_probs(&t.enc, &p, 2, &x, &[0]).is_err());
    }

    #[test]
    fn cold_temperature_is_argmax() {
        let mut t = toy(6, 4, 1e-4);
        let p = t.prompts(1, 0.1);
        let x = t.batch(&[3], 1).remove(0).x;
        let probs = group_class_probs(&t.enc, &p, 0, &x, &[0, 1, 2, 3]).unwrap();
        let f = image_feature(&t.enc, &x, &p.visual[0]).unwrap();
        let sims: Vec<f64> = (0..4)
            .map(|k| linalg::dot(&f, &text_feature(&t.enc, k, &p.text[0]).unwrap()))
            .collect();
        let arg = (0..4).max_by(|a, b| sims[*a].total_cmp(&sims[*b])).unwrap();
        for (k, q) in probs.iter().enumerate() {
            let want = if k == arg { 1.0 } else { 0.0 };
            assert!((q - want).abs() < 1e-9, "{probs:?}");
        }
    }

    #[test]
    fn param_count_is_groups_times_widths() {
        let mut t = toy(7, 2, 0.07);
        assert_eq!(t.prompts(5, 0.02).param_count(), 5 * (4 + 3));
    }

    #[test]
    fn encoder_survives_serde() {
        let t = toy(8, 2, 0.07);
        let json = serde_json::to_string(&t.enc).unwrap();
        let back: FrozenEncoders = serde_json::from_str::<FrozenEncoders>(&json).unwrap().rehydrate();
        assert_eq!(back, t.enc);
    }
}
