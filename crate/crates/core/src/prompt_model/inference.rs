use serde::{Deserialize, Serialize};

use super::{image_feature, softmax_in_place, text_feature, FrozenEncoders, PromptGroupSet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InferenceStrategy {
    AverageProbs,
    MaxLogits,
    FeatureAvg,
    SingleGroup(usize),
}

/// Prompt-conditioned classifier with text features precomputed for a fixed
/// candidate set.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    enc: &'a FrozenEncoders,
    prompts: &'a PromptGroupSet,
    candidates: Vec<usize>,
    strategy: InferenceStrategy,
    /// `[group][candidate]`
    text: Vec<Vec<Vec<f64>>>,
    /// Per-candidate renormalized mean text feature (feature_avg only).
    text_avg: Vec<Vec<f64>>,
}

impl<'a> Predictor<'a> {
    pub fn new(
        enc: &'a FrozenEncoders,
        prompts: &'a PromptGroupSet,
        candidates: &[usize],
        strategy: InferenceStrategy,
    ) -> Result<Self> {
        prompts.check_against(enc)?;
        if let InferenceStrategy::SingleGroup(j) = strategy {
            prompts.check_group(j)?;
        }
        if candidates.is_empty() {
            return Err(Error::InvalidParameter("no candidate classes".into()));
        }
        let text = prompts
            .text
            .iter()
            .map(|p| candidates.iter().map(|&k| text_feature(enc, k, p)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let text_avg = if strategy == InferenceStrategy::FeatureAvg {
            (0..candidates.len())
                .map(|k| normalized(&mean_of(text.iter().map(|g| &g[k])), "averaged text feature"))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            enc,
            prompts,
            candidates: candidates.to_vec(),
            strategy,
            text,
            text_avg,
        })
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    fn logits(&self, f: &[f64], texts: &[Vec<f64>]) -> Vec<f64> {
        texts.iter().map(|g| dot(f, g) / self.enc.model_temperature).collect()
    }

    fn group_probs(&self, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        let f = image_feature(self.enc, x, &self.prompts.visual[j])?;
        let mut l = self.logits(&f, &self.text[j]);
        softmax_in_place(&mut l);
        Ok(l)
    }

    /// Probabilities over `candidates`, in candidate order.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let groups = self.prompts.n_groups();
        match self.strategy {
            InferenceStrategy::SingleGroup(j) => self.group_probs(j, x),
            InferenceStrategy::AverageProbs => {
                let mut acc = vec![0.0; self.candidates.len()];
                for j in 0..groups {
                    axpy(&mut acc, 1.0 / groups as f64, &self.group_probs(j, x)?);
                }
                Ok(acc)
            }
            InferenceStrategy::MaxLogits => {
                let mut best = vec![f64::NEG_INFINITY; self.candidates.len()];
                for j in 0..groups {
                    let f = image_feature(self.enc, x, &self.prompts.visual[j])?;
                    for (b, l) in best.iter_mut().zip(self.logits(&f, &self.text[j])) {
                        *b = b.max(l);
                    }
                }
                softmax_in_place(&mut best);
                Ok(best)
            }
            InferenceStrategy::FeatureAvg => {
                let feats = self
                    .prompts
                    .visual
                    .iter()
                    .map(|p| image_feature(self.enc, x, p))
                    .collect::<Result<Vec<_>>>()?;
                let f = normalized(&mean_of(feats.iter()), "averaged image feature")?;
                let mut l = self.logits(&f, &self.text_avg);
                softmax_in_place(&mut l);
                Ok(l)
            }
        }
    }

    /// Predicted class id (ties go to the earlier candidate).
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict(x)?;
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        Ok(self.candidates[best])
    }
}

fn mean_of<'v, I: Iterator<Item = &'v Vec<f64>>>(vs: I) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vs {
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        axpy(&mut acc, 1.0, v);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

pub fn ensemble_predict(
    enc: &FrozenEncoders,
    prompts: &PromptGroupSet,
    x: &[f64],
    candidates: &[usize],
    strategy: InferenceStrategy,
) -> Result<Vec<f64>> {
    Predictor::new(enc, prompts, candidates, strategy)?.predict(x)
}

#[cfg(test)]
mod tests {
    use super::super::group_class_probs;
    use super::super::test_support::toy;
    use super::*;

    const ALL: [InferenceStrategy; 4] = [
        InferenceStrategy::AverageProbs,
        InferenceStrategy::MaxLogits,
        InferenceStrategy::FeatureAvg,
        InferenceStrategy::SingleGroup(0),
    ];

    #[test]
    fn single_group_strategies_coincide() {
        let mut t = toy(31, 4, 0.07);
        let p = t.prompts(1, 0.3);
        let cand = [0, 1, 2, 3];
        for s in t.batch(&[0, 2], 2) {
            let want = group_class_probs(&t.enc, &p, 0, &s.x, &cand).unwrap();
            for strat in ALL {
                let got = ensemble_predict(&t.enc, &p, &s.x, &cand, strat).unwrap();
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{strat:?}");
                }
            }
        }
    }

    #[test]
    fn identical_groups_average_to_single() {
        let mut t = toy(32, 3, 0.07);
        let one = t.prompts(1, 0.3);
        let three = PromptGroupSet::new(vec![one.text[0].clone(); 3], vec![one.visual[0].clone(); 3]).unwrap();
        let x = t.batch(&[1], 1).remove(0).x;
        let a = ensemble_predict(&t.enc, &three, &x, &[0, 1, 2], InferenceStrategy::AverageProbs).unwrap();
        let b = ensemble_predict(&t.enc, &three, &x, &[0, 1, 2], InferenceStrategy::SingleGroup(0)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn average_probs_is_the_arithmetic_mean() {
        let mut t = toy(33, 5, 0.07);
        let p = t.prompts(4, 0.5);
        let cand = [4, 0, 2];
        for s in t.batch(&[0, 2, 4], 2) {
            let got = ensemble_predict(&t.enc, &p, &s.x, &cand, InferenceStrategy::AverageProbs).unwrap();
            let mut want = vec![0.0; 3];
            for j in 0..4 {
                let g = group_class_probs(&t.enc, &p, j, &s.x, &cand).unwrap();
                for k in 0..3 {
                    want[k] += g[k] / 4.0;
                }
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_strategy_normalizes() {
        let mut t = toy(34, 4, 0.07);
        let p = t.prompts(3, 0.5);
        let x = t.batch(&[3], 1).remove(0).x;
        for strat in [InferenceStrategy::SingleGroup(2), InferenceStrategy::MaxLogits, InferenceStrategy::FeatureAvg] {
            let got = ensemble_predict(&t.enc, &p, &x, &[0, 1, 2, 3], strat).unwrap();
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(got.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn invalid_group_is_rejected() {
        let mut t = toy(35, 2, 0.07);
        let p = t.prompts(2, 0.1);
        let x = t.batch(&[0], 1).remove(0).x;
        assert!(matches!(
            ensemble_predict(&t.enc, &p, &x, &[0, 1], InferenceStrategy::SingleGroup(2)),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn classify_returns_candidate_id() {
        let mut t = toy(36, 4, 0.07);
        let p = t.prompts(2, 0.1);
        let x = t.batch(&[2], 1).remove(0).x;
        let pred = Predictor::new(&t.enc, &p, &[3, 1], InferenceStrategy::AverageProbs).unwrap();
        assert!([3, 1].contains(&pred.classify(&x).unwrap()));
    }
}
