use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, DiversityForm, FrozenEncoders, LossBreakdown, PromptGroupSet};
use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::synth_data::{ClientDataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub form: DiversityForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdateOutcome {
    pub prompts: PromptGroupSet,
    /// Mean breakdown over every step of the final epoch.
    pub loss: LossBreakdown,
    /// Mean CE per epoch.
    pub epoch_ce: Vec<f64>,
}

/// Plain mini-batch SGD over `epochs` shuffled passes of the client data.
pub fn local_update<R: Rng + ?Sized>(
    prompts: &PromptGroupSet,
    enc: &FrozenEncoders,
    dataset: &ClientDataset,
    candidates: &[usize],
    params: &TrainParams,
    rng: &mut R,
) -> Result<LocalUpdateOutcome> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset {
            client: dataset.client_id,
        });
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be positive".into()));
    }
    let mut current = prompts.clone();
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    let mut epoch_ce = Vec::with_capacity(params.epochs);
    let mut last = LossBreakdown::new(0.0, 0.0, params.lambda);

    for _ in 0..params.epochs {
        order.shuffle(rng);
        let (mut ce_sum, mut div_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(params.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| dataset.samples[i].clone()).collect();
            let (lb, grad) =
                loss_and_gradient(enc, &current, &batch, candidates, params.lambda, params.form)?;
            if params.lr != 0.0 {
                for (p, g) in current.text.iter_mut().zip(&grad.text) {
                    axpy(p, -params.lr, g);
                }
                for (p, g) in current.visual.iter_mut().zip(&grad.visual) {
                    axpy(p, -params.lr, g);
                }
            }
            ce_sum += lb.ce;
            div_sum += lb.div;
            steps += 1;
        }
        let n = steps as f64;
        epoch_ce.push(ce_sum / n);
        last = LossBreakdown::new(ce_sum / n, div_sum / n, params.lambda);
    }
    if current.text.iter().chain(&current.visual).flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("local update diverged".into()));
    }
    Ok(LocalUpdateOutcome {
        prompts: current,
        loss: last,
        epoch_ce,
    })
}
