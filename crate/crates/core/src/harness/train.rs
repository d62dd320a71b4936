//! Mini-batch training with Adam, deterministic for a fixed seed.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::PseudoTargets;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::predictor::{Checkpoint, Predictor};
use crate::scenario::Scenario;

use super::config::TrainConfig;
use super::evaluate::jitter;
use super::objective::{objective, GradMode, ObjectiveOptions, Sample};
use super::optim::Adam;

const SHUFFLE_SALT: u64 = 0x5348_5546;
const AUGMENT_SALT: u64 = 0x4155_4731;
const PERM_SALT: u64 = 0x5045_524d;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a tuple of indices.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, p| splitmix(acc ^ splitmix(*p)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Epoch {
        epoch: usize,
        lr: f64,
        #[serde(flatten)]
        loss: LossBreakdown,
        jitter: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub predictor: Predictor,
    pub epochs: Vec<EpochSummary>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        self.predictor.to_checkpoint(seed, self.epochs.len())
    }
}

/// Everything [`train`] needs besides the configuration.
#[derive(Default)]
pub struct TrainInputs<'a> {
    pub scenarios: &'a [Scenario],
    pub pseudo: Option<&'a BTreeMap<String, PseudoTargets>>,
    /// Held-out scenarios probed for jitter after every epoch.
    pub probe: &'a [Scenario],
    pub log: Option<&'a mut dyn Write>,
}

fn emit(log: &mut Option<&mut dyn Write>, line: &LogLine) -> Result<()> {
    if let Some(w) = log {
        serde_json::to_writer(&mut **w, line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Mean loss of a predictor over `scenarios` without augmentation randomness beyond `seed`.
pub fn mean_loss(predictor: &Predictor, config: &TrainConfig, scenarios: &[Scenario], pseudo: Option<&BTreeMap<String, PseudoTargets>>, seed: u64) -> Result<LossBreakdown> {
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let opts = ObjectiveOptions::from(config);
    let parts = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sample = Sample {
                scenario: s,
                pseudo: pseudo.and_then(|m| m.get(&s.scenario_id)),
                augment_seed: derive_seed(seed, &[AUGMENT_SALT, i as u64]),
                perm_seed: derive_seed(seed, &[PERM_SALT, i as u64]),
            };
            objective(predictor, &sample, &opts, GradMode::None).map(|o| o.breakdown)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = LossBreakdown::default();
    for p in &parts {
        total.accumulate(p);
    }
    Ok(total.scaled(1.0 / parts.len() as f64))
}

/// Trains a fresh predictor initialised from `config.seed`.
pub fn train(config: &TrainConfig, inputs: TrainInputs<'_>) -> Result<TrainOutcome> {
    let predictor = Predictor::new(config.predictor(), config.seed)?;
    train_from(config, predictor, inputs)
}

/// Continues training `predictor` for `config.epochs` epochs.
pub fn train_from(config: &TrainConfig, mut predictor: Predictor, inputs: TrainInputs<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let TrainInputs { scenarios, pseudo, probe, mut log } = inputs;
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictor.config() != &config.predictor() {
        return Err(Error::ShapeMismatch("predictor does not match the training configuration".into()));
    }
    let opts = ObjectiveOptions::from(config);
    let probe = &probe[..probe.len().min(config.jitter_probe)];
    let mut adam = Adam::new(predictor.num_params());
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SHUFFLE_SALT]));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.lr_at(epoch);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let s = &scenarios[i];
                    let sample = Sample {
                        scenario: s,
                        pseudo: pseudo.and_then(|m| m.get(&s.scenario_id)),
                        augment_seed: derive_seed(config.seed, &[AUGMENT_SALT, epoch as u64, i as u64]),
                        perm_seed: derive_seed(config.seed, &[PERM_SALT, epoch as u64, i as u64]),
                    };
                    objective(&predictor, &sample, &opts, GradMode::Total)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; predictor.num_params()];
            let mut loss = LossBreakdown::default();
            for r in &results {
                loss.accumulate(&r.breakdown);
                for (g, d) in grad.iter_mut().zip(r.grad.as_ref().expect("total gradient")) {
                    *g += d;
                }
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            epoch_loss.accumulate(&loss);
            let loss = loss.scaled(scale);
            predictor.update_params(|p| adam.step(p, &grad, lr));
            emit(&mut log, &LogLine::Step { epoch, step, lr, loss })?;
            step += 1;
        }
        let loss = epoch_loss.scaled(1.0 / scenarios.len() as f64);
        let jitter = if probe.is_empty() || config.shift == 0 || config.shift >= config.future_len {
            None
        } else {
            Some(jitter(&predictor, probe, config.shift)?)
        };
        emit(&mut log, &LogLine::Epoch { epoch, lr, loss, jitter })?;
        log::info!("epoch {epoch}: loss {:.4}{}", loss.total, jitter.map_or(String::new(), |j| format!(", jitter {j:.4}")));
        epochs.push(EpochSummary { epoch, lr, loss, jitter });
    }
    Ok(TrainOutcome { predictor, epochs })
}
