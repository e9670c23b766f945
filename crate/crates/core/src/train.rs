//! Mini-batch training with scheduled RMSProp and early stopping on validation loss.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Sample;
use crate::model::{BatchInput, Cadnet};
use crate::numerics::{rmsprop_step, OptimizerConfig, ParameterStore, Tape, Tensor};
use crate::world::DetectorNoise;

/// Sub-stream ids carved out of the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CORRUPT: u64 = 4;
    pub const VALIDATION: u64 = 5;
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for parameter initialisation, derived from the run seed.
pub fn init_seed(seed: u64) -> u64 {
    substream(seed, streams::INIT).random()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub kl_weight: f64,
    /// Mean number of spurious detections added to each training input; the target stays clean.
    pub corruption_rate: f64,
    /// Mean number of detections copied into each training input from other normal samples,
    /// keeping their cell and class. The target stays clean.
    pub transplant_rate: f64,
    pub detector: DetectorNoise,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            max_epochs: 40,
            patience: 3,
            kl_weight: 1.0,
            corruption_rate: 0.0,
            transplant_rate: 0.0,
            detector: DetectorNoise::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0) || !(self.corruption_rate >= 0.0) || !(self.transplant_rate >= 0.0) {
            return Err(Error::Config("kl_weight, corruption_rate and transplant_rate must be non-negative".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    /// Set when training stopped on a non-finite loss; the model holds the last good state.
    pub diverged: Option<String>,
}

/// Adds `Poisson(rate)` spurious detections per sample at uniform `(cell, class)` positions.
pub fn corrupt<R: Rng + ?Sized>(x: &mut [f32], cells: usize, rate: f64, noise: &DetectorNoise, rng: &mut R) -> Result<()> {
    if rate == 0.0 || x.is_empty() {
        return Ok(());
    }
    if cells == 0 || x.len() % cells != 0 {
        return Err(Error::Shape(alloc::format!("{} values is not a whole number of {cells}-value grids", x.len())));
    }
    let pois = Poisson::new(rate).map_err(|e| Error::Config(alloc::format!("corruption rate {rate}: {e}")))?;
    for grid in x.chunks_mut(cells) {
        let k = pois.sample(rng) as usize;
        for _ in 0..k {
            let i = rng.random_range(0..cells);
            let (o, p) = noise.sample(rng);
            grid[i] = grid[i].max(o * p);
        }
    }
    Ok(())
}

/// Copies `Poisson(rate)` detections per grid from random donors, each at the cell and class
/// it had in the donor. Occupied cell-channels are left alone. A copied object is ordinary
/// at some place or time, just not necessarily this one.
pub fn transplant<R: Rng + ?Sized>(x: &mut [f32], donors: &[Sample], rate: f64, rng: &mut R) -> Result<()> {
    if rate == 0.0 || x.is_empty() || donors.is_empty() {
        return Ok(());
    }
    let cells = donors[0].grid.values().len();
    if cells == 0 || x.len() % cells != 0 || donors.iter().any(|d| d.grid.values().len() != cells) {
        return Err(Error::Shape(alloc::format!("{} values is not a whole number of {cells}-value donor grids", x.len())));
    }
    let pois = Poisson::new(rate).map_err(|e| Error::Config(alloc::format!("transplant rate {rate}: {e}")))?;
    let mut occupied = Vec::new();
    for grid in x.chunks_mut(cells) {
        let k = pois.sample(rng) as usize;
        for _ in 0..k {
            let donor = donors[rng.random_range(0..donors.len())].grid.values();
            occupied.clear();
            occupied.extend((0..cells).filter(|&i| donor[i] != 0.0));
            if occupied.is_empty() {
                continue;
            }
            let i = occupied[rng.random_range(0..occupied.len())];
            if grid[i] == 0.0 {
                grid[i] = donor[i];
            }
        }
    }
    Ok(())
}

fn batch_of(samples: &[Sample], idx: &[usize], net: &Cadnet) -> Result<BatchInput> {
    let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
    BatchInput::from_samples(&refs, &net.config)
}

fn with_x(mut input: BatchInput, x: Vec<f32>) -> Result<(BatchInput, Tensor)> {
    let target = input.x.clone();
    input.x = Tensor::new(target.shape(), x)?;
    Ok((input, target))
}

/// Mean loss over `samples` in fixed batches, with corruption and noise drawn from `seed`.
pub fn evaluate_loss(net: &Cadnet, samples: &[Sample], cfg: &TrainConfig, seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let cells = net.config.cells();
    let mut crng = substream(seed, streams::CORRUPT);
    let mut nrng = substream(seed, streams::NOISE);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(256)) {
        let input = batch_of(samples, chunk, net)?;
        let mut x = input.x.data().to_vec();
        corrupt(&mut x, cells, cfg.corruption_rate, &cfg.detector, &mut crng)?;
        transplant(&mut x, samples, cfg.transplant_rate, &mut crng)?;
        let (input, target) = with_x(input, x)?;
        let mut tape = Tape::new();
        let eps = net.sample_noise(chunk.len(), &mut nrng);
        let trace = net.forward(&mut tape, &input, eps)?;
        let loss = net.loss(&mut tape, &trace, &target, cfg.kl_weight)?;
        total += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains in place. `on_epoch` sees every finished epoch. The best-validation parameters are
/// restored before returning.
pub fn train(
    net: &mut Cadnet,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let cells = net.config.cells();
    let mut shuffle = substream(cfg.seed, streams::SHUFFLE);
    let mut noise = substream(cfg.seed, streams::NOISE);
    let mut crng = substream(cfg.seed, streams::CORRUPT);
    let val_seed = substream(cfg.seed, streams::VALIDATION).random::<u64>();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let initial = net.params.clone();
    let mut best: Option<ParameterStore> = None;
    let mut out = TrainOutcome { epochs: Vec::new(), best_epoch: None, best_val_loss: f64::INFINITY, diverged: None };
    let mut bad = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut failure = None;
        for chunk in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<f64> {
                let input = batch_of(train_set, chunk, net)?;
                let mut x = input.x.data().to_vec();
                corrupt(&mut x, cells, cfg.corruption_rate, &cfg.detector, &mut crng)?;
                transplant(&mut x, train_set, cfg.transplant_rate, &mut crng)?;
                let (input, target) = with_x(input, x)?;
                let mut tape = Tape::new();
                let eps = net.sample_noise(chunk.len(), &mut noise);
                let trace = net.forward(&mut tape, &input, eps)?;
                let loss = net.loss(&mut tape, &trace, &target, cfg.kl_weight)?;
                tape.backward(loss, &mut net.params)?;
                Ok(tape.value(loss).data()[0] as f64)
            })();
            match step {
                Ok(l) => {
                    total += l * chunk.len() as f64;
                    rmsprop_step(&mut net.params, &cfg.optimizer, lr);
                    if net.params.iter().any(|p| !p.value.is_finite()) {
                        failure = Some(alloc::format!("non-finite parameters at epoch {epoch}"));
                        break;
                    }
                }
                Err(Error::NonFinite(m)) => {
                    failure = Some(alloc::format!("non-finite value at epoch {epoch}: {m}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = match failure {
            None => match evaluate_loss(net, val_set, cfg, val_seed) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    failure = Some(alloc::format!("non-finite validation loss at epoch {epoch}"));
                    f64::NAN
                }
                Err(e) => return Err(e),
            },
            Some(_) => f64::NAN,
        };
        if let Some(msg) = failure {
            out.diverged = Some(msg);
            break;
        }
        let log = EpochLog { epoch, learning_rate: lr, train_loss: total / train_set.len() as f64, val_loss };
        on_epoch(&log);
        out.epochs.push(log);
        if val_loss < out.best_val_loss {
            out.best_val_loss = val_loss;
            out.best_epoch = Some(epoch);
            best = Some(net.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience {
                break;
            }
        }
    }
    net.params = best.unwrap_or(initial);
    Ok(out)
}
