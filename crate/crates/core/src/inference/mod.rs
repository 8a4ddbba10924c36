//! Keystroke classification with domain-adversarial training, and password
//! ranking.

mod model;
mod rank;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::{mix_seed, Adam, NnError, ParamStore, Tensor};
use crate::segment::KeystrokeSegment;

pub use model::{pair_input, resample_linear, KiConfig, StepLoss};
pub use rank::{rank_of, rank_passwords, top_n_accuracy, PasswordCandidate};

#[derive(Debug, Error)]
pub enum KiError {
    #[error("segment has no samples")]
    EmptySegment,
    #[error("key `{0}` has fewer than two segments")]
    KeyUnderrepresented(char),
    #[error("key `{0}` is not in the model's key set")]
    UnknownKey(char),
    #[error("segment {0} lacks a key or domain label")]
    MissingLabel(usize),
    #[error("bad key distribution: {0}")]
    BadDistribution(String),
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("no training segments")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Two same-key segments (indices into the dataset) and whether their
/// domains differ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub a: usize,
    pub b: usize,
    pub key: char,
    /// 0 when both segments share a domain, 1 otherwise.
    pub delta: u8,
}

/// Pairs every segment with a random partner of the same key. When the key
/// has partners both inside and outside the anchor's domain, the side is
/// chosen by a fair coin so both `delta` classes appear.
pub fn make_pairs(segments: &[KeystrokeSegment], seed: u64) -> Result<Vec<TrainingPair>, KiError> {
    let mut groups: BTreeMap<char, Vec<usize>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        match (s.key_label, s.domain_label) {
            (Some(k), Some(_)) => groups.entry(k).or_default().push(i),
            _ => return Err(KiError::MissingLabel(i)),
        }
    }
    if let Some((&k, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(KiError::KeyUnderrepresented(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        let key = s.key_label.expect("checked above");
        let dom = s.domain_label;
        let (same, diff): (Vec<usize>, Vec<usize>) = groups[&key]
            .iter()
            .copied()
            .filter(|&j| j != i)
            .partition(|&j| segments[j].domain_label == dom);
        let pool = if same.is_empty() {
            &diff
        } else if diff.is_empty() || rng.random_bool(0.5) {
            &same
        } else {
            &diff
        };
        let b = pool[rng.random_range(0..pool.len())];
        pairs.push(TrainingPair {
            a: i,
            b,
            key,
            delta: (segments[b].domain_label != dom) as u8,
        });
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KiModel {
    pub config: KiConfig,
    pub keys: Vec<char>,
    pub params: ParamStore<f32>,
}

/// Mean per-epoch losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KiTrainReport {
    pub class_loss: Vec<f64>,
    pub domain_loss: Vec<f64>,
}

impl KiModel {
    pub fn new(config: KiConfig, keys: Vec<char>) -> Result<Self, KiError> {
        config.validate().map_err(KiError::BadConfig)?;
        if keys.len() < 2 {
            return Err(KiError::BadConfig("need at least two keys".into()));
        }
        Ok(Self {
            params: model::init_params(&config, keys.len()),
            config,
            keys,
        })
    }

    pub fn key_index(&self, key: char) -> Result<usize, KiError> {
        self.keys.iter().position(|&k| k == key).ok_or(KiError::UnknownKey(key))
    }

    /// Key distribution and same/different-domain distribution for a pair.
    pub fn forward(&self, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>), KiError> {
        if a.is_empty() || b.is_empty() {
            return Err(KiError::EmptySegment);
        }
        Ok(model::forward_dists(&self.config, &self.params, pair_input::<f32>(a, b))?)
    }

    /// Key distribution of one segment, fed as a pair with itself.
    pub fn classify(&self, samples: &[f64]) -> Result<Vec<f64>, KiError> {
        Ok(self.forward(samples, samples)?.0)
    }

    pub fn predict(&self, samples: &[f64]) -> Result<char, KiError> {
        let d = self.classify(samples)?;
        let best = (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
        Ok(self.keys[best])
    }

    /// Argmax accuracy over labeled segments.
    pub fn accuracy(&self, segments: &[KeystrokeSegment]) -> Result<f64, KiError> {
        if segments.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for (i, s) in segments.iter().enumerate() {
            let truth = s.key_label.ok_or(KiError::MissingLabel(i))?;
            hits += (self.predict(&s.samples)? == truth) as usize;
        }
        Ok(hits as f64 / segments.len() as f64)
    }

    /// Mean classification loss over `pairs`.
    pub fn class_loss(&self, segments: &[KeystrokeSegment], pairs: &[TrainingPair]) -> Result<f64, KiError> {
        let mut total = 0.0;
        for p in pairs {
            let (dist, _) = self.forward(&segments[p.a].samples, &segments[p.b].samples)?;
            total -= dist[self.key_index(p.key)?].max(1e-300).ln();
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut t = self.params.values();
        let list = |v: &[f64]| Tensor::row(v);
        let usizes = |v: &[usize]| list(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
        t.insert(
            "meta.ki.keys".into(),
            list(&self.keys.iter().map(|&c| c as u32 as f64).collect::<Vec<_>>()),
        );
        t.insert("meta.ki.channels".into(), usizes(&self.config.conv_channels));
        t.insert(
            "meta.ki.sizes".into(),
            usizes(&[self.config.kernel_size, self.config.pool_len, self.config.hidden]),
        );
        t.insert("meta.ki.lambda".into(), list(&[self.config.lambda]));
        t
    }

    pub fn from_tensors(mut t: BTreeMap<String, Tensor<f32>>) -> Result<Self, KiError> {
        let mut take = |name: &str| -> Result<Vec<f32>, KiError> {
            t.remove(name)
                .map(|v| v.into_data())
                .ok_or_else(|| KiError::Checkpoint(CheckpointError::Malformed(format!("missing `{name}`"))))
        };
        let keys: Vec<char> = take("meta.ki.keys")?
            .into_iter()
            .map(|c| char::from_u32(c as u32).ok_or_else(|| KiError::BadConfig("bad key code".into())))
            .collect::<Result<_, _>>()?;
        let channels: Vec<usize> = take("meta.ki.channels")?.into_iter().map(|v| v as usize).collect();
        let sizes = take("meta.ki.sizes")?;
        let lambda = take("meta.ki.lambda")?;
        if sizes.len() != 3 || lambda.len() != 1 {
            return Err(KiError::Checkpoint(CheckpointError::Malformed("bad model metadata".into())));
        }
        let config = KiConfig {
            conv_channels: channels,
            kernel_size: sizes[0] as usize,
            pool_len: sizes[1] as usize,
            hidden: sizes[2] as usize,
            lambda: lambda[0] as f64,
            ..Default::default()
        };
        let mut model = Self::new(config, keys)?;
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in names {
            let v = t
                .remove(&name)
                .ok_or_else(|| KiError::Checkpoint(CheckpointError::Malformed(format!("missing `{name}`"))))?;
            let p = model.params.get_mut(&name).expect("listed name");
            if p.value.shape() != v.shape() {
                return Err(KiError::Checkpoint(CheckpointError::Malformed(format!("`{name}` has wrong shape"))));
            }
            p.value = v;
        }
        if let Some(extra) = t.keys().next() {
            return Err(KiError::Checkpoint(CheckpointError::Malformed(format!("unexpected tensor `{extra}`"))));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), KiError> {
        checkpoint::save(path, &self.to_tensors())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KiError> {
        Self::from_tensors(checkpoint::load(path)?)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    Adversarial,
    Plain,
}

fn train(model: &mut KiModel, segments: &[KeystrokeSegment], objective: Objective) -> Result<KiTrainReport, KiError> {
    if segments.is_empty() {
        return Err(KiError::EmptyDataset);
    }
    for s in segments {
        if s.samples.is_empty() {
            return Err(KiError::EmptySegment);
        }
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(cfg.lr);
    let mut report = KiTrainReport::default();
    for epoch in 0..cfg.epochs as u64 {
        let pairs = make_pairs(segments, mix_seed(cfg.seed, epoch))?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ 0x6f72_6465, epoch)));
        let (mut lc, mut ld) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            model.params.zero_grad();
            for &pi in chunk {
                let p = pairs[pi];
                let key = model.key_index(p.key)?;
                let input = pair_input::<f32>(&segments[p.a].samples, &segments[p.b].samples);
                match objective {
                    Objective::Adversarial => {
                        let l = model::adversarial_step(
                            &cfg,
                            &mut model.params,
                            input,
                            key,
                            p.delta as usize,
                            cfg.lambda,
                        )?;
                        lc += l.class;
                        ld += l.domain;
                    }
                    Objective::Plain => lc += model::plain_step(&cfg, &mut model.params, input, key)?,
                }
            }
            model.params.scale_grads(1.0 / chunk.len() as f32);
            adam.step(&mut model.params);
        }
        report.class_loss.push(lc / pairs.len() as f64);
        report.domain_loss.push(ld / pairs.len() as f64);
    }
    Ok(report)
}

/// Trains on `Lc + lambda * Ld` with the discriminator behind a gradient
/// reversal: the classifier and feature extractor minimize `Lc - lambda * Ld`
/// while the discriminator minimizes `Ld`. Pairs are redrawn each epoch.
pub fn train_adversarial(model: &mut KiModel, segments: &[KeystrokeSegment]) -> Result<KiTrainReport, KiError> {
    train(model, segments, Objective::Adversarial)
}

/// Trains the classifier path alone on the same pair stream.
pub fn train_plain(model: &mut KiModel, segments: &[KeystrokeSegment]) -> Result<KiTrainReport, KiError> {
    train(model, segments, Objective::Plain)
}
