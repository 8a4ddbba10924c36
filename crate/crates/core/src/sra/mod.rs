//! Sparse recovery: traffic masks and the convolutional autoencoder that
//! fills gaps in sparsely sampled series.

mod mask;
mod model;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::ops::mse;
use crate::nn::{Adam, NnError, ParamStore, Tensor};
use crate::series::{viability_check, BfiSeries, SeriesError, Viability};

pub(crate) use mask::mask_with_missing;
pub use mask::{corrupt, gen_poisson_mask, TrafficMask};
pub use model::TcnAeConfig;

/// Traffic ratios drawn per training example.
pub const TRAINING_RATIOS: [f64; 4] = [0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Error)]
pub enum SraError {
    #[error("traffic ratio must be in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("series of {len} samples is shorter than the required {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("training series must be gapless")]
    NotDense,
    #[error("a continuous gap covers half a viability window; the attack fails")]
    NotViable,
    #[error("invalid recovery configuration: {0}")]
    BadConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SraModel {
    pub config: TcnAeConfig,
    pub params: ParamStore<f32>,
}

/// Mean training loss of each epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
}

impl SraModel {
    /// Freshly initialized model.
    pub fn new(config: TcnAeConfig) -> Result<Self, SraError> {
        config.validate().map_err(SraError::BadConfig)?;
        Ok(Self {
            params: model::init_params(&config),
            config,
        })
    }

    /// Network output for one window (no passthrough, no clipping).
    pub fn predict(&self, values: &[f64], gaps: &[bool]) -> Result<Vec<f64>, SraError> {
        let input = model::network_input::<f32>(values, gaps);
        let (out, _) = model::forward(&self.config, &self.params, input)?;
        Ok(out.to_f64_vec())
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut t = self.params.values();
        let list = |v: &[usize]| Tensor::row(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
        t.insert("meta.sra.channels".into(), list(&self.config.channels));
        t.insert("meta.sra.dilations".into(), list(&self.config.dilations));
        t.insert(
            "meta.sra.sizes".into(),
            list(&[self.config.kernel_size, self.config.latent_len, self.config.crop_len]),
        );
        t
    }

    pub fn from_tensors(mut t: BTreeMap<String, Tensor<f32>>) -> Result<Self, SraError> {
        let mut take = |name: &str| -> Result<Vec<usize>, SraError> {
            let v = t
                .remove(name)
                .ok_or_else(|| SraError::Checkpoint(CheckpointError::Malformed(format!("missing `{name}`"))))?;
            Ok(v.data().iter().map(|&x| x as usize).collect())
        };
        let channels = take("meta.sra.channels")?;
        let dilations = take("meta.sra.dilations")?;
        let sizes = take("meta.sra.sizes")?;
        if sizes.len() != 3 {
            return Err(SraError::Checkpoint(CheckpointError::Malformed("bad meta.sra.sizes".into())));
        }
        let config = TcnAeConfig {
            channels,
            dilations,
            kernel_size: sizes[0],
            latent_len: sizes[1],
            crop_len: sizes[2],
            ..Default::default()
        };
        let mut model = Self::new(config)?;
        let expected: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in expected {
            let v = t
                .remove(&name)
                .ok_or_else(|| SraError::Checkpoint(CheckpointError::Malformed(format!("missing `{name}`"))))?;
            let p = model.params.get_mut(&name).expect("listed name");
            if p.value.shape() != v.shape() {
                return Err(SraError::Checkpoint(CheckpointError::Malformed(format!("`{name}` has wrong shape"))));
            }
            p.value = v;
        }
        if let Some(extra) = t.keys().next() {
            return Err(SraError::Checkpoint(CheckpointError::Malformed(format!("unexpected tensor `{extra}`"))));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SraError> {
        checkpoint::save(path, &self.to_tensors())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SraError> {
        Self::from_tensors(checkpoint::load(path)?)
    }
}

/// Self-supervised training: random crops of dense series are corrupted with
/// Poisson masks and the network learns to reproduce the dense crop.
pub fn train_sra(dataset: &[BfiSeries], config: &TcnAeConfig) -> Result<(SraModel, TrainReport), SraError> {
    let mut model = SraModel::new(config.clone())?;
    if dataset.is_empty() {
        return Err(SraError::EmptyDataset);
    }
    let needed = config.receptive_field();
    for s in dataset {
        if !s.is_gapless() {
            return Err(SraError::NotDense);
        }
        if s.len() < needed {
            return Err(SraError::SeriesTooShort { len: s.len(), needed });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5352_4121);
    let mut adam = Adam::new(config.lr);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            model.params.zero_grad();
            for &idx in chunk {
                let s = &dataset[idx];
                let n = config.crop_len.min(s.len());
                let start = rng.random_range(0..=s.len() - n);
                let crop = BfiSeries {
                    fs_hz: s.fs_hz,
                    t0_us: 0,
                    values: s.values[start..start + n].to_vec(),
                    gap_mask: vec![false; n],
                };
                let ratio = TRAINING_RATIOS[rng.random_range(0..TRAINING_RATIOS.len())];
                let mask = gen_poisson_mask(n, ratio, s.fs_hz, rng.random())?;
                let sparse = corrupt(&crop, &mask)?;
                let input = model::network_input::<f32>(&sparse.values, &sparse.gap_mask);
                let (out, trace) = model::forward(&model.config, &model.params, input)?;
                let target = Tensor::<f32>::row(&crop.values).reshape(&[1, n])?;
                let (loss, grad) = mse(&out, &target)?;
                total += loss;
                model::backward(&model.config, &mut model.params, &trace, &grad)?;
            }
            model.params.scale_grads(1.0 / chunk.len() as f32);
            adam.step(&mut model.params);
        }
        report.epoch_loss.push(total / dataset.len() as f64);
    }
    Ok((model, report))
}

/// Fills the gaps of `sparse`. Observed samples are copied unchanged; filled
/// samples are clipped to `[0, 1]`. Long series are processed in half-overlapping
/// windows whose predictions are averaged.
pub fn recover(model: &SraModel, sparse: &BfiSeries) -> Result<BfiSeries, SraError> {
    if sparse.is_gapless() {
        return Ok(sparse.clone());
    }
    if viability_check(sparse, 1.0)? == Viability::AttackFailed {
        return Err(SraError::NotViable);
    }
    let n = sparse.len();
    let win = model.config.crop_len;
    let mut starts = Vec::new();
    if n <= win {
        starts.push(0);
    } else {
        let hop = (win / 2).max(1);
        let mut s = 0;
        while s + win < n {
            starts.push(s);
            s += hop;
        }
        starts.push(n - win);
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    for &s in &starts {
        let e = (s + win).min(n);
        let pred = model.predict(&sparse.values[s..e], &sparse.gap_mask[s..e])?;
        for (i, v) in pred.into_iter().enumerate() {
            sum[s + i] += v;
            count[s + i] += 1;
        }
    }
    let values = (0..n)
        .map(|i| {
            if sparse.gap_mask[i] {
                (sum[i] / count[i] as f64).clamp(0.0, 1.0)
            } else {
                sparse.values[i]
            }
        })
        .collect();
    Ok(BfiSeries {
        fs_hz: sparse.fs_hz,
        t0_us: sparse.t0_us,
        values,
        gap_mask: vec![false; n],
    })
}

/// RMSE between `recovered` and `truth` relative to the mean absolute truth.
pub fn rmse_relative(recovered: &BfiSeries, truth: &BfiSeries) -> Result<f64, SraError> {
    if recovered.len() != truth.len() {
        return Err(SraError::LengthMismatch {
            expected: truth.len(),
            found: recovered.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let n = truth.len() as f64;
    let mse: f64 = recovered
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    let mean_abs = truth.values.iter().map(|v| v.abs()).sum::<f64>() / n;
    let rmse = mse.sqrt();
    Ok(if rmse == 0.0 { 0.0 } else { rmse / mean_abs })
}

/// Mean relative RMSE of recovering `truths` after removing a `missing`
/// fraction of samples, over `seeds` masks each. Masks that fail the
/// viability check are skipped; the number skipped is returned alongside.
pub fn evaluate_missing(
    model: &SraModel,
    truths: &[BfiSeries],
    missing: f64,
    seeds: std::ops::Range<u64>,
) -> Result<(f64, usize), SraError> {
    let (mut total, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for seed in seeds {
        for (i, truth) in truths.iter().enumerate() {
            let mask = mask_with_missing(truth.len(), missing, crate::nn::mix_seed(seed, i as u64));
            let sparse = corrupt(truth, &mask)?;
            match recover(model, &sparse) {
                Ok(r) => {
                    total += rmse_relative(&r, truth)?;
                    used += 1;
                }
                Err(SraError::NotViable) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((if used == 0 { f64::NAN } else { total / used as f64 }, skipped))
}
