//! Synthetic keystroke series: a smooth per-key pulse at each press, a
//! fluctuation between consecutive presses whose amplitude grows with the
//! distance travelled, speed and device nuisance, and additive noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{DomainId, KeyboardLayout};
use crate::nn::{mix_seed, stable_hash};
use crate::segment::{segment, KeystrokeSegment, SegmentationParams};
use crate::series::{minmax_normalize, read_series_csv, write_series_csv, BfiSeries, SeriesError};
use crate::sra::{corrupt, gen_poisson_mask, SraError, TrafficMask};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("key `{0}` is not on the {1} layout")]
    UnknownKey(char, String),
    #[error("invalid synth configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Traffic(#[from] SraError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    #[serde(with = "layout_by_name")]
    pub layout: KeyboardLayout,
    /// Typing speed range, characters per second.
    pub cps_range: (f64, f64),
    pub fs_hz: f64,
    pub key_signature_seed: u64,
    /// Fluctuation amplitude per key pitch travelled.
    pub transition_gain: f64,
    pub noise_sigma: f64,
    pub device_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            layout: KeyboardLayout::numeric(),
            cps_range: (0.5, 2.0),
            fs_hz: 40.0,
            key_signature_seed: 7,
            transition_gain: 0.05,
            noise_sigma: 0.01,
            device_scale: 1.0,
            seed: 0,
        }
    }
}

mod layout_by_name {
    use super::KeyboardLayout;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(l: &KeyboardLayout, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&l.name)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<KeyboardLayout, D::Error> {
        let name = String::deserialize(d)?;
        KeyboardLayout::by_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown layout `{name}`")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (lo, hi) = self.cps_range;
        if !(lo > 0.0 && lo <= hi && hi < 10.0) {
            return Err(SynthError::BadConfig(format!("cps range ({lo}, {hi}) must lie in (0, 10)")));
        }
        if !(self.noise_sigma >= 0.0) || !(self.fs_hz > 0.0) || !(self.device_scale > 0.0) {
            return Err(SynthError::BadConfig("noise_sigma >= 0, fs_hz > 0 and device_scale > 0 required".into()));
        }
        if !(self.transition_gain >= 0.0) {
            return Err(SynthError::BadConfig("transition_gain must be non-negative".into()));
        }
        Ok(())
    }
}

/// Dense synthetic series with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    pub series: BfiSeries,
    pub password: String,
    pub peak_indices: Vec<usize>,
    pub domains: Vec<DomainId>,
}

/// Shape of one key's pulse. Each side is a weighted sum of components that
/// decrease monotonically away from the press, so the pulse is unimodal but
/// asymmetric.
#[derive(Clone, Debug)]
struct KeySignature {
    amplitude: f64,
    left: SideShape,
    right: SideShape,
}

#[derive(Clone, Debug)]
struct SideShape {
    /// Weight, width (s) and exponent of a generalized Gaussian core.
    core: (f64, f64, f64),
    /// Weight, knee (s) and softness (s) of a logistic shoulder.
    shoulder: (f64, f64, f64),
}

impl SideShape {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let wc: f64 = rng.random_range(0.6..1.0);
        let ws: f64 = rng.random_range(0.0..0.35);
        let total = wc + ws;
        Self {
            core: (wc / total, rng.random_range(0.03..0.08), rng.random_range(1.2..3.0)),
            shoulder: (ws / total, rng.random_range(0.05..0.15), rng.random_range(0.02..0.05)),
        }
    }

    fn value(&self, x: f64) -> f64 {
        let (wc, s, p) = self.core;
        let (ws, knee, soft) = self.shoulder;
        let logistic = |x: f64| 1.0 / (1.0 + ((x - knee) / soft).exp());
        wc * (-(x / s).powf(p)).exp() + ws * logistic(x) / logistic(0.0)
    }
}

impl KeySignature {
    fn new(signature_seed: u64, key: char) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(signature_seed, key as u64));
        let left = SideShape::random(&mut rng);
        let right = SideShape::random(&mut rng);
        Self {
            amplitude: rng.random_range(0.7..1.0),
            left,
            right,
        }
    }

    fn value(&self, dt_s: f64) -> f64 {
        let side = if dt_s < 0.0 { &self.left } else { &self.right };
        self.amplitude * side.value(dt_s.abs())
    }
}

/// Band-limited wobble between two presses, fixed per (from, to) key pair.
fn transition_coefficients(signature_seed: u64, from: char, to: char) -> [(f64, f64); 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(signature_seed ^ 0x7472_616e, stable_hash(&[from as u8, to as u8])));
    let mut c = [(0.0f64, 0.0f64); 2];
    for slot in c.iter_mut() {
        *slot = (rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::TAU));
    }
    let norm = c.iter().map(|p| p.0.abs()).sum::<f64>().max(1e-9);
    c.map(|(a, ph)| (a / norm, ph))
}

/// Generates one labeled series for `password`.
pub fn synth_keystroke_series(password: &str, config: &SynthConfig, seed: u64) -> Result<LabeledSeries, SynthError> {
    config.validate()?;
    let keys: Vec<char> = password.chars().collect();
    for &k in &keys {
        if config.layout.index_of(k).is_none() {
            return Err(SynthError::UnknownKey(k, config.layout.name.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = config.fs_hz;
    let (lo, hi) = config.cps_range;
    let cps = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let interval = |rng: &mut ChaCha8Rng| (1.0 / cps) * rng.random_range(0.8..1.2);

    // press instants on the sample grid
    let mut peaks = Vec::with_capacity(keys.len());
    let mut t = interval(&mut rng);
    for i in 0..keys.len() {
        if i > 0 {
            t += interval(&mut rng);
        }
        let idx = (t * fs).round() as usize;
        let idx = match peaks.last() {
            Some(&p) if idx <= p => p + 1,
            _ => idx,
        };
        peaks.push(idx);
    }
    let tail = interval(&mut rng);
    let len = peaks.last().map_or(0, |&p| p) + (tail * fs).round() as usize + 1;
    let len = len.max(1);

    let mut values = vec![0.0; len];
    let signatures: Vec<KeySignature> = keys.iter().map(|&k| KeySignature::new(config.key_signature_seed, k)).collect();
    for (sig, &p) in signatures.iter().zip(&peaks) {
        for (i, v) in values.iter_mut().enumerate() {
            *v += config.device_scale * sig.value((i as f64 - p as f64) / fs);
        }
    }
    for w in 0..keys.len().saturating_sub(1) {
        let (a, b) = (peaks[w], peaks[w + 1]);
        let dist = config.layout.distance(keys[w], keys[w + 1]).expect("keys validated");
        let amp = config.transition_gain * dist * rng.random_range(0.9..1.1);
        let coeffs = transition_coefficients(config.key_signature_seed, keys[w], keys[w + 1]);
        let jitter: Vec<f64> = (0..coeffs.len()).map(|_| rng.random_range(-0.2..0.2)).collect();
        let span = (b - a) as f64;
        for i in a..=b {
            let u = (i - a) as f64 / span;
            let wobble: f64 = coeffs
                .iter()
                .zip(&jitter)
                .enumerate()
                .map(|(m, (&(c, ph), j))| c * (std::f64::consts::TAU * (m + 1) as f64 * u + ph + j).sin())
                .sum();
            values[i] += amp * (std::f64::consts::PI * u).sin() * wobble;
        }
    }
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).expect("valid sigma");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let gap_mask = vec![false; len];
    minmax_normalize(&mut values, &gap_mask);
    Ok(LabeledSeries {
        series: BfiSeries {
            fs_hz: fs,
            t0_us: 0,
            values,
            gap_mask,
        },
        password: password.to_string(),
        domains: DomainId::for_sequence(&keys),
        peak_indices: peaks,
    })
}

/// Random passwords of the requested `(length, count)` groups.
pub fn synth_dataset(counts: &[(usize, usize)], config: &SynthConfig, seed: u64) -> Result<Vec<LabeledSeries>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &(len, count) in counts {
        for _ in 0..count {
            let pw: String = (0..len)
                .map(|_| config.layout.keys[rng.random_range(0..config.layout.len())])
                .collect();
            let s: u64 = rng.random();
            out.push(synth_keystroke_series(&pw, config, s)?);
        }
    }
    Ok(out)
}

/// Samples around each press that must all be lost for it to count as missed.
pub const MISS_HALF_WIDTH_S: f64 = 0.06;

/// Sparse copy of a labeled series plus the indices of missed presses.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficOutcome {
    pub series: LabeledSeries,
    pub mask: TrafficMask,
    pub missed: Vec<usize>,
}

/// Applies Poisson traffic at `ratio`. A ratio of 1.0 is a saturated link
/// where every sample arrives.
pub fn apply_traffic(ls: &LabeledSeries, ratio: f64, seed: u64) -> Result<TrafficOutcome, SynthError> {
    let n = ls.series.len();
    let mask = if ratio == 1.0 {
        TrafficMask::all(n)
    } else {
        gen_poisson_mask(n, ratio, ls.series.fs_hz, seed)?
    };
    let sparse = corrupt(&ls.series, &mask)?;
    let h = (MISS_HALF_WIDTH_S * ls.series.fs_hz).round() as usize;
    let missed = ls
        .peak_indices
        .iter()
        .enumerate()
        .filter(|&(_, &p)| {
            let lo = p.saturating_sub(h);
            let hi = (p + h).min(n - 1);
            (lo..=hi).all(|i| !mask.keep[i])
        })
        .map(|(i, _)| i)
        .collect();
    Ok(TrafficOutcome {
        series: LabeledSeries {
            series: sparse,
            ..ls.clone()
        },
        mask,
        missed,
    })
}

/// Smooth random signal for training the recovery model: a few sinusoids
/// between 0.1 and 2 Hz, min-max normalized.
pub fn sinusoid_mixture(len: usize, fs_hz: f64, seed: u64) -> BfiSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..1.0),
                rng.random_range(0.1..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut values: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / fs_hz;
            parts.iter().map(|&(a, f, ph)| a * (std::f64::consts::TAU * f * t + ph).sin()).sum()
        })
        .collect();
    let mask = vec![false; len];
    minmax_normalize(&mut values, &mask);
    BfiSeries::dense(fs_hz, 0, values)
}

#[derive(Serialize, Deserialize)]
struct LabelEntry {
    file: String,
    password: String,
    peaks: Vec<usize>,
    domains: Vec<DomainId>,
}

/// Writes `series/NNNN.csv` and `labels.json` under `dir`.
pub fn write_dataset(dir: &Path, items: &[LabeledSeries]) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir.join("series"))?;
    let mut labels = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let file = format!("series/{i:04}.csv");
        write_series_csv(&dir.join(&file), &item.series)?;
        labels.push(LabelEntry {
            file,
            password: item.password.clone(),
            peaks: item.peak_indices.clone(),
            domains: item.domains.clone(),
        });
    }
    let json = serde_json::to_string_pretty(&labels).map_err(|e| SynthError::BadDataset(e.to_string()))?;
    std::fs::write(dir.join("labels.json"), json)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`] (or an external one in the
/// same layout).
pub fn read_dataset(dir: &Path, fs_hz: f64) -> Result<Vec<LabeledSeries>, SynthError> {
    let text = std::fs::read_to_string(dir.join("labels.json"))?;
    let labels: Vec<LabelEntry> = serde_json::from_str(&text).map_err(|e| SynthError::BadDataset(e.to_string()))?;
    labels
        .into_iter()
        .map(|l| {
            let series = read_series_csv(&dir.join(&l.file), Some(fs_hz))?;
            let n = l.password.chars().count();
            if l.peaks.len() != n || l.domains.len() != n {
                return Err(SynthError::BadDataset(format!("{}: label lengths disagree with password", l.file)));
            }
            if l.peaks.windows(2).any(|w| w[0] >= w[1]) || l.peaks.last().is_some_and(|&p| p >= series.len()) {
                return Err(SynthError::BadDataset(format!("{}: peaks not increasing or out of range", l.file)));
            }
            Ok(LabeledSeries {
                series,
                password: l.password,
                peak_indices: l.peaks,
                domains: l.domains,
            })
        })
        .collect()
}

impl LabeledSeries {
    /// Segments around the ground-truth presses, labeled with key and domain.
    pub fn labeled_segments(&self, params: &SegmentationParams) -> Vec<KeystrokeSegment> {
        let mut segs = segment(&self.series.values, &self.peak_indices, params);
        for ((s, key), dom) in segs.iter_mut().zip(self.password.chars()).zip(&self.domains) {
            s.key_label = Some(key);
            s.domain_label = Some(*dom);
        }
        segs
    }
}

/// Sizes of the cross-domain keystroke benchmark.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Distinct (previous, next) contexts per key; the last one is held out.
    pub domains_per_key: usize,
    pub per_domain: usize,
    /// Instances per seen domain used for training; the rest are seen-domain test.
    pub train_per_domain: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            domains_per_key: 5,
            per_domain: 40,
            train_per_domain: 32,
        }
    }
}

/// Middle-key segments of three-key series, split by domain.
#[derive(Clone, Debug, Default)]
pub struct DomainBenchmark {
    pub train: Vec<KeystrokeSegment>,
    pub seen_test: Vec<KeystrokeSegment>,
    pub unseen_test: Vec<KeystrokeSegment>,
}

/// Builds the benchmark: for every layout key, `domains_per_key` random
/// neighbor contexts, each typed `per_domain` times at random speeds. The
/// final context of each key never appears in training.
pub fn domain_benchmark(config: &SynthConfig, spec: &BenchmarkSpec, seed: u64) -> Result<DomainBenchmark, SynthError> {
    config.validate()?;
    let keys = &config.layout.keys;
    if spec.domains_per_key < 2 || spec.train_per_domain == 0 || spec.train_per_domain > spec.per_domain {
        return Err(SynthError::BadConfig("benchmark needs two contexts and a non-empty training split".into()));
    }
    if spec.domains_per_key > keys.len() * keys.len() {
        return Err(SynthError::BadConfig("more contexts requested than the layout has".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SegmentationParams::default().with_k(3);
    let mut out = DomainBenchmark::default();
    for &key in keys {
        let mut contexts: Vec<(char, char)> = Vec::with_capacity(spec.domains_per_key);
        while contexts.len() < spec.domains_per_key {
            let c = (keys[rng.random_range(0..keys.len())], keys[rng.random_range(0..keys.len())]);
            if !contexts.contains(&c) {
                contexts.push(c);
            }
        }
        for (d, &(prev, next)) in contexts.iter().enumerate() {
            let held_out = d + 1 == contexts.len();
            let pw: String = [prev, key, next].iter().collect();
            for i in 0..spec.per_domain {
                let ls = synth_keystroke_series(&pw, config, rng.random())?;
                let seg = ls.labeled_segments(&params).swap_remove(1);
                if held_out {
                    out.unseen_test.push(seg);
                } else if i < spec.train_per_domain {
                    out.train.push(seg);
                } else {
                    out.seen_test.push(seg);
                }
            }
        }
    }
    Ok(out)
}
