//! Keystroke localization with cell-averaging CFAR and the overlapping
//! segmentation around the selected peaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::DomainId;
use crate::series::BfiSeries;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("series of {len} samples is too short for CFAR (needs more than {needed})")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("series still has gaps; recover it first")]
    NotDense,
    #[error("only {found} of {needed} peaks survive spacing")]
    InsufficientPeaks { found: usize, needed: usize },
    #[error("invalid segmentation parameters: {0}")]
    BadParams(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSignal {
    /// Smoothed first-difference magnitude.
    #[default]
    Derivative,
    /// The series values themselves.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    pub alpha: f64,
    pub beta: f64,
    pub k_keys: usize,
    pub cfar_train: usize,
    pub cfar_guard: usize,
    pub cfar_pfa: f64,
    pub signal: DetectionSignal,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.5,
            k_keys: 6,
            cfar_train: 16,
            cfar_guard: 4,
            cfar_pfa: 0.2,
            signal: DetectionSignal::Derivative,
        }
    }
}

impl SegmentationParams {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k_keys = k;
        self
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: &str| Err(SegmentError::BadParams(m.into()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must be in (0, 1]");
        }
        if self.k_keys == 0 {
            return bad("k must be at least 1");
        }
        if self.cfar_train == 0 {
            return bad("cfar_train must be at least 1");
        }
        if !(self.cfar_pfa > 0.0 && self.cfar_pfa < 1.0) {
            return bad("cfar_pfa must be in (0, 1)");
        }
        Ok(())
    }

    /// CA-CFAR scaling factor for `2 * cfar_train` averaged cells.
    pub fn cfar_scale(&self) -> f64 {
        let n = (2 * self.cfar_train) as f64;
        n * (self.cfar_pfa.powf(-1.0 / n) - 1.0)
    }

    /// Minimum inter-peak distance `W` for a series of `len` samples.
    pub fn min_spacing(&self, len: usize) -> usize {
        (self.alpha * len as f64 / self.k_keys as f64 + 1e-9).floor() as usize
    }

    /// Extension `N` before the first and after the last peak.
    pub fn edge_extension(&self, len: usize) -> usize {
        (self.beta * len as f64 / self.k_keys as f64 + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeSegment {
    pub samples: Vec<f64>,
    pub peak_index: usize,
    pub left: usize,
    pub right: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_label: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_label: Option<DomainId>,
}

/// `|x_t - x_{t-1}|` (zero at t = 0) smoothed by a centered 5-sample mean
/// that shrinks at the edges.
pub fn derivative_signal(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let diff: Vec<f64> = (0..n)
        .map(|i| if i == 0 { 0.0 } else { (values[i] - values[i - 1]).abs() })
        .collect();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            diff[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub fn detection_signal(series: &BfiSeries, mode: DetectionSignal) -> Vec<f64> {
    match mode {
        DetectionSignal::Derivative => derivative_signal(&series.values),
        DetectionSignal::Raw => series.values.clone(),
    }
}

/// Candidate indices of the CA-CFAR detector applied to `signal`.
///
/// Index `i` qualifies when it exceeds the scaled mean of its training cells
/// (those beyond the guard band, at most `cfar_train` per side, fewer at the
/// edges) and is the leftmost maximum of its guard span.
pub fn cfar_on_signal(signal: &[f64], params: &SegmentationParams) -> Result<Vec<usize>, SegmentError> {
    let n = signal.len();
    let (train, guard) = (params.cfar_train, params.cfar_guard);
    let needed = 2 * (train + guard) + 1;
    if n <= needed {
        return Err(SegmentError::SeriesTooShort { len: n, needed });
    }
    let tau = params.cfar_scale();
    let mut out = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(guard);
        let hi = (i + guard).min(n - 1);
        let v = signal[i];
        if signal[lo..i].iter().any(|&s| s >= v) || signal[i + 1..=hi].iter().any(|&s| s > v) {
            continue;
        }
        let left = i.saturating_sub(guard + train)..i.saturating_sub(guard);
        let right = (i + guard + 1).min(n)..(i + guard + train + 1).min(n);
        let count = left.len() + right.len();
        let sum: f64 = signal[left].iter().sum::<f64>() + signal[right].iter().sum::<f64>();
        if v > tau * sum / count as f64 {
            out.push(i);
        }
    }
    Ok(out)
}

pub fn cfar_peaks(series: &BfiSeries, params: &SegmentationParams) -> Result<Vec<usize>, SegmentError> {
    if !series.is_gapless() {
        return Err(SegmentError::NotDense);
    }
    cfar_on_signal(&detection_signal(series, params.signal), params)
}

/// Greedy top-K selection: strongest first, keeping only candidates at least
/// `min_spacing` from everything already kept. Result is sorted by index.
pub fn select_topk(
    candidates: &[usize],
    amplitude: &[f64],
    k: usize,
    min_spacing: usize,
) -> Result<Vec<usize>, SegmentError> {
    let chosen = greedy_spaced(candidates, amplitude, Some(k), min_spacing);
    if chosen.len() < k {
        return Err(SegmentError::InsufficientPeaks {
            found: chosen.len(),
            needed: k,
        });
    }
    Ok(chosen)
}

fn greedy_spaced(candidates: &[usize], amplitude: &[f64], limit: Option<usize>, min_spacing: usize) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by(|&a, &b| amplitude[b].total_cmp(&amplitude[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for c in order {
        if limit.is_some_and(|k| chosen.len() >= k) {
            break;
        }
        if chosen.iter().all(|&a| a.abs_diff(c) >= min_spacing) {
            chosen.push(c);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Overlapping segments: interior peaks span their two neighbors, the outer
/// peaks extend `N` samples outward (clamped to the series).
pub fn segment(values: &[f64], peaks: &[usize], params: &SegmentationParams) -> Vec<KeystrokeSegment> {
    let n_len = values.len();
    let ext = params.edge_extension(n_len);
    let k = peaks.len();
    (0..k)
        .map(|j| {
            let left = if j == 0 { peaks[0].saturating_sub(ext) } else { peaks[j - 1] };
            let right = if j + 1 == k {
                (peaks[j] + ext).min(n_len - 1)
            } else {
                peaks[j + 1]
            };
            KeystrokeSegment {
                samples: values[left..=right].to_vec(),
                peak_index: peaks[j],
                left,
                right,
                key_label: None,
                domain_label: None,
            }
        })
        .collect()
}

/// Moves each peak to the largest raw value within `radius`, keeping order.
pub fn refine_peaks(values: &[f64], peaks: &[usize], radius: usize) -> Vec<usize> {
    let mut out: Vec<usize> = peaks
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(radius);
            let hi = (p + radius).min(values.len() - 1);
            (lo..=hi).fold(p, |best, i| if values[i] > values[best] { i } else { best })
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// How the K peaks are chosen among CFAR candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PeakPolicy {
    /// The K strongest spaced candidates.
    #[default]
    TopK,
    /// The last K spaced candidates in time.
    TakeLast,
}

/// CFAR, spacing selection and raw-peak refinement.
pub fn locate_keystrokes(
    series: &BfiSeries,
    params: &SegmentationParams,
    policy: PeakPolicy,
) -> Result<Vec<usize>, SegmentError> {
    params.validate()?;
    if !series.is_gapless() {
        return Err(SegmentError::NotDense);
    }
    let signal = detection_signal(series, params.signal);
    let candidates = cfar_on_signal(&signal, params)?;
    let w = params.min_spacing(series.len()).max(1);
    let k = params.k_keys;
    let peaks = match policy {
        PeakPolicy::TopK => select_topk(&candidates, &signal, k, w)?,
        PeakPolicy::TakeLast => {
            let all = greedy_spaced(&candidates, &signal, None, w);
            if all.len() < k {
                return Err(SegmentError::InsufficientPeaks {
                    found: all.len(),
                    needed: k,
                });
            }
            all[all.len() - k..].to_vec()
        }
    };
    let refined = refine_peaks(&series.values, &peaks, params.cfar_guard);
    if refined.len() < k {
        return Err(SegmentError::InsufficientPeaks {
            found: refined.len(),
            needed: k,
        });
    }
    Ok(refined)
}

/// Full segmentation of a dense series into `params.k_keys` segments.
pub fn segment_series(
    series: &BfiSeries,
    params: &SegmentationParams,
    policy: PeakPolicy,
) -> Result<Vec<KeystrokeSegment>, SegmentError> {
    let peaks = locate_keystrokes(series, params, policy)?;
    Ok(segment(&series.values, &peaks, params))
}

/// Tries each K in `ks` and reports every outcome.
pub fn guess_k(
    series: &BfiSeries,
    params: &SegmentationParams,
    ks: &[usize],
) -> Vec<(usize, Result<Vec<KeystrokeSegment>, SegmentError>)> {
    ks.iter()
        .map(|&k| (k, segment_series(series, &params.with_k(k), PeakPolicy::TopK)))
        .collect()
}

pub fn segments_to_jsonl(segments: &[KeystrokeSegment]) -> String {
    segments
        .iter()
        .map(|s| serde_json::to_string(s).expect("segment serializes") + "\n")
        .collect()
}

pub fn segments_from_jsonl(text: &str) -> Result<Vec<KeystrokeSegment>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
