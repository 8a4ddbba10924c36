//! One-dimensional BFI series: scalar feature extraction, uniform
//! resampling with gap tagging, normalization and the viability check.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{angle_dequantize, AngleKind, BfiFrame};
use crate::steering::SteeringMatrix;

/// Value stored at missing samples.
pub const GAP: f64 = -1.0;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("no samples to resample")]
    EmptyInput,
    #[error("series has {len} samples, at least {needed} required")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("bad series file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled series; gaps hold [`GAP`] and are flagged in `gap_mask`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfiSeries {
    pub fs_hz: f64,
    pub t0_us: i64,
    pub values: Vec<f64>,
    pub gap_mask: Vec<bool>,
}

impl BfiSeries {
    /// Gapless series from raw values (not normalized).
    pub fn dense(fs_hz: f64, t0_us: i64, values: Vec<f64>) -> Self {
        let gap_mask = vec![false; values.len()];
        Self {
            fs_hz,
            t0_us,
            values,
            gap_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_gapless(&self) -> bool {
        !self.gap_mask.iter().any(|&g| g)
    }

    pub fn gap_count(&self) -> usize {
        self.gap_mask.iter().filter(|&&g| g).count()
    }

    /// Checks `values[i] == -1` exactly where `gap_mask[i]`, and range `[0, 1]` elsewhere.
    pub fn check_invariants(&self) -> bool {
        self.values.len() == self.gap_mask.len()
            && !self.values.is_empty()
            && self
                .values
                .iter()
                .zip(&self.gap_mask)
                .all(|(&v, &g)| if g { v == GAP } else { (0.0..=1.0).contains(&v) })
    }

    pub fn time_s(&self, i: usize) -> f64 {
        self.t0_us as f64 / 1e6 + i as f64 / self.fs_hz
    }

    /// Longest run of consecutive gaps.
    pub fn longest_gap_run(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for &g in &self.gap_mask {
            run = if g { run + 1 } else { 0 };
            best = best.max(run);
        }
        best
    }
}

/// Min-max normalizes the non-gap entries in place; a constant series maps to 0.
pub fn minmax_normalize(values: &mut [f64], gap_mask: &[bool]) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &g) in values.iter().zip(gap_mask) {
        if !g {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = hi - lo;
    for (v, &g) in values.iter_mut().zip(gap_mask) {
        *v = if g {
            GAP
        } else if range > 0.0 {
            ((*v - lo) / range).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
}

/// Which scalar of a report becomes the series value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSelector {
    /// First quantized phi as a real number.
    #[default]
    FirstPhiQ,
    /// `|V[0][0]|` of the first subcarrier.
    V00Mag,
    /// Mean of all dequantized phi angles.
    PhiMean,
}

impl std::str::FromStr for FeatureSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "firstphiq" | "first-phi-q" => Ok(Self::FirstPhiQ),
            "v00mag" | "v00-mag" => Ok(Self::V00Mag),
            "phimean" | "phi-mean" => Ok(Self::PhiMean),
            _ => Err(format!("unknown feature selector `{s}` (firstphiq, v00mag, phimean)")),
        }
    }
}

pub fn extract_feature(v: &SteeringMatrix, frame: &BfiFrame, selector: FeatureSelector) -> f64 {
    match selector {
        FeatureSelector::FirstPhiQ => frame.phi_q.first().map_or(0.0, |&q| q as f64),
        FeatureSelector::V00Mag => v.at(0, 0).norm(),
        FeatureSelector::PhiMean => {
            if frame.phi_q.is_empty() {
                return 0.0;
            }
            let bits = frame.codebook.phi_bits();
            let sum: f64 = frame
                .phi_q
                .iter()
                .map(|&q| angle_dequantize(q as u32, bits, AngleKind::Phi).unwrap_or(0.0))
                .sum();
            sum / frame.phi_q.len() as f64
        }
    }
}

/// Resamples `(timestamp_us, value)` pairs onto a uniform `fs_hz` grid
/// starting at the earliest timestamp.
///
/// A grid point is interpolated only when it has a sample within one grid
/// period on each side; otherwise it becomes a gap. Non-gap values are then
/// min-max normalized.
pub fn resample(samples: &[(i64, f64)], fs_hz: f64) -> Result<BfiSeries, SeriesError> {
    if samples.is_empty() {
        return Err(SeriesError::EmptyInput);
    }
    let mut s = samples.to_vec();
    s.sort_by_key(|&(t, _)| t);
    let t_first = s[0].0;
    let t_last = s[s.len() - 1].0;
    let period_us = 1e6 / fs_hz;
    let n = ((t_last - t_first) as f64 * fs_hz / 1e6 + 1e-9).floor() as usize + 1;

    let mut values = Vec::with_capacity(n);
    let mut gap_mask = Vec::with_capacity(n);
    // index of the first sample with t > grid time
    let mut j = 0;
    for k in 0..n {
        let g = t_first as f64 + k as f64 * period_us;
        while j < s.len() && (s[j].0 as f64) <= g {
            j += 1;
        }
        let left = j.checked_sub(1).map(|i| s[i]);
        let exact = left.filter(|&(t, _)| t as f64 == g);
        let right = if exact.is_some() { exact } else { s.get(j).copied() };
        let value = match (left, right) {
            (Some((tl, vl)), Some((tr, vr)))
                if g - tl as f64 <= period_us + 1e-6 && tr as f64 - g <= period_us + 1e-6 =>
            {
                if tr == tl {
                    Some(vl)
                } else {
                    let w = (g - tl as f64) / (tr - tl) as f64;
                    Some(vl + (vr - vl) * w)
                }
            }
            _ => None,
        };
        gap_mask.push(value.is_none());
        values.push(value.unwrap_or(GAP));
    }
    minmax_normalize(&mut values, &gap_mask);
    Ok(BfiSeries {
        fs_hz,
        t0_us: t_first,
        values,
        gap_mask,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Viability {
    Viable,
    AttackFailed,
}

/// Window length in samples for a `window_s` check at the series rate.
pub fn viability_window(fs_hz: f64, window_s: f64) -> usize {
    ((fs_hz * window_s) + 1e-9).floor().max(1.0) as usize
}

/// Fails the attack when any sliding window of `window_s` seconds contains a
/// contiguous gap covering at least half of it.
pub fn viability_check(series: &BfiSeries, window_s: f64) -> Result<Viability, SeriesError> {
    let w = viability_window(series.fs_hz, window_s);
    if series.len() < w {
        return Err(SeriesError::SeriesTooShort {
            len: series.len(),
            needed: w,
        });
    }
    // Any run of r >= w/2 gaps fits (at least w/2 of it) inside some window
    // because the series is at least one window long.
    Ok(if 2 * series.longest_gap_run() >= w {
        Viability::AttackFailed
    } else {
        Viability::Viable
    })
}

pub fn series_to_csv(series: &BfiSeries) -> String {
    let mut out = String::from("t_s,value,gap\n");
    for (i, (&v, &g)) in series.values.iter().zip(&series.gap_mask).enumerate() {
        let _ = writeln!(out, "{:.6},{},{}", series.time_s(i), v, g as u8);
    }
    out
}

/// Parses the `t_s,value,gap` format. The rate is taken from `fs_hint` or
/// inferred from the time column.
pub fn series_from_csv(text: &str, fs_hint: Option<f64>) -> Result<BfiSeries, SeriesError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SeriesError::BadFile("empty file".into()))?;
    if header.trim() != "t_s,value,gap" {
        return Err(SeriesError::BadFile(format!("unexpected header `{header}`")));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut gaps = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || SeriesError::BadFile(format!("row {}: `{line}`", i + 2));
        let mut it = line.split(',');
        let t: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let v: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let g = match it.next().map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        times.push(t);
        values.push(if g { GAP } else { v });
        gaps.push(g);
    }
    if values.is_empty() {
        return Err(SeriesError::BadFile("no rows".into()));
    }
    let fs_hz = match fs_hint {
        Some(fs) => fs,
        None if times.len() >= 2 => {
            let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
            if dt <= 0.0 {
                return Err(SeriesError::BadFile("time column is not increasing".into()));
            }
            (1.0 / dt * 1e3).round() / 1e3
        }
        None => 40.0,
    };
    Ok(BfiSeries {
        fs_hz,
        t0_us: (times[0] * 1e6).round() as i64,
        values,
        gap_mask: gaps,
    })
}

pub fn write_series_csv(path: &Path, series: &BfiSeries) -> Result<(), SeriesError> {
    std::fs::write(path, series_to_csv(series))?;
    Ok(())
}

pub fn read_series_csv(path: &Path, fs_hint: Option<f64>) -> Result<BfiSeries, SeriesError> {
    series_from_csv(&std::fs::read_to_string(path)?, fs_hint)
}
