//! Password candidates under the product of per-keystroke distributions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::KiError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasswordCandidate {
    pub password: String,
    pub probability: f64,
}

/// Search state: rank of the chosen entry in each position's sorted list.
struct State {
    prob: f64,
    seq: Vec<char>,
    ranks: Vec<usize>,
    /// Lowest position this state may still advance (avoids duplicates).
    pivot: usize,
}

impl State {
    /// Higher probability first, then lexicographically smaller sequence.
    fn better(&self, other: &Self) -> Ordering {
        self.prob.total_cmp(&other.prob).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        self.better(other) == Ordering::Equal
    }
}
impl Eq for State {}
impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        self.better(other)
    }
}

fn check_dists(dists: &[Vec<f64>], keys: &[char]) -> Result<(), KiError> {
    for (i, d) in dists.iter().enumerate() {
        if d.len() != keys.len() {
            return Err(KiError::BadDistribution(format!(
                "position {i} has {} entries for {} keys",
                d.len(),
                keys.len()
            )));
        }
        if d.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(KiError::BadDistribution(format!("position {i} has a negative or non-finite entry")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(KiError::BadDistribution(format!("position {i} sums to {s}")));
        }
    }
    Ok(())
}

/// The `n` most probable key sequences, best first; equal probabilities are
/// ordered lexicographically and zero-probability sequences are omitted.
///
/// Best-first search over partial rank vectors: each position's entries are
/// sorted (probability descending, key ascending), and a state's successors
/// advance one position at or after its pivot, so every successor ranks
/// after its parent and each sequence is generated once.
pub fn rank_passwords(dists: &[Vec<f64>], keys: &[char], n: usize) -> Result<Vec<PasswordCandidate>, KiError> {
    check_dists(dists, keys)?;
    if n == 0 || dists.is_empty() {
        return Ok(Vec::new());
    }
    let sorted: Vec<Vec<(f64, char)>> = dists
        .iter()
        .map(|d| {
            let mut v: Vec<(f64, char)> = d.iter().copied().zip(keys.iter().copied()).collect();
            v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            v
        })
        .collect();
    let make = |ranks: Vec<usize>, pivot: usize| {
        let mut prob = 1.0;
        let mut seq = Vec::with_capacity(ranks.len());
        for (pos, &r) in ranks.iter().enumerate() {
            prob *= sorted[pos][r].0;
            seq.push(sorted[pos][r].1);
        }
        State { prob, seq, ranks, pivot }
    };
    let mut heap = BinaryHeap::new();
    heap.push(make(vec![0; dists.len()], 0));
    let mut out = Vec::with_capacity(n);
    while let Some(s) = heap.pop() {
        // everything still queued is at most this likely
        if s.prob <= 0.0 {
            break;
        }
        for pos in s.pivot..s.ranks.len() {
            if s.ranks[pos] + 1 < keys.len() {
                let mut r = s.ranks.clone();
                r[pos] += 1;
                heap.push(make(r, pos));
            }
        }
        out.push(PasswordCandidate {
            password: s.seq.iter().collect(),
            probability: s.prob,
        });
        if out.len() == n {
            break;
        }
    }
    Ok(out)
}

/// Fraction of trials whose true password is among the first `n` candidates.
pub fn top_n_accuracy(results: &[(Vec<PasswordCandidate>, String)], n: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|(cands, truth)| cands.iter().take(n).any(|c| &c.password == truth))
        .count();
    hits as f64 / results.len() as f64
}

/// 1-based rank of `truth` among `candidates`.
pub fn rank_of(candidates: &[PasswordCandidate], truth: &str) -> Option<usize> {
    candidates.iter().position(|c| c.password == truth).map(|i| i + 1)
}
