//! Emotional-shift difficulty and the baby-step bucket scheduler.
//!
//! A shift is a label change between two consecutive utterances of the same
//! speaker. The difficulty of a conversation is
//! `(N_shift + N_sp) / (N_u + N_sp)`, with the speaker count acting as
//! smoothing. The scheduler sorts conversations by difficulty, cuts them into
//! `k` near-equal buckets and, at epoch `e`, trains on the union of the first
//! `min(e, k)` buckets.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use crate::data::Conversation;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyScore {
    pub conv_id: String,
    pub shifts: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub dif: f64,
}

impl DifficultyScore {
    pub fn from_counts(conv_id: impl Into<String>, shifts: usize, speakers: usize, utterances: usize) -> Self {
        let (num, den) = (shifts + speakers, utterances + speakers);
        Self {
            conv_id: conv_id.into(),
            shifts,
            speakers,
            utterances,
            dif: num as f64 / den as f64,
        }
    }

    /// The difficulty as an exact `(numerator, denominator)` pair.
    pub fn ratio(&self) -> (usize, usize) {
        (self.shifts + self.speakers, self.utterances + self.speakers)
    }

    /// Exact ordering by difficulty, then by `conv_id`.
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        let (a, b) = self.ratio();
        let (c, d) = other.ratio();
        ((a as u128) * (d as u128))
            .cmp(&((c as u128) * (b as u128)))
            .then_with(|| self.conv_id.cmp(&other.conv_id))
    }
}

/// Counts per-speaker emotion changes; every utterance must be labeled.
pub fn difficulty(conv: &Conversation) -> Result<DifficultyScore> {
    let mut order: Vec<&str> = Vec::new();
    let mut sequences: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, u) in conv.utterances.iter().enumerate() {
        let label = u.label.ok_or_else(|| {
            Error::data(format!(
                "conversation `{}`, utterance {i}: difficulty needs labels",
                conv.conv_id
            ))
        })?;
        let seq = sequences.entry(u.speaker.as_str()).or_insert_with(|| {
            order.push(u.speaker.as_str());
            Vec::new()
        });
        seq.push(label);
    }
    let shifts = order
        .iter()
        .map(|s| sequences[s].windows(2).filter(|w| w[0] != w[1]).count())
        .sum();
    Ok(DifficultyScore::from_counts(
        conv.conv_id.clone(),
        shifts,
        order.len(),
        conv.utterances.len(),
    ))
}

pub fn difficulties(convs: &[Conversation]) -> Result<Vec<DifficultyScore>> {
    convs.iter().map(difficulty).collect()
}

/// Bucket partition plus the epoch budget.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulePlan {
    /// Easiest first; each bucket lists conv_ids in difficulty order.
    pub buckets: Vec<Vec<String>>,
    pub epochs: usize,
}

impl SchedulePlan {
    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// Training set of 1-based `epoch`: buckets `1..=min(epoch, k)`.
    pub fn epoch_set(&self, epoch: usize) -> Vec<&str> {
        let upto = epoch.min(self.buckets.len());
        self.buckets[..upto]
            .iter()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn epoch_sizes(&self) -> Vec<usize> {
        (1..=self.epochs).map(|e| self.epoch_set(e).len()).collect()
    }

    /// Bucket index (0-based) of each conv_id.
    pub fn assignment(&self) -> HashMap<&str, usize> {
        self.buckets
            .iter()
            .enumerate()
            .flat_map(|(b, ids)| ids.iter().map(move |id| (id.as_str(), b)))
            .collect()
    }
}

/// Ascending sort by exact difficulty, ties by conv_id.
pub fn sort_scores(scores: &[DifficultyScore]) -> Vec<DifficultyScore> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(DifficultyScore::cmp_rank);
    sorted
}

// Sizes of k contiguous buckets over n items; the first n % k get one extra.
fn bucket_sizes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..k).map(move |b| n / k + usize::from(b < n % k))
}

pub fn build_schedule(scores: &[DifficultyScore], k: usize, epochs: usize) -> Result<SchedulePlan> {
    if k == 0 {
        return Err(Error::config("bucket count must be >= 1"));
    }
    if k > scores.len() {
        return Err(Error::config(format!(
            "{k} buckets requested for {} conversations",
            scores.len()
        )));
    }
    if epochs < k {
        return Err(Error::config(format!(
            "{epochs} epochs cannot cover {k} buckets (need epochs >= buckets)"
        )));
    }
    let sorted = sort_scores(scores);
    let mut rest = sorted.iter();
    let buckets = bucket_sizes(sorted.len(), k)
        .map(|size| rest.by_ref().take(size).map(|s| s.conv_id.clone()).collect())
        .collect();
    Ok(SchedulePlan { buckets, epochs })
}

/// Tab-separated ranking, easiest first, with the bucket each conversation lands in.
///
/// `buckets` is clamped to `1..=scores.len()`.
pub fn rank_report(scores: &[DifficultyScore], buckets: usize) -> String {
    let mut out = String::from("conv_id\tn_shift\tn_sp\tn_u\tdif\tbucket\n");
    if scores.is_empty() {
        return out;
    }
    let sorted = sort_scores(scores);
    let k = buckets.clamp(1, sorted.len());
    let bucket_of = bucket_sizes(sorted.len(), k)
        .enumerate()
        .flat_map(|(b, size)| std::iter::repeat_n(b + 1, size));
    for (s, b) in sorted.iter().zip(bucket_of) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{}",
            s.conv_id, s.shifts, s.speakers, s.utterances, s.dif, b
        )
        .unwrap();
    }
    out
}
