//! Conversations, JSONL ingestion and the synthetic corpus generator.
//!
//! A dataset file is JSON lines: a header object naming the label set and the
//! per-modality feature widths, then one conversation per line. A modality
//! with width 0 is absent for the whole dataset.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn short(self) -> char {
        match self {
            Modality::Text => 't',
            Modality::Audio => 'a',
            Modality::Visual => 'v',
        }
    }

    pub fn from_short(c: char) -> Option<Self> {
        match c {
            't' => Some(Modality::Text),
            'a' => Some(Modality::Audio),
            'v' => Some(Modality::Visual),
            _ => None,
        }
    }
}

/// Feature widths per modality; 0 disables a modality dataset-wide.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub text: usize,
    pub audio: usize,
    pub visual: usize,
}

impl Dims {
    pub fn new(text: usize, audio: usize, visual: usize) -> Self {
        Self {
            text,
            audio,
            visual,
        }
    }

    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split `{s}` (train, valid, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    /// Index into the dataset's label set; `None` for unlabeled (inference-only) input.
    pub label: Option<usize>,
    pub text_feat: Vec<f64>,
    pub audio_feat: Vec<f64>,
    pub visual_feat: Vec<f64>,
}

impl Utterance {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Text => &self.text_feat,
            Modality::Audio => &self.audio_feat,
            Modality::Visual => &self.visual_feat,
        }
    }

    pub fn features_mut(&mut self, m: Modality) -> &mut Vec<f64> {
        match m {
            Modality::Text => &mut self.text_feat,
            Modality::Audio => &mut self.audio_feat,
            Modality::Visual => &mut self.visual_feat,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub conv_id: String,
    /// In temporal order.
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.speaker.as_str()).collect()
    }

    /// All labels, or `None` if any utterance is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.utterances.iter().map(|u| u.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub dims: Dims,
    pub conversations: Vec<Conversation>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    pub fn conversation(&self, conv_id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conv_id == conv_id)
    }

    /// Fraction of labeled utterances carrying the most frequent label.
    pub fn majority_baseline(&self) -> f64 {
        let mut counts = vec![0usize; self.labels.len()];
        let mut total = 0usize;
        for u in self.conversations.iter().flat_map(|c| &c.utterances) {
            if let Some(l) = u.label {
                counts[l] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return 0.0;
        }
        *counts.iter().max().unwrap() as f64 / total as f64
    }

    /// Checks the header invariants and every conversation.
    pub fn validate(&self) -> Result<()> {
        validate_label_set(&self.labels)?;
        let mut seen = HashSet::new();
        for conv in &self.conversations {
            if !seen.insert(conv.conv_id.as_str()) {
                return Err(Error::data(format!("duplicate conv_id `{}`", conv.conv_id)));
            }
            if let Some(v) = validate(conv, self.dims, self.labels.len()).into_iter().next() {
                return Err(Error::Data(v.to_string()));
            }
        }
        Ok(())
    }
}

fn validate_label_set(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::data("label set is empty"));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::data(format!("duplicate label name `{l}`")));
        }
    }
    Ok(())
}

/// One broken invariant of a conversation.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub conv_id: String,
    pub utterance: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.utterance {
            Some(i) => write!(f, "conversation `{}`, utterance {}: {}", self.conv_id, i, self.message),
            None => write!(f, "conversation `{}`: {}", self.conv_id, self.message),
        }
    }
}

/// Every invariant violation in `conv`; empty when valid.
pub fn validate(conv: &Conversation, dims: Dims, num_labels: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |utterance, message: String| {
        out.push(Violation {
            conv_id: conv.conv_id.clone(),
            utterance,
            message,
        })
    };
    if conv.utterances.is_empty() {
        push(None, "has no utterances".into());
    }
    for (i, u) in conv.utterances.iter().enumerate() {
        if let Some(l) = u.label {
            if l >= num_labels {
                push(Some(i), format!("label index {l} outside label set of size {num_labels}"));
            }
        }
        for m in Modality::ALL {
            let feats = u.features(m);
            let want = dims.get(m);
            if feats.len() != want {
                push(
                    Some(i),
                    format!("{:?} feature length {} != declared {}", m, feats.len(), want).to_lowercase(),
                );
            } else if feats.iter().any(|v| !v.is_finite()) {
                push(Some(i), format!("{m:?} features contain non-finite values").to_lowercase());
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    labels: Vec<String>,
    dims: Dims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: String,
    label: Option<String>,
    #[serde(default)]
    text_feat: Vec<f64>,
    #[serde(default)]
    audio_feat: Vec<f64>,
    #[serde(default)]
    visual_feat: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConversationRecord {
    conv_id: String,
    utterances: Vec<UtteranceRecord>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(file)
}

/// Parses and validates a JSONL dataset.
pub fn read_dataset(reader: impl Read) -> Result<Dataset> {
    let mut header: Option<HeaderRecord> = None;
    let mut conversations = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        };
        let Some(head) = &header else {
            let h: HeaderRecord = serde_json::from_str(&line).map_err(parse_err)?;
            validate_label_set(&h.labels)?;
            header = Some(h);
            continue;
        };
        let rec: ConversationRecord = serde_json::from_str(&line).map_err(parse_err)?;
        if !seen.insert(rec.conv_id.clone()) {
            return Err(Error::data(format!("line {line_no}: duplicate conv_id `{}`", rec.conv_id)));
        }
        let mut utterances = Vec::with_capacity(rec.utterances.len());
        for (i, u) in rec.utterances.into_iter().enumerate() {
            let label = match u.label {
                None => None,
                Some(name) => Some(head.labels.iter().position(|l| *l == name).ok_or_else(|| {
                    Error::data(format!(
                        "conversation `{}`, utterance {i}: unknown label `{name}`",
                        rec.conv_id
                    ))
                })?),
            };
            utterances.push(Utterance {
                speaker: u.speaker,
                label,
                text_feat: u.text_feat,
                audio_feat: u.audio_feat,
                visual_feat: u.visual_feat,
            });
        }
        let conv = Conversation {
            conv_id: rec.conv_id,
            utterances,
        };
        if let Some(v) = validate(&conv, head.dims, head.labels.len()).into_iter().next() {
            return Err(Error::Data(v.to_string()));
        }
        conversations.push(conv);
    }
    let header = header.ok_or_else(|| Error::data("no conversations"))?;
    if conversations.is_empty() {
        return Err(Error::data("no conversations"));
    }
    Ok(Dataset {
        labels: header.labels,
        dims: header.dims,
        conversations,
        split: header.split,
    })
}

pub fn write_dataset(dataset: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header = HeaderRecord {
        labels: dataset.labels.clone(),
        dims: dataset.dims,
        split: dataset.split,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    writeln!(w)?;
    for conv in &dataset.conversations {
        let rec = ConversationRecord {
            conv_id: conv.conv_id.clone(),
            utterances: conv
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker.clone(),
                    label: u.label.map(|l| dataset.labels[l].clone()),
                    text_feat: u.text_feat.clone(),
                    audio_feat: u.audio_feat.clone(),
                    visual_feat: u.visual_feat.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, File::create(path)?)
}

const EMOTION_NAMES: [&str; 6] = ["happy", "sad", "neutral", "angry", "excited", "frustrated"];

/// Parameters of the synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub conversations: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub speakers: usize,
    /// Probability that a speaker's next utterance changes emotion.
    pub p_shift: f64,
    pub num_labels: usize,
    pub dims: Dims,
    /// Scale of the label embedding per modality; noise is unit-variance Gaussian times `noise_std`.
    pub text_signal: f64,
    pub audio_signal: f64,
    pub visual_signal: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub split: Option<Split>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            conversations: 100,
            min_utterances: 8,
            max_utterances: 16,
            speakers: 2,
            p_shift: 0.3,
            num_labels: 4,
            dims: Dims::new(12, 8, 6),
            text_signal: 2.0,
            audio_signal: 1.0,
            visual_signal: 0.5,
            noise_std: 1.0,
            seed: 0,
            split: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.p_shift) {
            return bad(format!("p_shift {} not in [0, 1]", self.p_shift));
        }
        if self.dims.text == 0 || self.dims.audio == 0 || self.dims.visual == 0 {
            return bad("synthetic feature dims must be >= 1".into());
        }
        if self.conversations == 0 {
            return bad("conversation count must be >= 1".into());
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad(format!(
                "utterance range {}..={} is empty or starts at 0",
                self.min_utterances, self.max_utterances
            ));
        }
        if self.speakers == 0 {
            return bad("speaker count must be >= 1".into());
        }
        if self.num_labels < 2 {
            return bad("at least two labels are needed".into());
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return bad("noise_std must be >= 0".into());
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        if self.num_labels <= EMOTION_NAMES.len() {
            EMOTION_NAMES[..self.num_labels].iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.num_labels).map(|i| format!("emotion_{i}")).collect()
        }
    }
}

fn speaker_name(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("S{i}")
    }
}

/// Generates a corpus in which each speaker's emotions follow a Markov chain.
///
/// A speaker keeps its previous label with probability `1 - p_shift` and
/// otherwise switches uniformly to one of the other labels. Features are the
/// label one-hot, tiled to the modality width and scaled by the modality's
/// signal level, plus Gaussian noise.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let r = config.num_labels;
    let prefix = config.split.map_or("conv", Split::as_str);

    let mut conversations = Vec::with_capacity(config.conversations);
    for c in 0..config.conversations {
        let n = rng.random_range(config.min_utterances..=config.max_utterances);
        let mut last: Vec<Option<usize>> = vec![None; config.speakers];
        let mut utterances = Vec::with_capacity(n);
        for _ in 0..n {
            let s = rng.random_range(0..config.speakers);
            let label = match last[s] {
                None => rng.random_range(0..r),
                Some(prev) => {
                    if rng.random::<f64>() < config.p_shift {
                        let k = rng.random_range(0..r - 1);
                        if k >= prev {
                            k + 1
                        } else {
                            k
                        }
                    } else {
                        prev
                    }
                }
            };
            last[s] = Some(label);
            let mut feats = |dim: usize, signal: f64| -> Vec<f64> {
                (0..dim)
                    .map(|j| {
                        let hot = if j % r == label { signal } else { 0.0 };
                        hot + noise.sample(&mut rng)
                    })
                    .collect()
            };
            let text_feat = feats(config.dims.text, config.text_signal);
            let audio_feat = feats(config.dims.audio, config.audio_signal);
            let visual_feat = feats(config.dims.visual, config.visual_signal);
            utterances.push(Utterance {
                speaker: speaker_name(s),
                label: Some(label),
                text_feat,
                audio_feat,
                visual_feat,
            });
        }
        conversations.push(Conversation {
            conv_id: format!("{prefix}_{c:04}"),
            utterances,
        });
    }
    Ok(Dataset {
        labels: config.label_names(),
        dims: config.dims,
        conversations,
        split: config.split,
    })
}
