//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comments start with '#'
//! [model]
//! hidden = 16
//! [train]
//! lr = 0.005
//! ```
//!
//! Keys use the long flag name with `-` replaced by `_`. Unknown sections and
//! keys are rejected so typos do not pass silently.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every accepted `(section, keys)` pair.
pub const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "seed",
            "conversations",
            "min_utterances",
            "max_utterances",
            "speakers",
            "p_shift",
            "labels",
            "text_dim",
            "audio_dim",
            "visual_dim",
            "text_signal",
            "audio_signal",
            "visual_signal",
            "noise",
            "split",
        ],
    ),
    ("model", &["hidden", "layers", "dropout", "omega", "modalities"]),
    ("train", &["preset", "lr", "epochs", "seed", "jobs", "clip_norm"]),
    ("curriculum", &["enabled", "buckets"]),
    ("sweep", &["buckets"]),
    ("gradcheck", &["utterances", "eps", "tol"]),
];

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    // (section, key) -> (raw value, 1-based line)
    values: BTreeMap<(String, String), (String, usize)>,
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::config(format!("config line {line_no}: {msg}"));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| err(format!("key `{key}` appears before any [section]")))?;
            let keys = KNOWN_KEYS.iter().find(|(s, _)| *s == sec).unwrap().1;
            if !keys.contains(&key) {
                return Err(err(format!(
                    "unknown key `{key}` in [{sec}] (known: {})",
                    keys.join(", ")
                )));
            }
            let slot = (sec.to_string(), key.to_string());
            if values.contains_key(&slot) {
                return Err(err(format!("duplicate key `{key}` in [{sec}]")));
            }
            values.insert(slot, (value.to_string(), line_no));
        }
        Ok(Self { values })
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.values.get(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::config(format!("config line {line}: bad value `{v}` for [{section}] {key}"))
            }),
        }
    }
}
