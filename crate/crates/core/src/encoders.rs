//! Per-modality encoders and concatenation fusion into the layer-0 node states.
//!
//! Text runs through a BiLSTM over the whole conversation; audio and visual
//! features each pass through one affine + tanh layer. The enabled encodings
//! are concatenated in audio, visual, text order and projected to the model
//! width.

use rand::Rng;

use crate::data::{Conversation, Modality};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{BiLstm, Linear, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct EncoderWeights {
    pub text: Option<BiLstm>,
    pub audio: Option<Linear>,
    pub visual: Option<Linear>,
    pub projection: Linear,
}

impl EncoderWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let text = if config.uses(Modality::Text) {
            Some(BiLstm::register(store, "enc.text", config.dims.text, config.text_hidden, rng)?)
        } else {
            None
        };
        let audio = if config.uses(Modality::Audio) {
            Some(Linear::register(store, "enc.audio", config.dims.audio, config.modal_hidden, rng)?)
        } else {
            None
        };
        let visual = if config.uses(Modality::Visual) {
            Some(Linear::register(store, "enc.visual", config.dims.visual, config.modal_hidden, rng)?)
        } else {
            None
        };
        let projection = Linear::register(store, "enc.proj", config.fused_width(), config.hidden, rng)?;
        Ok(Self {
            text,
            audio,
            visual,
            projection,
        })
    }

    pub fn lookup(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            text: config
                .uses(Modality::Text)
                .then(|| BiLstm::lookup(store, "enc.text"))
                .transpose()?,
            audio: config
                .uses(Modality::Audio)
                .then(|| Linear::lookup(store, "enc.audio"))
                .transpose()?,
            visual: config
                .uses(Modality::Visual)
                .then(|| Linear::lookup(store, "enc.visual"))
                .transpose()?,
            projection: Linear::lookup(store, "enc.proj")?,
        })
    }
}

/// Tape handles for one conversation's encodings.
#[derive(Clone, Debug)]
pub struct EncodedConversation {
    /// Fused, projected state per utterance (`[1, D]`).
    pub h0: Vec<Var>,
    pub text: Vec<Var>,
    pub audio: Vec<Var>,
    pub visual: Vec<Var>,
    /// Pre-projection concatenation per utterance.
    pub fused: Vec<Var>,
}

fn feature_rows(tape: &mut Tape, conv: &Conversation, m: Modality, width: usize) -> Result<Vec<Var>> {
    conv.utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let f = u.features(m);
            if f.len() != width {
                return Err(Error::data(format!(
                    "conversation `{}`, utterance {i}: {:?} width {} != {width}",
                    conv.conv_id,
                    m,
                    f.len()
                )));
            }
            Ok(tape.leaf(Tensor::row(f)))
        })
        .collect()
}

pub fn encode_utterances(
    tape: &mut Tape,
    conv: &Conversation,
    store: &ParamStore,
    config: &ModelConfig,
    weights: &EncoderWeights,
) -> Result<EncodedConversation> {
    if config.modalities.is_empty() {
        return Err(Error::config("all modalities are disabled"));
    }
    if conv.utterances.is_empty() {
        return Err(Error::data(format!("conversation `{}` is empty", conv.conv_id)));
    }
    let mut per_utterance = |m: Modality, enc: Option<&Linear>| -> Result<Vec<Var>> {
        let Some(enc) = enc else { return Ok(Vec::new()) };
        let rows = feature_rows(tape, conv, m, config.dims.get(m))?;
        rows.into_iter()
            .map(|x| {
                let a = enc.forward(tape, store, x)?;
                tape.tanh(a)
            })
            .collect()
    };
    let audio = per_utterance(Modality::Audio, weights.audio.as_ref())?;
    let visual = per_utterance(Modality::Visual, weights.visual.as_ref())?;
    let text = match &weights.text {
        Some(lstm) => {
            let rows = feature_rows(tape, conv, Modality::Text, config.dims.text)?;
            lstm.run(tape, store, &rows)?
        }
        None => Vec::new(),
    };

    let mut fused = Vec::with_capacity(conv.len());
    let mut h0 = Vec::with_capacity(conv.len());
    for i in 0..conv.len() {
        let parts: Vec<Var> = [&audio, &visual, &text]
            .into_iter()
            .filter(|enc| !enc.is_empty())
            .map(|enc| enc[i])
            .collect();
        let cat = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_last(&parts)?
        };
        fused.push(cat);
        h0.push(weights.projection.forward(tape, store, cat)?);
    }
    Ok(EncodedConversation {
        h0,
        text,
        audio,
        visual,
        fused,
    })
}
