//! The layered DAG network, its classifier and loss.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dag::{build_dag, ConversationDag, Relation};
use crate::data::{Conversation, Dims, Modality};
use crate::encoders::{encode_utterances, EncodedConversation, EncoderWeights};
use crate::error::{Error, Result};
use crate::nn::{GruCell, Linear, ParamId, ParamStore, Tape, Tensor, Var};

/// Which modalities feed the fusion layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalitySet {
    pub text: bool,
    pub audio: bool,
    pub visual: bool,
}

impl ModalitySet {
    pub const ALL: ModalitySet = ModalitySet {
        text: true,
        audio: true,
        visual: true,
    };

    pub fn only(ms: &[Modality]) -> Self {
        Self {
            text: ms.contains(&Modality::Text),
            audio: ms.contains(&Modality::Audio),
            visual: ms.contains(&Modality::Visual),
        }
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Text => self.text,
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.text || self.audio || self.visual)
    }

    /// Parses `t,a,v` style lists.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = part
                .chars()
                .next()
                .filter(|_| part.len() == 1)
                .and_then(Modality::from_short)
                .ok_or_else(|| Error::config(format!("unknown modality `{part}` (use t, a, v)")))?;
            out.push(m);
        }
        let set = Self::only(&out);
        if set.is_empty() {
            return Err(Error::config("no modality selected"));
        }
        Ok(set)
    }

    /// Drops modalities the dataset does not carry.
    pub fn restricted_to(self, dims: Dims) -> Self {
        Self {
            text: self.text && dims.text > 0,
            audio: self.audio && dims.audio > 0,
            visual: self.visual && dims.visual > 0,
        }
    }
}

impl std::fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = Modality::ALL
            .into_iter()
            .filter(|m| self.contains(*m))
            .map(|m| m.short().to_string())
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Architecture hyperparameters. Everything here is part of the checkpoint fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub modalities: ModalitySet,
    /// Node state width `D`.
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// DAG window `ω`.
    pub window: usize,
    pub num_labels: usize,
    /// BiLSTM hidden size per direction.
    pub text_hidden: usize,
    /// Output width of the audio and visual encoders.
    pub modal_hidden: usize,
    pub classifier_hidden: usize,
    /// Include the fused input state as the first block of the final representation.
    pub include_input_layer: bool,
}

impl ModelConfig {
    pub fn new(dims: Dims, num_labels: usize, hidden: usize, layers: usize) -> Self {
        Self {
            dims,
            modalities: ModalitySet::ALL.restricted_to(dims),
            hidden,
            layers,
            dropout: 0.0,
            window: 1,
            num_labels,
            text_hidden: (hidden / 2).max(1),
            modal_hidden: hidden,
            classifier_hidden: hidden,
            include_input_layer: true,
        }
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.modalities.contains(m) && self.dims.get(m) > 0
    }

    /// Width of the concatenated modality encodings.
    pub fn fused_width(&self) -> usize {
        let mut w = 0;
        if self.uses(Modality::Audio) {
            w += self.modal_hidden;
        }
        if self.uses(Modality::Visual) {
            w += self.modal_hidden;
        }
        if self.uses(Modality::Text) {
            w += 2 * self.text_hidden;
        }
        w
    }

    /// Width of the final per-utterance representation.
    pub fn representation_width(&self) -> usize {
        (self.layers + usize::from(self.include_input_layer)) * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::config("layers must be >= 1"));
        }
        if self.hidden < 1 || self.text_hidden < 1 || self.modal_hidden < 1 || self.classifier_hidden < 1 {
            return Err(Error::config("hidden sizes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.num_labels < 2 {
            return Err(Error::config("need at least 2 labels"));
        }
        if self.window < 1 {
            return Err(Error::config("omega must be >= 1"));
        }
        for m in Modality::ALL {
            if self.modalities.contains(m) && self.dims.get(m) == 0 {
                return Err(Error::config(format!(
                    "modality {m:?} is enabled but the data has no {m:?} features"
                )
                .to_lowercase()));
            }
        }
        if self.modalities.is_empty() {
            return Err(Error::config("all modalities are disabled"));
        }
        Ok(())
    }

    /// Canonical `key=value` listing, one per line.
    pub fn canonical(&self) -> String {
        format!(
            "dims.text={}\ndims.audio={}\ndims.visual={}\nmodalities={}\nhidden={}\nlayers={}\n\
             dropout={}\nomega={}\nlabels={}\ntext_hidden={}\nmodal_hidden={}\n\
             classifier_hidden={}\ninclude_input_layer={}\n",
            self.dims.text,
            self.dims.audio,
            self.dims.visual,
            self.modalities,
            self.hidden,
            self.layers,
            self.dropout,
            self.window,
            self.num_labels,
            self.text_hidden,
            self.modal_hidden,
            self.classifier_hidden,
            self.include_input_layer
        )
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(Dims::default(), 0, 0, 0);
        let mut seen = 0;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad value for `{k}`: `{v}`")))
            };
            match k {
                "dims.text" => cfg.dims.text = num(v)?,
                "dims.audio" => cfg.dims.audio = num(v)?,
                "dims.visual" => cfg.dims.visual = num(v)?,
                "modalities" => cfg.modalities = ModalitySet::parse(v)?,
                "hidden" => cfg.hidden = num(v)?,
                "layers" => cfg.layers = num(v)?,
                "dropout" => {
                    cfg.dropout = v
                        .parse()
                        .map_err(|_| Error::Checkpoint(format!("bad dropout `{v}`")))?
                }
                "omega" => cfg.window = num(v)?,
                "labels" => cfg.num_labels = num(v)?,
                "text_hidden" => cfg.text_hidden = num(v)?,
                "modal_hidden" => cfg.modal_hidden = num(v)?,
                "classifier_hidden" => cfg.classifier_hidden = num(v)?,
                "include_input_layer" => cfg.include_input_layer = v == "true",
                _ => return Err(Error::Checkpoint(format!("unknown config key `{k}`"))),
            }
            seen += 1;
        }
        if seen != 13 {
            return Err(Error::Checkpoint(format!("config has {seen} of 13 keys")));
        }
        Ok(cfg)
    }
}

/// Weights of one DAG layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerWeights {
    /// `[2D, 1]` scoring vector over `[H_j ‖ H_i^{l-1}]`.
    pub attention: ParamId,
    pub relation_diff: ParamId,
    pub relation_same: ParamId,
    /// Node information unit: input `H^{l-1}_i`, hidden `M_i`.
    pub node_gru: GruCell,
    /// Context information unit: input `M_i`, hidden `H^{l-1}_i`.
    pub context_gru: GruCell,
}

impl LayerWeights {
    fn prefix(layer: usize) -> String {
        format!("layer{layer}")
    }

    pub fn register(store: &mut ParamStore, layer: usize, d: usize, rng: &mut impl RngCore) -> Result<Self> {
        let p = Self::prefix(layer);
        Ok(Self {
            attention: store.insert_uniform(format!("{p}.attn"), 2 * d, 1, rng)?,
            relation_diff: store.insert_uniform(format!("{p}.rel_diff"), d, d, rng)?,
            relation_same: store.insert_uniform(format!("{p}.rel_same"), d, d, rng)?,
            node_gru: GruCell::register(store, &format!("{p}.gru_node"), d, d, rng)?,
            context_gru: GruCell::register(store, &format!("{p}.gru_ctx"), d, d, rng)?,
        })
    }

    pub fn lookup(store: &ParamStore, layer: usize) -> Result<Self> {
        let p = Self::prefix(layer);
        Ok(Self {
            attention: store.id(&format!("{p}.attn"))?,
            relation_diff: store.id(&format!("{p}.rel_diff"))?,
            relation_same: store.id(&format!("{p}.rel_same"))?,
            node_gru: GruCell::lookup(store, &format!("{p}.gru_node"))?,
            context_gru: GruCell::lookup(store, &format!("{p}.gru_ctx"))?,
        })
    }
}

/// Resolved handles for every weight of a model.
#[derive(Clone, Debug)]
pub struct Weights {
    pub encoders: EncoderWeights,
    pub layers: Vec<LayerWeights>,
    pub classifier_hidden: Linear,
    pub classifier_out: Linear,
}

impl Weights {
    pub fn lookup(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            encoders: EncoderWeights::lookup(store, config)?,
            layers: (1..=config.layers)
                .map(|l| LayerWeights::lookup(store, l))
                .collect::<Result<_>>()?,
            classifier_hidden: Linear::lookup(store, "cls.hidden")?,
            classifier_out: Linear::lookup(store, "cls.out")?,
        })
    }
}

/// Trainable weights together with the architecture they belong to.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

/// Fresh parameters: U(±1/√fan_in) matrices, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    EncoderWeights::register(&mut store, config, &mut rng)?;
    for l in 1..=config.layers {
        LayerWeights::register(&mut store, l, config.hidden, &mut rng)?;
    }
    Linear::register(
        &mut store,
        "cls.hidden",
        config.representation_width(),
        config.classifier_hidden,
        &mut rng,
    )?;
    Linear::register(&mut store, "cls.out", config.classifier_hidden, config.num_labels, &mut rng)?;
    Ok(ModelParams {
        config: config.clone(),
        store,
    })
}

/// One node's outputs within a layer.
#[derive(Clone, Copy, Debug)]
pub struct NodeState {
    /// State propagated to later nodes and the next layer (equals `node_unit`).
    pub h: Var,
    pub node_unit: Var,
    pub context_unit: Var,
    pub aggregate: Var,
    /// `[1, |preds|]` attention weights; `None` for nodes without predecessors.
    pub attention: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct LayerState {
    pub nodes: Vec<NodeState>,
}

/// One DAG layer over all nodes in utterance order.
pub fn layer_forward(
    tape: &mut Tape,
    dag: &ConversationDag,
    prev: &[Var],
    store: &ParamStore,
    weights: &LayerWeights,
) -> Result<LayerState> {
    if prev.len() != dag.num_nodes() {
        return Err(Error::Shape(format!(
            "layer_forward: {} previous states for {} nodes",
            prev.len(),
            dag.num_nodes()
        )));
    }
    let d = weights.node_gru.hidden_size;
    let w_attn = tape.param(store, weights.attention);
    let w_diff = tape.param(store, weights.relation_diff);
    let w_same = tape.param(store, weights.relation_same);
    let mut nodes: Vec<NodeState> = Vec::with_capacity(prev.len());
    for (i, preds) in dag.predecessors.iter().enumerate() {
        let (aggregate, attention) = if preds.is_empty() {
            (tape.leaf(Tensor::zeros(&[1, d])), None)
        } else {
            let mut scores = Vec::with_capacity(preds.len());
            let mut messages = Vec::with_capacity(preds.len());
            for &(j, rel) in preds {
                let hj = nodes[j].h;
                let pair = tape.concat_last(&[hj, prev[i]])?;
                scores.push(tape.matmul(pair, w_attn)?);
                let w_rel = match rel {
                    Relation::SameSpeaker => w_same,
                    Relation::DifferentSpeaker => w_diff,
                };
                messages.push(tape.matmul(hj, w_rel)?);
            }
            let scores = tape.concat_last(&scores)?;
            let alpha = tape.softmax(scores, 1)?;
            let stacked = tape.concat(&messages, 0)?;
            (tape.matmul(alpha, stacked)?, Some(alpha))
        };
        let node_unit = weights.node_gru.forward(tape, store, prev[i], aggregate)?;
        let context_unit = weights.context_gru.forward(tape, store, aggregate, prev[i])?;
        nodes.push(NodeState {
            h: node_unit,
            node_unit,
            context_unit,
            aggregate,
            attention,
        });
    }
    Ok(LayerState { nodes })
}

/// Whether dropout is active and labels are mandatory.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

/// A finished forward pass; handles refer into `tape`.
pub struct ForwardOutput {
    pub tape: Tape,
    pub dag: ConversationDag,
    pub encoded: EncodedConversation,
    pub h0: Vec<Var>,
    pub layers: Vec<LayerState>,
    pub representations: Vec<Var>,
    pub logits: Vec<Var>,
    /// Mean cross-entropy; present when every utterance is labeled.
    pub loss: Option<Var>,
}

impl ForwardOutput {
    pub fn logit_values(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|v| self.tape.value(*v).data().to_vec())
            .collect()
    }

    pub fn loss_value(&self) -> Option<f64> {
        self.loss.map(|l| self.tape.value(l).item())
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits.iter().map(|v| self.tape.value(*v).argmax()).collect()
    }

    /// Attention weights of `node` in 1-based `layer`.
    pub fn attention(&self, layer: usize, node: usize) -> Option<&[f64]> {
        self.layers[layer - 1].nodes[node]
            .attention
            .map(|a| self.tape.value(a).data())
    }
}

pub fn forward(conv: &Conversation, params: &ModelParams, mode: Mode<'_>) -> Result<ForwardOutput> {
    let weights = Weights::lookup(&params.store, &params.config)?;
    forward_with(conv, params, &weights, mode)
}

pub fn forward_with(
    conv: &Conversation,
    params: &ModelParams,
    weights: &Weights,
    mode: Mode<'_>,
) -> Result<ForwardOutput> {
    let config = &params.config;
    let store = &params.store;
    let labels = conv.labels();
    let mut rng = match mode {
        Mode::Train(rng) => {
            if labels.is_none() {
                return Err(Error::data(format!(
                    "conversation `{}` has unlabeled utterances and cannot be trained on",
                    conv.conv_id
                )));
            }
            Some(rng)
        }
        Mode::Eval => None,
    };

    let mut tape = Tape::new();
    let encoded = encode_utterances(&mut tape, conv, store, config, &weights.encoders)?;
    let mut h0 = encoded.h0.clone();
    if let Some(rng) = rng.as_deref_mut() {
        for h in &mut h0 {
            *h = tape.dropout(*h, config.dropout, rng)?;
        }
    }

    let dag = build_dag(conv, config.window);
    let mut layers = Vec::with_capacity(config.layers);
    let mut prev = h0.clone();
    for lw in &weights.layers {
        let state = layer_forward(&mut tape, &dag, &prev, store, lw)?;
        prev = state.nodes.iter().map(|n| n.h).collect();
        layers.push(state);
    }

    let mut representations = Vec::with_capacity(conv.len());
    let mut logits = Vec::with_capacity(conv.len());
    for (i, &input) in h0.iter().enumerate() {
        let mut blocks = Vec::with_capacity(config.layers + 1);
        if config.include_input_layer {
            blocks.push(input);
        }
        for layer in &layers {
            let n = &layer.nodes[i];
            blocks.push(tape.add(n.node_unit, n.context_unit)?);
        }
        let mut rep = if blocks.len() == 1 {
            blocks[0]
        } else {
            tape.concat_last(&blocks)?
        };
        representations.push(rep);
        if let Some(rng) = rng.as_deref_mut() {
            rep = tape.dropout(rep, config.dropout, rng)?;
        }
        let hidden = weights.classifier_hidden.forward(&mut tape, store, rep)?;
        let hidden = tape.tanh(hidden)?;
        logits.push(weights.classifier_out.forward(&mut tape, store, hidden)?);
    }

    let loss = match labels {
        Some(labels) => {
            let terms = labels
                .iter()
                .zip(&logits)
                .map(|(&y, &z)| tape.cross_entropy(z, y))
                .collect::<Result<Vec<_>>>()?;
            let stacked = tape.concat(&terms, 0)?;
            Some(tape.mean(stacked)?)
        }
        None => None,
    };

    Ok(ForwardOutput {
        tape,
        dag,
        encoded,
        h0,
        layers,
        representations,
        logits,
        loss,
    })
}

/// Argmax label per utterance; ties go to the smallest index.
pub fn predict(conv: &Conversation, params: &ModelParams) -> Result<Vec<usize>> {
    Ok(forward(conv, params, Mode::Eval)?.predictions())
}
