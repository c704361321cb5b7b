//! Speaker-aware DAG over a conversation.
//!
//! Node `i` receives edges from every earlier utterance back to (and
//! including) the `ω`-th most recent earlier utterance by the same speaker, or
//! from all earlier utterances when that speaker has spoken fewer than `ω`
//! times before. Each edge is tagged with whether its endpoints share a speaker.

use std::fmt::Write as _;

use crate::data::Conversation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    DifferentSpeaker = 0,
    SameSpeaker = 1,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::SameSpeaker => "same",
            Relation::DifferentSpeaker => "diff",
        }
    }
}

/// Predecessor lists are 0-based and sorted by ascending source index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConversationDag {
    pub window: usize,
    pub predecessors: Vec<Vec<(usize, Relation)>>,
}

impl ConversationDag {
    pub fn num_nodes(&self) -> usize {
        self.predecessors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.predecessors.iter().map(Vec::len).sum()
    }

    /// Edges as `(from, to, relation)`, ordered by target then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, Relation)> + '_ {
        self.predecessors
            .iter()
            .enumerate()
            .flat_map(|(i, preds)| preds.iter().map(move |&(j, r)| (j, i, r)))
    }
}

/// Builds the DAG from a speaker sequence. `window` is clamped to at least 1.
pub fn build_dag_from_speakers<S: PartialEq>(speakers: &[S], window: usize) -> ConversationDag {
    let window = window.max(1);
    let mut predecessors = Vec::with_capacity(speakers.len());
    for (i, speaker) in speakers.iter().enumerate() {
        let mut preds = Vec::new();
        let mut same_seen = 0;
        for j in (0..i).rev() {
            let same = speakers[j] == *speaker;
            preds.push((
                j,
                if same {
                    Relation::SameSpeaker
                } else {
                    Relation::DifferentSpeaker
                },
            ));
            if same {
                same_seen += 1;
                if same_seen == window {
                    break;
                }
            }
        }
        preds.reverse();
        predecessors.push(preds);
    }
    ConversationDag {
        window,
        predecessors,
    }
}

pub fn build_dag(conversation: &Conversation, window: usize) -> ConversationDag {
    build_dag_from_speakers(&conversation.speakers(), window)
}

/// Graphviz rendering with 1-based node ids, edges ordered by target then source.
pub fn export_dot(dag: &ConversationDag) -> String {
    if dag.num_edges() == 0 {
        return "digraph conv { }".to_string();
    }
    let mut out = String::from("digraph conv {\n");
    for (j, i, rel) in dag.edges() {
        writeln!(out, "  {} -> {} [rel={}];", j + 1, i + 1, rel.as_str()).unwrap();
    }
    out.push('}');
    out
}
