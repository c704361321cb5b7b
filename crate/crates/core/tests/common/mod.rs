#![allow(dead_code)]

use multidag::data::{Conversation, Dims, Utterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIMS: Dims = Dims {
    text: 6,
    audio: 5,
    visual: 4,
};

/// Random conversation with Gaussian-ish features and uniform labels.
pub fn random_conversation(id: &str, len: usize, speakers: usize, labels: usize, seed: u64) -> Conversation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feat = |d: usize, rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    Conversation {
        conv_id: id.to_string(),
        utterances: (0..len)
            .map(|_| Utterance {
                speaker: format!("S{}", rng.random_range(0..speakers)),
                label: Some(rng.random_range(0..labels)),
                text_feat: feat(DIMS.text, &mut rng),
                audio_feat: feat(DIMS.audio, &mut rng),
                visual_feat: feat(DIMS.visual, &mut rng),
            })
            .collect(),
    }
}

/// Fixed alternating-speaker conversation.
pub fn alternating(len: usize, labels: usize, seed: u64) -> Conversation {
    let mut c = random_conversation("alt", len, 2, labels, seed);
    for (i, u) in c.utterances.iter_mut().enumerate() {
        u.speaker = if i % 2 == 0 { "A" } else { "B" }.into();
    }
    c
}
