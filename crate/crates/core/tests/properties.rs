use std::collections::BTreeSet;

use multidag::curriculum::{build_schedule, difficulty, DifficultyScore};
use multidag::dag::{build_dag_from_speakers, Relation};
use multidag::data::{read_dataset, write_dataset, Conversation, Dataset, Dims, Utterance};
use multidag::metrics::Metrics;
use proptest::prelude::*;

fn utterance(speaker: usize, label: usize, dims: Dims, seed: u32) -> Utterance {
    let f = |d: usize, k: u32| (0..d).map(|j| ((seed * 31 + k * 7 + j as u32) as f64 * 0.37).sin() * 3.0).collect();
    Utterance {
        speaker: format!("spk{speaker}"),
        label: Some(label),
        text_feat: f(dims.text, 1),
        audio_feat: f(dims.audio, 2),
        visual_feat: f(dims.visual, 3),
    }
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    let dims = (0usize..4, 0usize..4, 1usize..4).prop_map(|(t, a, v)| Dims::new(t, a, v));
    (dims, 2usize..5).prop_flat_map(|(dims, r)| {
        let turn = (0usize..3, prop::option::of(0..r), 0u32..100_000);
        let conv = prop::collection::vec(turn, 1..6);
        prop::collection::vec(conv, 1..5).prop_map(move |convs| Dataset {
            labels: (0..r).map(|i| format!("l{i}")).collect(),
            dims,
            split: None,
            conversations: convs
                .into_iter()
                .enumerate()
                .map(|(c, turns)| Conversation {
                    conv_id: format!("c{c}"),
                    utterances: turns
                        .into_iter()
                        .map(|(s, l, seed)| Utterance {
                            label: l,
                            ..utterance(s, 0, dims, seed)
                        })
                        .collect(),
                })
                .collect(),
        })
    })
}

// Reference rule: j feeds i iff fewer than `w` utterances strictly between them share i's speaker.
fn reference_edges(speakers: &[usize], w: usize) -> BTreeSet<(usize, usize, bool)> {
    let mut edges = BTreeSet::new();
    for i in 0..speakers.len() {
        for j in 0..i {
            let between = (j + 1..i).filter(|&k| speakers[k] == speakers[i]).count();
            if between < w {
                edges.insert((j, i, speakers[j] == speakers[i]));
            }
        }
    }
    edges
}

fn edges(speakers: &[usize], w: usize) -> BTreeSet<(usize, usize, bool)> {
    build_dag_from_speakers(speakers, w)
        .edges()
        .map(|(j, i, r)| (j, i, r == Relation::SameSpeaker))
        .collect()
}

fn scores(difs: &[(usize, usize, usize)]) -> Vec<DifficultyScore> {
    difs.iter()
        .enumerate()
        .map(|(i, &(s, sp, n))| DifficultyScore::from_counts(format!("c{i:02}"), s, sp, n))
        .collect()
}

proptest! {
    #[test]
    fn dataset_round_trips(ds in dataset_strategy()) {
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn dag_matches_reference_and_is_acyclic(
        speakers in prop::collection::vec(0usize..4, 0..30),
        w in 1usize..4,
    ) {
        let got = edges(&speakers, w);
        prop_assert_eq!(&got, &reference_edges(&speakers, w));
        prop_assert!(got.iter().all(|&(j, i, _)| j < i));
    }

    #[test]
    fn wider_window_only_adds_edges(speakers in prop::collection::vec(0usize..4, 0..30), w in 1usize..5) {
        prop_assert!(edges(&speakers, w).is_subset(&edges(&speakers, w + 1)));
    }

    #[test]
    fn predecessor_lists_are_sorted(speakers in prop::collection::vec(0usize..3, 0..20), w in 1usize..4) {
        let dag = build_dag_from_speakers(&speakers, w);
        for preds in &dag.predecessors {
            prop_assert!(preds.windows(2).all(|p| p[0].0 < p[1].0));
        }
    }

    // Difficulty only sees each speaker's own label sequence, so any interleaving
    // of the same per-speaker sequences scores the same.
    #[test]
    fn difficulty_ignores_interleaving(
        seqs in prop::collection::vec(prop::collection::vec(0usize..3, 1..6), 1..4),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..40),
    ) {
        let build = |order: &[usize]| {
            let mut cursor = vec![0; seqs.len()];
            Conversation {
                conv_id: "x".into(),
                utterances: order
                    .iter()
                    .map(|&s| {
                        let l = seqs[s][cursor[s]];
                        cursor[s] += 1;
                        utterance(s, l, Dims::new(0, 0, 1), 0)
                    })
                    .collect(),
            }
        };
        let blocked: Vec<usize> = seqs.iter().enumerate().flat_map(|(s, q)| std::iter::repeat_n(s, q.len())).collect();
        let mut remaining: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let mut mixed = Vec::new();
        let mut picks = picks.into_iter();
        while remaining.iter().any(|&r| r > 0) {
            let live: Vec<usize> = (0..seqs.len()).filter(|&s| remaining[s] > 0).collect();
            let s = picks.next().map_or(live[0], |ix| live[ix.index(live.len())]);
            remaining[s] -= 1;
            mixed.push(s);
        }
        let a = difficulty(&build(&blocked)).unwrap();
        let b = difficulty(&build(&mixed)).unwrap();
        prop_assert_eq!((a.shifts, a.speakers, a.utterances), (b.shifts, b.speakers, b.utterances));
        prop_assert!(a.dif > 0.0 && a.dif <= 1.0);
    }

    #[test]
    fn non_shifting_utterance_lowers_difficulty(
        turns in prop::collection::vec((0usize..3, 0usize..3), 1..15),
        pick in any::<prop::sample::Index>(),
    ) {
        let dims = Dims::new(0, 0, 1);
        let mut conv = Conversation {
            conv_id: "x".into(),
            utterances: turns.iter().map(|&(s, l)| utterance(s, l, dims, 0)).collect(),
        };
        let before = difficulty(&conv).unwrap();
        prop_assert!(before.shifts + before.speakers <= before.utterances);
        // repeat some speaker's latest label at the end
        let speaker = turns[pick.index(turns.len())].0;
        let last = turns.iter().rev().find(|t| t.0 == speaker).unwrap().1;
        conv.utterances.push(utterance(speaker, last, dims, 0));
        let after = difficulty(&conv).unwrap();
        prop_assert_eq!(after.shifts, before.shifts);
        prop_assert!(after.dif < before.dif);
    }

    #[test]
    fn schedule_grows_monotonically(
        counts in prop::collection::vec((0usize..10, 1usize..4, 1usize..12), 1..25),
        k_seed in any::<prop::sample::Index>(),
        extra in 0usize..5,
    ) {
        let s = scores(&counts);
        let k = 1 + k_seed.index(s.len());
        let plan = build_schedule(&s, k, k + extra).unwrap();
        let sizes: Vec<usize> = plan.buckets.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        let mut prev: BTreeSet<&str> = BTreeSet::new();
        for e in 1..=plan.epochs {
            let set: BTreeSet<&str> = plan.epoch_set(e).into_iter().collect();
            prop_assert!(prev.is_subset(&set));
            if e >= k {
                prop_assert_eq!(set.len(), s.len());
            }
            prev = set;
        }
        // rebuilding from the scheduled order gives the same plan
        let order: Vec<DifficultyScore> = plan
            .buckets
            .iter()
            .flatten()
            .map(|id| s.iter().find(|x| &x.conv_id == id).unwrap().clone())
            .collect();
        prop_assert_eq!(build_schedule(&order, k, k + extra).unwrap(), plan);
    }

    #[test]
    fn accuracy_is_the_confusion_trace(
        r in 2usize..6,
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..60),
    ) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.iter().map(|&(t, p)| (t % r, p % r)).unzip();
        let m = Metrics::from_predictions(&truth, &pred, r);
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        prop_assert!((m.accuracy - hits as f64 / truth.len() as f64).abs() < 1e-12);
        prop_assert_eq!(m.total(), truth.len());
    }
}

#[test]
fn shift_free_corpus_scores_only_smoothing() {
    let data = multidag::data::synth_generate(&multidag::data::SynthConfig {
        conversations: 50,
        speakers: 3,
        p_shift: 0.0,
        ..Default::default()
    })
    .unwrap();
    for conv in &data.conversations {
        let s = difficulty(conv).unwrap();
        assert_eq!(s.shifts, 0);
        assert_eq!(s.ratio(), (s.speakers, s.utterances + s.speakers));
    }
}
