//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use multidag::checkpoint::load_checkpoint;
use multidag::curriculum::{build_schedule, difficulties, difficulty, DifficultyScore};
use multidag::dag::{build_dag_from_speakers, Relation};
use multidag::data::{load_dataset, synth_generate, Conversation, Split, SynthConfig, Utterance};
use multidag::metrics::Metrics;
use multidag::model::{forward, init_params, ModelConfig, ModelParams, Mode};
use multidag::nn::{grad_check, ParamStore};
use multidag::trainer::{evaluate, train, TrainConfig};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let conv = common::alternating(4, 3, 21);
    let cfg = ModelConfig::new(common::DIMS, 3, 8, 2);
    let mut params = init_params(&cfg, 21).map_err(|e| e.to_string())?;
    let report = grad_check(
        |store: &ParamStore| {
            let p = ModelParams {
                config: cfg.clone(),
                store: store.clone(),
            };
            let out = forward(&conv, &p, Mode::Eval)?;
            Ok((out.tape, out.loss.expect("labeled")))
        },
        &mut params.store,
        1e-5,
        1e-4,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.passed(), || format!("{report}"))?;
    within(elapsed, 60)?;
    Ok(format!(
        "{} tensors / {} entries, worst rel err {:.2e}, {:.1}s",
        report.params.len(),
        report.num_entries(),
        report.max_rel_error(),
        elapsed.as_secs_f64()
    ))
}

// Step-by-step trace of the difficulty algorithm: per-speaker sequences, then
// adjacent-pair comparisons, in exact rational arithmetic.
fn difficulty_trace(speakers: &[usize], labels: &[usize]) -> Ratio<u64> {
    let mut sequences: Vec<(usize, Vec<usize>)> = Vec::new();
    for (&p, &e) in speakers.iter().zip(labels) {
        match sequences.iter_mut().find(|(q, _)| *q == p) {
            Some((_, s)) => s.push(e),
            None => sequences.push((p, vec![e])),
        }
    }
    let n_sp = sequences.len() as u64;
    let mut n_shift = 0u64;
    for (_, s) in &sequences {
        for i in 0..s.len().saturating_sub(1) {
            if s[i] != s[i + 1] {
                n_shift += 1;
            }
        }
    }
    Ratio::new(n_shift + n_sp, speakers.len() as u64 + n_sp)
}

// Pairwise definition: u_i, u_k shift when same speaker, no same-speaker
// utterance between them, and different labels.
fn difficulty_pairwise(speakers: &[usize], labels: &[usize]) -> Ratio<u64> {
    let n = speakers.len();
    let mut shifts = 0u64;
    for i in 0..n {
        for k in i + 1..n {
            let adjacent = speakers[i] == speakers[k] && !(i + 1..k).any(|j| speakers[j] == speakers[i]);
            if adjacent && labels[i] != labels[k] {
                shifts += 1;
            }
        }
    }
    let n_sp = speakers.iter().collect::<BTreeSet<_>>().len() as u64;
    Ratio::new(shifts + n_sp, n as u64 + n_sp)
}

fn conversation(speakers: &[usize], labels: &[usize]) -> Conversation {
    Conversation {
        conv_id: "x".into(),
        utterances: speakers
            .iter()
            .zip(labels)
            .map(|(&s, &l)| Utterance {
                speaker: format!("S{s}"),
                label: Some(l),
                text_feat: vec![],
                audio_feat: vec![],
                visual_feat: vec![0.0],
            })
            .collect(),
    }
}

fn index_tuples(len: usize, base: usize) -> Vec<Vec<usize>> {
    (0..base.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let d = code % base;
                    code /= base;
                    d
                })
                .collect()
        })
        .collect()
}

fn difficulty_oracle() -> Outcome {
    let start = Instant::now();
    let mut cases = 0usize;
    for n in 1..=4 {
        for speakers in index_tuples(n, 2) {
            for r in 1..=3 {
                for labels in index_tuples(n, r) {
                    let want = difficulty_trace(&speakers, &labels);
                    ensure(want == difficulty_pairwise(&speakers, &labels), || {
                        format!("oracles disagree on {speakers:?} {labels:?}")
                    })?;
                    let got = difficulty(&conversation(&speakers, &labels)).map_err(|e| e.to_string())?;
                    let (num, den) = got.ratio();
                    ensure(Ratio::new(num as u64, den as u64) == want, || {
                        format!("{speakers:?} {labels:?}: got {num}/{den}, want {want}")
                    })?;
                    ensure(got.dif == *want.numer() as f64 / *want.denom() as f64, || {
                        format!("{speakers:?} {labels:?}: dif {} != {want}", got.dif)
                    })?;
                    cases += 1;
                }
            }
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{cases} labelings, {:.2}s", start.elapsed().as_secs_f64()))
}

fn quadratic_edges(speakers: &[usize], w: usize) -> BTreeSet<(usize, usize, bool)> {
    let mut out = BTreeSet::new();
    for i in 0..speakers.len() {
        for j in 0..i {
            let same_between = (j + 1..i).filter(|&k| speakers[k] == speakers[i]).count();
            if same_between < w {
                out.insert((j, i, speakers[j] == speakers[i]));
            }
        }
    }
    out
}

fn dag_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut edges_total = 0;
    for case in 0..1000 {
        let len = rng.random_range(0..=30);
        let n_spk = rng.random_range(1..=4);
        let w = 1 + case % 3;
        let speakers: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_spk)).collect();
        let dag = build_dag_from_speakers(&speakers, w);
        let got: BTreeSet<(usize, usize, bool)> = dag
            .edges()
            .map(|(j, i, r)| (j, i, r == Relation::SameSpeaker))
            .collect();
        ensure(got == quadratic_edges(&speakers, w), || format!("mismatch on {speakers:?}, w={w}"))?;
        ensure(got.iter().all(|&(j, i, _)| j < i), || format!("backward edge in {speakers:?}"))?;
        edges_total += got.len();
    }
    Ok(format!("1000 sequences, {edges_total} edges, all j < i"))
}

fn scheduler_contract() -> Outcome {
    let data = synth_generate(&SynthConfig {
        conversations: 20,
        min_utterances: 3,
        max_utterances: 12,
        speakers: 3,
        seed: 4,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let scores = difficulties(&data.conversations).map_err(|e| e.to_string())?;
    let exact = |s: &DifficultyScore| {
        let (a, b) = s.ratio();
        Ratio::new(a as u64, b as u64)
    };
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| exact(a).cmp(&exact(b)).then(a.conv_id.cmp(&b.conv_id)));
    let mut pairs = 0;
    for k in 1..=10 {
        // expected partition: sizes differ by at most one, larger buckets first
        let mut expected: Vec<Vec<&DifficultyScore>> = Vec::new();
        let mut at = 0;
        for b in 0..k {
            let size = 20 / k + usize::from(b < 20 % k);
            expected.push(sorted[at..at + size].iter().collect());
            at += size;
        }
        for b in 1..k {
            let prev_max = expected[b - 1].iter().map(|s| exact(s)).max().unwrap();
            let next_min = expected[b].iter().map(|s| exact(s)).min().unwrap();
            ensure(prev_max <= next_min, || format!("k={k}: bucket {b} not monotone"))?;
        }
        for t in k..=15 {
            let plan = build_schedule(&scores, k, t).map_err(|e| e.to_string())?;
            for e in 1..=t {
                let want: Vec<&str> = expected[..e.min(k)]
                    .iter()
                    .flatten()
                    .map(|s| s.conv_id.as_str())
                    .collect();
                ensure(plan.epoch_set(e) == want, || format!("k={k}, t={t}, epoch {e}: wrong set"))?;
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} (k, t) pairs"))
}

fn attention_and_zero_loss() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..=12);
        let r = rng.random_range(2..=6);
        let conv = common::random_conversation("s", len, rng.random_range(1..=4), r, seed);
        let mut cfg = ModelConfig::new(common::DIMS, r, 6, rng.random_range(1..=3));
        cfg.window = rng.random_range(1..=3);
        let mut params = init_params(&cfg, seed).map_err(|e| e.to_string())?;
        let out = forward(&conv, &params, Mode::Eval).map_err(|e| e.to_string())?;
        for l in 1..=cfg.layers {
            for i in 0..len {
                if let Some(a) = out.attention(l, i) {
                    ensure(a.iter().all(|&x| x >= 0.0), || format!("seed {seed}: negative weight"))?;
                    worst = worst.max((a.iter().sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
        }
        params.store.zero_values();
        let loss = forward(&conv, &params, Mode::Eval)
            .map_err(|e| e.to_string())?
            .loss_value()
            .unwrap();
        ensure((loss - (r as f64).ln()).abs() <= 1e-12, || {
            format!("seed {seed}: zero-param loss {loss} vs ln {r}")
        })?;
    }
    ensure(worst <= 1e-10, || format!("attention sum off by {worst:.2e}"))?;
    Ok(format!("{rows} attention rows, max |sum - 1| = {worst:.1e}; zero-param loss = ln r"))
}

fn causality() -> Outcome {
    let mut compared = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let len = rng.random_range(2..=10);
        let conv = common::random_conversation("c", len, rng.random_range(1..=3), 3, seed);
        let mut cfg = ModelConfig::new(common::DIMS, 3, 6, 2);
        cfg.window = rng.random_range(1..=3);
        let params = init_params(&cfg, seed).map_err(|e| e.to_string())?;
        let mut changed = conv.clone();
        let last = changed.utterances.last_mut().unwrap();
        for x in last.audio_feat.iter_mut().chain(last.visual_feat.iter_mut()) {
            *x += rng.random_range(0.5..2.0);
        }
        let a = forward(&conv, &params, Mode::Eval).map_err(|e| e.to_string())?.logit_values();
        let b = forward(&changed, &params, Mode::Eval).map_err(|e| e.to_string())?.logit_values();
        ensure(a[..len - 1] == b[..len - 1], || format!("seed {seed}: earlier logits moved"))?;
        ensure(a[len - 1] != b[len - 1], || format!("seed {seed}: perturbation had no effect"))?;
        compared += len - 1;
    }
    Ok(format!(
        "50 conversations, {compared} earlier utterances bit-identical after perturbing the last \
         utterance's audio and visual features; text features are read by the bidirectional \
         text encoder and are excluded"
    ))
}

fn learnability_corpus() -> (multidag::data::Dataset, multidag::data::Dataset) {
    let base = SynthConfig {
        conversations: 200,
        min_utterances: 20,
        max_utterances: 20,
        p_shift: 0.3,
        ..SynthConfig::default()
    };
    let train_set = synth_generate(&SynthConfig {
        seed: 7,
        split: Some(Split::Train),
        ..base.clone()
    })
    .unwrap();
    let valid = synth_generate(&SynthConfig {
        conversations: 40,
        seed: 8,
        split: Some(Split::Valid),
        ..base
    })
    .unwrap();
    (train_set, valid)
}

fn learnability() -> Outcome {
    let (train_set, valid) = learnability_corpus();
    let baseline = train_set.majority_baseline();
    let base_cfg = TrainConfig {
        hidden: 16,
        layers: 2,
        lr: 0.005,
        epochs: 40,
        dropout: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let plain_cfg = TrainConfig {
        curriculum: false,
        ..base_cfg.clone()
    };
    let curriculum_cfg = TrainConfig {
        curriculum: true,
        buckets: 5,
        ..base_cfg
    };
    let timed = |cfg: &TrainConfig| {
        let start = Instant::now();
        let out = train(&train_set, &valid, cfg).map_err(|e| e.to_string())?;
        let acc = evaluate(&out.params, &train_set, 1).map_err(|e| e.to_string())?.accuracy;
        Ok::<_, String>((acc, start.elapsed()))
    };
    let (plain, curriculum) = std::thread::scope(|s| {
        let a = s.spawn(|| timed(&plain_cfg));
        let b = s.spawn(|| timed(&curriculum_cfg));
        (a.join().unwrap(), b.join().unwrap())
    });
    let (acc, t_plain) = plain?;
    let (acc_cl, t_cl) = curriculum?;
    let detail = format!(
        "train acc {acc:.4} (majority {baseline:.4}, {:.0}s); with k=5 curriculum {acc_cl:.4} ({:.0}s)",
        t_plain.as_secs_f64(),
        t_cl.as_secs_f64()
    );
    ensure(acc >= 0.85, || format!("accuracy below 0.85: {detail}"))?;
    ensure(acc - baseline >= 0.2, || format!("margin over majority below 0.2: {detail}"))?;
    ensure((acc - acc_cl).abs() <= 0.05, || format!("curriculum gap above 0.05: {detail}"))?;
    within(t_plain, 600)?;
    Ok(detail)
}

fn degenerate_curriculum() -> Outcome {
    let data = |n, seed, split| {
        synth_generate(&SynthConfig {
            conversations: n,
            seed,
            split: Some(split),
            ..SynthConfig::default()
        })
        .unwrap()
    };
    let (tr, va) = (data(30, 11, Split::Train), data(8, 12, Split::Valid));
    let cfg = TrainConfig {
        hidden: 8,
        epochs: 6,
        buckets: 1,
        dropout: 0.2,
        seed: 5,
        ..TrainConfig::default()
    };
    let on = train(&tr, &va, &cfg).map_err(|e| e.to_string())?;
    let off = train(&tr, &va, &TrainConfig { curriculum: false, ..cfg }).map_err(|e| e.to_string())?;
    ensure(on.history == off.history, || "histories differ".into())?;
    let same_params = on
        .params
        .store
        .iter()
        .zip(off.params.store.iter())
        .all(|((na, a), (nb, b))| na == nb && a == b);
    ensure(same_params, || "parameters differ".into())?;
    ensure(on.rng == off.rng, || "rng states differ".into())?;
    Ok(format!("{} epochs: history, parameters and rng state bit-identical", on.history.epochs.len()))
}

// Per-class counts straight from the (truth, prediction) pairs.
fn weighted_f1_by_pairs(pairs: &[(usize, usize)], r: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..r {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        total += (tp + fn_) * f1;
    }
    total / pairs.len() as f64
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let r = rng.random_range(2..=7);
        let confusion: Vec<Vec<usize>> = (0..r)
            .map(|_| (0..r).map(|_| rng.random_range(0..6)).collect())
            .collect();
        let mut pairs = Vec::new();
        for (t, row) in confusion.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                pairs.extend(std::iter::repeat_n((t, p), n));
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let m = Metrics::from_confusion(confusion);
        worst = worst.max((m.weighted_f1 - weighted_f1_by_pairs(&pairs, r)).abs());
        let trace = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
        ensure((m.accuracy - trace).abs() <= 1e-12, || "accuracy mismatch".into())?;
    }
    ensure(worst <= 1e-12, || format!("w-F1 off by {worst:.2e}"))?;
    let hand = Metrics::from_confusion(vec![vec![2, 0], vec![1, 1]]);
    ensure((hand.weighted_f1 - 0.7333).abs() < 5e-5, || format!("hand case {}", hand.weighted_f1))?;
    Ok(format!(
        "200 matrices, max |diff| {worst:.1e}; [[2,0],[1,1]] -> {:.4}",
        hand.weighted_f1
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_multidag"))
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.code() == Some(0), || {
            format!("`{}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr))
        })?;
        Ok::<_, String>(String::from_utf8(out.stdout).unwrap())
    };
    let (train_path, valid_path, out_dir) = (p("train.jsonl"), p("valid.jsonl"), p("run"));
    run(&["gen-data", "--out", &train_path, "--conversations", "24", "--seed", "1", "--split", "train"])?;
    run(&["gen-data", "--out", &valid_path, "--conversations", "8", "--seed", "2", "--split", "valid"])?;
    let ranking = run(&["difficulty", "--data", &train_path])?;
    ensure(ranking.lines().count() == 25, || "difficulty table row count".into())?;
    run(&[
        "train", "--data", &train_path, "--valid", &valid_path, "--out", &out_dir, "--epochs", "6", "--buckets",
        "3", "--hidden", "8",
    ])?;

    let metrics_text = std::fs::read_to_string(dir.path().join("run/metrics.json")).map_err(|e| e.to_string())?;
    let metrics: serde_json::Value = serde_json::from_str(&metrics_text).map_err(|e| e.to_string())?;
    for key in ["accuracy", "weighted_f1", "per_class", "confusion"] {
        ensure(metrics.get(key).is_some(), || format!("metrics.json lacks `{key}`"))?;
    }
    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).map_err(|e| e.to_string())?;
    let mut lines = history.lines();
    ensure(lines.next() == Some("epoch,train_size,train_loss,valid_acc,valid_wf1"), || "csv header".into())?;
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    ensure(rows.len() == 6 && rows.iter().all(|r| r.len() == 5), || "csv shape".into())?;

    let ckpt_path = p("run/model.ckpt");
    let ckpt = load_checkpoint(&ckpt_path).map_err(|e| e.to_string())?;
    let valid = load_dataset(&valid_path).map_err(|e| e.to_string())?;
    let reloaded = evaluate(&ckpt.params, &valid, 1).map_err(|e| e.to_string())?;
    ensure(reloaded.to_json(&valid.labels) == metrics, || "reloaded checkpoint gives different metrics".into())?;
    let printed: serde_json::Value =
        serde_json::from_str(&run(&["eval", "--data", &valid_path, "--checkpoint", &ckpt_path])?).map_err(|e| e.to_string())?;
    ensure(printed == metrics, || "eval output differs from metrics.json".into())?;
    Ok(format!(
        "gen-data, difficulty, train, eval all exit 0; valid w-F1 {:.4}",
        metrics["weighted_f1"].as_f64().unwrap()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("difficulty oracle equivalence", difficulty_oracle),
        ("DAG construction oracle", dag_oracle),
        ("scheduler contract", scheduler_contract),
        ("attention normalization and zero-parameter loss", attention_and_zero_loss),
        ("causality", causality),
        ("synthetic learnability", learnability),
        ("single-bucket curriculum equivalence", degenerate_curriculum),
        ("metrics oracle", metrics_oracle),
        ("end-to-end CLI pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
