//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! reach stdout.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use bnasr_core::audio::{trim_silence, Waveform};
use bnasr_core::corpus::{self, ClipRecord, Manifest, Vocabulary, VoteSummary};
use bnasr_core::ctc::{self, collapse, log_softmax_rows, LabelSequence, LogitMatrix};
use bnasr_core::decoder::{self, DecoderConfig};
use bnasr_core::lm::ArpaModel;
use bnasr_core::metrics::levenshtein;
use bnasr_core::textnorm::{self, NormRules, DANDA};
use bnasr_core::trainer::{self, PhasePlan, ToyAcousticModel, TrainConfig, PHASE1_LR, PHASE2_LR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const BIN: &str = env!("CARGO_BIN_EXE_bnasr");
const BIGRAM: &[u8] = include_bytes!("../../core/tests/fixtures/bigram.arpa");
const FIVEGRAM: &[u8] = include_bytes!("../../core/tests/fixtures/fivegram.arpa");
const BN_CORPUS: &str = include_str!("fixtures/bn_corpus.txt");

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_logits(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> LogitMatrix {
    let values = (0..frames * classes)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();
    LogitMatrix::new(frames, classes, values).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, classes: usize, max_len: usize) -> LabelSequence {
    let len = rng.gen_range(0..=max_len);
    let ids = (0..len).map(|_| rng.gen_range(1..classes as u32)).collect();
    LabelSequence::new(ids, 0).unwrap()
}

/// Visits every frame-level path of `m` with its natural-log probability.
fn for_each_path(m: &LogitMatrix, mut visit: impl FnMut(&[u32], f64)) {
    let lp = log_softmax_rows(m);
    let (frames, classes) = (m.frames(), m.classes());
    let mut path = vec![0u32; frames];
    loop {
        let logp = path
            .iter()
            .enumerate()
            .map(|(t, &k)| lp.get(t, k as usize))
            .sum();
        visit(&path, logp);
        let mut t = 0;
        loop {
            if t == frames {
                return;
            }
            path[t] += 1;
            if (path[t] as usize) < classes {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

fn enumerated_prob(m: &LogitMatrix, y: &LabelSequence) -> f64 {
    let mut p = 0.0;
    for_each_path(m, |path, logp| {
        if collapse(path, 0) == *y {
            p += logp.exp();
        }
    });
    p
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let n = 250;
    for i in 0..n {
        let frames = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=4);
        let m = random_logits(&mut rng, frames, classes);
        let y = random_labels(&mut rng, classes, 3);
        let loss = ctc::ctc_loss(&m, &y, 0).map_err(|e| e.to_string())?;
        let p = enumerated_prob(&m, &y);
        if p == 0.0 {
            check(loss.loss == f64::INFINITY && !loss.feasible, || {
                format!("instance {i}: no alignment but loss {}", loss.loss)
            })?;
            continue;
        }
        let expected = -p.ln();
        let rel = (loss.loss - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        check(rel <= 1e-6, || {
            format!("instance {i}: loss {} vs enumeration {expected}", loss.loss)
        })?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{n} instances, worst relative error {worst:.2e}, {elapsed:.2?}"
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    while checked < 120 {
        let frames = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=4);
        let m = random_logits(&mut rng, frames, classes);
        let y = random_labels(&mut rng, classes, 3);
        if y.min_frames() > frames {
            continue;
        }
        let grad = ctc::ctc_grad(&m, &y, 0).map_err(|e| e.to_string())?;
        for t in 0..frames {
            let s: f64 = grad[t * classes..(t + 1) * classes].iter().sum();
            worst_row = worst_row.max(s.abs());
        }
        let mut max_diff: f64 = 0.0;
        let mut max_grad: f64 = 0.0;
        for i in 0..frames * classes {
            let shifted = |d: f64| {
                let mut v = m.values().to_vec();
                v[i] += d;
                ctc::ctc_loss(&LogitMatrix::new(frames, classes, v).unwrap(), &y, 0)
                    .unwrap()
                    .loss
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            max_diff = max_diff.max((fd - grad[i]).abs());
            max_grad = max_grad.max(grad[i].abs());
        }
        let rel = max_diff / max_grad.max(1e-12);
        worst = worst.max(rel);
        check(rel <= 1e-4, || {
            format!("instance {checked}: relative gradient error {rel:.2e}")
        })?;
        checked += 1;
    }
    check(worst_row <= 1e-9, || {
        format!("gradient row sum {worst_row:.2e}")
    })?;
    Ok(format!(
        "{checked} instances, worst relative error {worst:.2e}, worst row sum {worst_row:.2e}"
    ))
}

fn all_sequences(classes: usize, max_len: usize) -> Vec<LabelSequence> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut grown = Vec::new();
        for seq in &frontier {
            for k in 1..classes as u32 {
                let mut s: Vec<u32> = seq.clone();
                s.push(k);
                grown.push(s);
            }
        }
        out.extend(grown.iter().cloned());
        frontier = grown;
    }
    out.into_iter()
        .map(|ids| LabelSequence::new(ids, 0).unwrap())
        .collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let n = 60;
    for i in 0..n {
        let frames = rng.gen_range(1..=4);
        let classes = rng.gen_range(2..=3);
        let m = random_logits(&mut rng, frames, classes);
        let mut total = 0.0;
        for y in all_sequences(classes, frames) {
            total += (-ctc::ctc_loss(&m, &y, 0).map_err(|e| e.to_string())?.loss).exp();
        }
        worst = worst.max((total - 1.0).abs());
        check((total - 1.0).abs() <= 1e-6, || {
            format!("instance {i}: total mass {total}")
        })?;
    }
    Ok(format!("{n} instances, worst |mass - 1| {worst:.2e}"))
}

fn vocab_with(classes: usize) -> Vocabulary {
    Vocabulary::from_chars("abcdefgh".chars().take(classes - 2)).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 150;
    let widths = [1, 2, 4, 8, 16, 32, 64, 128, 256];
    let mut drops = Vec::new();
    for i in 0..n {
        let frames = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=4);
        let m = random_logits(&mut rng, frames, classes);
        let v = vocab_with(classes);
        let cfg = |beam_width| DecoderConfig {
            beam_width,
            alpha: 0.0,
            beta: 0.0,
            ..DecoderConfig::for_vocab(&v)
        };
        let distinct_prefixes: usize = (0..=frames).map(|l| (classes - 1).pow(l as u32)).sum();
        let (labels, score) = decoder::beam_decode(&m, &v, None, &cfg(distinct_prefixes))
            .map_err(|e| e.to_string())?;
        let (best, logp) = decoder::brute_force_best(&m, 0, frames).map_err(|e| e.to_string())?;
        check(labels == best && (score - logp).abs() <= 1e-9, || {
            format!("instance {i}: beam {labels} ({score}) vs brute force {best} ({logp})")
        })?;
        let mut last = f64::NEG_INFINITY;
        for w in widths {
            let (_, s) = decoder::beam_decode(&m, &v, None, &cfg(w)).map_err(|e| e.to_string())?;
            if s < last - 1e-12 {
                drops.push(format!(
                    "instance {i} (T={frames}, V={classes}) width {w}: {s:.6} < {last:.6}"
                ));
            }
            last = last.max(s);
        }
    }
    if drops.is_empty() {
        Ok(format!(
            "{n} instances match brute force; score non-decreasing over widths {widths:?}"
        ))
    } else {
        Err(format!(
            "{n} instances match brute force, but wider beams scored lower on {} instance(s): {}",
            drops.len(),
            drops.join("; ")
        ))
    }
}

fn criterion_5() -> Outcome {
    let bigram = ArpaModel::parse(BIGRAM).map_err(|e| e.to_string())?;
    let cases: &[(&[&str], f64)] = &[
        (&["a"], -0.1 - 0.05),
        (&["b"], -0.9 - 0.2),
        (&[], -0.3 - 1.0),
        (&["a", "a"], -0.1 + (-1.0 - 0.5) - 0.05),
        (&["b", "a"], -0.9 + (-0.1 - 0.5) - 0.05),
        (&["c"], (-0.3 - 2.0) + (0.0 - 1.0)),
    ];
    for (words, expected) in cases {
        let got = bigram.score_sentence(words);
        check((got - expected).abs() <= 1e-9, || {
            format!("bigram {words:?}: {got} vs hand {expected}")
        })?;
    }
    let fivegram = ArpaModel::parse(FIVEGRAM).map_err(|e| e.to_string())?;
    let hand = -0.3 - 0.2 - 0.1 - 0.05 + (-0.03 + 0.0 - 0.25 - 0.3 - 1.2);
    let got = fivegram.score_sentence(&["a", "b", "a", "b"]);
    check(fivegram.order() == 5 && (got - hand).abs() <= 1e-9, || {
        format!("5-gram: {got} vs hand {hand}")
    })?;

    // one frame: acoustics prefer "b" (.52 vs .46), the LM prefers "a"
    // (log10 -0.15 vs -1.1 for the full sentence)
    let v = Vocabulary::from_chars(['a', 'b']).unwrap();
    let probs = [0.01f64, 0.01, 0.46, 0.52];
    let m = LogitMatrix::from_rows(&[probs.map(f64::ln)]).unwrap();
    let lm_gap = -0.15 - (-1.1);
    let threshold = (0.52f64 / 0.46).ln() / (std::f64::consts::LN_10 * lm_gap);
    let decode_at = |alpha: f64| -> Result<(String, f64), String> {
        let cfg = DecoderConfig {
            beam_width: 8,
            alpha,
            beta: 0.0,
            ..DecoderConfig::for_vocab(&v)
        };
        let (labels, score) =
            decoder::beam_decode(&m, &v, Some(&bigram), &cfg).map_err(|e| e.to_string())?;
        Ok((decoder::transcript(&labels, &v), score))
    };
    let (below, below_score) = decode_at(threshold * 0.999)?;
    let (above, above_score) = decode_at(threshold * 1.001)?;
    let hand_below = 0.52f64.ln() + threshold * 0.999 * std::f64::consts::LN_10 * -1.1;
    let hand_above = 0.46f64.ln() + threshold * 1.001 * std::f64::consts::LN_10 * -0.15;
    check(below == "b" && above == "a", || {
        format!("alpha* = {threshold:.6}: got {below:?} below and {above:?} above")
    })?;
    check(
        (below_score - hand_below).abs() <= 1e-9 && (above_score - hand_above).abs() <= 1e-9,
        || format!("fused scores {below_score}, {above_score} vs hand {hand_below}, {hand_above}"),
    )?;
    Ok(format!(
        "{} back-off sums exact; near-tie flips b -> a at alpha* = {threshold:.6}",
        cases.len() + 1
    ))
}

fn recursive_distance(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let cost = usize::from(a[0] != b[0]);
    let d = (recursive_distance(&a[1..], b, memo) + 1)
        .min(recursive_distance(a, &b[1..], memo) + 1)
        .min(recursive_distance(&a[1..], &b[1..], memo) + cost);
    memo.insert((a.len(), b.len()), d);
    d
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'ক', 'খ', 'া', 'ি', '্', ' ', 'é', '\u{200C}', '😀',
    ];
    let len = rng.gen_range(0..=12);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 1000;
    for i in 0..n {
        let (a, b, c) = (
            random_string(&mut rng),
            random_string(&mut rng),
            random_string(&mut rng),
        );
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let oracle = recursive_distance(&ca, &cb, &mut HashMap::new());
        let d = levenshtein(&a, &b);
        check(d == oracle, || {
            format!("pair {i} {a:?} {b:?}: {d} vs oracle {oracle}")
        })?;
        check(levenshtein(&b, &a) == d, || format!("pair {i}: asymmetric"))?;
        check(levenshtein(&a, &c) <= d + levenshtein(&b, &c), || {
            format!("triple {i}: triangle")
        })?;
        check((d == 0) == (a == b), || {
            format!("pair {i}: identity of indiscernibles")
        })?;
    }
    let k = levenshtein("kitten", "sitting");
    check(k == 3, || format!("d(kitten, sitting) = {k}"))?;
    Ok(format!(
        "{n} pairs match the recursive oracle; axioms hold; d(kitten, sitting) = 3"
    ))
}

/// Manifest with the vote categories of the Common Voice Bengali train
/// split: 37405 net-positive clips of which 36919 last between 1 and 10 s,
/// 5536 net-negative, 161380 unvoted and 2630 tied ones.
fn vote_category_manifest() -> Manifest {
    let mut records = Vec::new();
    let mut push = |up: u32, down: u32, duration: f64| {
        let id = format!("c{:06}", records.len());
        records.push(ClipRecord::new(&id, "x", up, down).with_duration(duration));
    };
    let edge = [1.0, 10.0, 5.0, 0.999, 10.001, 0.2, 14.0];
    for i in 0..37405 {
        let d = if i < 36919 {
            edge[i % 3]
        } else {
            edge[3 + i % 4]
        };
        push(2 + (i % 3) as u32, 1, d);
    }
    for i in 0..5536 {
        push(i % 2, 2 + i % 2, 5.0);
    }
    for _ in 0..161380 {
        push(0, 0, 5.0);
    }
    for i in 0..2630 {
        push(1 + i % 3, 1 + i % 3, 5.0);
    }
    Manifest::new("cv-train", records).unwrap()
}

fn criterion_7() -> Outcome {
    let w =
        Waveform::new(vec![0.0, 0.01, 1.0, 0.5, 0.02, 0.0], 16_000).map_err(|e| e.to_string())?;
    let trimmed = trim_silence(&w, 30.0).map_err(|e| e.to_string())?;
    check(trimmed.samples() == [1.0, 0.5], || {
        format!("trim gave {:?}", trimmed.samples())
    })?;

    let small = Manifest::new(
        "four",
        vec![
            ClipRecord::new("r1", "x", 2, 1).with_duration(5.0),
            ClipRecord::new("r2", "x", 1, 2).with_duration(5.0),
            ClipRecord::new("r3", "x", 0, 0).with_duration(5.0),
            ClipRecord::new("r4", "x", 3, 0).with_duration(20.0),
        ],
    )
    .unwrap();
    let kept = corpus::filter_clips(&small, true, 1.0, 10.0).map_err(|e| e.to_string())?;
    check(
        kept.records.len() == 1 && kept.records[0].clip_id == "r1",
        || "four-record example".into(),
    )?;

    let m = vote_category_manifest();
    let s = VoteSummary::of(&m);
    check(
        (s.net_positive, s.net_negative, s.unvoted, s.tied) == (37405, 5536, 161380, 2630),
        || format!("categories {s:?}"),
    )?;
    let votes_only =
        corpus::filter_clips(&m, true, 0.0, f64::INFINITY).map_err(|e| e.to_string())?;
    let full = corpus::filter_clips(&m, true, 1.0, 10.0).map_err(|e| e.to_string())?;
    check(votes_only.len() == 37405, || {
        format!("vote filter kept {}", votes_only.len())
    })?;
    check(full.len() == 36919, || {
        format!("full filter kept {}", full.len())
    })?;
    check(full.records.iter().all(|r| r.upvotes > r.downvotes), || {
        "tied clip admitted".into()
    })?;

    let gated = match (
        std::env::var_os("BNASR_CV_TRAIN_TSV"),
        std::env::var_os("BNASR_CV_DURATIONS"),
    ) {
        (Some(tsv), Some(durations)) => {
            let out = run(&[
                "curate",
                "--manifest",
                &tsv.to_string_lossy(),
                "--durations",
                &durations.to_string_lossy(),
                "--net-positive",
                "--min-sec",
                "1",
                "--max-sec",
                "10",
            ]);
            let kept = String::from_utf8_lossy(&out.stdout)
                .lines()
                .count()
                .saturating_sub(1);
            check(kept == 36919, || {
                format!("real train TSV kept {kept} clips")
            })?;
            "real train TSV kept 36919".to_string()
        }
        _ => "real-data check skipped (BNASR_CV_TRAIN_TSV / BNASR_CV_DURATIONS unset)".to_string(),
    };
    Ok(format!(
        "trim fixture -> [1.0, 0.5]; synthetic vote partition {}/{}/{}/{} -> 36919 kept; {gated}",
        s.net_positive, s.net_negative, s.unvoted, s.tied
    ))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let data = trainer::synthetic_dataset(10, 5, 20, 16.0, 3, cfg.blank_id, cfg.word_delim_id);
    // 9 training utterances in batches of 4 take 3 steps per epoch
    let first_epochs = 166;
    let plan = PhasePlan::two_phase(first_epochs, 7).map_err(|e| e.to_string())?;
    let out = trainer::train(ToyAcousticModel::zeros(5, 5), &data, &plan, &cfg)
        .map_err(|e| e.to_string())?;

    let spec = corpus::SplitSpec::new(cfg.train_fraction, cfg.seed).unwrap();
    let (phase1_train, _) = corpus::shuffled_split(data.iter().collect::<Vec<_>>(), &spec);
    let initial = trainer::mean_loss(&ToyAcousticModel::zeros(5, 5), &phase1_train, cfg.blank_id)
        .map_err(|e| e.to_string())?;
    let end1 = &out.log[first_epochs - 1];
    check(end1.steps <= 500, || {
        format!("{} steps in phase 1", end1.steps)
    })?;
    let drop = 1.0 - end1.train_loss / initial;
    check(drop >= 0.9, || {
        format!(
            "loss {initial:.4} -> {:.4} after {} steps ({:.1}% drop)",
            end1.train_loss,
            end1.steps,
            100.0 * drop
        )
    })?;

    let tsv = trainer::log_to_tsv(&out.log);
    let rows: Vec<Vec<&str>> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    check(rows.len() == first_epochs + 7, || {
        format!("{} log rows", rows.len())
    })?;
    let lr_at = |i: usize| rows[i][2].parse::<f64>().unwrap();
    check(
        lr_at(first_epochs - 1) == PHASE1_LR
            && lr_at(first_epochs) == PHASE2_LR
            && rows[first_epochs][0] == "2",
        || "phase switch not visible in the log".into(),
    )?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "loss {initial:.3} -> {:.3} ({:.1}% drop) in {} steps; lr {} -> {} at epoch {}; {elapsed:.2?}",
        end1.train_loss,
        100.0 * drop,
        end1.steps,
        rows[first_epochs - 1][2],
        rows[first_epochs][2],
        first_epochs + 1
    ))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = run(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`bnasr {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Builds a manifest, vocabulary, reference file and peaked logit files
/// from the fixture corpus inside `dir`.
fn decode_fixture(dir: &Path) -> Result<(PathBuf, PathBuf, PathBuf), String> {
    let rules = NormRules::bengali_default();
    let sentences: Vec<String> = BN_CORPUS
        .lines()
        .map(|l| textnorm::normalize_bn(&textnorm::strip_punct(l), &rules).unwrap())
        .filter(|s| !s.is_empty())
        .collect();
    let mut tsv = String::from("path\tsentence\tup_votes\tdown_votes\n");
    let mut refs = String::from("clip_id\ttext\n");
    for (i, s) in sentences.iter().enumerate() {
        tsv.push_str(&format!("u{i:03}.wav\t{s}\t2\t0\n"));
        refs.push_str(&format!("u{i:03}\t{s}\n"));
    }
    let manifest = dir.join("corpus.tsv");
    let vocab = dir.join("vocab.txt");
    let refs_path = dir.join("refs.tsv");
    fs::write(&manifest, tsv).unwrap();
    fs::write(&refs_path, refs).unwrap();
    run_ok(&[
        "vocab",
        "--manifest",
        &path_str(&manifest),
        "--out",
        &path_str(&vocab),
    ])?;
    let v = Vocabulary::parse(&fs::read_to_string(&vocab).unwrap()).unwrap();

    let logits = dir.join("logits");
    fs::create_dir_all(&logits).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (i, s) in sentences.iter().enumerate() {
        let ids = corpus::encode_transcript(s, &v).unwrap();
        let mut path = vec![v.blank_id()];
        for id in ids {
            path.extend([id, id, v.blank_id()]);
        }
        let classes = v.len();
        let mut values: Vec<f64> = (0..path.len() * classes)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for (t, &k) in path.iter().enumerate() {
            values[t * classes + k as usize] += 5.0;
        }
        let m = LogitMatrix::new(path.len(), classes, values).unwrap();
        fs::write(logits.join(format!("u{i:03}.ctcl")), m.to_bytes()).unwrap();
    }
    Ok((vocab, logits, refs_path))
}

fn criterion_9() -> Outcome {
    let rules = NormRules::bengali_default();
    let raw_rules = NormRules::bengali_default().with_canonical_composition(false);
    let lines: Vec<&str> = BN_CORPUS.lines().collect();
    for line in &lines {
        for r in [&rules, &raw_rules] {
            let once = textnorm::normalize_bn(line, r).map_err(|e| e.to_string())?;
            let twice = textnorm::normalize_bn(&once, r).map_err(|e| e.to_string())?;
            check(once == twice, || {
                format!("normalize_bn not idempotent on {line:?}")
            })?;
        }
        let d = textnorm::append_danda(line);
        check(textnorm::append_danda(&d) == d, || {
            format!("append_danda not idempotent on {line:?}")
        })?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (vocab, logits, _) = decode_fixture(dir.path())?;
    let arpa = dir.path().join("lm.arpa");
    fs::write(&arpa, BIGRAM).unwrap();
    let out = run_ok(&[
        "decode",
        "--logits",
        &path_str(&logits),
        "--vocab",
        &path_str(&vocab),
        "--arpa",
        &path_str(&arpa),
    ])?;
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let decoded: Vec<&str> = text.lines().collect();
    check(!decoded.is_empty(), || "no decoder output".into())?;
    for line in &decoded {
        check(line.ends_with(DANDA), || {
            format!("line without danda: {line:?}")
        })?;
    }
    Ok(format!(
        "{} corpus lines idempotent; {} decoded lines all end in U+0964",
        lines.len(),
        decoded.len()
    ))
}

fn curate_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut write = |name: &str, prefix: &str, n: usize| {
        let mut tsv = String::from("client_id\tpath\tsentence\tup_votes\tdown_votes\tduration_s\n");
        for i in 0..n {
            let up: u32 = rng.gen_range(0..4);
            let down: u32 = rng.gen_range(0..3);
            let dur: f64 = rng.gen_range(0.5..12.0);
            tsv.push_str(&format!(
                "spk{}\t{prefix}{i:04}.mp3\tবাক্য {i}\t{up}\t{down}\t{dur:.3}\n",
                i % 7
            ));
        }
        let p = dir.join(name);
        fs::write(&p, tsv).unwrap();
        p
    };
    (
        write("train.tsv", "a", 300),
        write("validated.tsv", "b", 120),
    )
}

/// Runs `args` with each worker count twice and returns the stdout plus the
/// named output files of every run.
fn runs(args: &[String], outputs: &[&Path]) -> Result<Vec<Vec<Vec<u8>>>, String> {
    let mut all = Vec::new();
    for workers in ["1", "1", "8", "8"] {
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--workers", workers]);
        let out = run_ok(&full)?;
        let mut bytes = vec![out.stdout];
        for p in outputs {
            bytes.push(fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?);
        }
        all.push(bytes);
    }
    Ok(all)
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let s = |p: &Path| path_str(p);
    let (train, validated) = curate_fixture(d);
    let (vocab, logits, refs) = decode_fixture(d)?;
    let arpa = d.join("lm.arpa");
    fs::write(&arpa, BIGRAM).unwrap();
    let (cur_train, cur_dev, hyps, log, ckpt, report) = (
        d.join("cur_train.tsv"),
        d.join("cur_dev.tsv"),
        d.join("hyps.tsv"),
        d.join("log.tsv"),
        d.join("model.tacm"),
        d.join("report.tsv"),
    );
    let strings = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    let cases: Vec<(&str, Vec<String>, Vec<&Path>)> = vec![
        (
            "curate",
            strings(&[
                "curate",
                "--manifest",
                &s(&train),
                "--merge-with",
                &s(&validated),
                "--net-positive",
                "--min-sec",
                "1",
                "--max-sec",
                "10",
                "--seed",
                "7",
                "--out",
                &s(&cur_train),
                "--dev-out",
                &s(&cur_dev),
            ]),
            vec![&cur_train, &cur_dev],
        ),
        (
            "decode",
            strings(&[
                "decode",
                "--logits",
                &s(&logits),
                "--vocab",
                &s(&vocab),
                "--arpa",
                &s(&arpa),
                "--beam-width",
                "16",
                "--out",
                &s(&hyps),
            ]),
            vec![&hyps],
        ),
        (
            "train-toy",
            strings(&[
                "train-toy",
                "--seed",
                "7",
                "--log",
                &s(&log),
                "--checkpoint",
                &s(&ckpt),
            ]),
            vec![&log, &ckpt],
        ),
        (
            "eval",
            strings(&[
                "eval",
                "--refs",
                &s(&refs),
                "--hyps",
                &s(&hyps),
                "--strip-punct",
                "--report",
                &s(&report),
            ]),
            vec![&report],
        ),
    ];
    let mut summary = Vec::new();
    for (name, args, outputs) in cases {
        let results = runs(&args, &outputs)?;
        check(results.iter().all(|r| *r == results[0]), || {
            format!("`{name}` output differs across runs or worker counts")
        })?;
        let bytes: usize = results[0].iter().map(Vec::len).sum();
        summary.push(format!("{name} ({bytes} B)"));
    }
    Ok(format!(
        "identical across 2 runs x workers 1/8: {}",
        summary.join(", ")
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("CTC loss equals exhaustive path enumeration", criterion_1),
        (
            "CTC gradient matches central finite differences",
            criterion_2,
        ),
        (
            "CTC posterior sums to one over all label sequences",
            criterion_3,
        ),
        (
            "beam search optimal at exhaustive width and monotone in width",
            criterion_4,
        ),
        ("LM back-off sums and fusion threshold", criterion_5),
        ("Levenshtein oracle and metric axioms", criterion_6),
        ("silence trimming and vote/duration partition", criterion_7),
        ("two-phase toy training", criterion_8),
        ("post-processing idempotence and danda", criterion_9),
        (
            "CLI determinism across runs and worker counts",
            criterion_10,
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS [{secs:.2}s] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{secs:.2}s] {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
