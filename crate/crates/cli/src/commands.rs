//! Subcommand bodies. Each reads its inputs, delegates to `bnasr_core`
//! and writes data to a file or stdout; diagnostics go to stderr.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use bnasr_core::audio::{self, Waveform};
use bnasr_core::corpus::{self, Manifest, SplitSpec, Vocabulary, VoteSummary};
use bnasr_core::ctc::{self, LabelSequence, LogitMatrix};
use bnasr_core::decoder::{self, DecoderConfig};
use bnasr_core::lm::ArpaModel;
use bnasr_core::metrics;
use bnasr_core::textnorm::{self, NormRules};
use bnasr_core::trainer::{self, Phase, PhasePlan, ToyAcousticModel, TrainConfig};
use rayon::prelude::*;

use crate::args::*;

use crate::invalid;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?)
        .map_err(|_| invalid(format!("{} is not valid UTF-8", path.display())))
}

fn emit(out: Option<&Path>, data: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, data).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(data).context("writing stdout")?;
            stdout.flush().context("writing stdout")
        }
    }
}

fn require_exists(paths: &[(&str, Option<&Path>)]) -> Result<()> {
    for (flag, p) in paths {
        if let Some(p) = p {
            if !p.exists() {
                return Err(invalid(format!("--{flag}: {} does not exist", p.display())));
            }
        }
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    corpus::parse_manifest(&read(path)?, &name)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::parse(&read_text(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn load_arpa(path: &Path, oov_floor: f64) -> Result<ArpaModel> {
    let lm =
        ArpaModel::parse(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(lm.with_oov_floor(oov_floor))
}

/// Two-column `clip_id<TAB>text` file. A first row whose id is `clip_id`
/// is treated as a header.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| {
            invalid(format!(
                "{}:{}: expected clip_id<TAB>text",
                path.display(),
                i + 1
            ))
        })?;
        if i == 0 && id == "clip_id" {
            continue;
        }
        if !seen.insert(id.to_string()) {
            bail!(invalid(format!(
                "{}:{}: duplicate clip id {id}",
                path.display(),
                i + 1
            )));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

/// `<clip_id>.ctcl` files in `dir`, sorted by name.
fn logit_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if path.extension().is_some_and(|e| e == "ctcl") {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

fn load_logits(path: &Path) -> Result<LogitMatrix> {
    LogitMatrix::from_bytes(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn measure_duration(path: &Path, divisor: f32) -> Result<f64> {
    let w =
        audio::load_wav(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let w =
        audio::preprocess(&w, divisor).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(w.duration_s())
}

fn apply_durations(m: &mut Manifest, args: &CurateArgs) -> Result<()> {
    if let Some(dir) = &args.audio_dir {
        let measured = m
            .records
            .par_iter()
            .map(|r| measure_duration(&dir.join(&r.audio_path), args.trim_divisor))
            .collect::<Result<Vec<_>>>()?;
        for (r, d) in m.records.iter_mut().zip(measured) {
            r.duration_s = Some(d);
        }
    }
    if let Some(path) = &args.durations {
        let mut table = HashMap::new();
        for (id, d) in read_pairs(path)? {
            let secs: f64 = d
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{}: bad duration `{d}` for {id}", path.display())))?;
            table.insert(id, secs);
        }
        for r in &mut m.records {
            if let Some(&d) = table.get(&r.clip_id) {
                r.duration_s = Some(d);
            }
        }
    }
    if m.records.iter().any(|r| r.duration_s.is_some())
        && !m.columns.iter().any(|c| c == corpus::COL_DURATION)
    {
        m.columns.push(corpus::COL_DURATION.to_string());
    }
    Ok(())
}

fn summary_line(label: &str, s: &VoteSummary) -> String {
    format!(
        "{label}: total={} net_positive={} net_negative={} unvoted={} tied={}",
        s.total(),
        s.net_positive,
        s.net_negative,
        s.unvoted,
        s.tied
    )
}

pub fn curate(args: &CurateArgs) -> Result<()> {
    require_exists(&[
        ("manifest", Some(&args.manifest)),
        ("merge-with", args.merge_with.as_deref()),
        ("durations", args.durations.as_deref()),
        ("audio-dir", args.audio_dir.as_deref()),
    ])?;
    let max_s = args.max_sec.unwrap_or(f64::INFINITY);
    ensure!(
        args.min_sec >= 0.0 && args.min_sec <= max_s,
        invalid(format!(
            "duration bounds [{}, {}] are empty",
            args.min_sec, max_s
        ))
    );
    if args.merge_with.is_some() != args.dev_out.is_some() {
        bail!(invalid("--merge-with and --dev-out must be given together"));
    }
    let filter = |path: &Path| -> Result<Manifest> {
        let mut m = load_manifest(path)?;
        apply_durations(&mut m, args)?;
        eprintln!(
            "{}",
            summary_line(&format!("{} input", m.source_name), &VoteSummary::of(&m))
        );
        let kept = corpus::filter_clips(&m, args.net_positive, args.min_sec, max_s)
            .map_err(|e| invalid(e.to_string()))?;
        eprintln!(
            "{}: kept={} dropped={}",
            m.source_name,
            kept.len(),
            m.len() - kept.len()
        );
        Ok(kept)
    };
    let kept = filter(&args.manifest)?;
    match (&args.merge_with, &args.dev_out) {
        (Some(other), Some(dev_out)) => {
            let other = filter(other)?;
            let spec = SplitSpec::new(args.train_fraction, args.seed)
                .map_err(|e| invalid(e.to_string()))?;
            let (train, dev) = corpus::merge_and_split(&kept, &other, &spec)
                .map_err(|e| invalid(e.to_string()))?;
            eprintln!("merged: train={} dev={}", train.len(), dev.len());
            emit(args.out.as_deref(), train.to_tsv().as_bytes())?;
            emit(Some(dev_out), dev.to_tsv().as_bytes())
        }
        _ => emit(args.out.as_deref(), kept.to_tsv().as_bytes()),
    }
}

fn trim_one(input: &Path, output: &Path, divisor: f32) -> Result<(f64, f64)> {
    let w =
        audio::load_wav(&read(input)?).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let trimmed: Waveform =
        audio::preprocess(&w, divisor).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    fs::write(output, trimmed.to_wav_bytes())
        .with_context(|| format!("writing {}", output.display()))?;
    Ok((w.duration_s(), trimmed.duration_s()))
}

pub fn trim(args: &TrimArgs) -> Result<()> {
    require_exists(&[("input", Some(&args.input))])?;
    if !(args.divisor.is_finite() && args.divisor > 0.0) {
        bail!(invalid(format!(
            "--divisor must be positive, got {}",
            args.divisor
        )));
    }
    let jobs: Vec<(String, PathBuf, PathBuf)> = if args.input.is_dir() {
        fs::create_dir_all(&args.output)
            .with_context(|| format!("creating {}", args.output.display()))?;
        let mut names = Vec::new();
        for entry in fs::read_dir(&args.input)
            .with_context(|| format!("listing {}", args.input.display()))?
        {
            let path = entry?.path();
            if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                names.push(path.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        names.sort();
        names
            .into_iter()
            .map(|n| (n.clone(), args.input.join(&n), args.output.join(&n)))
            .collect()
    } else {
        let name = args
            .input
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        vec![(name, args.input.clone(), args.output.clone())]
    };
    let results = jobs
        .par_iter()
        .map(|(_, i, o)| trim_one(i, o, args.divisor))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("file\tinput_s\toutput_s\n");
    for ((name, _, _), (before, after)) in jobs.iter().zip(results) {
        out.push_str(&format!("{name}\t{before:.6}\t{after:.6}\n"));
    }
    emit(None, out.as_bytes())
}

fn cleaned_sentences(m: &Manifest) -> Manifest {
    let mut m = m.clone();
    for r in &mut m.records {
        r.sentence = textnorm::strip_punct(&r.sentence);
    }
    m
}

pub fn vocab(args: &VocabArgs) -> Result<()> {
    require_exists(&[("manifest", Some(&args.manifest))])?;
    let m = cleaned_sentences(&load_manifest(&args.manifest)?);
    let v = corpus::build_vocab(&m).map_err(|e| invalid(e.to_string()))?;
    eprintln!("vocabulary: {} symbols", v.len());
    emit(args.out.as_deref(), v.to_text().as_bytes())
}

pub fn encode(args: &EncodeArgs) -> Result<()> {
    require_exists(&[
        ("manifest", Some(&args.manifest)),
        ("vocab", Some(&args.vocab)),
    ])?;
    let m = cleaned_sentences(&load_manifest(&args.manifest)?);
    let v = load_vocab(&args.vocab)?;
    let lines = m
        .records
        .par_iter()
        .map(|r| {
            let ids = corpus::encode_transcript(&r.sentence, &v)
                .map_err(|e| invalid(format!("{}: {e}", r.clip_id)))?;
            let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
            Ok(format!("{}\t{}\n", r.clip_id, ids.join(" ")))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(args.out.as_deref(), lines.concat().as_bytes())
}

pub fn decode(args: &DecodeArgs) -> Result<()> {
    require_exists(&[
        ("logits", Some(&args.logits)),
        ("vocab", Some(&args.vocab)),
        ("arpa", args.arpa.as_deref()),
        ("norm-rules", args.norm_rules.as_deref()),
    ])?;
    let v = load_vocab(&args.vocab)?;
    let lm = args
        .arpa
        .as_deref()
        .map(|p| load_arpa(p, args.oov_floor))
        .transpose()?;
    let rules = match &args.norm_rules {
        Some(p) => NormRules::parse(&read_text(p)?)
            .map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => NormRules::bengali_default(),
    }
    .with_canonical_composition(!args.no_canonical_composition);
    let cfg = DecoderConfig {
        beam_width: args.beam_width,
        alpha: args.alpha,
        beta: args.beta,
        ..DecoderConfig::for_vocab(&v)
    };
    if cfg.beam_width == 0 {
        bail!(invalid("--beam-width must be at least 1"));
    }
    let files = logit_files(&args.logits)?;
    let decoded = files
        .par_iter()
        .map(|(id, path)| {
            let m = load_logits(path)?;
            let beam = decoder::beam_search(&m, &v, lm.as_ref(), &cfg)
                .map_err(|e| invalid(format!("{id}: {e}")))?;
            let text = decoder::transcript(&beam[0].labels, &v);
            let text = if args.raw {
                text
            } else {
                textnorm::postprocess(&text, &rules).map_err(|e| invalid(format!("{id}: {e}")))?
            };
            let mut nbest = String::new();
            for (rank, d) in beam.iter().take(args.nbest).enumerate() {
                nbest.push_str(&format!(
                    "{id}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                    rank + 1,
                    d.total_score,
                    d.acoustic,
                    d.lm_score,
                    decoder::transcript(&d.labels, &v)
                ));
            }
            Ok((format!("{id}\t{text}\n"), nbest))
        })
        .collect::<Result<Vec<_>>>()?;
    if args.nbest > 0 {
        let mut err = io::stderr().lock();
        writeln!(err, "clip_id\trank\ttotal\tacoustic\tlm\ttext")?;
        for (_, nbest) in &decoded {
            err.write_all(nbest.as_bytes())?;
        }
    }
    eprintln!("decoded {} clips", decoded.len());
    let out: String = decoded.into_iter().map(|(line, _)| line).collect();
    emit(args.out.as_deref(), out.as_bytes())
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    require_exists(&[
        ("logits", Some(&args.logits)),
        ("vocab", Some(&args.vocab)),
        ("refs", Some(&args.refs)),
    ])?;
    let v = load_vocab(&args.vocab)?;
    let refs = read_pairs(&args.refs)?;
    let rows = refs
        .par_iter()
        .map(|(id, text)| {
            let m = load_logits(&args.logits.join(format!("{id}.ctcl")))?;
            let ids = corpus::encode_transcript(&textnorm::strip_punct(text), &v)
                .map_err(|e| invalid(format!("{id}: {e}")))?;
            let y =
                LabelSequence::new(ids, v.blank_id()).map_err(|e| invalid(format!("{id}: {e}")))?;
            let loss =
                ctc::ctc_loss(&m, &y, v.blank_id()).map_err(|e| invalid(format!("{id}: {e}")))?;
            Ok((id.clone(), loss.loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = rows.iter().map(|r| r.1).filter(|l| l.is_finite()).collect();
    eprintln!(
        "scored {} clips, {} infeasible, mean loss {:.6}",
        rows.len(),
        rows.len() - finite.len(),
        finite.iter().sum::<f64>() / finite.len().max(1) as f64
    );
    let mut out = String::from("clip_id\tctc_loss\n");
    for (id, loss) in rows {
        out.push_str(&format!("{id}\t{loss:.6}\n"));
    }
    emit(args.out.as_deref(), out.as_bytes())
}

pub fn lm_score(args: &LmScoreArgs) -> Result<()> {
    require_exists(&[("arpa", Some(&args.arpa)), ("input", args.input.as_deref())])?;
    let lm = load_arpa(&args.arpa, args.oov_floor)?;
    let text = match &args.input {
        Some(p) => read_text(p)?,
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .context("reading stdin")?;
            s
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let scored: Vec<String> = lines
        .par_iter()
        .map(|line| {
            let words: Vec<&str> = line.split_whitespace().collect();
            format!("{:.6}\t{}\n", lm.score_sentence(&words), words.join(" "))
        })
        .collect();
    emit(args.out.as_deref(), scored.concat().as_bytes())
}

pub fn train_toy(args: &TrainToyArgs) -> Result<()> {
    if args.classes < 3 || args.frames == 0 || args.utterances == 0 {
        bail!(invalid(
            "need --classes >= 3, --frames >= 1 and --utterances >= 1"
        ));
    }
    let phase = |epochs, lr, weight_decay| Phase {
        epochs,
        lr,
        weight_decay,
    };
    let mut phases = vec![phase(
        args.phase1_epochs,
        args.phase1_lr,
        args.phase1_weight_decay,
    )];
    if args.phase2_epochs > 0 {
        phases.push(phase(
            args.phase2_epochs,
            args.phase2_lr,
            args.phase2_weight_decay,
        ));
    }
    let plan = PhasePlan::new(phases).map_err(|e| invalid(e.to_string()))?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        train_fraction: args.train_fraction,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let data = trainer::synthetic_dataset(
        args.utterances,
        args.classes,
        args.frames,
        args.feature_scale,
        args.data_seed,
        cfg.blank_id,
        cfg.word_delim_id,
    );
    let model = ToyAcousticModel::zeros(args.classes, args.classes);
    let outcome = trainer::train(model, &data, &plan, &cfg).map_err(|e| invalid(e.to_string()))?;
    let last = outcome
        .log
        .last()
        .ok_or_else(|| anyhow!("empty training log"))?;
    eprintln!(
        "initial loss {:.6}, final loss {:.6} after {} steps",
        outcome.initial_loss, last.train_loss, last.steps
    );
    if let Some(p) = &args.checkpoint {
        fs::write(p, outcome.model.to_bytes())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    emit(
        args.log.as_deref(),
        trainer::log_to_tsv(&outcome.log).as_bytes(),
    )
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    require_exists(&[("refs", Some(&args.refs)), ("hyps", Some(&args.hyps))])?;
    let refs = read_pairs(&args.refs)?;
    let hyps: HashMap<String, String> = read_pairs(&args.hyps)?.into_iter().collect();
    let ref_ids: HashSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(extra) = hyps.keys().filter(|k| !ref_ids.contains(k.as_str())).min() {
        bail!(invalid(format!("hypothesis {extra} has no reference")));
    }
    let prep = |s: &str| {
        if args.strip_punct {
            textnorm::strip_punct(s)
        } else {
            s.to_string()
        }
    };
    let triples = refs
        .iter()
        .map(|(id, r)| {
            let h = hyps
                .get(id)
                .ok_or_else(|| invalid(format!("no hypothesis for {id}")))?;
            Ok((id.clone(), prep(r), prep(h)))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = metrics::evaluate_corpus(&triples).map_err(|e| invalid(e.to_string()))?;
    if let Some(p) = &args.report {
        fs::write(p, report.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(None, format!("{}\n", report.summary_line()).as_bytes())
}
