//! Edit distance, WER and CER.
//!
//! Distances are computed over Unicode scalar values, so every Bengali
//! combining mark counts as its own edit. Corpus WER/CER are micro-averaged:
//! total edits over total reference units.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("reference for {0:?} is empty; error rate is undefined")]
    EmptyReference(String),
    #[error("duplicate clip id {0:?}")]
    DuplicateId(String),
}

/// Unit-cost edit distance between two sequences, two-row DP.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // keep the shorter sequence on the inner loop
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance over codepoints.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

/// One edit operation in a debug alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp<T> {
    Match(T),
    Substitute(T, T),
    Delete(T),
    Insert(T),
}

/// Full-table alignment for debugging. Quadratic memory; prefer
/// [`edit_distance`] for scoring.
pub fn align<T: PartialEq + Copy>(a: &[T], b: &[T]) -> Vec<EditOp<T>> {
    let w = b.len() + 1;
    let mut d = vec![0usize; (a.len() + 1) * w];
    for (j, cell) in d[..w].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        d[i * w] = i;
        for j in 1..w {
            let sub = d[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let (mut i, mut j) = (a.len(), b.len());
    let mut ops = Vec::new();
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            ops.push(if a[i - 1] == b[j - 1] {
                EditOp::Match(a[i - 1])
            } else {
                EditOp::Substitute(a[i - 1], b[j - 1])
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Delete(a[i - 1]));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(b[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// An error rate kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ErrorRate {
    pub edits: usize,
    pub reference_len: usize,
}

impl ErrorRate {
    pub fn value(&self) -> f64 {
        self.edits as f64 / self.reference_len as f64
    }
}

impl fmt::Display for ErrorRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Collapses whitespace runs and trims.
fn normalize_spaces(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Word error rate of `hyp` against `reference`.
pub fn wer(reference: &str, hyp: &str) -> Result<ErrorRate, MetricsError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(MetricsError::EmptyReference(reference.to_string()));
    }
    let h: Vec<&str> = hyp.split_whitespace().collect();
    Ok(ErrorRate {
        edits: edit_distance(&r, &h),
        reference_len: r.len(),
    })
}

/// Character error rate over codepoints, after whitespace normalization.
pub fn cer(reference: &str, hyp: &str) -> Result<ErrorRate, MetricsError> {
    let r: Vec<char> = normalize_spaces(reference).chars().collect();
    if r.is_empty() {
        return Err(MetricsError::EmptyReference(reference.to_string()));
    }
    let h: Vec<char> = normalize_spaces(hyp).chars().collect();
    Ok(ErrorRate {
        edits: edit_distance(&r, &h),
        reference_len: r.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub clip_id: String,
    pub levenshtein: usize,
    pub wer: ErrorRate,
    pub cer: ErrorRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub mean_levenshtein: f64,
    pub corpus_wer: ErrorRate,
    pub corpus_cer: ErrorRate,
}

impl EvalReport {
    /// `mean_lev=<x> wer=<y> cer=<z>`
    pub fn summary_line(&self) -> String {
        format!(
            "mean_lev={} wer={} cer={}",
            self.mean_levenshtein, self.corpus_wer, self.corpus_cer
        )
    }

    /// Per-utterance TSV with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("clip_id\tlevenshtein\twer\tcer\n");
        for u in &self.per_utterance {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                u.clip_id, u.levenshtein, u.wer, u.cer
            ));
        }
        out
    }
}

/// Scores every `(clip_id, reference, hypothesis)` triple. Output keeps the
/// input order.
pub fn evaluate_corpus<S: AsRef<str> + Sync>(
    pairs: &[(S, S, S)],
) -> Result<EvalReport, MetricsError> {
    let mut seen = HashSet::with_capacity(pairs.len());
    for (id, _, _) in pairs {
        if !seen.insert(id.as_ref()) {
            return Err(MetricsError::DuplicateId(id.as_ref().to_string()));
        }
    }
    let per_utterance = pairs
        .par_iter()
        .map(|(id, r, h)| {
            let (id, r, h) = (id.as_ref(), r.as_ref(), h.as_ref());
            let label = |e| match e {
                MetricsError::EmptyReference(_) => MetricsError::EmptyReference(id.to_string()),
                other => other,
            };
            Ok(UtteranceScore {
                clip_id: id.to_string(),
                levenshtein: levenshtein(r, h),
                wer: wer(r, h).map_err(label)?,
                cer: cer(r, h).map_err(label)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let n = per_utterance.len();
    let mut corpus_wer = ErrorRate::default();
    let mut corpus_cer = ErrorRate::default();
    let mut lev_total = 0usize;
    for u in &per_utterance {
        lev_total += u.levenshtein;
        corpus_wer.edits += u.wer.edits;
        corpus_wer.reference_len += u.wer.reference_len;
        corpus_cer.edits += u.cer.edits;
        corpus_cer.reference_len += u.cer.reference_len;
    }
    let mean_levenshtein = if n == 0 {
        0.0
    } else {
        lev_total as f64 / n as f64
    };
    Ok(EvalReport {
        per_utterance,
        mean_levenshtein,
        corpus_wer,
        corpus_cer,
    })
}
