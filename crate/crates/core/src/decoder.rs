//! CTC prefix beam search with word-level n-gram shallow fusion.
//!
//! Each hypothesis is a collapsed label prefix carrying two acoustic
//! log-probabilities (paths ending in blank / in a non-blank) plus the LM
//! state of the words it spells. A word is scored by the LM when it is
//! completed: when a word delimiter follows a non-empty partial word, or
//! when decoding ends. The fused score of a prefix is
//!
//! ```text
//! ln P_ctc(prefix) + alpha * ln(10) * log10 P_lm(words) + beta * |words|
//! ```
//!
//! `</s>` is scored once, after the last frame. Without an LM the score is
//! the acoustic term alone.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::ctc::{
    self, collapse, log_add, log_softmax_rows, CtcError, LabelSequence, LogitMatrix, LOG_ZERO,
};
use crate::lm::{ArpaModel, LmHistory, EOS};

/// Largest path space [`brute_force_best`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum DecoderError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("logits have {logits} classes but the vocabulary has {vocab}")]
    VocabMismatch { logits: usize, vocab: usize },
    #[error("alpha must be finite and non-negative, got {0}")]
    BadAlpha(f64),
    #[error("{classes}^{frames} paths exceed the enumeration limit")]
    TooLarge { frames: usize, classes: usize },
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub beam_width: usize,
    /// LM weight.
    pub alpha: f64,
    /// Per-word insertion bonus.
    pub beta: f64,
    pub blank_id: u32,
    pub word_delim_id: u32,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam_width: 32,
            alpha: 0.5,
            beta: 1.0,
            blank_id: 0,
            word_delim_id: 1,
        }
    }
}

impl DecoderConfig {
    pub fn for_vocab(v: &Vocabulary) -> Self {
        Self {
            blank_id: v.blank_id(),
            word_delim_id: v.word_delim_id(),
            ..Self::default()
        }
    }
}

/// Words spelled so far and their fused LM contribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmState {
    pub words: Vec<String>,
    pub partial: String,
    /// `alpha * ln10 * log10 P(words) + beta * |words|`, completed words only.
    pub score: f64,
    history: Option<LmHistory>,
}

impl LmState {
    fn complete_word(&mut self, lm: Option<&ArpaModel>, cfg: &DecoderConfig) {
        if self.partial.is_empty() {
            return;
        }
        let word = std::mem::take(&mut self.partial);
        if let Some(lm) = lm {
            let history = self.history.take().unwrap_or_else(LmHistory::start);
            let (lp, next) = history.advance(lm, &word);
            self.score += cfg.alpha * std::f64::consts::LN_10 * lp + cfg.beta;
            self.history = Some(next);
        }
        self.words.push(word);
    }

    fn push_label(
        &self,
        id: u32,
        v: &Vocabulary,
        lm: Option<&ArpaModel>,
        cfg: &DecoderConfig,
    ) -> Self {
        let mut next = self.clone();
        if id == cfg.word_delim_id {
            next.complete_word(lm, cfg);
        } else if let Some(c) = v.char_of(id) {
            next.partial.push(c);
        }
        next
    }

    fn finish(&mut self, lm: Option<&ArpaModel>, cfg: &DecoderConfig) {
        self.complete_word(lm, cfg);
        if let Some(lm) = lm {
            let history = self.history.take().unwrap_or_else(LmHistory::start);
            let (lp, next) = history.advance(lm, EOS);
            self.score += cfg.alpha * std::f64::consts::LN_10 * lp;
            self.history = Some(next);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub prefix: LabelSequence,
    pub logp_blank: f64,
    pub logp_nonblank: f64,
    pub lm_state: LmState,
}

impl Hypothesis {
    pub fn acoustic(&self) -> f64 {
        log_add(self.logp_blank, self.logp_nonblank)
    }

    pub fn total(&self) -> f64 {
        self.acoustic() + self.lm_state.score
    }
}

/// A finished hypothesis with its exact acoustic score.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub labels: LabelSequence,
    /// Exact `ln P_ctc(labels)` over all alignments.
    pub acoustic: f64,
    pub lm_score: f64,
    pub total_score: f64,
    pub words: Vec<String>,
}

/// Highest score first, then lexicographically smallest prefix.
fn rank(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a.cmp(b))
}

fn check_inputs(m: &LogitMatrix, v: &Vocabulary, cfg: &DecoderConfig) -> Result<(), DecoderError> {
    if cfg.beam_width == 0 {
        return Err(DecoderError::ZeroBeam);
    }
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        return Err(DecoderError::BadAlpha(cfg.alpha));
    }
    if m.classes() != v.len() {
        return Err(DecoderError::VocabMismatch {
            logits: m.classes(),
            vocab: v.len(),
        });
    }
    Ok(())
}

/// Runs the search and returns the final beam, best first. Acoustic scores
/// of the final beam are recomputed exactly with the forward algorithm, so
/// mass lost to pruning during the search does not distort the ranking.
pub fn beam_search(
    m: &LogitMatrix,
    v: &Vocabulary,
    lm: Option<&ArpaModel>,
    cfg: &DecoderConfig,
) -> Result<Vec<Decoded>, DecoderError> {
    check_inputs(m, v, cfg)?;
    let lp = log_softmax_rows(m);
    let blank = cfg.blank_id as usize;

    let mut beam = vec![Hypothesis {
        prefix: LabelSequence::empty(),
        logp_blank: 0.0,
        logp_nonblank: LOG_ZERO,
        lm_state: LmState::default(),
    }];
    let mut next: Vec<Hypothesis> = Vec::new();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();

    for row in lp.rows() {
        next.clear();
        index.clear();
        for hyp in &beam {
            let total = hyp.acoustic();
            let last = hyp.prefix.ids().last().copied();

            // stay on the same prefix: blank, or a repeat of the last label
            let mut stay_nb = LOG_ZERO;
            if let Some(l) = last {
                stay_nb = hyp.logp_nonblank + row[l as usize];
            }
            let slot = slot_for(&mut next, &mut index, hyp.prefix.ids(), || {
                hyp.lm_state.clone()
            });
            next[slot].logp_blank = log_add(next[slot].logp_blank, total + row[blank]);
            next[slot].logp_nonblank = log_add(next[slot].logp_nonblank, stay_nb);

            for (c, &lp_c) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                let c = c as u32;
                // a repeated label only extends the prefix after a blank
                let p = if Some(c) == last {
                    hyp.logp_blank + lp_c
                } else {
                    total + lp_c
                };
                let mut extended = hyp.prefix.ids().to_vec();
                extended.push(c);
                let slot = slot_for(&mut next, &mut index, &extended, || {
                    hyp.lm_state.push_label(c, v, lm, cfg)
                });
                next[slot].logp_nonblank = log_add(next[slot].logp_nonblank, p);
            }
        }
        next.sort_by(|a, b| rank(a.total(), a.prefix.ids(), b.total(), b.prefix.ids()));
        next.truncate(cfg.beam_width);
        std::mem::swap(&mut beam, &mut next);
    }

    let mut finished = beam
        .into_iter()
        .map(|hyp| {
            let mut state = hyp.lm_state;
            state.finish(lm, cfg);
            let acoustic = -ctc::ctc_loss(m, &hyp.prefix, cfg.blank_id)?.loss;
            Ok(Decoded {
                total_score: acoustic + state.score,
                acoustic,
                lm_score: state.score,
                words: state.words,
                labels: hyp.prefix,
            })
        })
        .collect::<Result<Vec<_>, CtcError>>()?;
    finished.sort_by(|a, b| rank(a.total_score, a.labels.ids(), b.total_score, b.labels.ids()));
    Ok(finished)
}

fn slot_for(
    next: &mut Vec<Hypothesis>,
    index: &mut HashMap<Vec<u32>, usize>,
    prefix: &[u32],
    state: impl FnOnce() -> LmState,
) -> usize {
    if let Some(&i) = index.get(prefix) {
        return i;
    }
    let i = next.len();
    next.push(Hypothesis {
        prefix: LabelSequence::from_path_unchecked(prefix.to_vec()),
        logp_blank: LOG_ZERO,
        logp_nonblank: LOG_ZERO,
        lm_state: state(),
    });
    index.insert(prefix.to_vec(), i);
    i
}

/// Best label sequence and its fused score.
pub fn beam_decode(
    m: &LogitMatrix,
    v: &Vocabulary,
    lm: Option<&ArpaModel>,
    cfg: &DecoderConfig,
) -> Result<(LabelSequence, f64), DecoderError> {
    let best = beam_search(m, v, lm, cfg)?
        .into_iter()
        .next()
        .expect("beam is never empty");
    Ok((best.labels, best.total_score))
}

/// Renders labels as text: delimiters become spaces, runs of spaces
/// collapse and the ends are trimmed.
pub fn transcript(labels: &LabelSequence, v: &Vocabulary) -> String {
    let raw: String = labels
        .ids()
        .iter()
        .filter_map(|&id| v.char_of(id))
        .collect();
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Exact argmax of the CTC posterior over label sequences of length at most
/// `max_len`, by enumerating every frame-level path. Returns the sequence
/// and its natural-log probability; ties go to the lexicographically
/// smallest sequence.
pub fn brute_force_best(
    m: &LogitMatrix,
    blank_id: u32,
    max_len: usize,
) -> Result<(LabelSequence, f64), DecoderError> {
    let (frames, classes) = (m.frames(), m.classes());
    let too_large = DecoderError::TooLarge { frames, classes };
    let total_paths = (classes as u64)
        .checked_pow(frames as u32)
        .filter(|&n| n <= BRUTE_FORCE_LIMIT)
        .ok_or(too_large)?;
    let lp = log_softmax_rows(m);
    let mut posterior: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut path = vec![0u32; frames];
    for _ in 0..total_paths {
        let labels = collapse(&path, blank_id);
        if labels.len() <= max_len {
            let logp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| lp.get(t, k as usize))
                .sum();
            let slot = posterior.entry(labels.into_inner()).or_insert(LOG_ZERO);
            *slot = log_add(*slot, logp);
        }
        // odometer increment, frame 0 fastest
        for slot in path.iter_mut() {
            *slot += 1;
            if (*slot as usize) < classes {
                break;
            }
            *slot = 0;
        }
    }
    let (best, logp) = posterior
        .into_iter()
        .min_by(|(a, pa), (b, pb)| rank(*pa, a, *pb, b))
        .expect("the empty sequence is always reachable");
    Ok((LabelSequence::from_path_unchecked(best), logp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(n_chars: usize) -> Vocabulary {
        Vocabulary::from_chars("abcdefgh".chars().take(n_chars)).unwrap()
    }

    fn exhaustive(frames: usize, classes: usize) -> DecoderConfig {
        // every distinct prefix of length <= frames fits
        let width = (0..=frames).map(|l| (classes - 1).pow(l as u32)).sum();
        DecoderConfig {
            beam_width: width,
            alpha: 0.0,
            beta: 0.0,
            ..DecoderConfig::default()
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> LogitMatrix {
        let vals = (0..frames * classes)
            .map(|_| rng.gen_range(-2.5..2.5))
            .collect();
        LogitMatrix::new(frames, classes, vals).unwrap()
    }

    #[test]
    fn single_blank_frame_gives_empty() {
        let v = vocab(2);
        let m = LogitMatrix::from_rows(&[[5.0, 0.0, 1.0, 1.0]]).unwrap();
        let cfg = DecoderConfig {
            beam_width: 4,
            ..DecoderConfig::for_vocab(&v)
        };
        let (labels, _) = beam_decode(&m, &v, None, &cfg).unwrap();
        assert!(labels.is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let v = vocab(2);
        let m = LogitMatrix::from_rows(&[[0.0; 4]]).unwrap();
        let cfg = DecoderConfig {
            beam_width: 0,
            ..DecoderConfig::default()
        };
        assert_eq!(
            beam_decode(&m, &v, None, &cfg).unwrap_err(),
            DecoderError::ZeroBeam
        );
        let m3 = LogitMatrix::from_rows(&[[0.0; 3]]).unwrap();
        assert!(matches!(
            beam_decode(&m3, &v, None, &DecoderConfig::default()).unwrap_err(),
            DecoderError::VocabMismatch {
                logits: 3,
                vocab: 4
            }
        ));
    }

    #[test]
    fn brute_force_worked_examples() {
        let m = LogitMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let (best, logp) = brute_force_best(&m, 0, 2).unwrap();
        assert_eq!(best.ids(), &[1]);
        assert!((logp - 0.75f64.ln()).abs() < 1e-12);

        // uniform single frame: empty and [1] tie at .5, empty sorts first
        let m = LogitMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let (best, logp) = brute_force_best(&m, 0, 1).unwrap();
        assert!(best.is_empty());
        assert!((logp - 0.5f64.ln()).abs() < 1e-12);

        let big = LogitMatrix::new(12, 5, vec![0.0; 60]).unwrap();
        assert!(matches!(
            brute_force_best(&big, 0, 12),
            Err(DecoderError::TooLarge { .. })
        ));
    }

    #[test]
    fn exhaustive_beam_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let frames = rng.gen_range(1..=5);
            let classes = rng.gen_range(2..=4);
            let m = random_matrix(&mut rng, frames, classes);
            let v = vocab(classes - 2);
            let (labels, score) = beam_decode(&m, &v, None, &exhaustive(frames, classes)).unwrap();
            let (best, logp) = brute_force_best(&m, 0, frames).unwrap();
            assert_eq!(labels, best);
            assert!((score - logp).abs() < 1e-9);
        }
    }

    #[test]
    fn score_is_exact_ctc_at_any_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let v = vocab(2);
        for _ in 0..50 {
            let m = random_matrix(&mut rng, 6, 4);
            for width in [1, 2, 4] {
                let cfg = DecoderConfig {
                    beam_width: width,
                    alpha: 0.0,
                    beta: 0.0,
                    ..DecoderConfig::default()
                };
                let (labels, score) = beam_decode(&m, &v, None, &cfg).unwrap();
                let exact = -ctc::ctc_loss(&m, &labels, 0).unwrap().loss;
                assert!((score - exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lm_state_matches_prefix_words() {
        let lm = ArpaModel::parse(include_bytes!("../tests/fixtures/bigram.arpa")).unwrap();
        let v = vocab(2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let m = random_matrix(&mut rng, 8, 4);
            let cfg = DecoderConfig {
                beam_width: 8,
                ..DecoderConfig::for_vocab(&v)
            };
            for d in beam_search(&m, &v, Some(&lm), &cfg).unwrap() {
                let text = transcript(&d.labels, &v);
                let expected: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
                assert_eq!(d.words, expected);
                let refs: Vec<&str> = d.words.iter().map(String::as_str).collect();
                let lm_part = cfg.alpha * std::f64::consts::LN_10 * lm.score_sentence(&refs)
                    + cfg.beta * refs.len() as f64;
                assert!((d.lm_score - lm_part).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic() {
        let lm = ArpaModel::parse(include_bytes!("../tests/fixtures/bigram.arpa")).unwrap();
        let v = vocab(2);
        let m = random_matrix(&mut ChaCha8Rng::seed_from_u64(24), 20, 4);
        let cfg = DecoderConfig::for_vocab(&v);
        let a = beam_search(&m, &v, Some(&lm), &cfg).unwrap();
        let b = beam_search(&m, &v, Some(&lm), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transcript_collapses_delimiters() {
        let v = vocab(2);
        let labels = LabelSequence::new(vec![1, 2, 1, 1, 3, 1], 0).unwrap();
        assert_eq!(transcript(&labels, &v), "a b");
    }
}
