//! ARPA back-off n-gram language models.
//!
//! Probabilities stay in log10, as stored in the file. The decoder converts
//! to natural log once, when it fuses LM and acoustic scores.

use std::fmt::Write as _;

use indexmap::IndexMap;
use thiserror::Error;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
/// log10 probability assigned to a word that is neither in the model nor
/// covered by an `<unk>` entry.
pub const DEFAULT_OOV_FLOOR: f64 = -10.0;

#[derive(Debug, Error, PartialEq)]
pub enum ArpaError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: header declares {declared} {order}-grams, found {found}")]
    CountMismatch {
        line: usize,
        order: usize,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: context {context:?} of an {order}-gram is missing from the {lower}-grams", lower = order - 1)]
    MissingContext {
        line: usize,
        order: usize,
        context: String,
    },
    #[error("missing \\end\\ marker")]
    MissingEnd,
    #[error("input is not valid UTF-8")]
    Encoding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub log10_prob: f64,
    /// Absent on the highest order and when the file omits it.
    pub backoff_log10: Option<f64>,
}

type WordId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct ArpaModel {
    order: usize,
    words: IndexMap<String, WordId>,
    /// `tables[k - 1]` holds the k-grams, in file order.
    tables: Vec<Table>,
    unk: Option<WordId>,
    oov_floor: f64,
}

enum Section {
    Preamble,
    Data,
    Grams(usize),
    Done,
}

type Table = IndexMap<Vec<WordId>, NGramEntry>;

/// Verifies the entry count of the section being closed.
fn close_section(
    section: &Section,
    tables: &[Table],
    declared: &[usize],
    line: usize,
) -> Result<(), ArpaError> {
    if let Section::Grams(k) = *section {
        let found = tables[k - 1].len();
        if found != declared[k - 1] {
            return Err(ArpaError::CountMismatch {
                line,
                order: k,
                declared: declared[k - 1],
                found,
            });
        }
    }
    Ok(())
}

fn parse_number(s: &str, line: usize, what: &str) -> Result<f64, ArpaError> {
    s.parse::<f64>().map_err(|_| ArpaError::Syntax {
        line,
        msg: format!("non-numeric {what} {s:?}"),
    })
}

impl ArpaModel {
    pub fn parse(bytes: &[u8]) -> Result<Self, ArpaError> {
        let text = std::str::from_utf8(bytes).map_err(|_| ArpaError::Encoding)?;
        let mut declared: Vec<usize> = Vec::new();
        let mut words: IndexMap<String, WordId> = IndexMap::new();
        let mut tables: Vec<Table> = Vec::new();
        let mut section = Section::Preamble;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let syntax = |msg: String| ArpaError::Syntax { line, msg };

            if trimmed == "\\data\\" {
                if !matches!(section, Section::Preamble) {
                    return Err(syntax("unexpected \\data\\".into()));
                }
                section = Section::Data;
                continue;
            }
            if trimmed == "\\end\\" {
                close_section(&section, &tables, &declared, line)?;
                if let Some(k) = (tables.len()..declared.len()).next() {
                    return Err(ArpaError::CountMismatch {
                        line,
                        order: k + 1,
                        declared: declared[k],
                        found: 0,
                    });
                }
                section = Section::Done;
                break;
            }
            if let Some(rest) = trimmed.strip_prefix('\\') {
                let k = rest
                    .strip_suffix("-grams:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| syntax(format!("unknown section {trimmed:?}")))?;
                if matches!(section, Section::Preamble | Section::Done) {
                    return Err(syntax("n-gram section before \\data\\".into()));
                }
                close_section(&section, &tables, &declared, line)?;
                if k != tables.len() + 1 || k > declared.len() {
                    return Err(syntax(format!("unexpected \\{k}-grams: section")));
                }
                tables.push(IndexMap::with_capacity(declared[k - 1]));
                section = Section::Grams(k);
                continue;
            }
            match section {
                Section::Preamble => continue,
                Section::Data => {
                    let spec = trimmed
                        .strip_prefix("ngram")
                        .and_then(|s| s.trim().split_once('='))
                        .ok_or_else(|| {
                            syntax(format!("expected 'ngram k=count', got {trimmed:?}"))
                        })?;
                    let k: usize = spec
                        .0
                        .trim()
                        .parse()
                        .map_err(|_| syntax(format!("bad order {:?}", spec.0)))?;
                    let n: usize = spec
                        .1
                        .trim()
                        .parse()
                        .map_err(|_| syntax(format!("bad count {:?}", spec.1)))?;
                    if k != declared.len() + 1 {
                        return Err(syntax(format!("ngram {k}= out of order")));
                    }
                    declared.push(n);
                }
                Section::Grams(k) => {
                    let fields: Vec<&str> = trimmed.split_whitespace().collect();
                    let highest = k == declared.len();
                    if fields.len() != k + 1 && (fields.len() != k + 2 || highest) {
                        return Err(syntax(format!(
                            "{k}-gram entry needs {} fields, found {}",
                            if highest {
                                format!("{}", k + 1)
                            } else {
                                format!("{} or {}", k + 1, k + 2)
                            },
                            fields.len()
                        )));
                    }
                    let log10_prob = parse_number(fields[0], line, "log probability")?;
                    let backoff_log10 = fields
                        .get(k + 1)
                        .map(|b| parse_number(b, line, "back-off weight"))
                        .transpose()?;
                    let mut key = Vec::with_capacity(k);
                    for w in &fields[1..=k] {
                        let id = if k == 1 {
                            let next = words.len() as WordId;
                            *words.entry(w.to_string()).or_insert(next)
                        } else {
                            *words
                                .get(*w)
                                .ok_or_else(|| syntax(format!("word {w:?} is not a unigram")))?
                        };
                        key.push(id);
                    }
                    if k >= 2 && !tables[k - 2].contains_key(&key[..k - 1]) {
                        return Err(ArpaError::MissingContext {
                            line,
                            order: k,
                            context: fields[1..k].join(" "),
                        });
                    }
                    let entry = NGramEntry {
                        log10_prob,
                        backoff_log10,
                    };
                    if tables[k - 1].insert(key, entry).is_some() {
                        return Err(syntax(format!(
                            "duplicate {k}-gram {:?}",
                            fields[1..=k].join(" ")
                        )));
                    }
                }
                Section::Done => unreachable!("parsing stops at \\end\\"),
            }
        }
        if !matches!(section, Section::Done) {
            return Err(ArpaError::MissingEnd);
        }
        if tables.is_empty() {
            return Err(ArpaError::Syntax {
                line: 0,
                msg: "model has no n-gram sections".into(),
            });
        }
        let unk = words.get(UNK).copied();
        Ok(Self {
            order: tables.len(),
            words,
            tables,
            unk,
            oov_floor: DEFAULT_OOV_FLOOR,
        })
    }

    pub fn with_oov_floor(mut self, floor: f64) -> Self {
        self.oov_floor = floor;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn oov_floor(&self) -> f64 {
        self.oov_floor
    }

    /// Number of k-grams for `k` in `1..=order`.
    pub fn count(&self, k: usize) -> usize {
        self.tables.get(k.wrapping_sub(1)).map_or(0, |t| t.len())
    }

    /// Words in unigram order.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }

    pub fn contains_word(&self, w: &str) -> bool {
        self.words.contains_key(w)
    }

    /// Looks up an n-gram by its words.
    pub fn entry(&self, words: &[&str]) -> Option<NGramEntry> {
        let key: Option<Vec<WordId>> = words.iter().map(|w| self.words.get(*w).copied()).collect();
        self.tables
            .get(words.len().checked_sub(1)?)?
            .get(&key?)
            .copied()
    }

    fn resolve(&self, w: &str) -> Option<WordId> {
        self.words.get(w).copied().or(self.unk)
    }

    /// Katz back-off: the longest matching n-gram's log10 probability plus
    /// the back-off weights of every longer context that failed to match.
    /// Only the last `order - 1` context words are used.
    pub fn ngram_logprob(&self, context: &[&str], w: &str) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<Option<WordId>> = context[context.len() - keep..]
            .iter()
            .map(|c| self.resolve(c))
            .collect();
        self.logprob_ids(&ctx, self.resolve(w))
    }

    fn logprob_ids(&self, ctx: &[Option<WordId>], w: Option<WordId>) -> f64 {
        let mut acc = 0.0;
        let mut key = Vec::with_capacity(ctx.len() + 1);
        for start in 0..=ctx.len() {
            let suffix = &ctx[start..];
            let known: Option<Vec<WordId>> = suffix.iter().copied().collect();
            let Some(known) = known else { continue };
            if let Some(w) = w {
                key.clear();
                key.extend_from_slice(&known);
                key.push(w);
                if let Some(e) = self.tables[key.len() - 1].get(&key) {
                    return acc + e.log10_prob;
                }
            }
            if !known.is_empty() {
                if let Some(bo) = self.tables[known.len() - 1]
                    .get(&known)
                    .and_then(|e| e.backoff_log10)
                {
                    acc += bo;
                }
            }
        }
        acc + self.oov_floor
    }

    /// log10 P(words) with `<s>` prepended and `</s>` appended.
    pub fn score_sentence(&self, words: &[&str]) -> f64 {
        let mut history: Vec<&str> = Vec::with_capacity(words.len() + 1);
        history.push(BOS);
        let mut total = 0.0;
        for w in words.iter().copied().chain(std::iter::once(EOS)) {
            total += self.ngram_logprob(&history, w);
            history.push(w);
        }
        total
    }

    /// Writes the model back out in ARPA format.
    pub fn to_arpa(&self) -> String {
        let names: Vec<&str> = self.words.keys().map(String::as_str).collect();
        let mut out = String::from("\\data\\\n");
        for (k, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, t.len());
        }
        for (k, t) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            for (key, e) in t {
                let gram: Vec<&str> = key.iter().map(|&id| names[id as usize]).collect();
                let _ = write!(out, "{}\t{}", e.log10_prob, gram.join(" "));
                if let Some(bo) = e.backoff_log10 {
                    let _ = write!(out, "\t{bo}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}

/// Incremental scorer state for one hypothesis: the last `order - 1` words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LmHistory(Vec<String>);

impl LmHistory {
    pub fn start() -> Self {
        Self(vec![BOS.to_string()])
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    /// Scores `w` in this context and returns the advanced history.
    pub fn advance(&self, lm: &ArpaModel, w: &str) -> (f64, Self) {
        let ctx: Vec<&str> = self.0.iter().map(String::as_str).collect();
        let lp = lm.ngram_logprob(&ctx, w);
        let mut next = self.0.clone();
        next.push(w.to_string());
        let excess = next.len().saturating_sub(lm.order().saturating_sub(1));
        next.drain(..excess);
        (lp, Self(next))
    }
}
