//! Dataset manifests, vote/duration filtering, the character vocabulary and
//! the seeded merge-and-resplit used between training phases.
//!
//! Manifests are Common Voice style TSV files. The columns `path`,
//! `sentence`, `up_votes` and `down_votes` are required; `duration_s` and
//! `clip_id` are optional and all other columns are carried through
//! untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const COL_PATH: &str = "path";
pub const COL_SENTENCE: &str = "sentence";
pub const COL_UP: &str = "up_votes";
pub const COL_DOWN: &str = "down_votes";
pub const COL_DURATION: &str = "duration_s";
pub const COL_CLIP_ID: &str = "clip_id";

/// Token written for the blank entry in vocabulary files.
pub const BLANK_TOKEN: &str = "<blank>";
/// Token written for the word delimiter in vocabulary files.
pub const DELIM_TOKEN: &str = "|";

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("{source_name}: header is missing required column {column:?}")]
    MissingColumn { source_name: String, column: String },
    #[error("{source_name} line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{source_name} line {line}: column {column:?} has invalid value {value:?}")]
    InvalidField {
        source_name: String,
        line: usize,
        column: String,
        value: String,
    },
    #[error("{source_name}: input is not valid UTF-8")]
    Encoding { source_name: String },
    #[error("duplicate clip id {0:?}")]
    DuplicateClipId(String),
    #[error("clip {0:?} has no duration but a duration filter is active")]
    MissingDuration(String),
    #[error("cannot build a vocabulary from an empty manifest")]
    EmptyManifest,
    #[error("character {0:?} is reserved by the vocabulary file format")]
    ReservedCharacter(char),
    #[error("character {ch:?} at offset {offset} is not in the vocabulary")]
    OutOfVocabulary { ch: char, offset: usize },
    #[error("id {0} has no character (out of range or blank)")]
    InvalidId(u32),
    #[error("vocabulary line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
    #[error("train fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub audio_path: String,
    pub sentence: String,
    pub upvotes: u32,
    pub downvotes: u32,
    pub duration_s: Option<f64>,
    /// Columns this crate does not interpret, keyed by header name.
    pub extra: BTreeMap<String, String>,
}

impl ClipRecord {
    pub fn new(clip_id: &str, sentence: &str, upvotes: u32, downvotes: u32) -> Self {
        Self {
            clip_id: clip_id.to_string(),
            audio_path: format!("{clip_id}.wav"),
            sentence: sentence.to_string(),
            upvotes,
            downvotes,
            duration_s: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_duration(mut self, seconds: f64) -> Self {
        self.duration_s = Some(seconds);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub source_name: String,
    /// Header in file order, used when writing the manifest back out.
    pub columns: Vec<String>,
    pub records: Vec<ClipRecord>,
}

fn default_columns() -> Vec<String> {
    [COL_PATH, COL_SENTENCE, COL_UP, COL_DOWN]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn clip_id_from_path(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

impl Manifest {
    pub fn new(source_name: &str, records: Vec<ClipRecord>) -> Result<Self, CorpusError> {
        check_unique(records.iter())?;
        let mut columns = default_columns();
        if records.iter().any(|r| r.duration_s.is_some()) {
            columns.push(COL_DURATION.to_string());
        }
        Ok(Self {
            source_name: source_name.to_string(),
            columns,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the manifest in the same TSV dialect it was read from, adding
    /// a `duration_s` column when durations are known.
    pub fn to_tsv(&self) -> String {
        let mut columns = self.columns.clone();
        if !columns.iter().any(|c| c == COL_DURATION)
            && self.records.iter().any(|r| r.duration_s.is_some())
        {
            columns.push(COL_DURATION.to_string());
        }
        let mut out = columns.join("\t");
        out.push('\n');
        for r in &self.records {
            let fields: Vec<String> = columns
                .iter()
                .map(|c| match c.as_str() {
                    COL_PATH => r.audio_path.clone(),
                    COL_SENTENCE => r.sentence.clone(),
                    COL_UP => r.upvotes.to_string(),
                    COL_DOWN => r.downvotes.to_string(),
                    COL_DURATION => r.duration_s.map(|d| d.to_string()).unwrap_or_default(),
                    COL_CLIP_ID => r.clip_id.clone(),
                    other => r.extra.get(other).cloned().unwrap_or_default(),
                })
                .collect();
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }
}

fn check_unique<'a>(records: impl Iterator<Item = &'a ClipRecord>) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.clip_id.as_str()) {
            return Err(CorpusError::DuplicateClipId(r.clip_id.clone()));
        }
    }
    Ok(())
}

/// Parses a TSV manifest. Line numbers in errors are 1-based and count the
/// header.
pub fn parse_manifest(tsv: &[u8], source_name: &str) -> Result<Manifest, CorpusError> {
    let text = std::str::from_utf8(tsv).map_err(|_| CorpusError::Encoding {
        source_name: source_name.to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    let header: Vec<String> = match lines.next() {
        Some((_, h)) => h
            .trim_end_matches('\r')
            .split('\t')
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    let index: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| CorpusError::MissingColumn {
                source_name: source_name.to_string(),
                column: name.to_string(),
            })
    };
    let (i_path, i_sentence, i_up, i_down) = (
        col(COL_PATH)?,
        col(COL_SENTENCE)?,
        col(COL_UP)?,
        col(COL_DOWN)?,
    );
    let i_duration = index.get(COL_DURATION).copied();
    let i_clip = index.get(COL_CLIP_ID).copied();
    let known = [
        Some(i_path),
        Some(i_sentence),
        Some(i_up),
        Some(i_down),
        i_duration,
        i_clip,
    ];

    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CorpusError::FieldCount {
                source_name: source_name.to_string(),
                line,
                expected: header.len(),
                found: fields.len(),
            });
        }
        let invalid = |column: &str, value: &str| CorpusError::InvalidField {
            source_name: source_name.to_string(),
            line,
            column: column.to_string(),
            value: value.to_string(),
        };
        let votes = |i: usize, column: &str| {
            fields[i]
                .trim()
                .parse::<u32>()
                .map_err(|_| invalid(column, fields[i]))
        };
        let upvotes = votes(i_up, COL_UP)?;
        let downvotes = votes(i_down, COL_DOWN)?;
        let duration_s = match i_duration.map(|i| fields[i].trim()) {
            None | Some("") => None,
            Some(v) => {
                let d: f64 = v.parse().map_err(|_| invalid(COL_DURATION, v))?;
                if !d.is_finite() || d < 0.0 {
                    return Err(invalid(COL_DURATION, v));
                }
                Some(d)
            }
        };
        let audio_path = fields[i_path].to_string();
        let clip_id = match i_clip {
            Some(i) if !fields[i].is_empty() => fields[i].to_string(),
            _ => clip_id_from_path(&audio_path),
        };
        let extra = header
            .iter()
            .enumerate()
            .filter(|(i, _)| !known.contains(&Some(*i)))
            .map(|(i, c)| (c.clone(), fields[i].to_string()))
            .collect();
        records.push(ClipRecord {
            clip_id,
            audio_path,
            sentence: fields[i_sentence].to_string(),
            upvotes,
            downvotes,
            duration_s,
            extra,
        });
    }
    check_unique(records.iter())?;
    Ok(Manifest {
        source_name: source_name.to_string(),
        columns: header,
        records,
    })
}

/// Keeps records with `upvotes > downvotes` (when `require_net_positive`)
/// and `min_s <= duration <= max_s`. The duration test is skipped when the
/// range is `[0, inf)`.
pub fn filter_clips(
    m: &Manifest,
    require_net_positive: bool,
    min_s: f64,
    max_s: f64,
) -> Result<Manifest, CorpusError> {
    let duration_active = min_s > 0.0 || max_s.is_finite();
    let mut records = Vec::new();
    for r in &m.records {
        if require_net_positive && r.upvotes <= r.downvotes {
            continue;
        }
        if duration_active {
            let d = r
                .duration_s
                .ok_or_else(|| CorpusError::MissingDuration(r.clip_id.clone()))?;
            if d < min_s || d > max_s {
                continue;
            }
        }
        records.push(r.clone());
    }
    Ok(Manifest {
        source_name: m.source_name.clone(),
        columns: m.columns.clone(),
        records,
    })
}

/// Counts of each voting category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VoteSummary {
    pub net_positive: usize,
    pub net_negative: usize,
    pub unvoted: usize,
    /// `upvotes == downvotes != 0`
    pub tied: usize,
}

impl VoteSummary {
    pub fn of(m: &Manifest) -> Self {
        let mut s = Self::default();
        for r in &m.records {
            match r.upvotes.cmp(&r.downvotes) {
                std::cmp::Ordering::Greater => s.net_positive += 1,
                std::cmp::Ordering::Less => s.net_negative += 1,
                std::cmp::Ordering::Equal if r.upvotes == 0 => s.unvoted += 1,
                std::cmp::Ordering::Equal => s.tied += 1,
            }
        }
        s
    }

    pub fn total(&self) -> usize {
        self.net_positive + self.net_negative + self.unvoted + self.tied
    }
}

/// Character vocabulary with reserved blank and word-delimiter ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// Character for each id; `None` at the blank id.
    symbols: Vec<Option<char>>,
    char_to_id: BTreeMap<char, u32>,
    blank_id: u32,
    word_delim_id: u32,
}

impl Vocabulary {
    /// Blank takes id 0, the word delimiter (space) id 1, and the given
    /// characters ids 2.. in code point order.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self, CorpusError> {
        let set: BTreeSet<char> = chars.into_iter().filter(|&c| c != ' ').collect();
        let mut symbols = vec![None, Some(' ')];
        let mut char_to_id = BTreeMap::new();
        char_to_id.insert(' ', 1);
        for c in set {
            if matches!(c, '|' | '\t' | '\n' | '\r') {
                return Err(CorpusError::ReservedCharacter(c));
            }
            char_to_id.insert(c, symbols.len() as u32);
            symbols.push(Some(c));
        }
        Ok(Self {
            symbols,
            char_to_id,
            blank_id: 0,
            word_delim_id: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_id(&self) -> u32 {
        self.blank_id
    }

    pub fn word_delim_id(&self) -> u32 {
        self.word_delim_id
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.char_to_id.get(&c).copied()
    }

    /// Character for `id`; the delimiter maps to a space, the blank to `None`.
    pub fn char_of(&self, id: u32) -> Option<char> {
        self.symbols.get(id as usize).copied().flatten()
    }

    /// `<char>\t<id>` per line in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, sym) in self.symbols.iter().enumerate() {
            let token = match sym {
                None => BLANK_TOKEN.to_string(),
                Some(_) if id as u32 == self.word_delim_id => DELIM_TOKEN.to_string(),
                Some(c) => c.to_string(),
            };
            out.push_str(&format!("{token}\t{id}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, msg: String| CorpusError::VocabFormat { line, msg };
        let mut entries: BTreeMap<u32, Option<char>> = BTreeMap::new();
        let (mut blank_id, mut word_delim_id) = (None, None);
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.is_empty() {
                continue;
            }
            let (token, id) = raw
                .rsplit_once('\t')
                .ok_or_else(|| bad(line, "expected <char>\\t<id>".into()))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| bad(line, format!("bad id {id:?}")))?;
            let sym = match token {
                BLANK_TOKEN => {
                    blank_id = Some(id);
                    None
                }
                DELIM_TOKEN => {
                    word_delim_id = Some(id);
                    Some(' ')
                }
                t => {
                    let mut cs = t.chars();
                    match (cs.next(), cs.next()) {
                        (Some(c), None) if c != ' ' => Some(c),
                        _ => {
                            return Err(bad(line, format!("token {t:?} is not a single character")))
                        }
                    }
                }
            };
            if entries.insert(id, sym).is_some() {
                return Err(bad(line, format!("id {id} listed twice")));
            }
        }
        let blank_id = blank_id.ok_or_else(|| bad(0, "no <blank> entry".into()))?;
        let word_delim_id = word_delim_id.ok_or_else(|| bad(0, "no | entry".into()))?;
        if entries.keys().copied().ne(0..entries.len() as u32) {
            return Err(bad(0, "ids are not contiguous from 0".into()));
        }
        let symbols: Vec<Option<char>> = entries.into_values().collect();
        let mut char_to_id = BTreeMap::new();
        for (id, sym) in symbols.iter().enumerate() {
            if let Some(c) = sym {
                if char_to_id.insert(*c, id as u32).is_some() {
                    return Err(bad(0, format!("character {c:?} mapped twice")));
                }
            }
        }
        Ok(Self {
            symbols,
            char_to_id,
            blank_id,
            word_delim_id,
        })
    }
}

/// Vocabulary over every non-space character in the manifest's sentences.
/// Sentences are expected to have been through
/// [`strip_punct`](crate::textnorm::strip_punct).
pub fn build_vocab(m: &Manifest) -> Result<Vocabulary, CorpusError> {
    if m.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    Vocabulary::from_chars(m.records.iter().flat_map(|r| r.sentence.chars()))
}

/// One id per codepoint; spaces become the word delimiter.
pub fn encode_transcript(s: &str, v: &Vocabulary) -> Result<Vec<u32>, CorpusError> {
    s.chars()
        .enumerate()
        .map(|(offset, ch)| {
            v.id_of(ch)
                .ok_or(CorpusError::OutOfVocabulary { ch, offset })
        })
        .collect()
}

pub fn decode_ids(ids: &[u32], v: &Vocabulary) -> Result<String, CorpusError> {
    ids.iter()
        .map(|&id| v.char_of(id).ok_or(CorpusError::InvalidId(id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, CorpusError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(CorpusError::BadFraction(train_fraction));
        }
        Ok(Self {
            train_fraction,
            seed,
        })
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    /// `round_half_up(train_fraction * n)`
    pub fn train_size(&self, n: usize) -> usize {
        ((self.train_fraction * n as f64 + 0.5).floor() as usize).min(n)
    }
}

/// Shuffles with ChaCha8 seeded from `spec.seed` (Fisher-Yates) and cuts at
/// [`SplitSpec::train_size`].
pub fn shuffled_split<T>(mut items: Vec<T>, spec: &SplitSpec) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    items.shuffle(&mut rng);
    let dev = items.split_off(spec.train_size(items.len()));
    (items, dev)
}

/// Pools two manifests and re-splits them, e.g. train + validation into a
/// fresh 85/15 partition.
pub fn merge_and_split(
    a: &Manifest,
    b: &Manifest,
    spec: &SplitSpec,
) -> Result<(Manifest, Manifest), CorpusError> {
    check_unique(a.records.iter().chain(&b.records))?;
    let mut columns = a.columns.clone();
    for c in &b.columns {
        if !columns.contains(c) {
            columns.push(c.clone());
        }
    }
    let pooled: Vec<ClipRecord> = a.records.iter().chain(&b.records).cloned().collect();
    let (train, dev) = shuffled_split(pooled, spec);
    let name = format!("{}+{}", a.source_name, b.source_name);
    let wrap = |suffix: &str, records| Manifest {
        source_name: format!("{name}:{suffix}"),
        columns: columns.clone(),
        records,
    };
    Ok((wrap("train", train), wrap("dev", dev)))
}
