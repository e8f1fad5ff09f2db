//! Transcript cleanup and output post-processing for Bengali text.
//!
//! [`strip_punct`] prepares training transcripts. On the output side,
//! [`normalize_bn`] applies canonical composition followed by a declared
//! table of rewrite rules ([`NormRules`]), and [`append_danda`] terminates
//! each sentence with U+0964.

use std::fmt;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// U+0964 DEVANAGARI DANDA.
pub const DANDA: char = '\u{0964}';
/// U+0965 DEVANAGARI DOUBLE DANDA.
pub const DOUBLE_DANDA: char = '\u{0965}';

/// Characters removed by [`strip_punct`].
pub const PUNCTUATION: &[char] = &[
    '\u{0964}', '\u{0965}', ',', '.', '?', '!', ';', ':', '"', '\'', '(', ')', '[', ']', '{', '}',
    '-', '\u{2013}', '\u{2014}', '\u{2026}', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}',
];

const MAX_MATCH_LEN: usize = 4;

/// The rule table shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../data/bn_norm_rules.txt");

#[derive(Debug, Error, PartialEq)]
pub enum TextNormError {
    #[error("rules line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("rewrite rules did not reach a fixpoint; last rule applied: {rule}")]
    NonConvergence { rule: String },
}

/// Removes the fixed punctuation set, collapses whitespace runs to one
/// space and trims both ends.
pub fn strip_punct(s: &str) -> String {
    let kept: String = s.chars().filter(|c| !PUNCTUATION.contains(c)).collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Appends U+0964 unless `s` is empty or already ends in a danda.
pub fn append_danda(s: &str) -> String {
    match s.chars().last() {
        None | Some(DANDA) | Some(DOUBLE_DANDA) => s.to_string(),
        Some(_) => {
            let mut out = String::with_capacity(s.len() + DANDA.len_utf8());
            out.push_str(s);
            out.push(DANDA);
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub pattern: Vec<char>,
    pub replacement: Vec<char>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |cs: &[char]| {
            cs.iter()
                .map(|c| format!("U+{:04X}", *c as u32))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{} -> {}", join(&self.pattern), join(&self.replacement))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormRules {
    pub rules: Vec<Rule>,
    pub apply_canonical_composition: bool,
}

fn parse_codepoints(field: &str, line: usize) -> Result<Vec<char>, TextNormError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            let hex = tok
                .strip_prefix("U+")
                .or_else(|| tok.strip_prefix("u+"))
                .ok_or_else(|| TextNormError::Parse {
                    line,
                    msg: format!("expected U+XXXX, got {tok:?}"),
                })?;
            u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| TextNormError::Parse {
                    line,
                    msg: format!("invalid codepoint {tok:?}"),
                })
        })
        .collect()
}

impl NormRules {
    pub fn parse(text: &str) -> Result<Self, TextNormError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (lhs, rhs) = body.split_once("->").ok_or_else(|| TextNormError::Parse {
                line,
                msg: "missing '->'".into(),
            })?;
            let pattern = parse_codepoints(lhs, line)?;
            if pattern.is_empty() || pattern.len() > MAX_MATCH_LEN {
                return Err(TextNormError::Parse {
                    line,
                    msg: format!("pattern must have 1..={MAX_MATCH_LEN} codepoints"),
                });
            }
            let replacement = parse_codepoints(rhs, line)?;
            rules.push(Rule {
                pattern,
                replacement,
            });
        }
        Ok(Self {
            rules,
            apply_canonical_composition: true,
        })
    }

    /// The bundled Bengali table with canonical composition enabled.
    pub fn bengali_default() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rule table parses")
    }

    pub fn with_canonical_composition(mut self, enabled: bool) -> Self {
        self.apply_canonical_composition = enabled;
        self
    }

    /// One left-to-right pass. Returns the index of the last rule applied.
    fn rewrite_pass(&self, input: &[char], out: &mut Vec<char>) -> Option<usize> {
        out.clear();
        let mut last = None;
        let mut i = 0;
        while i < input.len() {
            let hit = self
                .rules
                .iter()
                .enumerate()
                .find(|(_, r)| input[i..].starts_with(&r.pattern));
            match hit {
                Some((k, rule)) => {
                    out.extend_from_slice(&rule.replacement);
                    i += rule.pattern.len();
                    last = Some(k);
                }
                None => {
                    out.push(input[i]);
                    i += 1;
                }
            }
        }
        last
    }
}

impl Default for NormRules {
    fn default() -> Self {
        Self::bengali_default()
    }
}

/// Repeats one step until the text stops changing: canonical composition
/// (when enabled), then a left-to-right rewrite pass. Composition runs on
/// every step because a rule that deletes a joiner can expose combining
/// marks out of canonical order. The result is a fixed point of the whole
/// step, so normalizing it again is a no-op.
pub fn normalize_bn(s: &str, rules: &NormRules) -> Result<String, TextNormError> {
    let mut cur: Vec<char> = s.chars().collect();
    let bound = (cur.len() * rules.rules.len()).max(1);
    let mut composed = Vec::with_capacity(cur.len());
    let mut next = Vec::with_capacity(cur.len());
    let mut last_rule = None;
    // the final iteration only checks for convergence
    for _ in 0..=bound {
        composed.clear();
        if rules.apply_canonical_composition {
            composed.extend(cur.iter().copied().nfc());
        } else {
            composed.extend_from_slice(&cur);
        }
        let applied = rules.rewrite_pass(&composed, &mut next);
        if next == cur {
            return Ok(cur.into_iter().collect());
        }
        last_rule = applied.or(last_rule);
        std::mem::swap(&mut cur, &mut next);
    }
    Err(TextNormError::NonConvergence {
        rule: last_rule
            .map(|k| rules.rules[k].to_string())
            .unwrap_or_default(),
    })
}

/// [`normalize_bn`] then [`append_danda`]: the decoder output pipeline.
pub fn postprocess(s: &str, rules: &NormRules) -> Result<String, TextNormError> {
    normalize_bn(s, rules).map(|n| append_danda(&n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Composed Bengali characters and their canonical decompositions, from
    /// UnicodeData.txt field 5 for U+0980..U+09FF.
    const CANONICAL_PAIRS: &[(&str, &str)] = &[
        ("\u{09CB}", "\u{09C7}\u{09BE}"),
        ("\u{09CC}", "\u{09C7}\u{09D7}"),
        ("\u{09DC}", "\u{09A1}\u{09BC}"),
        ("\u{09DD}", "\u{09A2}\u{09BC}"),
        ("\u{09DF}", "\u{09AF}\u{09BC}"),
    ];

    pub(crate) const CORPUS: &[&str] = &[
        "আমি ভাত খাই",
        "বাংলাদেশ আমার দেশ",
        "কো\u{09C7}\u{09BE}থায় যাচ্ছ",
        "পড়\u{09BE}শোনা",
        "রা\u{09A1}\u{09BC}\u{09BE}",
        "উ\u{09CD}\u{200C}ত্তর",
        "হঠা\u{09A4}\u{09CD}\u{200D}",
        "মাা ভাই",
        "\u{0985}\u{09BE}মি",
        "গৌ\u{09C7}\u{09D7}রব",
        "দ\u{09C7}\u{09C7}\u{09BE}",
        "ASCII only text 123",
        "",
        "ড়\u{09BC}\u{09CD}",
    ];

    #[test]
    fn strip_punct_examples() {
        assert_eq!(strip_punct("আমি, ভাত!"), "আমি ভাত");
        assert_eq!(strip_punct("।,.?!;:\"'()[]{}-–—…‘’“”"), "");
        assert_eq!(strip_punct("আমি ভাত খাই"), "আমি ভাত খাই");
        assert_eq!(strip_punct("  a \t b\n"), "a b");
        for s in CORPUS {
            let once = strip_punct(s);
            assert_eq!(strip_punct(&once), once);
        }
    }

    #[test]
    fn append_danda_examples() {
        assert_eq!(append_danda("abc"), "abc।");
        assert_eq!(append_danda("abc।"), "abc।");
        assert_eq!(append_danda("abc॥"), "abc॥");
        assert_eq!(append_danda(""), "");
        for s in CORPUS {
            let out = append_danda(s);
            assert_eq!(append_danda(&out), out);
            if !s.is_empty() {
                assert!(out.ends_with(DANDA));
            }
            let grow = out.chars().count() - s.chars().count();
            assert!(grow <= 1);
        }
    }

    #[test]
    fn bundled_rules_parse() {
        let rules = NormRules::bengali_default();
        assert!(rules.apply_canonical_composition);
        assert!(rules.rules.len() > 10);
        assert!(rules
            .rules
            .iter()
            .any(|r| r.pattern == ['\u{200D}'] && r.replacement.is_empty()));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = NormRules::parse("# ok\nU+0041 U+0042\n").unwrap_err();
        assert!(matches!(err, TextNormError::Parse { line: 2, .. }));
        let err = NormRules::parse("U+0041,U+0041,U+0041,U+0041,U+0041 -> U+0041").unwrap_err();
        assert!(matches!(err, TextNormError::Parse { line: 1, .. }));
        let err = NormRules::parse("U+ZZZZ -> U+0041").unwrap_err();
        assert!(matches!(err, TextNormError::Parse { line: 1, .. }));
    }

    #[test]
    fn ascii_unchanged() {
        let rules = NormRules::bengali_default();
        assert_eq!(
            normalize_bn("hello, world 42", &rules).unwrap(),
            "hello, world 42"
        );
    }

    #[test]
    fn specific_rewrites() {
        let rules = NormRules::bengali_default();
        let n = |s: &str| normalize_bn(s, &rules).unwrap();
        assert_eq!(n("\u{09A4}\u{09CD}\u{200D}"), "\u{09CE}");
        assert_eq!(n("ক\u{200C}ত"), "কত");
        assert_eq!(n("মাা"), "মা");
        assert_eq!(n("\u{0985}\u{09BE}মি"), "আমি");
        assert_eq!(n("\u{09A1}\u{09BC}"), "\u{09DC}");
    }

    #[test]
    fn joiner_removal_reorders_marks() {
        // ZWNJ blocks canonical reordering until a rule deletes it
        let rules = NormRules::bengali_default();
        let once = normalize_bn("\u{09FE}\u{200C}\u{09CD}", &rules).unwrap();
        assert_eq!(once, "\u{09CD}\u{09FE}");
        assert_eq!(normalize_bn(&once, &rules).unwrap(), once);
    }

    #[test]
    fn idempotent_on_corpus() {
        for composition in [true, false] {
            let rules = NormRules::bengali_default().with_canonical_composition(composition);
            for s in CORPUS {
                let once = normalize_bn(s, &rules).unwrap();
                assert_eq!(normalize_bn(&once, &rules).unwrap(), once, "input {s:?}");
            }
        }
    }

    #[test]
    fn canonical_equivalents_agree() {
        for composition in [true, false] {
            let rules = NormRules::bengali_default().with_canonical_composition(composition);
            for (composed, decomposed) in CANONICAL_PAIRS {
                for (pre, post) in [("", ""), ("ক", "ন"), ("আমি ", " তুমি")] {
                    let a = normalize_bn(&format!("{pre}{composed}{post}"), &rules).unwrap();
                    let b = normalize_bn(&format!("{pre}{decomposed}{post}"), &rules).unwrap();
                    assert_eq!(a, b, "{composed:?} vs {decomposed:?}");
                }
            }
        }
    }

    #[test]
    fn length_and_alphabet_bounds() {
        let rules = NormRules::bengali_default();
        let replacement_chars: HashSet<char> = rules
            .rules
            .iter()
            .flat_map(|r| r.replacement.iter().copied())
            .collect();
        for s in CORPUS {
            let out = postprocess(s, &rules).unwrap();
            let (n_in, n_out) = (s.chars().count(), out.chars().count());
            assert!(n_out <= 4 * n_in.max(1) && n_in <= 4 * n_out.max(1));
            for c in out.chars() {
                assert!(
                    s.contains(c) || replacement_chars.contains(&c) || c == DANDA || c == ' ',
                    "{c:?} introduced into {s:?}"
                );
            }
        }
    }

    #[test]
    fn cyclic_rules_fail_to_converge() {
        let rules = NormRules::parse("U+0061 -> U+0062\nU+0062 -> U+0061\n").unwrap();
        match normalize_bn("ab", &rules) {
            Err(TextNormError::NonConvergence { rule }) => assert!(rule.starts_with("U+00")),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let growing = NormRules::parse("U+0061 -> U+0061,U+0061").unwrap();
        assert!(normalize_bn("a", &growing).is_err());
    }
}
