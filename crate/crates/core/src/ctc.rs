//! Connectionist temporal classification.
//!
//! Collapse map, exact forward-backward loss computed in natural-log space,
//! the gradient of that loss with respect to the unnormalized logits, and
//! greedy (best-path) decoding. [`LogitMatrix`] is the interchange type
//! between an acoustic model and every decoder in this crate.

use std::fmt;

use thiserror::Error;

/// Magic bytes at the start of a serialized [`LogitMatrix`].
pub const LOGITS_MAGIC: &[u8; 4] = b"CTCL";
/// Current version of the logit file layout.
pub const LOGITS_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("logit matrix must have at least one frame")]
    NoFrames,
    #[error("logit matrix needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("logit data has {got} values, expected {frames}x{classes}")]
    ShapeMismatch {
        frames: usize,
        classes: usize,
        got: usize,
    },
    #[error("non-finite logit at frame {frame}, class {class}")]
    NonFinite { frame: usize, class: usize },
    #[error("label id {id} at position {pos} is out of range for {classes} classes")]
    LabelOutOfRange { id: u32, pos: usize, classes: usize },
    #[error("label sequence contains the blank id {0}")]
    BlankInLabels(u32),
    #[error("{frames} frames cannot align a label sequence that needs {required}")]
    Infeasible { frames: usize, required: usize },
    #[error("malformed logit file: {0}")]
    Format(String),
}

/// Log of zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(x)))` over a slice; `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A `frames x classes` matrix of per-frame scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if frames == 0 {
            return Err(CtcError::NoFrames);
        }
        if classes < 2 {
            return Err(CtcError::TooFewClasses(classes));
        }
        if values.len() != frames * classes {
            return Err(CtcError::ShapeMismatch {
                frames,
                classes,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CtcError::NonFinite {
                frame: i / classes,
                class: i % classes,
            });
        }
        Ok(Self {
            frames,
            classes,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, CtcError> {
        let classes = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * classes);
        for row in rows {
            let row = row.as_ref();
            if row.len() != classes {
                return Err(CtcError::ShapeMismatch {
                    frames: rows.len(),
                    classes,
                    got: values.len() + row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), classes, values)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.classes)
    }

    /// Serializes to the `CTCL` little-endian layout (float32 payload).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(LOGITS_MAGIC);
        out.extend_from_slice(&LOGITS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CtcError> {
        if bytes.len() < 16 {
            return Err(CtcError::Format(format!(
                "header needs 16 bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != LOGITS_MAGIC {
            return Err(CtcError::Format("bad magic, expected CTCL".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != LOGITS_VERSION {
            return Err(CtcError::Format(format!("unsupported version {version}")));
        }
        let frames = word(8) as usize;
        let classes = word(12) as usize;
        let expected = frames
            .checked_mul(classes)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CtcError::Format("dimensions overflow".into()))?;
        let payload = &bytes[16..];
        if payload.len() != expected {
            return Err(CtcError::Format(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(frames, classes, values)
    }
}

/// A target label sequence. Never contains the blank id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelSequence(Vec<u32>);

impl LabelSequence {
    pub fn new(ids: Vec<u32>, blank_id: u32) -> Result<Self, CtcError> {
        if ids.contains(&blank_id) {
            return Err(CtcError::BlankInLabels(blank_id));
        }
        Ok(Self(ids))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// For callers that build sequences out of non-blank ids only.
    pub(crate) fn from_path_unchecked(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    /// Fewest frames any alignment of this sequence can occupy: one per
    /// label plus one separating blank per adjacent repeat.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "]")
    }
}

/// Merges consecutive duplicates, then drops blanks.
pub fn collapse(path: &[u32], blank_id: u32) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in path {
        if prev != Some(id) && id != blank_id {
            out.push(id);
        }
        prev = Some(id);
    }
    LabelSequence(out)
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(m: &LogitMatrix) -> LogitMatrix {
    let mut values = Vec::with_capacity(m.values.len());
    for row in m.rows() {
        let lse = logsumexp(row);
        values.extend(row.iter().map(|x| x - lse));
    }
    LogitMatrix {
        frames: m.frames,
        classes: m.classes,
        values,
    }
}

/// Result of the forward pass.
#[derive(Debug, Clone)]
pub struct CtcLoss {
    /// `-ln P(y | softmax(m))`; `+inf` when the instance is infeasible.
    pub loss: f64,
    /// False when the label sequence cannot fit in the available frames.
    pub feasible: bool,
    ext_len: usize,
    frames: usize,
    alpha: Vec<f64>,
}

impl CtcLoss {
    /// Rows of the forward table: `2L + 1` (blank-extended label positions).
    pub fn extended_len(&self) -> usize {
        self.ext_len
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Forward log-probability of being at extended position `s` after
    /// emitting frame `t`. `-inf` everywhere for infeasible instances.
    pub fn alpha(&self, s: usize, t: usize) -> f64 {
        self.alpha[s * self.frames + t]
    }
}

fn validate_labels(m: &LogitMatrix, y: &LabelSequence, blank_id: u32) -> Result<(), CtcError> {
    if blank_id as usize >= m.classes {
        return Err(CtcError::LabelOutOfRange {
            id: blank_id,
            pos: 0,
            classes: m.classes,
        });
    }
    for (pos, &id) in y.0.iter().enumerate() {
        if id == blank_id {
            return Err(CtcError::BlankInLabels(blank_id));
        }
        if id as usize >= m.classes {
            return Err(CtcError::LabelOutOfRange {
                id,
                pos,
                classes: m.classes,
            });
        }
    }
    Ok(())
}

fn extend_with_blanks(y: &LabelSequence, blank_id: u32) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * y.len() + 1);
    ext.push(blank_id);
    for &id in &y.0 {
        ext.push(id);
        ext.push(blank_id);
    }
    ext
}

/// Whether position `s` may be entered directly from `s - 2`.
#[inline]
fn can_skip(ext: &[u32], s: usize, blank_id: u32) -> bool {
    s >= 2 && ext[s] != blank_id && ext[s] != ext[s - 2]
}

fn forward(lp: &LogitMatrix, ext: &[u32], blank_id: u32) -> Vec<f64> {
    let frames = lp.frames;
    let n = ext.len();
    let mut alpha = vec![LOG_ZERO; n * frames];
    alpha[0] = lp.get(0, ext[0] as usize);
    if n > 1 {
        alpha[frames] = lp.get(0, ext[1] as usize);
    }
    for t in 1..frames {
        for s in 0..n {
            let mut acc = alpha[s * frames + t - 1];
            if s >= 1 {
                acc = log_add(acc, alpha[(s - 1) * frames + t - 1]);
            }
            if can_skip(ext, s, blank_id) {
                acc = log_add(acc, alpha[(s - 2) * frames + t - 1]);
            }
            if acc != LOG_ZERO {
                alpha[s * frames + t] = acc + lp.get(t, ext[s] as usize);
            }
        }
    }
    alpha
}

/// Backward table excluding the emission at `t` itself.
fn backward(lp: &LogitMatrix, ext: &[u32], blank_id: u32) -> Vec<f64> {
    let frames = lp.frames;
    let n = ext.len();
    let mut beta = vec![LOG_ZERO; n * frames];
    beta[(n - 1) * frames + frames - 1] = 0.0;
    if n > 1 {
        beta[(n - 2) * frames + frames - 1] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..n {
            let mut acc = LOG_ZERO;
            for next in [s, s + 1, s + 2] {
                if next >= n || (next == s + 2 && !can_skip(ext, next, blank_id)) {
                    continue;
                }
                let b = beta[next * frames + t + 1];
                if b != LOG_ZERO {
                    acc = log_add(acc, b + lp.get(t + 1, ext[next] as usize));
                }
            }
            beta[s * frames + t] = acc;
        }
    }
    beta
}

fn terminal_logprob(alpha: &[f64], n: usize, frames: usize) -> f64 {
    let last = alpha[(n - 1) * frames + frames - 1];
    if n > 1 {
        log_add(last, alpha[(n - 2) * frames + frames - 1])
    } else {
        last
    }
}

/// Negative log-likelihood of `y` under `softmax(m)`, summed over every
/// frame-level path that collapses to `y`.
///
/// Infeasible instances (fewer frames than [`LabelSequence::min_frames`])
/// come back as `loss = +inf` with `feasible = false` rather than an error,
/// so training loops can skip them.
pub fn ctc_loss(m: &LogitMatrix, y: &LabelSequence, blank_id: u32) -> Result<CtcLoss, CtcError> {
    validate_labels(m, y, blank_id)?;
    let ext = extend_with_blanks(y, blank_id);
    let frames = m.frames;
    if y.min_frames() > frames {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            feasible: false,
            ext_len: ext.len(),
            frames,
            alpha: vec![LOG_ZERO; ext.len() * frames],
        });
    }
    let lp = log_softmax_rows(m);
    let alpha = forward(&lp, &ext, blank_id);
    let logp = terminal_logprob(&alpha, ext.len(), frames);
    Ok(CtcLoss {
        loss: -logp,
        feasible: true,
        ext_len: ext.len(),
        frames,
        alpha,
    })
}

/// Loss and `d loss / d logits` (row-major `frames x classes`) in one pass.
pub fn ctc_loss_and_grad(
    m: &LogitMatrix,
    y: &LabelSequence,
    blank_id: u32,
) -> Result<(f64, Vec<f64>), CtcError> {
    validate_labels(m, y, blank_id)?;
    let frames = m.frames;
    let classes = m.classes;
    if y.min_frames() > frames {
        return Err(CtcError::Infeasible {
            frames,
            required: y.min_frames(),
        });
    }
    let ext = extend_with_blanks(y, blank_id);
    let n = ext.len();
    let lp = log_softmax_rows(m);
    let alpha = forward(&lp, &ext, blank_id);
    let beta = backward(&lp, &ext, blank_id);
    let logp = terminal_logprob(&alpha, n, frames);

    let mut grad: Vec<f64> = lp.values.iter().map(|v| v.exp()).collect();
    let mut occupancy = vec![LOG_ZERO; classes];
    for t in 0..frames {
        occupancy.fill(LOG_ZERO);
        for s in 0..n {
            let a = alpha[s * frames + t];
            let b = beta[s * frames + t];
            if a != LOG_ZERO && b != LOG_ZERO {
                let k = ext[s] as usize;
                occupancy[k] = log_add(occupancy[k], a + b);
            }
        }
        let row = &mut grad[t * classes..(t + 1) * classes];
        for (g, occ) in row.iter_mut().zip(&occupancy) {
            if *occ != LOG_ZERO {
                *g -= (occ - logp).exp();
            }
        }
    }
    Ok((-logp, grad))
}

/// Gradient of [`ctc_loss`] with respect to the unnormalized logits:
/// `softmax(m) - gamma`, where `gamma` is the per-frame posterior occupancy
/// of each class. Row-major `frames x classes`.
pub fn ctc_grad(m: &LogitMatrix, y: &LabelSequence, blank_id: u32) -> Result<Vec<f64>, CtcError> {
    ctc_loss_and_grad(m, y, blank_id).map(|(_, g)| g)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Best-path decoding: per-frame argmax, then [`collapse`].
pub fn greedy_decode(m: &LogitMatrix, blank_id: u32) -> LabelSequence {
    let path: Vec<u32> = m.rows().map(|r| argmax(r) as u32).collect();
    collapse(&path, blank_id)
}
