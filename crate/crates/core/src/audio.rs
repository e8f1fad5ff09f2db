//! PCM audio: WAV ingestion, linear resampling, amplitude-threshold
//! trimming and duration checks.
//!
//! The pipeline order is resample to 16 kHz, then trim, then measure.
//! mp3 sources must be transcoded to 16-bit mono WAV beforehand.

use std::io::Cursor;

use thiserror::Error;

/// Rate every clip is resampled to before trimming.
pub const TARGET_RATE_HZ: u32 = 16_000;
/// Leading/trailing samples quieter than `max|x| / divisor` are removed.
pub const DEFAULT_TRIM_DIVISOR: f32 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("unsupported WAV: {0}")]
    Unsupported(String),
    #[error("unsupported channel count {0}, expected mono")]
    Channels(u16),
    #[error("malformed WAV: {0}")]
    Format(String),
    #[error("sample rate must be positive")]
    ZeroRate,
    #[error("waveform is empty")]
    Empty,
    #[error("waveform is all zeros; nothing survives trimming")]
    AllSilent,
    #[error("trim divisor must be positive and finite, got {0}")]
    BadDivisor(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroRate);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, x| m.max(x.abs()))
    }

    /// 16-bit PCM mono WAV. Amplitudes are scaled by 32768 and clamped.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory writer");
            for &x in &self.samples {
                let v = (x as f64 * 32768.0)
                    .round()
                    .clamp(i16::MIN as f64, i16::MAX as f64);
                w.write_sample(v as i16).expect("in-memory write");
            }
            w.finalize().expect("in-memory finalize");
        }
        buf.into_inner()
    }
}

fn wav_error(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => {
            AudioError::Format(format!("truncated or unreadable chunk ({io})"))
        }
        hound::Error::FormatError(msg) => AudioError::Format(msg.to_string()),
        hound::Error::Unsupported => AudioError::Unsupported("codec is not integer PCM".into()),
        other => AudioError::Format(other.to_string()),
    }
}

/// Reads a RIFF/WAVE PCM 16-bit mono file. Samples are `raw / 32768`.
pub fn load_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_error)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioError::Unsupported(
            "floating-point samples, expected PCM16".into(),
        ));
    }
    if spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported(format!(
            "{}-bit samples, expected 16",
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(AudioError::Channels(spec.channels));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wav_error)?;
    if samples.len() != declared {
        return Err(AudioError::Format(format!(
            "data chunk declares {declared} samples, found {}",
            samples.len()
        )));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Linear interpolation onto a new rate. Output sample `i` is read at source
/// position `i * source / target`, clamped to the last sample.
pub fn resample_linear(w: &Waveform, target_hz: u32) -> Result<Waveform, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::ZeroRate);
    }
    if w.is_empty() {
        return Err(AudioError::Empty);
    }
    let src = w.sample_rate_hz as u64;
    let dst = target_hz as u64;
    if src == dst {
        return Ok(w.clone());
    }
    let n = w.len() as u64;
    let out_len = ((n * dst * 2 + src) / (2 * src)) as usize;
    let last = w.len() - 1;
    let samples = (0..out_len as u64)
        .map(|i| {
            let num = i * src;
            let idx = (num / dst) as usize;
            if idx >= last {
                return w.samples[last];
            }
            let frac = (num % dst) as f64 / dst as f64;
            let (a, b) = (w.samples[idx] as f64, w.samples[idx + 1] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect();
    Waveform::new(samples, target_hz)
}

/// Drops leading and trailing samples with `|x| < max|x| / divisor`.
/// Samples exactly at the threshold are kept; the interior is untouched.
pub fn trim_silence(w: &Waveform, divisor: f32) -> Result<Waveform, AudioError> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(AudioError::BadDivisor(divisor));
    }
    if w.is_empty() {
        return Err(AudioError::Empty);
    }
    let peak = w.peak();
    if peak == 0.0 {
        return Err(AudioError::AllSilent);
    }
    let threshold = peak / divisor;
    let loud = |x: &f32| x.abs() >= threshold;
    let start = w
        .samples
        .iter()
        .position(loud)
        .expect("peak sample is loud");
    let end = w
        .samples
        .iter()
        .rposition(loud)
        .expect("peak sample is loud");
    Waveform::new(w.samples[start..=end].to_vec(), w.sample_rate_hz)
}

/// `min_s <= duration <= max_s`, both ends inclusive.
pub fn duration_ok(w: &Waveform, min_s: f64, max_s: f64) -> bool {
    let d = w.duration_s();
    min_s <= d && d <= max_s
}

/// The full per-clip preprocessing: resample to 16 kHz, then trim.
pub fn preprocess(w: &Waveform, divisor: f32) -> Result<Waveform, AudioError> {
    trim_silence(&resample_linear(w, TARGET_RATE_HZ)?, divisor)
}
