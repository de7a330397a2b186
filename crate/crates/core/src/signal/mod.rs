//! Waveforms, spectral framing, synthetic tasks and the CXS1 dataset format.

mod cxs1;
mod fourier;
mod synth;

pub use cxs1::{decode_dataset, encode_dataset, read_dataset, write_dataset, CXS1_MAGIC, CXS1_VERSION};
pub use fourier::{dft, idft, stft_frames, Framed, StftConfig, WindowFn};
pub use synth::{synth_device_fingerprint, synth_multitone, FingerprintConfig, MultitoneConfig};

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("sample {i} is not finite")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Domain(format!("sample rate {sample_rate} must be positive")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How labels are attached to a sequence. The discriminants are the CXS1
/// on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LabelKind {
    /// Multi-hot `[T, L]`.
    PerFrame = 0,
    /// One-hot `[L]`.
    PerSequence = 1,
}

impl LabelKind {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LabelKind::PerFrame),
            1 => Some(LabelKind::PerSequence),
            _ => None,
        }
    }

    pub fn label_len(self, t: usize, l: usize) -> usize {
        match self {
            LabelKind::PerFrame => t * l,
            LabelKind::PerSequence => l,
        }
    }
}

/// Frames `[T, F]` plus flat labels (`T·L` or `L` values).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    pub frames: ComplexTensor,
    pub labels: Vec<f64>,
}

impl SpectralSequence {
    /// Index of the largest label entry; the class of a one-hot sequence.
    pub fn class(&self) -> usize {
        self.labels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: usize,
    pub f: usize,
    pub n_labels: usize,
    pub label_kind: LabelKind,
    pub examples: Vec<SpectralSequence>,
}

impl Dataset {
    pub fn new(t: usize, f: usize, n_labels: usize, label_kind: LabelKind, examples: Vec<SpectralSequence>) -> Result<Self> {
        if t == 0 || f == 0 {
            return Err(Error::Domain(format!("dataset dims T={t}, F={f} must be positive")));
        }
        let d = Dataset { t, f, n_labels, label_kind, examples };
        for (i, ex) in d.examples.iter().enumerate() {
            d.check(i, ex)?;
        }
        Ok(d)
    }

    fn check(&self, i: usize, ex: &SpectralSequence) -> Result<()> {
        if ex.frames.shape() != [self.t, self.f] {
            return Err(Error::dim(format!("example {i} frames {:?}, dataset is [{}, {}]", ex.frames.shape(), self.t, self.f)));
        }
        let want = self.label_kind.label_len(self.t, self.n_labels);
        if ex.labels.len() != want {
            return Err(Error::dim(format!("example {i} has {} labels, expected {want}", ex.labels.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Splits off the last `n` examples.
    pub fn split_tail(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::Contract(format!("cannot hold out {n} of {} examples", self.len())));
        }
        let tail = self.examples.split_off(self.len() - n);
        let held = Dataset { t: self.t, f: self.f, n_labels: self.n_labels, label_kind: self.label_kind, examples: tail };
        Ok((self, held))
    }
}
