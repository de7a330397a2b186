use std::f64::consts::PI;

use num_complex::Complex64;

use super::Waveform;
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};

/// `X[k] = Σ_t x[t]·exp(−2πi·kt/N)`, evaluated directly.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// `x[t] = (1/N)·Re Σ_k X[k]·exp(+2πi·kt/N)`.
pub fn idft(spectrum: &[Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    (0..n)
        .map(|t| {
            let s: Complex64 = spectrum
                .iter()
                .enumerate()
                .map(|(k, &v)| v * Complex64::from_polar(1.0, 2.0 * PI * ((k * t) % n) as f64 / n as f64))
                .sum();
            s.re / n as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFn {
    Rectangular,
    Hann,
}

impl WindowFn {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; n],
            WindowFn::Hann if n == 1 => vec![1.0],
            WindowFn::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub t_max: usize,
    pub window_fn: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window: 128, hop: 64, t_max: 64, window_fn: WindowFn::Rectangular }
    }
}

impl StftConfig {
    /// Frequency bins kept per frame.
    pub fn n_bins(&self) -> usize {
        self.window / 2 + 1
    }
}

/// Framed spectrum `[t_max, window/2 + 1]` and which rows hold real frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Framed {
    pub frames: ComplexTensor,
    pub valid: Vec<bool>,
}

/// Frames at offsets `0, hop, 2·hop, …`, each transformed and cut to the
/// non-negative bins; zero rows pad the result to `t_max`.
pub fn stft_frames(w: &Waveform, cfg: &StftConfig) -> Result<Framed> {
    let (window, hop) = (cfg.window, cfg.hop);
    if window == 0 || window > w.len() {
        return Err(Error::Framing(format!("window {window} does not fit a waveform of {} samples", w.len())));
    }
    if hop == 0 {
        return Err(Error::Framing("hop must be at least 1".into()));
    }
    let bins = cfg.n_bins();
    let taper = cfg.window_fn.weights(window);
    let available = (w.len() - window) / hop + 1;
    let used = available.min(cfg.t_max);
    let mut frames = ComplexTensor::zeros(vec![cfg.t_max, bins]);
    let mut scratch = vec![0.0; window];
    for t in 0..used {
        let chunk = &w.samples()[t * hop..t * hop + window];
        for (s, (&x, &c)) in scratch.iter_mut().zip(chunk.iter().zip(&taper)) {
            *s = x * c;
        }
        let spec = dft(&scratch);
        for (k, v) in spec.iter().take(bins).enumerate() {
            frames.re_mut().data_mut()[t * bins + k] = v.re;
            frames.im_mut().data_mut()[t * bins + k] = v.im;
        }
    }
    Ok(Framed { frames, valid: (0..cfg.t_max).map(|t| t < used).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: cosine/sine sums, no complex type.
    fn dft_oracle(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, v) in x.iter().enumerate() {
                    let a = 2.0 * PI * k as f64 * t as f64 / n;
                    re += v * a.cos();
                    im -= v * a.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn closed_forms() {
        for v in dft(&[1.0, 0.0, 0.0, 0.0]) {
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
        let dc = dft(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(dc[0], Complex64::new(4.0, 0.0));
        assert!(dc[1..].iter().all(|v| v.norm() < 1e-15));
        let c = |re| Complex64::new(re, 0.0);
        assert!(idft(&[c(4.0), c(0.0), c(0.0), c(0.0)]).iter().all(|&v| v == 1.0));
        assert!(idft(&[c(0.0); 5]).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn roundtrip_parseval_and_oracle(x in prop::collection::vec(-10.0f64..10.0, 64)) {
            let spec = dft(&x);
            let back = idft(&spec);
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let e_time: f64 = x.iter().map(|v| v * v).sum();
            let e_freq: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
            prop_assert!((e_time - e_freq).abs() <= 1e-6 * e_time.max(1e-12));
            for (v, (re, im)) in spec.iter().zip(dft_oracle(&x)) {
                prop_assert!((v.re - re).abs() < 1e-9 && (v.im - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_frame_is_the_truncated_dft() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let w = Waveform::new(x.clone(), 8000.0).unwrap();
        let framed = stft_frames(&w, &StftConfig { window: 16, hop: 16, t_max: 1, window_fn: WindowFn::Rectangular }).unwrap();
        assert_eq!(framed.frames.shape(), &[1, 9]);
        assert_eq!(framed.valid, vec![true]);
        let spec = dft(&x);
        for (k, v) in spec.iter().enumerate().take(9) {
            assert_eq!(framed.frames.re().data()[k], v.re);
            assert_eq!(framed.frames.im().data()[k], v.im);
        }
    }

    #[test]
    fn tone_energy_dominates_its_bin() {
        let (n, k) = (32, 5);
        let x: Vec<f64> = (0..n * 6).map(|t| (2.0 * PI * k as f64 * t as f64 / n as f64 + 0.3).cos()).collect();
        let framed = stft_frames(&Waveform::new(x, 1.0).unwrap(), &StftConfig { window: n, hop: n / 2, t_max: 20, window_fn: WindowFn::Rectangular }).unwrap();
        let bins = n / 2 + 1;
        for t in 0..20 {
            if !framed.valid[t] {
                continue;
            }
            let mag = |b: usize| framed.frames.re().data()[t * bins + b].hypot(framed.frames.im().data()[t * bins + b]);
            for b in (0..bins).filter(|&b| b != k) {
                assert!(mag(k) > 10.0 * mag(b));
            }
        }
        assert_eq!(framed.valid.iter().filter(|&&v| v).count(), 11);
    }

    #[test]
    fn default_framing_pads_and_truncates() {
        let cfg = StftConfig::default();
        let long = Waveform::new(vec![0.5; 128 + 64 * 70], 11025.0).unwrap();
        let f = stft_frames(&long, &cfg).unwrap();
        assert_eq!(f.frames.shape(), &[64, 65]);
        assert!(f.valid.iter().all(|&v| v));
        let short = Waveform::new(vec![0.5; 128 + 64 * 2], 11025.0).unwrap();
        let f = stft_frames(&short, &cfg).unwrap();
        assert_eq!(f.valid.iter().filter(|&&v| v).count(), 3);
        assert!(f.frames.re().row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn framing_errors() {
        let w = Waveform::new(vec![1.0; 10], 1.0).unwrap();
        let big = StftConfig { window: 11, hop: 1, t_max: 4, window_fn: WindowFn::Rectangular };
        assert!(matches!(stft_frames(&w, &big), Err(Error::Framing(_))));
        let zero_hop = StftConfig { window: 4, hop: 0, t_max: 4, window_fn: WindowFn::Rectangular };
        assert!(matches!(stft_frames(&w, &zero_hop), Err(Error::Framing(_))));
        assert!(Waveform::new(vec![], 1.0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn frames_depend_only_on_their_samples() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = StftConfig { window: 16, hop: 8, t_max: 7, window_fn: WindowFn::Hann };
        let base = stft_frames(&Waveform::new(x.clone(), 1.0).unwrap(), &cfg).unwrap();
        for i in 0..64 {
            let mut y = x.clone();
            y[i] += 1.0;
            let out = stft_frames(&Waveform::new(y, 1.0).unwrap(), &cfg).unwrap();
            for t in 0..7 {
                let covers = t * 8 <= i && i < t * 8 + 16;
                // Hann zeroes the first sample of each frame, so only check untouched frames.
                if !covers {
                    assert_eq!(out.frames.re().row(t), base.frames.re().row(t));
                    assert_eq!(out.frames.im().row(t), base.frames.im().row(t));
                }
            }
        }
    }
}
