//! Synthetic desk-scale tasks.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::fourier::{stft_frames, StftConfig, WindowFn};
use super::{Dataset, LabelKind, SpectralSequence, Waveform};
use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MultitoneConfig {
    /// Stationary probability that a tone is on in a given frame.
    pub activation_prob: f64,
    /// Probability that a tone keeps its previous on/off state beyond what
    /// the stationary draw would give; 0 makes frames independent.
    pub persistence: f64,
    pub noise_std: f64,
    /// Tone amplitudes are uniform on this range.
    pub amplitude: (f64, f64),
}

impl Default for MultitoneConfig {
    fn default() -> Self {
        MultitoneConfig { activation_prob: 0.3, persistence: 0.7, noise_std: 0.1, amplitude: (0.5, 1.5) }
    }
}

fn check_prob(name: &str, p: f64, closed_top: bool) -> Result<()> {
    let ok = p >= 0.0 && if closed_top { p <= 1.0 } else { p < 1.0 };
    if !ok {
        return Err(Error::Config(format!("{name} = {p} is out of range")));
    }
    Ok(())
}

/// Each of `L` candidate tones sits on its own frequency bin. Per example
/// and tone, an on/off Markov chain over frames (stationary probability
/// `activation_prob`) gates a sinusoid of random amplitude and phase; white
/// noise is added and the waveform is framed with `window = 2(F−1)`,
/// `hop = window`. Labels are per-frame multi-hot `[T, L]`.
pub fn synth_multitone<R: Rng + ?Sized>(
    rng: &mut R,
    n_examples: usize,
    t: usize,
    f: usize,
    l: usize,
    cfg: &MultitoneConfig,
) -> Result<Dataset> {
    if f < 2 || t == 0 {
        return Err(Error::Config(format!("multitone needs T ≥ 1 and F ≥ 2, got T={t}, F={f}")));
    }
    if l > f {
        return Err(Error::Config(format!("{l} tones do not fit {f} bins")));
    }
    check_prob("activation_prob", cfg.activation_prob, true)?;
    check_prob("persistence", cfg.persistence, false)?;
    if cfg.noise_std.is_nan() || cfg.noise_std < 0.0 || cfg.amplitude.0 > cfg.amplitude.1 {
        return Err(Error::Config("noise_std must be ≥ 0 and the amplitude range ordered".into()));
    }
    let window = 2 * (f - 1);
    let stft = StftConfig { window, hop: window, t_max: t, window_fn: WindowFn::Rectangular };
    // Prefer interior bins: DC and Nyquist carry only a cosine component.
    let interior = f.saturating_sub(2);
    let bins: Vec<usize> = if l <= interior {
        let mut b: Vec<usize> = sample(rng, interior, l).into_iter().map(|i| i + 1).collect();
        b.sort_unstable();
        b
    } else {
        let mut b = sample(rng, f, l).into_vec();
        b.sort_unstable();
        b
    };
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let p = cfg.activation_prob;
    let (p_on, p_off) = ((1.0 - cfg.persistence) * p, (1.0 - cfg.persistence) * (1.0 - p));
    let scale = 1.0 / (window as f64).sqrt();
    let mut examples = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let mut samples = vec![0.0; t * window];
        let mut labels = vec![0.0; t * l];
        for (j, &bin) in bins.iter().enumerate() {
            let amp = if cfg.amplitude.0 == cfg.amplitude.1 { cfg.amplitude.0 } else { rng.random_range(cfg.amplitude.0..cfg.amplitude.1) };
            let phase = rng.random_range(0.0..2.0 * PI);
            let mut on = rng.random_bool(p);
            for frame in 0..t {
                if frame > 0 {
                    on = if on { !rng.random_bool(p_off) } else { rng.random_bool(p_on) };
                }
                if !on {
                    continue;
                }
                labels[frame * l + j] = 1.0;
                for (s, x) in samples.iter_mut().enumerate().take((frame + 1) * window).skip(frame * window) {
                    *x += amp * (2.0 * PI * (bin * s) as f64 / window as f64 + phase).cos();
                }
            }
        }
        if cfg.noise_std > 0.0 {
            for s in &mut samples {
                *s += noise.sample(rng);
            }
        }
        let framed = stft_frames(&Waveform::new(samples, window as f64)?, &stft)?;
        let (mut re, mut im) = framed.frames.into_parts();
        re.data_mut().iter_mut().chain(im.data_mut().iter_mut()).for_each(|v| *v *= scale);
        examples.push(SpectralSequence { frames: ComplexTensor::new(re, im)?, labels });
    }
    Dataset::new(t, f, l, LabelKind::PerFrame, examples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintConfig {
    pub noise_std: f64,
    /// Per-example gain is uniform on this range.
    pub gain: (f64, f64),
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig { noise_std: 0.5, gain: (0.5, 1.5) }
    }
}

/// `X = g·carrier ⊙ signature[class] + noise`: a carrier shared by every
/// example, a fixed random complex signature per class over the bins, a
/// random gain per example and complex Gaussian noise. Classes are assigned
/// round-robin, so counts differ by at most one.
pub fn synth_device_fingerprint<R: Rng + ?Sized>(
    rng: &mut R,
    n_examples: usize,
    t: usize,
    f: usize,
    n_classes: usize,
    cfg: &FingerprintConfig,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    if t == 0 || f == 0 {
        return Err(Error::Config(format!("fingerprint needs T, F ≥ 1, got T={t}, F={f}")));
    }
    if cfg.noise_std.is_nan() || cfg.noise_std < 0.0 || cfg.gain.0 > cfg.gain.1 {
        return Err(Error::Config("noise_std must be ≥ 0 and the gain range ordered".into()));
    }
    let polar = |rng: &mut R, lo: f64, hi: f64| {
        let (m, ph) = (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI));
        (m * ph.cos(), m * ph.sin())
    };
    let carrier: Vec<(f64, f64)> = (0..t * f).map(|_| polar(rng, 0.5, 1.5)).collect();
    let signatures: Vec<Vec<(f64, f64)>> = (0..n_classes).map(|_| (0..f).map(|_| polar(rng, 0.5, 1.5)).collect()).collect();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut examples = Vec::with_capacity(n_examples);
    for i in 0..n_examples {
        let class = i % n_classes;
        let g = if cfg.gain.0 == cfg.gain.1 { cfg.gain.0 } else { rng.random_range(cfg.gain.0..cfg.gain.1) };
        let (mut re, mut im) = (Vec::with_capacity(t * f), Vec::with_capacity(t * f));
        for (idx, &(cr, ci)) in carrier.iter().enumerate() {
            let (sr, si) = signatures[class][idx % f];
            let (mut a, mut b) = (g * (cr * sr - ci * si), g * (cr * si + ci * sr));
            if cfg.noise_std > 0.0 {
                a += noise.sample(rng);
                b += noise.sample(rng);
            }
            re.push(a);
            im.push(b);
        }
        let mut labels = vec![0.0; n_classes];
        labels[class] = 1.0;
        examples.push(SpectralSequence { frames: ComplexTensor::new(RealTensor::new(vec![t, f], re)?, RealTensor::new(vec![t, f], im)?)?, labels });
    }
    Dataset::new(t, f, n_classes, LabelKind::PerSequence, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_noiseless_tone_marks_exactly_its_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = MultitoneConfig { activation_prob: 1.0, noise_std: 0.0, ..MultitoneConfig::default() };
        let d = synth_multitone(&mut rng, 5, 8, 17, 1, &cfg).unwrap();
        for ex in &d.examples {
            assert!(ex.labels.iter().all(|&v| v == 1.0));
            // The only energy is in one bin.
            for r in 0..8 {
                let row: Vec<f64> = (0..17).map(|c| ex.frames.re().at(&[r, c]).hypot(ex.frames.im().at(&[r, c]))).collect();
                assert_eq!(row.iter().filter(|&&m| m > 1e-9).count(), 1);
            }
        }
    }

    #[test]
    fn zero_activation_gives_empty_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = MultitoneConfig { activation_prob: 0.0, ..MultitoneConfig::default() };
        let d = synth_multitone(&mut rng, 4, 6, 9, 3, &cfg).unwrap();
        assert!(d.examples.iter().all(|e| e.labels.iter().all(|&v| v == 0.0)));
        let d = synth_multitone(&mut rng, 3, 6, 9, 0, &MultitoneConfig::default()).unwrap();
        assert!(d.examples.iter().all(|e| e.labels.is_empty()));
    }

    #[test]
    fn label_marginal_matches_activation_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MultitoneConfig { noise_std: 0.0, ..MultitoneConfig::default() };
        let d = synth_multitone(&mut rng, 10_000, 4, 5, 2, &cfg).unwrap();
        let total: f64 = d.examples.iter().flat_map(|e| e.labels.iter()).sum();
        let rate = total / (10_000.0 * 4.0 * 2.0);
        assert!((rate - cfg.activation_prob).abs() < 0.02, "{rate}");
    }

    #[test]
    fn multitone_rejects_too_many_tones() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(synth_multitone(&mut rng, 1, 4, 5, 6, &MultitoneConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn fingerprint_classes_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, k) in [(10, 3), (101, 4), (7, 7)] {
            let d = synth_device_fingerprint(&mut rng, n, 4, 6, k, &FingerprintConfig::default()).unwrap();
            let mut counts = vec![0usize; k];
            for e in &d.examples {
                counts[e.class()] += 1;
            }
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        assert!(synth_device_fingerprint(&mut rng, 4, 4, 6, 1, &FingerprintConfig::default()).is_err());
    }

    #[test]
    fn noiseless_fingerprints_separate_by_a_linear_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = FingerprintConfig { noise_std: 0.0, ..FingerprintConfig::default() };
        let d = synth_device_fingerprint(&mut rng, 40, 3, 4, 2, &cfg).unwrap();
        // Each class lies on a ray g·v_c; project onto v_0 − v_1 direction after normalizing by gain.
        let flat = |e: &SpectralSequence| -> Vec<f64> { e.frames.re().data().iter().chain(e.frames.im().data()).copied().collect() };
        let v0 = flat(&d.examples[0]);
        let v1 = flat(&d.examples[1]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u0: Vec<f64> = v0.iter().map(|x| x / norm(&v0)).collect();
        let u1: Vec<f64> = v1.iter().map(|x| x / norm(&v1)).collect();
        let w: Vec<f64> = u0.iter().zip(&u1).map(|(a, b)| a - b).collect();
        for e in &d.examples {
            let s: f64 = flat(e).iter().zip(&w).map(|(a, b)| a * b).sum();
            assert_eq!(s > 0.0, e.class() == 0);
        }
    }

    #[test]
    fn class_means_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = synth_device_fingerprint(&mut rng, 200, 2, 3, 2, &FingerprintConfig::default()).unwrap();
        let mean = |c: usize| {
            let xs: Vec<&SpectralSequence> = d.examples.iter().filter(|e| e.class() == c).collect();
            (0..6).map(|i| xs.iter().map(|e| e.frames.re().data()[i]).sum::<f64>() / xs.len() as f64).collect::<Vec<_>>()
        };
        let (m0, m1) = (mean(0), mean(1));
        assert!(m0.iter().zip(&m1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 0.2);
    }

    #[test]
    fn same_seed_same_data() {
        let a = synth_multitone(&mut ChaCha8Rng::seed_from_u64(9), 3, 4, 9, 2, &MultitoneConfig::default()).unwrap();
        let b = synth_multitone(&mut ChaCha8Rng::seed_from_u64(9), 3, 4, 9, 2, &MultitoneConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
