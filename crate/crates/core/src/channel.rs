//! Complex-baseband link primitives: 16-QAM, Rayleigh taps, AWGN and a
//! memoryless transmitter distortion model.
//!
//! SNR is Es/N0 with unit-energy symbols. A realization with `snr_db ==
//! +inf` is treated as an exactly noiseless link; finite SNRs above
//! [`SNR_CAP_DB`] are clamped.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type ComplexSymbol = Complex64;

/// Largest SNR used when generating noise.
pub const SNR_CAP_DB: f64 = 300.0;

/// Tap count of the block-fading profile.
pub const BLOCK_TAPS: usize = 3;

pub const QAM16_POINTS: usize = 16;

/// Gray-coded PAM-4 level for two bits: 00→−3, 01→−1, 11→+1, 10→+3.
fn gray_pam4(bits: usize) -> f64 {
    match bits & 0b11 {
        0b00 => -3.0,
        0b01 => -1.0,
        0b11 => 1.0,
        _ => 3.0,
    }
}

/// Gray-mapped, unit-average-energy 16-QAM. The two high bits of `index`
/// select the in-phase level, the two low bits the quadrature level.
pub fn qam16_modulate(index: usize) -> Result<ComplexSymbol> {
    if index >= QAM16_POINTS {
        return Err(Error::config(format!("16-QAM index {index} out of range")));
    }
    let scale = 1.0 / 10f64.sqrt();
    Ok(Complex64::new(gray_pam4(index >> 2) * scale, gray_pam4(index) * scale))
}

pub fn qam16_constellation() -> [ComplexSymbol; QAM16_POINTS] {
    std::array::from_fn(|i| qam16_modulate(i).expect("index in range"))
}

/// `n` independent Rayleigh taps with total average energy 1: each
/// component is Normal(0, 1/(2n)).
pub fn rayleigh_taps<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<ComplexSymbol> {
    assert!(n >= 1, "at least one tap");
    let normal = Normal::new(0.0, (0.5 / n as f64).sqrt()).expect("valid sigma");
    (0..n)
        .map(|_| {
            let re = normal.sample(rng);
            let im = normal.sample(rng);
            Complex64::new(re, im)
        })
        .collect()
}

/// Per-device transmitter impairment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Nonideality {
    /// Cubic AM/AM coefficient.
    pub eps3: f64,
    /// Phase offset in radians.
    pub phase: f64,
}

/// `e^{j·phase}·(s + eps3·s·|s|²)`.
pub fn tx_nonideality(s: ComplexSymbol, eps3: f64, phase: f64) -> ComplexSymbol {
    let distorted = s + s * (eps3 * s.norm_sqr());
    Complex64::from_polar(1.0, phase) * distorted
}

/// Complex noise variance N0 for a unit-energy signal.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db.min(SNR_CAP_DB) / 10.0)
}

fn noise_sample<R: Rng + ?Sized>(snr_db: f64, rng: &mut R) -> ComplexSymbol {
    let sigma = (noise_variance(snr_db) / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let re = normal.sample(rng);
    let im = normal.sample(rng);
    Complex64::new(re, im)
}

/// Adds circularly symmetric Gaussian noise of total variance N0.
pub fn awgn<R: Rng + ?Sized>(s: ComplexSymbol, snr_db: f64, rng: &mut R) -> ComplexSymbol {
    s + noise_sample(snr_db, rng)
}

/// One task-defining channel draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<ComplexSymbol>,
    pub snr_db: f64,
    pub nonideality: Nonideality,
}

impl ChannelRealization {
    pub fn new(taps: Vec<ComplexSymbol>, snr_db: f64, nonideality: Nonideality) -> Self {
        ChannelRealization {
            taps,
            snr_db,
            nonideality,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// Sends one 16-QAM pilot through a single-tap channel. Returns the received
/// sample together with its label.
pub fn apply_channel_demod<R: Rng + ?Sized>(
    index: usize,
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<(ComplexSymbol, usize)> {
    if ch.taps.len() != 1 {
        return Err(Error::config(format!(
            "demodulation channel needs exactly one tap, got {}",
            ch.taps.len()
        )));
    }
    let s = qam16_modulate(index)?;
    let tx = tx_nonideality(s, ch.nonideality.eps3, ch.nonideality.phase);
    let mut y = ch.taps[0] * tx;
    if !ch.is_noiseless() {
        y = awgn(y, ch.snr_db, rng);
    }
    Ok((y, index))
}

/// Noiseless linear convolution, output length `symbols.len() + taps.len() − 1`.
pub fn convolve(symbols: &[ComplexSymbol], taps: &[ComplexSymbol]) -> Vec<ComplexSymbol> {
    if symbols.is_empty() || taps.is_empty() {
        return Vec::new();
    }
    let n = symbols.len();
    (0..n + taps.len() - 1)
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (l, &h) in taps.iter().enumerate() {
                if t >= l && t - l < n {
                    acc += h * symbols[t - l];
                }
            }
            acc
        })
        .collect()
}

/// Noise samples for one received block. Empty for a noiseless link.
pub fn block_noise<R: Rng + ?Sized>(len: usize, snr_db: f64, rng: &mut R) -> Vec<ComplexSymbol> {
    if snr_db == f64::INFINITY {
        return vec![Complex64::new(0.0, 0.0); len];
    }
    (0..len).map(|_| noise_sample(snr_db, rng)).collect()
}

/// Block-fading 3-tap channel: `y_t = Σ_l h_l x_{t−l} + n_t`, output length
/// `n + 2`, taps fixed over the block.
pub fn apply_channel_block<R: Rng + ?Sized>(
    symbols: &[ComplexSymbol],
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<ComplexSymbol>> {
    if symbols.is_empty() {
        return Err(Error::config("empty transmit block"));
    }
    if ch.taps.len() != BLOCK_TAPS {
        return Err(Error::config(format!(
            "block channel needs {BLOCK_TAPS} taps, got {}",
            ch.taps.len()
        )));
    }
    let mut y = convolve(symbols, &ch.taps);
    let noise = block_noise(y.len(), ch.snr_db, rng);
    for (yi, ni) in y.iter_mut().zip(noise) {
        *yi += ni;
    }
    Ok(y)
}

/// Real `2(n+L−1) × 2n` row-major matrix of the convolution with `taps`,
/// acting on interleaved `(re, im)` vectors.
pub fn convolution_matrix(taps: &[ComplexSymbol], n: usize) -> Vec<f64> {
    let rows = 2 * (n + taps.len() - 1);
    let cols = 2 * n;
    let mut m = vec![0.0; rows * cols];
    for t in 0..n + taps.len() - 1 {
        for (l, h) in taps.iter().enumerate() {
            if t < l || t - l >= n {
                continue;
            }
            let s = t - l;
            // [re; im] of h·x = [[hr, −hi], [hi, hr]] · [xr; xi]
            m[(2 * t) * cols + 2 * s] += h.re;
            m[(2 * t) * cols + 2 * s + 1] -= h.im;
            m[(2 * t + 1) * cols + 2 * s] += h.im;
            m[(2 * t + 1) * cols + 2 * s + 1] += h.re;
        }
    }
    m
}

/// Coherent minimum-distance 16-QAM detector for a known single tap.
pub fn detect_min_distance(y: ComplexSymbol, h: ComplexSymbol) -> usize {
    let points = qam16_constellation();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in points.iter().enumerate() {
        let d = (y - h * s).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constellation_has_unit_energy_and_distinct_points() {
        let pts = qam16_constellation();
        // per-axis energies are in tenths: (2·1 + 2·9)/10 per axis pair
        let tenths: i64 = pts
            .iter()
            .map(|s| ((s.re * s.re + s.im * s.im) * 10.0).round() as i64)
            .sum();
        assert_eq!(tenths, 160);
        let energy: f64 = pts.iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((energy - 1.0).abs() < 1e-15);
        for i in 0..16 {
            for j in i + 1..16 {
                assert!((pts[i] - pts[j]).norm() > 0.5);
            }
        }
    }

    #[test]
    fn gray_neighbors_differ_in_one_bit() {
        let pts = qam16_constellation();
        let min_d = 2.0 / 10f64.sqrt();
        let mut pairs = 0;
        for i in 0..16 {
            for j in i + 1..16 {
                if ((pts[i] - pts[j]).norm() - min_d).abs() < 1e-12 {
                    pairs += 1;
                    assert_eq!((i ^ j).count_ones(), 1, "{i} vs {j}");
                }
            }
        }
        // 4×4 grid: 2·4·3 nearest-neighbor pairs
        assert_eq!(pairs, 24);
    }

    #[test]
    fn out_of_range_index() {
        assert!(qam16_modulate(16).is_err());
    }

    #[test]
    fn nonideality_examples() {
        let s = c(0.3, -0.9);
        assert_eq!(tx_nonideality(s, 0.0, 0.0), s);
        let r = tx_nonideality(s, 0.0, PI);
        assert!((r + s).norm() < 1e-15);
        let r = tx_nonideality(c(1.0, 0.0), 0.1, 0.0);
        assert!((r - c(1.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn noise_variance_convention() {
        assert_eq!(noise_variance(0.0), 1.0);
        assert!((noise_variance(10.0) - 0.1).abs() < 1e-16);
        let mut rng = seeded(3);
        let s = c(0.7, -0.2);
        let y = awgn(s, f64::INFINITY, &mut rng);
        assert!((y - s).norm() < 1e-12);
    }

    #[test]
    fn empirical_noise_variance() {
        let mut rng = seeded(11);
        let n = 100_000;
        let n0 = noise_variance(5.0);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += awgn(c(0.0, 0.0), 5.0, &mut rng).norm_sqr();
        }
        let var = sum / n as f64;
        assert!((var / n0 - 1.0).abs() < 0.02, "{var} vs {n0}");
    }

    #[test]
    fn noise_is_uncorrelated_with_signal() {
        let mut rng = seeded(12);
        let n = 100_000;
        let pts = qam16_constellation();
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let s = pts[rng.random_range(0..16)];
            let noise = awgn(s, 0.0, &mut rng) - s;
            let _ = i;
            let (x, y) = (s.re, noise.re);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let rho = cov / ((sxx / nf - (sx / nf).powi(2)).sqrt() * (syy / nf - (sy / nf).powi(2)).sqrt());
        assert!(rho.abs() < 0.01, "rho = {rho}");
    }

    #[test]
    fn rayleigh_energy_and_determinism() {
        let a = rayleigh_taps(3, &mut seeded(5));
        let b = rayleigh_taps(3, &mut seeded(5));
        assert_eq!(a, b);
        let mut rng = seeded(6);
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|_| rayleigh_taps(3, &mut rng).iter().map(|h| h.norm_sqr()).sum::<f64>())
            .sum();
        let mean = total / n as f64;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn demod_channel_examples() {
        let mut rng = seeded(1);
        let id = ChannelRealization::new(vec![c(1.0, 0.0)], f64::INFINITY, Nonideality::default());
        for k in 0..16 {
            let (y, label) = apply_channel_demod(k, &id, &mut rng).unwrap();
            assert_eq!(label, k);
            assert_eq!(y, qam16_modulate(k).unwrap());
        }
        let rot = ChannelRealization::new(vec![c(0.0, 1.0)], f64::INFINITY, Nonideality::default());
        let (y, _) = apply_channel_demod(5, &rot, &mut rng).unwrap();
        let s = qam16_modulate(5).unwrap();
        assert!((y - c(-s.im, s.re)).norm() < 1e-15);
        let three = ChannelRealization::new(vec![c(1.0, 0.0); 3], 10.0, Nonideality::default());
        assert!(apply_channel_demod(0, &three, &mut rng).is_err());
    }

    fn noiseless3(taps: [Complex64; 3]) -> ChannelRealization {
        ChannelRealization::new(taps.to_vec(), f64::INFINITY, Nonideality::default())
    }

    #[test]
    fn delta_and_shift_channels() {
        let mut rng = seeded(0);
        let x = vec![c(1.0, 2.0), c(-0.5, 0.1), c(0.3, -0.3)];
        let zero = c(0.0, 0.0);
        let y = apply_channel_block(&x, &noiseless3([c(1.0, 0.0), zero, zero]), &mut rng).unwrap();
        assert_eq!(y, vec![x[0], x[1], x[2], zero, zero]);
        let y = apply_channel_block(&x, &noiseless3([zero, c(1.0, 0.0), zero]), &mut rng).unwrap();
        assert_eq!(y, vec![zero, x[0], x[1], x[2], zero]);
        assert!(apply_channel_block(&[], &noiseless3([zero; 3]), &mut rng).is_err());
        let one_tap = ChannelRealization::new(vec![c(1.0, 0.0)], 10.0, Nonideality::default());
        assert!(apply_channel_block(&x, &one_tap, &mut rng).is_err());
    }

    #[test]
    fn block_channel_is_linear_when_noiseless() {
        let mut rng = seeded(9);
        let taps = rayleigh_taps(3, &mut rng);
        let ch = ChannelRealization::new(taps, f64::INFINITY, Nonideality::default());
        let x: Vec<_> = (0..8).map(|i| c(i as f64 * 0.1, 1.0 - i as f64 * 0.2)).collect();
        let y: Vec<_> = (0..8).map(|i| c(-(i as f64) * 0.3, 0.05 * i as f64)).collect();
        let (a, b) = (c(0.7, -0.2), c(-1.3, 0.4));
        let mix: Vec<_> = x.iter().zip(&y).map(|(&xi, &yi)| a * xi + b * yi).collect();
        let fx = apply_channel_block(&x, &ch, &mut rng).unwrap();
        let fy = apply_channel_block(&y, &ch, &mut rng).unwrap();
        let fm = apply_channel_block(&mix, &ch, &mut rng).unwrap();
        for i in 0..fm.len() {
            assert!((fm[i] - (a * fx[i] + b * fy[i])).norm() < 1e-14);
        }
    }

    #[test]
    fn convolution_matrix_matches_complex_convolution() {
        let mut rng = seeded(4);
        let taps = rayleigh_taps(3, &mut rng);
        let x: Vec<_> = (0..8)
            .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let m = convolution_matrix(&taps, 8);
        let flat: Vec<f64> = x.iter().flat_map(|s| [s.re, s.im]).collect();
        let direct = convolve(&x, &taps);
        for (t, yt) in direct.iter().enumerate() {
            for (k, want) in [yt.re, yt.im].into_iter().enumerate() {
                let row = &m[(2 * t + k) * 16..(2 * t + k + 1) * 16];
                let got: f64 = row.iter().zip(&flat).map(|(a, b)| a * b).sum();
                assert!((got - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn min_distance_detector_noiseless() {
        let h = c(0.6, -0.8);
        for k in 0..16 {
            let y = h * qam16_modulate(k).unwrap();
            assert_eq!(detect_min_distance(y, h), k);
        }
    }
}
