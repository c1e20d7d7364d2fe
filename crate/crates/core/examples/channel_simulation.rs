//! 16-QAM over a known single tap: Monte Carlo symbol error rate of the
//! minimum-distance detector against the textbook formula, and one pass of a
//! block through the 3-tap fading channel.

use metacomm::channel::{
    apply_channel_block, apply_channel_demod, detect_min_distance, qam16_constellation, rayleigh_taps,
    ChannelRealization, Nonideality, QAM16_POINTS,
};
use metacomm::rng;
use num_complex::Complex64;
use rand::Rng;
use statrs::function::erf::erfc;

/// Gaussian tail probability.
fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn main() -> metacomm::Result<()> {
    let h = Complex64::from_polar(0.8, 1.1);
    let n = 200_000;
    println!("snr_db  simulated  analytic");
    for snr_db in [5.0, 10.0, 15.0, 20.0] {
        // SNR at the receiver includes |h|²
        let ch = ChannelRealization::new(vec![h], snr_db, Nonideality::default());
        let mut r = rng::seeded(snr_db as u64);
        let errors = (0..n)
            .filter(|_| {
                let k = r.random_range(0..QAM16_POINTS);
                let (y, _) = apply_channel_demod(k, &ch, &mut r).expect("one tap");
                detect_min_distance(y, h) != k
            })
            .count();
        let snr = h.norm_sqr() * 10f64.powf(snr_db / 10.0);
        let rail = 1.5 * q((snr / 5.0).sqrt());
        println!(
            "{snr_db:>6}  {:.6}   {:.6}",
            errors as f64 / n as f64,
            1.0 - (1.0 - rail).powi(2)
        );
    }

    let mut r = rng::seeded(1);
    let taps = rayleigh_taps(3, &mut r);
    let block: Vec<Complex64> = qam16_constellation()[..4].to_vec();
    let ch = ChannelRealization::new(taps.clone(), f64::INFINITY, Nonideality::default());
    let y = apply_channel_block(&block, &ch, &mut r)?;
    println!("taps {taps:.3?}");
    println!("noiseless output ({} samples) {y:.3?}", y.len());
    Ok(())
}
