//! Devices that differ only by an unknown carrier phase. A single jointly
//! trained demodulator cannot tell the rotations apart; a meta-learned
//! initialization adapts to each one from 16 pilots.

use metacomm::harness::{
    median_over_seeds, sweep_pilots, with_workers, DemodFamily, ExperimentConfig, Method, Profile,
};

fn main() -> metacomm::Result<()> {
    let mut cfg = ExperimentConfig::defaults(Profile::Demod);
    cfg.demod_family = DemodFamily::PhaseRotation;
    cfg.snr_db = 20.0;
    cfg.pilot_counts = vec![16];
    cfg.seeds = vec![0];
    cfg.n_meta_test_tasks = 10;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let sweep = with_workers(workers, || sweep_pilots(&cfg))??;
    for m in [Method::Conventional, Method::Joint, Method::JointAdapt, Method::Maml] {
        let ser = median_over_seeds(&sweep.per_seed, 16.0, m).unwrap_or(f64::NAN);
        println!("{:>13}  SER {ser:.4}", m.label());
    }
    Ok(())
}
