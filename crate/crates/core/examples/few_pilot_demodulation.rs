//! Demodulating a new device from a handful of pilots: conventional training,
//! joint training with and without adaptation, and MAML.
//!
//! A reduced version of the default profile (2 seeds, 10 test devices).
//! Pass a config path to run something else.

use metacomm::harness::{load_config, sweep_pilots, with_workers, ExperimentConfig, Method, Metric, Profile};

fn main() -> metacomm::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path.as_ref())?,
        None => {
            let mut cfg = ExperimentConfig::defaults(Profile::Demod);
            cfg.seeds = vec![0, 1];
            cfg.n_meta_test_tasks = 10;
            cfg.pilot_counts = vec![1, 2, 4, 8, 16];
            cfg
        }
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let sweep = with_workers(workers, || sweep_pilots(&cfg))??;

    let methods = [Method::Conventional, Method::Joint, Method::JointAdapt, Method::Maml];
    print!("pilots");
    for m in methods {
        print!("  {:>12}", m.label());
    }
    println!();
    for &n in &cfg.pilot_counts {
        print!("{n:>6}");
        for m in methods {
            match sweep.table.get(n as f64, m, Metric::Ser) {
                Some(r) => print!("  {:>12.4}", r.mean),
                None => print!("  {:>12}", "-"),
            }
        }
        println!();
    }
    Ok(())
}
