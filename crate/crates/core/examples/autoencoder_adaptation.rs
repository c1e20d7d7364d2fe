//! End-to-end autoencoder over a 3-tap fading channel: block error rate while
//! adapting to a new channel, from a meta-learned and from a random start.

use metacomm::harness::{sweep_adaptation, with_workers, ExperimentConfig, Method, Metric, Profile};

fn main() -> metacomm::Result<()> {
    let mut cfg = ExperimentConfig::defaults(Profile::Autoencoder);
    cfg.seeds = vec![0];
    cfg.n_meta_test_tasks = 5;
    cfg.adapt_iters_max = 20;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let sweep = with_workers(workers, || sweep_adaptation(&cfg))??;

    println!("iter   random init   meta-learned");
    for t in 0..=cfg.adapt_iters_max {
        let at = |m| sweep.table.get(t as f64, m, Metric::Bler).map_or(f64::NAN, |r| r.mean);
        println!(
            "{t:>4}   {:>11.4}   {:>12.4}",
            at(Method::Conventional),
            at(Method::Maml)
        );
    }
    Ok(())
}
