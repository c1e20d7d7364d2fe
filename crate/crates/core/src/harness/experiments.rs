//! Pilot and adaptation sweeps, and the metrics they report.
//!
//! Every random draw is addressed by `(seed, purpose, indices…)` through
//! [`crate::rng::stream`], so results are identical for any worker count.
//! Methods compared on one meta-test task share the pilot set and the
//! evaluation symbols.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Profile};
use super::curve::{CurveRow, CurveTable, Method, Metric};
use crate::autodiff::eval_with_gradient;
use crate::channel::{self, QAM16_POINTS};
use crate::error::{Error, Result};
use crate::learners::{self, meta_train, sgd_step, MetaTrainOutcome, TaskLosses, TrainConfig};
use crate::nn::autoencoder::{self, Autoencoder, AutoencoderLoss, AutoencoderSpec};
use crate::nn::{argmax, forward_raw, Architecture, MlpXent, ParamVector};
use crate::rng::{self, tag};
use crate::tasks::{self, demod_task_pool, sample_task, DemodTask, Task, TaskKind};

/// Runs `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Symbol error rate of a demodulator on `n_symbols` fresh uniformly random
/// symbols. Ties in the logits resolve to the lowest index.
pub fn evaluate_ser<R: Rng + ?Sized>(p: &ParamVector, task: &Task, n_symbols: usize, rng: &mut R) -> Result<f64> {
    if task.kind != TaskKind::Demod {
        return Err(Error::config("symbol error rate needs a demodulation task"));
    }
    if p.arch().input_dim() != 2 || p.arch().output_dim() != QAM16_POINTS {
        return Err(Error::config("demodulator must map 2 inputs to 16 logits"));
    }
    if n_symbols == 0 {
        return Err(Error::config("no evaluation symbols"));
    }
    let mut errors = 0usize;
    for _ in 0..n_symbols {
        let k = rng.random_range(0..QAM16_POINTS);
        let (y, _) = channel::apply_channel_demod(k, &task.realization, rng)?;
        if argmax(&forward_raw(p.arch(), p.values(), &[y.re, y.im])) != k {
            errors += 1;
        }
    }
    Ok(errors as f64 / n_symbols as f64)
}

/// Block error rate of an encoder/decoder pair on `n_blocks` fresh blocks.
pub fn evaluate_bler<R: Rng + ?Sized>(
    ae: &Autoencoder,
    enc: &ParamVector,
    dec: &ParamVector,
    task: &Task,
    n_blocks: usize,
    rng: &mut R,
) -> Result<f64> {
    let params = ae.join(enc, dec)?;
    bler_flat(ae, &params, task, n_blocks, rng)
}

fn bler_flat<R: Rng + ?Sized>(
    ae: &Autoencoder,
    params: &[f64],
    task: &Task,
    n_blocks: usize,
    rng: &mut R,
) -> Result<f64> {
    if task.kind != TaskKind::Autoencoder {
        return Err(Error::config("block error rate needs an autoencoder task"));
    }
    let draws = tasks::generate_autoencoder_batch(task, &ae.spec, n_blocks, rng)?;
    let errors = draws
        .iter()
        .filter(|d| autoencoder::decide(ae, params, &task.realization.taps, d) != d.message)
        .count();
    Ok(errors as f64 / n_blocks as f64)
}

fn seed_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

fn maml_method(cfg: &ExperimentConfig) -> Method {
    if cfg.train.first_order {
        Method::MamlFo
    } else {
        Method::Maml
    }
}

fn require_profile(cfg: &ExperimentConfig, profile: Profile) -> Result<()> {
    cfg.validate()?;
    if cfg.profile != profile {
        return Err(Error::config(format!(
            "this experiment needs profile `{}`, config has `{}`",
            profile.as_str(),
            cfg.profile.as_str()
        )));
    }
    Ok(())
}

/// Per-seed means of one sweep, keyed by sweep value and method.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<(f64, Method, f64)>,
}

impl SeedCurve {
    pub fn value(&self, sweep_value: f64, method: Method) -> Option<f64> {
        self.points
            .iter()
            .find(|(s, m, _)| *s == sweep_value && *m == method)
            .map(|p| p.2)
    }
}

/// Median across seeds of the per-seed mean at `(sweep_value, method)`.
pub fn median_over_seeds(curves: &[SeedCurve], sweep_value: f64, method: Method) -> Option<f64> {
    let mut v: Vec<f64> = curves
        .iter()
        .map(|c| c.value(sweep_value, method))
        .collect::<Option<_>>()?;
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Output of [`sweep_pilots`].
#[derive(Clone, Debug, PartialEq)]
pub struct PilotSweep {
    pub table: CurveTable,
    pub per_seed: Vec<SeedCurve>,
}

/// Meta-trained and joint-trained demodulators of one seed.
pub struct DemodModels {
    pub theta: ParamVector,
    pub joint: ParamVector,
    pub meta: MetaTrainOutcome,
}

/// Meta-trains and joint-trains on the seed's task pool.
pub fn train_demod_models(cfg: &ExperimentConfig, seed: u64) -> Result<DemodModels> {
    let arch = Arc::new(Architecture::demodulator());
    let train_cfg = seed_config(cfg, seed);
    let pool = demod_task_pool(
        &cfg.task_family(),
        seed,
        cfg.n_meta_train_tasks,
        cfg.meta_train_pilots,
        cfg.test_examples,
    )?;
    let (theta, meta) = learners::meta_train_demod(&arch, &pool, &train_cfg)?;
    let baseline = TrainConfig {
        outer_iters: cfg.baseline_iters,
        ..train_cfg
    };
    let joint = learners::train_joint_demod(&arch, &pool, &baseline)?;
    Ok(DemodModels { theta, joint, meta })
}

/// SER of every method on meta-test task `j`, one array per pilot count, in
/// the order conventional, joint, joint+adapt, maml.
fn pilot_task_errors(cfg: &ExperimentConfig, seed: u64, models: &DemodModels, j: u64) -> Result<Vec<[f64; 4]>> {
    let arch = models.theta.arch().clone();
    let family = cfg.task_family();
    let task = sample_task(&family, j, &mut rng::stream(seed, &[tag::META_TEST, j]));
    let baseline = TrainConfig {
        outer_iters: cfg.baseline_iters,
        ..seed_config(cfg, seed)
    };
    let (eta, m, n_eval) = (cfg.train.eta_inner, cfg.train.m, cfg.n_eval_symbols_or_blocks);
    cfg.pilot_counts
        .iter()
        .map(|&n| {
            let pilots = Arc::new(tasks::make_pilot_dataset(
                &task,
                n,
                &mut rng::stream(seed, &[tag::PILOTS, j, n as u64]),
            )?);
            let f = MlpXent::new(arch.clone(), pilots.clone());
            let conventional = learners::train_conventional(&arch, &pilots, &baseline)?;
            let joint_adapt = models
                .joint
                .with_values(learners::maml_adapt(&f, models.joint.values(), eta, m)?)?;
            let maml = models
                .theta
                .with_values(learners::maml_adapt(&f, models.theta.values(), eta, m)?)?;
            let mut out = [0.0; 4];
            for (slot, p) in out.iter_mut().zip([&conventional, &models.joint, &joint_adapt, &maml]) {
                let mut eval_rng = rng::stream(seed, &[tag::EVAL, j]);
                *slot = evaluate_ser(p, &task, n_eval, &mut eval_rng)?;
            }
            Ok(out)
        })
        .collect()
}

/// Symbol error rate against pilot count for conventional training, joint
/// training with and without adaptation, and MAML.
pub fn sweep_pilots(cfg: &ExperimentConfig) -> Result<PilotSweep> {
    require_profile(cfg, Profile::Demod)?;
    let methods = [
        Method::Conventional,
        Method::Joint,
        Method::JointAdapt,
        maml_method(cfg),
    ];

    // [seed][task][pilot] -> per-method SER
    let per_seed: Vec<Vec<Vec<[f64; 4]>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let models = train_demod_models(cfg, seed)?;
            (0..cfg.n_meta_test_tasks as u64)
                .into_par_iter()
                .map(|j| pilot_task_errors(cfg, seed, &models, j))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut table = CurveTable::new();
    for (pi, &n) in cfg.pilot_counts.iter().enumerate() {
        for (mi, &method) in methods.iter().enumerate() {
            let samples: Vec<f64> = per_seed
                .iter()
                .flat_map(|tasks| tasks.iter().map(move |t| t[pi][mi]))
                .collect();
            table.push(CurveRow::summarize(
                n as f64,
                method,
                Metric::Ser,
                &samples,
                cfg.seeds.len(),
            ));
        }
    }
    let curves = cfg
        .seeds
        .iter()
        .zip(&per_seed)
        .map(|(&seed, tasks)| SeedCurve {
            seed,
            points: cfg
                .pilot_counts
                .iter()
                .enumerate()
                .flat_map(|(pi, &n)| {
                    methods.iter().enumerate().map(move |(mi, &method)| {
                        let mean = tasks.iter().map(|t| t[pi][mi]).sum::<f64>() / tasks.len() as f64;
                        (n as f64, method, mean)
                    })
                })
                .collect(),
        })
        .collect();
    Ok(PilotSweep {
        table,
        per_seed: curves,
    })
}

/// Output of [`sweep_adaptation`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationSweep {
    pub table: CurveTable,
    pub per_seed: Vec<SeedCurve>,
}

fn autoencoder_losses(
    ae: &Arc<Autoencoder>,
    task: &Task,
    n_blocks: usize,
    rng: &mut rng::SimRng,
) -> Result<TaskLosses<AutoencoderLoss>> {
    let loss = |rng: &mut rng::SimRng| -> Result<AutoencoderLoss> {
        Ok(AutoencoderLoss {
            ae: ae.clone(),
            taps: task.realization.taps.clone(),
            draws: Arc::new(tasks::generate_autoencoder_batch(task, &ae.spec, n_blocks, rng)?),
        })
    };
    let train = loss(rng)?;
    let test = loss(rng)?;
    Ok(TaskLosses { train, test })
}

/// Meta-trained autoencoder initialization of one seed, with the random
/// initialization it started from.
pub fn train_autoencoder_init(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>, MetaTrainOutcome)> {
    let ae = Arc::new(Autoencoder::new(AutoencoderSpec::default())?);
    let family = cfg.task_family();
    let pool: Vec<Task> = (0..cfg.n_meta_train_tasks as u64)
        .map(|i| sample_task(&family, i, &mut rng::stream(seed, &[tag::TASK, i])))
        .collect();
    let init = ae.init(rng::derive_seed(seed, &[tag::INIT]));
    let train_cfg = seed_config(cfg, seed);
    let k = train_cfg.k_meta_batch.min(pool.len());
    let outcome = meta_train(init.clone(), &train_cfg, |_, rng| {
        index::sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| autoencoder_losses(&ae, &pool[i], cfg.blocks_per_step, rng))
            .collect()
    })?;
    let theta = outcome.theta.clone();
    Ok((init, theta, outcome))
}

/// BLER after `t = 0..=t_max` adaptation steps from `init` on meta-test task `j`.
fn adaptation_curve(
    cfg: &ExperimentConfig,
    ae: &Arc<Autoencoder>,
    seed: u64,
    j: u64,
    init: &[f64],
) -> Result<Vec<f64>> {
    let task = sample_task(&cfg.task_family(), j, &mut rng::stream(seed, &[tag::META_TEST, j]));
    let mut p = init.to_vec();
    let mut curve = Vec::with_capacity(cfg.adapt_iters_max + 1);
    for t in 0..=cfg.adapt_iters_max {
        let mut eval_rng = rng::stream(seed, &[tag::EVAL, j]);
        curve.push(bler_flat(ae, &p, &task, cfg.n_eval_symbols_or_blocks, &mut eval_rng)?);
        if t == cfg.adapt_iters_max {
            break;
        }
        let mut batch_rng = rng::stream(seed, &[tag::ADAPT, j, t as u64]);
        let loss = AutoencoderLoss {
            ae: ae.clone(),
            taps: task.realization.taps.clone(),
            draws: Arc::new(tasks::generate_autoencoder_batch(
                &task,
                &ae.spec,
                cfg.blocks_per_step,
                &mut batch_rng,
            )?),
        };
        let g = eval_with_gradient(&loss, &p).map_err(|e| e.at_step(t).at_task(j as usize))?;
        p = sgd_step(&p, &g.gradient, cfg.train.eta_inner)?;
    }
    Ok(curve)
}

/// Block error rate against adaptation iteration on new channels, starting
/// from the meta-trained initialization and from a random one (reported as
/// `conventional`).
pub fn sweep_adaptation(cfg: &ExperimentConfig) -> Result<AdaptationSweep> {
    require_profile(cfg, Profile::Autoencoder)?;
    let ae = Arc::new(Autoencoder::new(AutoencoderSpec::default())?);
    let methods = [Method::Conventional, maml_method(cfg)];

    // [seed][task][method][t]
    let per_seed: Vec<Vec<[Vec<f64>; 2]>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (init, theta, _) = train_autoencoder_init(cfg, seed)?;
            (0..cfg.n_meta_test_tasks as u64)
                .into_par_iter()
                .map(|j| {
                    Ok([
                        adaptation_curve(cfg, &ae, seed, j, &init)?,
                        adaptation_curve(cfg, &ae, seed, j, &theta)?,
                    ])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut table = CurveTable::new();
    for t in 0..=cfg.adapt_iters_max {
        for (mi, &method) in methods.iter().enumerate() {
            let samples: Vec<f64> = per_seed
                .iter()
                .flat_map(|tasks| tasks.iter().map(move |c| c[mi][t]))
                .collect();
            table.push(CurveRow::summarize(
                t as f64,
                method,
                Metric::Bler,
                &samples,
                cfg.seeds.len(),
            ));
        }
    }
    let curves = cfg
        .seeds
        .iter()
        .zip(&per_seed)
        .map(|(&seed, tasks)| SeedCurve {
            seed,
            points: (0..=cfg.adapt_iters_max)
                .flat_map(|t| {
                    methods.iter().enumerate().map(move |(mi, &method)| {
                        let mean = tasks.iter().map(|c| c[mi][t]).sum::<f64>() / tasks.len() as f64;
                        (t as f64, method, mean)
                    })
                })
                .collect(),
        })
        .collect();
    Ok(AdaptationSweep {
        table,
        per_seed: curves,
    })
}

/// Meta-training only. Returns the meta-loss history (mean and spread across
/// seeds per iteration) and the initialization learned for the first seed.
pub fn run_meta_train(cfg: &ExperimentConfig) -> Result<(CurveTable, Vec<f64>)> {
    cfg.validate()?;
    let outcomes: Vec<MetaTrainOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match cfg.profile {
            Profile::Demod => train_demod_models(cfg, seed).map(|m| m.meta),
            Profile::Autoencoder => train_autoencoder_init(cfg, seed).map(|(_, _, o)| o),
        })
        .collect::<Result<_>>()?;
    let mut table = CurveTable::new();
    let method = maml_method(cfg);
    for it in 0..cfg.train.outer_iters {
        let samples: Vec<f64> = outcomes.iter().map(|o| o.history[it].1).collect();
        table.push(CurveRow::summarize(
            it as f64,
            method,
            Metric::MetaLoss,
            &samples,
            cfg.seeds.len(),
        ));
    }
    Ok((table, outcomes[0].theta.clone()))
}

/// Adapts a given initialization on fresh meta-test tasks: SER per pilot
/// count (demodulation) or BLER per adaptation step (autoencoder).
pub fn evaluate_initialization(cfg: &ExperimentConfig, theta: &[f64]) -> Result<CurveTable> {
    cfg.validate()?;
    let method = maml_method(cfg);
    let mut table = CurveTable::new();
    match cfg.profile {
        Profile::Demod => {
            let arch = Arc::new(Architecture::demodulator());
            let theta = ParamVector::new(arch.clone(), theta.to_vec())?;
            let family = cfg.task_family();
            // [seed][task][pilot]
            let all: Vec<Vec<Vec<f64>>> = cfg
                .seeds
                .par_iter()
                .map(|&seed| {
                    (0..cfg.n_meta_test_tasks as u64)
                        .into_par_iter()
                        .map(|j| {
                            let task = sample_task(&family, j, &mut rng::stream(seed, &[tag::META_TEST, j]));
                            cfg.pilot_counts
                                .iter()
                                .map(|&n| {
                                    let mut prng = rng::stream(seed, &[tag::PILOTS, j, n as u64]);
                                    let pilots = Arc::new(tasks::make_pilot_dataset(&task, n, &mut prng)?);
                                    let f = MlpXent::new(arch.clone(), pilots);
                                    let adapted =
                                        learners::maml_adapt(&f, theta.values(), cfg.train.eta_inner, cfg.train.m)?;
                                    let mut eval_rng = rng::stream(seed, &[tag::EVAL, j]);
                                    evaluate_ser(
                                        &theta.with_values(adapted)?,
                                        &task,
                                        cfg.n_eval_symbols_or_blocks,
                                        &mut eval_rng,
                                    )
                                })
                                .collect::<Result<Vec<f64>>>()
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for (pi, &n) in cfg.pilot_counts.iter().enumerate() {
                let samples: Vec<f64> = all.iter().flat_map(|s| s.iter().map(move |t| t[pi])).collect();
                table.push(CurveRow::summarize(
                    n as f64,
                    method,
                    Metric::Ser,
                    &samples,
                    cfg.seeds.len(),
                ));
            }
        }
        Profile::Autoencoder => {
            let ae = Arc::new(Autoencoder::new(AutoencoderSpec::default())?);
            if theta.len() != ae.num_params() {
                return Err(Error::config(format!(
                    "{} parameters given, autoencoder has {}",
                    theta.len(),
                    ae.num_params()
                )));
            }
            let all: Vec<Vec<Vec<f64>>> = cfg
                .seeds
                .par_iter()
                .map(|&seed| {
                    (0..cfg.n_meta_test_tasks as u64)
                        .into_par_iter()
                        .map(|j| adaptation_curve(cfg, &ae, seed, j, theta))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for t in 0..=cfg.adapt_iters_max {
                let samples: Vec<f64> = all.iter().flat_map(|s| s.iter().map(move |c| c[t])).collect();
                table.push(CurveRow::summarize(
                    t as f64,
                    method,
                    Metric::Bler,
                    &samples,
                    cfg.seeds.len(),
                ));
            }
        }
    }
    Ok(table)
}

/// Writes a parameter vector as text: a profile line, a count line, then one
/// value per line with 17 significant digits.
pub fn save_params(path: &Path, profile: Profile, values: &[f64]) -> Result<()> {
    let mut s = format!("profile = {}\ncount = {}\n", profile.as_str(), values.len());
    for v in values {
        s.push_str(&super::curve::format_real(*v));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<(Profile, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let bad = |line: usize, key: &str, message: &str| Error::Parse {
        line,
        key: key.into(),
        message: message.into(),
    };
    let profile = lines
        .next()
        .and_then(|l| l.strip_prefix("profile = "))
        .ok_or_else(|| bad(1, "profile", "expected `profile = …`"))?
        .parse::<Profile>()
        .map_err(|m| bad(1, "profile", &m))?;
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count = "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(2, "count", "expected `count = <n>`"))?;
    let values = lines
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| bad(i + 3, "value", "not a number")))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != count {
        return Err(bad(
            2,
            "count",
            &format!("declares {count} values, file has {}", values.len()),
        ));
    }
    Ok((profile, values))
}

/// Meta-training demodulation pool used by an experiment seed.
pub fn demod_pool(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<DemodTask>> {
    demod_task_pool(
        &cfg.task_family(),
        seed,
        cfg.n_meta_train_tasks,
        cfg.meta_train_pilots,
        cfg.test_examples,
    )
}
