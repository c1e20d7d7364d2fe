//! Conventional, joint and MAML training.
//!
//! All losses are means (over examples, and over tasks), so step sizes do not
//! depend on dataset or meta-batch size. Inner adaptation always uses full
//! batches. Per-task work inside a meta-batch runs on the current rayon pool;
//! results are reduced in task order, so the outcome does not depend on the
//! number of threads.

use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;

use crate::autodiff::{self, eval_loss, eval_with_gradient, Graph, LossFn, MetaOrder, NodeId, Scalar};
use crate::error::{Error, Result, Site};
use crate::nn::{init_params, Architecture, Dataset, MlpXent, ParamVector};
use crate::rng::{self, tag, SimRng};
use crate::tasks::DemodTask;

/// Any loss above this (or non-finite) counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Inner / per-task step size.
    pub eta_inner: f64,
    /// Meta step size.
    pub eta_outer: f64,
    /// Adaptation steps.
    pub m: usize,
    /// Tasks per meta-update.
    pub k_meta_batch: usize,
    pub outer_iters: usize,
    pub first_order: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn demod_default() -> Self {
        TrainConfig {
            eta_inner: 0.5,
            eta_outer: 0.2,
            m: 1,
            k_meta_batch: 10,
            outer_iters: 5000,
            first_order: false,
            seed: 0,
        }
    }

    pub fn autoencoder_default() -> Self {
        TrainConfig {
            eta_inner: 0.05,
            eta_outer: 0.05,
            m: 1,
            k_meta_batch: 10,
            outer_iters: 2000,
            first_order: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_inner > 0.0 && self.eta_inner.is_finite()) {
            return Err(Error::config("eta_inner must be positive"));
        }
        if !(self.eta_outer > 0.0 && self.eta_outer.is_finite()) {
            return Err(Error::config("eta_outer must be positive"));
        }
        if self.m == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if self.k_meta_batch == 0 {
            return Err(Error::config("K_meta_batch must be at least 1"));
        }
        Ok(())
    }

    pub fn order(&self) -> MetaOrder {
        if self.first_order {
            MetaOrder::FirstOrder
        } else {
            MetaOrder::Exact
        }
    }
}

/// `p − eta·grad`.
pub fn sgd_step(p: &[f64], grad: &[f64], eta: f64) -> Result<Vec<f64>> {
    if p.len() != grad.len() {
        return Err(Error::config(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            p.len()
        )));
    }
    Ok(p.iter().zip(grad).map(|(a, g)| a - eta * g).collect())
}

fn acceptable(value: f64) -> bool {
    value.is_finite() && value <= DIVERGENCE_LIMIT
}

fn diverged(iteration: usize, value: Option<f64>) -> Error {
    Error::Numerical {
        site: Site {
            iteration: Some(iteration),
            ..Site::default()
        },
        message: match value {
            Some(v) => format!("loss {v:e} still diverging after retrying at half step size"),
            None => "non-finite loss after retrying at half step size".into(),
        },
    }
}

/// `iters` full-batch gradient steps. A step that drives the loss above
/// [`DIVERGENCE_LIMIT`] (or to a non-finite value) is retried once at half the
/// step size, then training aborts.
pub fn gradient_descent<F: LossFn>(f: &F, init: Vec<f64>, eta: f64, iters: usize) -> Result<Vec<f64>> {
    if iters == 0 {
        return Ok(init);
    }
    let mut p = init;
    let mut current = eval_with_gradient(f, &p)?;
    for it in 0..iters {
        let mut step = eta;
        let mut retried = false;
        loop {
            let candidate = sgd_step(&p, &current.gradient, step)?;
            let bad_value = match eval_with_gradient(f, &candidate) {
                Ok(r) if acceptable(r.value) => {
                    p = candidate;
                    current = r;
                    break;
                }
                Ok(r) => Some(r.value),
                Err(e) if e.is_numerical() => None,
                Err(e) => return Err(e),
            };
            if retried {
                return Err(diverged(it, bad_value));
            }
            retried = true;
            step *= 0.5;
        }
    }
    Ok(p)
}

/// Trains a demodulator from its random initialization on one pilot set.
/// Runs `config.outer_iters` full-batch steps of size `config.eta_inner`.
pub fn train_conventional(
    arch: &Arc<Architecture>,
    pilots: &Arc<Dataset>,
    config: &TrainConfig,
) -> Result<ParamVector> {
    let init = init_params(arch, rng::derive_seed(config.seed, &[tag::INIT]));
    let f = MlpXent::new(arch.clone(), pilots.clone());
    let values = gradient_descent(&f, init.into_values(), config.eta_inner, config.outer_iters)?;
    ParamVector::new(arch.clone(), values)
}

/// Mean over tasks of per-task losses.
pub struct JointLoss<'a, L> {
    pub tasks: &'a [L],
}

impl<L: LossFn> LossFn for JointLoss<'_, L> {
    fn num_params(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.num_params())
    }

    fn check(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("joint training needs at least one task"));
        }
        let n = self.num_params();
        for t in self.tasks {
            if t.num_params() != n {
                return Err(Error::config("tasks disagree on the parameter count"));
            }
            t.check()?;
        }
        Ok(())
    }

    fn build<S: Scalar>(&self, g: &mut Graph<S>, params: NodeId) -> NodeId {
        let terms: Vec<NodeId> = self.tasks.iter().map(|t| t.build(g, params)).collect();
        g.mean(&terms)
    }
}

/// Joint training: full-batch descent on the mean of the per-task training
/// losses, from `init`, for `config.outer_iters` steps of size `config.eta_inner`.
pub fn train_joint<L: LossFn>(init: Vec<f64>, tasks: &[L], config: &TrainConfig) -> Result<Vec<f64>> {
    let joint = JointLoss { tasks };
    joint.check()?;
    gradient_descent(&joint, init, config.eta_inner, config.outer_iters)
}

/// Joint training of a demodulator on the training splits of `pool`.
pub fn train_joint_demod(arch: &Arc<Architecture>, pool: &[DemodTask], config: &TrainConfig) -> Result<ParamVector> {
    let losses: Vec<MlpXent> = pool
        .iter()
        .map(|t| MlpXent::new(arch.clone(), t.train.clone()))
        .collect();
    let init = init_params(arch, rng::derive_seed(config.seed, &[tag::INIT]));
    let values = train_joint(init.into_values(), &losses, config)?;
    ParamVector::new(arch.clone(), values)
}

/// `m` full-batch gradient steps of size `eta` from `theta` on the training
/// loss. This is the adaptation used both inside meta-training and at
/// meta-test time.
pub fn maml_adapt<F: LossFn>(f_tr: &F, theta: &[f64], eta: f64, m: usize) -> Result<Vec<f64>> {
    let mut iterates = autodiff::unroll(f_tr, theta, eta, m)?;
    Ok(iterates.pop().expect("at least the initial iterate"))
}

/// Training and test losses of one meta-training task.
#[derive(Clone, Debug)]
pub struct TaskLosses<L> {
    pub train: L,
    pub test: L,
}

impl TaskLosses<MlpXent> {
    pub fn demod(arch: &Arc<Architecture>, task: &DemodTask) -> Self {
        TaskLosses {
            train: MlpXent::new(arch.clone(), task.train.clone()),
            test: MlpXent::new(arch.clone(), task.test.clone()),
        }
    }
}

fn check_batch<L>(tasks: &[TaskLosses<L>]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::config("empty meta-batch"));
    }
    Ok(())
}

/// Mean over tasks of the test loss after adapting on the training loss.
pub fn maml_meta_loss<L: LossFn + Send>(theta: &[f64], tasks: &[TaskLosses<L>], config: &TrainConfig) -> Result<f64> {
    check_batch(tasks)?;
    let losses: Vec<Result<f64>> = tasks
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let phi = maml_adapt(&t.train, theta, config.eta_inner, config.m).map_err(|e| e.at_task(k))?;
            eval_loss(&t.test, &phi).map_err(|e| e.at_task(k))
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / tasks.len() as f64)
}

/// Meta-loss and meta-gradient averaged over a meta-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMetaGradient {
    pub meta_loss: f64,
    pub meta_grad: Vec<f64>,
}

pub fn batch_meta_gradient<L: LossFn + Send>(
    theta: &[f64],
    tasks: &[TaskLosses<L>],
    config: &TrainConfig,
) -> Result<BatchMetaGradient> {
    check_batch(tasks)?;
    let order = config.order();
    let per_task: Vec<Result<autodiff::MetaGradient>> = tasks
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            autodiff::meta_gradient(&t.train, &t.test, theta, config.eta_inner, config.m, order)
                .map_err(|e| e.at_task(k))
        })
        .collect();
    let mut meta_loss = 0.0;
    let mut meta_grad = vec![0.0; theta.len()];
    for r in per_task {
        let r = r?;
        meta_loss += r.meta_loss;
        for (a, g) in meta_grad.iter_mut().zip(&r.meta_grad) {
            *a += g;
        }
    }
    let k = tasks.len() as f64;
    meta_grad.iter_mut().for_each(|g| *g /= k);
    Ok(BatchMetaGradient {
        meta_loss: meta_loss / k,
        meta_grad,
    })
}

/// One meta-update `θ − eta_outer·∇L_meta(θ)`.
pub fn maml_meta_step<L: LossFn + Send>(
    theta: &[f64],
    tasks: &[TaskLosses<L>],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let g = batch_meta_gradient(theta, tasks, config)?;
    sgd_step(theta, &g.meta_grad, config.eta_outer)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrainOutcome {
    pub theta: Vec<f64>,
    /// `(iteration, meta-loss before the update)`.
    pub history: Vec<(usize, f64)>,
}

/// MAML meta-training: `config.outer_iters` meta-steps, each on a batch
/// produced by `next_batch(iteration, rng)`.
///
/// If a meta-loss is non-finite or above [`DIVERGENCE_LIMIT`], the previous
/// update is redone at half step size and the batch is re-evaluated once;
/// a second failure aborts.
pub fn meta_train<L, B>(init: Vec<f64>, config: &TrainConfig, mut next_batch: B) -> Result<MetaTrainOutcome>
where
    L: LossFn + Send,
    B: FnMut(usize, &mut SimRng) -> Result<Vec<TaskLosses<L>>>,
{
    config.validate()?;
    let mut rng = rng::stream(config.seed, &[tag::META_BATCH]);
    let mut theta = init;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(config.outer_iters);
    for it in 0..config.outer_iters {
        let batch = next_batch(it, &mut rng)?;
        let mut result = evaluate_guarded(&theta, &batch, config);
        if !result_ok(&result) {
            let Some((prev_theta, prev_grad)) = &previous else {
                return Err(meta_failure(result, it));
            };
            theta = sgd_step(prev_theta, prev_grad, 0.5 * config.eta_outer)?;
            result = evaluate_guarded(&theta, &batch, config);
            if !result_ok(&result) {
                return Err(meta_failure(result, it));
            }
        }
        let g = result?;
        history.push((it, g.meta_loss));
        let next = sgd_step(&theta, &g.meta_grad, config.eta_outer)?;
        previous = Some((std::mem::replace(&mut theta, next), g.meta_grad));
    }
    Ok(MetaTrainOutcome { theta, history })
}

fn evaluate_guarded<L: LossFn + Send>(
    theta: &[f64],
    batch: &[TaskLosses<L>],
    config: &TrainConfig,
) -> Result<BatchMetaGradient> {
    batch_meta_gradient(theta, batch, config)
}

fn result_ok(r: &Result<BatchMetaGradient>) -> bool {
    match r {
        Ok(g) => acceptable(g.meta_loss) && g.meta_grad.iter().all(|v| v.is_finite()),
        Err(e) => !e.is_numerical(),
    }
}

fn meta_failure(r: Result<BatchMetaGradient>, it: usize) -> Error {
    match r {
        Err(e) => e.at_iteration(it),
        Ok(g) => diverged(it, Some(g.meta_loss)),
    }
}

/// Meta-trains a demodulator initialization on a fixed task pool, drawing
/// `k_meta_batch` distinct tasks per iteration.
pub fn meta_train_demod(
    arch: &Arc<Architecture>,
    pool: &[DemodTask],
    config: &TrainConfig,
) -> Result<(ParamVector, MetaTrainOutcome)> {
    if pool.is_empty() {
        return Err(Error::config("empty meta-training pool"));
    }
    let init = init_params(arch, rng::derive_seed(config.seed, &[tag::INIT]));
    let k = config.k_meta_batch.min(pool.len());
    let outcome = meta_train(init.into_values(), config, |_, rng| {
        Ok(index::sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| TaskLosses::demod(arch, &pool[i]))
            .collect())
    })?;
    let theta = ParamVector::new(arch.clone(), outcome.theta.clone())?;
    Ok((theta, outcome))
}
