//! The task distribution: devices and channel realizations, and the data
//! each of them produces.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{self, ChannelRealization, Nonideality, BLOCK_TAPS, QAM16_POINTS};
use crate::error::{Error, Result};
use crate::nn::autoencoder::{AutoencoderSpec, BlockDraw};
use crate::nn::{Dataset, Example};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Demod,
    Autoencoder,
}

/// A distribution over tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskFamily {
    /// Single-tap Rayleigh fading with a per-device cubic distortion
    /// `eps3 ~ U[0, eps3_max]` and phase offset `~ U[0, 2π)`.
    Demod { snr_db: f64, eps3_max: f64 },
    /// Unit-gain channel with a uniformly random phase rotation and no
    /// distortion.
    PhaseRotation { snr_db: f64 },
    /// Three Rayleigh taps, block fading.
    Autoencoder { snr_db: f64 },
}

impl TaskFamily {
    pub const DEFAULT_EPS3_MAX: f64 = 0.3;

    pub fn demod(snr_db: f64) -> Self {
        TaskFamily::Demod {
            snr_db,
            eps3_max: Self::DEFAULT_EPS3_MAX,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskFamily::Demod { .. } | TaskFamily::PhaseRotation { .. } => TaskKind::Demod,
            TaskFamily::Autoencoder { .. } => TaskKind::Autoencoder,
        }
    }
}

/// One system configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: u64,
    pub realization: ChannelRealization,
    pub kind: TaskKind,
}

/// Draws one task. Deterministic in the state of `rng`.
pub fn sample_task<R: Rng + ?Sized>(family: &TaskFamily, id: u64, rng: &mut R) -> Task {
    let realization = match *family {
        TaskFamily::Demod { snr_db, eps3_max } => {
            let taps = channel::rayleigh_taps(1, rng);
            let eps3 = eps3_max * rng.random::<f64>();
            let phase = TAU * rng.random::<f64>();
            ChannelRealization::new(taps, snr_db, Nonideality { eps3, phase })
        }
        TaskFamily::PhaseRotation { snr_db } => {
            let phase = TAU * rng.random::<f64>();
            ChannelRealization::new(vec![Complex64::from_polar(1.0, phase)], snr_db, Nonideality::default())
        }
        TaskFamily::Autoencoder { snr_db } => {
            ChannelRealization::new(channel::rayleigh_taps(BLOCK_TAPS, rng), snr_db, Nonideality::default())
        }
    };
    Task {
        id,
        realization,
        kind: family.kind(),
    }
}

/// Pilot symbol indices: whole shuffled passes over the 16 points,
/// truncated to `n`.
pub fn pilot_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut cycle: Vec<usize> = (0..QAM16_POINTS).collect();
        cycle.shuffle(rng);
        let take = (n - out.len()).min(QAM16_POINTS);
        out.extend_from_slice(&cycle[..take]);
    }
    out
}

/// Received pilots of a demodulation task as a labeled dataset with
/// `(re, im)` inputs.
pub fn make_pilot_dataset<R: Rng + ?Sized>(task: &Task, n_pilots: usize, rng: &mut R) -> Result<Dataset> {
    if task.kind != TaskKind::Demod {
        return Err(Error::config("pilot datasets need a demodulation task"));
    }
    if n_pilots == 0 {
        return Err(Error::config("at least one pilot is required"));
    }
    let indices = pilot_indices(n_pilots, rng);
    let examples = indices
        .into_iter()
        .map(|k| {
            let (y, label) = channel::apply_channel_demod(k, &task.realization, rng)?;
            Ok(Example {
                input: vec![y.re, y.im],
                target: label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, QAM16_POINTS)
}

/// Uniform messages with fresh noise per block; taps stay those of `task`.
pub fn generate_autoencoder_batch<R: Rng + ?Sized>(
    task: &Task,
    spec: &AutoencoderSpec,
    n_blocks: usize,
    rng: &mut R,
) -> Result<Vec<BlockDraw>> {
    if task.kind != TaskKind::Autoencoder {
        return Err(Error::config("block batches need an autoencoder task"));
    }
    if n_blocks == 0 {
        return Err(Error::config("at least one block is required"));
    }
    Ok((0..n_blocks)
        .map(|_| BlockDraw::sample(spec, task.realization.snr_db, rng))
        .collect())
}

/// Fails if any input appears in both sets.
pub fn audit_disjoint(train: &Dataset, test: &Dataset) -> Result<()> {
    for (i, a) in train.examples().iter().enumerate() {
        if test.examples().iter().any(|b| b.input == a.input) {
            return Err(Error::Check(format!(
                "training example {i} also appears in the test split"
            )));
        }
    }
    Ok(())
}

/// A demodulation task with its train and test splits.
#[derive(Clone, Debug)]
pub struct DemodTask {
    pub task: Task,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
}

impl DemodTask {
    pub fn new(task: Task, train: Dataset, test: Dataset) -> Result<Self> {
        audit_disjoint(&train, &test)?;
        Ok(DemodTask {
            task,
            train: Arc::new(train),
            test: Arc::new(test),
        })
    }

    /// Samples task `index` of a pool. Task parameters, the train split and
    /// the test split each come from their own stream.
    pub fn sample(family: &TaskFamily, seed: u64, index: u64, n_train: usize, n_test: usize) -> Result<Self> {
        let task = sample_task(family, index, &mut rng::stream(seed, &[tag::TASK, index]));
        let train = make_pilot_dataset(&task, n_train, &mut rng::stream(seed, &[tag::TRAIN_POOL, index]))?;
        let test = make_pilot_dataset(&task, n_test, &mut rng::stream(seed, &[tag::TEST_SPLIT, index]))?;
        DemodTask::new(task, train, test)
    }
}

/// `count` meta-training demodulation tasks.
pub fn demod_task_pool(
    family: &TaskFamily,
    seed: u64,
    count: usize,
    n_train: usize,
    n_test: usize,
) -> Result<Vec<DemodTask>> {
    (0..count as u64)
        .map(|i| DemodTask::sample(family, seed, i, n_train, n_test))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn sampling_is_deterministic() {
        let f = TaskFamily::demod(15.0);
        assert_eq!(sample_task(&f, 0, &mut seeded(4)), sample_task(&f, 0, &mut seeded(4)));
        let ae = TaskFamily::Autoencoder { snr_db: 10.0 };
        let mut r = seeded(1);
        for i in 0..100 {
            let t = sample_task(&ae, i, &mut r);
            assert_eq!(t.realization.taps.len(), 3);
            assert_eq!(t.kind, TaskKind::Autoencoder);
        }
    }

    #[test]
    fn demod_tasks_have_unit_average_gain() {
        let f = TaskFamily::demod(15.0);
        let mut r = seeded(10);
        let n = 10_000;
        let gains: Vec<f64> = (0..n)
            .map(|i| sample_task(&f, i, &mut r).realization.taps[0].norm())
            .collect();
        let e: f64 = gains.iter().map(|g| g * g).sum::<f64>() / n as f64;
        assert!((0.97..=1.03).contains(&e), "{e}");

        // consecutive tasks are independent
        let mean = gains.iter().sum::<f64>() / n as f64;
        let var: f64 = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>();
        let cov: f64 = gains.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((cov / var).abs() < 0.02, "{}", cov / var);
    }

    #[test]
    fn demod_nonideality_ranges() {
        let f = TaskFamily::demod(15.0);
        let mut r = seeded(3);
        for i in 0..1000 {
            let t = sample_task(&f, i, &mut r);
            let n = t.realization.nonideality;
            assert!((0.0..=0.3).contains(&n.eps3));
            assert!((0.0..TAU).contains(&n.phase));
        }
    }

    #[test]
    fn pilots_cycle_through_classes() {
        let mut r = seeded(0);
        let full = pilot_indices(16, &mut r);
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        let four = pilot_indices(4, &mut r);
        let mut d = four.clone();
        d.dedup();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 4);
        let forty = pilot_indices(40, &mut r);
        for k in 0..16 {
            let c = forty.iter().filter(|&&x| x == k).count();
            assert!(c == 2 || c == 3);
        }
    }

    #[test]
    fn pilot_dataset_shape() {
        let t = sample_task(&TaskFamily::demod(15.0), 0, &mut seeded(1));
        let d = make_pilot_dataset(&t, 16, &mut seeded(2)).unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(d.input_dim(), 2);
        let mut labels: Vec<usize> = d.examples().iter().map(|e| e.target).collect();
        labels.sort();
        assert_eq!(labels, (0..16).collect::<Vec<_>>());
        let ae = sample_task(&TaskFamily::Autoencoder { snr_db: 10.0 }, 0, &mut seeded(1));
        assert!(make_pilot_dataset(&ae, 4, &mut seeded(2)).is_err());
        assert!(make_pilot_dataset(&t, 0, &mut seeded(2)).is_err());
    }

    #[test]
    fn pilot_inputs_match_channel_output() {
        let t = sample_task(&TaskFamily::demod(15.0), 0, &mut seeded(1));
        let mut a = seeded(5);
        let d = make_pilot_dataset(&t, 3, &mut a).unwrap();
        let mut b = seeded(5);
        let idx = pilot_indices(3, &mut b);
        for (e, k) in d.examples().iter().zip(idx) {
            let (y, _) = channel::apply_channel_demod(k, &t.realization, &mut b).unwrap();
            assert_eq!(e.input, vec![y.re, y.im]);
        }
    }

    #[test]
    fn train_and_test_splits_are_disjoint() {
        let pool = demod_task_pool(&TaskFamily::demod(15.0), 9, 20, 8, 64).unwrap();
        for t in &pool {
            audit_disjoint(&t.train, &t.test).unwrap();
        }
        let d = pool[0].train.as_ref().clone();
        assert!(audit_disjoint(&d, &d).is_err());
    }

    #[test]
    fn autoencoder_batches() {
        let spec = AutoencoderSpec::default();
        let t = sample_task(&TaskFamily::Autoencoder { snr_db: 10.0 }, 0, &mut seeded(1));
        let a = generate_autoencoder_batch(&t, &spec, 50, &mut seeded(3)).unwrap();
        let b = generate_autoencoder_batch(&t, &spec, 50, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.noise.len() == 10));
        let demod = sample_task(&TaskFamily::demod(15.0), 0, &mut seeded(1));
        assert!(generate_autoencoder_batch(&demod, &spec, 5, &mut seeded(3)).is_err());
    }

    #[test]
    fn autoencoder_messages_are_uniform() {
        // χ² with 15 degrees of freedom, 1% critical value 30.578
        let spec = AutoencoderSpec::default();
        let t = sample_task(&TaskFamily::Autoencoder { snr_db: 10.0 }, 0, &mut seeded(1));
        let draws = generate_autoencoder_batch(&t, &spec, 100_000, &mut seeded(8)).unwrap();
        let mut counts = [0f64; 16];
        for d in &draws {
            counts[d.message] += 1.0;
        }
        let expected = 100_000.0 / 16.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }
}
