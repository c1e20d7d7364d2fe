//! Self-checks of the differentiation engine against finite differences and
//! closed forms. Every check reports its measured error.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{
    dense_hessian, eval_loss, eval_with_gradient, gradient_and_hvp, hvp, meta_gradient, Graph, LossFn, MetaOrder,
    NodeId, Scalar,
};
use crate::error::{Error, Result};
use crate::nn::autoencoder::{Autoencoder, AutoencoderLoss, AutoencoderSpec};
use crate::nn::{init_params, Activation, Architecture, Dataset, Example, MlpXent};
use crate::rng;
use crate::tasks::{self, sample_task, TaskFamily};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Small,
    Full,
}

impl Scale {
    fn instances(self) -> usize {
        match self {
            Scale::Small => 5,
            Scale::Full => 20,
        }
    }
}

impl FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "small" => Ok(Scale::Small),
            "full" => Ok(Scale::Full),
            other => Err(format!("unknown scale `{other}` (small|full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    /// Passes when `measured < tolerance`.
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} measured={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Worst measured value among checks whose name starts with `prefix`.
    pub fn worst(&self, prefix: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .map(|c| c.measured)
            .reduce(f64::max)
    }

    /// `Err(Check)` listing failed checks, if any.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            let names: Vec<&str> = self.failures().map(|c| c.name.as_str()).collect();
            Err(Error::Check(format!("failed: {}", names.join(", "))))
        }
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(p: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    p.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_difference_gradient<F: LossFn>(f: &F, p: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            q[i] = p[i] + h;
            let plus = eval_loss(f, &q)?;
            q[i] = p[i] - h;
            let minus = eval_loss(f, &q)?;
            q[i] = p[i];
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Relative error of a claimed gradient against central differences.
pub fn gradient_error<F: LossFn>(f: &F, p: &[f64], claimed: &[f64]) -> Result<f64> {
    Ok(relative_error(claimed, &finite_difference_gradient(f, p, 1e-5)?))
}

/// Relative error of a claimed `∇²L(p)·v` against central differences of
/// gradients with step `eps`.
pub fn hvp_error<F: LossFn>(f: &F, p: &[f64], v: &[f64], claimed: &[f64], eps: f64) -> Result<f64> {
    let plus = eval_with_gradient(f, &axpy(p, eps, v))?.gradient;
    let minus = eval_with_gradient(f, &axpy(p, -eps, v))?.gradient;
    let fd: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    Ok(relative_error(claimed, &fd))
}

/// `½ Σ c_i (p_i − x_i)²`, parameters only.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
    pub center: Vec<f64>,
}

impl LossFn for Quadratic {
    fn num_params(&self) -> usize {
        self.center.len()
    }

    fn build<S: Scalar>(&self, g: &mut Graph<S>, p: NodeId) -> NodeId {
        let neg: Vec<f64> = self.center.iter().map(|c| -c).collect();
        let neg = g.constant(&neg);
        let d = g.add(p, neg);
        let sq = g.mul(d, d);
        let half: Vec<f64> = self.curvature.iter().map(|c| 0.5 * c).collect();
        let half = g.constant(&half);
        let w = g.mul(sq, half);
        g.sum(w)
    }
}

fn random_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random cross-entropy problem on a tanh MLP with `dims`.
fn random_instance(dims: &[usize], examples: usize, seed: u64) -> (MlpXent, Vec<f64>) {
    let arch = Arc::new(Architecture::mlp(dims, Activation::Tanh).expect("valid dims"));
    let mut r = rng::seeded(seed);
    let classes = *dims.last().expect("output layer");
    let data = (0..examples)
        .map(|_| Example {
            input: random_vec(dims[0], &mut r),
            target: r.random_range(0..classes),
        })
        .collect();
    let data = Arc::new(Dataset::new(data, classes).expect("consistent examples"));
    let p = init_params(&arch, seed ^ 0x5eed).into_values();
    // push biases off zero too
    let p = p.iter().map(|x| x + 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
    (MlpXent::new(arch, data), p)
}

fn gradient_checks(scale: Scale, out: &mut Vec<CheckResult>) -> Result<()> {
    for i in 0..scale.instances() {
        let (f, p) = random_instance(&[2, 8, 4], 6, 100 + i as u64);
        let g = eval_with_gradient(&f, &p)?;
        out.push(CheckResult::below(
            format!("gradient/mlp-{i}"),
            gradient_error(&f, &p, &g.gradient)?,
            1e-6,
        ));
    }
    Ok(())
}

fn hvp_checks(scale: Scale, out: &mut Vec<CheckResult>) -> Result<()> {
    for i in 0..scale.instances() {
        let (f, p) = random_instance(&[2, 8, 4], 6, 200 + i as u64);
        let mut r = rng::seeded(300 + i as u64);
        let u = random_vec(p.len(), &mut r);
        let v = random_vec(p.len(), &mut r);
        let hu = hvp(&f, &p, &u)?;
        let hv = hvp(&f, &p, &v)?;
        out.push(CheckResult::below(
            format!("hvp/mlp-{i}"),
            hvp_error(&f, &p, &v, &hv, 1e-4)?,
            1e-4,
        ));

        let (a, b) = (dot(&u, &hv), dot(&v, &hu));
        let sym = (a - b).abs() / a.abs().max(b.abs());
        out.push(CheckResult::below(format!("hvp-symmetry/mlp-{i}"), sym, 1e-10));

        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = hvp(&f, &p, &combo)?;
        let rhs: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| alpha * x + beta * y).collect();
        out.push(CheckResult::below(
            format!("hvp-linearity/mlp-{i}"),
            relative_error(&lhs, &rhs),
            1e-12,
        ));
    }
    Ok(())
}

/// Unrolled one-step meta-gradient against `(I − ηH)·∇L_te(θ − η∇L_tr(θ))`
/// with `H` assembled densely.
fn closed_form_checks(scale: Scale, out: &mut Vec<CheckResult>) -> Result<()> {
    let eta = 0.1;
    for i in 0..scale.instances().min(5) {
        let dims = [2, 6, 4];
        let (f_tr, theta) = random_instance(&dims, 8, 400 + i as u64);
        let (f_te, _) = random_instance(&dims, 8, 500 + i as u64);
        assert!(theta.len() <= 50);
        let unrolled = meta_gradient(&f_tr, &f_te, &theta, eta, 1, MetaOrder::Exact)?;

        let g_tr = eval_with_gradient(&f_tr, &theta)?.gradient;
        let phi = axpy(&theta, -eta, &g_tr);
        let g_te = eval_with_gradient(&f_te, &phi)?.gradient;
        let h = dense_hessian(&f_tr, &theta)?;
        let closed: Vec<f64> = (0..theta.len()).map(|r| g_te[r] - eta * dot(&h[r], &g_te)).collect();
        out.push(CheckResult::below(
            format!("meta-closed-form/mlp-{i}"),
            relative_error(&unrolled.meta_grad, &closed),
            1e-8,
        ));
    }

    let tr = Quadratic {
        curvature: vec![1.0],
        center: vec![1.0],
    };
    let te = Quadratic {
        curvature: vec![1.0],
        center: vec![-1.0],
    };
    let q = meta_gradient(&tr, &te, &[0.0], 0.1, 1, MetaOrder::Exact)?;
    out.push(CheckResult::below(
        "meta-quadratic/grad",
        (q.meta_grad[0] - 0.99).abs(),
        1e-12,
    ));
    out.push(CheckResult::below(
        "meta-quadratic/loss",
        (q.meta_loss - 0.605).abs(),
        1e-12,
    ));
    Ok(())
}

/// Gap between exact and first-order meta-gradients, relative to the exact one.
pub fn first_order_gap<F: LossFn, G: LossFn>(f_tr: &F, f_te: &G, theta: &[f64], eta: f64) -> Result<f64> {
    let full = meta_gradient(f_tr, f_te, theta, eta, 1, MetaOrder::Exact)?;
    let fo = meta_gradient(f_tr, f_te, theta, eta, 1, MetaOrder::FirstOrder)?;
    Ok(relative_error(&full.meta_grad, &fo.meta_grad))
}

fn small_step_checks(scale: Scale, out: &mut Vec<CheckResult>) -> Result<()> {
    for i in 0..scale.instances().min(5) {
        let (f_tr, theta) = random_instance(&[2, 8, 4], 6, 600 + i as u64);
        let (f_te, _) = random_instance(&[2, 8, 4], 6, 700 + i as u64);
        let coarse = first_order_gap(&f_tr, &f_te, &theta, 1e-3)?;
        let fine = first_order_gap(&f_tr, &f_te, &theta, 1e-4)?;
        let ratio = coarse / fine;
        // pass when the gap shrinks by 10x within ±10%
        out.push(CheckResult::below(
            format!("first-order-gap-ratio/mlp-{i}"),
            (ratio - 10.0).abs(),
            1.0,
        ));
    }
    Ok(())
}

fn autoencoder_checks(scale: Scale, out: &mut Vec<CheckResult>) -> Result<()> {
    let ae = Arc::new(Autoencoder::new(AutoencoderSpec::default())?);
    let family = TaskFamily::Autoencoder { snr_db: 10.0 };
    let directions = match scale {
        Scale::Small => 3,
        Scale::Full => 10,
    };
    let mut r = rng::seeded(800);
    let task = sample_task(&family, 0, &mut r);
    let loss = AutoencoderLoss {
        ae: ae.clone(),
        taps: task.realization.taps.clone(),
        draws: Arc::new(tasks::generate_autoencoder_batch(&task, &ae.spec, 6, &mut r)?),
    };
    let p = ae.init(801);
    let (g, _) = gradient_and_hvp(&loss, &p, &vec![0.0; p.len()])?;
    let h = 1e-5;
    for d in 0..directions {
        let dir = random_vec(p.len(), &mut r);
        let fd = (eval_loss(&loss, &axpy(&p, h, &dir))? - eval_loss(&loss, &axpy(&p, -h, &dir))?) / (2.0 * h);
        let claimed = dot(&g.gradient, &dir);
        let err = (claimed - fd).abs() / claimed.abs().max(fd.abs());
        out.push(CheckResult::below(format!("gradient/autoencoder-dir-{d}"), err, 1e-6));
    }
    let v = random_vec(p.len(), &mut r);
    let hv = hvp(&loss, &p, &v)?;
    out.push(CheckResult::below(
        "hvp/autoencoder",
        hvp_error(&loss, &p, &v, &hv, 1e-4)?,
        1e-4,
    ));
    Ok(())
}

/// Runs every check. Numerical failures while evaluating a check are
/// returned as errors; tolerance misses are recorded in the report.
pub fn run_gradcheck(scale: Scale) -> Result<GradcheckReport> {
    let mut checks = Vec::new();
    gradient_checks(scale, &mut checks)?;
    hvp_checks(scale, &mut checks)?;
    closed_form_checks(scale, &mut checks)?;
    small_step_checks(scale, &mut checks)?;
    autoencoder_checks(scale, &mut checks)?;
    Ok(GradcheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_gradcheck(Scale::Small).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.checks.iter().all(|c| c.measured.is_finite()));
        assert!(report.worst("gradient/").unwrap() < 1e-6);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (f, p) = random_instance(&[2, 8, 4], 6, 42);
        let mut g = eval_with_gradient(&f, &p).unwrap().gradient;
        assert!(gradient_error(&f, &p, &g).unwrap() < 1e-6);
        g[3] += 1e-3;
        assert!(gradient_error(&f, &p, &g).unwrap() > 1e-6);
    }

    #[test]
    fn corrupted_hvp_is_detected() {
        let (f, p) = random_instance(&[2, 8, 4], 6, 43);
        let v = vec![1.0; p.len()];
        let mut hv = hvp(&f, &p, &v).unwrap();
        hv[0] *= 1.1;
        assert!(hvp_error(&f, &p, &v, &hv, 1e-4).unwrap() > 1e-4);
    }

    #[test]
    fn failing_report_maps_to_check_error() {
        let report = GradcheckReport {
            checks: vec![CheckResult::below("x", 2.0, 1.0)],
        };
        let e = report.into_result().unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-3]) - 1e-3 / (1.0f64 + 1e-6).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scale_parses() {
        assert_eq!("small".parse::<Scale>().unwrap(), Scale::Small);
        assert!("huge".parse::<Scale>().is_err());
    }
}
