//! Meta-gradients against finite differences of the adapted test loss.

use std::sync::Arc;

use metacomm::autodiff::{eval_loss, meta_gradient, MetaOrder};
use metacomm::autodiff::{Graph, LossFn, NodeId, Scalar};
use metacomm::harness::gradcheck::{finite_difference_gradient, relative_error, Quadratic};
use metacomm::learners::maml_adapt;
use metacomm::nn::{init_params, Activation, Architecture, Dataset, Example, MlpXent};
use metacomm::rng;
use proptest::prelude::*;
use rand::Rng;

fn mlp_task(seed: u64, n: usize) -> MlpXent {
    let arch = Arc::new(Architecture::mlp(&[2, 5, 3], Activation::Tanh).unwrap());
    let mut r = rng::seeded(seed);
    let data = (0..n)
        .map(|_| Example {
            input: vec![r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0],
            target: r.random_range(0..3),
        })
        .collect();
    MlpXent::new(arch, Arc::new(Dataset::new(data, 3).unwrap()))
}

/// θ ↦ L_te(adapt(θ)), the function whose gradient the engine claims.
struct AdaptedLoss<'a> {
    train: &'a MlpXent,
    test: &'a MlpXent,
    eta: f64,
    m: usize,
}

impl AdaptedLoss<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let phi = maml_adapt(self.train, theta, self.eta, self.m).unwrap();
        eval_loss(self.test, &phi).unwrap()
    }
}

impl LossFn for AdaptedLoss<'_> {
    fn num_params(&self) -> usize {
        self.train.num_params()
    }

    // only used through eval_loss by the finite-difference helper
    fn build<S: Scalar>(&self, g: &mut Graph<S>, params: NodeId) -> NodeId {
        let theta: Vec<f64> = g.value(params).iter().map(|s| s.value()).collect();
        g.constant(&[self.value(&theta)])
    }
}

#[test]
fn unrolled_steps_match_finite_differences() {
    for m in 1..=3 {
        let train = mlp_task(10 + m as u64, 6);
        let test = mlp_task(20 + m as u64, 6);
        let theta = init_params(
            &Arc::new(Architecture::mlp(&[2, 5, 3], Activation::Tanh).unwrap()),
            m as u64,
        )
        .into_values();
        let eta = 0.3;
        let claimed = meta_gradient(&train, &test, &theta, eta, m, MetaOrder::Exact).unwrap();
        let oracle = AdaptedLoss {
            train: &train,
            test: &test,
            eta,
            m,
        };
        assert!((claimed.meta_loss - oracle.value(&theta)).abs() < 1e-14);
        let fd = finite_difference_gradient(&oracle, &theta, 1e-5).unwrap();
        let err = relative_error(&claimed.meta_grad, &fd);
        assert!(err < 1e-6, "m={m}: {err:e}");

        let fo = meta_gradient(&train, &test, &theta, eta, m, MetaOrder::FirstOrder).unwrap();
        assert!(
            relative_error(&fo.meta_grad, &fd) > 10.0 * err,
            "first order should be visibly off"
        );
    }
}

#[test]
fn two_step_quadratic_closed_form() {
    // L_tr = ½a(φ−c)²: φ_m = c + (1−ηa)^m (θ−c), dφ_m/dθ = (1−ηa)^m
    let (a, c, eta, theta) = (2.0, 1.0, 0.2, -0.5);
    let tr = Quadratic {
        curvature: vec![a],
        center: vec![c],
    };
    let te = Quadratic {
        curvature: vec![1.0],
        center: vec![0.0],
    };
    for m in 1..=4 {
        let r = meta_gradient(&tr, &te, &[theta], eta, m, MetaOrder::Exact).unwrap();
        let k = (1.0 - eta * a).powi(m as i32);
        let phi = c + k * (theta - c);
        assert!((r.adapted[0] - phi).abs() < 1e-15);
        assert!((r.meta_loss - 0.5 * phi * phi).abs() < 1e-15);
        assert!((r.meta_grad[0] - k * phi).abs() < 1e-14, "m={m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_step_meta_gradient_property(seed in 0u64..10_000, eta in 0.01f64..0.5) {
        let train = mlp_task(seed, 5);
        let test = mlp_task(seed + 1, 5);
        let theta = init_params(&Arc::new(Architecture::mlp(&[2, 5, 3], Activation::Tanh).unwrap()), seed)
            .into_values();
        let claimed = meta_gradient(&train, &test, &theta, eta, 1, MetaOrder::Exact).unwrap();
        let oracle = AdaptedLoss { train: &train, test: &test, eta, m: 1 };
        let fd = finite_difference_gradient(&oracle, &theta, 1e-5).unwrap();
        prop_assert!(relative_error(&claimed.meta_grad, &fd) < 1e-6);
    }
}
