//! Cross-module invariants on random dense networks.

use net2milp_core::adversarial::{build_adversarial, AdversarialConfig, TargetRule};
use net2milp_core::bounds::{interval_propagate, lp_tighten, BoundSet, Interval, Serial, TightenConfig, TightenMode};
use net2milp_core::encode::{assignment_from_trace, dnn_census, encode_dnn, DnnEncodeConfig, InputMode};
use net2milp_core::milp::{evaluate, to_big_m};
use net2milp_core::network::{classify, forward, Activation, LayerSpec, NetworkSpec};
use net2milp_core::solver::bnb::{branch_and_bound, BnbConfig, NoClock, SolveStatus};
use net2milp_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64, linear_head: bool) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..4);
    let mut width = rng.random_range(1..4);
    let input = width;
    let mut layers = Vec::new();
    for k in 0..depth {
        let out = rng.random_range(1..5);
        let w: Vec<f64> = (0..out * width).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let activation = if linear_head && k + 1 == depth { Activation::Linear } else { Activation::Relu };
        layers.push(LayerSpec::Dense {
            weights: Tensor::new(vec![out, width], w).unwrap(),
            bias: Tensor::vector(b).unwrap(),
            activation,
        });
        width = out;
    }
    NetworkSpec::new(vec![input], layers, width).unwrap()
}

fn sample(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap()
}

fn unit_box(net: &NetworkSpec) -> Vec<Interval> {
    vec![Interval::new(0.0, 1.0); net.input_len()]
}

fn tighten(net: &NetworkSpec, seed: &BoundSet, mode: TightenMode) -> BoundSet {
    let cfg = TightenConfig {
        mode,
        ..TightenConfig::default()
    };
    lp_tighten(net, seed, &cfg, &NoClock, &Serial).unwrap()
}

fn contains(b: &BoundSet, net: &NetworkSpec, x: &Tensor) -> bool {
    let t = forward(net, x).unwrap();
    b.layers.iter().enumerate().all(|(k, l)| {
        let pre_ok = match (&l.pre, &t.pre[k]) {
            (Some(iv), Some(p)) => iv.iter().zip(p.data()).all(|(i, &v)| i.contains(v, 1e-9)),
            _ => true,
        };
        pre_ok && l.post.iter().zip(t.post[k].data()).all(|(i, &v)| i.contains(v, 1e-9))
    })
}

fn nested(inner: &BoundSet, outer: &BoundSet) -> bool {
    inner.layers.iter().zip(&outer.layers).all(|(a, b)| {
        let pre = a.pre.iter().flatten().zip(b.pre.iter().flatten());
        a.post.iter().zip(&b.post).chain(pre).all(|(i, o)| i.lo >= o.lo - 1e-9 && i.hi <= o.hi + 1e-9)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_pure_and_complementary(seed in any::<u64>()) {
        let net = random_net(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = sample(&mut rng, net.input_len());
        let a = forward(&net, &x).unwrap();
        prop_assert_eq!(&a, &forward(&net, &x).unwrap());
        for (pre, post) in a.pre.iter().zip(&a.post) {
            let pre = pre.as_ref().unwrap();
            for (&p, &q) in pre.data().iter().zip(post.data()) {
                prop_assert!(q >= 0.0);
                prop_assert_eq!(q * (q - p), 0.0);
            }
        }
    }

    #[test]
    fn interval_propagation_is_idempotent(seed in any::<u64>()) {
        let net = random_net(seed, seed % 3 == 0);
        let b = interval_propagate(&net, &unit_box(&net)).unwrap();
        prop_assert_eq!(&interval_propagate(&net, &b.input).unwrap(), &b);
    }

    #[test]
    fn tightened_bounds_are_sound_and_nested(seed in any::<u64>()) {
        let net = random_net(seed, seed % 2 == 0);
        let interval = interval_propagate(&net, &unit_box(&net)).unwrap();
        let lp = tighten(&net, &interval, TightenMode::LpRelaxation);
        let exact = tighten(&net, &interval, TightenMode::ExactMilp);
        prop_assert!(nested(&lp, &interval));
        prop_assert!(nested(&exact, &lp));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..100 {
            let x = sample(&mut rng, net.input_len());
            prop_assert!(contains(&exact, &net, &x));
        }
    }

    #[test]
    fn forward_trace_is_a_feasible_point(seed in any::<u64>()) {
        let net = random_net(seed, seed % 2 == 1);
        let bounds = interval_propagate(&net, &unit_box(&net)).unwrap();
        let (m, vars) = encode_dnn(&net, &bounds, &InputMode::uniform_box(net.input_len(), 0.0, 1.0), &DnnEncodeConfig::default()).unwrap();
        prop_assert_eq!(m.stats(), dnn_census(&net));
        if seed % 2 == 0 {
            // all-ReLU nets: inputs plus x, s, z per unit, one equality and two indicators per unit
            let units: usize = net.layers().iter().enumerate().map(|(k, _)| net.output_shape(k)[0]).sum();
            let s = m.stats();
            prop_assert_eq!(s.variables, net.input_len() + 3 * units);
            prop_assert_eq!(s.equalities, units);
            prop_assert_eq!(s.indicators, 2 * units);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let x = sample(&mut rng, net.input_len());
        let point = assignment_from_trace(&m, &vars, &forward(&net, &x).unwrap(), &net);
        prop_assert!(evaluate(&m, &point).unwrap().feasible);
        prop_assert!(evaluate(&to_big_m(&m).unwrap(), &point).unwrap().feasible);
    }

    #[test]
    fn solver_output_passes_evaluate_and_is_deterministic(seed in any::<u64>()) {
        let net = random_net(seed, false);
        let bounds = interval_propagate(&net, &unit_box(&net)).unwrap();
        let (mut m, vars) = encode_dnn(&net, &bounds, &InputMode::uniform_box(net.input_len(), 0.0, 1.0), &DnnEncodeConfig::default()).unwrap();
        // reward the first output so the search has work to do
        m.set_cost(vars.output()[0], -3.0).unwrap();
        let a = branch_and_bound(&m, &BnbConfig::default());
        prop_assert_eq!(a.status, SolveStatus::Optimal);
        let e = evaluate(&m, &a.assignment).unwrap();
        prop_assert!(e.feasible, "{:?}", e.violation);
        prop_assert!((e.objective - a.objective).abs() <= 1e-6);
        prop_assert!(a.bound_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        prop_assert_eq!(&a, &branch_and_bound(&m, &BnbConfig::default()));
    }
}

/// Optimal adversarial objective over the budget; `inf` when infeasible.
fn adversarial_optimum(net: &NetworkSpec, x0: &[f64], label: usize, eps_max: f64) -> f64 {
    let cfg = AdversarialConfig {
        eps_max,
        target: TargetRule::Explicit(1 - label),
        ..AdversarialConfig::default()
    };
    let b = interval_propagate(net, &unit_box(net)).unwrap();
    let (m, vars) = encode_dnn(net, &b, &InputMode::uniform_box(net.input_len(), 0.0, 1.0), &DnnEncodeConfig::default()).unwrap();
    let adv = build_adversarial(&m, &vars, x0, label, &cfg).unwrap();
    let r = branch_and_bound(&adv.model, &BnbConfig::default());
    match r.status {
        SolveStatus::Infeasible => f64::INFINITY,
        SolveStatus::Optimal => {
            // every eps sits on |x - x0| at the optimum
            for (j, &e) in adv.eps.iter().enumerate() {
                let moved = (r.value(vars.input[j]) - x0[j]).abs();
                assert!((r.value(e) - moved).abs() <= 1e-6, "eps {j}: {} vs {moved}", r.value(e));
            }
            r.objective
        }
        other => panic!("unexpected status {other:?}"),
    }
}

#[test]
fn adversarial_optimum_is_monotone_in_the_budget() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let net = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            NetworkSpec::new(
                vec![3],
                vec![
                    LayerSpec::Dense {
                        weights: Tensor::new(vec![4, 3], w).unwrap(),
                        bias: Tensor::vector(vec![0.1; 4]).unwrap(),
                        activation: Activation::Relu,
                    },
                    LayerSpec::Dense {
                        weights: Tensor::new(vec![2, 4], v).unwrap(),
                        bias: Tensor::vector(vec![0.2, 0.2]).unwrap(),
                        activation: Activation::Linear,
                    },
                ],
                2,
            )
            .unwrap()
        };
        let x0 = [0.3, 0.5, 0.7];
        let (label, _) = classify(&net, &Tensor::vector(x0.to_vec()).unwrap()).unwrap();
        let opt: Vec<f64> = [0.1, 0.2, 0.3].iter().map(|&e| adversarial_optimum(&net, &x0, label, e)).collect();
        assert!(opt[1] <= opt[0] + 1e-9 && opt[2] <= opt[1] + 1e-9, "seed {seed}: {opt:?}");
        checked += usize::from(opt[2].is_finite());
    }
    assert!(checked >= 5, "only {checked} instances had an adversarial");
}
