//! Dense networks. Variables are named `x_0_j` for inputs and `x_k_j`,
//! `s_k_j`, `z_k_j` for unit `j` of the `k`-th dense layer (1-based).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{build, EncodeError, InputMode, LayerCosts, LayerNames, Plan, Style, VarMap};
use crate::bounds::BoundSet;
use crate::milp::{MilpModel, ModelStats};
use crate::network::{LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnnEncodeConfig {
    /// Cost of every unit output `x`.
    pub unit_cost: f64,
    /// Cost of every activation binary `z`; must be non-negative.
    pub activation_penalty: f64,
    /// Cost of the input variables. Constant when the input is fixed.
    pub input_cost: f64,
}

impl Default for DnnEncodeConfig {
    fn default() -> Self {
        Self {
            unit_cost: 1.0,
            activation_penalty: 1.0,
            input_cost: 0.0,
        }
    }
}

pub(crate) fn plan(net: &NetworkSpec) -> Plan {
    let mut k = 0;
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            if matches!(l, LayerSpec::Dense { .. }) {
                k += 1;
            }
            LayerNames::flat(format!("x_{k}"), format!("s_{k}"), format!("z_{k}"))
        })
        .collect();
    Plan {
        input: String::from("x_0"),
        input_style: Style::Flat,
        layers,
        costs: alloc::vec![LayerCosts::ZERO; net.layers().len()],
        input_cost: 0.0,
        include_biases: true,
    }
}

/// Compiles a dense network. `bounds` must cover `input`.
pub fn encode_dnn(
    net: &NetworkSpec,
    bounds: &BoundSet,
    input: &InputMode,
    config: &DnnEncodeConfig,
) -> Result<(MilpModel, VarMap), EncodeError> {
    if let Some((layer, l)) = net.layers().iter().enumerate().find(|(_, l)| !matches!(l, LayerSpec::Dense { .. } | LayerSpec::Flatten)) {
        return Err(EncodeError::UnsupportedLayer { layer, kind: l.kind() });
    }
    if !config.unit_cost.is_finite() || !config.input_cost.is_finite() {
        return Err(EncodeError::BadCost("unit and input costs must be finite"));
    }
    if !(config.activation_penalty >= 0.0 && config.activation_penalty.is_finite()) {
        return Err(EncodeError::BadCost("activation penalty must be finite and non-negative"));
    }
    let costs: Vec<LayerCosts> = net
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { .. } => LayerCosts {
                out: config.unit_cost,
                active: config.activation_penalty,
                ..LayerCosts::ZERO
            },
            _ => LayerCosts::ZERO,
        })
        .collect();
    let plan = plan(net).with_costs(costs, config.input_cost);
    build(net, bounds, input, &plan, net.layers().len())
}

/// Closed-form model size of [`encode_dnn`].
pub fn dnn_census(net: &NetworkSpec) -> ModelStats {
    let mut s = ModelStats {
        variables: net.input_len(),
        ..ModelStats::default()
    };
    for (k, l) in net.layers().iter().enumerate() {
        let n: usize = net.output_shape(k).iter().product();
        match l {
            LayerSpec::Dense { .. } if l.has_relu() => {
                s.variables += 3 * n;
                s.binaries += n;
                s.equalities += n;
                s.indicators += 2 * n;
            }
            LayerSpec::Dense { .. } => {
                s.variables += n;
                s.equalities += n;
            }
            _ => {}
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{interval_propagate, Interval};
    use crate::encode::{assignment_from_trace, fix_input, LayerVars};
    use crate::milp::evaluate;
    use crate::network::{classify, forward, Activation};
    use crate::solver::bnb::{branch_and_bound, BnbConfig, SolveStatus};
    use crate::tensor::{ConvParams, Tensor};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_unit() -> NetworkSpec {
        NetworkSpec::new(
            vec![1],
            vec![LayerSpec::Dense {
                weights: Tensor::matrix(&[vec![1.0]]).unwrap(),
                bias: Tensor::vector(vec![0.0]).unwrap(),
                activation: Activation::Relu,
            }],
            1,
        )
        .unwrap()
    }

    fn solve_fixed(net: &NetworkSpec, x: &[f64], config: &DnnEncodeConfig) -> (MilpModel, VarMap, Vec<f64>, f64) {
        let bounds = interval_propagate(net, &vec![Interval::new(-3.0, 3.0); net.input_len()]).unwrap();
        let (m, vars) = encode_dnn(net, &bounds, &InputMode::Fixed(x.to_vec()), config).unwrap();
        let r = branch_and_bound(&m, &BnbConfig::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        (m, vars, r.assignment, r.objective)
    }

    fn relu_vars(vars: &VarMap, k: usize) -> (usize, usize, usize) {
        match &vars.layers[k] {
            LayerVars::Relu { out, neg, active, .. } => (out[0].0, neg[0].0, active[0].0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_unit_split() {
        let net = one_unit();
        let (m, vars, a, _) = solve_fixed(&net, &[2.0], &DnnEncodeConfig::default());
        let (x, s, z) = relu_vars(&vars, 0);
        assert_eq!((a[x], a[s], a[z]), (2.0, 0.0, 0.0));
        assert_eq!(m.var(vars.input[0]).name, "x_0_0");
        assert_eq!(m.vars()[x].name, "x_1_0");

        let gamma = 0.7;
        let cfg = DnnEncodeConfig {
            activation_penalty: gamma,
            ..DnnEncodeConfig::default()
        };
        let (_, vars, a, obj) = solve_fixed(&net, &[-2.0], &cfg);
        let (x, s, z) = relu_vars(&vars, 0);
        assert_eq!((a[x], a[s], a[z]), (0.0, 2.0, 1.0));
        assert!((obj - gamma).abs() < 1e-9);
    }

    fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], out: Activation) -> NetworkSpec {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let rows: Vec<Vec<f64>> = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                LayerSpec::Dense {
                    weights: Tensor::matrix(&rows).unwrap(),
                    bias: Tensor::vector((0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap(),
                    activation: if i == last { out } else { Activation::Relu },
                }
            })
            .collect();
        NetworkSpec::new(vec![sizes[0]], layers, *sizes.last().unwrap()).unwrap()
    }

    #[test]
    fn fixed_input_matches_forward_and_census() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for case in 0..20 {
            let out = if case % 4 == 0 { Activation::Linear } else { Activation::Relu };
            let net = random_net(&mut rng, &[4, 5, 3], out);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (m, vars, a, _) = solve_fixed(&net, &x, &DnnEncodeConfig::default());
            assert_eq!(m.stats(), dnn_census(&net));
            let input = Tensor::vector(x.clone()).unwrap();
            let trace = forward(&net, &input).unwrap();
            for k in 0..2 {
                for (v, &want) in vars.layer_output(k).iter().zip(trace.post[k].data()) {
                    assert!((a[v.0] - want).abs() < 1e-6);
                }
            }
            let scores: Vec<f64> = vars.output().iter().map(|v| a[v.0]).collect();
            let label = scores.iter().enumerate().fold(0, |b, (i, &s)| if s > scores[b] { i } else { b });
            assert_eq!(label, classify(&net, &input).unwrap().0);
            let oracle = assignment_from_trace(&m, &vars, &trace, &net);
            assert!(evaluate(&m, &oracle).unwrap().feasible);
        }
    }

    #[test]
    fn fix_input_checks_box_and_length() {
        let net = one_unit();
        let bounds = interval_propagate(&net, &[Interval::new(-1.0, 1.0)]).unwrap();
        let (m, vars) = encode_dnn(&net, &bounds, &InputMode::uniform_box(1, -1.0, 1.0), &DnnEncodeConfig::default()).unwrap();
        let f = fix_input(&m, &vars, &[0.0]).unwrap();
        assert_eq!((f.var(vars.input[0]).lb, f.var(vars.input[0]).ub), (0.0, 0.0));
        assert!(matches!(fix_input(&m, &vars, &[1.5]), Err(EncodeError::InputOutsideBox { index: 0, .. })));
        assert!(matches!(fix_input(&m, &vars, &[0.0, 0.0]), Err(EncodeError::InputLength { .. })));
        assert!(matches!(
            encode_dnn(&net, &bounds, &InputMode::Fixed(vec![2.0]), &DnnEncodeConfig::default()),
            Err(EncodeError::InputOutsideBox { .. })
        ));
    }

    #[test]
    fn rejects_conv_and_bad_bounds() {
        let conv = NetworkSpec::new(
            vec![3, 3],
            vec![LayerSpec::Conv {
                kernels: vec![Tensor::filled(&[2, 2], 1.0)],
                bias: vec![0.0],
                params: ConvParams::new(2, 1, 0).unwrap(),
            }, LayerSpec::Flatten],
            4,
        )
        .unwrap();
        let b = interval_propagate(&conv, &[Interval::new(0.0, 1.0); 9]).unwrap();
        assert!(matches!(
            encode_dnn(&conv, &b, &InputMode::uniform_box(9, 0.0, 1.0), &DnnEncodeConfig::default()),
            Err(EncodeError::UnsupportedLayer { layer: 0, kind: "conv" })
        ));
        let net = one_unit();
        let mut b = interval_propagate(&net, &[Interval::new(0.0, 1.0)]).unwrap();
        b.layers[0].pre.as_mut().unwrap()[0].hi = f64::INFINITY;
        assert!(matches!(
            encode_dnn(&net, &b, &InputMode::uniform_box(1, 0.0, 1.0), &DnnEncodeConfig::default()),
            Err(EncodeError::NonFiniteBound { layer: 0, unit: 0 })
        ));
        let bad = DnnEncodeConfig {
            activation_penalty: -1.0,
            ..DnnEncodeConfig::default()
        };
        assert!(matches!(
            encode_dnn(&net, &interval_propagate(&net, &[Interval::new(0.0, 1.0)]).unwrap(), &InputMode::uniform_box(1, 0.0, 1.0), &bad),
            Err(EncodeError::BadCost(_))
        ));
    }
}
