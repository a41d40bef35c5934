//! Block-structured CNNs: `C` conv+pool blocks, flatten, a ReLU dense layer
//! and an output dense layer.
//!
//! Names, with 0-based map, row and column indices and 1-based block `c`:
//! `A_1_b_i_j` input, `B_c_d_i_j` conv value, `Bh_c_d_i_j` / `s_c_d_i_j` /
//! `z_c_d_i_j` its ReLU split, `A_{c+1}_d_i_j` pooled value,
//! `zeta_c_d_i_j_a_b` pool selection, `pi_k` flattened copy, then
//! `phi_i` / `st_i` / `zt_i` and `psi_i` / `stt_i` / `ztt_i`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{build, EncodeError, InputMode, LayerCosts, LayerNames, Plan, Style, VarMap};
use crate::bounds::BoundSet;
use crate::milp::{MilpModel, ModelStats};
use crate::network::{Activation, LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnEncodeConfig {
    /// `c`: pooled maps of every block except the last.
    pub map_cost: f64,
    /// `g`: conv values `B`.
    pub conv_cost: f64,
    /// `l`: rectified conv values `Bh`.
    pub rectified_cost: f64,
    /// `n`: conv activation binaries.
    pub conv_penalty: f64,
    /// `o`: pool selection binaries.
    pub pool_penalty: f64,
    /// `c~`: hidden dense outputs.
    pub hidden_cost: f64,
    /// `q`: hidden dense activation binaries.
    pub hidden_penalty: f64,
    /// `c~~`: network outputs.
    pub output_cost: f64,
    /// Input pixels. Constant when the input is fixed.
    pub input_cost: f64,
    /// When false every bias is encoded as zero; bounds must then come from
    /// [`NetworkSpec::without_biases`].
    pub include_biases: bool,
}

impl Default for CnnEncodeConfig {
    fn default() -> Self {
        Self {
            map_cost: 1.0,
            conv_cost: 1.0,
            rectified_cost: 1.0,
            conv_penalty: 1.0,
            pool_penalty: 1.0,
            hidden_cost: 1.0,
            hidden_penalty: 1.0,
            output_cost: 1.0,
            input_cost: 0.0,
            include_biases: false,
        }
    }
}

/// Extents of one conv+pool block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub maps_in: usize,
    pub h: usize,
    pub w: usize,
    pub kernels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub conv_h: usize,
    pub conv_w: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub pool_h: usize,
    pub pool_w: usize,
}

impl BlockDims {
    /// Every kernel sweeps every input map.
    pub fn maps_out(&self) -> usize {
        self.kernels * self.maps_in
    }
}

/// Flat position of `(map, row, col)` in maps of `h x w`.
pub const fn flatten_index(map: usize, row: usize, col: usize, h: usize, w: usize) -> usize {
    map * h * w + row * w + col
}

fn maps(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [h, w] => (1, h, w),
        [m, h, w] => (m, h, w),
        _ => unreachable!("conv and pool shapes are validated"),
    }
}

/// Validates the block structure and returns per-block extents. Errors name
/// the first offending layer.
pub fn block_dims(net: &NetworkSpec) -> Result<Vec<BlockDims>, EncodeError> {
    let layers = net.layers();
    let bad = |layer, reason| Err(EncodeError::NotBlockShaped { layer, reason });
    let mut dims = Vec::new();
    let mut i = 0;
    while let Some(LayerSpec::Conv { kernels, params, .. }) = layers.get(i) {
        let Some(LayerSpec::MaxPool(p)) = layers.get(i + 1) else {
            return bad(i + 1, "a conv layer must be followed by a max-pool layer");
        };
        let (maps_in, h, w) = maps(net.layer_input_shape(i));
        let (_, conv_h, conv_w) = maps(net.output_shape(i));
        let (_, pool_h, pool_w) = maps(net.output_shape(i + 1));
        dims.push(BlockDims {
            maps_in,
            h,
            w,
            kernels: kernels.len(),
            kernel_size: params.kernel_size,
            stride: params.stride,
            padding: params.padding,
            conv_h,
            conv_w,
            pool_size: p.pool_size,
            pool_stride: p.stride,
            pool_h,
            pool_w,
        });
        i += 2;
    }
    if dims.is_empty() {
        return bad(0, "expected a conv layer");
    }
    if !matches!(layers.get(i), Some(LayerSpec::Flatten)) {
        return bad(i, "expected flatten after the last block");
    }
    match layers.get(i + 1) {
        Some(LayerSpec::Dense {
            activation: Activation::Relu,
            ..
        }) => {}
        _ => return bad(i + 1, "expected a ReLU dense layer after flatten"),
    }
    if !matches!(layers.get(i + 2), Some(LayerSpec::Dense { .. })) {
        return bad(i + 2, "expected an output dense layer");
    }
    if layers.len() > i + 3 {
        return bad(i + 3, "unexpected layer after the output layer");
    }
    Ok(dims)
}

pub(crate) fn plan(net: &NetworkSpec, blocks: usize) -> Plan {
    let maps = |pre: Option<String>, out: String, neg: String, active: String, select: String| LayerNames {
        pre,
        out,
        neg,
        active,
        select,
        style: Style::Maps,
        fresh: false,
    };
    let mut layers = Vec::with_capacity(net.layers().len());
    for c in 1..=blocks {
        layers.push(maps(
            Some(format!("B_{c}")),
            format!("Bh_{c}"),
            format!("s_{c}"),
            format!("z_{c}"),
            String::new(),
        ));
        layers.push(maps(None, format!("A_{}", c + 1), String::new(), String::new(), format!("zeta_{c}")));
    }
    layers.push(LayerNames {
        fresh: true,
        ..LayerNames::flat(String::from("pi"), String::new(), String::new())
    });
    layers.push(LayerNames::flat(String::from("phi"), String::from("st"), String::from("zt")));
    layers.push(LayerNames::flat(String::from("psi"), String::from("stt"), String::from("ztt")));
    Plan {
        input: String::from("A_1"),
        input_style: Style::Maps,
        layers,
        costs: alloc::vec![LayerCosts::ZERO; net.layers().len()],
        input_cost: 0.0,
        include_biases: true,
    }
}

/// Compiles a block-structured CNN. `bounds` must cover `input`.
pub fn encode_cnn(
    net: &NetworkSpec,
    bounds: &BoundSet,
    input: &InputMode,
    config: &CnnEncodeConfig,
) -> Result<(MilpModel, VarMap), EncodeError> {
    let dims = block_dims(net)?;
    let c = config;
    let all = [
        c.map_cost,
        c.conv_cost,
        c.rectified_cost,
        c.conv_penalty,
        c.pool_penalty,
        c.hidden_cost,
        c.hidden_penalty,
        c.output_cost,
        c.input_cost,
    ];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(EncodeError::BadCost("costs must be finite"));
    }
    if [c.conv_penalty, c.pool_penalty, c.hidden_penalty].iter().any(|&v| v < 0.0) {
        return Err(EncodeError::BadCost("activation penalties must be non-negative"));
    }
    let blocks = dims.len();
    let mut costs = Vec::with_capacity(net.layers().len());
    for b in 0..blocks {
        costs.push(LayerCosts {
            pre: c.conv_cost,
            out: c.rectified_cost,
            active: c.conv_penalty,
            select: 0.0,
        });
        costs.push(LayerCosts {
            out: if b + 1 < blocks { c.map_cost } else { 0.0 },
            select: c.pool_penalty,
            ..LayerCosts::ZERO
        });
    }
    costs.push(LayerCosts::ZERO);
    costs.push(LayerCosts {
        out: c.hidden_cost,
        active: c.hidden_penalty,
        ..LayerCosts::ZERO
    });
    costs.push(LayerCosts {
        out: c.output_cost,
        ..LayerCosts::ZERO
    });
    let mut plan = plan(net, blocks).with_costs(costs, c.input_cost);
    plan.include_biases = c.include_biases;
    build(net, bounds, input, &plan, net.layers().len())
}

/// Closed-form model size of [`encode_cnn`] on `net`.
pub fn cnn_census(net: &NetworkSpec) -> Result<ModelStats, EncodeError> {
    let dims = block_dims(net)?;
    let mut s = ModelStats {
        variables: net.input_len(),
        ..ModelStats::default()
    };
    for d in &dims {
        let conv = d.maps_out() * d.conv_h * d.conv_w;
        let pooled = d.maps_out() * d.pool_h * d.pool_w;
        let select = pooled * d.pool_size * d.pool_size;
        s.variables += 4 * conv + pooled + select;
        s.binaries += conv + select;
        s.equalities += 2 * conv + pooled;
        s.inequalities += select;
        s.indicators += 2 * conv + select;
    }
    let last = dims.last().expect("at least one block");
    let flat = last.maps_out() * last.pool_h * last.pool_w;
    s.variables += flat;
    s.equalities += flat;
    let k = net.layers().len();
    for layer in [k - 2, k - 1] {
        let n = net.output_shape(layer)[0];
        s.equalities += n;
        if net.layers()[layer].has_relu() {
            s.variables += 3 * n;
            s.binaries += n;
            s.indicators += 2 * n;
        } else {
            s.variables += n;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{interval_propagate, Interval};
    use crate::encode::{assignment_from_trace, LayerVars};
    use crate::milp::evaluate;
    use crate::network::forward;
    use crate::solver::bnb::{branch_and_bound, BnbConfig, SolveStatus};
    use crate::tensor::{ConvParams, PoolParams, Tensor};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(rng: &mut ChaCha8Rng, n_out: usize, n_in: usize, activation: Activation) -> LayerSpec {
        let rows: Vec<Vec<f64>> = (0..n_out).map(|_| (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        LayerSpec::Dense {
            weights: Tensor::matrix(&rows).unwrap(),
            bias: Tensor::vector((0..n_out).map(|_| rng.random_range(-0.2..0.2)).collect()).unwrap(),
            activation,
        }
    }

    fn one_block(rng: &mut ChaCha8Rng, side: usize, kernels: usize, f: usize, out: Activation) -> NetworkSpec {
        let ks = (0..kernels)
            .map(|_| Tensor::new(vec![f, f], (0..f * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let conv = side - f + 1;
        let pool_stride = if conv.is_multiple_of(2) { 2 } else { 1 };
        let pooled = (conv - 2) / pool_stride + 1;
        let flat = kernels * pooled * pooled;
        NetworkSpec::new(
            vec![side, side],
            vec![
                LayerSpec::Conv {
                    kernels: ks,
                    bias: (0..kernels).map(|_| rng.random_range(-0.2..0.2)).collect(),
                    params: ConvParams::new(f, 1, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(2, pool_stride).unwrap()),
                LayerSpec::Flatten,
                dense(rng, 3, flat, Activation::Relu),
                dense(rng, 2, 3, out),
            ],
            2,
        )
        .unwrap()
    }

    fn solve(net: &NetworkSpec, x: &[f64], config: &CnnEncodeConfig) -> (MilpModel, VarMap, Vec<f64>) {
        let bounds = interval_propagate(net, &vec![Interval::new(0.0, 1.0); net.input_len()]).unwrap();
        let (m, vars) = encode_cnn(net, &bounds, &InputMode::Fixed(x.to_vec()), config).unwrap();
        let r = branch_and_bound(&m, &BnbConfig::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(evaluate(&m, &r.assignment).unwrap().feasible);
        (m, vars, r.assignment)
    }

    fn assert_matches_trace(net: &NetworkSpec, vars: &VarMap, a: &[f64], x: &[f64]) {
        let trace = forward(net, &Tensor::new(net.input_shape().to_vec(), x.to_vec()).unwrap()).unwrap();
        for (k, lv) in vars.layers.iter().enumerate() {
            for (v, &want) in lv.out().iter().zip(trace.post[k].data()) {
                assert!((a[v.0] - want).abs() < 1e-6, "layer {k}: {} vs {want}", a[v.0]);
            }
            match lv {
                LayerVars::Relu { pre: Some(pre), .. } => {
                    for (v, &want) in pre.iter().zip(trace.pre[k].as_ref().unwrap().data()) {
                        assert!((a[v.0] - want).abs() < 1e-6);
                    }
                }
                LayerVars::Pool { select, .. } => {
                    for picks in select {
                        assert_eq!(picks.iter().map(|v| a[v.0]).sum::<f64>(), 1.0);
                    }
                }
                _ => {}
            }
        }
    }

    #[test]
    fn fixed_input_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..8 {
            let out = if case % 4 == 3 { Activation::Linear } else { Activation::Relu };
            let net = one_block(&mut rng, 6, 1 + case % 2, 2 + case % 2, out).without_biases();
            let x: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..1.0)).collect();
            let (m, vars, a) = solve(&net, &x, &CnnEncodeConfig::default());
            assert_eq!(m.stats(), cnn_census(&net).unwrap());
            assert_matches_trace(&net, &vars, &a, &x);
            let trace = forward(&net, &Tensor::new(vec![6, 6], x.clone()).unwrap()).unwrap();
            assert!(evaluate(&m, &assignment_from_trace(&m, &vars, &trace, &net)).unwrap().feasible);
        }
    }

    #[test]
    fn biases_follow_the_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let net = one_block(&mut rng, 5, 2, 2, Activation::Relu);
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let with = CnnEncodeConfig {
            include_biases: true,
            ..CnnEncodeConfig::default()
        };
        let (_, vars, a) = solve(&net, &x, &with);
        assert_matches_trace(&net, &vars, &a, &x);
        let stripped = net.without_biases();
        let (_, vars, a) = solve(&stripped, &x, &CnnEncodeConfig::default());
        assert_matches_trace(&stripped, &vars, &a, &x);
    }

    #[test]
    fn names_and_map_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let net = one_block(&mut rng, 6, 2, 2, Activation::Relu).without_biases();
        let b = interval_propagate(&net, &vec![Interval::new(0.0, 1.0); 36]).unwrap();
        let (m, _) = encode_cnn(&net, &b, &InputMode::uniform_box(36, 0.0, 1.0), &CnnEncodeConfig::default()).unwrap();
        for name in ["A_1_0_5_5", "B_1_1_4_4", "Bh_1_0_0_0", "s_1_1_0_0", "z_1_1_4_4", "A_2_1_1_1", "zeta_1_1_1_1_1_1", "pi_7", "phi_2", "st_2", "zt_2", "psi_1", "stt_1", "ztt_1"] {
            assert!(m.var_by_name(name).is_some(), "{name}");
        }

        let kernels = |n: usize| (0..n).map(|_| Tensor::filled(&[1, 1], 1.0)).collect::<Vec<_>>();
        let two = NetworkSpec::new(
            vec![4, 4],
            vec![
                LayerSpec::Conv {
                    kernels: kernels(3),
                    bias: vec![0.0; 3],
                    params: ConvParams::new(1, 1, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(1, 1).unwrap()),
                LayerSpec::Conv {
                    kernels: kernels(4),
                    bias: vec![0.0; 4],
                    params: ConvParams::new(1, 1, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(2, 2).unwrap()),
                LayerSpec::Flatten,
                dense(&mut rng, 2, 48, Activation::Relu),
                dense(&mut rng, 2, 2, Activation::Relu),
            ],
            2,
        )
        .unwrap();
        let d = block_dims(&two).unwrap();
        assert_eq!((d[0].maps_out(), d[1].maps_out()), (3, 12));
    }

    #[test]
    fn pool_block_picks_the_maximum() {
        // 1x1 identity conv so the pooled cells see the input directly
        let net = NetworkSpec::new(
            vec![2, 2],
            vec![
                LayerSpec::Conv {
                    kernels: vec![Tensor::filled(&[1, 1], 1.0)],
                    bias: vec![0.0],
                    params: ConvParams::new(1, 1, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(2, 2).unwrap()),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    weights: Tensor::matrix(&[vec![1.0]]).unwrap(),
                    bias: Tensor::vector(vec![0.0]).unwrap(),
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    weights: Tensor::matrix(&[vec![1.0]]).unwrap(),
                    bias: Tensor::vector(vec![0.0]).unwrap(),
                    activation: Activation::Relu,
                },
            ],
            1,
        )
        .unwrap();
        let b = interval_propagate(&net, &[Interval::new(0.0, 4.0); 4]).unwrap();
        let (m, vars) = encode_cnn(&net, &b, &InputMode::Fixed(vec![0.25, 0.5, 0.75, 1.0]), &CnnEncodeConfig::default()).unwrap();
        let r = branch_and_bound(&m, &BnbConfig::default());
        let LayerVars::Pool { out, select } = &vars.layers[1] else { panic!() };
        assert_eq!(r.value(out[0]), 1.0);
        assert_eq!(select[0].iter().map(|&v| r.value(v)).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn random_maps_pool_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let id = |rng: &mut ChaCha8Rng| dense(rng, 4, 4, Activation::Relu);
        let net = NetworkSpec::new(
            vec![4, 4],
            vec![
                LayerSpec::Conv {
                    kernels: vec![Tensor::filled(&[1, 1], 1.0)],
                    bias: vec![0.0],
                    params: ConvParams::new(1, 1, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(2, 2).unwrap()),
                LayerSpec::Flatten,
                id(&mut rng),
                id(&mut rng),
            ],
            4,
        )
        .unwrap()
        .without_biases();
        let bounds = interval_propagate(&net, &vec![Interval::new(0.0, 1.0); 16]).unwrap();
        let (m, vars) = encode_cnn(&net, &bounds, &InputMode::uniform_box(16, 0.0, 1.0), &CnnEncodeConfig::default()).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
            let fixed = crate::encode::fix_input(&m, &vars, &x).unwrap();
            let r = branch_and_bound(&fixed, &BnbConfig::default());
            let want = crate::tensor::maxpool2d(&Tensor::new(vec![4, 4], x).unwrap(), PoolParams::new(2, 2).unwrap()).unwrap();
            let got: Vec<f64> = vars.layer_output(1).iter().map(|&v| r.value(v)).collect();
            for (g, w) in got.iter().zip(want.data()) {
                assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn zero_network_costs_only_penalties() {
        let net = NetworkSpec::new(
            vec![4, 4],
            vec![
                LayerSpec::Conv {
                    kernels: vec![Tensor::zeros(&[2, 2])],
                    bias: vec![0.0],
                    params: ConvParams::new(2, 2, 0).unwrap(),
                },
                LayerSpec::MaxPool(PoolParams::new(2, 2).unwrap()),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    weights: Tensor::zeros(&[2, 1]),
                    bias: Tensor::zeros(&[2]),
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    weights: Tensor::zeros(&[2, 2]),
                    bias: Tensor::zeros(&[2]),
                    activation: Activation::Relu,
                },
            ],
            2,
        )
        .unwrap();
        let b = interval_propagate(&net, &vec![Interval::new(0.0, 1.0); 16]).unwrap();
        let (m, _) = encode_cnn(&net, &b, &InputMode::Fixed(vec![0.0; 16]), &CnnEncodeConfig::default()).unwrap();
        let r = branch_and_bound(&m, &BnbConfig::default());
        let penalties: f64 = m.vars().iter().filter(|v| v.kind == crate::milp::VarKind::Binary).map(|v| v.cost * r.value(v.id)).sum();
        assert!(m.vars().iter().filter(|v| v.kind == crate::milp::VarKind::Continuous).all(|v| r.value(v.id) == 0.0));
        assert_eq!(r.objective, penalties);
        // one selection binary per pooled cell, all activations off
        assert_eq!(r.objective, 1.0);
    }

    #[test]
    fn flatten_index_is_collision_free() {
        for maps in 1..4 {
            for h in 1..5 {
                for w in 1..5 {
                    let mut seen = vec![false; maps * h * w];
                    for d in 0..maps {
                        for i in 0..h {
                            for j in 0..w {
                                let idx = flatten_index(d, i, j, h, w);
                                assert!(!seen[idx]);
                                seen[idx] = true;
                            }
                        }
                    }
                }
            }
        }
        // the product form map * (w * row + col), 1-based, reuses slots
        let product = |b: usize, i: usize, j: usize, w: usize| b * (w * (i - 1) + j);
        assert_eq!(product(2, 1, 1, 2), product(1, 1, 2, 2));
    }

    #[test]
    fn rejects_non_block_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let good = one_block(&mut rng, 6, 1, 2, Activation::Relu);
        let no_pool = NetworkSpec::new(
            vec![2, 2],
            vec![
                LayerSpec::Conv {
                    kernels: vec![Tensor::filled(&[1, 1], 1.0)],
                    bias: vec![0.0],
                    params: ConvParams::new(1, 1, 0).unwrap(),
                },
                LayerSpec::Flatten,
                dense(&mut rng, 2, 4, Activation::Relu),
                dense(&mut rng, 2, 2, Activation::Relu),
            ],
            2,
        )
        .unwrap();
        assert!(matches!(block_dims(&no_pool), Err(EncodeError::NotBlockShaped { layer: 1, .. })));
        let mut layers = good.layers().to_vec();
        layers.push(dense(&mut rng, 2, 2, Activation::Relu));
        let long = NetworkSpec::new(vec![6, 6], layers, 2).unwrap();
        assert!(matches!(block_dims(&long), Err(EncodeError::NotBlockShaped { layer: 5, .. })));
        let dense_only = NetworkSpec::new(vec![2], vec![dense(&mut rng, 2, 2, Activation::Relu)], 2).unwrap();
        assert!(matches!(block_dims(&dense_only), Err(EncodeError::NotBlockShaped { layer: 0, .. })));
    }
}
