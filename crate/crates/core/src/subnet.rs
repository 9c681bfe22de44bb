//! One-dimensional fully connected subnetworks `ℝ → ℝᵖ`.
//!
//! Forward evaluation carries the pair (value, d/dx) through every layer so
//! the input derivative is exact, and `backprop` reverses both paths. The
//! stiffness form needs `∂φ/∂x`, so parameter gradients must include the
//! mixed second derivatives that flow through the tangent path.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sin,
    Tanh,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sin => {
                let (s, c) = x.sin_cos();
                (s, c, -s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Layers of one subnetwork. Hidden layers use `activation`, the last layer
/// is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct SubnetParams {
    layers: Vec<Dense>,
    activation: Activation,
}

impl SubnetParams {
    pub fn new(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("subnetwork needs at least one layer".into()));
        }
        let mut width = 1;
        for (i, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weight.dim();
            if inp != width || layer.bias.len() != out || out == 0 {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {out}x{inp}, bias {}, expected input width {width}",
                    layer.bias.len()
                )));
            }
            width = out;
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights. Hidden biases are uniform in `[-π, π]` for sine
    /// activations so the hidden units start with spread-out phases; output
    /// biases start at zero.
    pub fn random<R: Rng + ?Sized>(
        depth: usize,
        width: usize,
        p: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![1];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(p);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (li, pair) in dims.windows(2).enumerate() {
            let (inp, out) = (pair[0], pair[1]);
            let limit = (6.0 / (inp + out) as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((out, inp), || rng.gen_range(-limit..limit));
            let hidden = li + 2 < dims.len();
            let bias = if hidden {
                match activation {
                    Activation::Sin => Array1::from_shape_simple_fn(out, || rng.gen_range(-PI..PI)),
                    Activation::Tanh => Array1::from_shape_simple_fn(out, || rng.gen_range(-1.0..1.0)),
                }
            } else {
                Array1::zeros(out)
            };
            layers.push(Dense { weight, bias });
        }
        Self { layers, activation }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Hidden width (0 when there are no hidden layers).
    pub fn width(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].bias.len()
        } else {
            0
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Appends parameters layer by layer: weight row-major, then bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
    }

    /// Reads parameters in `flatten_into` order; returns the count consumed.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<usize> {
        let need = self.num_params();
        if flat.len() < need {
            return Err(Error::Shape(format!(
                "subnetwork needs {need} parameters, {} available",
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[at];
                at += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[at];
                at += 1;
            }
        }
        Ok(at)
    }
}

/// Component values and input derivatives at a batch of nodes, both `p × Q`.
#[derive(Clone, Debug)]
pub struct BatchEval {
    pub values: Array2<f64>,
    pub input_derivs: Array2<f64>,
}

struct LayerTape {
    input: Array2<f64>,
    input_tan: Array2<f64>,
    pre_tan: Array2<f64>,
    d1: Array2<f64>,
    d2: Array2<f64>,
}

/// Intermediate activations saved by the forward pass.
pub struct Tape {
    hidden: Vec<LayerTape>,
    last_input: Array2<f64>,
    last_input_tan: Array2<f64>,
}

pub fn forward_batch(params: &SubnetParams, nodes: &[f64]) -> Result<BatchEval> {
    forward_with_tape(params, nodes).map(|(e, _)| e)
}

pub fn forward_with_tape(params: &SubnetParams, nodes: &[f64]) -> Result<(BatchEval, Tape)> {
    let q = nodes.len();
    let mut a = Array2::from_shape_vec((q, 1), nodes.to_vec()).expect("column shape");
    let mut t = Array2::<f64>::ones((q, 1));
    let n_layers = params.layers.len();
    let mut hidden = Vec::with_capacity(n_layers - 1);
    for layer in &params.layers[..n_layers - 1] {
        let mut pre = a.dot(&layer.weight.t());
        pre += &layer.bias;
        let pre_tan = t.dot(&layer.weight.t());
        let mut act = Array2::zeros(pre.dim());
        let mut d1 = Array2::zeros(pre.dim());
        let mut d2 = Array2::zeros(pre.dim());
        ndarray::Zip::from(&mut act)
            .and(&mut d1)
            .and(&mut d2)
            .and(&pre)
            .for_each(|s, ds, dds, &x| {
                let (v, dv, ddv) = params.activation.eval(x);
                *s = v;
                *ds = dv;
                *dds = ddv;
            });
        let tan = &d1 * &pre_tan;
        let prev_a = std::mem::replace(&mut a, act);
        let prev_t = std::mem::replace(&mut t, tan);
        hidden.push(LayerTape {
            input: prev_a,
            input_tan: prev_t,
            pre_tan,
            d1,
            d2,
        });
    }
    let last = &params.layers[n_layers - 1];
    let mut y = a.dot(&last.weight.t());
    y += &last.bias;
    let ty = t.dot(&last.weight.t());
    let values = y.t().as_standard_layout().into_owned();
    let input_derivs = ty.t().as_standard_layout().into_owned();
    for node in 0..q {
        let bad = values.column(node).iter().chain(input_derivs.column(node).iter()).any(|v| !v.is_finite());
        if bad {
            return Err(Error::NonFiniteOutput { node });
        }
    }
    Ok((
        BatchEval {
            values,
            input_derivs,
        },
        Tape {
            hidden,
            last_input: a,
            last_input_tan: t,
        },
    ))
}

/// Gradient of `Σ_{j,q} adj_v[j,q] φ_j(x_q) + adj_d[j,q] φ_j'(x_q)` with
/// respect to every parameter, in `flatten_into` order.
pub fn backprop(
    params: &SubnetParams,
    nodes: &[f64],
    adj_values: ArrayView2<f64>,
    adj_derivs: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let (_, tape) = forward_with_tape(params, nodes)?;
    let mut grad = vec![0.0; params.num_params()];
    backprop_tape(params, &tape, adj_values, adj_derivs, &mut grad)?;
    Ok(grad)
}

/// Like [`backprop`] but reuses a forward tape and accumulates into `grad`.
pub fn backprop_tape(
    params: &SubnetParams,
    tape: &Tape,
    adj_values: ArrayView2<f64>,
    adj_derivs: ArrayView2<f64>,
    grad: &mut [f64],
) -> Result<()> {
    let p = params.output_dim();
    let q = tape.last_input.nrows();
    if adj_values.dim() != (p, q) || adj_derivs.dim() != (p, q) {
        return Err(Error::Shape(format!(
            "adjoints {:?}/{:?}, expected ({p}, {q})",
            adj_values.dim(),
            adj_derivs.dim()
        )));
    }
    if grad.len() != params.num_params() {
        return Err(Error::Shape(format!(
            "gradient buffer {} for {} parameters",
            grad.len(),
            params.num_params()
        )));
    }
    let offsets: Vec<usize> = params
        .layers
        .iter()
        .scan(0, |acc, l| {
            let start = *acc;
            *acc += l.num_params();
            Some(start)
        })
        .collect();
    let n_layers = params.layers.len();

    let last = &params.layers[n_layers - 1];
    let gw = adj_values.dot(&tape.last_input) + adj_derivs.dot(&tape.last_input_tan);
    let gb = adj_values.sum_axis(Axis(1));
    accumulate_layer(grad, offsets[n_layers - 1], &gw, &gb);
    if n_layers == 1 {
        return Ok(());
    }
    let mut abar = adj_values.t().dot(&last.weight);
    let mut tbar = adj_derivs.t().dot(&last.weight);

    for li in (0..n_layers - 1).rev() {
        let lt = &tape.hidden[li];
        let layer = &params.layers[li];
        // pre̅ = ā σ' + t̄ σ'' pre_tan ; pre_tan̅ = t̄ σ'
        let mut pre_bar = &abar * &lt.d1;
        ndarray::Zip::from(&mut pre_bar)
            .and(&tbar)
            .and(&lt.d2)
            .and(&lt.pre_tan)
            .for_each(|pb, &tb, &dd, &pt| *pb += tb * dd * pt);
        let tan_bar = &tbar * &lt.d1;
        let gw = pre_bar.t().dot(&lt.input) + tan_bar.t().dot(&lt.input_tan);
        let gb = pre_bar.sum_axis(Axis(0));
        accumulate_layer(grad, offsets[li], &gw, &gb);
        if li > 0 {
            abar = pre_bar.dot(&layer.weight);
            tbar = tan_bar.dot(&layer.weight);
        }
    }
    Ok(())
}

fn accumulate_layer(grad: &mut [f64], offset: usize, gw: &Array2<f64>, gb: &Array1<f64>) {
    let mut at = offset;
    for &v in gw.iter() {
        grad[at] += v;
        at += 1;
    }
    for &v in gb.iter() {
        grad[at] += v;
        at += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: f64, b: f64) -> SubnetParams {
        SubnetParams::new(
            vec![Dense {
                weight: array![[w]],
                bias: array![b],
            }],
            Activation::Sin,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_bias() {
        let net = linear(0.0, 0.7);
        let e = forward_batch(&net, &[-1.0, 0.0, 2.0]).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.7));
        assert!(e.input_derivs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_network() {
        let net = linear(2.5, 0.0);
        let e = forward_batch(&net, &[-1.0, 0.5]).unwrap();
        assert_eq!(e.values.row(0).to_vec(), vec![-2.5, 1.25]);
        assert_eq!(e.input_derivs.row(0).to_vec(), vec![2.5, 2.5]);
    }

    #[test]
    fn shape_validation() {
        let bad = SubnetParams::new(
            vec![Dense {
                weight: Array2::zeros((3, 2)),
                bias: Array1::zeros(3),
            }],
            Activation::Sin,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn input_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SubnetParams::random(3, 20, 4, Activation::Sin, &mut rng);
        let nodes: Vec<f64> = (0..15).map(|i| -2.0 + 0.3 * i as f64).collect();
        let e = forward_batch(&net, &nodes).unwrap();
        let h = 1e-5;
        let plus: Vec<f64> = nodes.iter().map(|x| x + h).collect();
        let minus: Vec<f64> = nodes.iter().map(|x| x - h).collect();
        let ep = forward_batch(&net, &plus).unwrap();
        let em = forward_batch(&net, &minus).unwrap();
        for j in 0..4 {
            for q in 0..nodes.len() {
                let fd = (ep.values[[j, q]] - em.values[[j, q]]) / (2.0 * h);
                let an = e.input_derivs[[j, q]];
                assert!((fd - an).abs() / (an.abs() + 1e-8) <= 1e-6, "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_adjoints_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = SubnetParams::random(2, 5, 3, Activation::Tanh, &mut rng);
        let nodes = [0.1, 0.2, 0.3];
        let z = Array2::zeros((3, 3));
        let g = backprop(&net, &nodes, z.view(), z.view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient() {
        let net = linear(0.3, -0.2);
        let nodes = [0.5, 1.5, -1.0, 2.0];
        let ones = Array2::ones((1, 4));
        let zeros = Array2::zeros((1, 4));
        let g = backprop(&net, &nodes, ones.view(), zeros.view()).unwrap();
        assert!((g[0] - nodes.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(g[1], 4.0);
    }

    #[test]
    fn adjoint_shape_mismatch() {
        let net = linear(1.0, 0.0);
        let a = Array2::zeros((2, 3));
        assert!(matches!(
            backprop(&net, &[0.0, 1.0, 2.0], a.view(), a.view()),
            Err(Error::Shape(_))
        ));
    }

    fn objective(net: &SubnetParams, nodes: &[f64], av: &Array2<f64>, ad: &Array2<f64>) -> f64 {
        let e = forward_batch(net, nodes).unwrap();
        (&e.values * av).sum() + (&e.input_derivs * ad).sum()
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        for act in [Activation::Sin, Activation::Tanh] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let net = SubnetParams::random(3, 6, 3, act, &mut rng);
            let nodes: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
            let av = Array2::from_shape_simple_fn((3, 9), || rng.gen_range(-1.0..1.0));
            let ad = Array2::from_shape_simple_fn((3, 9), || rng.gen_range(-1.0..1.0));
            let g = backprop(&net, &nodes, av.view(), ad.view()).unwrap();
            let mut flat = Vec::new();
            net.flatten_into(&mut flat);
            let h = 1e-5;
            let mut worst = 0.0f64;
            for t in 0..flat.len() {
                let mut np = net.clone();
                let mut fp = flat.clone();
                fp[t] += h;
                np.unflatten_from(&fp).unwrap();
                let vp = objective(&np, &nodes, &av, &ad);
                fp[t] -= 2.0 * h;
                np.unflatten_from(&fp).unwrap();
                let vm = objective(&np, &nodes, &av, &ad);
                let fd = (vp - vm) / (2.0 * h);
                worst = worst.max((fd - g[t]).abs() / (g[t].abs() + 1e-8));
            }
            assert!(worst <= 1e-5, "{act:?}: worst {worst}");
        }
    }

    #[test]
    fn backprop_linear_in_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = SubnetParams::random(2, 8, 2, Activation::Sin, &mut rng);
        let nodes = [0.0, 0.4, 0.9];
        let av = Array2::from_shape_simple_fn((2, 3), || rng.gen_range(-1.0..1.0));
        let ad = Array2::from_shape_simple_fn((2, 3), || rng.gen_range(-1.0..1.0));
        let g1 = backprop(&net, &nodes, av.view(), ad.view()).unwrap();
        let alpha = -3.25;
        let g2 = backprop(&net, &nodes, (&av * alpha).view(), (&ad * alpha).view()).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((alpha * a - b).abs() <= 1e-13 * b.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = SubnetParams::random(3, 4, 2, Activation::Sin, &mut rng);
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        assert_eq!(flat.len(), net.num_params());
        let mut other = net.clone();
        for l in &mut other.layers {
            l.weight.fill(0.0);
        }
        assert_eq!(other.unflatten_from(&flat).unwrap(), flat.len());
        assert_eq!(other, net);
    }
}
