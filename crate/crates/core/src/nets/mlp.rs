//! Fully connected network with a recorded forward pass and exact
//! reverse-mode gradients.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
    Softsign,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
            Activation::Softsign => z / (1.0 + z.abs()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => -(-y).exp_m1(),
            Activation::Softsign => (1.0 - y.abs()).powi(2),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`, so a batch forward is `X * W + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Layer whose input is the previous activation concatenated with the
    /// network input.
    pub skip: Option<usize>,
}

/// Intermediate values recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Mlp {
    /// Layer `i` maps `widths[i] (+ widths[0] at the skip layer)` to
    /// `widths[i + 1]`. Hidden layers use `hidden`, the last layer `output`.
    /// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        skip: Option<usize>,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let count = widths.len() - 1;
        let layers = (0..count)
            .map(|i| {
                let fan_in = widths[i] + if skip == Some(i) { widths[0] } else { 0 };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_in, widths[i + 1]), |_| {
                    rng.gen_range(-bound..bound)
                });
                let bias = Array1::from_shape_fn(widths[i + 1], |_| rng.gen_range(-bound..bound));
                Dense {
                    weight,
                    bias,
                    activation: if i + 1 == count { output } else { hidden },
                }
            })
            .collect();
        Self { layers, skip }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Parameter tensors in a fixed order: weight then bias, per layer.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (
                        format!("{i}.weight"),
                        l.weight.shape().to_vec(),
                        l.weight.as_slice().expect("standard layout"),
                    ),
                    (
                        format!("{i}.bias"),
                        l.bias.shape().to_vec(),
                        l.bias.as_slice().expect("standard layout"),
                    ),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let inp = if self.skip == Some(i) {
                concatenate(Axis(1), &[h.view(), x.view()]).expect("row counts match")
            } else {
                std::mem::take(&mut h)
            };
            h = Self::affine(layer, &inp);
            inputs.push(inp);
        }
        let trace = MlpTrace {
            inputs,
            output: h.clone(),
        };
        (h, trace)
    }

    /// Forward pass without recording intermediates.
    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            if self.skip == Some(i) {
                h = concatenate(Axis(1), &[h.view(), x.view()]).expect("row counts match");
            }
            h = Self::affine(layer, &h);
        }
        h
    }

    fn affine(layer: &Dense, inp: &Array2<f64>) -> Array2<f64> {
        let mut z = inp.dot(&layer.weight);
        let act = layer.activation;
        Zip::from(z.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row)
                .and(&layer.bias)
                .for_each(|v, b| *v = act.apply(*v + b));
        });
        z
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        grad_out: ArrayView2<f64>,
        grads: &mut MlpGrads,
    ) -> Array2<f64> {
        let count = self.layers.len();
        let in_dim = self.input_dim();
        let mut g = grad_out.to_owned();
        let mut skip_grad: Option<Array2<f64>> = None;
        for i in (0..count).rev() {
            let layer = &self.layers[i];
            let out_dim = layer.output_dim();
            let out = if i + 1 == count {
                trace.output.view()
            } else {
                trace.inputs[i + 1].slice(s![.., ..out_dim])
            };
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut g)
                    .and(&out)
                    .for_each(|gv, &y| *gv *= act.derivative_from_output(y));
            }
            general_mat_mul(1.0, &trace.inputs[i].t(), &g, 1.0, &mut grads.weights[i]);
            grads.biases[i] += &g.sum_axis(Axis(0));
            let gin = g.dot(&layer.weight.t());
            if self.skip == Some(i) {
                let h_dim = gin.ncols() - in_dim;
                skip_grad = Some(gin.slice(s![.., h_dim..]).to_owned());
                g = gin.slice(s![.., ..h_dim]).to_owned();
            } else {
                g = gin;
            }
        }
        if let Some(sg) = skip_grad {
            g += &sg;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(skip: Option<usize>, out: Activation) -> Mlp {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        Mlp::new(&[5, 7, 6, 4], Activation::Relu, out, skip, &mut rng)
    }

    fn input() -> Array2<f64> {
        Array2::from_shape_fn((3, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin())
    }

    fn weighted_sum(y: &Array2<f64>) -> f64 {
        y.indexed_iter()
            .map(|((i, j), v)| v * (1.0 + 0.1 * i as f64 - 0.2 * j as f64))
            .sum()
    }

    fn check_grads(m: &Mlp) {
        let x = input();
        let (y, trace) = m.forward(x.view());
        let gout = Array2::from_shape_fn(y.raw_dim(), |(i, j)| 1.0 + 0.1 * i as f64 - 0.2 * j as f64);
        let mut grads = m.zero_grads();
        let gin = m.backward(&trace, gout.view(), &mut grads);
        let h = 1e-6;
        let tol = |a: f64, b: f64| (a - b).abs() <= (1e-6f64).max(1e-4 * a.abs().max(b.abs()));
        for li in 0..m.layers.len() {
            for idx in [(0, 0), (1, 2), (2, 3)] {
                let mut p = m.clone();
                p.layers[li].weight[idx] += h;
                let mut q = m.clone();
                q.layers[li].weight[idx] -= h;
                let fd = (weighted_sum(&p.infer(x.view())) - weighted_sum(&q.infer(x.view()))) / (2.0 * h);
                assert!(tol(fd, grads.weights[li][idx]), "layer {li} {idx:?}: {fd} vs {}", grads.weights[li][idx]);
            }
        }
        for r in 0..3 {
            for c in 0..5 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (weighted_sum(&m.infer(xp.view())) - weighted_sum(&m.infer(xm.view()))) / (2.0 * h);
                assert!(tol(fd, gin[[r, c]]), "input {r},{c}: {fd} vs {}", gin[[r, c]]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Softplus,
            Activation::Softsign,
        ] {
            check_grads(&net(None, act));
            check_grads(&net(Some(2), act));
        }
    }

    #[test]
    fn forward_and_infer_agree() {
        let m = net(Some(1), Activation::Sigmoid);
        let x = input();
        assert_eq!(m.forward(x.view()).0, m.infer(x.view()));
    }

    #[test]
    fn skip_layer_widens_input() {
        let m = net(Some(2), Activation::Identity);
        assert_eq!(m.layers[2].input_dim(), 6 + 5);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = net(Some(1), Activation::Softplus);
        let (y, trace) = m.forward(input().view());
        let mut grads = m.zero_grads();
        let gin = m.backward(&trace, Array2::zeros(y.raw_dim()).view(), &mut grads);
        assert_eq!(grads, m.zero_grads());
        assert!(gin.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn activation_ranges() {
        for z in [-50.0, -3.0, 0.0, 2.0, 40.0] {
            assert!(Activation::Softplus.apply(z) >= 0.0);
            let s = Activation::Sigmoid.apply(z);
            assert!((0.0..=1.0).contains(&s));
            assert!(Activation::Softsign.apply(z).abs() < 1.0);
        }
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
