use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Frequency encoding `[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]`,
/// each block applied component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncoder {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl PositionalEncoder {
    pub fn new(num_frequencies: usize, include_input: bool) -> Self {
        Self {
            num_frequencies,
            include_input,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_frequencies + usize::from(self.include_input))
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim(x.len())];
        self.encode_into(x, &mut out);
        out
    }

    fn encode_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut off = 0;
        if self.include_input {
            out[..d].copy_from_slice(x);
            off = d;
        }
        for k in 0..self.num_frequencies {
            let freq = (1u64 << k) as f64 * PI;
            for (i, xi) in x.iter().enumerate() {
                let (s, c) = (freq * xi).sin_cos();
                out[off + i] = s;
                out[off + d + i] = c;
            }
            off += 2 * d;
        }
    }

    pub fn encode_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let d = x.ncols();
        let mut out = Array2::zeros((x.nrows(), self.output_dim(d)));
        let mut buf = vec![0.0; d];
        for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            buf.iter_mut().zip(row.iter()).for_each(|(b, r)| *b = *r);
            self.encode_into(&buf, o.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Gradient with respect to the raw input rows, given the gradient at the
    /// encoded output.
    pub fn backward_rows(&self, x: ArrayView2<f64>, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let d = x.ncols();
        let mut g = Array2::zeros((x.nrows(), d));
        for ((row, go), mut gi) in x.rows().into_iter().zip(grad_out.rows()).zip(g.rows_mut()) {
            let mut off = 0;
            if self.include_input {
                for i in 0..d {
                    gi[i] += go[i];
                }
                off = d;
            }
            for k in 0..self.num_frequencies {
                let freq = (1u64 << k) as f64 * PI;
                for i in 0..d {
                    let (s, c) = (freq * row[i]).sin_cos();
                    gi[i] += freq * (c * go[off + i] - s * go[off + d + i]);
                }
                off += 2 * d;
            }
        }
        g
    }
}
