//! A small fully connected network with hand-written backpropagation.
//!
//! Layers are dense with `tanh` between them and a linear output. Parameters
//! live in one flat vector, layer by layer, each layer as its weight matrix
//! (row-major, `out × in`) followed by its bias.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::io::{read_field, write_field};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"ANYNET01";

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetwork {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[k]` the output of layer `k`.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

/// Activations of a batched forward pass, each layer stored row by row.
#[derive(Debug, Clone)]
pub struct BatchCache {
    rows: usize,
    activations: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `rows × output_dim` network outputs.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

/// `C ← A B + β C` for an `m × k` by `k × n` product; each operand is given
/// with its row and column strides, and `C` is dense row-major.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], isize, isize),
    (b, rsb, csb): (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows.max(1) - 1) as isize * rs + (cols.max(1) - 1) as isize * cs + 1
    };
    assert!(a.len() as isize >= extent(m, k, rsa, csa));
    assert!(b.len() as isize >= extent(k, n, rsb, csb));
    assert_eq!(c.len(), m * n);
    // SAFETY: the assertions above keep every strided access in bounds, and
    // `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn param_count_for(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl TinyNetwork {
    /// Default architecture for data of `d` entries: `[d + 1, 64, 64, d]`.
    pub fn default_widths(d: usize) -> Vec<usize> {
        vec![d + 1, 64, 64, d]
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn new(widths: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least two positive widths, got {widths:?}"
            )));
        }
        let mut params = Vec::with_capacity(param_count_for(&widths));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.normal() * scale);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { widths, params })
    }

    pub fn from_params(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad widths {widths:?}")));
        }
        let n = param_count_for(&widths);
        if params.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![params.len()],
            });
        }
        Ok(Self { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input_dim()],
                actual: vec![input.len()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let layers = self.widths.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (k, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let a = &activations[k];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + bias[o]
                })
                .collect();
            if k + 1 < layers {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
            offset += n_in * n_out + n_out;
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output`, and returns `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(grad_out.len(), self.output_dim());
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        // delta holds ∂L/∂z for the current layer's pre-activation.
        let mut delta = grad_out.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let off = offsets[k];
            let a_in = &cache.activations[k];
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(a_in) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            if k > 0 {
                // a_in = tanh(z), so ∂a/∂z = 1 − a².
                for (b, a) in back.iter_mut().zip(a_in) {
                    *b *= 1.0 - a * a;
                }
            }
            delta = back;
        }
        delta
    }

    /// Forward pass over `rows` samples stored row by row in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Result<BatchCache> {
        let n0 = self.input_dim();
        if inputs.len() != rows * n0 {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, n0],
                actual: vec![inputs.len()],
            });
        }
        let layers = self.widths.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(inputs.to_vec());
        let mut offset = 0;
        for (k, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut z: Vec<f64> = bias.iter().copied().cycle().take(rows * n_out).collect();
            // Z = A Wᵀ + 1 bᵀ
            gemm(
                (rows, n_in, n_out),
                (&activations[k], n_in as isize, 1),
                (weights, 1, n_in as isize),
                1.0,
                &mut z,
            );
            if k + 1 < layers {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activations.push(z);
            offset += n_in * n_out + n_out;
        }
        Ok(BatchCache { rows, activations })
    }

    /// Batched [`backward`](Self::backward): accumulates `∂L/∂θ` summed over
    /// the rows of `grad_out`.
    pub fn backward_batch(&self, cache: &BatchCache, grad_out: &[f64], grad: &mut [f64]) {
        let rows = cache.rows;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(grad_out.len(), rows * self.output_dim());
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let off = offsets[k];
            let a_in = &cache.activations[k];
            // ∂L/∂W += Δᵀ A
            gemm(
                (n_out, rows, n_in),
                (&delta, 1, n_out as isize),
                (a_in, n_in as isize, 1),
                1.0,
                &mut grad[off..off + n_in * n_out],
            );
            let gb = &mut grad[off + n_in * n_out..off + n_in * n_out + n_out];
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&delta[r * n_out..(r + 1) * n_out]) {
                    *g += d;
                }
            }
            if k == 0 {
                break;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut back = vec![0.0; rows * n_in];
            gemm(
                (rows, n_out, n_in),
                (&delta, n_out as isize, 1),
                (weights, n_in as isize, 1),
                0.0,
                &mut back,
            );
            for (b, a) in back.iter_mut().zip(a_in) {
                *b *= 1.0 - a * a;
            }
            delta = back;
        }
    }

    /// Header `ANYNET01`, `u64` layer count, `u64` widths, then the parameters
    /// as a 1-D field.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.widths.len() as u64).to_le_bytes())?;
        for &n in &self.widths {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        write_field(w, &Field::from_vec(self.params.clone()))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            widths.push(u64::from_le_bytes(buf) as usize);
        }
        let params = read_field(r)?;
        Self::from_params(widths, params.into_data())
    }
}
