use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm_nn, gemm_nt, gemm_tn, Mat};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: &mut [f64]) {
        if self == Activation::Relu {
            for x in v {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }
}

/// Fully connected network with a fixed layer structure.
///
/// Parameters live in one flat buffer: for each layer the weight matrix
/// (`fan_out x fan_in`, row-major) followed by the bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Activations recorded by one taped forward pass.
///
/// A tape is moved into [`DenseNet::backward`], so it can be consumed once.
#[derive(Debug)]
pub struct Tape {
    widths: Vec<usize>,
    rows: usize,
    /// Input to every layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Vec<f64>>,
    /// Output of the final layer, needed for an output rectifier mask.
    output: Option<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Option<Mat>,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Network with all parameters zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self {
            widths: widths.to_vec(),
            hidden: Activation::Relu,
            output: Activation::Linear,
            params: vec![0.0; param_count(widths)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut off = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_parts(widths: Vec<usize>, hidden: Activation, output: Activation, params: Vec<f64>) -> Result<Self> {
        let net = Self {
            params: vec![0.0; param_count(&widths)],
            ..Self::zeros(&widths)?
        };
        if params.len() != net.params.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match widths {widths:?}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self {
            hidden,
            output,
            params,
            ..net
        })
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden = hidden;
        self.output = output;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn fan_in(&self) -> usize {
        self.widths[0]
    }

    pub fn fan_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weight, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        (
            &self.params[off..off + fi * fo],
            &self.params[off + fi * fo..off + fi * fo + fo],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let (w, rest) = self.params[off..].split_at_mut(fi * fo);
        (w, &mut rest[..fo])
    }

    fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.widths[..=l])
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, input: &Mat) -> Result<()> {
        if input.cols() != self.fan_in() {
            return Err(Error::Config(format!(
                "input width {} does not match network fan-in {}",
                input.cols(),
                self.fan_in()
            )));
        }
        if !input.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &[f64], rows: usize) -> Vec<f64> {
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let (w, b) = self.layer(l);
        let mut y = Vec::with_capacity(rows * fo);
        for _ in 0..rows {
            y.extend_from_slice(b);
        }
        gemm_nt(rows, fi, fo, x, w, 1.0, &mut y);
        self.activation(l).apply(&mut y);
        y
    }

    /// Evaluates the network on a batch (one sample per row).
    pub fn forward(&self, input: &Mat) -> Result<Mat> {
        self.check_input(input)?;
        let rows = input.rows();
        let mut x = self.layer_forward(0, input.data(), rows);
        for l in 1..self.num_layers() {
            x = self.layer_forward(l, &x, rows);
        }
        Mat::from_vec(rows, self.fan_out(), x)
    }

    /// Forward pass that also records what [`DenseNet::backward`] needs.
    pub fn forward_taped(&self, input: &Mat) -> Result<(Mat, Tape)> {
        self.check_input(input)?;
        let rows = input.rows();
        let mut layer_inputs = Vec::with_capacity(self.num_layers());
        let mut x = input.data().to_vec();
        for l in 0..self.num_layers() {
            let y = self.layer_forward(l, &x, rows);
            layer_inputs.push(std::mem::replace(&mut x, y));
        }
        let output = (self.output == Activation::Relu).then(|| x.clone());
        let tape = Tape {
            widths: self.widths.clone(),
            rows,
            layer_inputs,
            output,
        };
        Ok((Mat::from_vec(rows, self.fan_out(), x)?, tape))
    }

    /// Reverse-mode pass. Returns parameter gradients (summed over the batch)
    /// and, when requested, the gradient with respect to the input.
    pub fn backward(&self, tape: Tape, output_grad: &Mat, want_input: bool) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(tape, output_grad, Some(&mut params), want_input)?;
        Ok(Gradients { params, input })
    }

    /// Like [`DenseNet::backward`] but accumulates parameter gradients into
    /// `param_grad` (when given) instead of allocating.
    pub fn backward_into(
        &self,
        tape: Tape,
        output_grad: &Mat,
        mut param_grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Result<Option<Mat>> {
        if tape.widths != self.widths {
            return Err(Error::Usage("tape was recorded by a different network".into()));
        }
        if output_grad.rows() != tape.rows || output_grad.cols() != self.fan_out() {
            return Err(Error::Usage(format!(
                "output gradient is {}x{}, tape expects {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                tape.rows,
                self.fan_out()
            )));
        }
        if let Some(g) = param_grad.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::Usage("parameter gradient buffer has wrong length".into()));
            }
        }
        let rows = tape.rows;
        let Tape {
            mut layer_inputs,
            output,
            ..
        } = tape;

        let mut delta = output_grad.data().to_vec();
        if let Some(out) = output {
            mask_relu(&mut delta, &out);
        }
        for l in (0..self.num_layers()).rev() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let x = layer_inputs.pop().expect("one input per layer");
            if let Some(g) = param_grad.as_deref_mut() {
                let off = self.layer_offset(l);
                let (gw, gb) = g[off..off + fi * fo + fo].split_at_mut(fi * fo);
                gemm_tn(fo, rows, fi, &delta, &x, 1.0, gw);
                for r in 0..rows {
                    for (b, d) in gb.iter_mut().zip(&delta[r * fo..(r + 1) * fo]) {
                        *b += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return Ok(None);
            }
            let (w, _) = self.layer(l);
            let mut dx = vec![0.0; rows * fi];
            gemm_nn(rows, fo, fi, &delta, w, 0.0, &mut dx);
            if l > 0 && self.hidden == Activation::Relu {
                mask_relu(&mut dx, &x);
            }
            delta = dx;
        }
        Ok(Some(Mat::from_vec(rows, self.fan_in(), delta)?))
    }
}

#[inline]
fn mask_relu(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_output() {
        let net = DenseNet::zeros(&[3, 5, 2]).unwrap();
        let x = Mat::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer() {
        let net = DenseNet::from_parts(
            vec![2, 2],
            Activation::Relu,
            Activation::Linear,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        let y = net.forward(&Mat::from_rows(&[vec![1.5, -2.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.5, -2.0]);
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::init(&[4, 16, 16, 3], &mut rng).unwrap();
        let x = Mat::from_vec(2, 4, vec![0.1, -0.4, 2.0, 1.0, -1.0, 0.0, 0.3, 0.7]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let (y, _) = net.forward_taped(&x).unwrap();
        assert_eq!(y, net.forward(&x).unwrap());
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let net = DenseNet::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&Mat::zeros(1, 4)), Err(Error::Config(_))));
        let bad = Mat::from_vec(1, 3, vec![0.0, f64::NAN, 1.0]).unwrap();
        assert!(matches!(net.forward(&bad), Err(Error::Numeric(_))));
        assert!(DenseNet::zeros(&[3]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::init(&[3, 8, 2], &mut rng).unwrap();
        let x = Mat::from_vec(2, 3, vec![0.2, 0.1, -0.3, 1.0, 2.0, -1.0]).unwrap();
        let (_, tape) = net.forward_taped(&x).unwrap();
        let g = net.backward(tape, &Mat::zeros(2, 2), true).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_closed_form() {
        // y = W x + b with W = [[1,2],[3,4],[5,6]], b = [0.5,-0.5,1]
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![0.5, -0.5, 1.0];
        let net = DenseNet::from_parts(
            vec![2, 3],
            Activation::Relu,
            Activation::Linear,
            [w.clone(), b].concat(),
        )
        .unwrap();
        let x = Mat::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let g = Mat::from_rows(&[vec![1.0, 0.0, -1.0], vec![0.5, 2.0, 1.0]]).unwrap();
        let (_, tape) = net.forward_taped(&x).unwrap();
        let grads = net.backward(tape, &g, true).unwrap();
        // dW = G^T X summed over batch, db = column sums of G, dX = G W.
        let mut dw = [0.0; 6];
        for r in 0..2 {
            for o in 0..3 {
                for i in 0..2 {
                    dw[o * 2 + i] += g.get(r, o) * x.get(r, i);
                }
            }
        }
        assert_eq!(&grads.params[..6], &dw[..]);
        assert_eq!(&grads.params[6..], &[1.5, 2.0, 0.0]);
        let dx = grads.input.unwrap();
        for r in 0..2 {
            for i in 0..2 {
                let want: f64 = (0..3).map(|o| g.get(r, o) * w[o * 2 + i]).sum();
                assert!((dx.get(r, i) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DenseNet::init(&[3, 4, 2], &mut rng).unwrap();
        let b = DenseNet::init(&[3, 5, 2], &mut rng).unwrap();
        let x = Mat::zeros(2, 3);
        let (_, tape) = a.forward_taped(&x).unwrap();
        assert!(matches!(
            b.backward(tape, &Mat::zeros(2, 2), false),
            Err(Error::Usage(_))
        ));
        let (_, tape) = a.forward_taped(&x).unwrap();
        assert!(matches!(
            a.backward(tape, &Mat::zeros(3, 2), false),
            Err(Error::Usage(_))
        ));
    }
}
