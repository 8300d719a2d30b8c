//! DeepPolar codec: neural Plotkin-tree encoder, sequential and one-shot
//! leaf decoders, and checkpoints.

mod checkpoint;
mod code;
mod graph;
mod tree;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint, FORMAT_VERSION};
pub use code::{Architecture, NetId, NeuralCode, NormMode, PowerNormStats};
pub use graph::CodeGrads;
pub use tree::{embed_batch, embed_message, Feedback};

use crate::bits::Bits;
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, bler_product_loss, Mat};
use graph::Graph;

/// Decoder logits (`log P(1) / P(0)`) and hard decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub logits: Mat,
    pub bits: Bits,
}

impl DecodeOutput {
    fn from_logits(logits: Mat) -> Self {
        let data = logits.data().iter().map(|&l| u8::from(l > 0.0)).collect();
        let bits = Bits::from_vec(logits.rows(), logits.cols(), data).expect("shape");
        Self { logits, bits }
    }
}

/// Encodes a batch of messages. In training mode with running statistics
/// the current batch statistics are used instead.
pub fn dp_encode(code: &NeuralCode, u: &Bits, training: bool) -> Result<Mat> {
    Ok(dp_encode_with_stats(code, u, training)?.0)
}

/// Like [`dp_encode`], also returning the batch `(mean, var)` when batch
/// normalization ran.
pub fn dp_encode_with_stats(code: &NeuralCode, u: &Bits, training: bool) -> Result<(Mat, Option<(f64, f64)>)> {
    let mut g = Graph::new(code, false, false);
    let (x, st) = g.encode(u, code.norm.effective_mode(training), false)?;
    Ok((g.take_value(x), st))
}

/// Encoder output mapped through the straight-through sign. Per-codeword
/// normalization is skipped since the sign discards scale.
pub fn dp_binarize_forward(code: &NeuralCode, u: &Bits, training: bool) -> Result<Mat> {
    let mut g = Graph::new(code, false, false);
    let (x, _) = g.encode(u, code.norm.effective_mode(training), true)?;
    Ok(g.take_value(x))
}

/// Encoder used at evaluation time: binarized codes go through the sign.
pub fn dp_encode_eval(code: &NeuralCode, u: &Bits) -> Result<Mat> {
    if code.binary {
        dp_binarize_forward(code, u, false)
    } else {
        dp_encode(code, u, false)
    }
}

fn decode(code: &NeuralCode, y: &Mat, fb: Feedback, parallel: bool) -> Result<DecodeOutput> {
    let mut g = Graph::new(code, false, false);
    let y = g.leaf(y.clone());
    let l = g.decode(y, fb, parallel)?;
    Ok(DecodeOutput::from_logits(g.take_value(l)))
}

/// Sequential (successive-cancellation style) neural decoding.
pub fn dp_decode_sc(code: &NeuralCode, y: &Mat, fb: Feedback) -> Result<DecodeOutput> {
    decode(code, y, fb, false)
}

/// Decoding with one-shot leaf networks.
pub fn dp_decode_parallel(code: &NeuralCode, y: &Mat, fb: Feedback) -> Result<DecodeOutput> {
    decode(code, y, fb, true)
}

/// Every network call made while decoding `y`, as `(network, input width)`.
pub fn decoder_call_audit(code: &NeuralCode, y: &Mat, fb: Feedback, parallel: bool) -> Result<Vec<(NetId, usize)>> {
    let mut g = Graph::new(code, false, false);
    g.enable_audit();
    let y = g.leaf(y.clone());
    g.decode(y, fb, parallel)?;
    Ok(g.take_audit().into_iter().filter(|(id, _)| !id.is_encoder()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Bce,
    /// `1 - prod_i sigmoid(a_i L_i)`
    BlerProduct,
}

/// What one training step differentiates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSpec {
    pub train_encoder: bool,
    pub train_decoder: bool,
    pub binarize: bool,
    pub feedback: Feedback,
    pub parallel: bool,
    pub loss: LossKind,
}

impl Default for StepSpec {
    fn default() -> Self {
        Self {
            train_encoder: false,
            train_decoder: true,
            binarize: false,
            feedback: Feedback::Soft,
            parallel: false,
            loss: LossKind::Bce,
        }
    }
}

#[derive(Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub grads: CodeGrads,
    pub batch_stats: Option<(f64, f64)>,
}

/// Loss of the end-to-end chain encoder, channel, decoder on messages `u`
/// and its gradient with respect to the trainable networks.
pub fn loss_and_grads<R: Rng + ?Sized>(
    code: &NeuralCode,
    spec: &StepSpec,
    u: &Bits,
    channel: &ChannelSpec,
    rng: &mut R,
) -> Result<StepOutcome> {
    channel.validate()?;
    let mut g = Graph::new(code, spec.train_encoder, spec.train_decoder);
    let (x, batch_stats) = g.encode(u, code.norm.effective_mode(true), spec.binarize || code.binary)?;
    let draw = channel.draw(u.rows(), code.n(), rng);
    let y = g.channel(x, draw.gain, &draw.noise);
    let logits = g.decode(y, spec.feedback, spec.parallel)?;
    let (loss, grad) = match spec.loss {
        LossKind::Bce => bce_with_logits(g.value(logits), u.data())?,
        LossKind::BlerProduct => bler_product_loss(g.value(logits), u.data())?,
    };
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let grads = g.backward(logits, grad)?;
    Ok(StepOutcome {
        loss,
        grads,
        batch_stats,
    })
}

/// Estimates running normalization statistics from `batches` batches of
/// random messages.
pub fn calibrate_norm<R: Rng + ?Sized>(code: &mut NeuralCode, batch: usize, batches: usize, rng: &mut R) -> Result<()> {
    if code.norm.mode == NormMode::PerCodeword {
        return Ok(());
    }
    let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
    for _ in 0..batches {
        let u = Bits::random(batch, code.k(), rng);
        let mut g = Graph::new(code, false, false);
        let src = g.leaf(embed_batch(code.layout(), &u)?);
        let root = *code.layout().root();
        let raw = g.encode_subtree(&root, (src, 0))?;
        for &v in g.value(raw).data() {
            sum += v;
            sum_sq += v * v;
        }
        count += g.value(raw).data().len();
    }
    let mean = sum / count as f64;
    let var = sum_sq / count as f64 - mean * mean;
    if !(var > code::VAR_FLOOR) {
        return Err(Error::Numeric(format!("encoder output variance {var:e} too small")));
    }
    code.norm.mean = mean;
    code.norm.var = var;
    Ok(())
}
