//! Alternating encoder/decoder training, the kernel curriculum and the
//! fine-tuning procedures.

mod curriculum;
mod finetune;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use curriculum::{
    curriculum_stage1, curriculum_stage2_init, node_counts, stage1_code, CurriculumPlan, InitRecord, KernelStore,
    PretrainedKernel,
};
pub use finetune::{adapt_to_channel, finetune_bler, finetune_ste, BlerObjective};

use crate::bits::Bits;
use crate::channel::ChannelModel;
use crate::codec::{loss_and_grads, CodeGrads, Feedback, LossKind, NetId, NeuralCode, NormMode, StepSpec};
use crate::error::{Error, Result};
use crate::nn::AdamState;
use crate::rng::{stream_rng, streams};

/// Hyperparameters of one alternating-optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub batch_size: usize,
    pub epochs: usize,
    /// Decoder steps per epoch.
    pub dec_steps: usize,
    /// Encoder steps per epoch.
    pub enc_steps: usize,
    pub snr_enc: f64,
    pub snr_dec: f64,
    pub lr_enc: f64,
    pub lr_dec: f64,
    pub channel: ChannelModel,
    pub seed: u64,
    /// Sub-batches per optimizer step; gradients are averaged.
    pub grad_accum: usize,
    pub feedback: Feedback,
    /// Train the one-shot leaf decoders instead of the sequential ones.
    pub parallel: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl TrainPlan {
    /// Full-scale hyperparameters.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 20_000,
            epochs: 2000,
            dec_steps: 200,
            enc_steps: 20,
            snr_enc: 0.0,
            snr_dec: -2.0,
            lr_enc: 1e-4,
            lr_dec: 1e-4,
            channel: ChannelModel::Awgn,
            seed: 0,
            grad_accum: 1,
            feedback: Feedback::Soft,
            parallel: false,
        }
    }

    /// Budget that fits a single CPU core for codes up to n = 16.
    pub fn desk() -> Self {
        Self {
            batch_size: 512,
            epochs: 150,
            dec_steps: 100,
            enc_steps: 10,
            lr_enc: 1e-3,
            lr_dec: 1e-3,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.dec_steps == 0 || self.enc_steps == 0 {
            return Err(Error::Config(
                "batch_size, epochs, dec_steps and enc_steps must be positive".into(),
            ));
        }
        if self.grad_accum == 0 || !self.batch_size.is_multiple_of(self.grad_accum) {
            return Err(Error::Config(format!(
                "grad_accum {} must divide batch_size {}",
                self.grad_accum, self.batch_size
            )));
        }
        for (name, lr) in [("lr_enc", self.lr_enc), ("lr_dec", self.lr_dec)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.snr_enc.is_finite() && self.snr_dec.is_finite()) {
            return Err(Error::Config("SNRs must be finite".into()));
        }
        Ok(())
    }

    /// Total optimizer steps.
    pub fn total_steps(&self) -> usize {
        self.epochs * (self.dec_steps + self.enc_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Decoder,
    Encoder,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Decoder => "decoder",
            Phase::Encoder => "encoder",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
}

/// Per-step losses and any warnings raised during training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

impl LossTrace {
    /// CSV with header `step,phase,loss`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.step, r.phase.as_str(), r.loss);
        }
        s
    }

    /// Mean loss over the last `window` records of `phase`.
    pub fn tail_mean(&self, phase: Phase, window: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.loss)
            .collect();
        if v.is_empty() {
            return None;
        }
        let tail = &v[v.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Moving average of `phase` losses with the given window.
    pub fn smoothed(&self, phase: Phase, window: usize) -> Vec<(usize, f64)> {
        let pts: Vec<(usize, f64)> = self
            .records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| (r.step, r.loss))
            .collect();
        let mut out = Vec::with_capacity(pts.len());
        let mut sum = 0.0;
        for i in 0..pts.len() {
            sum += pts[i].1;
            if i >= window {
                sum -= pts[i - window].1;
            }
            let w = (i + 1).min(window);
            out.push((pts[i].0, sum / w as f64));
        }
        out
    }
}

/// Steps below this gradient norm count toward a stall.
const STALL_GRAD: f64 = 1e-12;
const STALL_STEPS: usize = 100;

/// Shared optimizer loop: owns Adam states and the global step counter.
pub(crate) struct Trainer<'a> {
    code: &'a mut NeuralCode,
    seed: u64,
    batch: usize,
    accum: usize,
    step: usize,
    adam: BTreeMap<NetId, AdamState>,
    trace: &'a mut LossTrace,
    stall: usize,
    stall_warned: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(code: &'a mut NeuralCode, plan: &TrainPlan, trace: &'a mut LossTrace) -> Self {
        let step = trace.records.last().map_or(0, |r| r.step + 1);
        Self {
            code,
            seed: plan.seed,
            batch: plan.batch_size,
            accum: plan.grad_accum,
            step,
            adam: BTreeMap::new(),
            trace,
            stall: 0,
            stall_warned: false,
        }
    }

    fn diverged(&self, phase: Phase, msg: String) -> Error {
        Error::Diverged {
            step: self.step,
            phase: phase.as_str(),
            msg,
        }
    }

    /// One optimizer step. Parameters and statistics change only when the
    /// loss and every gradient are finite.
    pub fn step(
        &mut self,
        spec: &StepSpec,
        channel: &ChannelModel,
        snr_db: f64,
        lr: (f64, f64),
        phase: Phase,
    ) -> Result<f64> {
        let sub = self.batch / self.accum;
        let spec_ch = channel.at_snr_db(snr_db);
        let mut total = CodeGrads::new();
        let mut loss = 0.0;
        let mut stats = (0.0, 0.0, 0usize);
        for a in 0..self.accum {
            let index = (self.step * self.accum + a) as u64;
            let u = Bits::random(sub, self.code.k(), &mut stream_rng(self.seed, streams::MESSAGES, index));
            let mut noise = stream_rng(self.seed, streams::NOISE, index);
            let out = match loss_and_grads(self.code, spec, &u, &spec_ch, &mut noise) {
                Ok(o) => o,
                Err(Error::Numeric(m)) => return Err(self.diverged(phase, m)),
                Err(e) => return Err(e),
            };
            loss += out.loss;
            if let Some((m, v)) = out.batch_stats {
                stats = (stats.0 + m, stats.1 + v, stats.2 + 1);
            }
            for (id, g) in out.grads {
                match total.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        total.insert(id, g);
                    }
                }
            }
        }
        let scale = 1.0 / self.accum as f64;
        loss *= scale;
        let mut norm_sq = 0.0;
        for g in total.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
                norm_sq += *v * *v;
            }
        }
        if !loss.is_finite() || !norm_sq.is_finite() {
            return Err(self.diverged(phase, format!("loss {loss}, gradient norm^2 {norm_sq}")));
        }
        for (id, g) in &total {
            let lr = if id.is_encoder() { lr.0 } else { lr.1 };
            let net = self.code.net_mut(*id).expect("gradient for existing net");
            let st = self.adam.entry(*id).or_insert_with(|| AdamState::new(g.len(), lr));
            st.lr = lr;
            st.step(net.params_mut(), g)?;
        }
        if stats.2 > 0 && self.code.norm.mode != NormMode::PerCodeword {
            let n = stats.2 as f64;
            self.code.norm.update((stats.0 / n, stats.1 / n));
        }
        if norm_sq.sqrt() < STALL_GRAD {
            self.stall += 1;
            if self.stall >= STALL_STEPS && !self.stall_warned {
                let msg = format!(
                    "gradient norm below {STALL_GRAD:e} for {STALL_STEPS} consecutive steps (step {})",
                    self.step
                );
                log::warn!("{msg}");
                self.trace.warnings.push(msg);
                self.stall_warned = true;
            }
        } else {
            self.stall = 0;
        }
        self.trace.records.push(LossRecord {
            step: self.step,
            phase,
            loss,
        });
        self.step += 1;
        Ok(loss)
    }
}

pub(crate) fn base_spec(plan: &TrainPlan) -> StepSpec {
    StepSpec {
        feedback: plan.feedback,
        parallel: plan.parallel,
        loss: LossKind::Bce,
        ..StepSpec::default()
    }
}

pub(crate) fn alternate(code: &mut NeuralCode, plan: &TrainPlan, binarize: bool, trace: &mut LossTrace) -> Result<()> {
    plan.validate()?;
    let base = StepSpec {
        binarize,
        ..base_spec(plan)
    };
    let dec = StepSpec {
        train_encoder: false,
        train_decoder: true,
        ..base
    };
    let enc = StepSpec {
        train_encoder: true,
        train_decoder: false,
        ..base
    };
    let lr = (plan.lr_enc, plan.lr_dec);
    let mut t = Trainer::new(code, plan, trace);
    for epoch in 0..plan.epochs {
        for _ in 0..plan.dec_steps {
            t.step(&dec, &plan.channel, plan.snr_dec, lr, Phase::Decoder)?;
        }
        for _ in 0..plan.enc_steps {
            t.step(&enc, &plan.channel, plan.snr_enc, lr, Phase::Encoder)?;
        }
        if log::log_enabled!(log::Level::Debug) {
            log::debug!(
                "epoch {epoch}: decoder loss {:.4}, encoder loss {:.4}",
                t.trace.tail_mean(Phase::Decoder, plan.dec_steps).unwrap_or(f64::NAN),
                t.trace.tail_mean(Phase::Encoder, plan.enc_steps).unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

/// Alternating optimization: per epoch `dec_steps` decoder-only steps at
/// `snr_dec`, then `enc_steps` encoder-only steps at `snr_enc`. Every step
/// draws fresh messages and noise.
///
/// On divergence the code keeps its last finite parameters and the error
/// reports the step; `trace` holds every completed step either way.
pub fn train_alternating(code: &mut NeuralCode, plan: &TrainPlan, trace: &mut LossTrace) -> Result<()> {
    alternate(code, plan, false, trace)
}

/// Trains only the decoder, `epochs * dec_steps` steps at `snr_dec`, e.g.
/// against a fixed classical encoder.
pub fn train_decoder_only(code: &mut NeuralCode, plan: &TrainPlan, trace: &mut LossTrace) -> Result<()> {
    decoder_steps(
        code,
        plan,
        plan.epochs * plan.dec_steps,
        base_spec(plan),
        plan.snr_dec,
        trace,
    )
}

pub(crate) fn decoder_steps(
    code: &mut NeuralCode,
    plan: &TrainPlan,
    steps: usize,
    spec: StepSpec,
    snr: f64,
    trace: &mut LossTrace,
) -> Result<()> {
    plan.validate()?;
    let spec = StepSpec {
        train_encoder: false,
        train_decoder: true,
        ..spec
    };
    let mut t = Trainer::new(code, plan, trace);
    for _ in 0..steps {
        t.step(&spec, &plan.channel, snr, (plan.lr_enc, plan.lr_dec), Phase::Decoder)?;
    }
    Ok(())
}
