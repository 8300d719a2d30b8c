//! Fine-tuning after the main run: binarization, block-error objectives
//! and adaptation to other channels.

use serde::{Deserialize, Serialize};

use super::{alternate, base_spec, decoder_steps, LossTrace, Phase, TrainPlan, Trainer};
use crate::codec::{LossKind, NeuralCode, StepSpec};
use crate::error::Result;

/// Continues alternating training with the sign applied to the encoder
/// output (straight-through gradient). Afterwards the code transmits
/// `+-1` symbols only.
pub fn finetune_ste(code: &mut NeuralCode, plan: &TrainPlan, trace: &mut LossTrace) -> Result<()> {
    plan.validate()?;
    code.binary = true;
    alternate(code, plan, true, trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlerObjective {
    /// `1 - prod_i sigmoid(a_i L_i)` at `snr_dec`.
    Product,
    /// BCE with a larger batch, a higher SNR and a smaller step size; see
    /// [`TrainPlan::high_snr`].
    HighSnr,
}

impl TrainPlan {
    /// Large-batch high-SNR recipe (batch 200000 at -1 dB, lr 1e-5 for the
    /// full-scale plan) scaled by this plan's batch and step size.
    pub fn high_snr(&self) -> TrainPlan {
        TrainPlan {
            batch_size: self.batch_size * 10,
            grad_accum: self.grad_accum * 10,
            snr_dec: -1.0,
            lr_dec: self.lr_dec * 0.1,
            ..self.clone()
        }
    }
}

/// Decoder-only fine-tuning for `steps` steps toward lower block error.
pub fn finetune_bler(
    code: &mut NeuralCode,
    plan: &TrainPlan,
    objective: BlerObjective,
    steps: usize,
    trace: &mut LossTrace,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    match objective {
        BlerObjective::Product => {
            let spec = StepSpec {
                loss: LossKind::BlerProduct,
                ..base_spec(plan)
            };
            decoder_steps(code, plan, steps, spec, plan.snr_dec, trace)
        }
        BlerObjective::HighSnr => {
            let p = plan.high_snr();
            decoder_steps(code, &p, steps, base_spec(&p), p.snr_dec, trace)
        }
    }
}

/// Fine-tunes on `plan.channel` at `snr_dec`: the decoder alone, or the
/// encoder and decoder jointly in every step.
pub fn adapt_to_channel(
    code: &mut NeuralCode,
    plan: &TrainPlan,
    joint: bool,
    steps: usize,
    trace: &mut LossTrace,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    if !joint {
        return decoder_steps(code, plan, steps, base_spec(plan), plan.snr_dec, trace);
    }
    plan.validate()?;
    let spec = StepSpec {
        train_encoder: true,
        train_decoder: true,
        ..base_spec(plan)
    };
    let mut t = Trainer::new(code, plan, trace);
    for _ in 0..steps {
        t.step(
            &spec,
            &plan.channel,
            plan.snr_dec,
            (plan.lr_enc, plan.lr_dec),
            Phase::Joint,
        )?;
    }
    Ok(())
}
