//! Flat run configuration: a TOML file merged with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use deeppolar::channel::ChannelModel;
use deeppolar::codec::{Architecture, Feedback, NormMode, PowerNormStats};
use deeppolar::eval::EvalSpec;
use deeppolar::polar::{construct_reliability, CodeLayout, ReliabilityOrder};
use deeppolar::train::{CurriculumPlan, TrainPlan};
use deeppolar::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Bhattacharyya,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Awgn,
    RayleighFast,
    Bursty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Alternating training from a fresh (or loaded) code.
    Direct,
    /// Single-kernel curriculum only; writes the kernel store.
    Stage1,
    /// Initialize from `kernel_store`, then train.
    Stage2,
    /// Stage 1 followed by stage 2.
    Curriculum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Ste,
    Bler,
    Highsnr,
    Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCodec {
    Deeppolar,
    PolarSc,
    PolarScMinsum,
    PolarMl,
    Uncoded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Distance,
    FirstErrors,
}

/// Every key a config file or override may set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    pub construction: Construction,
    pub design_erasure: f64,
    pub sequence_file: Option<PathBuf>,

    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub depth: usize,
    pub parallel_hidden: usize,
    pub parallel_leaves: bool,
    pub pass_through_last: bool,
    pub norm: NormMode,

    pub batch_size: usize,
    pub epochs: usize,
    pub dec_steps: usize,
    pub enc_steps: usize,
    pub snr_enc: f64,
    pub snr_dec: f64,
    pub lr_enc: f64,
    pub lr_dec: f64,
    pub grad_accum: usize,
    pub feedback: Feedback,
    pub parallel: bool,
    pub channel: ChannelKind,
    pub rho: f64,
    pub burst_ratio: f64,
    pub absolute_burst: bool,

    pub train_mode: TrainMode,
    pub stage1_epochs: usize,
    pub kernel_store: Option<PathBuf>,

    pub finetune_mode: FinetuneMode,
    pub finetune_steps: usize,
    pub adapt_joint: bool,

    pub eval_codec: EvalCodec,
    pub snrs: Vec<f64>,
    pub eval_batch: usize,
    pub min_block_errors: u64,
    pub max_blocks: u64,
    pub eval_feedback: Feedback,

    pub analysis: Analysis,
    pub num_pairs: usize,
    pub bins: usize,
    pub analysis_snr: f64,
    pub num_blocks: u64,

    pub checkpoint_in: Option<PathBuf>,
    pub runs_root: PathBuf,
    pub run_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = TrainPlan::desk();
        let arch = Architecture::default();
        let eval = EvalSpec::default();
        Self {
            n: 16,
            k: 8,
            ell: 4,
            construction: Construction::Bhattacharyya,
            design_erasure: deeppolar::polar::DEFAULT_DESIGN_ERASURE,
            sequence_file: None,
            enc_hidden: arch.enc_hidden,
            dec_hidden: arch.dec_hidden,
            depth: arch.depth,
            parallel_hidden: arch.parallel_hidden,
            parallel_leaves: arch.parallel_leaves,
            pass_through_last: arch.pass_through_last,
            norm: NormMode::Running,
            batch_size: plan.batch_size,
            epochs: plan.epochs,
            dec_steps: plan.dec_steps,
            enc_steps: plan.enc_steps,
            snr_enc: plan.snr_enc,
            snr_dec: plan.snr_dec,
            lr_enc: plan.lr_enc,
            lr_dec: plan.lr_dec,
            grad_accum: plan.grad_accum,
            feedback: plan.feedback,
            parallel: plan.parallel,
            channel: ChannelKind::Awgn,
            rho: 0.1,
            burst_ratio: 10.0,
            absolute_burst: false,
            train_mode: TrainMode::Direct,
            stage1_epochs: CurriculumPlan::default().stage1_epochs,
            kernel_store: None,
            finetune_mode: FinetuneMode::Ste,
            finetune_steps: 1000,
            adapt_joint: false,
            eval_codec: EvalCodec::Deeppolar,
            snrs: eval.snrs,
            eval_batch: eval.batch,
            min_block_errors: eval.min_block_errors,
            max_blocks: eval.max_blocks,
            eval_feedback: Feedback::Hard,
            analysis: Analysis::Distance,
            num_pairs: 10_000,
            bins: 64,
            analysis_snr: sigma_db(1.12),
            num_blocks: 100_000,
            checkpoint_in: None,
            runs_root: PathBuf::from("runs"),
            run_dir: None,
            seed: 0,
        }
    }
}

fn sigma_db(sigma: f64) -> f64 {
    deeppolar::channel::sigma_to_snr_db(sigma)
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

impl RunConfig {
    /// Reads the optional config file, applies `key=value` overrides and
    /// validates the result.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override `{o}` is not of the form key=value")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::Config(format!(
                "k: need 0 < k <= n, got k = {}, n = {}",
                self.k, self.n
            )));
        }
        if self.construction == Construction::File && self.sequence_file.is_none() {
            return Err(Error::Config(
                "sequence_file: required when construction = \"file\"".into(),
            ));
        }
        for (name, v) in [
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("depth", self.depth),
            ("parallel_hidden", self.parallel_hidden),
            ("eval_batch", self.eval_batch),
            ("bins", self.bins),
            ("num_pairs", self.num_pairs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be positive")));
            }
        }
        self.train_plan().validate()?;
        self.eval_spec().validate()?;
        Ok(())
    }

    /// The resolved configuration as TOML; embedded in every artifact.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn layout(&self) -> Result<CodeLayout> {
        let order = match self.construction {
            Construction::Bhattacharyya => construct_reliability(self.n, self.ell, self.design_erasure)?,
            Construction::File => {
                let path = self.sequence_file.as_ref().expect("validated");
                ReliabilityOrder::from_file(path, self.n)?
            }
        };
        CodeLayout::from_order(self.n, self.k, self.ell, &order)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            enc_hidden: self.enc_hidden,
            dec_hidden: self.dec_hidden,
            depth: self.depth,
            parallel_hidden: self.parallel_hidden,
            parallel_leaves: self.parallel_leaves,
            pass_through_last: self.pass_through_last,
        }
    }

    pub fn norm_stats(&self) -> PowerNormStats {
        PowerNormStats {
            mode: self.norm,
            ..PowerNormStats::default()
        }
    }

    pub fn channel_model(&self) -> ChannelModel {
        match self.channel {
            ChannelKind::Awgn => ChannelModel::Awgn,
            ChannelKind::RayleighFast => ChannelModel::RayleighFast,
            ChannelKind::Bursty => ChannelModel::Bursty {
                rho: self.rho,
                burst_ratio: self.burst_ratio,
                absolute_burst: self.absolute_burst,
            },
        }
    }

    pub fn train_plan(&self) -> TrainPlan {
        TrainPlan {
            batch_size: self.batch_size,
            epochs: self.epochs,
            dec_steps: self.dec_steps,
            enc_steps: self.enc_steps,
            snr_enc: self.snr_enc,
            snr_dec: self.snr_dec,
            lr_enc: self.lr_enc,
            lr_dec: self.lr_dec,
            channel: self.channel_model(),
            seed: self.seed,
            grad_accum: self.grad_accum,
            feedback: self.feedback,
            parallel: self.parallel,
        }
    }

    pub fn curriculum_plan(&self) -> CurriculumPlan {
        CurriculumPlan {
            stage1_epochs: self.stage1_epochs,
            stage1: self.train_plan(),
            stage2: self.train_plan(),
        }
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            channel: self.channel_model(),
            snrs: self.snrs.clone(),
            batch: self.eval_batch,
            min_block_errors: self.min_block_errors,
            max_blocks: self.max_blocks,
        }
    }
}
