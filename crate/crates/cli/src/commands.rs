use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use deeppolar::channel::snr_db_to_sigma;
use deeppolar::codec::{load_checkpoint, write_atomic, Checkpoint, NeuralCode, PowerNormStats};
use deeppolar::eval::{
    distance_profile, first_error_histogram, monte_carlo, Codec, DeepPolar, PolarMl, PolarSc, Uncoded,
};
use deeppolar::polar::{CodeLayout, ScMode};
use deeppolar::train::{
    adapt_to_channel, curriculum_stage1, curriculum_stage2_init, finetune_bler, finetune_ste, train_alternating,
    train_decoder_only, BlerObjective, KernelStore, LossTrace, Phase,
};
use deeppolar::{Error, Result};

use crate::config::{Analysis, EvalCodec, FinetuneMode, RunConfig, TrainMode};
use crate::Command;

pub fn run(command: &Command, cfg: &RunConfig) -> Result<Value> {
    match command {
        Command::Construct(_) => construct(cfg),
        Command::Inspect(_) => inspect(cfg),
        Command::Train(_) => train(cfg, &RunDir::create(cfg)?),
        Command::Finetune(_) => finetune(cfg, &RunDir::create(cfg)?),
        Command::Eval(_) => eval(cfg, &RunDir::create(cfg)?),
        Command::Analyze(_) => analyze(cfg, &RunDir::create(cfg)?),
        Command::DecodeOnly(_) => decode_only(cfg, &RunDir::create(cfg)?),
    }
}

/// Output directory of one run; the resolved config is written first.
struct RunDir {
    path: PathBuf,
    config: String,
}

impl RunDir {
    fn create(cfg: &RunConfig) -> Result<Self> {
        let path = match &cfg.run_dir {
            Some(p) => p.clone(),
            None => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                cfg.runs_root.join(format!("run-{secs}-seed{}", cfg.seed))
            }
        };
        std::fs::create_dir_all(&path)?;
        let config = cfg.to_toml();
        let input = cfg.checkpoint_in.as_ref().and_then(|p| p.canonicalize().ok());
        if let (Some(input), Ok(out)) = (&input, path.canonicalize()) {
            if input.parent() == Some(out.as_path()) {
                return Err(Error::Config(format!(
                    "run_dir: {} holds the input checkpoint; choose another directory",
                    path.display()
                )));
            }
        }
        let dir = Self { path, config };
        dir.write("config.toml", &dir.config)?;
        Ok(dir)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.file(name), text)
    }

    /// CSV with the config as `# ` comment lines on top.
    fn write_csv(&self, name: &str, csv_with_header: impl FnOnce(&str) -> String) -> Result<()> {
        self.write(name, &csv_with_header(&self.config))
    }

    fn save_code(&self, name: &str, code: &NeuralCode) -> Result<()> {
        let mut ck = Checkpoint::from_code(code);
        ck.config = Some(self.config.clone());
        ck.save(&self.file(name))
    }

    fn save_trace(&self, trace: &LossTrace) -> Result<()> {
        self.write_csv("loss.csv", |h| {
            let mut s: String = h.lines().map(|l| format!("# {l}\n")).collect();
            s.push_str(&trace.to_csv());
            s
        })
    }

    fn display(&self) -> String {
        self.path.display().to_string()
    }
}

fn input_checkpoint(cfg: &RunConfig, layout: Option<&CodeLayout>) -> Result<NeuralCode> {
    let path = cfg
        .checkpoint_in
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint_in: required for this command".into()))?;
    load_checkpoint(path, layout)
}

fn fresh_code(cfg: &RunConfig) -> Result<NeuralCode> {
    let mut code = NeuralCode::new(cfg.layout()?, cfg.architecture(), cfg.seed)?;
    code.norm = cfg.norm_stats();
    Ok(code)
}

fn set_str(set: &[usize]) -> String {
    let items: Vec<String> = set.iter().map(usize::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

fn construct(cfg: &RunConfig) -> Result<Value> {
    let layout = cfg.layout()?;
    println!("I = {}", set_str(layout.info_set()));
    println!("F = {}", set_str(&layout.frozen_set()));
    Ok(json!({
        "command": "construct",
        "seed": cfg.seed,
        "n": layout.n(),
        "k": layout.k(),
        "ell": layout.ell(),
        "info": layout.info_set(),
        "frozen": layout.frozen_set(),
    }))
}

fn inspect(cfg: &RunConfig) -> Result<Value> {
    let code = input_checkpoint(cfg, None)?;
    let layout = code.layout();
    let enc = code.encoder_ids();
    let dec = code.decoder_ids();
    Ok(json!({
        "command": "inspect",
        "seed": code.seed(),
        "n": layout.n(),
        "k": layout.k(),
        "ell": layout.ell(),
        "info": layout.info_set(),
        "binary": code.binary,
        "norm": code.norm,
        "architecture": code.architecture(),
        "encoder_networks": enc.len(),
        "decoder_networks": dec.len(),
        "encoder_params": code.param_count(&enc),
        "decoder_params": code.param_count(&dec),
    }))
}

/// Runs a training closure; on divergence the last finite code is saved
/// for diagnosis before the error is returned.
fn guarded(
    dir: &RunDir,
    code: &mut NeuralCode,
    trace: &mut LossTrace,
    f: impl FnOnce(&mut NeuralCode, &mut LossTrace) -> Result<()>,
) -> Result<()> {
    let r = f(code, trace);
    if let Err(e @ Error::Diverged { .. }) = &r {
        log::error!("{e}; saving the last finite parameters");
        dir.save_code("checkpoint.diverged.json", code)?;
        dir.save_trace(trace)?;
    }
    r
}

fn loss_summary(trace: &LossTrace) -> Value {
    json!({
        "steps": trace.records.len(),
        "decoder_loss": trace.tail_mean(Phase::Decoder, 50),
        "encoder_loss": trace.tail_mean(Phase::Encoder, 20),
        "warnings": trace.warnings,
    })
}

fn train(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let plan = cfg.train_plan();
    let mut trace = LossTrace::default();
    let mut summary =
        json!({"command": "train", "seed": cfg.seed, "run_dir": dir.display(), "train_mode": cfg.train_mode});
    let store = match cfg.train_mode {
        TrainMode::Direct => None,
        TrainMode::Stage2 => {
            let path = cfg
                .kernel_store
                .as_ref()
                .ok_or_else(|| Error::Config("kernel_store: required for train_mode = \"stage2\"".into()))?;
            Some(KernelStore::load(path)?)
        }
        TrainMode::Stage1 | TrainMode::Curriculum => {
            let store = curriculum_stage1(cfg.ell, &cfg.architecture(), &cfg.curriculum_plan(), &mut trace)?;
            dir.write("kernels.json", &store.to_json())?;
            Some(store)
        }
    };
    if cfg.train_mode == TrainMode::Stage1 {
        dir.save_trace(&trace)?;
        summary["stage1"] = loss_summary(&trace);
        return Ok(summary);
    }
    let mut code = match &cfg.checkpoint_in {
        Some(_) if cfg.train_mode == TrainMode::Direct => input_checkpoint(cfg, Some(&cfg.layout()?))?,
        _ => fresh_code(cfg)?,
    };
    if let Some(store) = &store {
        let audit = curriculum_stage2_init(&mut code, store)?;
        dir.write(
            "audit.json",
            &(serde_json::to_string_pretty(&audit).expect("serializes") + "\n"),
        )?;
    }
    // stage-2 steps continue the stage-1 step numbering in the trace
    guarded(dir, &mut code, &mut trace, |c, t| train_alternating(c, &plan, t))?;
    dir.save_code("checkpoint.json", &code)?;
    dir.save_trace(&trace)?;
    summary["loss"] = loss_summary(&trace);
    Ok(summary)
}

fn finetune(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let mut code = input_checkpoint(cfg, None)?;
    let plan = cfg.train_plan();
    let mut trace = LossTrace::default();
    let steps = cfg.finetune_steps;
    guarded(dir, &mut code, &mut trace, |c, t| match cfg.finetune_mode {
        FinetuneMode::Ste => finetune_ste(c, &plan, t),
        FinetuneMode::Bler => finetune_bler(c, &plan, BlerObjective::Product, steps, t),
        FinetuneMode::Highsnr => finetune_bler(c, &plan, BlerObjective::HighSnr, steps, t),
        FinetuneMode::Channel => adapt_to_channel(c, &plan, cfg.adapt_joint, steps, t),
    })?;
    dir.save_code("checkpoint.json", &code)?;
    dir.save_trace(&trace)?;
    Ok(json!({
        "command": "finetune",
        "seed": cfg.seed,
        "run_dir": dir.display(),
        "finetune_mode": cfg.finetune_mode,
        "binary": code.binary,
        "loss": loss_summary(&trace),
    }))
}

fn codec(cfg: &RunConfig) -> Result<Box<dyn Codec>> {
    Ok(match cfg.eval_codec {
        EvalCodec::Deeppolar => {
            let mut dp = DeepPolar::new(input_checkpoint(cfg, None)?);
            dp.feedback = cfg.eval_feedback;
            dp.parallel = cfg.parallel;
            Box::new(dp)
        }
        EvalCodec::PolarSc => Box::new(PolarSc {
            layout: cfg.layout()?,
            mode: ScMode::Exact,
        }),
        EvalCodec::PolarScMinsum => Box::new(PolarSc {
            layout: cfg.layout()?,
            mode: ScMode::MinSum,
        }),
        EvalCodec::PolarMl => Box::new(PolarMl::new(cfg.layout()?)?),
        EvalCodec::Uncoded => Box::new(Uncoded { k: cfg.k }),
    })
}

fn eval(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let codec = codec(cfg)?;
    let report = monte_carlo(codec.as_ref(), &cfg.eval_spec(), cfg.seed)?;
    dir.write_csv("report.csv", |h| report.to_csv(Some(h)))?;
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({"snr_db": r.snr_db, "blocks": r.blocks, "ber": r.ber, "bler": r.bler}))
        .collect();
    Ok(json!({
        "command": "eval",
        "seed": cfg.seed,
        "run_dir": dir.display(),
        "codec": report.codec,
        "rows": rows,
    }))
}

fn analyze(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let codec = codec(cfg)?;
    match cfg.analysis {
        Analysis::Distance => {
            let p = distance_profile(codec.as_ref(), cfg.num_pairs, cfg.bins, cfg.seed)?;
            dir.write_csv("distance.csv", |h| p.histogram_csv(Some(h)))?;
            Ok(json!({
                "command": "analyze",
                "analysis": "distance",
                "seed": cfg.seed,
                "run_dir": dir.display(),
                "codec": codec.name(),
                "mean": p.mean,
                "std": p.std,
                "gaussian_mean": p.gaussian_mean,
                "gaussian_std": p.gaussian_std,
                "peaks": p.peak_count(),
            }))
        }
        Analysis::FirstErrors => {
            let ch = cfg.channel_model().at_sigma(snr_db_to_sigma(cfg.analysis_snr));
            let h = first_error_histogram(codec.as_ref(), &ch, cfg.num_blocks, cfg.eval_batch, cfg.seed)?;
            dir.write_csv("first_errors.csv", |hd| h.to_csv(Some(hd)))?;
            Ok(json!({
                "command": "analyze",
                "analysis": "first_errors",
                "seed": cfg.seed,
                "run_dir": dir.display(),
                "codec": codec.name(),
                "blocks": h.blocks,
                "erroneous": h.erroneous,
                "mode": h.mode(),
            }))
        }
    }
}

/// Classical polar encoder (zero kernel networks, per-codeword power
/// normalization) with a trained neural decoder.
fn decode_only(cfg: &RunConfig, dir: &RunDir) -> Result<Value> {
    let mut code = NeuralCode::new(cfg.layout()?, cfg.architecture(), cfg.seed)?;
    code.zero_encoders();
    code.norm = PowerNormStats::per_codeword();
    let plan = cfg.train_plan();
    let mut trace = LossTrace::default();
    guarded(dir, &mut code, &mut trace, |c, t| train_decoder_only(c, &plan, t))?;
    dir.save_code("checkpoint.json", &code)?;
    dir.save_trace(&trace)?;
    Ok(json!({
        "command": "decode-only",
        "seed": cfg.seed,
        "run_dir": dir.display(),
        "loss": loss_summary(&trace),
    }))
}
