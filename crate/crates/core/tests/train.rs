use deeppolar::channel::{ChannelModel, ChannelSpec};
use deeppolar::codec::{
    dp_encode, dp_encode_eval, loss_and_grads, Architecture, Checkpoint, NetId, NeuralCode, StepSpec,
};
use deeppolar::nn::{bler_product_loss, Mat};
use deeppolar::polar::CodeLayout;
use deeppolar::rng::stream_rng;
use deeppolar::train::{
    adapt_to_channel, curriculum_stage1, curriculum_stage2_init, finetune_bler, finetune_ste, node_counts, stage1_code,
    train_alternating, train_decoder_only, BlerObjective, CurriculumPlan, KernelStore, LossTrace, Phase, TrainPlan,
};
use deeppolar::{Bits, Error};
use proptest::prelude::*;

fn small_arch() -> Architecture {
    Architecture {
        enc_hidden: 8,
        dec_hidden: 8,
        parallel_hidden: 8,
        ..Architecture::default()
    }
}

fn tiny_plan(seed: u64) -> TrainPlan {
    TrainPlan {
        batch_size: 4,
        epochs: 1,
        dec_steps: 2,
        enc_steps: 1,
        lr_enc: 1e-3,
        lr_dec: 1e-3,
        seed,
        ..TrainPlan::desk()
    }
}

fn params(code: &NeuralCode, ids: &[NetId]) -> Vec<f64> {
    ids.iter()
        .flat_map(|&id| code.net(id).unwrap().params().to_vec())
        .collect()
}

fn check_freeze(seed: u64, dec_steps: usize, enc_steps: usize) {
    let layout = CodeLayout::polar(4, 2, 4).unwrap();
    let fresh = NeuralCode::new(layout, small_arch(), seed).unwrap();
    let enc_ids = fresh.encoder_ids();
    let dec_ids = fresh.decoder_ids();
    let plan = TrainPlan {
        dec_steps,
        enc_steps,
        ..tiny_plan(seed)
    };

    let mut alt = fresh.clone();
    let mut trace = LossTrace::default();
    train_alternating(&mut alt, &plan, &mut trace).unwrap();
    assert_eq!(trace.records.len(), dec_steps + enc_steps);
    let phases: Vec<Phase> = trace.records.iter().map(|r| r.phase).collect();
    let mut want = vec![Phase::Decoder; dec_steps];
    want.extend(vec![Phase::Encoder; enc_steps]);
    assert_eq!(phases, want);

    // The decoder phase alone, replayed with the same streams.
    let mut dec_only = fresh.clone();
    train_decoder_only(&mut dec_only, &plan, &mut LossTrace::default()).unwrap();
    assert_eq!(params(&dec_only, &enc_ids), params(&fresh, &enc_ids));
    assert_ne!(params(&dec_only, &dec_ids), params(&fresh, &dec_ids));
    assert_eq!(params(&alt, &dec_ids), params(&dec_only, &dec_ids));
    assert_ne!(params(&alt, &enc_ids), params(&fresh, &enc_ids));
}

#[test]
fn three_steps_with_frozen_halves() {
    check_freeze(5, 2, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn frozen_half_is_untouched(seed in 0u64..1000, dec in 1usize..4, enc in 1usize..3) {
        check_freeze(seed, dec, enc);
    }
}

#[test]
fn replay_is_deterministic() {
    let layout = CodeLayout::polar(8, 4, 2).unwrap();
    let run = || {
        let mut code = NeuralCode::new(layout.clone(), small_arch(), 3).unwrap();
        let mut trace = LossTrace::default();
        let plan = TrainPlan {
            batch_size: 16,
            epochs: 3,
            dec_steps: 4,
            enc_steps: 2,
            grad_accum: 2,
            ..tiny_plan(11)
        };
        train_alternating(&mut code, &plan, &mut trace).unwrap();
        (trace.to_csv(), Checkpoint::from_code(&code).to_json())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.0.starts_with("step,phase,loss\n0,decoder,"));
    assert_eq!(a.0.lines().count(), 1 + 18);
}

#[test]
fn grad_accum_must_divide_batch() {
    let mut code = NeuralCode::new(CodeLayout::polar(4, 2, 4).unwrap(), small_arch(), 0).unwrap();
    let plan = TrainPlan {
        batch_size: 5,
        grad_accum: 2,
        ..tiny_plan(0)
    };
    let err = train_alternating(&mut code, &plan, &mut LossTrace::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let plan = TrainPlan {
        enc_steps: 0,
        ..tiny_plan(0)
    };
    assert!(train_alternating(&mut code, &plan, &mut LossTrace::default()).is_err());
}

#[test]
fn divergence_aborts_and_keeps_code() {
    let mut code = NeuralCode::new(CodeLayout::polar(4, 2, 4).unwrap(), small_arch(), 0).unwrap();
    code.net_mut(NetId::Encoder(0)).unwrap().params_mut()[0] = f64::NAN;
    let before = code.clone();
    let mut trace = LossTrace::default();
    let err = train_alternating(&mut code, &tiny_plan(0), &mut trace).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
    assert!(trace.records.is_empty());
    assert_eq!(
        Checkpoint::from_code(&code).to_json(),
        Checkpoint::from_code(&before).to_json()
    );
}

#[test]
fn fresh_code_loss_is_near_chance() {
    let layout = CodeLayout::polar(16, 8, 4).unwrap();
    let code = NeuralCode::new(layout, Architecture::default(), 9).unwrap();
    let u = Bits::random(2000, 8, &mut stream_rng(1, 0, 0));
    let ch = ChannelModel::Awgn.at_snr_db(-2.0);
    let out = loss_and_grads(&code, &StepSpec::default(), &u, &ch, &mut stream_rng(1, 1, 0)).unwrap();
    let chance = 8.0 * std::f64::consts::LN_2;
    assert!(out.loss >= 0.5 * chance && out.loss <= 1.5 * chance, "{}", out.loss);
}

/// `E[ln(1 + exp(-L))]` for `L ~ N(mu, 2 mu)`, the per-bit BCE of the ideal
/// decoder for a repetition of `n` bipolar symbols.
fn repetition_bce(n: usize, sigma: f64) -> f64 {
    let mu = 2.0 * n as f64 / (sigma * sigma);
    let sd = (2.0 * mu).sqrt();
    let steps = 20_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / steps as f64;
    (0..=steps)
        .map(|i| {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            let l = mu + sd * z;
            let softplus = (-l).max(0.0) + (-l.abs()).exp().ln_1p();
            w * h * softplus * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .sum()
}

#[test]
fn single_kernel_rate_quarter_learns_repetition() {
    let layout = CodeLayout::polar(4, 1, 4).unwrap();
    let mut code = NeuralCode::new(layout, Architecture::default(), 2).unwrap();
    // 18 epochs of 110 steps stays within 2000 steps
    let plan = TrainPlan {
        epochs: 18,
        seed: 4,
        ..TrainPlan::desk()
    };
    let mut trace = LossTrace::default();
    train_alternating(&mut code, &plan, &mut trace).unwrap();
    assert!(trace.records.len() <= 2000);
    let smoothed = trace.smoothed(Phase::Decoder, 50);
    let last = smoothed.last().unwrap().1;
    let ideal = repetition_bce(4, 10f64.powf(2.0 / 20.0));
    assert!((ideal - 0.1415).abs() < 2e-3, "{ideal}");
    assert!(last <= 1.15 * ideal, "smoothed BCE {last}, ideal decoder {ideal}");
}

#[test]
fn stage1_covers_every_rate() {
    let plan = CurriculumPlan {
        stage1_epochs: 1,
        stage1: tiny_plan(3),
        stage2: tiny_plan(3),
    };
    let store = curriculum_stage1(4, &small_arch(), &plan, &mut LossTrace::default()).unwrap();
    assert_eq!(store.ell, 4);
    assert_eq!(store.counts(), vec![1, 2, 3, 4]);
    assert_eq!(store.get(1).unwrap().checkpoint.layout.frozen, vec![0, 1, 2]);
    assert_eq!(store.get(3).unwrap().checkpoint.layout.frozen, vec![0]);
    assert!(store.get(4).unwrap().checkpoint.layout.frozen.is_empty());
    let back = KernelStore::from_json(&store.to_json()).unwrap();
    assert_eq!(back, store);
}

#[test]
fn stage1_handoff_carries_parameters() {
    let arch = small_arch();
    let mut prev = stage1_code(4, 1, &arch, 8, None).unwrap();
    train_alternating(&mut prev, &tiny_plan(8), &mut LossTrace::default()).unwrap();
    let next = stage1_code(4, 2, &arch, 8, Some(&prev)).unwrap();
    let enc = [NetId::Encoder(0)];
    assert_eq!(params(&next, &enc), params(&prev, &enc));
    let shared = NetId::Decoder { node: 0, slot: 3 };
    assert_eq!(params(&next, &[shared]), params(&prev, &[shared]));
    assert!(next.net(NetId::Decoder { node: 0, slot: 2 }).is_some());
    assert_eq!(next.norm, prev.norm);

    // Messages with the newly unfrozen bit at 0 reproduce the old codewords.
    let u1 = Bits::enumerate(1);
    let u2 = Bits::from_rows(&[vec![0, 0], vec![0, 1]]).unwrap();
    assert_eq!(
        dp_encode(&prev, &u1, false).unwrap(),
        dp_encode(&next, &u2, false).unwrap()
    );
    assert!(stage1_code(4, 3, &arch, 8, Some(&prev)).is_err());
}

fn fake_store(arch: &Architecture) -> KernelStore {
    let plan = CurriculumPlan {
        stage1_epochs: 1,
        stage1: tiny_plan(1),
        stage2: tiny_plan(1),
    };
    curriculum_stage1(4, arch, &plan, &mut LossTrace::default()).unwrap()
}

#[test]
fn stage2_mapping_for_16_8() {
    let arch = small_arch();
    let store = fake_store(&arch);
    let layout = CodeLayout::polar(16, 8, 4).unwrap();
    assert_eq!(layout.info_set(), &[7, 9, 10, 11, 12, 13, 14, 15]);
    assert_eq!(node_counts(&layout), vec![0, 1, 3, 4, 3]);
    let fresh = NeuralCode::new(layout, arch, 6).unwrap();
    let mut code = fresh.clone();
    let audit = curriculum_stage2_init(&mut code, &store).unwrap();

    let sources: Vec<Option<usize>> = audit.iter().map(|r| r.source).collect();
    assert_eq!(sources, vec![None, Some(1), Some(3), Some(4), Some(3)]);
    assert_eq!(audit[1].decoder_slots, vec![(3, 3)]);
    assert_eq!(audit[4].decoder_slots, vec![(1, 1), (2, 2), (3, 3)]);
    assert_eq!(audit[3].decoder_slots, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);

    // fully frozen leaf untouched
    assert_eq!(
        params(&code, &[NetId::Encoder(0)]),
        params(&fresh, &[NetId::Encoder(0)])
    );
    // root and bits 4..8 take the rate-3 and rate-1 kernels
    let g43 = store.get(3).unwrap().checkpoint.to_code().unwrap();
    let g41 = store.get(1).unwrap().checkpoint.to_code().unwrap();
    assert_eq!(params(&code, &[NetId::Encoder(4)]), params(&g43, &[NetId::Encoder(0)]));
    assert_eq!(params(&code, &[NetId::Encoder(1)]), params(&g41, &[NetId::Encoder(0)]));
    assert_eq!(
        params(&code, &[NetId::Decoder { node: 4, slot: 2 }]),
        params(&g43, &[NetId::Decoder { node: 0, slot: 2 }])
    );
    // every node with information was touched
    for rec in &audit {
        assert_eq!(rec.source.is_some(), rec.count > 0);
    }
}

#[test]
fn stage2_adapts_slot_widths() {
    let arch = small_arch();
    let store = fake_store(&arch);
    // leaf 0 carries one bit at slot 0 while the rate-1 kernel uses slot 3
    let layout = CodeLayout::new(16, 4, &[0, 12, 13, 15]).unwrap();
    let mut code = NeuralCode::new(layout, arch, 2).unwrap();
    let audit = curriculum_stage2_init(&mut code, &store).unwrap();
    assert_eq!(audit[0].decoder_slots, vec![(3, 0)]);
    let src = store.get(1).unwrap().checkpoint.to_code().unwrap();
    let s = src.net(NetId::Decoder { node: 0, slot: 3 }).unwrap();
    let t = code.net(NetId::Decoder { node: 0, slot: 0 }).unwrap();
    assert_eq!((s.widths()[0], t.widths()[0]), (7, 4));
    let (sw, sb) = s.layer(0);
    let (tw, tb) = t.layer(0);
    assert_eq!(sb, tb);
    for o in 0..s.widths()[1] {
        assert_eq!(&tw[o * 4..o * 4 + 4], &sw[o * 7..o * 7 + 4]);
    }
    assert_eq!(s.layer(1), t.layer(1));
}

#[test]
fn stage2_missing_entry_is_config_error() {
    let arch = small_arch();
    let mut store = fake_store(&arch);
    store.kernels.retain(|k| k.j != 3);
    let mut code = NeuralCode::new(CodeLayout::polar(16, 8, 4).unwrap(), arch, 0).unwrap();
    assert!(matches!(
        curriculum_stage2_init(&mut code, &store),
        Err(Error::Config(_))
    ));
}

#[test]
fn ste_finetune_yields_bipolar_codewords() {
    let mut code = NeuralCode::new(CodeLayout::polar(16, 8, 4).unwrap(), small_arch(), 1).unwrap();
    let plan = TrainPlan {
        batch_size: 32,
        ..tiny_plan(2)
    };
    train_alternating(&mut code, &plan, &mut LossTrace::default()).unwrap();
    finetune_ste(&mut code, &plan, &mut LossTrace::default()).unwrap();
    assert!(code.binary);
    let u = Bits::random(1000, 8, &mut stream_rng(7, 0, 0));
    let x = dp_encode_eval(&code, &u).unwrap();
    assert!(x.data().iter().all(|&v| v == 1.0 || v == -1.0));
}

#[test]
fn bler_loss_bounds() {
    let perfect = Mat::from_vec(2, 2, vec![-800.0, 800.0, 800.0, -800.0]).unwrap();
    let (l, _) = bler_product_loss(&perfect, &[0, 1, 1, 0]).unwrap();
    assert!(l.abs() < 1e-12);
    let (l, _) = bler_product_loss(&Mat::zeros(1, 2), &[0, 1]).unwrap();
    assert!((l - 0.75).abs() < 1e-15);
}

#[test]
fn bler_finetune_moves_only_decoder() {
    let fresh = NeuralCode::new(CodeLayout::polar(8, 4, 2).unwrap(), small_arch(), 1).unwrap();
    for objective in [BlerObjective::Product, BlerObjective::HighSnr] {
        let mut code = fresh.clone();
        let mut trace = LossTrace::default();
        finetune_bler(&mut code, &tiny_plan(1), objective, 3, &mut trace).unwrap();
        assert_eq!(trace.records.len(), 3);
        assert_eq!(params(&code, &code.encoder_ids()), params(&fresh, &fresh.encoder_ids()));
        assert_ne!(params(&code, &code.decoder_ids()), params(&fresh, &fresh.decoder_ids()));
    }
    let p = TrainPlan::full_scale().high_snr();
    assert_eq!((p.batch_size, p.snr_dec), (200_000, -1.0));
    assert!((p.lr_dec - 1e-5).abs() < 1e-18);
}

#[test]
fn channel_adaptation() {
    let fresh = NeuralCode::new(CodeLayout::polar(8, 4, 2).unwrap(), small_arch(), 1).unwrap();
    let bursty = TrainPlan {
        channel: ChannelModel::Bursty {
            rho: 0.05,
            burst_ratio: 10.0,
            absolute_burst: false,
        },
        ..tiny_plan(4)
    };
    let mut code = fresh.clone();
    adapt_to_channel(&mut code, &bursty, false, 0, &mut LossTrace::default()).unwrap();
    assert_eq!(code, fresh);

    adapt_to_channel(&mut code, &bursty, false, 2, &mut LossTrace::default()).unwrap();
    assert_eq!(params(&code, &code.encoder_ids()), params(&fresh, &fresh.encoder_ids()));
    let mut joint = fresh.clone();
    let mut trace = LossTrace::default();
    adapt_to_channel(&mut joint, &bursty, true, 2, &mut trace).unwrap();
    assert!(trace.records.iter().all(|r| r.phase == Phase::Joint));
    assert_ne!(
        params(&joint, &joint.encoder_ids()),
        params(&fresh, &fresh.encoder_ids())
    );
    assert!(matches!(bursty.channel.at_snr_db(0.0), ChannelSpec::Bursty { .. }));
}

#[test]
fn plan_field_names() {
    let plan: TrainPlan = serde_json::from_str(r#"{"batch_size": 64, "snr_dec": -1.5}"#).unwrap();
    assert_eq!(plan.batch_size, 64);
    assert_eq!(plan.epochs, 2000);
    assert!(serde_json::from_str::<TrainPlan>(r#"{"batchsize": 64}"#).is_err());
}
