//! Acceptance run: one pass/fail line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgs_core::avdata::{split_speakers, synth_generate, window_audio, AlignedSample, SyntheticSpec, Waveform, SAMPLE_RATE};
use vgs_core::features::{decode_features, encode_features, extract};
use vgs_core::model::{generate_video, generate_video_detailed, ModelParams, LATENT, Z_AUD, Z_ID, Z_N};
use vgs_core::numerics::{adjoint_check, gradient_suite};
use vgs_core::pretrain::{decode_checkpoint, encode_checkpoint, lr_at, train, train_from, TrainConfig, TrainOptions, TrainState};
use vgs_core::probe::{accuracy, evaluate, probe_lr_at, select_best_epoch, train_probe, LabeledFeatures, ProbeConfig};

// Seeds fixed up front; nothing below was tuned against the outcome.
const PRETRAIN_SEED: u64 = 7;
const PROBE_CORPUS_SEED: u64 = 8;
const SPLIT_SEED: u64 = 7;
const PROBE_SEED: u64 = 7;

type Outcome = Result<(bool, String), String>;

fn pretrain_spec() -> SyntheticSpec {
    SyntheticSpec { n_speakers: 8, clips_per_speaker: 10, clip_seconds: 1.0, n_classes: 3, seed: PRETRAIN_SEED }
}

fn pretrain_cfg() -> TrainConfig {
    TrainConfig { seed: PRETRAIN_SEED, width_multiplier: 0.25, epochs: 20, ..Default::default() }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_criterion() -> Outcome {
    let started = Instant::now();
    let checks = gradient_suite(0, 5).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).ok_or("empty suite")?;
    let all_ok = checks.iter().all(|c| c.instances >= 5 && c.max_rel_error <= 1e-4);
    let listing: Vec<String> = checks.iter().map(|c| format!("{}={:.1e}", c.op, c.max_rel_error)).collect();
    Ok((
        all_ok && secs < 120.0,
        format!("{} ops x5, worst {} {:.2e} (<= 1e-4), {secs:.2}s (< 120s) [{}]", checks.len(), worst.op, worst.max_rel_error, listing.join(" ")),
    ))
}

fn adjoint_criterion() -> Outcome {
    let gap = adjoint_check(0, 20).map_err(err)?;
    Ok((gap <= 1e-10, format!("20 cases, max inner-product gap {gap:.2e} (<= 1e-10)")))
}

fn windowing_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lengths: Vec<usize> = vec![320, 639, 640, 959, 960, 16_000];
    while lengths.len() < 50 {
        lengths.push(rng.gen_range(320..48_000));
    }
    for &len in &lengths {
        let samples: Vec<f32> = (0..len).map(|i| ((i * 7919) % 2003) as f32 / 2003.0 - 0.5).collect();
        let windows = window_audio(&Waveform::new(samples.clone(), SAMPLE_RATE).map_err(err)?).map_err(err)?;
        let expected_t = (len as f64 * 25.0 / 16_000.0).round() as usize;
        if windows.shape() != [expected_t, 3200] {
            return Ok((false, format!("len {len}: shape {:?}, expected [{expected_t}, 3200]", windows.shape())));
        }
        for t in 0..expected_t {
            for k in 0..3200 {
                let idx = (t * 640 + k) as i64 - 1600;
                let want = if idx >= 0 && (idx as usize) < len { samples[idx as usize] } else { 0.0 };
                if windows.row(t)[k] != want {
                    return Ok((false, format!("len {len}: window {t} offset {k} differs")));
                }
            }
        }
    }
    Ok((true, format!("{} clip lengths match the per-index oracle; counts = round(len*25/16000)", lengths.len())))
}

fn dimension_criterion() -> Outcome {
    let corpus = synth_generate(&SyntheticSpec { n_speakers: 1, clips_per_speaker: 1, clip_seconds: 1.0, n_classes: 3, seed: 1 }).map_err(err)?;
    let params = ModelParams::init(pretrain_cfg().arch().map_err(err)?, 0);
    let g = generate_video_detailed(&corpus[0], 0, &params, 0).map_err(err)?;
    let t = corpus[0].frames();
    let checks = [
        g.z_aud.shape() == [t, Z_AUD] && Z_AUD == 256,
        g.z_id.shape() == [Z_ID] && Z_ID == 128,
        g.z_n.shape() == [t, Z_N] && Z_N == 10,
        g.latent.shape() == [t, LATENT] && LATENT == 394,
        g.frames.shape() == [t, 3, 96, 128],
        g.frames.data().iter().all(|v| (-1.0..=1.0).contains(v)),
    ];
    Ok((
        checks.iter().all(|&c| c),
        format!(
            "z_aud {:?}, z_id {:?}, z_n {:?}, latent {:?}, frames {:?} in [-1,1]: {}",
            g.z_aud.shape(),
            g.z_id.shape(),
            g.z_n.shape(),
            g.latent.shape(),
            g.frames.shape(),
            checks[5]
        ),
    ))
}

fn pretrain_criterion(corpus: &[AlignedSample]) -> Result<((bool, String), TrainState), String> {
    let started = Instant::now();
    let state = train(corpus, &pretrain_cfg(), &TrainOptions::default()).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    let h = &state.loss_history;
    let ratio = h[h.len() - 1] / h[0];
    let line = format!(
        "8x10x1s, width 0.25, 20 epochs: mean L1 {:.4} -> {:.4}, ratio {ratio:.3} (<= 0.5), {secs:.0}s on {} core(s) (<= 900s)",
        h[0],
        h[h.len() - 1],
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    Ok(((ratio <= 0.5 && secs <= 900.0, line), state))
}

fn probe_accuracy(params: &ModelParams<f32>, corpus: &[AlignedSample]) -> Result<f64, String> {
    let (train, val, test) = split_speakers(corpus.to_vec(), [0.6, 0.2, 0.2], SPLIT_SEED).map_err(err)?;
    let featurize = |items: Vec<AlignedSample>| -> Result<Vec<LabeledFeatures>, String> {
        items
            .iter()
            .map(|s| {
                let features = extract(&s.id, &s.waveform, params).map_err(err)?;
                Ok(LabeledFeatures { features, label: s.label.ok_or("unlabeled clip")? })
            })
            .collect()
    };
    let (train, val, test) = (featurize(train)?, featurize(val)?, featurize(test)?);
    let cfg = ProbeConfig { n_classes: 3, seed: PROBE_SEED, ..Default::default() };
    let (probe, _) = train_probe(&train, &val, &cfg).map_err(err)?;
    evaluate(&probe, &test).map_err(err)
}

fn self_supervision_criterion(trained: &TrainState) -> Outcome {
    let corpus = synth_generate(&SyntheticSpec { n_speakers: 12, clips_per_speaker: 12, clip_seconds: 1.0, n_classes: 3, seed: PROBE_CORPUS_SEED })
        .map_err(err)?;
    let control = ModelParams::init(pretrain_cfg().arch().map_err(err)?, PRETRAIN_SEED);
    let acc_trained = probe_accuracy(&trained.params, &corpus)?;
    let acc_control = probe_accuracy(&control, &corpus)?;
    let gap = acc_trained - acc_control;
    Ok((
        acc_trained >= 85.0 && gap >= 15.0,
        format!("test accuracy trained {acc_trained:.1}% (>= 85), random-init control {acc_control:.1}%, gap {gap:.1} pts (>= 15), chance 33.3%"),
    ))
}

fn schedule_criterion() -> Outcome {
    let train_cfg = TrainConfig::default();
    let probe_cfg = ProbeConfig::default();
    for e in 0..=1000usize {
        let want = 0.06 * 0.98f64.powi((e / 10) as i32);
        if lr_at(e, &train_cfg) != want {
            return Ok((false, format!("pretrain lr at epoch {e}: {} vs {want}", lr_at(e, &train_cfg))));
        }
        let want = 0.001 * 0.1f64.powi((e / 30) as i32);
        if probe_lr_at(e, &probe_cfg) != want {
            return Ok((false, format!("probe lr at epoch {e}: {} vs {want}", probe_lr_at(e, &probe_cfg))));
        }
    }
    Ok((true, "0.06*0.98^floor(e/10) and 0.001*0.1^floor(e/30) exact for e in [0, 1000]".into()))
}

fn persistence_criterion(corpus: &[AlignedSample], first: &TrainState) -> Outcome {
    let cfg = pretrain_cfg();
    // fresh fixed-seed rerun, interrupted halfway and resumed from serialized bytes
    let half = train(corpus, &TrainConfig { epochs: cfg.epochs / 2, ..cfg.clone() }, &TrainOptions::default()).map_err(err)?;
    let prefix_ok = half.loss_history[..] == first.loss_history[..half.loss_history.len()];
    let restored = decode_checkpoint(&encode_checkpoint(&half)).map_err(err)?;
    let ckpt_ok = restored == half;
    let resumed = train_from(restored, corpus, &cfg, &TrainOptions::default()).map_err(err)?;
    let history_ok = resumed.loss_history == first.loss_history;
    let params_ok = resumed.params == first.params;

    let reloaded = decode_checkpoint(&encode_checkpoint(first)).map_err(err)?;
    let video_ok = generate_video(&corpus[0], 0, &reloaded.params, 11).map_err(err)? == generate_video(&corpus[0], 0, &first.params, 11).map_err(err)?;
    let fs = extract(&corpus[1].id, &corpus[1].waveform, &first.params).map_err(err)?;
    let bytes = encode_features(&fs);
    let back = decode_features(&bytes).map_err(err)?;
    let features_ok = back == fs && encode_features(&back) == bytes;

    let ok = prefix_ok && ckpt_ok && history_ok && params_ok && video_ok && features_ok;
    Ok((
        ok,
        format!(
            "rerun loss_history bit-exact: {}; resume at epoch {} replays history {} and params {}; checkpoint round-trip {} (generation identical {}); feature round-trip {}",
            prefix_ok && history_ok,
            half.epoch,
            history_ok,
            params_ok,
            ckpt_ok,
            video_ok,
            features_ok
        ),
    ))
}

fn probe_protocol_criterion() -> Outcome {
    let traces: [(&[f64], usize); 4] =
        [(&[20.0, 40.0, 80.0, 80.0, 60.0], 2), (&[33.3, 33.3, 33.3], 0), (&[10.0, 90.0, 10.0, 95.0], 3), (&[50.0], 0)];
    let best_ok = traces.iter().all(|(t, want)| select_best_epoch(t) == Some(*want));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut chance = Vec::new();
    for classes in [6usize, 8] {
        let labels: Vec<usize> = (0..60_000).map(|i| i % classes).collect();
        let preds: Vec<usize> = labels.iter().map(|_| rng.gen_range(0..classes)).collect();
        chance.push(accuracy(&preds, &labels).map_err(err)?);
    }
    let chance_ok = (chance[0] - 16.66).abs() <= 2.0 && (chance[1] - 12.5).abs() <= 2.0;
    Ok((
        best_ok && chance_ok,
        format!("earliest-argmax selection on {} traces: {best_ok}; random predictor 6 classes {:.2}%, 8 classes {:.2}% (16.66/12.5 +- 2)", traces.len(), chance[0], chance[1]),
    ))
}

fn report(n: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !ok {
        *failures += 1;
    }
    println!("[{}] {n}. {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(1, "gradient suite", gradient_criterion(), &mut failures);
    report(2, "adjoint identity", adjoint_criterion(), &mut failures);
    report(3, "windowing oracle", windowing_criterion(), &mut failures);
    report(4, "dimension contract", dimension_criterion(), &mut failures);

    let corpus = synth_generate(&pretrain_spec()).expect("pretraining corpus");
    let trained = match pretrain_criterion(&corpus) {
        Ok((outcome, state)) => {
            report(5, "desk-scale pretraining", Ok(outcome), &mut failures);
            Some(state)
        }
        Err(e) => {
            report(5, "desk-scale pretraining", Err(e), &mut failures);
            None
        }
    };
    let needs_model = || Err("pretraining did not complete".to_string());
    report(6, "self-supervision claim", trained.as_ref().map_or_else(needs_model, self_supervision_criterion), &mut failures);
    report(7, "schedules", schedule_criterion(), &mut failures);
    report(8, "determinism & persistence", trained.as_ref().map_or_else(needs_model, |t| persistence_criterion(&corpus, t)), &mut failures);
    report(9, "probe protocol", probe_protocol_criterion(), &mut failures);

    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
