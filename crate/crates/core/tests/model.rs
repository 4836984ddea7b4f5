use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgs_core::avdata::{synth_generate, AlignedSample, SyntheticSpec, FRAME_LEN};
use vgs_core::model::{
    decode_frame, encode_audio_sequence, encode_identity, generate_video, generate_video_detailed, noise_draws,
    sample_noise_sequence, ArchConfig, Graph, ModelParams, LATENT, Z_AUD, Z_ID, Z_N,
};
use vgs_core::numerics::gradcheck::relative_error;
use vgs_core::numerics::{Mode, Tensor};
use vgs_core::pretrain::reconstruction_gradients;

fn params(width: f64) -> ModelParams<f32> {
    ModelParams::init(ArchConfig::new(width).unwrap(), 11)
}

fn corpus(speakers: usize, seconds: f64) -> Vec<AlignedSample> {
    synth_generate(&SyntheticSpec { n_speakers: speakers, clips_per_speaker: 2, clip_seconds: seconds, n_classes: 3, seed: 5 })
        .unwrap()
}

#[test]
fn audio_encoder_shapes() {
    let p = params(0.25);
    let s = &corpus(1, 1.0)[0];
    assert_eq!(encode_audio_sequence(&s.windows, &p).unwrap().shape(), &[25, Z_AUD]);
    let one = Tensor::new([1, 3200], s.windows.row(3).to_vec()).unwrap();
    assert_eq!(encode_audio_sequence(&one, &p).unwrap().shape(), &[1, Z_AUD]);
    assert!(encode_audio_sequence(&Tensor::<f32>::zeros([2, 3199]), &p).is_err());
}

#[test]
fn audio_encoder_is_causal() {
    let p = params(0.25);
    let s = &corpus(1, 1.0)[0];
    let base = encode_audio_sequence(&s.windows, &p).unwrap();
    let k = 9;
    // reverse the suffix starting at k
    let mut rows: Vec<&[f32]> = (0..25).map(|t| s.windows.row(t)).collect();
    rows[k..].reverse();
    let permuted = Tensor::new([25, 3200], rows.concat()).unwrap();
    let out = encode_audio_sequence(&permuted, &p).unwrap();
    for t in 0..k {
        assert_eq!(base.row(t), out.row(t), "row {t} changed");
    }
    assert_ne!(base.row(k), out.row(k));
}

#[test]
fn identity_encoder_skips_and_batching() {
    let p = params(0.25);
    let c = corpus(2, 0.2);
    let (z, skips) = encode_identity(&c[0].video.frame_tensor(0), &p).unwrap();
    assert_eq!(z.shape(), &[Z_ID]);
    let res: Vec<(usize, usize)> = skips.iter().map(|s| (s.shape()[1], s.shape()[2])).collect();
    assert_eq!(res, [(48, 64), (24, 32), (12, 16), (6, 8), (3, 4), (1, 2)]);
    let chans: Vec<usize> = skips.iter().map(|s| s.shape()[0]).collect();
    assert_eq!(chans, ArchConfig::new(0.25).unwrap().identity_channels());

    let (z_other, _) = encode_identity(&c[2].video.frame_tensor(0), &p).unwrap();
    let diff: f32 = z.data().iter().zip(z_other.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 0.0);

    let batch: Vec<f32> = [0, 1, 2].iter().flat_map(|&i| c[i].video.frame(0).to_vec()).collect();
    let (zb, _) = encode_identity(&Tensor::new([3, 3, 96, 128], batch).unwrap(), &p).unwrap();
    assert_eq!(zb.shape(), &[3, Z_ID]);
    assert_eq!(zb.row(0), z.data());
    assert!(encode_identity(&Tensor::<f32>::zeros([3, 64, 64]), &p).is_err());
}

#[test]
fn noise_sequence_statistics_and_determinism() {
    let p = params(0.25);
    let z = sample_noise_sequence(25, 3, &p).unwrap();
    assert_eq!(z.shape(), &[25, Z_N]);
    assert_eq!(z, sample_noise_sequence(25, 3, &p).unwrap());
    assert_ne!(z, sample_noise_sequence(25, 4, &p).unwrap());
    let draws = noise_draws::<f64>(10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let n = draws.numel() as f64;
    let mean = draws.data().iter().sum::<f64>() / n;
    let var = draws.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 0.6).abs() < 0.02, "variance {var}");
    assert!(sample_noise_sequence(0, 3, &p).is_err());
}

#[test]
fn decoder_contract_and_audio_sensitivity() {
    let p = params(0.25);
    let s = &corpus(1, 0.2)[0];
    let (_, skips) = encode_identity(&s.video.frame_tensor(0), &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let latent: Vec<f32> = (0..LATENT).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = decode_frame(&Tensor::new([LATENT], latent.clone()).unwrap(), &skips, &p).unwrap();
    assert_eq!(out.shape(), &[3, 96, 128]);
    assert!(out.data().iter().all(|v| v.abs() <= 1.0));

    let mut bumped = latent.clone();
    for v in &mut bumped[..Z_AUD] {
        *v += 0.5;
    }
    let out2 = decode_frame(&Tensor::new([LATENT], bumped).unwrap(), &skips, &p).unwrap();
    assert_ne!(out, out2);
    assert!(decode_frame(&Tensor::new([393], latent[..393].to_vec()).unwrap(), &skips, &p).is_err());

    // gradient of the output w.r.t. z_aud is nonzero
    let mut g = Graph::new(&p, Mode::Eval, false);
    let z = g.tape.param(Tensor::new([1, LATENT], latent).unwrap());
    let sk: Vec<_> = skips.iter().map(|s| g.tape.constant(s.clone().reshape([1, s.shape()[0], s.shape()[1], s.shape()[2]]).unwrap())).collect();
    let y = g.decode(z, &sk).unwrap();
    let total = g.tape.sum(y).unwrap();
    g.tape.backward(total).unwrap();
    let grad = g.tape.grad(z).unwrap();
    assert!(grad[..Z_AUD].iter().any(|&v| v != 0.0));
}

#[test]
fn generate_video_contract() {
    let p = params(0.25);
    let c = corpus(2, 1.0);
    let gen = generate_video_detailed(&c[0], 0, &p, 1).unwrap();
    assert_eq!(gen.frames.shape(), &[25, 3, 96, 128]);
    assert_eq!(gen.z_aud.shape(), &[25, Z_AUD]);
    assert_eq!(gen.z_id.shape(), &[Z_ID]);
    assert_eq!(gen.z_n.shape(), &[25, Z_N]);
    assert_eq!(gen.latent.shape(), &[25, LATENT]);
    assert_eq!(gen.frames, generate_video(&c[0], 0, &p, 1).unwrap());
    assert!(generate_video(&c[0], 25, &p, 1).is_err());

    // same audio, still from another speaker: identity pathway is live
    let mut swapped = c[0].clone();
    let mut frames = Vec::with_capacity(25 * FRAME_LEN);
    for t in 0..25 {
        frames.extend_from_slice(if t == 0 { c[2].video.frame(0) } else { c[0].video.frame(t) });
    }
    swapped.video = vgs_core::avdata::VideoClip::new(frames, 25).unwrap();
    assert_ne!(generate_video(&swapped, 0, &p, 1).unwrap(), gen.frames);
}

#[test]
fn generated_frame_gradient_matches_finite_differences() {
    let p64: ModelParams<f64> = ModelParams::<f32>::init(ArchConfig::new(0.125).unwrap(), 4).cast();
    let s = &corpus(1, 0.2)[0];
    let t = s.frames() - 1;
    let windows = s.windows.cast::<f64>();
    let still = s.video.frame_tensor(0).cast::<f64>().reshape([1, 3, 96, 128]).unwrap();
    // linear random projection of the frame: smooth in the frame and small in magnitude,
    // which keeps the rounding floor of the difference quotient low
    let mut prng = ChaCha8Rng::seed_from_u64(3);
    let proj = Tensor::new([1, 3, 96, 128], (0..FRAME_LEN).map(|_| prng.gen_range(-1.0..1.0)).collect()).unwrap();
    let draws = noise_draws::<f64>(s.frames(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

    let loss_and_grads = |p: &ModelParams<f64>, want_grads: bool| {
        let mut g = Graph::new(p, Mode::Eval, want_grads);
        let (w, st, d) = (g.tape.constant(windows.clone()), g.tape.constant(still.clone()), g.tape.constant(draws.clone()));
        let v = g.generate(w, st, d).unwrap();
        let frame = g.tape.narrow(v.frames, 0, t, 1).unwrap();
        let r = g.tape.constant(proj.clone());
        let weighted = g.tape.mul(frame, r).unwrap();
        let loss = g.tape.sum(weighted).unwrap();
        let value = g.tape.value(loss).item();
        if !want_grads {
            return (value, vec![]);
        }
        g.tape.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> = g.param_vars().iter().map(|&v| g.tape.grad(v).map_or(vec![], <[f64]>::to_vec)).collect();
        (value, grads)
    };

    // Per-op checks hold 1e-4 too; composed through thousands of ReLUs a probe step
    // can straddle a kink, detected by disagreeing one-sided slopes and retried shorter.
    const TOL: f64 = 1e-4;
    // rounding noise of a difference quotient: |tanh| <= 1 and |proj| <= 1
    let floor = |h: f64| f64::EPSILON * FRAME_LEN as f64 / h;
    let (base, grads) = loss_and_grads(&p64, true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinked) = (0, 0);
    for (i, name) in p64.names.iter().enumerate() {
        assert!(!grads[i].is_empty(), "{name} has no gradient");
        // the largest-gradient entry plus one random entry per tensor
        let big = (0..grads[i].len()).max_by(|&a, &b| grads[i][a].abs().total_cmp(&grads[i][b].abs())).unwrap();
        for j in [big, rng.gen_range(0..grads[i].len())] {
            let analytic = grads[i][j];
            let smooth = [1e-4, 1e-5, 1e-6, 1e-7].into_iter().find_map(|h| {
                let mut probe = p64.clone();
                probe.tensors[i].data_mut()[j] += h;
                let (up, _) = loss_and_grads(&probe, false);
                probe.tensors[i].data_mut()[j] -= 2.0 * h;
                let (down, _) = loss_and_grads(&probe, false);
                let (fwd, bwd) = ((up - base) / h, (base - down) / h);
                ((fwd - bwd).abs() <= TOL * fwd.abs().max(bwd.abs()) + 2.0 * floor(h)).then(|| ((up - down) / (2.0 * h), h))
            });
            let Some((numeric, h)) = smooth else {
                kinked += 1;
                continue;
            };
            if analytic.abs().max(numeric.abs()) * TOL > floor(h) {
                let err = relative_error(analytic, numeric);
                assert!(err <= TOL, "{name}[{j}]: analytic {analytic} numeric {numeric} rel {err} (h {h})");
                worst = worst.max(err);
                checked += 1;
            } else {
                assert!((analytic - numeric).abs() <= 4.0 * floor(h), "{name}[{j}]: {analytic} vs {numeric} below floor");
            }
        }
    }
    assert!(kinked * 2 <= checked, "{kinked} nonsmooth probes vs {checked} checked");
    assert!(checked * 2 >= p64.names.len(), "only {checked} entries above the noise floor");
    assert!(worst <= TOL);
}

#[test]
fn every_parameter_gets_gradient_after_init() {
    let p = params(0.25);
    let c = corpus(2, 1.0);
    let batch: Vec<&AlignedSample> = c.iter().collect();
    let out = reconstruction_gradients(&batch, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(out.loss > 0.0 && out.loss <= 2.0);
    for (name, g) in p.names.iter().zip(&out.grads) {
        let g = g.as_ref().unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(g.iter().any(|&v| v != 0.0), "{name} has an all-zero gradient");
    }
}
