mod common;
use common::{frames_to_f64, oracle_fd, OracleModel};
use okfem_core::io::{synth_video, SynthConfig};
use okfem_core::stream::{FirstFramePolicy, OkfemConfig, OkfemModel};
use okfem_core::training::{loss_gradients, LossConfig};

#[test]
#[ignore]
fn diag_group_errors() {
    let config = OkfemConfig {
        input_shape: (3, 16, 16),
        backbone_layers: 1,
        backbone_channels: 8,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 2024).unwrap();
    let sample = synth_video(&SynthConfig {
        num_frames: 8, frame_shape: (3, 16, 16), num_events: 1, noise_level: 0.05, seed: 2024,
    }).unwrap();
    let cfg = LossConfig { alpha: 0.6, beta: 0.42, ste_temperature: 1.0, score_scale: 1.0 };
    let (grads, _) = loss_gradients(&model, &sample.frames, &sample.gt, &cfg).unwrap();
    let mut oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&sample.frames);
    let groups: Vec<(&str, usize, Vec<f32>)> = vec![
        ("th", 0, grads.th.data().to_vec()),
        ("response_w", 0, grads.response.weights.data().to_vec()),
        ("offset_w", 0, grads.offset.weights.data().to_vec()),
        ("backbone_w", 0, grads.backbone[0].weights.data().to_vec()),
    ];
    for (g, layer, a) in groups {
        let n = a.len();
        let step = (n / 60).max(1);
        let mut max_diff = 0.0f64; let mut max_fd = 0.0f64; let mut max_rel_at = (0usize, 0.0f64);
        for idx in (0..n).step_by(step) {
            let fd = oracle_fd(&mut oracle, g, layer, idx, 1e-5, &ff, &sample.gt, &cfg);
            let d = (a[idx] as f64 - fd).abs();
            if d > max_diff { max_diff = d; }
            if fd.abs() > max_fd { max_fd = fd.abs(); }
            let rel = d / fd.abs().max(1e-12);
            if rel > max_rel_at.1 { max_rel_at = (idx, rel); }
        }
        println!("{g}: max|a-fd|={max_diff:.3e} max|fd|={max_fd:.3e} vec_rel={:.3e} worst_coord_rel={:.2e}@{}",
            max_diff / max_fd.max(1e-12), max_rel_at.1, max_rel_at.0);
    }
}

#[test]
#[ignore]
fn diag_offset_eps_sweep() {
    let config = OkfemConfig {
        input_shape: (3, 16, 16),
        backbone_layers: 1,
        backbone_channels: 8,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 2024).unwrap();
    let sample = synth_video(&SynthConfig {
        num_frames: 8, frame_shape: (3, 16, 16), num_events: 1, noise_level: 0.05, seed: 2024,
    }).unwrap();
    let cfg = LossConfig { alpha: 0.6, beta: 0.42, ste_temperature: 1.0, score_scale: 1.0 };
    let (grads, _) = loss_gradients(&model, &sample.frames, &sample.gt, &cfg).unwrap();
    let mut oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&sample.frames);
    for idx in [525usize, 526, 532, 540, 1203, 77] {
        let a = grads.offset.weights.data()[idx];
        print!("offset_w[{idx}] analytic={a:.6e} fd:");
        for eps in [1e-5, 1e-6, 1e-7, 1e-8] {
            let fd = oracle_fd(&mut oracle, "offset_w", 0, idx, eps, &ff, &sample.gt, &cfg);
            print!(" {fd:.6e}(e={eps:.0e})");
        }
        println!();
    }
}

#[test]
#[ignore]
fn diag_adaptive_check() {
    let config = OkfemConfig {
        input_shape: (3, 16, 16),
        backbone_layers: 1,
        backbone_channels: 8,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 2024).unwrap();
    let sample = synth_video(&SynthConfig {
        num_frames: 8, frame_shape: (3, 16, 16), num_events: 1, noise_level: 0.05, seed: 2024,
    }).unwrap();
    let cfg = LossConfig { alpha: 0.6, beta: 0.42, ste_temperature: 1.0, score_scale: 1.0 };
    let (grads, _) = loss_gradients(&model, &sample.frames, &sample.gt, &cfg).unwrap();
    let mut oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&sample.frames);
    for (g, a) in [("offset_w", grads.offset.weights.data().to_vec()),
                   ("backbone_w", grads.backbone[0].weights.data().to_vec())] {
        let n = a.len();
        let scale = a.iter().map(|v| v.abs()).fold(0.0f32, f32::max) as f64;
        let step = (n / 80).max(1);
        let (mut smooth, mut kinks, mut small) = (0, 0, 0);
        let mut worst = 0.0f64;
        for idx in (0..n).step_by(step) {
            let fd5 = oracle_fd(&mut oracle, g, 0, idx, 1e-5, &ff, &sample.gt, &cfg);
            let fd6 = oracle_fd(&mut oracle, g, 0, idx, 1e-6, &ff, &sample.gt, &cfg);
            if (fd5 - fd6).abs() > 0.02 * fd5.abs().max(fd6.abs()) + 1e-12 {
                kinks += 1;
                continue;
            }
            if (a[idx] as f64).abs().max(fd6.abs()) < 1e-2 * scale {
                small += 1;
                continue;
            }
            smooth += 1;
            let rel = (a[idx] as f64 - fd6).abs() / (a[idx] as f64).abs().max(fd6.abs());
            if rel > worst { worst = rel; }
        }
        println!("{g}: scale={scale:.2e} smooth={smooth} kinks={kinks} small={small} worst_rel={worst:.2e}");
    }
}

#[test]
#[ignore]
fn diag_s_values() {
    let config = OkfemConfig {
        input_shape: (3, 16, 16),
        backbone_layers: 1,
        backbone_channels: 8,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 2024).unwrap();
    let sample = synth_video(&SynthConfig {
        num_frames: 8, frame_shape: (3, 16, 16), num_events: 1, noise_level: 0.05, seed: 2024,
    }).unwrap();
    let (scores, _) = okfem_core::training::sequence_scores(&model, &sample.frames).unwrap();
    let oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&sample.frames);
    let th_sum: f64 = oracle.th.iter().sum();
    let mut prev: Option<Vec<f64>> = None;
    for (t, fr) in ff.iter().enumerate() {
        let d = common::oracle_receptive_field(&oracle, fr);
        if let Some(dp) = &prev {
            let s: f64 = d.iter().zip(dp).map(|(a, b)| a - b).sum::<f64>() - th_sum;
            println!("t={t} impl_S={:.9} oracle_S={s:.9} diff={:.3e}", scores[t], scores[t] as f64 - s);
        }
        prev = Some(d);
    }
}

#[test]
#[ignore]
fn diag_local_scan() {
    let config = OkfemConfig {
        input_shape: (3, 16, 16),
        backbone_layers: 1,
        backbone_channels: 8,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 2024).unwrap();
    let sample = synth_video(&SynthConfig {
        num_frames: 8, frame_shape: (3, 16, 16), num_events: 1, noise_level: 0.05, seed: 2024,
    }).unwrap();
    let cfg = LossConfig { alpha: 0.6, beta: 0.42, ste_temperature: 1.0, score_scale: 1.0 };
    let (grads, _) = loss_gradients(&model, &sample.frames, &sample.gt, &cfg).unwrap();
    let mut oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&sample.frames);
    let idx = 525usize;
    println!("analytic = {:.9e}", grads.offset.weights.data()[idx]);
    // secant slopes over nested scales around 0
    let base = common::oracle_surrogate_loss(&oracle, &ff, &sample.gt, &cfg);
    let orig = oracle.offset.weights[idx];
    for scale in [1e-4f64, 1e-5, 1e-6, 1e-7] {
        let mut line = format!("scale {scale:.0e}: ");
        for k in [-2i32, -1, 1, 2] {
            let t = k as f64 * scale;
            oracle.offset.weights[idx] = orig + t;
            let l = common::oracle_surrogate_loss(&oracle, &ff, &sample.gt, &cfg);
            line += &format!("slope[{k:+}]={:.6e} ", (l - base) / t);
        }
        oracle.offset.weights[idx] = orig;
        println!("{line}");
    }
}

#[test]
#[ignore]
fn diag_minimal_case() {
    use okfem_core::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let config = OkfemConfig {
        input_shape: (2, 5, 5),
        backbone_layers: 0,
        backbone_channels: 0,
        deform_kernel_size: 3,
        first_frame_policy: FirstFramePolicy::NeverKeyframe,
    };
    let model = OkfemModel::init(config, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let frames: Vec<Tensor> = (0..3)
        .map(|_| Tensor::from_fn(&[2, 5, 5], |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let gtk = okfem_core::training::GroundTruthKeyframes::new(vec![1], 3).unwrap();
    let cfg = LossConfig { alpha: 0.6, beta: 0.42, ste_temperature: 1.0, score_scale: 1.0 };
    let (grads, _) = loss_gradients(&model, &frames, &gtk, &cfg).unwrap();
    let mut oracle = OracleModel::from_model(&model);
    let ff = frames_to_f64(&frames);
    let mut worst = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for idx in 0..grads.offset.weights.numel() {
        let a = grads.offset.weights.data()[idx] as f64;
        let fd7 = oracle_fd(&mut oracle, "offset_w", 0, idx, 1e-7, &ff, &gtk, &cfg);
        let d = (a - fd7).abs();
        if d > worst.3 { worst = (idx, a, fd7, d); }
    }
    println!("offset_w worst: idx={} analytic={:.6e} fd={:.6e} absdiff={:.3e}", worst.0, worst.1, worst.2, worst.3);
    let mut worst = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for idx in 0..grads.response.weights.numel() {
        let a = grads.response.weights.data()[idx] as f64;
        let fd7 = oracle_fd(&mut oracle, "response_w", 0, idx, 1e-7, &ff, &gtk, &cfg);
        let d = (a - fd7).abs();
        if d > worst.3 { worst = (idx, a, fd7, d); }
    }
    println!("response_w worst: idx={} analytic={:.6e} fd={:.6e} absdiff={:.3e}", worst.0, worst.1, worst.2, worst.3);
}
