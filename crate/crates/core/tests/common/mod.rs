//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssd_core::dataset::ClassWeights;
use ssd_core::nnet::{BlockConfig, SmallCnn, SmallCnnConfig};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU or pooling kink even
    /// at the smallest step.
    pub skipped: usize,
}

/// Random two-block network on an 8x8x3 input, drawn from `seed`.
pub fn random_small_config(seed: u64) -> SmallCnnConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let block = |rng: &mut ChaCha8Rng| BlockConfig {
        out_channels: rng.gen_range(2..=6),
        stride: rng.gen_range(1..=2),
    };
    let first = block(&mut rng);
    let mut second = block(&mut rng);
    if first.stride == 2 {
        // 8 -> 4 -> pool 2 leaves room for one more unstrided block only
        second.stride = 1;
    }
    SmallCnnConfig {
        input_shape: [8, 8, 3],
        blocks: vec![first, second],
        num_classes: if rng.gen_bool(0.5) { 2 } else { 4 },
        input_offset: 0.0,
        input_scale: 1.0,
    }
}

/// Central-difference check of every parameter of a random f64 model on a
/// small weighted batch.
pub fn gradient_check(seed: u64) -> GradCheck {
    let cfg = random_small_config(seed);
    let k = cfg.num_classes;
    let mut model = SmallCnn::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // larger biases keep most units away from the ReLU kink
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        if i % 2 == 1 {
            for v in p.iter_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    let n = 4;
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f32> = (0..model.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            model.prepare_input(&raw).unwrap()
        })
        .collect();
    let targets: Vec<usize> = (0..n).map(|i| i % k).collect();
    let weights = ClassWeights {
        weights: (0..k).map(|c| 0.5 + c as f64 * 0.75).collect(),
    };

    let mut analytic = model.zero_grads();
    for (x, &t) in inputs.iter().zip(&targets) {
        model
            .accumulate(x, t, weights.get(t), 1.0 / n as f64, &mut analytic)
            .unwrap();
    }

    let signature = |m: &SmallCnn<f64>| -> Vec<Vec<u32>> {
        inputs.iter().map(|x| m.activation_signature(x).unwrap()).collect()
    };
    let base_sig = signature(&model);
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for ti in 0..analytic.len() {
        for j in 0..analytic[ti].len() {
            let theta = model.params()[ti][j];
            let mut numeric = None;
            for h in [1e-3, 1e-4, 1e-5] {
                model.params_mut()[ti][j] = theta + h;
                let (lp, sp) = (model.mean_loss(&inputs, &targets, &weights).unwrap(), signature(&model));
                model.params_mut()[ti][j] = theta - h;
                let (lm, sm) = (model.mean_loss(&inputs, &targets, &weights).unwrap(), signature(&model));
                model.params_mut()[ti][j] = theta;
                if sp == base_sig && sm == base_sig {
                    numeric = Some((lp - lm) / (2.0 * h));
                    break;
                }
            }
            let Some(num) = numeric else {
                out.skipped += 1;
                continue;
            };
            let a = analytic[ti][j];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-7);
            out.max_rel_err = out.max_rel_err.max(rel);
            out.checked += 1;
        }
    }
    out
}
