//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use aoi_sense::env::{self, ChannelParams, CodebookConfig, ScenarioSample, TrajectoryConfig};
use aoi_sense::nn::{dense_stack, Gradients, Mlp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let input = rng.random_range(1..=8);
    let depth = rng.random_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
    let output = rng.random_range(2..=8);
    let mut m = Mlp::new(&dense_stack(input, &hidden, output), rng.random()).unwrap();
    // nonzero biases so ReLU units are not all sitting on the same side
    for layer in m.layers_mut() {
        for b in &mut layer.biases {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs() + n.abs();
    if scale < 1e-8 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn param_mut(m: &mut Mlp, k: usize, is_bias: bool, i: usize) -> &mut f64 {
    let l = &mut m.layers_mut()[k];
    if is_bias {
        &mut l.biases[i]
    } else {
        &mut l.weights[i]
    }
}

/// Central differences of `loss` over every parameter, compared against `grads`.
pub fn max_fd_error(model: &Mlp, grads: &Gradients, loss: impl Fn(&Mlp) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for k in 0..model.layers().len() {
        for (is_bias, len) in [
            (false, model.layers()[k].weights.len()),
            (true, model.layers()[k].biases.len()),
        ] {
            for i in 0..len {
                let orig = *param_mut(&mut probe, k, is_bias, i);
                *param_mut(&mut probe, k, is_bias, i) = orig + H;
                let up = loss(&probe);
                *param_mut(&mut probe, k, is_bias, i) = orig - H;
                let down = loss(&probe);
                *param_mut(&mut probe, k, is_bias, i) = orig;
                let numeric = (up - down) / (2.0 * H);
                let analytic = if is_bias {
                    grads.biases[k][i]
                } else {
                    grads.weights[k][i]
                };
                worst = worst.max(relative_error(analytic, numeric));
            }
        }
    }
    worst
}

/// Synthetic street scenario with the default geometry.
pub fn scenario(num_slots: usize, num_beams: usize, seed: u64) -> Vec<ScenarioSample> {
    let traj = TrajectoryConfig {
        num_slots,
        seed,
        ..Default::default()
    };
    let cb = CodebookConfig {
        num_antennas: num_beams,
        num_beams,
    };
    env::generate_trajectory(&traj, &cb, &ChannelParams::default()).unwrap()
}
