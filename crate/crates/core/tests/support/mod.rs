//! Helpers shared by the oracle tests and the acceptance runner.
#![allow(dead_code)]

use gaple::perception::{joint_loss, perception_backward, perception_forward, PerceptionParams, PerceptionSample};
use gaple::policynet::{self, advantages, backward, init_params, surrogate_loss, PolicyParams, Transition, PARAM_COUNT};
use gaple::state::StateTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_state(rng: &mut ChaCha8Rng) -> StateTensor {
    let mut s = StateTensor::zeros();
    s.mask10.iter_mut().for_each(|v| *v = if rng.random_bool(0.4) { rng.random() } else { 0.0 });
    s.depth10.iter_mut().for_each(|v| *v = rng.random());
    s
}

/// Relative error of the analytic gradient against central differences over a
/// coordinate sample covering every layer's weights and biases.
pub fn policy_gradient_rel_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params(seed);
    p.0.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    let n = rng.random_range(1..6);
    let rollout: Vec<Transition> = (0..n)
        .map(|_| Transition {
            state: random_state(&mut rng),
            action: rng.random_range(0..6),
            ret: rng.random_range(-1.0..2.0),
        })
        .collect();
    let (beta, c) = (rng.random_range(0.0..0.1), rng.random_range(0.1..1.0));
    let g = backward(&p, &rollout, beta, c).unwrap();
    let adv = advantages(&p, &rollout).unwrap();
    let l = |q: &PolicyParams| surrogate_loss(q, &rollout, &adv, beta, c).unwrap();
    let eps = 1e-5;
    let mut coords: Vec<usize> = policynet::LAYERS
        .iter()
        .flat_map(|l| {
            let b = l.bias();
            vec![l.offset, b - 1, b, b + l.outputs - 1]
        })
        .collect();
    coords.extend((0..400).map(|_| rng.random_range(0..PARAM_COUNT)));
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for &i in &coords {
        let mut plus = p.clone();
        plus.0[i] += eps;
        let mut minus = p.clone();
        minus.0[i] -= eps;
        let fd = (l(&plus) - l(&minus)) / (2.0 * eps);
        num += (fd - g.0[i]).powi(2);
        den += fd.powi(2).max(g.0[i].powi(2));
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

pub fn random_sample(rng: &mut ChaCha8Rng, classes: usize, w: usize, h: usize) -> PerceptionSample {
    PerceptionSample {
        width: w,
        height: h,
        rgb: (0..3 * w * h).map(|_| rng.random()).collect(),
        gt_semantic: (0..w * h).map(|_| rng.random_range(0..classes) as u16).collect(),
        gt_depth: (0..w * h).map(|_| rng.random()).collect(),
    }
}

/// Norm-relative error between analytic and central-difference gradients on
/// a coordinate sample spanning all seven layers.
pub fn perception_gradient_rel_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..6);
    let mut p = PerceptionParams::init(classes, seed);
    p.data.iter_mut().for_each(|v| *v += rng.random_range(-0.02..0.02));
    let (w, h) = if seed % 2 == 0 { (8, 8) } else { (12, 8) };
    let s = random_sample(&mut rng, classes, w, h);
    let lambda = rng.random_range(0.01..2.0);
    let (_, g) = perception_backward(&p, &s, lambda).unwrap();
    let loss = |q: &PerceptionParams| joint_loss(&perception_forward(q, &s.rgb, w, h).unwrap(), &s, lambda);
    let mut coords: Vec<usize> = p
        .arch
        .layers()
        .iter()
        .flat_map(|l| [l.offset, l.bias(), l.bias() - 1])
        .collect();
    coords.extend((0..150).map(|_| rng.random_range(0..p.data.len())));
    let eps = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for &i in &coords {
        let mut a = p.clone();
        a.data[i] += eps;
        let mut b = p.clone();
        b.data[i] -= eps;
        let fd = (loss(&a) - loss(&b)) / (2.0 * eps);
        num += (fd - g[i]).powi(2);
        den += fd.powi(2).max(g[i].powi(2));
    }
    num.sqrt() / den.sqrt().max(1e-12)
}
