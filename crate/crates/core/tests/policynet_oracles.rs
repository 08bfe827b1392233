mod support;

use gaple::policynet::{self, backward, forward, init_params, PolicyParams, Transition, PARAM_COUNT};
use support::{policy_gradient_rel_error, random_state};
use gaple::state::StateTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation that only knows the documented flat layout:
/// fuse(200->128), actor(128->64->6), critic(128->64->1), weights row-major
/// then bias, in that order.
fn reference_forward(p: &[f64], s: &StateTensor) -> ([f64; 6], f64) {
    let mut x = Vec::with_capacity(200);
    x.extend_from_slice(&s.mask10);
    x.extend_from_slice(&s.depth10);
    let mut off = 0;
    let mut layer = |input: &[f64], n_out: usize, relu: bool| -> Vec<f64> {
        let n_in = input.len();
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = p[off + n_in * n_out + o];
            for i in 0..n_in {
                acc += p[off + o * n_in + i] * input[i];
            }
            out[o] = if relu && acc < 0.0 { 0.0 } else { acc };
        }
        off += n_in * n_out + n_out;
        out
    };
    let fused = layer(&x, 128, true);
    let a1 = layer(&fused, 64, true);
    let logits = layer(&a1, 6, false);
    let c1 = layer(&fused, 64, true);
    let v = layer(&c1, 1, false);
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    let mut probs = [0.0; 6];
    for i in 0..6 {
        probs[i] = e[i] / sum;
    }
    (probs, v[0])
}

#[test]
fn forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for seed in 0..5 {
        let mut p = init_params(seed);
        // non-zero biases so the bias placement is exercised
        p.0.iter_mut().for_each(|v| *v += rng.random_range(-0.01..0.01));
        let s = random_state(&mut rng);
        let out = forward(&p, &s).unwrap();
        let (probs, v) = reference_forward(&p.0, &s);
        for (a, b) in out.action_probs.iter().zip(&probs) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.value - v).abs() < 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..10 {
        let err = policy_gradient_rel_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn loss_is_detached_in_the_advantage() {
    // with value_coeff = 0 and beta = 0 the value head receives no gradient
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p: PolicyParams = init_params(5);
    let rollout = vec![Transition {
        state: random_state(&mut rng),
        action: 1,
        ret: 1.5,
    }];
    let g = backward(&p, &rollout, 0.0, 0.0).unwrap();
    let head = policynet::CRITIC_HIDDEN;
    assert!(g.0[head.offset..PARAM_COUNT].iter().all(|&v| v == 0.0));
}
