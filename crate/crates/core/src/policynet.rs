//! Two-branch actor-critic MLP over the 200-value state vector, with
//! hand-written backpropagation.
//!
//! ```text
//! input(200) -> fuse(128, relu) -+-> actor1(64, relu) -> actor2(6) -> softmax
//!                                +-> critic1(64, relu) -> critic2(1)
//! ```

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::gridhouse::Action;
use crate::state::{StateTensor, GRID_CELLS};

pub const INPUT: usize = 2 * GRID_CELLS;
pub const FUSE: usize = 128;
pub const BRANCH: usize = 64;
pub const ACTIONS: usize = Action::COUNT;

pub const CHECKPOINT_TAG: &str = "gaple-policy v1";

pub const DEFAULT_BETA_ENTROPY: f64 = 0.01;
pub const DEFAULT_VALUE_COEFF: f64 = 0.5;
pub const DEFAULT_CLIP: f64 = 40.0;

/// An affine layer stored row-major (`outputs` rows of `inputs` weights)
/// followed by its bias, at `offset` in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    const fn new(offset: usize, inputs: usize, outputs: usize) -> Self {
        Dense { offset, inputs, outputs }
    }

    const fn end(&self) -> usize {
        self.bias() + self.outputs
    }

    pub const fn bias(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }

    fn apply(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &p[self.offset..self.bias()];
        let b = &p[self.bias()..self.end()];
        for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(self.inputs).zip(b)) {
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and, when asked, `dx = W^T dy`.
    fn backprop(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let (gw, gb) = g[self.offset..self.end()].split_at_mut(self.inputs * self.outputs);
        for ((row, &d), gbias) in gw.chunks_exact_mut(self.inputs).zip(dy).zip(gb) {
            *gbias += d;
            if d != 0.0 {
                row.iter_mut().zip(x).for_each(|(g, &xi)| *g += d * xi);
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = &p[self.offset..self.bias()];
            for (row, &d) in w.chunks_exact(self.inputs).zip(dy) {
                if d != 0.0 {
                    dx.iter_mut().zip(row).for_each(|(v, &wi)| *v += d * wi);
                }
            }
        }
    }
}

pub const FUSE_LAYER: Dense = Dense::new(0, INPUT, FUSE);
pub const ACTOR_HIDDEN: Dense = Dense::new(FUSE_LAYER.end(), FUSE, BRANCH);
pub const ACTOR_HEAD: Dense = Dense::new(ACTOR_HIDDEN.end(), BRANCH, ACTIONS);
pub const CRITIC_HIDDEN: Dense = Dense::new(ACTOR_HEAD.end(), FUSE, BRANCH);
pub const CRITIC_HEAD: Dense = Dense::new(CRITIC_HIDDEN.end(), BRANCH, 1);
pub const LAYERS: [Dense; 5] = [FUSE_LAYER, ACTOR_HIDDEN, ACTOR_HEAD, CRITIC_HIDDEN, CRITIC_HEAD];

pub const PARAM_COUNT: usize = CRITIC_HEAD.end();

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("action index {0} out of range")]
    BadAction(usize),
    #[error("empty rollout")]
    EmptyRollout,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradient(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action_probs: [f64; ACTIONS],
    pub value: f64,
}

/// One rollout entry: state, taken action and its n-step return.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StateTensor,
    pub action: usize,
    pub ret: f64,
}

/// Activations kept for the backward pass.
struct Trace {
    x: [f64; INPUT],
    fused: [f64; FUSE],
    actor: [f64; BRANCH],
    critic: [f64; BRANCH],
    probs: [f64; ACTIONS],
    value: f64,
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn softmax(logits: &[f64; ACTIONS]) -> [f64; ACTIONS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|z| (z - max).exp());
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

impl PolicyParams {
    pub fn zeros() -> Self {
        PolicyParams(vec![0.0; PARAM_COUNT])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn trace(&self, s: &StateTensor) -> Result<Trace, PolicyError> {
        let p = &self.0;
        let x = s.input();
        let mut fused = [0.0; FUSE];
        FUSE_LAYER.apply(p, &x, &mut fused);
        relu(&mut fused);
        let mut actor = [0.0; BRANCH];
        ACTOR_HIDDEN.apply(p, &fused, &mut actor);
        relu(&mut actor);
        let mut logits = [0.0; ACTIONS];
        ACTOR_HEAD.apply(p, &actor, &mut logits);
        let mut critic = [0.0; BRANCH];
        CRITIC_HIDDEN.apply(p, &fused, &mut critic);
        relu(&mut critic);
        let mut value = [0.0];
        CRITIC_HEAD.apply(p, &critic, &mut value);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(PolicyError::NonFinite("actor logits"));
        }
        if !value[0].is_finite() {
            return Err(PolicyError::NonFinite("critic value"));
        }
        Ok(Trace {
            x,
            fused,
            actor,
            critic,
            probs: softmax(&logits),
            value: value[0],
        })
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> std::io::Result<()> {
        checkpoint::write_params(w, CHECKPOINT_TAG, &self.0)
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, PolicyError> {
        Ok(PolicyParams(checkpoint::read_params(r, CHECKPOINT_TAG, Some(PARAM_COUNT))?))
    }

    /// FNV-1a over the parameter bits.
    pub fn checksum(&self) -> u64 {
        self.0.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases.
pub fn init_params(seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; PARAM_COUNT];
    for layer in LAYERS {
        let bound = 1.0 / (layer.inputs as f64).sqrt();
        for w in &mut p[layer.offset..layer.bias()] {
            *w = rng.random_range(-bound..bound);
        }
    }
    PolicyParams(p)
}

pub fn forward(params: &PolicyParams, s: &StateTensor) -> Result<PolicyOutput, PolicyError> {
    let t = params.trace(s)?;
    Ok(PolicyOutput {
        action_probs: t.probs,
        value: t.value,
    })
}

/// Mean advantage actor-critic loss over the rollout:
/// `-log pi(a|s) * A + value_coeff * (R - V)^2 - beta_entropy * H(pi)`,
/// with `A = R - V` evaluated at `params`.
pub fn loss(params: &PolicyParams, rollout: &[Transition], beta_entropy: f64, value_coeff: f64) -> Result<f64, PolicyError> {
    let adv = advantages(params, rollout)?;
    surrogate_loss(params, rollout, &adv, beta_entropy, value_coeff)
}

/// `R_t - V(s_t)` for every entry.
pub fn advantages(params: &PolicyParams, rollout: &[Transition]) -> Result<Vec<f64>, PolicyError> {
    rollout
        .iter()
        .map(|tr| Ok(tr.ret - params.trace(&tr.state)?.value))
        .collect()
}

/// The loss as a function of `params` with the policy-term advantages held
/// fixed at `detached`; `backward` is its exact gradient when `detached`
/// comes from the same parameters.
pub fn surrogate_loss(
    params: &PolicyParams,
    rollout: &[Transition],
    detached: &[f64],
    beta_entropy: f64,
    value_coeff: f64,
) -> Result<f64, PolicyError> {
    if rollout.is_empty() {
        return Err(PolicyError::EmptyRollout);
    }
    let mut total = 0.0;
    for (tr, &fixed) in rollout.iter().zip(detached) {
        if tr.action >= ACTIONS {
            return Err(PolicyError::BadAction(tr.action));
        }
        let t = params.trace(&tr.state)?;
        let adv = tr.ret - t.value;
        total += -t.probs[tr.action].ln() * fixed + value_coeff * adv * adv - beta_entropy * entropy(&t.probs);
    }
    Ok(total / rollout.len() as f64)
}

pub fn backward(
    params: &PolicyParams,
    rollout: &[Transition],
    beta_entropy: f64,
    value_coeff: f64,
) -> Result<PolicyGradient, PolicyError> {
    if rollout.is_empty() {
        return Err(PolicyError::EmptyRollout);
    }
    let p = &params.0;
    let mut g = vec![0.0; PARAM_COUNT];
    let scale = 1.0 / rollout.len() as f64;
    let mut d_actor = [0.0; BRANCH];
    let mut d_critic = [0.0; BRANCH];
    let mut d_fused_a = [0.0; FUSE];
    let mut d_fused_c = [0.0; FUSE];
    for tr in rollout {
        if tr.action >= ACTIONS {
            return Err(PolicyError::BadAction(tr.action));
        }
        let t = params.trace(&tr.state)?;
        let adv = tr.ret - t.value;
        let h = entropy(&t.probs);

        let mut d_logits = [0.0; ACTIONS];
        for (j, d) in d_logits.iter_mut().enumerate() {
            let pj = t.probs[j];
            let onehot = if j == tr.action { 1.0 } else { 0.0 };
            let ent = if pj > 0.0 { beta_entropy * pj * (pj.ln() + h) } else { 0.0 };
            *d = scale * ((pj - onehot) * adv + ent);
        }
        let d_value = [scale * -2.0 * value_coeff * adv];

        ACTOR_HEAD.backprop(p, &mut g, &t.actor, &d_logits, Some(&mut d_actor));
        mask_relu(&mut d_actor, &t.actor);
        ACTOR_HIDDEN.backprop(p, &mut g, &t.fused, &d_actor, Some(&mut d_fused_a));

        CRITIC_HEAD.backprop(p, &mut g, &t.critic, &d_value, Some(&mut d_critic));
        mask_relu(&mut d_critic, &t.critic);
        CRITIC_HIDDEN.backprop(p, &mut g, &t.fused, &d_critic, Some(&mut d_fused_c));

        for (a, c) in d_fused_a.iter_mut().zip(&d_fused_c) {
            *a += c;
        }
        mask_relu(&mut d_fused_a, &t.fused);
        FUSE_LAYER.backprop(p, &mut g, &t.x, &d_fused_a, None);
    }
    if !g.iter().all(|v| v.is_finite()) {
        return Err(PolicyError::NonFinite("gradient"));
    }
    Ok(PolicyGradient(g))
}

fn mask_relu(d: &mut [f64], activation: &[f64]) {
    for (d, &a) in d.iter_mut().zip(activation) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Plain SGD step with per-component clipping of the gradient to `±clip`.
pub fn apply_gradient(params: &mut PolicyParams, grad: &PolicyGradient, lr: f64, clip: f64) -> Result<(), PolicyError> {
    if params.0.len() != grad.0.len() {
        return Err(PolicyError::Dimension {
            expected: params.0.len(),
            found: grad.0.len(),
        });
    }
    for (p, g) in params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g.clamp(-clip, clip);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(rng: &mut ChaCha8Rng) -> StateTensor {
        let mut s = StateTensor::zeros();
        s.mask10.iter_mut().for_each(|v| *v = if rng.random_bool(0.3) { rng.random() } else { 0.0 });
        s.depth10.iter_mut().for_each(|v| *v = rng.random());
        s
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(PARAM_COUNT, 200 * 128 + 128 + 128 * 64 + 64 + 64 * 6 + 6 + 128 * 64 + 64 + 64 + 1);
        assert_eq!(PARAM_COUNT, 42_695);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(0);
        assert_eq!(a, init_params(0));
        assert_ne!(a, init_params(1));
        for l in LAYERS {
            assert!(a.0[l.bias()..l.end()].iter().all(|&b| b == 0.0));
        }
        let head = &a.0[ACTOR_HEAD.offset..ACTOR_HEAD.bias()];
        assert!(head.iter().all(|w| w.abs() <= 1.0 / 8.0));
        assert!(head.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn zero_params_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&PolicyParams::zeros(), &random_state(&mut rng)).unwrap();
        assert!(out.action_probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn probabilities_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let out = forward(&init_params(seed), &random_state(&mut rng)).unwrap();
            assert!((out.action_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.action_probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng);
        let p = init_params(3);
        let mut shifted = p.clone();
        for b in &mut shifted.0[ACTOR_HEAD.bias()..ACTOR_HEAD.end()] {
            *b += 17.5;
        }
        let (a, b) = (forward(&p, &s).unwrap(), forward(&shifted, &s).unwrap());
        for (x, y) in a.action_probs.iter().zip(&b.action_probs) {
            assert!((x - y).abs() < 1e-9);
        }
        let argmax = |v: &[f64; 6]| (0..6).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmax(&a.action_probs), argmax(&b.action_probs));
    }

    #[test]
    fn huge_logits_stay_finite() {
        let mut p = PolicyParams::zeros();
        p.0[ACTOR_HEAD.bias()] = 1e4;
        let out = forward(&p, &StateTensor::zeros()).unwrap();
        assert!((out.action_probs[0] - 1.0).abs() < 1e-12);
        p.0[ACTOR_HEAD.bias()] = f64::NAN;
        assert!(matches!(forward(&p, &StateTensor::zeros()), Err(PolicyError::NonFinite(_))));
    }

    #[test]
    fn zero_advantage_kills_policy_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(5);
        let s = random_state(&mut rng);
        let v = forward(&p, &s).unwrap().value;
        let rollout = vec![Transition { state: s, action: 2, ret: v }];
        let g = backward(&p, &rollout, 0.0, 0.5).unwrap();
        assert!(g.0[ACTOR_HIDDEN.offset..ACTOR_HEAD.end()].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_rollout_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = init_params(7);
        let rollout: Vec<Transition> = (0..4)
            .map(|i| Transition {
                state: random_state(&mut rng),
                action: i % 6,
                ret: rng.random(),
            })
            .collect();
        let doubled: Vec<Transition> = rollout.iter().flat_map(|t| [t.clone(), t.clone()]).collect();
        let (a, b) = (backward(&p, &rollout, 0.01, 0.5).unwrap(), backward(&p, &doubled, 0.01, 0.5).unwrap());
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn backward_errors() {
        let p = init_params(0);
        assert!(matches!(backward(&p, &[], 0.01, 0.5), Err(PolicyError::EmptyRollout)));
        let bad = vec![Transition {
            state: StateTensor::zeros(),
            action: 6,
            ret: 0.0,
        }];
        assert!(matches!(backward(&p, &bad, 0.01, 0.5), Err(PolicyError::BadAction(6))));
    }

    #[test]
    fn gradient_step_rules() {
        let mut p = init_params(0);
        let before = p.clone();
        apply_gradient(&mut p, &PolicyGradient(vec![0.0; PARAM_COUNT]), 0.1, DEFAULT_CLIP).unwrap();
        assert_eq!(p, before);

        let mut g = vec![0.0; PARAM_COUNT];
        g[0] = 1.0;
        apply_gradient(&mut p, &PolicyGradient(g.clone()), 0.1, DEFAULT_CLIP).unwrap();
        assert!((before.0[0] - p.0[0] - 0.1).abs() < 1e-15);

        let mut p = before.clone();
        g[0] = 100.0;
        apply_gradient(&mut p, &PolicyGradient(g), 0.01, 40.0).unwrap();
        assert!((before.0[0] - p.0[0] - 0.4).abs() < 1e-15);

        assert!(matches!(
            apply_gradient(&mut p, &PolicyGradient(vec![0.0; 3]), 0.1, 40.0),
            Err(PolicyError::Dimension { .. })
        ));
    }

    #[test]
    fn entropy_bonus_raises_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = init_params(9);
        // sharpen the policy so there is entropy to gain
        for (i, b) in p.0[ACTOR_HEAD.bias()..ACTOR_HEAD.end()].iter_mut().enumerate() {
            *b = i as f64 * 0.7;
        }
        let s = random_state(&mut rng);
        let out = forward(&p, &s).unwrap();
        let rollout = vec![Transition {
            state: s.clone(),
            action: 0,
            ret: out.value,
        }];
        let g = backward(&p, &rollout, 0.05, 0.0).unwrap();
        apply_gradient(&mut p, &g, 1e-3, DEFAULT_CLIP).unwrap();
        let after = forward(&p, &s).unwrap();
        assert!(entropy(&after.action_probs) > entropy(&out.action_probs));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_params(12);
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(b"gaple-policy v1\n"));
        let q = PolicyParams::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p.checksum(), q.checksum());
    }
}
