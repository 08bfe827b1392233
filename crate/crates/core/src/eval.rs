//! Episode rollouts under a step cap and success rates at multiples of the
//! minimal step count.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridhouse::{step, Action, Pose};
use crate::policynet::{forward, PolicyParams};
use crate::state::RewardTracker;
use crate::trainer::{sample_action, EpisodeTrace, TaskError, TaskPair, Terminal, TraceRecord};

pub const DEFAULT_CAP: usize = 1000;
pub const DEFAULT_STARTS: usize = 100;
/// Success is reported at 1x..K x the minimal step count.
pub const K: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pair {pair}: start {start} does not see the target")]
    InvisibleStart { pair: usize, start: Pose },
    #[error("pair {pair}: no goal pose reachable from {start}")]
    Unreachable { pair: usize, start: Pose },
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Anything that picks an action at a pose.
pub trait ActionSource: Sync {
    fn act(&self, pair: &TaskPair, pose: Pose, rng: &mut ChaCha8Rng) -> Action;
}

/// Uniform over the six actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl ActionSource for RandomPolicy {
    fn act(&self, _: &TaskPair, _: Pose, rng: &mut ChaCha8Rng) -> Action {
        Action::ALL[rng.random_range(0..Action::COUNT)]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub Action);

impl ActionSource for ConstantPolicy {
    fn act(&self, _: &TaskPair, _: Pose, _: &mut ChaCha8Rng) -> Action {
        self.0
    }
}

/// Follows the shortest path to the nearest goal pose.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePolicy;

impl ActionSource for OraclePolicy {
    fn act(&self, pair: &TaskPair, pose: Pose, _: &mut ChaCha8Rng) -> Action {
        pair.distances()
            .greedy_actions(&pair.house, pose)
            .first()
            .copied()
            .unwrap_or(Action::RotateLeft)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy distribution.
    #[default]
    Sample,
    /// Most probable action, lowest index on ties.
    Greedy,
}

#[derive(Clone, Debug)]
pub struct NetworkPolicy {
    pub params: PolicyParams,
    pub mode: ActionMode,
}

impl ActionSource for NetworkPolicy {
    fn act(&self, pair: &TaskPair, pose: Pose, rng: &mut ChaCha8Rng) -> Action {
        let state = pair.observe(pose, rng);
        let probs = forward(&self.params, &state).expect("checkpoint parameters are finite").action_probs;
        match self.mode {
            ActionMode::Sample => sample_action(&probs, rng),
            ActionMode::Greedy => {
                let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
                Action::from_index(best).expect("one probability per action")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOutcome {
    pub pair_id: usize,
    pub start: Pose,
    pub minimal: usize,
    pub taken: usize,
    pub success: bool,
}

pub fn run_episode(policy: &dyn ActionSource, pair: &TaskPair, start: Pose, cap: usize, rng: &mut ChaCha8Rng) -> Result<EvalOutcome, EvalError> {
    run_episode_traced(policy, pair, start, cap, rng).map(|(o, _)| o)
}

/// Runs until a goal pose is reached or `cap` actions have been taken.
pub fn run_episode_traced(
    policy: &dyn ActionSource,
    pair: &TaskPair,
    start: Pose,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(EvalOutcome, EpisodeTrace), EvalError> {
    if !pair.house.is_valid_pose(start) || pair.area(start) <= 0.0 {
        return Err(EvalError::InvisibleStart { pair: pair.id, start });
    }
    let minimal = pair
        .distances()
        .get(start)
        .ok_or(EvalError::Unreachable { pair: pair.id, start })?;
    let mut tracker = RewardTracker::new(pair.area(start), 1.0);
    let mut pose = start;
    let mut records = Vec::new();
    let mut success = pair.is_goal(pose);
    while !success && records.len() < cap {
        let action = policy.act(pair, pose, rng);
        let next = step(&pair.house, pose, action);
        let area = pair.area(next);
        records.push(TraceRecord {
            step: records.len(),
            pose,
            action,
            reward: tracker.reward_step(area),
            area,
        });
        pose = next;
        success = pair.is_goal(pose);
    }
    let outcome = EvalOutcome {
        pair_id: pair.id,
        start,
        minimal,
        taken: records.len(),
        success,
    };
    let trace = EpisodeTrace {
        pair_id: pair.id,
        start,
        records,
        terminal: if success { Terminal::GoalReached } else { Terminal::StepCapHit },
    };
    Ok((outcome, trace))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    /// `success_rate[k - 1]`: fraction succeeding within `k` times the minimal steps.
    pub success_rate: [f64; K],
    /// Mean steps over successful episodes, `None` without successes.
    pub avg_steps_success: Option<f64>,
    pub n_episodes: usize,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[EvalOutcome]) -> Self {
        let n = outcomes.len();
        let mut success_rate = [0.0; K];
        for (k, sr) in success_rate.iter_mut().enumerate() {
            let hits = outcomes.iter().filter(|o| o.success && o.taken <= (k + 1) * o.minimal).count();
            *sr = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        }
        let wins: Vec<f64> = outcomes.iter().filter(|o| o.success).map(|o| o.taken as f64).collect();
        EvalReport {
            success_rate,
            avg_steps_success: (!wins.is_empty()).then(|| wins.iter().sum::<f64>() / wins.len() as f64),
            n_episodes: n,
        }
    }

    fn csv_row(&self, name: &str, out: &mut String) {
        let _ = write!(out, "{name}");
        for sr in self.success_rate {
            let _ = write!(out, ",{sr:.4}");
        }
        match self.avg_steps_success {
            Some(a) => {
                let _ = write!(out, ",{a:.4}");
            }
            None => out.push_str(",NA"),
        }
        let _ = writeln!(out, ",{}", self.n_episodes);
    }
}

/// Elementwise `trained - new`.
pub fn generalization_gap(trained: &EvalReport, new: &EvalReport) -> [f64; K] {
    std::array::from_fn(|k| trained.success_rate[k] - new.success_rate[k])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_pair: Vec<(usize, EvalReport)>,
    pub aggregate: EvalReport,
    pub outcomes: Vec<EvalOutcome>,
}

impl Evaluation {
    /// `pair,sr1..sr5,avg_steps,n`, one row per pair then an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,sr1,sr2,sr3,sr4,sr5,avg_steps,n\n");
        for (id, r) in &self.per_pair {
            r.csv_row(&id.to_string(), &mut s);
        }
        self.aggregate.csv_row("all", &mut s);
        s
    }
}

/// Seed for episode `index` of `pair`, independent of evaluation order.
pub fn episode_seed(seed: u64, pair: usize, index: usize) -> u64 {
    let mut z = seed ^ (pair as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn episode(policy: &dyn ActionSource, pair: &TaskPair, index: usize, cap: usize, seed: u64) -> Result<EvalOutcome, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, pair.id, index));
    let start = pair.start_episode(&mut rng)?;
    run_episode(policy, pair, start, cap, &mut rng)
}

/// `n_starts` episodes per pair from uniformly drawn start poses.
pub fn evaluate(policy: &dyn ActionSource, pairs: &[TaskPair], n_starts: usize, cap: usize, seed: u64) -> Result<Evaluation, EvalError> {
    evaluate_parallel(policy, pairs, n_starts, cap, seed, 1)
}

/// As `evaluate`, spreading episodes over `n_workers` threads; the result
/// does not depend on `n_workers`.
pub fn evaluate_parallel(
    policy: &dyn ActionSource,
    pairs: &[TaskPair],
    n_starts: usize,
    cap: usize,
    seed: u64,
    n_workers: usize,
) -> Result<Evaluation, EvalError> {
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..n_starts).map(move |i| (p, i))).collect();
    let run = |&(p, i): &(usize, usize)| episode(policy, &pairs[p], i, cap, seed);
    let outcomes: Vec<EvalOutcome> = if n_workers <= 1 || jobs.len() < 2 {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    } else {
        let chunk = jobs.len().div_ceil(n_workers);
        let parts: Vec<Result<Vec<EvalOutcome>, EvalError>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(run).collect())).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(jobs.len());
        for part in parts {
            all.extend(part?);
        }
        all
    };
    let per_pair = pairs
        .iter()
        .enumerate()
        .map(|(p, pair)| (pair.id, EvalReport::from_outcomes(&outcomes[p * n_starts..(p + 1) * n_starts])))
        .collect();
    Ok(Evaluation {
        per_pair,
        aggregate: EvalReport::from_outcomes(&outcomes),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcome(minimal: usize, taken: usize, success: bool) -> EvalOutcome {
        EvalOutcome {
            pair_id: 0,
            start: Pose::new(1, 1, crate::gridhouse::Heading::N),
            minimal,
            taken,
            success,
        }
    }

    #[test]
    fn report_bins_by_multiple_of_minimal() {
        let r = EvalReport::from_outcomes(&[outcome(4, 4, true), outcome(4, 9, true), outcome(3, 1000, false), outcome(2, 10, true)]);
        assert_eq!(r.success_rate, [0.25, 0.25, 0.5, 0.5, 0.75]);
        assert_eq!(r.avg_steps_success, Some(23.0 / 3.0));
        assert_eq!(r.n_episodes, 4);
    }

    #[test]
    fn gap_examples() {
        let a = EvalReport::from_outcomes(&[outcome(2, 2, true)]);
        assert_eq!(generalization_gap(&a, &a), [0.0; K]);
        let mut t = a;
        let mut n = a;
        t.success_rate[0] = 0.8;
        n.success_rate[0] = 0.6;
        assert!((generalization_gap(&t, &n)[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn random_action_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; Action::COUNT];
        for _ in 0..6000 {
            counts[Action::ALL[rand::Rng::random_range(&mut rng, 0..Action::COUNT)].index()] += 1;
        }
        for c in counts {
            let f = c as f64 / 6000.0;
            assert!((0.14..=0.19).contains(&f), "{f}");
        }
    }

    #[test]
    fn episode_seeds_differ() {
        assert_ne!(episode_seed(1, 0, 0), episode_seed(1, 0, 1));
        assert_ne!(episode_seed(1, 0, 1), episode_seed(1, 1, 0));
        assert_eq!(episode_seed(5, 2, 3), episode_seed(5, 2, 3));
    }

    proptest! {
        #[test]
        fn success_rate_is_monotone(v in proptest::collection::vec((0usize..20, 0usize..120, any::<bool>()), 1..60)) {
            let outs: Vec<_> = v.into_iter().map(|(m, t, s)| outcome(m, t, s)).collect();
            let r = EvalReport::from_outcomes(&outs);
            for k in 1..K {
                prop_assert!(r.success_rate[k] >= r.success_rate[k - 1]);
            }
        }
    }
}
