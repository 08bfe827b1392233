//! Multi-worker advantage actor-critic over a pool of (house, target) pairs.
//!
//! Workers take whole episodes from per-worker deques, stealing from the
//! longest peer deque when their own runs dry. Each round queues every pair
//! once, so completed-episode counts per pair never drift apart by more than
//! one. Gradients are computed against a versioned snapshot and applied
//! serially to the shared store.

mod task;

pub use task::*;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridhouse::{step, Action, Pose};
use crate::policynet::{
    apply_gradient, backward, forward, init_params, PolicyError, PolicyGradient, PolicyParams, Transition, DEFAULT_BETA_ENTROPY, DEFAULT_CLIP,
    DEFAULT_VALUE_COEFF,
};
use crate::state::RewardTracker;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no feasible (house, target) pair to train on")]
    NoFeasiblePairs,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint callback failed: {0}")]
    Checkpoint(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_workers: usize,
    /// n-step horizon.
    pub rollout_len: usize,
    pub max_env_steps: u64,
    pub lr: f64,
    pub gamma: f64,
    pub beta_entropy: f64,
    pub value_coeff: f64,
    pub grad_clip: f64,
    pub episode_step_cap: usize,
    pub seed: u64,
    /// Summary record every this many environment steps (0 disables).
    pub log_interval: u64,
    /// Checkpoint callback every this many environment steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_workers: 1,
            rollout_len: 5,
            max_env_steps: 300_000,
            lr: 0.05,
            gamma: 0.9,
            beta_entropy: DEFAULT_BETA_ENTROPY,
            value_coeff: DEFAULT_VALUE_COEFF,
            grad_clip: DEFAULT_CLIP,
            episode_step_cap: 200,
            seed: 0,
            log_interval: 10_000,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_workers == 0 {
            return bad("n_workers must be positive");
        }
        if self.rollout_len == 0 {
            return bad("rollout_len must be positive");
        }
        if self.episode_step_cap == 0 {
            return bad("episode_step_cap must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta_entropy >= 0.0 && self.value_coeff > 0.0 && self.grad_clip > 0.0) {
            return bad("beta_entropy must be non-negative, value_coeff and grad_clip positive");
        }
        Ok(())
    }
}

/// One worker's in-flight episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub pose: Pose,
    pub tracker: RewardTracker,
    pub steps: usize,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn new(pair: &TaskPair, pose: Pose, gamma: f64) -> Self {
        Episode {
            pose,
            tracker: RewardTracker::new(pair.area(pose), gamma),
            steps: 0,
            rewards: Vec::new(),
        }
    }

    pub fn discounted_return(&self) -> f64 {
        crate::state::discounted_return(&self.rewards, self.tracker.gamma())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: Pose,
    pub action: Action,
    pub reward: f64,
    pub area: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    GoalReached,
    StepCapHit,
}

/// Per-step record of one episode. `pose` is the pose the action was taken
/// from; `area` and `reward` belong to the pose it led to.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub pair_id: usize,
    pub start: Pose,
    pub records: Vec<TraceRecord>,
    pub terminal: Terminal,
}

impl EpisodeTrace {
    /// `step,pose,action,reward,area` lines followed by the terminal flag.
    pub fn to_text(&self) -> String {
        let mut s = String::from("step,pose,action,reward,area\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{:?},{},{}", r.step, r.pose, r.action, r.reward, r.area);
        }
        let _ = writeln!(s, "# pair={} start={} terminal={:?}", self.pair_id, self.start, self.terminal);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub records: Vec<TraceRecord>,
    pub done: bool,
}

pub fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_index(i).expect("probability vector has one entry per action");
        }
    }
    // rounding left u above the cumulative sum: take the last positive entry
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
    Action::from_index(last).expect("probability vector has one entry per action")
}

/// Up to `rollout_len` steps from `episode.pose` with the snapshot policy,
/// stopping early on reaching a goal pose. Returns are n-step, bootstrapped
/// with `V` of the last pose unless the segment ended at a goal.
pub fn run_rollout(
    params: &PolicyParams,
    pair: &TaskPair,
    episode: &mut Episode,
    rng: &mut ChaCha8Rng,
    rollout_len: usize,
) -> Result<Rollout, PolicyError> {
    if pair.is_goal(episode.pose) {
        return Ok(Rollout {
            transitions: Vec::new(),
            records: Vec::new(),
            done: true,
        });
    }
    let mut transitions = Vec::with_capacity(rollout_len);
    let mut records = Vec::with_capacity(rollout_len);
    let mut rewards = Vec::with_capacity(rollout_len);
    let mut done = false;
    for _ in 0..rollout_len {
        let state = pair.observe(episode.pose, rng);
        let out = forward(params, &state)?;
        let action = sample_action(&out.action_probs, rng);
        let next = step(&pair.house, episode.pose, action);
        let area = pair.area(next);
        let reward = episode.tracker.reward_step(area);
        records.push(TraceRecord {
            step: episode.steps,
            pose: episode.pose,
            action,
            reward,
            area,
        });
        transitions.push(Transition {
            state,
            action: action.index(),
            ret: 0.0,
        });
        rewards.push(reward);
        episode.rewards.push(reward);
        episode.pose = next;
        episode.steps += 1;
        if pair.is_goal(next) {
            done = true;
            break;
        }
    }
    let mut ret = if done || transitions.is_empty() {
        0.0
    } else {
        forward(params, &pair.observe(episode.pose, rng))?.value
    };
    let gamma = episode.tracker.gamma();
    for (tr, r) in transitions.iter_mut().zip(&rewards).rev() {
        ret = r + gamma * ret;
        tr.ret = ret;
    }
    Ok(Rollout {
        transitions,
        records,
        done,
    })
}

/// Per-worker task deques. Owners pop from the front, thieves from the back.
#[derive(Debug)]
pub struct WorkQueues {
    deques: Vec<Mutex<VecDeque<usize>>>,
}

impl WorkQueues {
    pub fn new(n_workers: usize) -> Self {
        WorkQueues {
            deques: (0..n_workers).map(|_| Mutex::new(VecDeque::new())).collect(),
        }
    }

    /// Deals `tasks` round-robin across the deques.
    pub fn seed_round_robin(&self, tasks: &[usize]) {
        for (i, &t) in tasks.iter().enumerate() {
            self.push(i % self.deques.len(), t);
        }
    }

    pub fn push(&self, worker: usize, task: usize) {
        self.deques[worker].lock().unwrap().push_back(task);
    }

    pub fn pop_own(&self, worker: usize) -> Option<usize> {
        self.deques[worker].lock().unwrap().pop_front()
    }

    pub fn len_of(&self, worker: usize) -> usize {
        self.deques[worker].lock().unwrap().len()
    }

    pub fn n_workers(&self) -> usize {
        self.deques.len()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.deques.len()).all(|w| self.len_of(w) == 0)
    }
}

/// Takes one task from the back of the longest deque other than `self_id`
/// (lowest index on ties).
pub fn steal_task(queues: &WorkQueues, self_id: usize) -> Option<usize> {
    loop {
        let victim = (0..queues.n_workers())
            .filter(|&w| w != self_id)
            .map(|w| (queues.len_of(w), w))
            .filter(|&(len, _)| len > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))?
            .1;
        // the victim may have drained between the scan and the lock
        if let Some(t) = queues.deques[victim].lock().unwrap().pop_back() {
            return Some(t);
        }
    }
}

#[derive(Debug)]
struct Round {
    outstanding: usize,
    stopped: bool,
}

/// Round-based dispatcher: every round queues each task once; the round's
/// last completion refills the deques.
#[derive(Debug)]
pub struct Scheduler {
    queues: WorkQueues,
    tasks: Vec<usize>,
    round: Mutex<Round>,
    wake: Condvar,
}

impl Scheduler {
    pub fn new(n_workers: usize, tasks: Vec<usize>) -> Self {
        let queues = WorkQueues::new(n_workers);
        queues.seed_round_robin(&tasks);
        Scheduler {
            queues,
            round: Mutex::new(Round {
                outstanding: tasks.len(),
                stopped: tasks.is_empty(),
            }),
            tasks,
            wake: Condvar::new(),
        }
    }

    /// Next task for `worker`, blocking until the current round ends when
    /// nothing is left to take. `None` once stopped.
    pub fn next(&self, worker: usize) -> Option<usize> {
        loop {
            if self.round.lock().unwrap().stopped {
                return None;
            }
            if let Some(t) = self.queues.pop_own(worker).or_else(|| steal_task(&self.queues, worker)) {
                return Some(t);
            }
            let mut round = self.round.lock().unwrap();
            while !round.stopped && self.queues.is_empty() {
                round = self.wake.wait(round).unwrap();
            }
        }
    }

    pub fn complete(&self) {
        let mut round = self.round.lock().unwrap();
        round.outstanding -= 1;
        if round.outstanding == 0 && !round.stopped {
            self.queues.seed_round_robin(&self.tasks);
            round.outstanding = self.tasks.len();
            self.wake.notify_all();
        }
    }

    pub fn stop(&self) {
        self.round.lock().unwrap().stopped = true;
        self.wake.notify_all();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub params: PolicyParams,
    pub version: u64,
    /// Checksum of `params`, computed when the version was published.
    pub checksum: u64,
}

/// Global parameters. Readers clone an immutable versioned snapshot; updates
/// are serialized and publish a whole new snapshot.
#[derive(Debug)]
pub struct SharedParams {
    current: RwLock<Arc<Snapshot>>,
    apply_lock: Mutex<()>,
}

impl SharedParams {
    pub fn new(params: PolicyParams) -> Self {
        let checksum = params.checksum();
        SharedParams {
            current: RwLock::new(Arc::new(Snapshot {
                params,
                version: 0,
                checksum,
            })),
            apply_lock: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().unwrap())
    }

    /// Applies one gradient and returns the new version.
    pub fn apply(&self, grad: &PolicyGradient, lr: f64, clip: f64) -> Result<u64, PolicyError> {
        let _serial = self.apply_lock.lock().unwrap();
        let cur = self.snapshot();
        let mut params = cur.params.clone();
        apply_gradient(&mut params, grad, lr, clip)?;
        let next = Arc::new(Snapshot {
            checksum: params.checksum(),
            params,
            version: cur.version + 1,
        });
        let version = next.version;
        *self.current.write().unwrap() = next;
        Ok(version)
    }

    pub fn into_params(self) -> PolicyParams {
        let snap = self.current.into_inner().unwrap();
        Arc::try_unwrap(snap).map(|s| s.params).unwrap_or_else(|s| s.params.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Global environment steps when the episode finished.
    pub step: u64,
    pub pair_id: usize,
    pub episode_return: f64,
    pub episode_len: usize,
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub step: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_len: f64,
    pub per_pair_counts: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeRecord>,
    pub summaries: Vec<Summary>,
    pub total_steps: u64,
    pub version: u64,
    /// Completed episodes per pair, in input order.
    pub per_pair_counts: Vec<u64>,
    pub skipped_pairs: Vec<usize>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,pair_id,episode_return,episode_len,version\n");
        for e in &self.episodes {
            let _ = writeln!(s, "{},{},{},{},{}", e.step, e.pair_id, e.episode_return, e.episode_len, e.version);
        }
        s
    }

    pub fn summaries_csv(&self) -> String {
        let mut s = String::from("step,episodes,mean_return,mean_len,per_pair_counts\n");
        for m in &self.summaries {
            let counts: Vec<String> = m.per_pair_counts.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{},{},{},{},{}", m.step, m.episodes, m.mean_return, m.mean_len, counts.join(" "));
        }
        s
    }

    /// max - min completed episodes over the trained pairs.
    pub fn episode_spread(&self) -> u64 {
        let trained = self
            .per_pair_counts
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.skipped_pairs.contains(i))
            .map(|(_, &c)| c);
        let (lo, hi) = trained.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
        hi.saturating_sub(lo.min(hi))
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: TrainLog,
}

pub type CheckpointFn<'a> = dyn Fn(u64, &PolicyParams) -> std::io::Result<()> + Sync + 'a;

pub fn train(cfg: &TrainConfig, pairs: &[TaskPair]) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, pairs, init_params(cfg.seed), &|_, _| Ok(()))
}

struct Shared<'a> {
    cfg: &'a TrainConfig,
    pairs: &'a [TaskPair],
    params: SharedParams,
    scheduler: Scheduler,
    steps: AtomicU64,
    log: Mutex<LogState>,
    checkpoint: &'a CheckpointFn<'a>,
}

#[derive(Default)]
struct LogState {
    episodes: Vec<EpisodeRecord>,
    summaries: Vec<Summary>,
    since_summary: usize,
    next_summary: u64,
    error: Option<TrainError>,
}

/// `train` from explicit initial parameters, calling `checkpoint` with the
/// global step count each time it crosses a multiple of `checkpoint_every`.
pub fn train_with(cfg: &TrainConfig, pairs: &[TaskPair], initial: PolicyParams, checkpoint: &CheckpointFn<'_>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let feasible: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].start_poses().is_empty()).collect();
    if feasible.is_empty() {
        return Err(TrainError::NoFeasiblePairs);
    }
    let skipped_pairs = (0..pairs.len()).filter(|i| !feasible.contains(i)).collect();
    let shared = Shared {
        cfg,
        pairs,
        params: SharedParams::new(initial),
        scheduler: Scheduler::new(cfg.n_workers, feasible),
        steps: AtomicU64::new(0),
        log: Mutex::new(LogState {
            next_summary: cfg.log_interval,
            ..LogState::default()
        }),
        checkpoint,
    };
    if cfg.max_env_steps == 0 {
        shared.scheduler.stop();
    }
    if cfg.n_workers == 1 {
        worker(&shared, 0);
    } else {
        std::thread::scope(|s| {
            for w in 0..cfg.n_workers {
                let shared = &shared;
                s.spawn(move || worker(shared, w));
            }
        });
    }
    let mut state = shared.log.into_inner().unwrap();
    if let Some(e) = state.error.take() {
        return Err(e);
    }
    let total_steps = shared.steps.load(Ordering::SeqCst);
    let snap = shared.params.snapshot();
    Ok(TrainOutcome {
        log: TrainLog {
            episodes: state.episodes,
            summaries: state.summaries,
            total_steps,
            version: snap.version,
            per_pair_counts: pairs.iter().map(TaskPair::episodes_completed).collect(),
            skipped_pairs,
        },
        params: shared.params.into_params(),
    })
}

fn worker(shared: &Shared<'_>, id: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(shared.cfg.seed);
    rng.set_stream(id as u64 + 1);
    if let Err(e) = worker_loop(shared, id, &mut rng) {
        let mut log = shared.log.lock().unwrap();
        log.error.get_or_insert(e);
        drop(log);
        shared.scheduler.stop();
    }
}

fn worker_loop(shared: &Shared<'_>, id: usize, rng: &mut ChaCha8Rng) -> Result<(), TrainError> {
    let cfg = shared.cfg;
    while let Some(pair_idx) = shared.scheduler.next(id) {
        let pair = &shared.pairs[pair_idx];
        let start = pair.start_episode(rng)?;
        let mut episode = Episode::new(pair, start, cfg.gamma);
        loop {
            let snap = shared.params.snapshot();
            let horizon = cfg.rollout_len.min(cfg.episode_step_cap - episode.steps);
            let rollout = run_rollout(&snap.params, pair, &mut episode, rng, horizon)?;
            let n = rollout.transitions.len() as u64;
            let before = shared.steps.fetch_add(n, Ordering::SeqCst);
            let after = before + n;
            let mut version = snap.version;
            if n > 0 {
                let grad = backward(&snap.params, &rollout.transitions, cfg.beta_entropy, cfg.value_coeff)?;
                version = shared.params.apply(&grad, cfg.lr, cfg.grad_clip)?;
            }
            if cfg.checkpoint_every > 0 && before / cfg.checkpoint_every != after / cfg.checkpoint_every {
                (shared.checkpoint)(after, &shared.params.snapshot().params)?;
            }
            let finished = rollout.done || episode.steps >= cfg.episode_step_cap;
            if finished {
                pair.episodes_completed.fetch_add(1, Ordering::SeqCst);
                record_episode(shared, after, pair.id, &episode, version);
                shared.scheduler.complete();
            }
            if after >= cfg.max_env_steps {
                shared.scheduler.stop();
                return Ok(());
            }
            if finished {
                break;
            }
        }
    }
    Ok(())
}

fn record_episode(shared: &Shared<'_>, step: u64, pair_id: usize, episode: &Episode, version: u64) {
    let mut log = shared.log.lock().unwrap();
    log.episodes.push(EpisodeRecord {
        step,
        pair_id,
        episode_return: episode.discounted_return(),
        episode_len: episode.steps,
        version,
    });
    log.since_summary += 1;
    let interval = shared.cfg.log_interval;
    if interval > 0 && step >= log.next_summary {
        let recent = &log.episodes[log.episodes.len() - log.since_summary..];
        let k = recent.len() as f64;
        let summary = Summary {
            step,
            episodes: recent.len(),
            mean_return: recent.iter().map(|e| e.episode_return).sum::<f64>() / k,
            mean_len: recent.iter().map(|e| e.episode_len as f64).sum::<f64>() / k,
            per_pair_counts: shared.pairs.iter().map(TaskPair::episodes_completed).collect(),
        };
        log.summaries.push(summary);
        log.since_summary = 0;
        log.next_summary = (step / interval + 1) * interval;
    }
}
