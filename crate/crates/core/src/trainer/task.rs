use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridhouse::{distance_field, reachable_poses, render, DistanceField, HouseLayout, LabelId, Pose, RenderConfig};
use crate::perception::{corrupt_observation, predict_frame, PerceptionParams};
use crate::state::{goal_spec_from_areas, make_state_with, target_area, GoalSpec, SecondChannel, StateError, StateTensor, GRID};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("pair {pair}: {source}")]
    Goal { pair: usize, source: StateError },
    #[error("pair {0}: no start pose sees the target without already being a goal")]
    NoStart(usize),
    #[error("pair {pair}: perception failed: {message}")]
    Perception { pair: usize, message: String },
}

/// How the agent's state is produced from a pose.
#[derive(Clone, Debug)]
pub enum ObservationModel {
    /// Ground-truth semantics with depth or grayscale as second channel.
    GroundTruth { channel: SecondChannel },
    /// Ground truth passed through the recognition-noise model each step.
    Noisy {
        channel: SecondChannel,
        flip_p: f64,
        depth_sigma: f64,
    },
    /// Semantics and depth predicted from the RGB frame, rendered at `cfg`.
    Predicted {
        channel: SecondChannel,
        params: Arc<PerceptionParams>,
        cfg: RenderConfig,
    },
}

impl Default for ObservationModel {
    fn default() -> Self {
        ObservationModel::GroundTruth {
            channel: SecondChannel::Depth,
        }
    }
}

impl ObservationModel {
    fn is_deterministic(&self) -> bool {
        !matches!(self, ObservationModel::Noisy { .. })
    }
}

/// One (house, target) task with everything precomputed that does not
/// depend on the policy: goal set, per-pose areas, start poses, steps-to-goal
/// and, for deterministic observation models, per-pose states.
#[derive(Debug)]
pub struct TaskPair {
    pub id: usize,
    pub house_id: usize,
    pub house: Arc<HouseLayout>,
    pub target_label: LabelId,
    pub goal: GoalSpec,
    pub episodes_completed: AtomicU64,
    render_cfg: RenderConfig,
    observation: ObservationModel,
    areas: Vec<f64>,
    states: Vec<Option<StateTensor>>,
    starts: Vec<Pose>,
    distances: DistanceField,
}

impl TaskPair {
    pub fn new(
        id: usize,
        house_id: usize,
        house: Arc<HouseLayout>,
        target_label: LabelId,
        render_cfg: RenderConfig,
        observation: ObservationModel,
    ) -> Result<Self, TaskError> {
        if render_cfg.width < GRID || render_cfg.height < GRID {
            return Err(TaskError::Goal {
                pair: id,
                source: StateError::TooSmall {
                    width: render_cfg.width,
                    height: render_cfg.height,
                },
            });
        }
        let n = house.width() * house.height() * 4;
        let mut areas = vec![0.0; n];
        let mut states = vec![None; n];
        let mut per_pose = Vec::new();
        let cache = observation.is_deterministic();
        for pose in reachable_poses(&house) {
            let frame = render(&house, pose, &render_cfg);
            let area = target_area(&frame, target_label);
            areas[pose.index(house.width())] = area;
            per_pose.push((pose, area));
            if cache {
                let state = match &observation {
                    ObservationModel::GroundTruth { channel } => {
                        make_state_with(&frame, target_label, render_cfg.max_range, *channel)
                    }
                    ObservationModel::Predicted { channel, params, cfg } => {
                        let small = render(&house, pose, cfg);
                        let pred = predict_frame(params, &small).map_err(|e| TaskError::Perception {
                            pair: id,
                            message: e.to_string(),
                        })?;
                        make_state_with(&pred, target_label, cfg.max_range, *channel)
                    }
                    ObservationModel::Noisy { .. } => unreachable!("noisy observations are not cached"),
                }
                .map_err(|source| TaskError::Goal { pair: id, source })?;
                states[pose.index(house.width())] = Some(state);
            }
        }
        let goal = goal_spec_from_areas(target_label, &per_pose).map_err(|source| TaskError::Goal { pair: id, source })?;
        let starts: Vec<Pose> = per_pose
            .iter()
            .filter(|(p, a)| *a > 0.0 && !goal.is_goal(p))
            .map(|&(p, _)| p)
            .collect();
        let distances = distance_field(&house, &goal.goal_poses);
        Ok(TaskPair {
            id,
            house_id,
            house,
            target_label,
            goal,
            episodes_completed: AtomicU64::new(0),
            render_cfg,
            observation,
            areas,
            states,
            starts,
            distances,
        })
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render_cfg
    }

    pub fn observation_model(&self) -> &ObservationModel {
        &self.observation
    }

    /// Ground-truth attention area at `pose`.
    pub fn area(&self, pose: Pose) -> f64 {
        self.areas[pose.index(self.house.width())]
    }

    pub fn is_goal(&self, pose: Pose) -> bool {
        self.goal.is_goal(&pose)
    }

    /// Poses that see the target and are not goals.
    pub fn start_poses(&self) -> &[Pose] {
        &self.starts
    }

    pub fn goal_poses(&self) -> &HashSet<Pose> {
        &self.goal.goal_poses
    }

    pub fn distances(&self) -> &DistanceField {
        &self.distances
    }

    pub fn observe(&self, pose: Pose, rng: &mut ChaCha8Rng) -> StateTensor {
        if let Some(s) = &self.states[pose.index(self.house.width())] {
            return s.clone();
        }
        let frame = render(&self.house, pose, &self.render_cfg);
        let ObservationModel::Noisy {
            channel,
            flip_p,
            depth_sigma,
        } = &self.observation
        else {
            unreachable!("deterministic observations are cached");
        };
        let noisy = corrupt_observation(&frame, self.house.num_labels(), *flip_p, *depth_sigma, rng);
        make_state_with(&noisy, self.target_label, self.render_cfg.max_range, *channel).expect("render size checked at construction")
    }

    pub fn episodes_completed(&self) -> u64 {
        self.episodes_completed.load(Ordering::Relaxed)
    }

    /// Uniform draw over poses that see the target but are not goals.
    pub fn start_episode(&self, rng: &mut ChaCha8Rng) -> Result<Pose, TaskError> {
        self.starts.choose(rng).copied().ok_or(TaskError::NoStart(self.id))
    }
}
