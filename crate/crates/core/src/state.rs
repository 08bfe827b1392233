//! Observation → policy state: attention masks, 10×10 pooling, the
//! record-breaking attention reward and goal-state thresholds.

use std::collections::HashSet;

use thiserror::Error;

use crate::gridhouse::{reachable_poses, render, HouseLayout, LabelId, Pose, RenderConfig, RenderOutput};

/// Side of the pooled state grids.
pub const GRID: usize = 10;
pub const GRID_CELLS: usize = GRID * GRID;

/// Number of goal poses the area threshold aims for.
pub const GOAL_RANK: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("grid of {width}x{height} is smaller than the {GRID}x{GRID} output")]
    TooSmall { width: usize, height: usize },
    #[error("grid has {found} values, expected {width}x{height}")]
    SizeMismatch {
        width: usize,
        height: usize,
        found: usize,
    },
    #[error("target label {0} is never visible from any reachable pose")]
    TargetNeverVisible(LabelId),
    #[error("target label must be >= 1")]
    BackgroundTarget,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

pub fn attention_mask(semantic: &[LabelId], width: usize, height: usize, target_label: LabelId) -> AttentionMask {
    debug_assert_eq!(semantic.len(), width * height);
    AttentionMask {
        width,
        height,
        mask: semantic.iter().map(|&s| s == target_label).collect(),
    }
}

/// Fraction of set pixels.
pub fn attention_area(mask: &AttentionMask) -> f64 {
    let on = mask.mask.iter().filter(|&&m| m).count();
    on as f64 / (mask.width * mask.height) as f64
}

/// Attention area of the target straight from a rendered frame.
pub fn target_area(frame: &RenderOutput, target_label: LabelId) -> f64 {
    let on = frame.semantic.iter().filter(|&&s| s == target_label).count();
    on as f64 / frame.len() as f64
}

/// Block-average pooling onto a `GRID`×`GRID` grid. Bin `b` along an axis of
/// length `n` covers `b*n/GRID .. (b+1)*n/GRID`.
pub fn downsample(grid: &[f64], width: usize, height: usize) -> Result<[f64; GRID_CELLS], StateError> {
    if grid.len() != width * height {
        return Err(StateError::SizeMismatch {
            width,
            height,
            found: grid.len(),
        });
    }
    if width < GRID || height < GRID {
        return Err(StateError::TooSmall { width, height });
    }
    let mut out = [0.0; GRID_CELLS];
    for by in 0..GRID {
        let (y0, y1) = (by * height / GRID, (by + 1) * height / GRID);
        for bx in 0..GRID {
            let (x0, x1) = (bx * width / GRID, (bx + 1) * width / GRID);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += grid[y * width + x0..y * width + x1].iter().sum::<f64>();
            }
            out[by * GRID + bx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    Ok(out)
}

/// Which image channel accompanies the attention mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SecondChannel {
    /// Depth normalized by the sensing range.
    #[default]
    Depth,
    /// Luma of the RGB frame (appearance ablation).
    Gray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    pub mask10: [f64; GRID_CELLS],
    pub depth10: [f64; GRID_CELLS],
}

impl StateTensor {
    pub fn zeros() -> Self {
        StateTensor {
            mask10: [0.0; GRID_CELLS],
            depth10: [0.0; GRID_CELLS],
        }
    }

    /// Network input: flattened mask followed by flattened depth.
    pub fn input(&self) -> [f64; 2 * GRID_CELLS] {
        let mut v = [0.0; 2 * GRID_CELLS];
        v[..GRID_CELLS].copy_from_slice(&self.mask10);
        v[GRID_CELLS..].copy_from_slice(&self.depth10);
        v
    }
}

pub fn make_state(frame: &RenderOutput, target_label: LabelId, max_range: f64) -> Result<StateTensor, StateError> {
    make_state_with(frame, target_label, max_range, SecondChannel::Depth)
}

pub fn make_state_with(
    frame: &RenderOutput,
    target_label: LabelId,
    max_range: f64,
    channel: SecondChannel,
) -> Result<StateTensor, StateError> {
    let (w, h) = (frame.width, frame.height);
    let mask: Vec<f64> = frame
        .semantic
        .iter()
        .map(|&s| if s == target_label { 1.0 } else { 0.0 })
        .collect();
    let second: Vec<f64> = match channel {
        SecondChannel::Depth => frame.depth.iter().map(|d| (d / max_range).clamp(0.0, 1.0)).collect(),
        SecondChannel::Gray => frame.grayscale(),
    };
    Ok(StateTensor {
        mask10: downsample(&mask, w, h)?,
        depth10: downsample(&second, w, h)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalSpec {
    pub target_label: LabelId,
    pub area_threshold: f64,
    pub goal_poses: HashSet<Pose>,
}

impl GoalSpec {
    pub fn is_goal(&self, pose: &Pose) -> bool {
        self.goal_poses.contains(pose)
    }
}

/// Threshold from per-pose areas: the fifth largest area, or the smallest
/// positive one when fewer than five poses see the target.
pub fn goal_threshold(areas: &[f64]) -> Option<f64> {
    let mut positive: Vec<f64> = areas.iter().copied().filter(|&a| a > 0.0).collect();
    if positive.is_empty() {
        return None;
    }
    positive.sort_by(|a, b| b.total_cmp(a));
    Some(positive[(GOAL_RANK - 1).min(positive.len() - 1)])
}

/// Per-pose ground-truth attention areas over every reachable pose.
pub fn pose_areas(layout: &HouseLayout, target_label: LabelId, cfg: &RenderConfig) -> Vec<(Pose, f64)> {
    reachable_poses(layout)
        .into_iter()
        .map(|p| (p, target_area(&render(layout, p, cfg), target_label)))
        .collect()
}

pub fn goal_spec_from_areas(target_label: LabelId, areas: &[(Pose, f64)]) -> Result<GoalSpec, StateError> {
    let values: Vec<f64> = areas.iter().map(|&(_, a)| a).collect();
    let threshold = goal_threshold(&values).ok_or(StateError::TargetNeverVisible(target_label))?;
    Ok(GoalSpec {
        target_label,
        area_threshold: threshold,
        goal_poses: areas
            .iter()
            .filter(|&&(_, a)| a >= threshold)
            .map(|&(p, _)| p)
            .collect(),
    })
}

pub fn compute_goal_spec(layout: &HouseLayout, target_label: LabelId, cfg: &RenderConfig) -> Result<GoalSpec, StateError> {
    if target_label == 0 {
        return Err(StateError::BackgroundTarget);
    }
    goal_spec_from_areas(target_label, &pose_areas(layout, target_label, cfg))
}

/// Emits the area as reward only when it beats every area seen so far in the
/// episode, starting from the initial observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTracker {
    running_max: f64,
    gamma: f64,
}

impl RewardTracker {
    pub fn new(initial_area: f64, gamma: f64) -> Self {
        RewardTracker {
            running_max: initial_area,
            gamma,
        }
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_step(&mut self, area: f64) -> f64 {
        if area > self.running_max {
            self.running_max = area;
            area
        } else {
            0.0
        }
    }
}

/// `sum_t gamma^t * r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_cases() {
        let sem = vec![0u16; 16];
        assert!(attention_mask(&sem, 4, 4, 3).mask.iter().all(|&m| !m));
        let sem = vec![3u16; 16];
        let m = attention_mask(&sem, 4, 4, 3);
        assert!(m.mask.iter().all(|&m| m));
        assert_eq!(attention_area(&m), 1.0);

        let coords = [(0, 0), (3, 0), (1, 2), (2, 2), (3, 3)];
        let mut sem = vec![1u16; 16];
        for &(x, y) in &coords {
            sem[y * 4 + x] = 5;
        }
        let m = attention_mask(&sem, 4, 4, 5);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(m.mask[y * 4 + x], coords.contains(&(x, y)));
            }
        }
        assert_eq!(attention_area(&m), 5.0 / 16.0);
    }

    #[test]
    fn area_arithmetic() {
        let mut mask = vec![false; 64 * 64];
        mask[..1024].iter_mut().for_each(|m| *m = true);
        let m = AttentionMask {
            width: 64,
            height: 64,
            mask,
        };
        assert_eq!(attention_area(&m), 0.25);
        let zero = AttentionMask {
            width: 2,
            height: 2,
            mask: vec![false; 4],
        };
        assert_eq!(attention_area(&zero), 0.0);
    }

    #[test]
    fn downsample_constant_and_halves() {
        let g = vec![0.7; 37 * 23];
        assert!(downsample(&g, 37, 23).unwrap().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let g: Vec<f64> = (0..400).map(|i| if i % 20 < 10 { 1.0 } else { 0.0 }).collect();
        let d = downsample(&g, 20, 20).unwrap();
        for by in 0..10 {
            for bx in 0..10 {
                assert_eq!(d[by * 10 + bx], if bx < 5 { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(downsample(&[0.0; 81], 9, 9), Err(StateError::TooSmall { width: 9, height: 9 }));
    }

    #[test]
    fn downsample_matches_direct_bin_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: Vec<f64> = (0..64 * 64).map(|_| rng.random()).collect();
        let d = downsample(&g, 64, 64).unwrap();
        // bins of a 64-wide axis: floor(b*64/10) .. floor((b+1)*64/10)
        let edges = [0, 6, 12, 19, 25, 32, 38, 44, 51, 57, 64];
        for by in 0..10 {
            for bx in 0..10 {
                let mut sum = 0.0;
                let mut n = 0;
                for y in edges[by]..edges[by + 1] {
                    for x in edges[bx]..edges[bx + 1] {
                        sum += g[y * 64 + x];
                        n += 1;
                    }
                }
                assert!((d[by * 10 + bx] - sum / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reward_cases() {
        let mut t = RewardTracker::new(0.30, 0.99);
        assert_eq!(t.reward_step(0.20), 0.0);
        assert_eq!(t.running_max(), 0.30);
        assert_eq!(t.reward_step(0.30), 0.0);
        assert_eq!(t.reward_step(0.50), 0.50);
        assert_eq!(t.running_max(), 0.50);
    }

    #[test]
    fn discounted_cases() {
        assert_eq!(discounted_return(&[0.5], 0.99), 0.5);
        assert!((discounted_return(&[0.0, 0.5], 0.99) - 0.495).abs() < 1e-15);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn threshold_rules() {
        // seven distinct positive areas: the fifth largest wins
        let areas = [0.0, 0.7, 0.1, 0.3, 0.0, 0.5, 0.2, 0.6, 0.4];
        assert_eq!(goal_threshold(&areas), Some(0.3));
        // fewer than five: the smallest positive
        assert_eq!(goal_threshold(&[0.0, 0.2, 0.0, 0.5]), Some(0.2));
        assert_eq!(goal_threshold(&[0.0, 0.0]), None);
        // ties at the cut admit more than five
        let poses: Vec<(Pose, f64)> = [0.9, 0.8, 0.5, 0.5, 0.5, 0.5, 0.1]
            .iter()
            .enumerate()
            .map(|(i, &a)| (Pose::new(i, 0, crate::gridhouse::Heading::N), a))
            .collect();
        let g = goal_spec_from_areas(1, &poses).unwrap();
        assert_eq!(g.area_threshold, 0.5);
        assert_eq!(g.goal_poses.len(), 6);
    }

    proptest! {
        #[test]
        fn rewards_only_at_strict_records(a0 in 0.0..1.0f64, seq in prop::collection::vec(0.0..1.0f64, 0..40)) {
            let mut t = RewardTracker::new(a0, 0.99);
            let mut prior = vec![a0];
            for &a in &seq {
                let r = t.reward_step(a);
                let record = prior.iter().all(|&p| a > p);
                prop_assert_eq!(r, if record { a } else { 0.0 });
                prior.push(a);
                prop_assert_eq!(t.running_max(), prior.iter().copied().fold(f64::MIN, f64::max));
            }
        }

        #[test]
        fn downsample_preserves_range(w in 10..40usize, h in 10..40usize, seed in 0..1000u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..w * h).map(|_| rng.random_range(-2.0..3.0)).collect();
            let lo = g.iter().copied().fold(f64::MAX, f64::min);
            let hi = g.iter().copied().fold(f64::MIN, f64::max);
            let d = downsample(&g, w, h).unwrap();
            prop_assert!(d.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            if w % 10 == 0 && h % 10 == 0 {
                let mean_in = g.iter().sum::<f64>() / g.len() as f64;
                let mean_out = d.iter().sum::<f64>() / 100.0;
                prop_assert!((mean_in - mean_out).abs() < 1e-12);
            }
        }
    }
}
