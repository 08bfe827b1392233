use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use super::{step, Action, Heading, HouseLayout, Pose};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no goal pose is reachable")]
pub struct Unreachable;

/// Every pose reachable from some floor cell. Rotations connect all four
/// headings of a cell, so this is every floor cell times four headings.
pub fn reachable_poses(layout: &HouseLayout) -> Vec<Pose> {
    let mut seen = vec![false; layout.width() * layout.height() * 4];
    let mut out = Vec::new();
    for (x, y) in layout.floor_cells() {
        let start = Pose::new(x, y, Heading::N);
        if seen[start.index(layout.width())] {
            continue;
        }
        seen[start.index(layout.width())] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            out.push(p);
            for a in Action::ALL {
                let q = step(layout, p, a);
                let qi = q.index(layout.width());
                if !seen[qi] {
                    seen[qi] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    out.sort_unstable_by_key(|p| p.index(layout.width()));
    out
}

/// Length of the shortest action sequence from `start` to any pose in
/// `goals`, by breadth-first search over the pose graph.
pub fn min_steps(layout: &HouseLayout, start: Pose, goals: &HashSet<Pose>) -> Result<usize, Unreachable> {
    if goals.contains(&start) {
        return Ok(0);
    }
    let w = layout.width();
    let mut dist = vec![usize::MAX; w * layout.height() * 4];
    dist[start.index(w)] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(p) = queue.pop_front() {
        let d = dist[p.index(w)];
        for a in Action::ALL {
            let q = step(layout, p, a);
            let qi = q.index(w);
            if dist[qi] == usize::MAX {
                if goals.contains(&q) {
                    return Ok(d + 1);
                }
                dist[qi] = d + 1;
                queue.push_back(q);
            }
        }
    }
    Err(Unreachable)
}

/// Steps-to-goal for every pose, computed once by a backward search from the
/// goal set over reversed transitions.
#[derive(Clone, Debug)]
pub struct DistanceField {
    width: usize,
    dist: Vec<Option<usize>>,
}

impl DistanceField {
    pub fn get(&self, pose: Pose) -> Option<usize> {
        self.dist.get(pose.index(self.width)).copied().flatten()
    }

    /// Actions that decrease the remaining distance by one.
    pub fn greedy_actions(&self, layout: &HouseLayout, pose: Pose) -> Vec<Action> {
        let Some(d) = self.get(pose) else {
            return Vec::new();
        };
        if d == 0 {
            return Vec::new();
        }
        Action::ALL
            .into_iter()
            .filter(|&a| self.get(step(layout, pose, a)) == Some(d - 1))
            .collect()
    }
}

pub fn distance_field(layout: &HouseLayout, goals: &HashSet<Pose>) -> DistanceField {
    let w = layout.width();
    let n = w * layout.height() * 4;
    let mut reverse: Vec<Vec<Pose>> = vec![Vec::new(); n];
    for p in reachable_poses(layout) {
        for a in Action::ALL {
            let q = step(layout, p, a);
            if q != p {
                reverse[q.index(w)].push(p);
            }
        }
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for &g in goals {
        if layout.is_valid_pose(g) {
            dist[g.index(w)] = Some(0);
            queue.push_back(g);
        }
    }
    while let Some(q) = queue.pop_front() {
        let d = dist[q.index(w)].unwrap_or(0);
        for &p in &reverse[q.index(w)] {
            let pi = p.index(w);
            if dist[pi].is_none() {
                dist[pi] = Some(d + 1);
                queue.push_back(p);
            }
        }
    }
    DistanceField { width: w, dist }
}
