//! wasm-bindgen bindings for the static demo in `www/`.
//!
//! The [`Session`] type holds all state and is plain Rust so it can be tested
//! natively; [`Demo`] is the thin JS-facing wrapper.

use std::sync::Arc;

use gaple::analysis::{build_curve, FeatureKind};
use gaple::cli::{analysis_house_params, generate_indexed};
use gaple::gridhouse::{label_color, render, Action, CellKind, HouseLayout, HouseParams, Pose, RenderConfig, RenderOutput};
use gaple::trainer::{ObservationModel, TaskPair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Pixels per grid cell in the top-down map.
const MAP_SCALE: usize = 8;

pub struct Session {
    pair: TaskPair,
    pose: Pose,
    steps: usize,
    rng: ChaCha8Rng,
    frame: RenderOutput,
}

impl Session {
    /// Generates a house from `seed` and targets its `target`-th unique object.
    pub fn new(seed: u64, target: usize) -> Result<Self, String> {
        let house = Arc::new(generate_indexed(seed, 0, &HouseParams::default()).map_err(|e| format!("{e:#}"))?);
        let labels = house.target_labels();
        if labels.is_empty() {
            return Err("house has no unique object to approach".into());
        }
        let label = labels[target % labels.len()];
        let obs = ObservationModel::GroundTruth { channel: Default::default() };
        let pair = TaskPair::new(0, 0, house, label, RenderConfig::default(), obs).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = pair.start_episode(&mut rng).map_err(|e| e.to_string())?;
        let frame = render(&pair.house, pose, pair.render_config());
        Ok(Session { pair, pose, steps: 0, rng, frame })
    }

    pub fn reset(&mut self) -> Result<(), String> {
        self.pose = self.pair.start_episode(&mut self.rng).map_err(|e| e.to_string())?;
        self.steps = 0;
        self.rerender();
        Ok(())
    }

    fn rerender(&mut self) {
        self.frame = render(&self.pair.house, self.pose, self.pair.render_config());
    }

    /// Applies action `index` (see [`Action::ALL`]); returns whether the
    /// agent now stands on a goal pose.
    pub fn step(&mut self, index: usize) -> Result<bool, String> {
        let action = Action::from_index(index).ok_or_else(|| format!("no action with index {index}"))?;
        self.pose = gaple::gridhouse::step(&self.pair.house, self.pose, action);
        self.steps += 1;
        self.rerender();
        Ok(self.at_goal())
    }

    /// First action of a shortest path to the goal set.
    pub fn oracle_action(&self) -> Option<usize> {
        self.pair.distances().greedy_actions(&self.pair.house, self.pose).first().map(|a| a.index())
    }

    pub fn at_goal(&self) -> bool {
        self.pair.is_goal(self.pose)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn steps_to_goal(&self) -> Option<usize> {
        self.pair.distances().get(self.pose)
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn attention_area(&self) -> f64 {
        self.pair.area(self.pose)
    }

    pub fn target_name(&self) -> &str {
        self.pair.house.label_name(self.pair.target_label).unwrap_or("?")
    }

    pub fn frame(&self) -> &RenderOutput {
        &self.frame
    }

    pub fn layout(&self) -> &HouseLayout {
        &self.pair.house
    }

    /// Top-down RGBA map: walls dark, objects in label colors, goal cells
    /// tinted, agent as a white square with a mark on its heading side.
    pub fn map_rgba(&self) -> (usize, usize, Vec<u8>) {
        let l = self.layout();
        let (w, h) = (l.width() * MAP_SCALE, l.height() * MAP_SCALE);
        let mut px = vec![0u8; w * h * 4];
        let goal_cells: Vec<(usize, usize)> = self.pair.goal_poses().iter().map(|p| (p.x, p.y)).collect();
        for y in 0..l.height() {
            for x in 0..l.width() {
                let c = match l.cell(x as isize, y as isize) {
                    CellKind::Wall => [40, 40, 48],
                    CellKind::Object(id) => to_u8(label_color(id)),
                    CellKind::Floor if goal_cells.contains(&(x, y)) => [150, 220, 150],
                    CellKind::Floor => [210, 205, 195],
                };
                fill(&mut px, w, x * MAP_SCALE, y * MAP_SCALE, MAP_SCALE, MAP_SCALE, c);
            }
        }
        let (ax, ay) = (self.pose.x * MAP_SCALE, self.pose.y * MAP_SCALE);
        fill(&mut px, w, ax + 1, ay + 1, MAP_SCALE - 2, MAP_SCALE - 2, [255, 255, 255]);
        let (dx, dy) = self.pose.heading.delta();
        let mid = MAP_SCALE / 2 - 1;
        let (mx, my) = ((ax as isize + mid as isize + dx * 2) as usize, (ay as isize + mid as isize + dy * 2) as usize);
        fill(&mut px, w, mx, my, 2, 2, [200, 30, 30]);
        (w, h, px)
    }
}

fn to_u8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

fn fill(px: &mut [u8], stride: usize, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let i = (y * stride + x) * 4;
            px[i..i + 4].copy_from_slice(&[c[0], c[1], c[2], 255]);
        }
    }
}

pub fn rgb_rgba(frame: &RenderOutput) -> Vec<u8> {
    frame.rgb.iter().flat_map(|&c| { let [r, g, b] = to_u8(c); [r, g, b, 255] }).collect()
}

pub fn semantic_rgba(frame: &RenderOutput, target: u16) -> Vec<u8> {
    frame
        .semantic
        .iter()
        .flat_map(|&l| {
            let [r, g, b] = match l {
                0 => [0, 0, 0],
                l if l == target => [255, 255, 255],
                l => to_u8(label_color(l).map(|v| 0.5 * v)),
            };
            [r, g, b, 255]
        })
        .collect()
}

pub fn depth_rgba(frame: &RenderOutput) -> Vec<u8> {
    frame
        .depth
        .iter()
        .flat_map(|&d| {
            let v = (255.0 * (1.0 - d / frame.max_range)).round().clamp(0.0, 255.0) as u8;
            [v, v, v, 255]
        })
        .collect()
}

/// Mean feature distance per physical step count on an analysis-preset house.
pub fn curve(seed: u64, kind: &str, sample_cap: usize) -> Result<(Vec<usize>, Vec<f64>, f64), String> {
    let kind: FeatureKind = kind.parse().map_err(|e| format!("{e}"))?;
    let house = generate_indexed(seed, 0, &analysis_house_params()).map_err(|e| format!("{e:#}"))?;
    let c = build_curve(&house, kind, &RenderConfig::default(), 9, sample_cap, seed).map_err(|e| e.to_string())?;
    let trend = c.trend();
    Ok((c.bins, c.mean_feat_dist, trend))
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, target: usize) -> Result<Demo, JsError> {
        Session::new(seed, target).map(|inner| Demo { inner }).map_err(|e| JsError::new(&e))
    }

    pub fn reset(&mut self) -> Result<(), JsError> {
        self.inner.reset().map_err(|e| JsError::new(&e))
    }

    /// 0 forward, 1 backward, 2 strafe left, 3 strafe right, 4 turn left, 5 turn right.
    pub fn step(&mut self, action: usize) -> Result<bool, JsError> {
        self.inner.step(action).map_err(|e| JsError::new(&e))
    }

    /// Takes one shortest-path action; returns whether a goal was reached.
    pub fn oracle_step(&mut self) -> Result<bool, JsError> {
        match self.inner.oracle_action() {
            Some(a) => self.step(a),
            None => Ok(self.inner.at_goal()),
        }
    }

    pub fn view_width(&self) -> usize {
        self.inner.frame().width
    }

    pub fn view_height(&self) -> usize {
        self.inner.frame().height
    }

    pub fn rgb_rgba(&self) -> Vec<u8> {
        rgb_rgba(self.inner.frame())
    }

    pub fn semantic_rgba(&self) -> Vec<u8> {
        semantic_rgba(self.inner.frame(), self.inner.pair.target_label)
    }

    pub fn depth_rgba(&self) -> Vec<u8> {
        depth_rgba(self.inner.frame())
    }

    pub fn map_width(&self) -> usize {
        self.inner.layout().width() * MAP_SCALE
    }

    pub fn map_height(&self) -> usize {
        self.inner.layout().height() * MAP_SCALE
    }

    pub fn map_rgba(&self) -> Vec<u8> {
        self.inner.map_rgba().2
    }

    pub fn attention_area(&self) -> f64 {
        self.inner.attention_area()
    }

    pub fn at_goal(&self) -> bool {
        self.inner.at_goal()
    }

    pub fn steps(&self) -> usize {
        self.inner.steps()
    }

    /// `-1` when no goal is reachable.
    pub fn steps_to_goal(&self) -> i32 {
        self.inner.steps_to_goal().map_or(-1, |d| d as i32)
    }

    pub fn target_name(&self) -> String {
        self.inner.target_name().to_string()
    }

    pub fn pose(&self) -> String {
        self.inner.pose().to_string()
    }
}

/// Returns `[trend, d1, m1, d2, m2, ...]` for the feature-distance curve.
#[wasm_bindgen]
pub fn feature_curve(seed: u64, kind: &str, sample_cap: usize) -> Result<Vec<f64>, JsError> {
    let (bins, means, trend) = curve(seed, kind, sample_cap).map_err(|e| JsError::new(&e))?;
    let mut out = vec![trend];
    for (b, m) in bins.into_iter().zip(means) {
        out.extend([b as f64, m]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_walk_reaches_goal_in_predicted_steps() {
        let mut s = Session::new(3, 0).unwrap();
        let d = s.steps_to_goal().unwrap();
        for _ in 0..d {
            s.step(s.oracle_action().unwrap()).unwrap();
        }
        assert!(s.at_goal());
        assert_eq!(s.steps(), d);
        assert_eq!(s.steps_to_goal(), Some(0));
    }

    #[test]
    fn buffers_have_expected_sizes() {
        let s = Session::new(1, 1).unwrap();
        let f = s.frame();
        assert_eq!(rgb_rgba(f).len(), f.len() * 4);
        assert_eq!(depth_rgba(f).len(), f.len() * 4);
        assert_eq!(semantic_rgba(f, s.pair.target_label).len(), f.len() * 4);
        let (w, h, m) = s.map_rgba();
        assert_eq!(m.len(), w * h * 4);
        assert!(m.chunks(4).all(|p| p[3] == 255));
    }

    #[test]
    fn bad_action_is_an_error() {
        let mut s = Session::new(0, 0).unwrap();
        assert!(s.step(6).is_err());
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn curve_rejects_unknown_kind() {
        assert!(curve(0, "rgb", 100).is_err());
        let (bins, means, _) = curve(0, "depth10", 500).unwrap();
        assert_eq!(bins.len(), means.len());
    }
}
