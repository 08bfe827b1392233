use super::{CellKind, HouseLayout, LabelId, Pose, BACKGROUND, CELL_SIZE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Meters.
    pub max_range: f64,
    /// Meters; the eye sits at half this height.
    pub wall_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 64,
            height: 64,
            fov_deg: 90.0,
            max_range: 6.4,
            wall_height: 0.4,
        }
    }
}

impl RenderConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        RenderConfig {
            width,
            height,
            ..Default::default()
        }
    }

    /// Focal length in pixels (square pixels).
    fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }
}

/// One first-person frame. All planes are row-major, `width * height` long.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub max_range: f64,
    pub semantic: Vec<LabelId>,
    /// Meters, in `(0, max_range]`.
    pub depth: Vec<f64>,
    /// Linear RGB in `[0, 1]`.
    pub rgb: Vec<[f64; 3]>,
}

impl RenderOutput {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn background_fraction(&self) -> f64 {
        let bg = self.semantic.iter().filter(|&&l| l == BACKGROUND).count();
        bg as f64 / self.len() as f64
    }

    /// Luma of the RGB plane.
    pub fn grayscale(&self) -> Vec<f64> {
        self.rgb
            .iter()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }
}

struct Hit {
    /// Perpendicular distance in cells.
    dist: f64,
    cell: CellKind,
    y_side: bool,
}

/// Grid DDA from `origin` (cell units) along `ray`; the parameter along the
/// ray is the perpendicular camera distance because `ray = dir + plane * u`.
fn cast(layout: &HouseLayout, origin: (f64, f64), ray: (f64, f64), max_cells: f64) -> Option<Hit> {
    let mut map = (origin.0.floor() as isize, origin.1.floor() as isize);
    let delta = (
        if ray.0 == 0.0 { f64::INFINITY } else { (1.0 / ray.0).abs() },
        if ray.1 == 0.0 { f64::INFINITY } else { (1.0 / ray.1).abs() },
    );
    let (step_x, mut side_x) = if ray.0 < 0.0 {
        (-1, (origin.0 - map.0 as f64) * delta.0)
    } else {
        (1, (map.0 as f64 + 1.0 - origin.0) * delta.0)
    };
    let (step_y, mut side_y) = if ray.1 < 0.0 {
        (-1, (origin.1 - map.1 as f64) * delta.1)
    } else {
        (1, (map.1 as f64 + 1.0 - origin.1) * delta.1)
    };
    loop {
        let (dist, y_side) = if side_x < side_y {
            let d = side_x;
            side_x += delta.0;
            map.0 += step_x;
            (d, false)
        } else {
            let d = side_y;
            side_y += delta.1;
            map.1 += step_y;
            (d, true)
        };
        if dist > max_cells {
            return None;
        }
        let cell = layout.cell(map.0, map.1);
        if cell != CellKind::Floor {
            return Some(Hit { dist, cell, y_side });
        }
    }
}

pub fn label_color(label: LabelId) -> [f64; 3] {
    // golden-ratio hue walk gives well separated colors for small ids
    let hue = (label as f64 * 0.618_033_988_75).fract();
    let h = hue * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.85 * r, 0.15 + 0.85 * g, 0.15 + 0.85 * b]
}

const WALL_COLOR: [f64; 3] = [0.62, 0.60, 0.58];
const FLOOR_COLOR: [f64; 3] = [0.42, 0.32, 0.22];
const CEILING_COLOR: [f64; 3] = [0.85, 0.86, 0.90];

fn shade(c: [f64; 3], depth: f64, factor: f64) -> [f64; 3] {
    let s = factor / (1.0 + depth);
    [c[0] * s, c[1] * s, c[2] * s]
}

/// Column raycast of the semantic, depth and RGB planes seen from `pose`.
pub fn render(layout: &HouseLayout, pose: Pose, cfg: &RenderConfig) -> RenderOutput {
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let mut out = RenderOutput {
        width: w,
        height: h,
        max_range: cfg.max_range,
        semantic: vec![BACKGROUND; n],
        depth: vec![cfg.max_range; n],
        rgb: vec![[0.0; 3]; n],
    };

    let origin = (pose.x as f64 + 0.5, pose.y as f64 + 0.5);
    let dir = pose.heading.delta();
    let right = pose.heading.right().delta();
    let half_fov = (cfg.fov_deg.to_radians() / 2.0).tan();
    let plane = (right.0 as f64 * half_fov, right.1 as f64 * half_fov);
    let focal = cfg.focal();
    let eye = cfg.wall_height / 2.0;
    let max_cells = cfg.max_range / CELL_SIZE;

    for col in 0..w {
        let u = 2.0 * (col as f64 + 0.5) / w as f64 - 1.0;
        let ray = (dir.0 as f64 + plane.0 * u, dir.1 as f64 + plane.1 * u);
        let hit = cast(layout, origin, ray, max_cells);
        let Some(hit) = hit else {
            for row in 0..h {
                out.rgb[row * w + col] = shade(WALL_COLOR, cfg.max_range, 0.6);
            }
            continue;
        };
        let d = (hit.dist * CELL_SIZE).min(cfg.max_range);
        let half_band = eye / d * focal;
        let (label, base) = match hit.cell {
            CellKind::Object(id) => (id, label_color(id)),
            _ => (BACKGROUND, WALL_COLOR),
        };
        let side = if hit.y_side { 0.8 } else { 1.0 };
        for row in 0..h {
            let offset = row as f64 + 0.5 - h as f64 / 2.0;
            let i = row * w + col;
            if offset.abs() < half_band {
                out.semantic[i] = label;
                out.depth[i] = d;
                out.rgb[i] = shade(base, d, side);
            } else {
                let z = (eye * focal / offset.abs()).min(cfg.max_range);
                out.depth[i] = z;
                let c = if offset > 0.0 { FLOOR_COLOR } else { CEILING_COLOR };
                out.rgb[i] = shade(c, z, 1.0);
            }
        }
    }
    out
}
