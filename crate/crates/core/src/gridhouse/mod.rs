//! Discrete indoor environment: layouts, agent kinematics, raycast rendering
//! and the shortest-path oracle.

mod generate;
mod layout;
mod motion;
mod paths;
mod render;

pub use generate::{default_label_pool, generate_house, GenerateError, HouseParams};
pub use layout::{parse_layout, LayoutError};
pub use motion::step;
pub use paths::{distance_field, min_steps, reachable_poses, DistanceField, Unreachable};
pub use render::{label_color, render, RenderConfig, RenderOutput};

use std::fmt;

/// Edge length of one grid cell in meters.
pub const CELL_SIZE: f64 = 0.2;

/// Semantic label id. `0` is background.
pub type LabelId = u16;

pub const BACKGROUND: LabelId = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Floor,
    Wall,
    Object(LabelId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectInstance {
    pub label_id: LabelId,
    pub cells: Vec<(usize, usize)>,
    pub unique_in_house: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HouseLayout {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    objects: Vec<ObjectInstance>,
    /// Indexed by label id; entry 0 is always `"background"`.
    labels: Vec<String>,
}

impl HouseLayout {
    /// Builds a layout from raw cells, deriving object instances as
    /// 4-connected components of equal-label object cells.
    ///
    /// Callers are responsible for the walled border; `parse_layout` and
    /// `generate_house` both check it.
    pub(crate) fn from_cells(
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        labels: Vec<String>,
    ) -> Self {
        debug_assert_eq!(cells.len(), width * height);
        let mut layout = HouseLayout {
            width,
            height,
            cells,
            objects: Vec::new(),
            labels,
        };
        layout.objects = layout.find_objects();
        layout
    }

    fn find_objects(&self) -> Vec<ObjectInstance> {
        let mut seen = vec![false; self.cells.len()];
        let mut objects = Vec::new();
        for start in 0..self.cells.len() {
            let CellKind::Object(label_id) = self.cells[start] else {
                continue;
            };
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut cells = Vec::new();
            while let Some(i) = stack.pop() {
                let (x, y) = (i % self.width, i / self.width);
                cells.push((x, y));
                for (nx, ny) in self.neighbours4(x, y) {
                    let j = ny * self.width + nx;
                    if !seen[j] && self.cells[j] == CellKind::Object(label_id) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            cells.sort_unstable_by_key(|&(x, y)| (y, x));
            objects.push(ObjectInstance {
                label_id,
                cells,
                unique_in_house: false,
            });
        }
        let counts: Vec<usize> = objects
            .iter()
            .map(|o| objects.iter().filter(|p| p.label_id == o.label_id).count())
            .collect();
        for (o, n) in objects.iter_mut().zip(counts) {
            o.unique_in_house = n == 1;
        }
        objects
    }

    fn neighbours4(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (w, h) = (self.width as isize, self.height as isize);
        [(0isize, -1isize), (1, 0), (0, 1), (-1, 0)]
            .into_iter()
            .map(move |(dx, dy)| (x as isize + dx, y as isize + dy))
            .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
            .map(|(nx, ny)| (nx as usize, ny as usize))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        CELL_SIZE
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of semantic classes including background.
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, id: LabelId) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn label_id(&self, name: &str) -> Option<LabelId> {
        self.labels
            .iter()
            .position(|l| l == name)
            .map(|i| i as LabelId)
    }

    /// Cell at `(x, y)`; anything outside the grid reads as wall.
    pub fn cell(&self, x: isize, y: isize) -> CellKind {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            CellKind::Wall
        } else {
            self.cells[y as usize * self.width + x as usize]
        }
    }

    pub fn is_floor(&self, x: isize, y: isize) -> bool {
        self.cell(x, y) == CellKind::Floor
    }

    pub fn floor_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.cells[y * self.width + x] == CellKind::Floor)
            .collect()
    }

    /// Labels of objects that occur exactly once, i.e. valid task targets.
    pub fn target_labels(&self) -> Vec<LabelId> {
        let mut labels: Vec<LabelId> = self
            .objects
            .iter()
            .filter(|o| o.unique_in_house)
            .map(|o| o.label_id)
            .collect();
        labels.sort_unstable();
        labels
    }

    pub fn is_valid_pose(&self, pose: Pose) -> bool {
        self.is_floor(pose.x as isize, pose.y as isize)
    }

    /// True when every floor cell can reach every other floor cell.
    pub fn floor_connected(&self) -> bool {
        let floor = self.floor_cells();
        let Some(&(sx, sy)) = floor.first() else {
            return true;
        };
        let mut seen = vec![false; self.cells.len()];
        seen[sy * self.width + sx] = true;
        let mut stack = vec![(sx, sy)];
        let mut count = 0;
        while let Some((x, y)) = stack.pop() {
            count += 1;
            for (nx, ny) in self.neighbours4(x, y) {
                let j = ny * self.width + nx;
                if !seen[j] && self.cells[j] == CellKind::Floor {
                    seen[j] = true;
                    stack.push((nx, ny));
                }
            }
        }
        count == floor.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Unit grid offset; `y` grows downwards (south).
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_char(c: char) -> Option<Heading> {
        match c.to_ascii_uppercase() {
            'N' => Some(Heading::N),
            'E' => Some(Heading::E),
            'S' => Some(Heading::S),
            'W' => Some(Heading::W),
            _ => None,
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        };
        f.write_str(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: usize, y: usize, heading: Heading) -> Self {
        Pose { x, y, heading }
    }

    /// Dense index `(y * width + x) * 4 + heading`, used for per-pose tables.
    pub fn index(&self, width: usize) -> usize {
        (self.y * width + self.x) * 4 + self.heading.index()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.heading)
    }
}

impl std::str::FromStr for Pose {
    type Err = String;

    /// Parses `x,y,H` with `H` one of `N E S W`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected `x,y,heading`, got `{s}`"));
        }
        let x = parts[0].parse().map_err(|_| format!("bad x `{}`", parts[0]))?;
        let y = parts[1].parse().map_err(|_| format!("bad y `{}`", parts[1]))?;
        let mut chars = parts[2].chars();
        let heading = match (chars.next(), chars.next()) {
            (Some(c), None) => Heading::from_char(c),
            _ => None,
        }
        .ok_or_else(|| format!("bad heading `{}`", parts[2]))?;
        Ok(Pose { x, y, heading })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    MoveForward,
    MoveBackward,
    StrafeLeft,
    StrafeRight,
    RotateLeft,
    RotateRight,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::MoveForward,
        Action::MoveBackward,
        Action::StrafeLeft,
        Action::StrafeRight,
        Action::RotateLeft,
        Action::RotateRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_rotations_cycle() {
        for h in Heading::ALL {
            assert_eq!(h.left().right(), h);
            assert_eq!(h.left().left().left().left(), h);
        }
        assert_eq!(Heading::N.left(), Heading::W);
        assert_eq!(Heading::N.right(), Heading::E);
    }

    #[test]
    fn action_indices_are_fixed() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(6), None);
    }

    #[test]
    fn pose_parses() {
        let p: Pose = "3, 4,w".parse().unwrap();
        assert_eq!(p, Pose::new(3, 4, Heading::W));
        assert!("3,4".parse::<Pose>().is_err());
        assert!("3,4,Q".parse::<Pose>().is_err());
        assert_eq!(p.to_string(), "3,4,W");
    }
}
