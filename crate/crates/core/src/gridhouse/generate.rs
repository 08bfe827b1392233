use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{CellKind, HouseLayout, LabelId};

pub const MAX_SIDE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct HouseParams {
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
    /// Inclusive bounds on room interior side length.
    pub room_min: usize,
    pub room_max: usize,
    /// Number of distinct objects to place; each gets its own label.
    pub objects: usize,
    /// Max footprint of one object in cells (1 or 2).
    pub object_max_cells: usize,
    /// Label `i` of the pool gets id `i + 1` in every generated house.
    pub label_pool: Vec<String>,
}

impl Default for HouseParams {
    fn default() -> Self {
        HouseParams {
            width: 16,
            height: 16,
            rooms: 3,
            room_min: 3,
            room_max: 6,
            objects: 4,
            object_max_cells: 2,
            label_pool: default_label_pool(),
        }
    }
}

pub fn default_label_pool() -> Vec<String> {
    [
        "television", "sofa", "bed", "fridge", "plant", "piano", "bathtub", "desk",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("invalid house parameters: {0}")]
    InvalidParams(String),
    #[error("could not fit {rooms} rooms into a {width}x{height} house")]
    RoomsDoNotFit {
        rooms: usize,
        width: usize,
        height: usize,
    },
    #[error("could not place object `{0}` without disconnecting the floor")]
    ObjectPlacement(String),
}

#[derive(Clone, Copy, Debug)]
struct Room {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Room {
    fn center(&self) -> (usize, usize) {
        (self.x + self.w / 2, self.y + self.h / 2)
    }

    /// Overlap test with a one-cell wall margin.
    fn touches(&self, o: &Room) -> bool {
        self.x <= o.x + o.w && o.x <= self.x + self.w && self.y <= o.y + o.h && o.y <= self.y + self.h
    }
}

const ROOM_ATTEMPTS: usize = 500;
const OBJECT_ATTEMPTS: usize = 200;

/// Procedural house: rectangular rooms joined by L-shaped corridors, with
/// uniquely labelled objects placed against walls. Deterministic per seed;
/// the floor is always 4-connected.
pub fn generate_house(seed: u64, params: &HouseParams) -> Result<HouseLayout, GenerateError> {
    let p = params;
    let invalid = |m: &str| Err(GenerateError::InvalidParams(m.to_string()));
    if p.width < 5 || p.height < 5 || p.width > MAX_SIDE || p.height > MAX_SIDE {
        return invalid("width and height must be within 5..=64");
    }
    if p.rooms == 0 {
        return invalid("at least one room is required");
    }
    if p.room_min < 2 || p.room_min > p.room_max {
        return invalid("room size bounds must satisfy 2 <= room_min <= room_max");
    }
    if p.objects > p.label_pool.len() {
        return invalid("more objects than labels in the pool");
    }
    if !(1..=2).contains(&p.object_max_cells) {
        return invalid("object_max_cells must be 1 or 2");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (p.width, p.height);
    let mut cells = vec![CellKind::Wall; w * h];

    let mut rooms: Vec<Room> = Vec::with_capacity(p.rooms);
    let mut attempts = 0;
    while rooms.len() < p.rooms {
        attempts += 1;
        if attempts > ROOM_ATTEMPTS {
            return Err(GenerateError::RoomsDoNotFit {
                rooms: p.rooms,
                width: w,
                height: h,
            });
        }
        let rw = rng.random_range(p.room_min..=p.room_max);
        let rh = rng.random_range(p.room_min..=p.room_max);
        if rw + 2 > w || rh + 2 > h {
            continue;
        }
        let room = Room {
            x: rng.random_range(1..=w - 1 - rw),
            y: rng.random_range(1..=h - 1 - rh),
            w: rw,
            h: rh,
        };
        if rooms.iter().any(|r| r.touches(&room)) {
            continue;
        }
        rooms.push(room);
    }

    for r in &rooms {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                cells[y * w + x] = CellKind::Floor;
            }
        }
    }
    // chain rooms left to right so corridors stay short
    rooms.sort_by_key(|r| r.center());
    for pair in rooms.windows(2) {
        let (a, b) = (pair[0].center(), pair[1].center());
        let corner = if rng.random_bool(0.5) { (b.0, a.1) } else { (a.0, b.1) };
        carve_line(&mut cells, w, a, corner);
        carve_line(&mut cells, w, corner, b);
    }

    let labels: Vec<String> = std::iter::once("background".to_string())
        .chain(p.label_pool.iter().cloned())
        .collect();
    let mut layout = HouseLayout::from_cells(w, h, cells, labels);

    let mut ids: Vec<LabelId> = (1..=p.label_pool.len() as LabelId).collect();
    ids.shuffle(&mut rng);
    for &id in ids.iter().take(p.objects) {
        place_object(&mut layout, id, p.object_max_cells, &mut rng)
            .ok_or_else(|| GenerateError::ObjectPlacement(p.label_pool[id as usize - 1].clone()))?;
    }
    layout.objects = layout.find_objects();
    Ok(layout)
}

fn carve_line(cells: &mut [CellKind], w: usize, from: (usize, usize), to: (usize, usize)) {
    let (mut x, mut y) = from;
    loop {
        cells[y * w + x] = CellKind::Floor;
        if (x, y) == to {
            break;
        }
        if x != to.0 {
            x = if to.0 > x { x + 1 } else { x - 1 };
        } else {
            y = if to.1 > y { y + 1 } else { y - 1 };
        }
    }
}

fn place_object(layout: &mut HouseLayout, id: LabelId, max_cells: usize, rng: &mut ChaCha8Rng) -> Option<()> {
    let w = layout.width;
    let is_wall = |l: &HouseLayout, x: usize, y: usize| l.cell(x as isize, y as isize) == CellKind::Wall;
    let candidates: Vec<(usize, usize)> = layout
        .floor_cells()
        .into_iter()
        .filter(|&(x, y)| {
            is_wall(layout, x + 1, y) || is_wall(layout, x - 1, y) || is_wall(layout, x, y + 1) || is_wall(layout, x, y - 1)
        })
        .collect();
    for _ in 0..OBJECT_ATTEMPTS {
        let &(x, y) = candidates.choose(rng)?;
        let mut footprint = vec![(x, y)];
        if max_cells == 2 && rng.random_bool(0.5) {
            let horizontal = rng.random_bool(0.5);
            let next = if horizontal { (x + 1, y) } else { (x, y + 1) };
            if layout.is_floor(next.0 as isize, next.1 as isize) {
                footprint.push(next);
            }
        }
        // keep objects apart so each one stays a single instance
        let crowded = footprint.iter().any(|&(fx, fy)| {
            (fy - 1..=fy + 1).any(|ny| {
                (fx - 1..=fx + 1).any(|nx| matches!(layout.cell(nx as isize, ny as isize), CellKind::Object(_)))
            })
        });
        if crowded {
            continue;
        }
        let floor_left = layout.floor_cells().len() - footprint.len();
        if floor_left < 2 {
            continue;
        }
        for &(fx, fy) in &footprint {
            layout.cells[fy * w + fx] = CellKind::Object(id);
        }
        if layout.floor_connected() {
            return Some(());
        }
        for &(fx, fy) in &footprint {
            layout.cells[fy * w + fx] = CellKind::Floor;
        }
    }
    None
}
