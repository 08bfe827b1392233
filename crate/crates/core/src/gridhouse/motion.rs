use super::{Action, HouseLayout, Pose};

/// Applies one action. Translations move exactly one cell relative to the
/// heading; moving into anything but floor leaves the pose unchanged.
pub fn step(layout: &HouseLayout, pose: Pose, action: Action) -> Pose {
    let h = pose.heading;
    let dir = match action {
        Action::RotateLeft => return Pose { heading: h.left(), ..pose },
        Action::RotateRight => return Pose { heading: h.right(), ..pose },
        Action::MoveForward => h.delta(),
        Action::MoveBackward => h.left().left().delta(),
        Action::StrafeLeft => h.left().delta(),
        Action::StrafeRight => h.right().delta(),
    };
    let nx = pose.x as isize + dir.0;
    let ny = pose.y as isize + dir.1;
    if layout.is_floor(nx, ny) {
        Pose {
            x: nx as usize,
            y: ny as usize,
            heading: h,
        }
    } else {
        pose
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_layout, Heading};
    use super::*;
    use proptest::prelude::*;

    fn house() -> HouseLayout {
        parse_layout("gaple-house v1\nT=tv\n\n#####\n#...#\n#...#\n#.T.#\n#####\n").unwrap()
    }

    #[test]
    fn translations_and_rotations() {
        let l = house();
        let p = Pose::new(2, 2, Heading::N);
        assert_eq!(step(&l, p, Action::MoveForward), Pose::new(2, 1, Heading::N));
        assert_eq!(step(&l, p, Action::RotateLeft), Pose::new(2, 2, Heading::W));
        assert_eq!(step(&l, p, Action::RotateRight), Pose::new(2, 2, Heading::E));
        assert_eq!(step(&l, p, Action::StrafeLeft), Pose::new(1, 2, Heading::N));
        assert_eq!(step(&l, p, Action::StrafeRight), Pose::new(3, 2, Heading::N));
        // backward into the object is blocked
        assert_eq!(step(&l, p, Action::MoveBackward), p);
        let e = Pose::new(2, 2, Heading::E);
        assert_eq!(step(&l, e, Action::MoveBackward), Pose::new(1, 2, Heading::E));
        assert_eq!(step(&l, e, Action::StrafeLeft), Pose::new(2, 1, Heading::E));
    }

    #[test]
    fn wall_collision_is_a_no_op() {
        let l = house();
        let p = Pose::new(1, 1, Heading::N);
        assert_eq!(step(&l, p, Action::MoveForward), p);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        let l = house();
        let floor = l.floor_cells();
        (0..floor.len(), 0..4usize).prop_map(move |(i, h)| {
            let (x, y) = floor[i];
            Pose::new(x, y, Heading::ALL[h])
        })
    }

    proptest! {
        #[test]
        fn step_is_closed_and_rotations_invert(p in arb_pose(), a in 0..6usize) {
            let l = house();
            let q = step(&l, p, Action::ALL[a]);
            prop_assert!(l.is_valid_pose(q));
            prop_assert_eq!(step(&l, step(&l, p, Action::RotateLeft), Action::RotateRight), p);
            let mut r = p;
            for _ in 0..4 {
                r = step(&l, r, Action::RotateLeft);
            }
            prop_assert_eq!(r, p);
        }
    }
}
