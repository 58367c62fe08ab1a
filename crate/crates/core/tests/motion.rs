use adaptnet::motion::*;
use adaptnet::physics::*;
use proptest::prelude::*;

fn walk() -> ReferenceClip {
    generate_clip("walk", &style_preset("walk").unwrap(), &Morphology::biped()).unwrap()
}

fn rel(poses: &[Pose]) -> Vec<(f64, f64, f64)> {
    poses
        .iter()
        .map(|p| (p.x - poses[0].x, p.y, p.angle))
        .collect()
}

#[test]
fn walk_clip_is_one_second_and_periodic() {
    let c = walk();
    assert_eq!(c.len(), 30);
    assert!((c.cycle - 1.0).abs() < 1e-12);
    let first = rel(&c.poses_at(0));
    let wrapped = rel(&c.poses_at(30));
    for (a, b) in first.iter().zip(&wrapped) {
        assert!((a.0 - b.0).abs() <= 1e-3 && (a.1 - b.1).abs() <= 1e-3 && (a.2 - b.2).abs() <= 1e-3);
    }
    assert!(c.speed() > 0.8 && c.speed() < 2.0, "speed {}", c.speed());
}

#[test]
fn every_style_builds_within_limits_and_keeps_feet_above_ground() {
    let m = Morphology::biped();
    for s in STYLES {
        let c = generate_clip(s, &style_preset(s).unwrap(), &m).unwrap();
        for f in &c.frames {
            let low = m.lowest_contact(&f.poses);
            assert!(low.abs() < 1e-9, "{s}: lowest contact {low}");
        }
    }
}

#[test]
fn zero_lean_keeps_torso_upright() {
    let c = walk();
    assert!(c.frames.iter().all(|f| f.poses[0].angle == 0.0));
    let stoop = generate_clip("stoop", &style_preset("stoop").unwrap(), &Morphology::biped()).unwrap();
    assert!(stoop.frames.iter().all(|f| (f.poses[0].angle + 0.5).abs() < 1e-12));
}

#[test]
fn symmetric_gait_left_right_half_cycle_shift() {
    let c = walk();
    let n = c.len();
    for k in 0..n {
        let a = &c.frames[k].joints;
        let b = &c.frames[(k + n / 2) % n].joints;
        for (l, r) in [(0, 1), (2, 3), (4, 5)] {
            assert!((a[l] - b[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn out_of_range_params_are_rejected() {
    let p = GaitParams {
        hip_amplitude: 3.0,
        ..GaitParams::default()
    };
    assert!(generate_clip("bad", &p, &Morphology::biped()).is_err());
}

fn frame_from(states: Vec<BodyState>) -> Frame {
    Frame {
        bodies: states,
        ground: 0.0,
    }
}

#[test]
fn observation_layout() {
    let c = walk();
    let hist: Vec<Frame> = (0..4).map(|k| frame_from(c.states_at(k))).collect();
    assert_eq!(observe(&hist).len(), 192);
    assert_eq!(obs_dim(7), 192);
    assert_eq!(disc_window(&hist).len(), disc_dim(7));
    assert_eq!(disc_dim(7), 140);
}

#[test]
fn stationary_character_has_zero_velocity_slots() {
    let m = Morphology::biped();
    let poses = m.forward_kinematics(
        Pose {
            x: 0.0,
            y: m.nominal_root_height(),
            angle: 0.0,
        },
        &[0.0; 6],
    );
    let states: Vec<BodyState> = poses
        .iter()
        .map(|p| BodyState {
            x: p.x,
            y: p.y,
            angle: p.angle,
            vx: 0.0,
            vy: 0.0,
            omega: 0.0,
        })
        .collect();
    let o = observe(&[frame_from(states)]);
    let fd = frame_dim(7);
    for f in 0..4 {
        let base = f * fd;
        assert_eq!(&o[base + 3..base + 6], &[0.0, 0.0, 0.0]);
        for l in 0..6 {
            let s = base + 6 + 7 * l;
            assert_eq!(&o[s + 4..s + 7], &[0.0, 0.0, 0.0]);
        }
    }
}

#[test]
fn translating_character_keeps_relative_positions() {
    let c = walk();
    let base = c.states_at(0);
    let hist: Vec<Frame> = (0..4)
        .map(|k| {
            frame_from(
                base.iter()
                    .map(|b| BodyState {
                        x: b.x + 0.1 * k as f64,
                        vx: 3.0,
                        vy: 0.0,
                        omega: 0.0,
                        ..*b
                    })
                    .collect(),
            )
        })
        .collect();
    let o = observe(&hist);
    let fd = frame_dim(7);
    for l in 0..6 {
        let s = 6 + 7 * l;
        for f in 1..4 {
            assert!((o[s] - o[f * fd + s]).abs() < 1e-12);
            assert!((o[s + 1] - o[f * fd + s + 1]).abs() < 1e-12);
        }
    }
}

#[test]
fn imitation_error_examples() {
    let a = vec![vec![Pose {
        x: 1.0,
        y: 2.0,
        angle: 0.0,
    }]];
    let b = vec![vec![Pose {
        x: 1.3,
        y: 2.4,
        angle: 0.0,
    }]];
    assert!((imitation_error(&a, &b).unwrap()[0] - 0.5).abs() < 1e-12);
    assert_eq!(imitation_error(&a, &a).unwrap(), vec![0.0]);
    assert!(imitation_error(&[], &[]).is_err());

    let c = walk();
    let sim: Vec<Vec<Pose>> = (0..10).map(|k| c.poses_at(k)).collect();
    let shifted: Vec<Vec<Pose>> = sim
        .iter()
        .map(|f| f.iter().map(|p| Pose { y: p.y + 0.07, ..*p }).collect())
        .collect();
    for e in imitation_error(&sim, &shifted).unwrap() {
        assert!((e - 0.07).abs() < 1e-12);
    }
}

#[test]
fn clip_error_finds_phase_and_ignores_root_x() {
    let c = walk();
    let sim: Vec<Vec<Pose>> = (7..37)
        .map(|k| c.poses_at(k).into_iter().map(|p| Pose { x: p.x + 5.0, ..p }).collect())
        .collect();
    let e = clip_imitation_error(&sim, &c).unwrap();
    assert!(e.iter().all(|&x| x < 1e-9));
}

fn pose_seq() -> impl Strategy<Value = Vec<Pose>> {
    prop::collection::vec(
        (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Pose { x, y, angle: 0.0 }),
        7,
    )
}

proptest! {
    #[test]
    fn imitation_error_symmetric_and_triangle(a in pose_seq(), b in pose_seq(), c in pose_seq()) {
        let e = |p: &Vec<Pose>, q: &Vec<Pose>| imitation_error(&[p.clone()], &[q.clone()]).unwrap()[0];
        prop_assert!((e(&a, &b) - e(&b, &a)).abs() < 1e-12);
        prop_assert!(e(&a, &c) <= e(&a, &b) + e(&b, &c) + 1e-12);
        prop_assert!(e(&a, &b) >= 0.0);
    }

    #[test]
    fn observation_translation_invariant(k in 0i64..30, dx in -50.0..50.0f64, dy in -2.0..2.0f64) {
        let c = walk();
        let frames: Vec<Frame> = (k..k + 5).map(|i| frame_from(c.states_at(i))).collect();
        let moved: Vec<Frame> = frames
            .iter()
            .map(|f| Frame {
                bodies: f.bodies.iter().map(|b| BodyState { x: b.x + dx, y: b.y + dy, ..*b }).collect(),
                ground: f.ground + dy,
            })
            .collect();
        let (o1, o2) = (observe(&frames), observe(&moved));
        for (a, b) in o1.iter().zip(&o2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let (d1, d2) = (disc_window(&frames), disc_window(&moved));
        for (a, b) in d1.iter().zip(&d2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
