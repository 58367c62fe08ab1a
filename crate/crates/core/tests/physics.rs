use adaptnet::physics::*;
use proptest::prelude::*;

const DT: f64 = 1.0 / PHYSICS_HZ;

fn zero_g() -> SolverConfig {
    SolverConfig {
        gravity: 0.0,
        ..SolverConfig::default()
    }
}

fn standing_biped(m: &Morphology, mu: f64) -> World {
    let root = Pose {
        x: 0.0,
        y: m.nominal_root_height(),
        angle: 0.0,
    };
    let poses = m.forward_kinematics(root, &vec![0.0; m.joints.len()]);
    World::from_morphology(m, &poses, Ground::flat(mu), SolverConfig::default())
}

#[test]
fn free_fall_velocity_change() {
    let mut w = World::new(Ground::flat(1.0), SolverConfig::default());
    w.add_body(Body::new("b", 2.0, 0.1, Vec2::new(0.0, 5.0), 0.0));
    w.step(&[], DT).unwrap();
    assert!((w.bodies[0].vel.y + 9.81 / 120.0).abs() < 1e-15);
}

#[test]
fn jointed_free_flight_conserves_momentum() {
    let mut w = World::new(Ground::flat(1.0), zero_g());
    let a = w.add_body(Body::new("a", 3.0, 0.2, Vec2::new(0.0, 3.0), 0.0));
    let b = w.add_body(Body::new("b", 1.5, 0.05, Vec2::new(0.0, 2.5), 0.3));
    w.bodies[a].vel = Vec2::new(1.0, -0.5);
    w.bodies[a].omega = 2.0;
    w.bodies[b].vel = Vec2::new(-0.3, 0.7);
    w.add_joint(Joint::revolute("j", a, b, Vec2::new(0.0, -0.25), Vec2::new(0.0, 0.25)));
    w.actuated = vec![0];
    let p0 = w.linear_momentum();
    for k in 0..240 {
        w.step(&[if k % 2 == 0 { 5.0 } else { -3.0 }], DT).unwrap();
    }
    let p1 = w.linear_momentum();
    assert!((p1 - p0).length() <= 1e-9, "{p0:?} {p1:?}");
}

#[test]
fn box_rests_on_ground_inside_friction_cone() {
    let mut w = World::new(Ground::flat(1.0), SolverConfig::default());
    let (hw, hh) = (0.2, 0.1);
    let corners = vec![
        Vec2::new(-hw, -hh),
        Vec2::new(hw, -hh),
        Vec2::new(hw, hh),
        Vec2::new(-hw, hh),
    ];
    let m = 5.0;
    let inertia = m * (4.0 * hw * hw + 4.0 * hh * hh) / 12.0;
    w.add_body(Body::new("box", m, inertia, Vec2::new(0.0, hh), 0.0).with_contacts(corners));
    for _ in 0..120 {
        w.step(&[], DT).unwrap();
        for c in w.contacts() {
            assert!(c.tangent_impulse.abs() <= c.friction * c.normal_impulse + 1e-9);
            assert!(c.normal_impulse >= 0.0);
        }
    }
    let b = &w.bodies[0];
    let bottom = b.pos.y - hh;
    assert!(bottom > -2e-3, "penetration {}", -bottom);
    assert!(b.pos.x.abs() <= 1e-3, "drift {}", b.pos.x);
}

#[test]
fn perturbation_impulse_and_step_count() {
    let mut w = World::new(Ground::flat(1.0), zero_g());
    w.add_body(Body::new("b", 6.0, 1.0, Vec2::new(0.0, 5.0), 0.0));
    w.apply_perturbation(0, Vec2::new(12.0, 0.0), 0.2, DT);
    let mut hits = 0;
    for _ in 0..60 {
        w.step(&[], DT).unwrap();
        hits += w.last_step_perturbed() as usize;
    }
    assert_eq!(hits, 24);
    assert!((w.bodies[0].vel.x - 0.4).abs() < 1e-12);
}

#[test]
fn zero_force_perturbation_changes_nothing() {
    let m = Morphology::biped();
    let mut a = standing_biped(&m, 1.0);
    let mut b = a.clone();
    b.apply_perturbation(0, Vec2::ZERO, 0.2, DT);
    for _ in 0..60 {
        a.step_pd(&[0.0; 6], DT).unwrap();
        b.step_pd(&[0.0; 6], DT).unwrap();
    }
    assert_eq!(a.state(), b.state());
}

#[test]
fn pd_torque_examples() {
    let g = PdGains {
        kp: 10.0,
        kd: 1.0,
        torque_limit: 50.0,
    };
    assert_eq!(pd_torque(&[0.3], &[0.0], &[0.3], &[g]), vec![0.0]);
    assert_eq!(pd_torque(&[0.0], &[1.0], &[0.5], &[g]), vec![4.0]);
    assert_eq!(pd_torque(&[0.0], &[0.0], &[100.0], &[g]), vec![50.0]);
    assert_eq!(pd_torque(&[0.0], &[0.0], &[-100.0], &[g]), vec![-50.0]);
}

#[test]
fn standing_biped_holds_posture_and_joints_stay_together() {
    let m = Morphology::biped();
    let mut w = standing_biped(&m, 1.0);
    for _ in 0..(2 * 120) {
        w.step_pd(&[0.0; 6], DT).unwrap();
        assert!(w.max_joint_error() <= 1e-3, "joint error {}", w.max_joint_error());
        for c in w.contacts() {
            assert!(c.tangent_impulse.abs() <= c.friction * c.normal_impulse + 1e-9);
        }
    }
    let torso = &w.bodies[0];
    assert!(torso.pos.y > 0.9 * m.nominal_root_height(), "torso sank to {}", torso.pos.y);
    assert!(torso.angle.abs() < 0.3);
}

#[test]
fn zero_torque_biped_collapses() {
    let m = Morphology::biped();
    let mut w = standing_biped(&m, 1.0);
    for _ in 0..(3 * 120) {
        w.step(&[0.0; 6], DT).unwrap();
    }
    assert!(w.bodies[0].pos.y < 0.5 * m.nominal_root_height());
}

#[test]
fn locked_knees_stay_straight() {
    let m = apply_morphology(&Morphology::biped(), &morphology_preset("locked_knees").unwrap()).unwrap();
    let mut w = standing_biped(&m, 1.0);
    for _ in 0..120 {
        w.step_pd(&[0.2, -0.2, 0.0, 0.0], DT).unwrap();
    }
    let q = w.joint_angles();
    assert!(q[2].abs() < 1e-2 && q[3].abs() < 1e-2, "{q:?}");
}

#[test]
fn replay_is_bitwise_deterministic() {
    let m = Morphology::biped();
    let run = || {
        let mut w = standing_biped(&m, 0.35);
        let mut out = vec![];
        for k in 0..240 {
            let s = (k as f64 * 0.1).sin();
            w.step_pd(&[0.4 * s, -0.4 * s, -0.3 - 0.3 * s, -0.3 + 0.3 * s, 0.1, -0.1], DT)
                .unwrap();
            out.push(w.state());
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn window_over_step_and_mirror() {
    let spacing = 0.05;
    let n = 401;
    let origin = -10.0;
    let samples: Vec<f64> = (0..n)
        .map(|i| if origin + i as f64 * spacing >= 0.5 { 0.2 } else { 0.0 })
        .collect();
    let t = Terrain {
        samples,
        spacing,
        origin,
    };
    let w = heightfield_window(&t, 0.0, 1.0);
    assert_eq!(w.len(), WINDOW_SAMPLES);
    for (k, &h) in w.iter().enumerate() {
        let s = -WINDOW_BACK + (WINDOW_BACK + WINDOW_FORWARD) * k as f64 / (WINDOW_SAMPLES - 1) as f64;
        let expected = t.nearest(s);
        assert_eq!(h, expected, "sample {k} at {s}");
    }
    assert!(w[0] == 0.0 && w[WINDOW_SAMPLES - 1] == 0.2);

    let flat = Terrain::flat(-10.0, 20.0, 0.05);
    assert!(heightfield_window(&flat, 1.3, 1.0).iter().all(|&h| h == 0.0));

    // mirrored terrain read backwards gives the forward window
    let mirrored = Terrain {
        samples: t.samples.iter().rev().cloned().collect(),
        spacing,
        origin: -(origin + (n - 1) as f64 * spacing),
    };
    assert_eq!(heightfield_window(&mirrored, 0.0, -1.0), w);
}

#[test]
fn nan_reports_body() {
    let mut w = World::new(Ground::flat(1.0), SolverConfig::default());
    w.add_body(Body::new("torso", 1.0, 1.0, Vec2::new(0.0, 1.0), 0.0));
    w.bodies[0].vel.x = f64::NAN;
    let e = w.step(&[], DT).unwrap_err();
    assert!(e.to_string().contains("torso"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn free_flight_momentum_random(vx in -3.0..3.0f64, vy in -3.0..3.0f64, w0 in -5.0..5.0f64, tau in -20.0..20.0f64) {
        let mut w = World::new(Ground::flat(1.0), zero_g());
        let a = w.add_body(Body::new("a", 2.0, 0.1, Vec2::new(0.0, 10.0), 0.0));
        let b = w.add_body(Body::new("b", 1.0, 0.03, Vec2::new(0.0, 9.6), 0.0));
        let c = w.add_body(Body::new("c", 0.5, 0.01, Vec2::new(0.0, 9.2), 0.0));
        w.bodies[a].vel = Vec2::new(vx, vy);
        w.bodies[b].omega = w0;
        w.add_joint(Joint::revolute("ab", a, b, Vec2::new(0.0, -0.2), Vec2::new(0.0, 0.2)));
        w.add_joint(Joint::revolute("bc", b, c, Vec2::new(0.0, -0.2), Vec2::new(0.0, 0.2)));
        w.actuated = vec![0, 1];
        let p0 = w.linear_momentum();
        for _ in 0..60 {
            w.step(&[tau, -tau], DT).unwrap();
        }
        prop_assert!((w.linear_momentum() - p0).length() <= 1e-9);
    }

    #[test]
    fn random_targets_respect_cone(seed in 0u64..1000, mu in 0.1..1.5f64) {
        let m = Morphology::biped();
        let mut w = standing_biped(&m, mu);
        let mut x = seed as f64;
        for _ in 0..60 {
            x = (x * 1.3 + 0.7).sin();
            w.step_pd(&[0.5 * x, -0.5 * x, -0.5 + 0.4 * x, -0.5 - 0.4 * x, 0.2 * x, -0.2 * x], DT).unwrap();
            for c in w.contacts() {
                prop_assert!(c.tangent_impulse.abs() <= mu * c.normal_impulse + 1e-9);
            }
        }
    }
}
