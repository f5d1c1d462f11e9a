use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trajplan_core::kinematics::{forward_kinematics, uniform_config, ArmModel};

/// Homogeneous DH composition with nalgebra, kept apart from the library's
/// hand-rolled rotation/translation update.
fn dh_oracle(arm: &ArmModel, theta: &[f64]) -> [f64; 3] {
    let mut t = Matrix4::identity();
    for (l, &q) in arm.links().iter().zip(theta) {
        let (st, ct) = (q + l.theta_offset).sin_cos();
        let (sa, ca) = l.alpha.sin_cos();
        #[rustfmt::skip]
        let link = Matrix4::new(
            ct, -st * ca,  st * sa, l.a * ct,
            st,  ct * ca, -ct * sa, l.a * st,
            0.0,      sa,       ca,      l.d,
            0.0,     0.0,      0.0,      1.0,
        );
        t *= link;
    }
    let p = t * Vector4::new(0.0, 0.0, 0.0, 1.0);
    [p.x, p.y, p.z]
}

#[test]
fn home_configuration_sits_on_the_base_axis() {
    let arm = ArmModel::default_arm();
    let home = arm.home_config().clone();
    assert!(home.iter().all(|&q| q == 0.0));
    let ef = forward_kinematics(&arm, &home).unwrap();
    let oracle = dh_oracle(&arm, &home);
    let height: f64 = arm.links().iter().map(|l| l.d).sum();
    for i in 0..3 {
        assert!((ef.0[i] - oracle[i]).abs() < 1e-12);
    }
    assert!(ef.0[0].abs() < 1e-12 && ef.0[1].abs() < 1e-12);
    assert!((ef.0[2] - height).abs() < 1e-12);
    assert!((height - 1.266).abs() < 1e-12);
}

#[test]
fn matches_homogeneous_oracle_on_random_configurations() {
    let arm = ArmModel::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let q = uniform_config(&arm, &mut rng);
        let ef = forward_kinematics(&arm, &q).unwrap();
        let oracle = dh_oracle(&arm, &q);
        for i in 0..3 {
            assert!((ef.0[i] - oracle[i]).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn position_map_is_lipschitz(
        a in proptest::collection::vec(-3.0f64..3.0, 7),
        d in proptest::collection::vec(-0.2f64..0.2, 7),
    ) {
        let arm = ArmModel::default_arm();
        let b: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + y).collect();
        let pa = forward_kinematics(&arm, &a).unwrap();
        let pb = forward_kinematics(&arm, &b).unwrap();
        let l1: f64 = d.iter().map(|x| x.abs()).sum();
        prop_assert!(pa.distance(&pb) <= arm.reach() * l1 + 1e-12);
    }

    #[test]
    fn reach_bounds_every_position(q in proptest::collection::vec(-3.0f64..3.0, 7)) {
        let arm = ArmModel::default_arm();
        let p = forward_kinematics(&arm, &q).unwrap();
        prop_assert!(p.0.iter().map(|x| x * x).sum::<f64>().sqrt() <= arm.reach() + 1e-12);
    }
}
