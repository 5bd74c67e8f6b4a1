use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use selfmap_core::analysis::winding_from_trajectory;
use selfmap_core::integrator::{integrate, EventKind, IntegratorControls, TerminationCause};
use selfmap_core::shooting::{nodal_transition, shoot_trajectory, ShootingControls};
use selfmap_core::singular_ivp::{half_odd_level, series_at_zero};
use selfmap_core::{alpha, beta, constants, q, ExtReal, MultPair};

fn pair(m0: u32, m1: u32) -> MultPair {
    MultPair::new(m0, m1).unwrap()
}

fn ordered_pair() -> impl Strategy<Value = MultPair> {
    (2u32..=9, 0u32..=8).prop_map(|(m0, d)| pair(m0, m0 + d))
}

fn any_pair() -> impl Strategy<Value = MultPair> {
    (2u32..=9, 2u32..=9).prop_map(|(a, b)| pair(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coefficient_symmetry(p in any_pair(), x in -30.0f64..30.0) {
        let s = p.swapped();
        prop_assert!((alpha(p, x) + alpha(s, -x)).abs() < 1e-13);
        prop_assert!((beta(p, x) + beta(s, -x)).abs() < 1e-13);
    }

    #[test]
    fn coefficients_increase(p in any_pair(), x in -8.0f64..8.0, dx in 1e-3f64..5.0) {
        prop_assert!(alpha(p, x) < alpha(p, x + dx));
        prop_assert!(beta(p, x) < beta(p, x + dx));
    }

    #[test]
    fn zeros_and_their_order(p in ordered_pair()) {
        let k = constants(p).unwrap();
        prop_assert!(alpha(p, k.z_alpha_f64()).abs() < 1e-12);
        prop_assert!(beta(p, k.z_beta).abs() < 1e-12);
        prop_assert!(k.z_alpha_f64() <= k.z_beta && k.z_beta <= k.d_plus);
    }

    #[test]
    fn q_increases_to_b(m0 in 2u32..=8, d in 1u32..=8, x in 0.0f64..10.0, dx in 1e-3f64..3.0) {
        let p = pair(m0, m0 + d);
        let k = constants(p).unwrap();
        let (a, b) = (k.z_alpha_f64() + 1e-6 + x, k.z_alpha_f64() + 1e-6 + x + dx);
        let (ExtReal::Finite(qa), ExtReal::Finite(qb)) = (q(p, a), q(p, b)) else {
            return Err(TestCaseError::fail("q not finite right of z_alpha"));
        };
        prop_assert!(qa < qb);
        prop_assert!(qb <= k.big_b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn series_is_lipschitz_in_v(p in any_pair(), v in -10.0f64..10.0, dv in 1e-6f64..1e-2) {
        let t = 1e-3;
        let a = series_at_zero(p, v, 9).unwrap().local(t);
        let b = series_at_zero(p, v + dv, 9).unwrap().local(t);
        prop_assert!((a.0 - b.0).abs() <= 1.01 * t * dv);
        prop_assert!((a.1 - b.1).abs() <= 1.01 * dv);
    }

    #[test]
    fn series_never_touches_a_level(p in any_pair(), v in -1e4f64..1e4) {
        let s = series_at_zero(p, v, 9).unwrap();
        for i in 0..=50 {
            let t = s.validity_radius * i as f64 / 50.0;
            let (r, rt, _) = s.local(t);
            let l = half_odd_level(((r - FRAC_PI_2) / std::f64::consts::PI).round() as i64);
            prop_assert!(!((r - l).abs() < 1e-8 && rt.abs() < 1e-8));
        }
    }

    #[test]
    fn handoff_point_does_not_matter(p in ordered_pair(), v in -10.0f64..10.0) {
        let c = IntegratorControls { x_max: 1.0, ..IntegratorControls::default() }.forward_only();
        let s = series_at_zero(p, v, 9).unwrap();
        let x = (0.1f64).tan().ln();
        let r = |t0: f64| {
            let tr = integrate(p, s.state_at_local(t0), &c).unwrap();
            tr.state_at(x).unwrap().r
        };
        prop_assert!((r(1e-3) - r(1e-4)).abs() < 1e-8);
    }

    #[test]
    fn sign_symmetry(p in ordered_pair(), v in 0.1f64..3e3) {
        let c = IntegratorControls::default().forward_only();
        let a = shoot_trajectory(p, v, &c).unwrap();
        let b = shoot_trajectory(p, -v, &c).unwrap();
        prop_assert_eq!(a.termination.mirrored(), b.termination);
        prop_assert_eq!(a.crossings_of(0), b.crossings_of(-1));
        prop_assert_eq!(a.crossings_of(-1), b.crossings_of(0));
    }

    #[test]
    fn crossing_directions_alternate(p in any_pair(), v in 1.0f64..5e3) {
        let t = shoot_trajectory(p, v, &IntegratorControls::default()).unwrap();
        for level in -3..=3 {
            let dirs: Vec<i8> = t.events.iter().filter_map(|e| match e.kind {
                EventKind::HalfPiCross { level: l, direction } if l == level => Some(direction),
                _ => None,
            }).collect();
            for w in dirs.windows(2) {
                prop_assert_ne!(w[0], w[1]);
            }
        }
        for e in &t.events {
            if let EventKind::HalfPiCross { level, .. } = e.kind {
                let tangent = (e.state.r - half_odd_level(level)).abs() < 1e-9 && e.state.r_prime.abs() < 1e-9;
                prop_assert!(!tangent);
            }
        }
    }

    #[test]
    fn winding_bounds_nodal(p in ordered_pair(), v in 1.0f64..1e4) {
        let t = shoot_trajectory(p, v, &IntegratorControls::default()).unwrap();
        prop_assume!(t.termination.is_classified());
        let w = winding_from_trajectory(&t).unwrap();
        prop_assert!((w.floor_omega() - t.nodal() as i64).abs() <= 1);
    }
}

#[test]
fn fate_is_stable_under_halved_tolerances() {
    let c = IntegratorControls::default();
    let h = c.tightened(2.0);
    let corpus = [(2, 2), (2, 3), (3, 3), (2, 4), (3, 5), (5, 7), (6, 6), (7, 9), (4, 2), (6, 3)];
    for (m0, m1) in corpus {
        for v in [0.5, 1.0, 3.0, 30.0, 700.0, 2.5e4, 1e6] {
            let a = shoot_trajectory(pair(m0, m1), v, &c).unwrap();
            let b = shoot_trajectory(pair(m0, m1), v, &h).unwrap();
            assert_eq!(a.termination, b.termination, "({m0},{m1}) v={v}");
            assert_eq!(a.nodal(), b.nodal(), "({m0},{m1}) v={v}");
        }
    }
}

#[test]
fn converged_runs_end_at_the_energy_limit() {
    for (m0, m1) in [(2, 2), (3, 5), (5, 7), (7, 9)] {
        let p = pair(m0, m1);
        let t = shoot_trajectory(p, 1.0, &IntegratorControls::default()).unwrap();
        assert_eq!(t.termination, TerminationCause::Converged(0));
        let last = t.samples.last().unwrap();
        assert!((last.w_val - m1 as f64 / 2.0).abs() < 1e-4);
        // No crossing happens once the run has settled.
        let window = t.events.iter().find(|e| matches!(e.kind, EventKind::ConvergenceWindow { .. })).unwrap();
        assert!(t.half_pi_crossings().iter().all(|e| e.x < window.x));
    }
}

#[test]
fn bisection_is_bit_reproducible() {
    let c = ShootingControls::default();
    for (m0, m1) in [(2, 3), (3, 4)] {
        let a = nodal_transition(pair(m0, m1), 1, 1.0, &c).unwrap();
        let b = nodal_transition(pair(m0, m1), 1, 1.0, &c).unwrap();
        assert_eq!((a.0.to_bits(), a.1.to_bits()), (b.0.to_bits(), b.1.to_bits()));
    }
}
