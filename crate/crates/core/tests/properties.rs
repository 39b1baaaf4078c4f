use proptest::prelude::*;

use qdcorr::figures::purity;
use qdcorr::linalg::Op2;
use qdcorr::model::{polaron_shift, pulse_envelope, spectral_density, PhononBath, PhysicsConfig, PulseTrain};
use qdcorr::nonmarkov::{positive_growth, trace_distance, BlochPair};
use qdcorr::pathint::Adm;
use qdcorr::{Complex64, EtaTable, Model, PathIntegral};

fn bath(lambda: f64, temperature: f64) -> PhononBath {
    PhononBath { lambda, temperature, ..Default::default() }
}

/// `(1 + r·σ)/2` for `|r| ≤ 1`.
fn state(r: [f64; 3]) -> Op2<f64> {
    let [x, y, z] = r;
    Op2([
        [Complex64::new(0.5 * (1.0 - z), 0.0), Complex64::new(0.5 * x, 0.5 * y)],
        [Complex64::new(0.5 * x, -0.5 * y), Complex64::new(0.5 * (1.0 + z), 0.0)],
    ])
}

fn ball() -> impl Strategy<Value = [f64; 3]> {
    ([-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0], 0.0f64..=1.0).prop_map(|(v, len)| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
        v.map(|c| c / n * len)
    })
}

proptest! {
    #[test]
    fn spectral_density_is_nonnegative_and_linear_in_lambda(w in 0.0f64..20.0, lambda in 0.01f64..10.0, t in 1.0f64..100.0) {
        let one = spectral_density(w, &bath(1.0, t)).unwrap();
        let scaled = spectral_density(w, &bath(lambda, t)).unwrap();
        prop_assert!(one >= 0.0);
        prop_assert!((scaled - lambda * one).abs() <= 1e-12 * (lambda * one).abs().max(1e-300));
    }

    #[test]
    fn polaron_shift_grows_with_lambda_and_ignores_temperature(a in 0.0f64..5.0, d in 0.01f64..5.0, t in 1.0f64..100.0) {
        let lo = polaron_shift(&bath(a, 4.0)).unwrap();
        let hi = polaron_shift(&bath(a + d, 4.0)).unwrap();
        prop_assert!(hi > lo);
        let warm = polaron_shift(&bath(a, t)).unwrap();
        prop_assert!((warm - lo).abs() <= 1e-14 * lo.abs().max(1e-300));
    }

    #[test]
    fn envelope_repeats_with_the_period(u in -15.0f64..15.0, period in 50.0f64..20_000.0, fwhm in 1.0f64..5.0) {
        let train = PulseTrain { period, fwhm, count: 4, ..Default::default() };
        let t = train.center(1) + u;
        let a = pulse_envelope(t, &train).unwrap();
        let b = pulse_envelope(t + period, &train).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300), "{} vs {}", a, b);
    }

    #[test]
    fn trace_distance_is_a_bounded_metric(a in ball(), b in ball(), c in ball()) {
        let (ra, rb, rc) = (state(a), state(b), state(c));
        let ab = trace_distance(&ra, &rb).unwrap();
        let ba = trace_distance(&rb, &ra).unwrap();
        let ac = trace_distance(&ra, &rc).unwrap();
        let cb = trace_distance(&rc, &rb).unwrap();
        prop_assert!((-1e-15..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-14);
        prop_assert!(ab <= ac + cb + 1e-12);
        // for qubits D = |r_a − r_b| / 2
        let half = 0.5 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        prop_assert!((ab - half).abs() < 1e-12);
    }

    #[test]
    fn antipodal_pairs_are_fully_distinguishable(k in 0usize..64, count in 1usize..64) {
        let p = BlochPair::fibonacci(k % count, count);
        let d = trace_distance(&p.state::<f64>(1.0), &p.state(-1.0)).unwrap();
        prop_assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growth_is_nonnegative_and_vanishes_on_decay(xs in prop::collection::vec(0.0f64..1.0, 2..50)) {
        prop_assert!(positive_growth(&xs) >= 0.0);
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(positive_growth(&sorted), 0.0);
    }

    #[test]
    fn purity_ignores_overall_scale_and_stays_below_one(
        side in 0.1f64..2.0, centre in 0.0f64..1.0, width in 1.0f64..10.0, scale in 1e-6f64..1e6,
    ) {
        let tau: Vec<f64> = (0..=600).map(|k| k as f64 * 0.5).collect();
        let g: Vec<f64> = tau
            .iter()
            .map(|&t| centre * (-t / width).exp() + side * (-(t - 200.0).abs() / width).exp())
            .collect();
        let p = purity(&tau, &g, 200.0).unwrap();
        let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
        let q = purity(&tau, &scaled, 200.0).unwrap();
        prop_assert!((p - q).abs() < 1e-12);
        prop_assert!(p <= 1.0);
    }

    #[test]
    fn set_path_round_trips(lambda in 0.0f64..10.0, t in 1.0f64..100.0) {
        let mut cfg = PhysicsConfig::default();
        cfg.set_path("bath.lambda", &lambda.to_string()).unwrap();
        cfg.set_path("bath.temperature", &t.to_string()).unwrap();
        prop_assert_eq!(cfg.bath.lambda, lambda);
        prop_assert_eq!(cfg.bath.temperature, t);
        let again = PhysicsConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(again.hash_hex(), cfg.hash_hex());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn eta_table_scales_linearly_in_lambda(lambda in 0.1f64..10.0, t in 2.0f64..80.0) {
        let at = |l: f64| {
            let mut cfg = PhysicsConfig::default();
            cfg.bath = bath(l, t);
            EtaTable::compute(&Model::new(&cfg).unwrap(), 0.5, 5).unwrap()
        };
        let one = at(1.0);
        let scaled = at(lambda);
        for l in 0..=5 {
            let want = one.get(l) * lambda;
            prop_assert!((scaled.get(l) - want).norm() <= 1e-12 * want.norm().max(1e-300), "cell {}", l);
        }
        prop_assert!((scaled.tail - one.tail * lambda).norm() <= 1e-10 * (one.tail * lambda).norm().max(1e-300));
    }

    #[test]
    fn path_integral_keeps_the_state_physical(lambda in 0.0f64..3.0, t in 4.0f64..70.0, area in 0.0f64..6.0, n_c in 2usize..7) {
        let mut cfg = PhysicsConfig::default();
        cfg.bath = bath(lambda, t);
        cfg.pulses.area = area;
        cfg.pulses.period = 60.0;
        let model = Model::new(&cfg).unwrap();
        let engine = PathIntegral::from_model(&model, 0.5, n_c, 200.0, 1 << 30).unwrap();
        let traj = engine.trajectory_from(&Adm::ground(engine.slices()), &[], &mut |_| Ok(())).unwrap();
        prop_assert!(traj.invariants.hold(), "{:?}", traj.invariants);
        prop_assert!(traj.rho.iter().all(|r| (-1e-9..=1.0 + 1e-9).contains(&r[3].re)));
    }
}
