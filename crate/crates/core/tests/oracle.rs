//! Phonon-free correlators against a dense Liouville-space integrator.

mod common;

use common::{max_diff, oracle_grids, small_config};
use qdcorr::correlators::correlation_grids;
use qdcorr::Mode;

#[test]
fn phonon_free_grids_match_dense_regression_oracle() {
    let cfg = small_config();
    let [e1, e2, _] = correlation_grids(Mode::Exact, &cfg).unwrap();
    let [q1, q2, _] = correlation_grids(Mode::Qrt, &cfg).unwrap();
    assert!(max_diff(&e1.values, &q1.values) < 1e-10, "G1 exact vs qrt {}", max_diff(&e1.values, &q1.values));
    assert!(max_diff(&e2.values, &q2.values) < 1e-10, "G2 exact vs qrt {}", max_diff(&e2.values, &q2.values));

    let (g1, g2) = oracle_grids(&cfg, &e1);
    let d1 = max_diff(&e1.values, &g1);
    let d2 = max_diff(&e2.values, &g2);
    assert!(d1 < 1e-6, "G1 vs oracle {d1}");
    assert!(d2 < 1e-6, "G2 vs oracle {d2}");
    // the grids carry real signal
    assert!(g1.iter().map(|z| z.norm()).fold(0.0, f64::max) > 0.1);
}

#[test]
fn phonon_free_polaron_grids_match_exact() {
    let cfg = small_config();
    let [e1, e2, e3] = correlation_grids(Mode::Exact, &cfg).unwrap();
    let [p1, p2, p3] = correlation_grids(Mode::Pme, &cfg).unwrap();
    // the two samplers settle differently after a pulse; compare shared nodes
    let mut shared = 0;
    for (a, b, what) in [(&e1, &p1, "G1"), (&e2, &p2, "G2"), (&e3, &p3, "G2HOM")] {
        for (i, n) in a.t_steps.iter().enumerate() {
            let Some(ib) = b.t_steps.iter().position(|m| m == n) else { continue };
            for (j, k) in a.tau_steps.iter().enumerate() {
                let Some(jb) = b.tau_steps.iter().position(|l| l == k) else { continue };
                let d = (a.at(i, j) - b.at(ib, jb)).norm();
                assert!(d < 1e-6, "{what} at t step {n}, tau step {k}: {d}");
                shared += 1;
            }
        }
    }
    assert!(shared > 1000);
}
