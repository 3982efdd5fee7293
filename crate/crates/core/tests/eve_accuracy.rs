use std::f64::consts::PI;

use k06_core::adversary::{correlate_angles, SiphonAmount};
use k06_core::analysis::experiments::rmse_slope;
use k06_core::analysis::{evaluate_cell, leakage_vs_n, Scenario};
use k06_core::quantum::{polarization_distance, reduce_angle};
use k06_core::rng::stream;
use k06_core::Exec;
use rand::Rng;

#[test]
fn exact_angles_recover_the_message() {
    let mut rng = stream(21, &[]);
    for _ in 0..10_000 {
        let x = rng.random::<f64>() * PI;
        let a = rng.random::<f64>() * 2.0 * PI;
        let b = rng.random::<f64>() * 2.0 * PI;
        let a1 = reduce_angle(x + a, PI);
        let a2 = reduce_angle(x + a + b, PI);
        let a3 = reduce_angle(x + b, PI);
        assert!(polarization_distance(correlate_angles(a1, a2, a3), x) < 1e-12);
    }
}

#[test]
fn rmse_falls_as_inverse_root_n() {
    let pts = leakage_vs_n(&[100, 1_000, 10_000, 100_000], 1_000, 22, Exec::default());
    let slope = rmse_slope(&pts);
    assert!((-0.6..=-0.4).contains(&slope), "{slope} {pts:?}");
}

#[test]
fn large_capture_reads_nearly_every_bit() {
    // 2·10^4 photons per leg is 10^4 per basis
    let sc = Scenario::new(1e5, 5.0).bits(10);
    let p = evaluate_cell(&sc, SiphonAmount::Count(20_000), 100, 23, Exec::default()).unwrap();
    assert!(p.eve_accuracy.point > 0.99, "{:?}", p.eve_accuracy);
}

#[test]
fn accuracy_grows_with_capture() {
    let sc = Scenario::new(1000.0, 5.0);
    let acc: Vec<f64> = [0, 4, 16, 64]
        .iter()
        .map(|&n| {
            evaluate_cell(&sc, SiphonAmount::Count(n), 300, 24, Exec::default())
                .unwrap()
                .eve_accuracy
                .point
        })
        .collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0] - 0.03), "{acc:?}");
    assert!(acc[3] > 0.95, "{acc:?}");
}
