//! Dual-camera setup: two orthogonally mounted cameras each estimate rates,
//! then fusion discards both roll channels and recovers all three axes.
//!
//! ```bash
//! cargo run --release --example dual_camera_fusion
//! ```

use evrate::event_sim::simulate_case;
use evrate::fusion::{fuse, rates_to_inertial, DualMounting};
use evrate::geometry::boresight_attitude;
use evrate::harness::{estimate_stream, load_catalog, SimulationConfig};
use evrate::kinematics::AngularRates;

fn main() {
    let config = SimulationConfig::default();
    let catalog = load_catalog(&config).unwrap();
    let camera = config.camera().unwrap();

    let attitude_a = boresight_attitude(80f64.to_radians(), 10f64.to_radians(), 0.7);
    let truth = AngularRates::from_deg_s(14.0, -7.0, 22.0);

    let mounting = DualMounting::orthogonal();
    let attitude_b = mounting.a_to_b() * attitude_a;
    let truth_b = AngularRates::from_vector(&(mounting.a_to_b() * truth.as_vector()));

    let mut estimates = Vec::new();
    for (tag, attitude, rates, seed) in
        [("A", attitude_a, truth, 1u64), ("B", attitude_b, truth_b, 2u64)]
    {
        let stream = simulate_case(
            &catalog,
            &camera,
            &attitude,
            &rates,
            config.window_s,
            &config.sim_settings(seed),
        )
        .expect("valid simulation");
        let (estimate, tiles) = estimate_stream(&stream, &config).expect("observable case");
        let (p, q, r) = estimate.rates.to_deg_s();
        let (tp, tq, tr) = rates.to_deg_s();
        println!(
            "camera {tag}: {} events, {} tiles",
            stream.len(),
            tiles.len()
        );
        println!("  estimate  p {p:+9.4} q {q:+9.4} r {r:+9.4} deg/s");
        println!("  truth     p {tp:+9.4} q {tq:+9.4} r {tr:+9.4} deg/s (own frame)");
        estimates.push(estimate);
    }

    let fused = fuse(&estimates[0], &estimates[1], &mounting, false).expect("observable fusion");
    let (p, q, r) = fused.rates.to_deg_s();
    let (tp, tq, tr) = truth.to_deg_s();
    println!("\nfused (camera-A frame):");
    println!("  estimate  p {p:+9.4} q {q:+9.4} r {r:+9.4} deg/s");
    println!("  truth     p {tp:+9.4} q {tq:+9.4} r {tr:+9.4} deg/s");
    println!("  error     p {:+9.4} q {:+9.4} r {:+9.4} deg/s", p - tp, q - tq, r - tr);

    // Any attitude reference (star tracker, truth here) moves the result to
    // the inertial frame.
    let inertial = rates_to_inertial(&fused.rates, &attitude_a);
    let inertial_truth = rates_to_inertial(&truth, &attitude_a);
    println!(
        "\ninertial estimate  [{:+.4}, {:+.4}, {:+.4}] deg/s",
        inertial.x.to_degrees(),
        inertial.y.to_degrees(),
        inertial.z.to_degrees()
    );
    println!(
        "inertial truth     [{:+.4}, {:+.4}, {:+.4}] deg/s",
        inertial_truth.x.to_degrees(),
        inertial_truth.y.to_degrees(),
        inertial_truth.z.to_degrees()
    );
}
