//! Simulate one event-camera acquisition of a rotating star field and write
//! the stream to CSV and compact binary files.
//!
//! ```bash
//! cargo run --release --example simulate_stream
//! ```

use evrate::catalog::synthetic_catalog;
use evrate::event_sim::{simulate_case, SimSettings};
use evrate::geometry::{boresight_attitude, CameraModel};
use evrate::kinematics::AngularRates;

fn main() {
    let catalog = synthetic_catalog(5000, 2024, -1.5, 6.0);
    let camera = CameraModel::new(1464.0, 640, 480, 6.0, 0.2).unwrap();
    let attitude = boresight_attitude(120f64.to_radians(), -30f64.to_radians(), 0.3);
    let rates = AngularRates::from_deg_s(8.0, -12.0, 20.0);

    let stream = simulate_case(&catalog, &camera, &attitude, &rates, 0.1, &SimSettings::default())
        .expect("simulation parameters are valid");

    println!("simulated {} events over {} s", stream.len(), stream.window_seconds());
    let positive = stream.events.iter().filter(|e| e.polarity > 0).count();
    println!("polarity split: {positive} positive, {} negative", stream.len() - positive);
    if let (Some(first), Some(last)) = (stream.events.first(), stream.events.last()) {
        println!("first event: t {} us at ({}, {})", first.t_us, first.x, first.y);
        println!("last event:  t {} us at ({}, {})", last.t_us, last.x, last.y);
    }

    let dir = std::env::temp_dir().join("evrate_simulate_stream");
    std::fs::create_dir_all(&dir).unwrap();
    let csv_path = dir.join("events.csv");
    let evs_path = dir.join("events.evs");
    stream.write_csv_file(&csv_path).unwrap();
    stream.write_evs_file(&evs_path).unwrap();
    println!("wrote {}", csv_path.display());
    println!("wrote {} ({} bytes)", evs_path.display(), std::fs::metadata(&evs_path).unwrap().len());
}
