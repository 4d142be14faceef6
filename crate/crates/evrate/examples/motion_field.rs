//! Print the apparent image-velocity field induced by a rotation, sampled
//! over the sensor.
//!
//! ```bash
//! cargo run --release --example motion_field
//! ```

use evrate::kinematics::{motion_field, motion_matrix, AngularRates};

fn main() {
    let f = 1464.0;
    let rates = AngularRates::from_deg_s(5.0, -3.0, 10.0);
    let (p, q, r) = rates.to_deg_s();
    println!("rates: p {p:+.1} q {q:+.1} r {r:+.1} deg/s, f = {f} px");
    println!("F(0, 0) = {:.1}", motion_matrix(0.0, 0.0, f));

    println!("{:>8} {:>8} | {:>9} {:>9}", "x [px]", "y [px]", "u [px/s]", "v [px/s]");
    for y in [-200.0, 0.0, 200.0] {
        for x in [-300.0, 0.0, 300.0] {
            let (u, v) = motion_field(x, y, f, &rates);
            println!("{x:>8.0} {y:>8.0} | {u:>9.1} {v:>9.1}");
        }
    }

    // A pure roll spins the field about the optical center: u = r*y, v = -r*x.
    let roll = AngularRates::from_deg_s(0.0, 0.0, 20.0);
    let (u, v) = motion_field(100.0, 0.0, f, &roll);
    println!("\npure roll 20 deg/s at (100, 0): u {u:.2} v {v:.2} px/s (tangential)");
}
