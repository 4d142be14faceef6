//! Generate a synthetic star catalog and query which stars a camera pose
//! sees.
//!
//! ```bash
//! cargo run --release --example catalog_fov
//! ```

use evrate::catalog::{query_fov, synthetic_catalog};
use evrate::geometry::{boresight_attitude, CameraModel};

fn main() {
    let catalog = synthetic_catalog(5000, 2024, -1.5, 6.0);
    println!("catalog {:?}: {} stars", catalog.source_name(), catalog.len());

    let camera = CameraModel::new(1464.0, 640, 480, 6.0, 0.2).unwrap();
    let (fov_x, fov_y) = camera.fov();
    println!(
        "camera: {}x{} px, f = {} px, FOV {:.1} x {:.1} deg",
        camera.width,
        camera.height,
        camera.focal_length,
        fov_x.to_degrees(),
        fov_y.to_degrees()
    );

    // Point the boresight at (alpha, delta) = (45 deg, 20 deg), zero roll.
    let attitude = boresight_attitude(45f64.to_radians(), 20f64.to_radians(), 0.0);
    let visible = query_fov(&catalog, &attitude, &camera);
    println!("{} stars in the field of view:", visible.len());
    for vis in visible.iter().take(12) {
        println!(
            "  {:>10}  mag {:5.2}  image ({:+8.2}, {:+8.2}) px",
            vis.star.id, vis.star.magnitude, vis.image.x, vis.image.y
        );
    }
    if visible.len() > 12 {
        println!("  ... and {} more", visible.len() - 12);
    }
}
