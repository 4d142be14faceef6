//! Run a small seeded Monte Carlo campaign and write its result files.
//!
//! ```bash
//! cargo run --release --example campaign_mini
//! ```

use evrate::harness::{emit_results, run_campaign, SimulationConfig};

fn main() {
    let config = SimulationConfig {
        case_count: 10,
        seed: 7,
        dual_camera: true,
        ..Default::default()
    };

    println!("running {} dual-camera cases (seed {})...", config.case_count, config.seed);
    let output = run_campaign(&config).expect("valid default configuration");

    for result in &output.results {
        let row = &result.row;
        print!(
            "case {:2}  {:<14} {:>7} events  ",
            row.case_id,
            row.status.as_str(),
            row.n_events_a
        );
        match (row.fused_deg_s, row.truth_deg_s) {
            (Some(f), t) => println!(
                "fused error ({:+.4}, {:+.4}, {:+.4}) deg/s",
                f[0] - t[0],
                f[1] - t[1],
                f[2] - t[2]
            ),
            _ => println!(),
        }
    }

    let summary = &output.summary;
    if let (Some(single), Some(fused)) = (&summary.rms_single, &summary.rms_fused) {
        println!("\nsingle-camera RMS: p {:.4} q {:.4} r {:.4} | total {:.4} deg/s",
            single.p, single.q, single.r, single.total);
        println!("fused RMS:         p {:.4} q {:.4} r {:.4} | total {:.4} deg/s",
            fused.p, fused.q, fused.r, fused.total);
        println!("roll improvement from fusion: {:.1}x", single.r / fused.r);
    }

    let dir = std::env::temp_dir().join("evrate_campaign_mini");
    let rows: Vec<_> = output.results.iter().map(|r| r.row.clone()).collect();
    emit_results(&rows, summary, Some(&config), &dir).unwrap();
    println!("\nwrote cases.csv, summary.json and error scatter files to {}", dir.display());
}
