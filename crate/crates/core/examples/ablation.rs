//! Runs the synthetic benchmark: viewpoint features on/off, a 2D noise
//! sweep, and joint-set vs all-joint vs nearest-neighbor regression.
//!
//! cargo run --release --example ablation [-- report.json]

use std::time::Instant;

use poselift::benchmark::BenchmarkSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = BenchmarkSpec::default();
    let t0 = Instant::now();
    let data = spec.prepare()?;
    println!(
        "{} upright frames, {} records: {} train / {} test ({:.1}s)",
        data.synth.selected_frames.len(),
        data.synth.records.len(),
        data.train.len(),
        data.test.len(),
        t0.elapsed().as_secs_f64()
    );
    let t1 = Instant::now();
    let report = spec.run(&data)?;
    println!("{}", report.to_text());
    println!("ablation took {:.1}s", t1.elapsed().as_secs_f64());
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
