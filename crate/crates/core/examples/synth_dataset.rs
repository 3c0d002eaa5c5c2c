//! Generates a motion corpus, selects upright frames by clustering rotation
//! vectors, and synthesizes 2D/3D pose records for all eight viewpoints.
//!
//! cargo run --release --example synth_dataset [-- out.jsonl]

use std::collections::BTreeMap;

use poselift::mocap::{generate_corpus, CorpusSpec};
use poselift::records::write_records;
use poselift::synth::{generate_dataset, MotionSequence, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus: Vec<MotionSequence> = generate_corpus(&CorpusSpec::default())
        .into_iter()
        .map(Into::into)
        .collect();
    let config = SynthConfig {
        seed: 11,
        ..SynthConfig::default()
    };
    let out = generate_dataset(&corpus, &config)?;

    let mut per_activity: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for seq in &corpus {
        per_activity.entry(&seq.activity).or_default().0 += seq.document.num_frames();
    }
    for f in &out.selected_frames {
        per_activity.entry(&corpus[f.sequence].activity).or_default().1 += 1;
    }
    println!("{:<10} {:>7} {:>9}", "activity", "frames", "selected");
    for (a, (total, kept)) in &per_activity {
        println!("{a:<10} {total:>7} {kept:>9}");
    }
    println!(
        "{} of {} frames selected, {} records, {} skipped",
        out.selected_frames.len(),
        out.candidate_frames,
        out.records.len(),
        out.skipped
    );
    if let Some(path) = std::env::args().nth(1) {
        write_records(&path, &out.records)?;
        println!("wrote {path}");
    }
    Ok(())
}
