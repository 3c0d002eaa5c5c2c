//! Writes the procedural motion corpus as BVH files.
//!
//! cargo run --example generate_corpus -- /tmp/bvh

use poselift::mocap::{generate_corpus, CorpusSpec};

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bvh".to_string());
    std::fs::create_dir_all(&out)?;
    let spec = CorpusSpec::default();
    let corpus = generate_corpus(&spec);
    for seq in &corpus {
        let path = std::path::Path::new(&out).join(format!("{}.bvh", seq.name));
        std::fs::write(&path, seq.document.to_bvh_string())?;
        println!(
            "{} ({}, {} frames)",
            path.display(),
            if seq.activity.is_upright() {
                "upright"
            } else {
                "not upright"
            },
            seq.document.num_frames()
        );
    }
    println!("{} sequences", corpus.len());
    Ok(())
}
