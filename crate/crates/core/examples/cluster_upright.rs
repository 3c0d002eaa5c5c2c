//! Upright frame selection on a generated corpus: rotation-vector
//! clustering keeps the dominant standing posture and drops sitting, lying
//! and crouching frames.

use std::collections::BTreeMap;

use poselift::bvh::JointMap;
use poselift::mocap::{generate_corpus, CorpusSpec, CM_TO_MM};
use poselift::synth::{select_frames, MotionSequence, UprightSelection};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus: Vec<MotionSequence> = generate_corpus(&CorpusSpec::default())
        .into_iter()
        .map(Into::into)
        .collect();
    for clusters in [Some(2), Some(3), Some(4), Some(6)] {
        let selection = UprightSelection {
            rotation_clusters: clusters,
            ..UprightSelection::default()
        };
        let (total, kept) = select_frames(&corpus, &selection, 1, &JointMap::cmu(), CM_TO_MM)?;
        let mut per_activity: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &kept {
            *per_activity.entry(corpus[f.sequence].activity.as_str()).or_default() += 1;
        }
        println!("k = {:?}: kept {} of {total} frames", clusters.unwrap_or(0), kept.len());
        for (activity, n) in per_activity {
            println!("    {activity:<8} {n}");
        }
    }
    Ok(())
}
