//! Parses a BVH file and prints the skeleton joints of one frame.
//!
//! cargo run --example parse_bvh -- crates/core/fixtures/cmu_walk.bvh 3

use poselift::bvh::{map_to_skeleton17, parse_bvh, JointMap};
use poselift::mocap::CM_TO_MM;
use poselift::skeleton::JointId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/cmu_walk.bvh").to_string());
    let frame: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let doc = parse_bvh(&std::fs::read_to_string(&path)?)?;
    println!(
        "{path}: {} joints, {} channels, {} frames at {} s",
        doc.joints().len(),
        doc.num_channels(),
        doc.num_frames(),
        doc.frame_time()
    );
    let positions = doc.forward_kinematics(frame)?;
    let pose = map_to_skeleton17(&doc, &positions, &JointMap::cmu(), CM_TO_MM)?;
    println!("frame {frame}, millimeters:");
    for j in JointId::ALL {
        let p = pose.joint(j);
        println!("  {:<10} {:>9.1} {:>9.1} {:>9.1}", j.name(), p.x, p.y, p.z);
    }
    let bones = pose.bone_lengths();
    println!(
        "mean bone length {:.1} mm",
        bones.iter().sum::<f64>() / bones.len() as f64
    );
    Ok(())
}
