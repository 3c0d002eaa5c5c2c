//! Viewpoint classes, their (sin, cos) encoding and yaw binning.

use poselift::camera::{bin_yaw, encode_viewpoint, BinMode, ViewpointClass, DEFAULT_VIEWPOINT_SCALE};

fn main() {
    let m = DEFAULT_VIEWPOINT_SCALE;
    let classes: Vec<ViewpointClass> = ViewpointClass::all().collect();
    println!("class  center  encoding");
    for c in &classes {
        let e = encode_viewpoint(*c, m).unwrap();
        println!(
            "{:>5} {:>6}°  ({:>7.2}, {:>7.2})",
            c.k(),
            c.center_deg(),
            e.0[0],
            e.0[1]
        );
    }

    println!("\nnormalized distance from class 1");
    let first = encode_viewpoint(classes[0], m).unwrap();
    for c in &classes[1..] {
        let d = first.distance(&encode_viewpoint(*c, m).unwrap()) / m;
        println!("  to {}: {d:.4}", c.k());
    }

    println!("\nyaw     nearest  strict");
    for yaw in [0.0, 3.0, 12.0, 22.5, 40.0, 181.0, 350.0] {
        let show = |c: Option<ViewpointClass>| c.map_or("-".to_string(), |c| c.k().to_string());
        println!(
            "{yaw:>5}° {:>8} {:>7}",
            show(bin_yaw(yaw, BinMode::Nearest)),
            show(bin_yaw(yaw, BinMode::default()))
        );
    }
}
