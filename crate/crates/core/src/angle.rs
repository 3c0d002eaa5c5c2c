//! Degree-valued angle helpers shared by the BVH and camera code.

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Normalizes an angle in degrees into `[0, 360)`.
pub fn normalize_deg(a: f64) -> f64 {
    let w = a.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}
