//! Strategies shared by the property tests.

#![allow(dead_code)]

use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use quadric_core::geometry::{CameraView, DualConic, EllipsoidParams, Intrinsics};
use quadric_core::scene_sim::look_at;

pub fn intrinsics() -> Intrinsics {
    Intrinsics::new(525.0, 525.0, 319.5, 239.5)
}

pub fn ellipsoid() -> impl Strategy<Value = EllipsoidParams> {
    (
        prop::array::uniform3(-0.5f64..0.5),
        prop::array::uniform3(-3.0f64..3.0),
        prop::array::uniform3(0.05f64..0.4),
    )
        .prop_map(|(c, a, s)| {
            EllipsoidParams::new(Vector3::from(c), Vector3::from(a), Vector3::from(s)).unwrap()
        })
}

/// Camera looking at `target` from azimuth/elevation/distance.
pub fn camera_at(target: &Point3<f64>, (az, el, dist): (f64, f64, f64)) -> CameraView {
    let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    CameraView::new(
        intrinsics(),
        look_at(&(target + dir * dist), target).unwrap(),
    )
    .unwrap()
}

pub fn view() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0f64..std::f64::consts::TAU, -1.0f64..1.0, 1.5f64..4.0)
}

/// Scale- and sign-free form of a dual conic for comparisons.
pub fn normalized(c: &DualConic) -> Matrix3<f64> {
    let m = c.matrix();
    let s = if m[(2, 2)] < 0.0 { -1.0 } else { 1.0 };
    m * (s / m.norm())
}
