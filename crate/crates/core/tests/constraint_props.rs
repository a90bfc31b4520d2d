mod common;

use common::{camera_at, ellipsoid, view};
use nalgebra::{Point2, Point3};
use proptest::prelude::*;
use quadric_core::constraints::{
    plane_algebraic_values, projected_ellipse, ConstraintSpec, Measurement, Observation,
    CONIC_POLYGON_VERTICES,
};
use quadric_core::geometry::{DualQuadric, Line2};
use quadric_core::hull::Contour2D;
use quadric_core::polygon::Polygon2D;
use quadric_core::scene_sim::tangent_polygon;

/// Sides of the exact conic bbox; a sampled contour would sit inside it by the sagitta.
fn box_lines(b: [f64; 4]) -> Vec<Line2> {
    let c = [
        Point2::new(b[0], b[1]),
        Point2::new(b[2], b[1]),
        Point2::new(b[2], b[3]),
        Point2::new(b[0], b[3]),
    ];
    (0..4)
        .map(|i| Line2::through(&c[i], &c[(i + 1) % 4]).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plane_residual_ignores_quadric_and_line_scale(
        q in ellipsoid(),
        v in view(),
        lambda in 1e-3f64..1e3,
        mu in prop::collection::vec(1e-3f64..1e3, 6),
    ) {
        let cam = camera_at(&Point3::from(q.center), v);
        let e = projected_ellipse(&q, &cam).unwrap();
        let lines: Vec<Line2> = (0..6).map(|i| e.tangent_at(i as f64)).collect();
        // Move the lines off tangency so the residuals are not all zero.
        let lines: Vec<Line2> = lines
            .iter()
            .map(|l| Line2::new(l.coeffs() + nalgebra::Vector3::new(0.0, 0.0, 7.0)).unwrap())
            .collect();
        let scaled_lines: Vec<Line2> =
            lines.iter().zip(&mu).map(|(l, m)| Line2::new(l.coeffs() * *m).unwrap()).collect();
        let scaled_q = DualQuadric::new(q.dual().matrix() * lambda).unwrap();
        let a = plane_algebraic_values(&q.dual(), &cam, &lines).unwrap();
        let b = plane_algebraic_values(&scaled_q, &cam, &scaled_lines).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3));
        }
    }

    #[test]
    fn every_family_vanishes_at_ground_truth(q in ellipsoid(), v in view()) {
        let cam = camera_at(&Point3::from(q.center), v);
        let e = projected_ellipse(&q, &cam).unwrap();
        // Tangent hull for the plane term, on-curve samples for the point term.
        let hull_obs = Observation::from_contour(0, 0, Contour2D::new(tangent_polygon(&e, 128)).unwrap(), 0.0, 0).unwrap();
        let curve_obs = Observation::from_contour(0, 0, Contour2D::new(e.polygon(128)).unwrap(), 0.0, 0).unwrap();
        let cases = [
            ("plane-hull", ConstraintSpec::parse("plane-hull", 0.0, 0).unwrap().prepare(&hull_obs).unwrap()),
            ("plane-bbox", Measurement::Lines(box_lines(e.bbox()))),
            ("point-contour", ConstraintSpec::parse("point-contour", 0.0, 0).unwrap().prepare(&curve_obs).unwrap()),
            ("distribution-conic", Measurement::Ellipse(e)),
            ("overlap-conic", Measurement::Region(Polygon2D::new(e.polygon(CONIC_POLYGON_VERTICES)).unwrap())),
        ];
        for (name, meas) in cases {
            let spec = ConstraintSpec::parse(name, 0.0, 0).unwrap();
            let r = spec.residual(&meas, &q, &cam).unwrap();
            prop_assert!(r.values.amax() < 1e-8, "{} residual {}", name, r.values.amax());
        }
    }
}
