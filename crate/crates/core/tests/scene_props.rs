use proptest::prelude::*;
use quadric_core::constraints::{plane_algebraic_values, projected_ellipse};
use quadric_core::hull::{hull_edges, quickhull_points, Contour2D};
use quadric_core::scene_sim::{render_observations, ObjectMix, ObjectsSpec, SceneSpec};

fn spec(layout: u64, seed: u64, mix: ObjectMix) -> SceneSpec {
    SceneSpec {
        layout_seed: layout,
        seed,
        frames: 12,
        objects: ObjectsSpec {
            count: 3,
            mix,
            ..Default::default()
        },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_single_hulls_are_tangent(layout in 0u64..10_000) {
        let ds = render_observations(&spec(layout, 0, ObjectMix::Single)).unwrap();
        for (f, frame) in ds.frames.iter().enumerate() {
            let cam = ds.camera(ds.gt_poses[f]);
            for d in &frame.detections {
                let q = &ds.objects[d.object_id].quadric;
                let hull = quickhull_points(&d.contour).unwrap();
                // Edges of a 128-sample hull cut inside the conic by at most the sagitta.
                let e = projected_ellipse(q, &cam).unwrap();
                let sagitta = e.semi_axes.max() * (1.0 - (std::f64::consts::PI / 128.0).cos());
                let depth = cam.depth(&nalgebra::Point3::from(q.center));
                let bound = 1e-6f64.max(4.0 * sagitta * q.semi_axes.max() * depth / cam.intrinsics.fx);
                for v in plane_algebraic_values(&q.dual(), &cam, &hull_edges(&hull)).unwrap() {
                    prop_assert!(v.abs() <= bound, "{} > {}", v.abs(), bound);
                }
            }
        }
    }

    #[test]
    fn composites_show_concavity(layout in 0u64..10_000) {
        let ds = render_observations(&spec(layout, 0, ObjectMix::Composite)).unwrap();
        for o in ds.objects.iter().filter(|o| o.is_composite()) {
            let best = ds
                .frames
                .iter()
                .flat_map(|f| f.detections.iter().filter(|d| d.object_id == o.id))
                .map(|d| {
                    let area = Contour2D::new(d.contour.clone()).unwrap().signed_area().abs();
                    1.0 - area / quickhull_points(&d.contour).unwrap().area()
                })
                .fold(0.0f64, f64::max);
            prop_assert!(best >= 0.05, "object {} deficit {}", o.id, best);
        }
    }

    #[test]
    fn rendering_is_deterministic(layout in 0u64..10_000, seed in 0u64..10_000) {
        let mut s = spec(layout, seed, ObjectMix::Mixed);
        s.noise.pixel_sigma = 1.0;
        s.noise.point_sigma = 1.0;
        s.noise.contour_dropout = 0.1;
        s.noise.pose_perturb = [0.01, 0.01];
        prop_assert_eq!(render_observations(&s).unwrap(), render_observations(&s).unwrap());
    }
}

#[test]
fn exact_tangent_hulls_meet_the_strict_bound() {
    let mut s = spec(3, 0, ObjectMix::Single);
    s.noise.exact_tangent = true;
    let ds = render_observations(&s).unwrap();
    for (f, frame) in ds.frames.iter().enumerate() {
        let cam = ds.camera(ds.gt_poses[f]);
        for d in &frame.detections {
            let q = &ds.objects[d.object_id].quadric;
            let hull = quickhull_points(&d.contour).unwrap();
            for v in plane_algebraic_values(&q.dual(), &cam, &hull_edges(&hull)).unwrap() {
                assert!(v.abs() < 1e-6);
            }
        }
    }
}
