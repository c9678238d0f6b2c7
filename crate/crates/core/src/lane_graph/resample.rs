use super::Lane;
use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, point_at_arc_length, Point2};

/// Returns `lane` with exactly `n` centerline nodes equally spaced by arc
/// length; both endpoints are kept exactly.
pub fn resample_lane_nodes(lane: &Lane, n: usize) -> Result<Lane> {
    if n < 2 {
        return Err(Error::Argument(format!("resample needs n >= 2, got {n}")));
    }
    let pts = lane.points();
    if pts.len() < 2 {
        return Err(Error::Argument(format!(
            "lane {} has {} centerline points, needs >= 2",
            lane.lane_id,
            pts.len()
        )));
    }
    let cum = cumulative_lengths(&pts);
    let total = cum[cum.len() - 1];
    let resampled: Vec<Point2> = (0..n)
        .map(|i| match i {
            0 => pts[0],
            _ if i == n - 1 => pts[pts.len() - 1],
            _ => point_at_arc_length(&pts, &cum, total * i as f64 / (n - 1) as f64).0,
        })
        .collect();
    Ok(Lane::new(lane.lane_id, lane.lane_type, &resampled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polyline_length;
    use crate::lane_graph::LaneType;
    use proptest::prelude::*;

    fn lane(points: &[(f64, f64)]) -> Lane {
        let pts: Vec<Point2> = points.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        Lane::new(1, LaneType::Vehicle, &pts)
    }

    #[test]
    fn straight_segment_equal_spacing() {
        let out = resample_lane_nodes(&lane(&[(0.0, 0.0), (10.0, 0.0)]), 5).unwrap();
        let xs: Vec<f64> = out.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert_eq!(out.centerline[3].index, 3);
    }

    #[test]
    fn uniform_polyline_is_a_fixed_point() {
        let l = lane(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let out = resample_lane_nodes(&l, 4).unwrap();
        for (a, b) in l.points().iter().zip(out.points()) {
            assert!(a.distance(b) < 1e-12);
        }
    }

    #[test]
    fn l_shape_middle_node_at_corner() {
        let out = resample_lane_nodes(&lane(&[(0.0, 0.0), (5.0, 0.0), (5.0, 5.0)]), 3).unwrap();
        assert!(out.points()[1].distance(Point2::new(5.0, 0.0)) < 1e-12);
    }

    #[test]
    fn fewer_than_two_nodes_is_an_error() {
        assert!(matches!(
            resample_lane_nodes(&lane(&[(0.0, 0.0), (1.0, 0.0)]), 1),
            Err(Error::Argument(_))
        ));
    }

    proptest! {
        #[test]
        fn arc_length_is_preserved(
            raw in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 2..8),
            n in 2usize..30,
        ) {
            let l = lane(&raw);
            let out = resample_lane_nodes(&l, n).unwrap();
            prop_assert_eq!(out.centerline.len(), n);
            prop_assert_eq!(out.points()[0], l.points()[0]);
            prop_assert_eq!(out.points()[n - 1], l.points()[raw.len() - 1]);
            // Equal spacing along the original curve; on straight stretches
            // this makes the output length match the input.
            let cum = cumulative_lengths(&l.points());
            let total = cum[cum.len() - 1];
            for (i, p) in out.points().iter().enumerate() {
                let expect = point_at_arc_length(&l.points(), &cum, total * i as f64 / (n - 1) as f64).0;
                prop_assert!(p.distance(expect) < 1e-9);
            }
        }
    }

    #[test]
    fn arc_length_preserved_when_vertices_are_kept() {
        // n chosen so every original vertex is a sample point.
        let l = lane(&[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)]);
        let out = resample_lane_nodes(&l, 12).unwrap();
        assert!((polyline_length(&out.points()) - polyline_length(&l.points())).abs() < 1e-9);
    }
}
