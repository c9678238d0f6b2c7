//! Planar points and polyline helpers, meters throughout.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Point2, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn from_heading(heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        Self::new(c, s)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`; values already in range are returned unchanged.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Cumulative arc length at each vertex; first entry 0.
pub fn cumulative_lengths(points: &[Point2]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(points.len());
    out.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        out.push(acc);
    }
    out.truncate(points.len());
    out
}

pub fn polyline_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Point at arc length `s` (clamped to the polyline) and the direction of the
/// segment containing it.
pub fn point_at_arc_length(points: &[Point2], cumulative: &[f64], s: f64) -> (Point2, Point2) {
    debug_assert!(points.len() >= 2 && cumulative.len() == points.len());
    let total = cumulative[cumulative.len() - 1];
    let s = s.clamp(0.0, total);
    // First segment whose end lies at or beyond s.
    let seg = cumulative[1..]
        .partition_point(|&c| c < s)
        .min(points.len() - 2);
    let (a, b) = (points[seg], points[seg + 1]);
    let len = cumulative[seg + 1] - cumulative[seg];
    let dir = if len > 0.0 { (b - a) * (1.0 / len) } else { Point2::new(1.0, 0.0) };
    if s >= cumulative[seg + 1] {
        return (b, dir);
    }
    let t = if len > 0.0 { (s - cumulative[seg]) / len } else { 0.0 };
    (a.lerp(b, t), dir)
}

/// Distance from `p` to the closest point of a polyline.
pub fn distance_to_polyline(p: Point2, points: &[Point2]) -> f64 {
    if points.len() == 1 {
        return p.distance(points[0]);
    }
    points
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            p.distance(a + ab * t)
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_is_identity_in_range_and_folds_outside() {
        assert_eq!(wrap_angle(1.0), 1.0);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn arc_length_lookup() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(5.0, 0.0), Point2::new(5.0, 5.0)];
        let cum = cumulative_lengths(&pts);
        assert_eq!(cum, vec![0.0, 5.0, 10.0]);
        assert_eq!(point_at_arc_length(&pts, &cum, 5.0).0, Point2::new(5.0, 0.0));
        assert_eq!(point_at_arc_length(&pts, &cum, 7.5).0, Point2::new(5.0, 2.5));
        assert_eq!(point_at_arc_length(&pts, &cum, 99.0).0, Point2::new(5.0, 5.0));
    }

    #[test]
    fn polyline_distance() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)];
        assert_eq!(distance_to_polyline(Point2::new(3.0, 4.0), &pts), 4.0);
        assert_eq!(distance_to_polyline(Point2::new(13.0, 4.0), &pts), 5.0);
    }
}
