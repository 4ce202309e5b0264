use super::Point;

/// Closest point to `x` on the segment `[a, b]`.
pub fn segment_closest_point(x: &Point, a: &Point, b: &Point) -> Point {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((x - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

pub fn point_segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    (x - segment_closest_point(x, a, b)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_segment_is_a_point() {
        let a = Point::new(1.0, 2.0, 0.0);
        assert_close!(point_segment_distance(&Point::new(1.0, 5.0, 0.0), &a, &a), 3.0, 1e-15);
    }

    #[test]
    fn clamps_beyond_endpoints() {
        let a = Point::zeros();
        let b = Point::new(1.0, 0.0, 0.0);
        assert_close!(point_segment_distance(&Point::new(2.0, 0.0, 0.0), &a, &b), 1.0, 1e-15);
        assert_close!(point_segment_distance(&Point::new(-3.0, 4.0, 0.0), &a, &b), 5.0, 1e-15);
    }
}
