use super::rotation::Vec3;

/// Distance between segments `p1-q1` and `p2-q2` via the
/// closest-point parameterization (clamped to both segments).
pub fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_segments_have_zero_distance() {
        let d = segment_distance(
            &Vec3::new(-1.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.0, -1.0, 0.0),
            &Vec3::new(0.0, 1.0, 0.0),
        );
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn parallel_offset_segments() {
        let d = segment_distance(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.5, 0.3, 0.0),
            &Vec3::new(2.0, 0.3, 0.0),
        );
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn endpoint_to_endpoint() {
        let d = segment_distance(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(2.0, 1.0, 0.0),
            &Vec3::new(3.0, 1.0, 0.0),
        );
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_point_segments() {
        let p = Vec3::new(0.0, 0.0, 1.0);
        let d = segment_distance(&p, &p, &Vec3::new(-1.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
    }
}
