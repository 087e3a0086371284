//! Planar polygon utilities in the horizontal `(x, z)` plane.

/// A point in the horizontal plane, `[x, z]`.
pub type Xz = [f64; 2];

pub fn cross(a: Xz, b: Xz) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn sub(a: Xz, b: Xz) -> Xz {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn dot(a: Xz, b: Xz) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Xz) -> f64 {
    a[0].hypot(a[1])
}

/// Shoelace area in `(x, z)`; positive for counter-clockwise order.
pub fn signed_area(poly: &[Xz]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| cross(poly[i], poly[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

pub fn area(poly: &[Xz]) -> f64 {
    signed_area(poly).abs()
}

fn orient(a: Xz, b: Xz, c: Xz) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(a: Xz, b: Xz, p: Xz) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Xz, b: Xz, c: Xz, d: Xz) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// No repeated vertices, no zero-length edges, no two edges meeting except
/// adjacent edges at their shared vertex.
pub fn is_simple(poly: &[Xz]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a == b {
            return false;
        }
        // adjacent edge folding back onto this one
        let c = poly[(i + 2) % n];
        if orient(a, b, c) == 0.0 && dot(sub(b, a), sub(c, b)) < 0.0 {
            return false;
        }
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Even-odd point containment (boundary points are unspecified).
pub fn contains(poly: &[Xz], p: Xz) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Xz, a: Xz, b: Xz) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    };
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1]]))
}

pub fn distance_to_boundary(poly: &[Xz], p: Xz) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Interior angle at each vertex in radians, for a counter-clockwise polygon.
pub fn interior_angles(poly: &[Xz]) -> Vec<f64> {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let prev = poly[(i + n - 1) % n];
            let cur = poly[i];
            let next = poly[(i + 1) % n];
            let e_in = sub(cur, prev);
            let e_out = sub(next, cur);
            let turn = cross(e_in, e_out).atan2(dot(e_in, e_out));
            std::f64::consts::PI - turn
        })
        .collect()
}

pub fn rotate(p: Xz, angle: f64) -> Xz {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [Xz; 4] = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];

    #[test]
    fn square_area_and_orientation() {
        assert_eq!(signed_area(&SQUARE), 4.0);
        let mut cw = SQUARE.to_vec();
        cw.reverse();
        assert_eq!(signed_area(&cw), -4.0);
    }

    #[test]
    fn simplicity() {
        assert!(is_simple(&SQUARE));
        let bowtie = [[1.0, 1.0], [-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0]];
        assert!(!is_simple(&bowtie));
        let dup = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(!is_simple(&dup));
    }

    #[test]
    fn containment_and_distance() {
        assert!(contains(&SQUARE, [0.0, 0.0]));
        assert!(!contains(&SQUARE, [2.0, 0.0]));
        assert!((distance_to_boundary(&SQUARE, [0.0, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l_shape_angles() {
        let l = [
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
            [0.0, 0.0],
        ];
        assert!(signed_area(&l) > 0.0);
        let deg: Vec<f64> = interior_angles(&l).iter().map(|a| a.to_degrees()).collect();
        let reflex = deg.iter().filter(|a| (*a - 270.0).abs() < 1e-9).count();
        let right = deg.iter().filter(|a| (*a - 90.0).abs() < 1e-9).count();
        assert_eq!((reflex, right), (1, 5));
    }
}
