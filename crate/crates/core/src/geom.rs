//! Planar geometry: points, polygons, oriented boxes, polylines.
//!
//! Containment is always *strict interior*: a point exactly on a polygon
//! edge or vertex is outside. Box overlap is strict too — touching
//! boundaries do not collide. Those conventions are what the drivable-area
//! and collision checks downstream rely on.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Point / vector in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2 {
    pub x: f64,
    pub y: f64,
}

pub fn p2(x: f64, y: f64) -> P2 {
    P2 { x, y }
}

impl P2 {
    pub fn add(self, o: P2) -> P2 {
        p2(self.x + o.x, self.y + o.y)
    }
    pub fn sub(self, o: P2) -> P2 {
        p2(self.x - o.x, self.y - o.y)
    }
    pub fn scale(self, s: f64) -> P2 {
        p2(self.x * s, self.y * s)
    }
    pub fn dot(self, o: P2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    /// z-component of the 3-D cross product.
    pub fn cross(self, o: P2) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    pub fn dist(self, o: P2) -> f64 {
        self.sub(o).norm()
    }
    pub fn rotate(self, theta: f64) -> P2 {
        let (s, c) = theta.sin_cos();
        p2(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// Signed (shoelace) area; positive for counter-clockwise rings.
pub fn polygon_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    acc / 2.0
}

fn on_segment(p: P2, a: P2, b: P2) -> bool {
    let ab = b.sub(a);
    let ap = p.sub(a);
    if ab.cross(ap) != 0.0 {
        return false;
    }
    let t = ap.dot(ab);
    t >= 0.0 && t <= ab.dot(ab)
}

/// True when the open segments cross at a single interior point.
pub fn segments_properly_intersect(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = d.sub(c).cross(a.sub(c));
    let d2 = d.sub(c).cross(b.sub(c));
    let d3 = b.sub(a).cross(c.sub(a));
    let d4 = b.sub(a).cross(d.sub(a));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Rejects rings that cannot serve as a region boundary: fewer than three
/// vertices, non-finite coordinates, (near-)zero area, repeated consecutive
/// vertices, or self-intersection.
pub fn validate_polygon(poly: &[P2]) -> Result<()> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::Geometry(format!("polygon with {n} vertices")));
    }
    for p in poly {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::Geometry("non-finite polygon vertex".into()));
        }
    }
    for i in 0..n {
        if poly[i].dist(poly[(i + 1) % n]) < 1e-9 {
            return Err(Error::Geometry(format!(
                "degenerate edge at vertex {i}"
            )));
        }
    }
    if polygon_area(poly).abs() < 1e-9 {
        return Err(Error::Geometry("polygon area is zero".into()));
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            // skip edges sharing a vertex
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_properly_intersect(a, b, c, d) {
                return Err(Error::Geometry(format!(
                    "self-intersection between edges {i} and {j}"
                )));
            }
        }
    }
    Ok(())
}

/// Strict interior test by even-odd ray crossing.
///
/// Points on an edge or vertex return `false`. Works for any simple
/// polygon, convex or not, either orientation. Degenerate rings (fewer than
/// three vertices, non-finite vertices, near-zero area) are rejected with an
/// error; full self-intersection screening is [`validate_polygon`]'s job and
/// is deliberately not repeated here.
pub fn point_in_polygon(p: P2, poly: &[P2]) -> Result<bool> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::Geometry(format!("polygon with {n} vertices")));
    }
    if poly.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
        return Err(Error::Geometry("non-finite polygon vertex".into()));
    }
    if polygon_area(poly).abs() < 1e-9 {
        return Err(Error::Geometry("polygon area is zero".into()));
    }
    Ok(point_in_polygon_unchecked(p, poly))
}

/// [`point_in_polygon`] without the degeneracy gate, for hot loops running
/// against polygons already validated at construction.
pub fn point_in_polygon_unchecked(p: P2, poly: &[P2]) -> bool {
    let n = poly.len();
    // Boundary first: the crossing count below is meaningless on it.
    for i in 0..n {
        if on_segment(p, poly[i], poly[(i + 1) % n]) {
            return false;
        }
    }
    // Cast a ray toward +x; count proper edge crossings. The (y_i > y) !=
    // (y_j > y) guard handles vertices on the ray line consistently.
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Corners of an oriented box centered at `center`, front-left first,
/// counter-clockwise in the box frame.
pub fn obb_corners(center: P2, heading: f64, half_len: f64, half_wid: f64) -> [P2; 4] {
    let local = [
        p2(half_len, half_wid),
        p2(-half_len, half_wid),
        p2(-half_len, -half_wid),
        p2(half_len, -half_wid),
    ];
    local.map(|c| center.add(c.rotate(heading)))
}

/// Strict overlap of two convex quads via separating axes.
///
/// Touching edges or corners (projection intervals meeting at a point) count
/// as separated.
pub fn obbs_collide(a: &[P2; 4], b: &[P2; 4]) -> bool {
    let axes = |q: &[P2; 4]| {
        [
            q[1].sub(q[0]),
            q[3].sub(q[0]),
        ]
    };
    for axis in axes(a).into_iter().chain(axes(b)) {
        let project = |q: &[P2; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in q {
                let t = c.dot(axis);
                lo = lo.min(t);
                hi = hi.max(t);
            }
            (lo, hi)
        };
        let (alo, ahi) = project(a);
        let (blo, bhi) = project(b);
        if ahi <= blo || bhi <= alo {
            return false;
        }
    }
    true
}

/// Piecewise-linear curve with precomputed cumulative arc length.
#[derive(Clone, Debug)]
pub struct Polyline {
    pts: Vec<P2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<P2>) -> Result<Polyline> {
        if pts.len() < 2 {
            return Err(Error::Geometry(format!(
                "polyline with {} points",
                pts.len()
            )));
        }
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for i in 1..pts.len() {
            if !pts[i].x.is_finite() || !pts[i].y.is_finite() {
                return Err(Error::Geometry("non-finite polyline point".into()));
            }
            cum.push(cum[i - 1] + pts[i].dist(pts[i - 1]));
        }
        if *cum.last().unwrap() < 1e-9 {
            return Err(Error::Geometry("polyline has zero length".into()));
        }
        Ok(Polyline { pts, cum })
    }

    pub fn points(&self) -> &[P2] {
        &self.pts
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Arc length of the closest point on the curve to `p` (ties resolve to
    /// the earliest segment).
    pub fn project_arclen(&self, p: P2) -> f64 {
        let mut best_d2 = f64::INFINITY;
        let mut best_s = 0.0;
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = b.sub(a);
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 {
                (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a.add(ab.scale(t));
            let d2 = p.sub(q).dot(p.sub(q));
            if d2 < best_d2 {
                best_d2 = d2;
                best_s = self.cum[i] + t * len2.sqrt();
            }
        }
        best_s
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> P2 {
        let (i, t) = self.segment_at(s);
        self.pts[i].add(self.pts[i + 1].sub(self.pts[i]).scale(t))
    }

    /// Unit tangent (segment direction) at arc length `s`, clamped to the
    /// ends. Zero-length segments borrow the direction of the whole segment
    /// span, which `new` guarantees is nonzero overall.
    pub fn tangent_at(&self, s: f64) -> P2 {
        let (mut i, _) = self.segment_at(s);
        // skip degenerate segments (repeated points) in either direction
        while self.cum[i + 1] - self.cum[i] <= 0.0 && i + 2 < self.pts.len() {
            i += 1;
        }
        while self.cum[i + 1] - self.cum[i] <= 0.0 && i > 0 {
            i -= 1;
        }
        let d = self.pts[i + 1].sub(self.pts[i]);
        d.scale(1.0 / d.norm())
    }

    /// Segment index and fractional position for arc length `s` (clamped).
    fn segment_at(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        // cum is sorted; find the segment containing s
        let mut i = match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.pts.len() - 1 {
            i = self.pts.len() - 2;
        }
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        (i, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Unwrapping shorthand — every polygon in these tests is non-degenerate.
    fn pip(p: P2, poly: &[P2]) -> bool {
        point_in_polygon(p, poly).unwrap()
    }

    /// Winding-number containment — an independent formulation used as an
    /// oracle against the even-odd production path. Sums the signed turn of
    /// the vertex loop as seen from `p`; |total| > pi means one full wrap.
    fn winding_oracle(p: P2, poly: &[P2]) -> bool {
        let mut total = 0.0;
        for i in 0..poly.len() {
            let a = poly[i].sub(p);
            let b = poly[(i + 1) % poly.len()].sub(p);
            total += a.cross(b).atan2(a.dot(b));
        }
        total.abs() > std::f64::consts::PI
    }

    fn unit_square() -> Vec<P2> {
        vec![p2(0.0, 0.0), p2(1.0, 0.0), p2(1.0, 1.0), p2(0.0, 1.0)]
    }

    /// L-shape on lattice points; the notch is the upper-right quadrant.
    fn l_shape() -> Vec<P2> {
        vec![
            p2(0.0, 0.0),
            p2(2.0, 0.0),
            p2(2.0, 1.0),
            p2(1.0, 1.0),
            p2(1.0, 2.0),
            p2(0.0, 2.0),
        ]
    }

    #[test]
    fn square_containment_cases() {
        let sq = unit_square();
        assert!(pip(p2(0.5, 0.5), &sq));
        assert!(!pip(p2(1.5, 0.5), &sq));
        assert!(!pip(p2(-0.1, 0.5), &sq));
        // boundary is excluded: edge midpoints and vertices
        assert!(!pip(p2(0.5, 0.0), &sq));
        assert!(!pip(p2(1.0, 0.5), &sq));
        assert!(!pip(p2(0.0, 0.0), &sq));
        assert!(!pip(p2(1.0, 1.0), &sq));
        // just inside the edge
        assert!(pip(p2(0.5, 1e-12), &sq));
    }

    #[test]
    fn concave_notch_is_outside() {
        let l = l_shape();
        assert!(pip(p2(0.5, 0.5), &l));
        assert!(pip(p2(1.5, 0.5), &l));
        assert!(pip(p2(0.5, 1.5), &l));
        assert!(!pip(p2(1.5, 1.5), &l)); // the notch
        // diagonal-free boundary of the notch
        assert!(!pip(p2(1.0, 1.5), &l));
        assert!(!pip(p2(1.5, 1.0), &l));
        assert!(!pip(p2(1.0, 1.0), &l)); // reflex vertex
    }

    #[test]
    fn boundary_on_slanted_edge() {
        // Triangle with a diagonal edge through lattice points: (1,1) lies
        // exactly on the edge (0,0)-(2,2), which f64 represents exactly.
        let tri = vec![p2(0.0, 0.0), p2(2.0, 2.0), p2(0.0, 2.0)];
        assert!(!pip(p2(1.0, 1.0), &tri));
        assert!(pip(p2(0.9, 1.1), &tri));
        assert!(!pip(p2(1.1, 0.9), &tri));
    }

    #[test]
    fn matches_winding_oracle_on_grids() {
        // Sweep a grid of probe points over both fixtures; every off-boundary
        // point must agree with the independent winding formulation.
        for poly in [unit_square(), l_shape()] {
            for ix in -5..=25 {
                for iy in -5..=25 {
                    let p = p2(ix as f64 * 0.1 + 0.0301, iy as f64 * 0.1 + 0.0407);
                    assert_eq!(
                        pip(p, &poly),
                        winding_oracle(p, &poly),
                        "disagreement at ({}, {})",
                        p.x,
                        p.y
                    );
                }
            }
        }
    }

    #[test]
    fn area_and_orientation() {
        assert_relative_eq!(polygon_area(&unit_square()), 1.0);
        let cw: Vec<P2> = unit_square().into_iter().rev().collect();
        assert_relative_eq!(polygon_area(&cw), -1.0);
        assert_relative_eq!(polygon_area(&l_shape()), 3.0);
        // orientation does not change containment
        assert!(pip(p2(0.5, 0.5), &cw));
    }

    #[test]
    fn containment_rejects_degenerate_rings() {
        let two = [p2(0.0, 0.0), p2(1.0, 0.0)];
        assert!(point_in_polygon(p2(0.5, 0.1), &two).is_err());
        let flat = [p2(0.0, 0.0), p2(1.0, 0.0), p2(2.0, 0.0)];
        assert!(point_in_polygon(p2(0.5, 0.1), &flat).is_err());
        let nan = [p2(0.0, 0.0), p2(1.0, f64::NAN), p2(0.0, 1.0)];
        assert!(point_in_polygon(p2(0.5, 0.1), &nan).is_err());
    }

    #[test]
    fn validation_rejects_degenerate_rings() {
        assert!(validate_polygon(&unit_square()).is_ok());
        assert!(validate_polygon(&l_shape()).is_ok());
        assert!(validate_polygon(&[p2(0.0, 0.0), p2(1.0, 0.0)]).is_err());
        // bowtie
        let bow = vec![p2(0.0, 0.0), p2(1.0, 1.0), p2(1.0, 0.0), p2(0.0, 1.0)];
        assert!(validate_polygon(&bow).is_err());
        // zero area
        let flat = vec![p2(0.0, 0.0), p2(1.0, 0.0), p2(2.0, 0.0)];
        assert!(validate_polygon(&flat).is_err());
        // repeated vertex
        let rep = vec![p2(0.0, 0.0), p2(0.0, 0.0), p2(1.0, 0.0), p2(0.0, 1.0)];
        assert!(validate_polygon(&rep).is_err());
    }

    #[test]
    fn obb_corners_axis_aligned() {
        let c = obb_corners(p2(10.0, 5.0), 0.0, 2.0, 1.0);
        assert_eq!(c[0], p2(12.0, 6.0)); // front-left
        assert_eq!(c[1], p2(8.0, 6.0));
        assert_eq!(c[2], p2(8.0, 4.0));
        assert_eq!(c[3], p2(12.0, 4.0));
        // quarter turn swaps the roles of length and width
        let r = obb_corners(p2(0.0, 0.0), std::f64::consts::FRAC_PI_2, 2.0, 1.0);
        assert_relative_eq!(r[0].x, -1.0, epsilon = 1e-12);
        assert_relative_eq!(r[0].y, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn obb_collision_cases() {
        let a = obb_corners(p2(0.0, 0.0), 0.0, 1.0, 1.0);
        // clearly separated
        let b = obb_corners(p2(5.0, 0.0), 0.0, 1.0, 1.0);
        assert!(!obbs_collide(&a, &b));
        // overlapping
        let c = obb_corners(p2(1.5, 0.0), 0.0, 1.0, 1.0);
        assert!(obbs_collide(&a, &c));
        assert!(obbs_collide(&c, &a));
        // touching edge-to-edge: strict overlap says no
        let d = obb_corners(p2(2.0, 0.0), 0.0, 1.0, 1.0);
        assert!(!obbs_collide(&a, &d));
        // contained
        let e = obb_corners(p2(0.0, 0.0), 0.3, 0.2, 0.2);
        assert!(obbs_collide(&a, &e));
        // rotated diamond cutting across the axis box corner: the square's
        // (1,1) corner satisfies |x-1.8|+|y-1.8| = 1.6 < 1.4*sqrt(2)
        let f = obb_corners(p2(1.8, 1.8), std::f64::consts::FRAC_PI_4, 1.4, 1.4);
        assert!(obbs_collide(&a, &f));
        // same diamond pushed out past the corner is separated
        let g = obb_corners(p2(2.5, 2.5), std::f64::consts::FRAC_PI_4, 1.4, 1.4);
        assert!(!obbs_collide(&a, &g));
    }

    /// Corner/edge containment formulation of quad overlap, used as an
    /// independent check of the SAT implementation.
    fn quad_overlap_oracle(a: &[P2; 4], b: &[P2; 4]) -> bool {
        let av: Vec<P2> = a.to_vec();
        let bv: Vec<P2> = b.to_vec();
        for p in a {
            if pip(*p, &bv) {
                return true;
            }
        }
        for p in b {
            if pip(*p, &av) {
                return true;
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                if segments_properly_intersect(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]) {
                    return true;
                }
            }
        }
        false
    }

    proptest! {
        #[test]
        fn sat_matches_overlap_oracle(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0, ah in 0.0f64..6.3,
            bx in -3.0f64..3.0, by in -3.0f64..3.0, bh in 0.0f64..6.3,
            al in 0.3f64..2.0, aw in 0.2f64..1.0,
            bl in 0.3f64..2.0, bw in 0.2f64..1.0,
        ) {
            let a = obb_corners(p2(ax, ay), ah, al, aw);
            let b = obb_corners(p2(bx, by), bh, bl, bw);
            prop_assert_eq!(obbs_collide(&a, &b), quad_overlap_oracle(&a, &b));
        }

        #[test]
        fn containment_matches_winding_on_random_convex_polygons(
            seed in 0u64..1000,
            px in -2.0f64..2.0,
            py in -2.0f64..2.0,
        ) {
            // Convex ring: points at sorted angles on a wobbly circle.
            let n = 3 + (seed % 6) as usize;
            let poly: Vec<P2> = (0..n).map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / n as f64;
                let r = 1.0 + 0.5 * (((seed as f64) * 0.77 + i as f64 * 1.3).sin());
                p2(r * theta.cos(), r * theta.sin())
            }).collect();
            prop_assert_eq!(pip(p2(px, py), &poly), winding_oracle(p2(px, py), &poly));
        }
    }

    #[test]
    fn polyline_projection_and_sampling() {
        // Right angle: along +x for 2, then up +y for 2.
        let pl = Polyline::new(vec![p2(0.0, 0.0), p2(2.0, 0.0), p2(2.0, 2.0)]).unwrap();
        assert_relative_eq!(pl.length(), 4.0);
        assert_relative_eq!(pl.project_arclen(p2(1.0, 0.5)), 1.0);
        assert_relative_eq!(pl.project_arclen(p2(2.5, 1.0)), 3.0);
        // before the start clamps to 0, past the end to full length
        assert_relative_eq!(pl.project_arclen(p2(-1.0, -1.0)), 0.0);
        assert_relative_eq!(pl.project_arclen(p2(2.0, 5.0)), 4.0);
        // outer corner ties resolve to the corner itself
        assert_relative_eq!(pl.project_arclen(p2(2.5, -0.5)), 2.0);

        let q = pl.point_at(3.0);
        assert_relative_eq!(q.x, 2.0);
        assert_relative_eq!(q.y, 1.0);
        let q = pl.point_at(99.0);
        assert_relative_eq!(q.y, 2.0);
        assert!(Polyline::new(vec![p2(0.0, 0.0)]).is_err());
        assert!(Polyline::new(vec![p2(0.0, 0.0), p2(0.0, 0.0)]).is_err());
    }

    #[test]
    fn polyline_tangent_follows_segments() {
        // Along +x, then +y, with a repeated corner point in the middle.
        let pl = Polyline::new(vec![p2(0.0, 0.0), p2(2.0, 0.0), p2(2.0, 0.0), p2(2.0, 2.0)])
            .unwrap();
        let t = pl.tangent_at(1.0);
        assert_relative_eq!(t.x, 1.0);
        assert_relative_eq!(t.y, 0.0);
        let t = pl.tangent_at(3.0);
        assert_relative_eq!(t.x, 0.0);
        assert_relative_eq!(t.y, 1.0);
        // clamped ends
        assert_relative_eq!(pl.tangent_at(-5.0).x, 1.0);
        assert_relative_eq!(pl.tangent_at(99.0).y, 1.0);
    }

    #[test]
    fn angle_normalization() {
        use std::f64::consts::PI;
        assert_relative_eq!(normalize_angle(0.0), 0.0);
        assert_relative_eq!(normalize_angle(3.0 * PI), PI);
        assert_relative_eq!(normalize_angle(-3.0 * PI), PI);
        assert_relative_eq!(normalize_angle(PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_relative_eq!(normalize_angle(-0.3), -0.3);
    }
}
