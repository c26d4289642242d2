//! Planar primitives: rectangles, simple polygons and wall segments.

use glam::DVec2;
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: DVec2, max: DVec2) -> Self {
        Rect {
            min: min.to_array(),
            max: max.to_array(),
        }
    }

    pub fn min(&self) -> DVec2 {
        DVec2::from_array(self.min)
    }

    pub fn max(&self) -> DVec2 {
        DVec2::from_array(self.max)
    }

    pub fn size(&self) -> DVec2 {
        self.max() - self.min()
    }

    pub fn contains(&self, p: DVec2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn edges(&self) -> [Segment; 4] {
        let (a, c) = (self.min(), self.max());
        let b = DVec2::new(c.x, a.y);
        let d = DVec2::new(a.x, c.y);
        [
            Segment::new(a, b),
            Segment::new(b, c),
            Segment::new(c, d),
            Segment::new(d, a),
        ]
    }
}

/// Simple (non-self-intersecting) polygon given by its vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: impl IntoIterator<Item = DVec2>) -> Self {
        Polygon {
            vertices: vertices.into_iter().map(|v| v.to_array()).collect(),
        }
    }

    pub fn rect(min: DVec2, max: DVec2) -> Self {
        Polygon::new([min, DVec2::new(max.x, min.y), max, DVec2::new(min.x, max.y)])
    }

    pub fn points(&self) -> impl Iterator<Item = DVec2> + '_ {
        self.vertices.iter().map(|v| DVec2::from_array(*v))
    }

    /// Even-odd crossing test. Points exactly on an edge may fall either way.
    pub fn contains(&self, p: DVec2) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > p.y) != (yj > p.y) {
                let x_cross = xj + (p.y - yj) * (xi - xj) / (yi - yj);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            Segment::new(
                DVec2::from_array(self.vertices[i]),
                DVec2::from_array(self.vertices[(i + 1) % n]),
            )
        })
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut twice = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            twice += x0 * y1 - x1 * y0;
        }
        twice.abs() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: DVec2,
    pub b: DVec2,
}

impl Segment {
    pub fn new(a: DVec2, b: DVec2) -> Self {
        Segment { a, b }
    }

    pub fn closest_point(&self, p: DVec2) -> DVec2 {
        let ab = self.b - self.a;
        let len2 = ab.length_squared();
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0);
        self.a + ab * t
    }

    pub fn distance(&self, p: DVec2) -> f64 {
        p.distance(self.closest_point(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_contains_center_not_outside() {
        let sq = Polygon::rect(DVec2::new(4.5, 0.5), DVec2::new(5.5, 1.5));
        assert!(sq.contains(DVec2::new(5.0, 1.0)));
        assert!(sq.contains(DVec2::new(4.55, 1.45)));
        assert!(!sq.contains(DVec2::new(4.45, 1.0)));
        assert!(!sq.contains(DVec2::new(5.0, 1.55)));
        assert_eq!(sq.area(), 1.0);
    }

    #[test]
    fn concave_polygon() {
        // U shape opening upwards
        let u = Polygon::new([
            DVec2::new(0.0, 0.0),
            DVec2::new(3.0, 0.0),
            DVec2::new(3.0, 3.0),
            DVec2::new(2.0, 3.0),
            DVec2::new(2.0, 1.0),
            DVec2::new(1.0, 1.0),
            DVec2::new(1.0, 3.0),
            DVec2::new(0.0, 3.0),
        ]);
        assert!(u.contains(DVec2::new(0.5, 2.0)));
        assert!(!u.contains(DVec2::new(1.5, 2.0)));
        assert!(u.contains(DVec2::new(1.5, 0.5)));
        assert_eq!(u.area(), 7.0);
    }

    #[test]
    fn segment_closest_point_clamps() {
        let s = Segment::new(DVec2::ZERO, DVec2::new(2.0, 0.0));
        assert_eq!(s.closest_point(DVec2::new(1.0, 1.0)), DVec2::new(1.0, 0.0));
        assert_eq!(s.closest_point(DVec2::new(-1.0, 1.0)), DVec2::ZERO);
        assert!((s.distance(DVec2::new(3.0, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
    }
}
