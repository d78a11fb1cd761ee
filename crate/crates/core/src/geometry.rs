use std::fmt;

use serde::{Deserialize, Serialize};

/// A point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance_squared(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Location) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Lexicographic total order on (x, y, z).
    pub fn lex_cmp(&self, other: &Location) -> std::cmp::Ordering {
        self.x
            .total_cmp(&other.x)
            .then(self.y.total_cmp(&other.y))
            .then(self.z.total_cmp(&other.z))
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

/// Axis-aligned box, closed on all faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Location,
    pub max: Location,
}

impl Aabb {
    pub fn new(min: Location, max: Location) -> Self {
        Self { min, max }
    }

    pub fn has_positive_volume(&self) -> bool {
        self.max.x > self.min.x && self.max.y > self.min.y && self.max.z > self.min.z
    }

    pub fn volume(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y) * (self.max.z - self.min.z)
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max.x - self.min.x,
            self.max.y - self.min.y,
            self.max.z - self.min.z,
        ]
    }

    pub fn center(&self) -> Location {
        Location::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Nearest point of the box to `p` (per-axis clamp).
    pub fn clamp(&self, p: &Location) -> Location {
        Location::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    /// Whether the open interiors of two boxes intersect.
    pub fn interiors_overlap(&self, other: &Aabb) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
            && self.min.z < other.max.z
            && other.min.z < self.max.z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Aabb {
        Aabb::new(Location::new(0.0, 0.0, 0.0), Location::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn clamp_outside_point() {
        let p = unit().clamp(&Location::new(2.0, 0.5, 0.5));
        assert_eq!(p, Location::new(1.0, 0.5, 0.5));
    }

    #[test]
    fn contains_is_closed() {
        assert!(unit().contains(&Location::new(1.0, 0.0, 1.0)));
        assert!(!unit().contains(&Location::new(1.0 + 1e-12, 0.0, 1.0)));
    }

    #[test]
    fn shared_faces_do_not_overlap() {
        let right = Aabb::new(Location::new(1.0, 0.0, 0.0), Location::new(2.0, 1.0, 1.0));
        assert!(!unit().interiors_overlap(&right));
        let shifted = Aabb::new(Location::new(0.5, 0.5, 0.5), Location::new(2.0, 1.0, 1.0));
        assert!(unit().interiors_overlap(&shifted));
    }
}
