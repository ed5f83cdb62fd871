use serde::{Deserialize, Serialize};

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_center(center: [f64; 3], extents: [f64; 3]) -> Self {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for a in 0..3 {
            min[a] = center[a] - extents[a] / 2.0;
            max[a] = center[a] + extents[a] / 2.0;
        }
        Self { min, max }
    }

    /// Bounding box of the first three columns of each point; `None` for no points.
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb {
            min: [first[0], first[1], first[2]],
            max: [first[0], first[1], first[2]],
        };
        for p in it {
            for a in 0..3 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
        }
        Some(b)
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    /// True when the interiors overlap; touching faces do not count.
    pub fn intersects(&self, other: &Aabb) -> bool {
        const TOL: f64 = 1e-9;
        (0..3).all(|a| self.min[a] < other.max[a] - TOL && other.min[a] < self.max[a] - TOL)
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        const TOL: f64 = 1e-9;
        (0..3).all(|a| other.min[a] >= self.min[a] - TOL && other.max[a] <= self.max[a] + TOL)
    }

    /// Largest per-axis gap between the boxes (0 when they touch or overlap).
    pub fn gap(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|a| (other.min[a] - self.max[a]).max(self.min[a] - other.max[a]).max(0.0))
            .fold(0.0, f64::max)
    }
}
