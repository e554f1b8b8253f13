//! Uniform hash grid for neighbor queries on point clouds.

use std::collections::HashMap;

use nalgebra::Vector3;

pub struct HashGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl HashGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        Self {
            cell,
            cells: HashMap::new(),
        }
    }

    pub fn build(points: &[Vector3<f64>], cell: f64) -> Self {
        let mut grid = Self::new(cell);
        for (i, p) in points.iter().enumerate() {
            grid.insert(i, p);
        }
        grid
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    pub fn insert(&mut self, index: usize, p: &Vector3<f64>) {
        self.cells.entry(self.key(p)).or_default().push(index);
    }

    /// Whether any inserted point lies strictly closer than `radius` (≤ cell size) to `p`.
    pub fn any_within(&self, points: &[Vector3<f64>], p: &Vector3<f64>, radius: f64) -> bool {
        let k = self.key(p);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if list.iter().any(|&j| (points[j] - p).norm_squared() < r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Distance from `points[index]` to its nearest other point, searching
    /// outward ring by ring. Returns `None` for a single-point grid.
    pub fn nearest_distance(&self, points: &[Vector3<f64>], index: usize) -> Option<f64> {
        if points.len() < 2 {
            return None;
        }
        let p = points[index];
        let k = self.key(&p);
        let mut best = f64::INFINITY;
        let mut ring: i64 = 0;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &j in list {
                                if j != index {
                                    best = best.min((points[j] - p).norm_squared());
                                }
                            }
                        }
                    }
                }
            }
            // Every unvisited cell is at least `ring * cell` away.
            let reach = ring as f64 * self.cell;
            if best.is_finite() && best <= reach * reach {
                return Some(best.sqrt());
            }
            ring += 1;
            if ring > 1 << 20 {
                return best.is_finite().then(|| best.sqrt());
            }
        }
    }
}

/// Mean nearest-neighbor distance of a point cloud.
pub fn mean_nearest_distance(points: &[Vector3<f64>], cell: f64) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let grid = HashGrid::build(points, cell);
    let sum: f64 = (0..points.len())
        .map(|i| grid.nearest_distance(points, i).unwrap_or(0.0))
        .sum();
    Some(sum / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_matches_brute_force() {
        let pts: Vec<Vector3<f64>> = (0..200)
            .map(|i| {
                let f = i as f64;
                Vector3::new((f * 0.37).sin(), (f * 1.13).cos() * 0.5, (f * 0.71).sin() * 2.0)
            })
            .collect();
        let grid = HashGrid::build(&pts, 0.05);
        for i in 0..pts.len() {
            let brute = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| (pts[j] - pts[i]).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((grid.nearest_distance(&pts, i).unwrap() - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn within_query() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.3, 0.0, 0.0)];
        let grid = HashGrid::build(&pts[..1], 0.5);
        assert!(grid.any_within(&pts, &pts[1], 0.31));
        assert!(!grid.any_within(&pts, &pts[1], 0.3));
    }
}
