use crate::geometry::CameraModel;

use super::voxel::{Occupancy, VoxelGrid};

/// Planar traversability / exploration map at the voxel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2D {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    /// World coordinates of the minimum corner of cell (0, 0).
    pub origin: [f64; 2],
    traversable: Vec<bool>,
    explored: Vec<bool>,
}

impl Map2D {
    /// A map with the given flags, row-major with `i` (x) varying fastest.
    pub fn from_flags(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        traversable: Vec<bool>,
        explored: Vec<bool>,
    ) -> Self {
        assert_eq!(traversable.len(), width * height);
        assert_eq!(explored.len(), width * height);
        Self {
            width,
            height,
            resolution,
            origin,
            traversable,
            explored,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    fn at(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn traversable(&self, i: usize, j: usize) -> bool {
        self.traversable[self.at(i, j)]
    }

    pub fn explored(&self, i: usize, j: usize) -> bool {
        self.explored[self.at(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, traversable: bool, explored: bool) {
        let k = self.at(i, j);
        self.traversable[k] = traversable;
        self.explored[k] = explored;
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let i = ((p[0] - self.origin[0]) / self.resolution).floor();
        let j = ((p[1] - self.origin[1]) / self.resolution).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height)
            .then_some((i as usize, j as usize))
    }

    pub fn explored_count(&self) -> usize {
        self.explored.iter().filter(|&&e| e).count()
    }

    pub fn explored_traversable_count(&self) -> usize {
        self.explored.iter().zip(&self.traversable).filter(|(&e, &t)| e && t).count()
    }

    /// True when every cell crossed by the straight segment `a → b` is
    /// explored and traversable.
    pub fn segment_clear(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        self.segment_clear_from(a, b, 0.0)
    }

    /// As [`Map2D::segment_clear`], but unexplored cells closer than `skip`
    /// to `a` pass (the agent's own footprint is often unmapped). Known
    /// obstacles block everywhere.
    pub fn segment_clear_from(&self, a: [f64; 2], b: [f64; 2], skip: f64) -> bool {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len / (self.resolution * 0.25)).ceil().max(1.0) as usize;
        (0..=steps).all(|s| {
            let t = s as f64 / steps as f64;
            let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
            if t * len < skip && s < steps {
                return !matches!(self.cell_of(p), Some((i, j)) if self.explored(i, j) && !self.traversable(i, j));
            }
            matches!(self.cell_of(p), Some((i, j)) if self.traversable(i, j) && self.explored(i, j))
        })
    }

    /// Binary PGM: explored-traversable 255, explored-blocked 0, unexplored 128.
    /// The northernmost row is written first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(match (self.explored(i, j), self.traversable(i, j)) {
                    (false, _) => 128,
                    (true, true) => 255,
                    (true, false) => 0,
                });
            }
        }
        out
    }
}

/// Collapses the voxel grid into a planar map.
///
/// A cell is traversable when every voxel of its column below the camera
/// height is free, and explored when every voxel of the column is explored.
pub fn project_to_2d(grid: &VoxelGrid, cam: &CameraModel) -> Map2D {
    let [nx, ny, nz] = grid.dims();
    let l = grid.voxel_size();
    let below = (0..nz).take_while(|&k| (k as f64 + 0.5) * l < cam.mount_height).count();
    let mut traversable = Vec::with_capacity(nx * ny);
    let mut explored = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            traversable.push((0..below).all(|k| grid.occupancy([i, j, k]) == Occupancy::Free));
            explored.push((0..nz).all(|k| grid.is_explored([i, j, k])));
        }
    }
    let o = grid.origin();
    Map2D::from_flags(nx, ny, l, [o[0], o[1]], traversable, explored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::voxel::{Bounds2, GridConfig, Voxel};

    fn grid() -> VoxelGrid {
        let mut g = VoxelGrid::new(GridConfig::default(), Bounds2 { min: [0.0, 0.0], max: [0.3, 0.1] }).unwrap();
        let [nx, ny, nz] = g.dims();
        for j in 0..ny {
            for i in 0..nx {
                for k in 0..nz {
                    g.set_voxel([i, j, k], Voxel { tsdf: 0.3, weight: 1.0, explored: true });
                }
            }
        }
        g
    }

    #[test]
    fn column_rules() {
        let mut g = grid();
        // occupied above camera height only
        g.set_voxel([0, 0, 20], Voxel { tsdf: -0.1, weight: 1.0, explored: true });
        // occupied at 0.4 m
        g.set_voxel([1, 0, 4], Voxel { tsdf: -0.1, weight: 1.0, explored: true });
        // one unexplored voxel high up
        g.set_voxel([2, 0, 33], Voxel { tsdf: 0.3, weight: 1.0, explored: false });
        let m = project_to_2d(&g, &CameraModel::default());
        assert_eq!((m.width, m.height), (3, 1));
        assert!(m.traversable(0, 0) && m.explored(0, 0));
        assert!(!m.traversable(1, 0) && m.explored(1, 0));
        assert!(m.traversable(2, 0) && !m.explored(2, 0));
    }

    #[test]
    fn unknown_voxel_blocks_traversal() {
        let mut g = grid();
        g.set_voxel([0, 0, 0], Voxel { tsdf: 0.3, weight: 0.0, explored: true });
        let m = project_to_2d(&g, &CameraModel::default());
        assert!(!m.traversable(0, 0));
    }

    #[test]
    fn projection_is_pure() {
        let g = grid();
        let cam = CameraModel::default();
        assert_eq!(project_to_2d(&g, &cam), project_to_2d(&g, &cam));
    }

    #[test]
    fn pgm_header_and_size() {
        let m = project_to_2d(&grid(), &CameraModel::default());
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(pgm.len(), b"P5\n3 1\n255\n".len() + 3);
    }

    #[test]
    fn skip_zone_passes_unknown_but_not_walls() {
        // 10×1 strip at 0.1 m: cell 1 unexplored, cell 2 explored wall
        let mut trav = vec![true; 10];
        let mut expl = vec![true; 10];
        expl[1] = false;
        let m = Map2D::from_flags(10, 1, 0.1, [0.0, 0.0], trav.clone(), expl.clone());
        assert!(!m.segment_clear([0.05, 0.05], [0.95, 0.05]));
        assert!(m.segment_clear_from([0.05, 0.05], [0.95, 0.05], 0.3));
        trav[2] = false;
        expl[1] = true;
        let m = Map2D::from_flags(10, 1, 0.1, [0.0, 0.0], trav, expl);
        assert!(!m.segment_clear_from([0.05, 0.05], [0.95, 0.05], 0.3));
    }
}
