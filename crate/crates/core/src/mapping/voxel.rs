//! Extensible TSDF voxel grid.
//!
//! The grid has a fixed vertical extent of 3.5 m and grows in x/y as the
//! agent explores. Voxel indices are kept on a lattice anchored at a fixed
//! base point, so expansion never moves existing voxels in world space.

use std::collections::HashSet;

use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::geometry::{CameraModel, Pose};
use crate::simulator::DepthImage;

pub const GRID_HEIGHT: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Free,
    Occupied,
    Unknown,
}

/// Axis-aligned planar box, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds2 {
    pub fn around(center: [f64; 2], half: f64) -> Self {
        Self {
            min: [center[0] - half, center[1] - half],
            max: [center[0] + half, center[1] + half],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub voxel: f64,
    pub truncation: f64,
    pub weight_cap: f32,
    pub max_voxels: usize,
    pub margin_w_ratio: f64,
    pub margin_h_ratio: f64,
}

impl GridConfig {
    pub fn from_params(p: &HyperParams) -> Self {
        let voxel = p.voxel_size();
        Self {
            voxel,
            truncation: p.tsdf.truncation_voxels * voxel,
            weight_cap: p.tsdf.weight_cap,
            max_voxels: p.tsdf.max_voxels,
            margin_w_ratio: p.camera.margin_w_ratio,
            margin_h_ratio: p.camera.margin_h_ratio,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::from_params(&HyperParams::default())
    }
}

/// Read-only view of one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub tsdf: f32,
    pub weight: f32,
    pub explored: bool,
}

impl Voxel {
    pub fn occupancy(&self) -> Occupancy {
        if self.weight <= 0.0 {
            Occupancy::Unknown
        } else if self.tsdf < 0.0 {
            Occupancy::Occupied
        } else {
            Occupancy::Free
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub fused: usize,
    pub rejected_samples: usize,
    pub explored_columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    config: GridConfig,
    base: [f64; 2],
    /// Lattice offset of voxel (0, 0) relative to `base`, in voxels.
    offset: [i64; 2],
    dims: [usize; 3],
    tsdf: Vec<f32>,
    weight: Vec<f32>,
    explored: Vec<bool>,
}

impl VoxelGrid {
    /// A grid covering `bounds`, anchored so that voxel faces fall on
    /// multiples of the voxel size from the bounds' minimum corner.
    pub fn new(config: GridConfig, bounds: Bounds2) -> Result<Self> {
        if !(config.voxel > 0.0) || !(config.truncation > 0.0) {
            return Err(EqaError::Config("voxel size and truncation must be positive".into()));
        }
        if !bounds.min.iter().chain(&bounds.max).all(|v| v.is_finite()) {
            return Err(EqaError::InvalidInput("grid bounds must be finite".into()));
        }
        let nz = (GRID_HEIGHT / config.voxel).round().max(1.0) as usize;
        let mut g = Self {
            config,
            base: bounds.min,
            offset: [0, 0],
            dims: [0, 0, nz],
            tsdf: vec![],
            weight: vec![],
            explored: vec![],
        };
        g.expand(bounds)?;
        Ok(g)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel
    }

    pub fn truncation(&self) -> f64 {
        self.config.truncation
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0 || self.dims[1] == 0
    }

    /// World coordinates of the grid's minimum corner (z = 0).
    pub fn origin(&self) -> [f64; 3] {
        let l = self.config.voxel;
        [
            self.base[0] + self.offset[0] as f64 * l,
            self.base[1] + self.offset[1] as f64 * l,
            0.0,
        ]
    }

    pub fn bounds(&self) -> Bounds2 {
        let o = self.origin();
        let l = self.config.voxel;
        Bounds2 {
            min: [o[0], o[1]],
            max: [o[0] + self.dims[0] as f64 * l, o[1] + self.dims[1] as f64 * l],
        }
    }

    fn lattice(&self, x: f64, axis: usize) -> i64 {
        ((x - self.base[axis]) / self.config.voxel).floor() as i64
    }

    /// Column index containing a planar world point.
    pub fn column_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return None;
        }
        let i = self.lattice(p[0], 0) - self.offset[0];
        let j = self.lattice(p[1], 1) - self.offset[1];
        (i >= 0 && j >= 0 && (i as usize) < self.dims[0] && (j as usize) < self.dims[1])
            .then_some((i as usize, j as usize))
    }

    pub fn index_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let (i, j) = self.column_of([p[0], p[1]])?;
        if !(p[2] >= 0.0) {
            return None;
        }
        let k = (p[2] / self.config.voxel).floor() as usize;
        (k < self.dims[2]).then_some([i, j, k])
    }

    /// World coordinates of a voxel center.
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        let l = self.config.voxel;
        [
            self.base[0] + (self.offset[0] + idx[0] as i64) as f64 * l + l / 2.0,
            self.base[1] + (self.offset[1] + idx[1] as i64) as f64 * l + l / 2.0,
            (idx[2] as f64 + 0.5) * l,
        ]
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[1] * self.dims[0] + idx[0]) * self.dims[2] + idx[2]
    }

    pub fn voxel(&self, idx: [usize; 3]) -> Voxel {
        let f = self.flat(idx);
        Voxel {
            tsdf: self.tsdf[f],
            weight: self.weight[f],
            explored: self.explored[f],
        }
    }

    pub fn voxel_at(&self, p: [f64; 3]) -> Option<Voxel> {
        self.index_of(p).map(|idx| self.voxel(idx))
    }

    /// Overwrites a voxel; the tsdf is clamped to the truncation band.
    pub fn set_voxel(&mut self, idx: [usize; 3], v: Voxel) {
        let f = self.flat(idx);
        let tau = self.config.truncation as f32;
        self.tsdf[f] = v.tsdf.clamp(-tau, tau);
        self.weight[f] = v.weight.max(0.0);
        self.explored[f] = v.explored;
    }

    pub fn occupancy(&self, idx: [usize; 3]) -> Occupancy {
        self.voxel(idx).occupancy()
    }

    pub fn is_explored(&self, idx: [usize; 3]) -> bool {
        self.explored[self.flat(idx)]
    }

    /// Grows the grid so it covers `required`. Existing voxels keep their
    /// world coordinates. Identity when `required` is already covered.
    pub fn expand(&mut self, required: Bounds2) -> Result<()> {
        if !required.min.iter().chain(&required.max).all(|v| v.is_finite()) {
            return Err(EqaError::InvalidInput("required bounds must be finite".into()));
        }
        let l = self.config.voxel;
        let lo = [self.lattice(required.min[0], 0), self.lattice(required.min[1], 1)];
        let hi = [
            ((required.max[0] - self.base[0]) / l).ceil() as i64,
            ((required.max[1] - self.base[1]) / l).ceil() as i64,
        ];
        let (cur_lo, cur_hi) = if self.is_empty() {
            (lo, hi)
        } else {
            (
                self.offset,
                [
                    self.offset[0] + self.dims[0] as i64,
                    self.offset[1] + self.dims[1] as i64,
                ],
            )
        };
        let new_lo = [cur_lo[0].min(lo[0]), cur_lo[1].min(lo[1])];
        let new_hi = [cur_hi[0].max(hi[0]), cur_hi[1].max(hi[1])];
        if !self.is_empty() && new_lo == self.offset && new_hi == cur_hi {
            return Ok(());
        }
        let nx = (new_hi[0] - new_lo[0]).max(1) as usize;
        let ny = (new_hi[1] - new_lo[1]).max(1) as usize;
        let nz = self.dims[2];
        let requested = nx.saturating_mul(ny).saturating_mul(nz);
        if requested > self.config.max_voxels {
            return Err(EqaError::GridCap {
                requested,
                cap: self.config.max_voxels,
            });
        }
        let tau = self.config.truncation as f32;
        let mut tsdf = vec![tau; requested];
        let mut weight = vec![0.0; requested];
        let mut explored = vec![false; requested];
        if !self.is_empty() {
            let di = (self.offset[0] - new_lo[0]) as usize;
            let dj = (self.offset[1] - new_lo[1]) as usize;
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let src = (j * self.dims[0] + i) * nz;
                    let dst = ((j + dj) * nx + (i + di)) * nz;
                    tsdf[dst..dst + nz].copy_from_slice(&self.tsdf[src..src + nz]);
                    weight[dst..dst + nz].copy_from_slice(&self.weight[src..src + nz]);
                    explored[dst..dst + nz].copy_from_slice(&self.explored[src..src + nz]);
                }
            }
        }
        self.offset = new_lo;
        self.dims = [nx, ny, nz];
        self.tsdf = tsdf;
        self.weight = weight;
        self.explored = explored;
        Ok(())
    }

    /// Fuses one depth frame.
    ///
    /// Every voxel within sensor range that projects into the image gets a
    /// projective signed distance `depth(pixel) - range(voxel)`, truncated to
    /// `±τ`; voxels more than `τ` behind the surface are left untouched and
    /// pixels that report the sensor maximum count as free space. Each frame
    /// contributes weight 1 to a running weighted average capped at
    /// `weight_cap`.
    ///
    /// Exploration is marked per voxel column: rays through the central
    /// window of the image sweep the columns between the camera and their
    /// return. Each margin ratio is the fraction of that image dimension
    /// trimmed, half on each side.
    pub fn integrate(&mut self, depth: &DepthImage, pose: &Pose, cam: &CameraModel) -> Result<IntegrationStats> {
        cam.validate()?;
        if depth.width != cam.image_width || depth.height != cam.image_height {
            return Err(EqaError::InvalidInput(format!(
                "depth image is {}x{}, camera expects {}x{}",
                depth.width, depth.height, cam.image_width, cam.image_height
            )));
        }
        if depth.data.len() != depth.width * depth.height {
            return Err(EqaError::InvalidInput("depth buffer length does not match its size".into()));
        }
        if !pose.is_finite() {
            return Err(EqaError::InvalidInput("pose must be finite".into()));
        }
        let range = cam.max_depth;
        let l = self.config.voxel;
        self.expand(Bounds2::around(pose.xy(), range + l))?;

        let camera = cam.at(pose);
        let o = camera.origin();
        let tau = self.config.truncation;
        let cap = self.config.weight_cap;
        let max_hit = range as f32 - 1e-4;
        let mut stats = IntegrationStats::default();

        let inv = InverseDepth::new(depth, &camera, max_hit);
        let (ci, cj) = self.column_of(pose.xy()).expect("grid was expanded around the pose");
        let reach = (range / l).ceil() as usize + 1;
        let (i0, i1) = (ci.saturating_sub(reach), (ci + reach).min(self.dims[0] - 1));
        let (j0, j1) = (cj.saturating_sub(reach), (cj + reach).min(self.dims[1] - 1));
        let nz = self.dims[2];
        for j in j0..=j1 {
            for i in i0..=i1 {
                let c = self.center([i, j, 0]);
                let dh = ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2)).sqrt();
                if dh > range {
                    continue;
                }
                for k in 0..nz {
                    let p = [c[0], c[1], (k as f64 + 0.5) * l];
                    let Some(pr) = camera.project(p) else { continue };
                    let Some((u, v)) = camera.pixel_of(&pr) else { continue };
                    let d = depth.get(u, v);
                    if !d.is_finite() || d <= 0.0 {
                        stats.rejected_samples += 1;
                        continue;
                    }
                    let dist = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2) + (p[2] - o[2]).powi(2)).sqrt();
                    if dist > range {
                        continue;
                    }
                    let sdf = if d >= max_hit {
                        tau
                    } else {
                        let s = match inv.surface_forward(pr.u, pr.v) {
                            Some(fs) => (fs - pr.forward) * dist / pr.forward,
                            None => d as f64 - dist,
                        };
                        if s < -tau {
                            continue;
                        }
                        s.min(tau)
                    };
                    let f = (j * self.dims[0] + i) * nz + k;
                    let w = self.weight[f];
                    self.tsdf[f] = ((self.tsdf[f] as f64 * w as f64 + sdf) / (w as f64 + 1.0)) as f32;
                    self.weight[f] = (w + 1.0).min(cap);
                    stats.fused += 1;
                }
            }
        }

        stats.explored_columns = self.mark_explored(depth, &camera);
        Ok(stats)
    }

    fn mark_explored(&mut self, depth: &DepthImage, camera: &crate::geometry::Camera) -> usize {
        let m = camera.model;
        let (w, h) = (m.image_width as f64, m.image_height as f64);
        let (u0, u1) = central_span(self.config.margin_w_ratio, w, m.image_width);
        let (v0, v1) = central_span(self.config.margin_h_ratio, h, m.image_height);
        let o = camera.origin();
        let l = self.config.voxel;
        let mut columns = HashSet::new();
        for v in v0..v1 {
            for u in u0..u1 {
                let d = depth.get(u, v) as f64;
                if !d.is_finite() || d <= 0.0 {
                    continue;
                }
                let dir = camera.pixel_ray(u, v);
                let mut t = d.min(m.max_depth);
                if dir[2] < 0.0 {
                    // a miss still cannot see below the floor plane
                    t = t.min(o[2] / -dir[2]);
                }
                let hn = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
                if hn < 1e-9 {
                    if let Some(c) = self.column_of([o[0], o[1]]) {
                        columns.insert(c);
                    }
                    continue;
                }
                // sweep the planar segment, nudged past the return so the
                // surface cell itself counts as seen
                let reach = t * hn + l * 1e-2;
                let (ux, uy) = (dir[0] / hn, dir[1] / hn);
                let steps = (reach / (l * 0.5)).ceil() as usize;
                for s in 0..=steps {
                    let r = (s as f64 * l * 0.5).min(reach);
                    if let Some(c) = self.column_of([o[0] + ux * r, o[1] + uy * r]) {
                        columns.insert(c);
                    }
                }
            }
        }
        // a swept column counts only once it has actually been seen below
        // the camera: fully observed, or known blocked. Columns hidden
        // behind door frames or outside the frustum stay unexplored.
        let nz = self.dims[2];
        let below = (0..nz).take_while(|&k| (k as f64 + 0.5) * l < m.mount_height).count();
        columns.retain(|&(i, j)| {
            let f0 = (j * self.dims[0] + i) * nz;
            let col = f0..f0 + below;
            col.clone().all(|f| self.weight[f] > 0.0) || col.into_iter().any(|f| self.weight[f] > 0.0 && self.tsdf[f] < 0.0)
        });
        for &(i, j) in &columns {
            let f = (j * self.dims[0] + i) * nz;
            self.explored[f..f + nz].iter_mut().for_each(|e| *e = true);
        }
        columns.len()
    }

    /// Fuses the agent's own footprint as free space below `height` and
    /// marks its columns explored. The camera cannot see the floor it
    /// stands on; the agent knows it from standing there.
    pub fn mark_footprint(&mut self, center: [f64; 2], radius: f64, height: f64) -> Result<usize> {
        self.expand(Bounds2::around(center, radius + self.config.voxel))?;
        let l = self.config.voxel;
        let (tau, cap) = (self.config.truncation as f32, self.config.weight_cap);
        let [nx, ny, nz] = self.dims;
        let below = (0..nz).take_while(|&k| (k as f64 + 0.5) * l < height).count();
        let lo = self.column_of([center[0] - radius, center[1] - radius]).unwrap_or((0, 0));
        let hi = self
            .column_of([center[0] + radius, center[1] + radius])
            .unwrap_or((nx - 1, ny - 1));
        let mut marked = 0;
        for j in lo.1..=hi.1 {
            for i in lo.0..=hi.0 {
                let c = self.center([i, j, 0]);
                if (c[0] - center[0]).hypot(c[1] - center[1]) > radius {
                    continue;
                }
                let f0 = (j * nx + i) * nz;
                // observed voxels keep their values: a wall the agent is
                // pressed against must not be erased
                for f in f0..f0 + below {
                    if self.weight[f] == 0.0 {
                        self.tsdf[f] = tau;
                        self.weight[f] = 1.0_f32.min(cap);
                    }
                }
                self.explored[f0..f0 + nz].iter_mut().for_each(|e| *e = true);
                marked += 1;
            }
        }
        Ok(marked)
    }

    /// Number of voxel columns whose voxels are all explored.
    pub fn explored_column_count(&self) -> usize {
        let nz = self.dims[2];
        self.explored.chunks(nz).filter(|c| c.iter().all(|&e| e)).count()
    }
}

/// Inverse optical-axis depth at pixel centers. It is linear in image
/// coordinates over a plane, so interpolating it between the four
/// surrounding pixel centers recovers planar surfaces (floors seen at a
/// grazing angle in particular) far more precisely than the nearest pixel.
struct InverseDepth {
    w: usize,
    h: usize,
    /// NaN where the pixel has no surface return.
    inv: Vec<f64>,
}

impl InverseDepth {
    /// Corner sets whose bilinear residual exceeds this fraction of the
    /// largest corner are treated as a depth edge.
    const PLANAR_TOL: f64 = 0.02;

    fn new(depth: &DepthImage, camera: &crate::geometry::Camera, max_hit: f32) -> Self {
        let (w, h) = (depth.width, depth.height);
        let f = camera.focal();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let mut inv = vec![f64::NAN; w * h];
        for v in 0..h {
            for u in 0..w {
                let d = depth.get(u, v);
                if d.is_finite() && d > 0.0 && d < max_hit {
                    let (xn, yn) = ((u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f);
                    inv[v * w + u] = (1.0 + xn * xn + yn * yn).sqrt() / d as f64;
                }
            }
        }
        Self { w, h, inv }
    }

    /// Optical-axis depth of the surface behind continuous pixel
    /// coordinates, when the four surrounding returns lie on one plane.
    fn surface_forward(&self, u: f64, v: f64) -> Option<f64> {
        if self.w < 2 || self.h < 2 {
            return None;
        }
        let (x, y) = (u - 0.5, v - 0.5);
        let i0 = (x.floor().max(0.0) as usize).min(self.w - 2);
        let j0 = (y.floor().max(0.0) as usize).min(self.h - 2);
        let (tx, ty) = ((x - i0 as f64).clamp(0.0, 1.0), (y - j0 as f64).clamp(0.0, 1.0));
        let at = |i: usize, j: usize| self.inv[j * self.w + i];
        let (a, b, c, d) = (at(i0, j0), at(i0 + 1, j0), at(i0, j0 + 1), at(i0 + 1, j0 + 1));
        if [a, b, c, d].iter().any(|x| x.is_nan()) {
            return None;
        }
        let peak = a.max(b).max(c).max(d);
        if (a + d - b - c).abs() > Self::PLANAR_TOL * peak {
            return None;
        }
        let top = a + (b - a) * tx;
        let bottom = c + (d - c) * tx;
        let i = top + (bottom - top) * ty;
        (i > 0.0).then(|| 1.0 / i)
    }
}

/// Pixel range left after trimming `ratio` of `n` pixels, half per side.
fn central_span(ratio: f64, n: f64, len: usize) -> (usize, usize) {
    let cut = (ratio.clamp(0.0, 1.0) * n / 2.0).floor() as usize;
    let hi = len.saturating_sub(cut).max(cut + 1).min(len);
    (cut.min(hi.saturating_sub(1)), hi)
}
