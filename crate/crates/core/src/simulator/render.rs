//! Raycast RGB-D rendering, ground-truth detections and straight-line
//! motion over a [`Scene`].
//!
//! The world is a 2-D grid extruded vertically: walls fill `[0, 3.5] m`,
//! objects fill `[0, height]`, floor cells carry a floor at `z = 0` and void
//! cells have none. Every pixel casts its own 3-D ray; depth is the range
//! along that ray. Rays that leave the scene, fall through a void cell, rise
//! above the walls or exceed the sensor range are misses: black, depth =
//! `max_depth`.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::scene::{CellKind, Scene, WALL_HEIGHT};
use crate::error::{EqaError, Result};
use crate::geometry::{Camera, CameraModel, Pose};

const WALL_RGB: [u8; 3] = [175, 175, 185];
const FLOOR_RGB: [u8; 3] = [120, 105, 90];
/// Moves stop this far short of the first blocked cell.
const MOVE_BACKOFF: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major meters.
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, d: f32) {
        self.data[v * self.width + u] = d;
    }
}

/// A ground-truth detection of a scene object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: u32,
    pub category: String,
    pub color: String,
    pub attributes: Vec<String>,
    /// Inclusive pixel box `[u0, v0, u1, v1]`.
    pub bbox: [u32; 4],
    pub position: [f64; 2],
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub pose: Pose,
    pub visible: Vec<Detection>,
    /// Ground-truth room the camera stands in.
    pub room: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Floor([u8; 3]),
    Wall,
    Object(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RayHit {
    t: f64,
    surface: Surface,
}

/// Walks the grid cells crossed by a planar segment starting at `o` with
/// direction `d` (cell units per unit parameter). Calls `visit(i, j, t0, t1)`
/// until it returns `false` or the parameter exceeds `t_max`.
fn walk_cells<F>(scene: &Scene, o: [f64; 2], d: [f64; 2], t_max: f64, mut visit: F)
where
    F: FnMut(Option<(usize, usize)>, f64, f64) -> bool,
{
    let r = scene.resolution;
    let (px, py) = (o[0] / r, o[1] / r);
    let (dx, dy) = (d[0] / r, d[1] / r);
    let mut ix = px.floor() as i64;
    let mut iy = py.floor() as i64;
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let next = |p: f64, i: i64, dp: f64| -> f64 {
        if dp > 0.0 {
            ((i + 1) as f64 - p) / dp
        } else if dp < 0.0 {
            (i as f64 - p) / dp
        } else {
            f64::INFINITY
        }
    };
    let mut t_next_x = next(px, ix, dx);
    let mut t_next_y = next(py, iy, dy);
    let dt_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let dt_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t0 = 0.0;
    loop {
        let t1 = t_next_x.min(t_next_y).min(t_max);
        let cell = (ix >= 0 && iy >= 0 && (ix as usize) < scene.width && (iy as usize) < scene.height)
            .then_some((ix as usize, iy as usize));
        if !visit(cell, t0, t1) || t1 >= t_max || cell.is_none() {
            return;
        }
        if t_next_x < t_next_y {
            ix += step_x;
            t0 = t_next_x;
            t_next_x += dt_x;
        } else {
            iy += step_y;
            t0 = t_next_y;
            t_next_y += dt_y;
        }
    }
}

fn cast_ray(scene: &Scene, origin: [f64; 3], dir: [f64; 3], max_depth: f64) -> Option<RayHit> {
    let mut hit = None;
    let horizontal = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt() > 1e-12;
    let (o2, d2) = if horizontal {
        ([origin[0], origin[1]], [dir[0], dir[1]])
    } else {
        // straight up or down: stay in the starting cell
        ([origin[0], origin[1]], [0.0, 0.0])
    };
    let z_at = |t: f64| origin[2] + t * dir[2];
    walk_cells(scene, o2, d2, max_depth, |cell, t0, t1| {
        let Some((i, j)) = cell else {
            return false;
        };
        let (z0, z1) = (z_at(t0), z_at(t1));
        let top = if scene.cell(i, j) == CellKind::Wall {
            Some((WALL_HEIGHT, Surface::Wall))
        } else {
            scene
                .object_at(i, j)
                .map(|k| (scene.objects[k].height, Surface::Object(k)))
        };
        if let Some((top, surface)) = top {
            if (0.0..=top).contains(&z0) {
                hit = Some(RayHit { t: t0, surface });
                return false;
            }
            if z0 > top && z1 <= top && dir[2] < 0.0 {
                hit = Some(RayHit {
                    t: (origin[2] - top) / -dir[2],
                    surface,
                });
                return false;
            }
        } else if z1 < 0.0 && dir[2] < 0.0 {
            if scene.cell(i, j) == CellKind::Floor {
                let p = [
                    origin[0] + dir[0] * origin[2] / -dir[2],
                    origin[1] + dir[1] * origin[2] / -dir[2],
                ];
                let rgb = scene
                    .room_at(p)
                    .and_then(|r| r.floor_rgb)
                    .unwrap_or(FLOOR_RGB);
                hit = Some(RayHit {
                    t: origin[2] / -dir[2],
                    surface: Surface::Floor(rgb),
                });
            }
            return false;
        }
        // rising above the walls: nothing left to hit
        !(z1 > WALL_HEIGHT && dir[2] >= 0.0)
    });
    hit.filter(|h| h.t <= max_depth)
}

fn shade(rgb: [u8; 3], t: f64, max_depth: f64) -> Rgb<u8> {
    let f = 1.0 - 0.6 * (t / max_depth).clamp(0.0, 1.0);
    Rgb(rgb.map(|c| (c as f64 * f).round() as u8))
}

/// True when the segment between two planar points crosses a wall cell,
/// not counting the cell containing `to`.
pub fn wall_between(scene: &Scene, from: [f64; 2], to: [f64; 2]) -> bool {
    let d = [to[0] - from[0], to[1] - from[1]];
    let end = scene.cell_of(to);
    let mut blocked = false;
    walk_cells(scene, from, d, 1.0, |cell, _, _| match cell {
        None => false,
        Some(c) if Some(c) == end => false,
        Some((i, j)) => {
            if scene.cell(i, j) == CellKind::Wall {
                blocked = true;
                false
            } else {
                true
            }
        }
    });
    blocked
}

/// Renders the view from `pose`.
pub fn render(scene: &Scene, pose: &Pose, cam: &CameraModel) -> Result<Observation> {
    cam.validate()?;
    if !pose.is_finite() || !scene.is_traversable(pose.xy()) {
        return Err(EqaError::NotTraversable(pose.xy()));
    }
    let camera = cam.at(pose);
    let origin = camera.origin();
    let (w, h) = (cam.image_width, cam.image_height);
    let mut rgb = RgbImage::new(w as u32, h as u32);
    let mut depth = DepthImage::filled(w, h, cam.max_depth as f32);
    for v in 0..h {
        for u in 0..w {
            let dir = camera.pixel_ray(u, v);
            if let Some(hit) = cast_ray(scene, origin, dir, cam.max_depth) {
                let color = match hit.surface {
                    Surface::Floor(c) => c,
                    Surface::Wall => WALL_RGB,
                    Surface::Object(k) => scene.objects[k].rgb,
                };
                rgb.put_pixel(u as u32, v as u32, shade(color, hit.t, cam.max_depth));
                depth.set(u, v, hit.t as f32);
            }
        }
    }
    let visible = detect(scene, &camera);
    Ok(Observation {
        rgb,
        depth,
        pose: *pose,
        visible,
        room: scene.room_at(pose.xy()).map(|r| r.name.clone()),
    })
}

/// Objects inside the view frustum whose center is not hidden behind a wall.
fn detect(scene: &Scene, camera: &Camera) -> Vec<Detection> {
    let m = &camera.model;
    let origin = camera.origin();
    let mut out = Vec::new();
    for o in &scene.objects {
        let dist = ((o.position[0] - origin[0]).powi(2) + (o.position[1] - origin[1]).powi(2)).sqrt();
        if dist > m.max_depth {
            continue;
        }
        let (lo, hi) = (o.min(), o.max());
        let mut pts = vec![[o.position[0], o.position[1], o.height / 2.0]];
        for x in [lo[0], hi[0]] {
            for y in [lo[1], hi[1]] {
                for z in [0.0, o.height] {
                    pts.push([x, y, z]);
                }
            }
        }
        let projected: Vec<_> = pts.iter().filter_map(|p| camera.project(*p)).collect();
        let inside = projected.iter().any(|p| camera.pixel_of(p).is_some());
        if !inside || wall_between(scene, [origin[0], origin[1]], o.position) {
            continue;
        }
        let (wf, hf) = (m.image_width as f64, m.image_height as f64);
        let clamp = |x: f64, hi: f64| x.floor().clamp(0.0, hi - 1.0) as u32;
        let u0 = projected.iter().map(|p| p.u).fold(f64::INFINITY, f64::min);
        let u1 = projected.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max);
        let v0 = projected.iter().map(|p| p.v).fold(f64::INFINITY, f64::min);
        let v1 = projected.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max);
        out.push(Detection {
            object_id: o.id,
            category: o.category.clone(),
            color: o.color.clone(),
            attributes: o.attributes.clone(),
            bbox: [clamp(u0, wf), clamp(v0, hf), clamp(u1, wf), clamp(v1, hf)],
            position: o.position,
            distance: dist,
        });
    }
    out
}

/// Moves in a straight line towards `target`, stopping just short of the
/// first blocked cell. The returned pose takes the target heading.
pub fn move_agent(scene: &Scene, pose: &Pose, target: &Pose) -> Pose {
    let from = pose.xy();
    let to = target.xy();
    let d = [to[0] - from[0], to[1] - from[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if len < 1e-12 {
        return pose.with_yaw(target.yaw);
    }
    let mut stop: Option<f64> = None;
    walk_cells(scene, from, d, 1.0, |cell, t0, _| match cell {
        Some((i, j)) if !scene.cell_blocked(i, j) => true,
        _ => {
            stop = Some(t0);
            false
        }
    });
    match stop {
        None => *target,
        Some(s) => {
            let back = (s * len - MOVE_BACKOFF).max(0.0) / len;
            let mut p = Pose::new(from[0] + back * d[0], from[1] + back * d[1], target.yaw);
            p.position[2] = pose.position[2];
            p
        }
    }
}

/// Fraction of pixels whose channels are all below 8.
pub fn black_ratio(img: &RgbImage) -> f64 {
    let n = (img.width() * img.height()) as f64;
    if n == 0.0 {
        return 1.0;
    }
    img.pixels().filter(|p| p.0.iter().all(|&c| c < 8)).count() as f64 / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::scene::{Room, SceneObject, Spawn};

    fn open_room(w: usize, h: usize) -> Vec<CellKind> {
        let mut cells = vec![CellKind::Floor; w * h];
        for j in 0..h {
            for i in 0..w {
                if i == 0 || j == 0 || i == w - 1 || j == h - 1 {
                    cells[j * w + i] = CellKind::Wall;
                }
            }
        }
        cells
    }

    fn box_scene(objects: Vec<SceneObject>) -> Scene {
        Scene::new(
            "box",
            0.1,
            60,
            40,
            open_room(60, 40),
            vec![Room {
                name: "room".into(),
                min: [0.1, 0.1],
                max: [5.9, 3.9],
                floor_rgb: None,
            }],
            objects,
            vec![Spawn {
                position: [3.0, 2.0],
                yaw_deg: 0.0,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn facing_wall_has_no_black_pixels() {
        let scene = box_scene(vec![]);
        // east wall inner face at x = 5.9; stand 1 m in front of it
        let pose = Pose::new(4.9, 2.0, 0.0);
        let obs = render(&scene, &pose, &CameraModel::default()).unwrap();
        assert_eq!(black_ratio(&obs.rgb), 0.0);
        // center column, row at the horizon band hits the wall
        let cam = CameraModel::default().at(&pose);
        let (u, v) = (32, 10);
        let d = cam.pixel_ray(u, v);
        let expected = 1.0 / (d[0] * d[0] + d[1] * d[1]).sqrt();
        let z = 1.5 + expected * d[2];
        assert!(z > 0.0 && z < WALL_HEIGHT);
        assert!((obs.depth.get(u, v) as f64 - expected).abs() < 0.01);
    }

    #[test]
    fn void_is_black_at_max_range() {
        let w = 200;
        let h = 200;
        let scene = Scene::new(
            "void",
            0.1,
            w,
            h,
            vec![CellKind::Void; w * h],
            vec![],
            vec![],
            vec![Spawn {
                position: [10.0, 10.0],
                yaw_deg: 0.0,
            }],
            vec![],
        )
        .unwrap();
        let cam = CameraModel::default();
        let obs = render(&scene, &Pose::new(10.0, 10.0, 0.3), &cam).unwrap();
        assert_eq!(black_ratio(&obs.rgb), 1.0);
        assert!(obs.depth.data.iter().all(|&d| d == cam.max_depth as f32));
    }

    #[test]
    fn render_inside_wall_fails() {
        let scene = box_scene(vec![]);
        assert!(render(&scene, &Pose::new(0.05, 0.05, 0.0), &CameraModel::default()).is_err());
    }

    #[test]
    fn render_is_deterministic() {
        let scene = box_scene(vec![]);
        let pose = Pose::new(2.0, 1.0, 0.8);
        let a = render(&scene, &pose, &CameraModel::default()).unwrap();
        let b = render(&scene, &pose, &CameraModel::default()).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
    }

    fn sofa() -> SceneObject {
        SceneObject {
            id: 7,
            category: "sofa".into(),
            color: "red".into(),
            rgb: [200, 40, 40],
            attributes: vec![],
            position: [4.0, 2.0],
            footprint: [0.8, 1.6],
            height: 0.8,
        }
    }

    #[test]
    fn centered_sofa_bbox_matches_analytic_projection() {
        let scene = box_scene(vec![sofa()]);
        let cam = CameraModel {
            tilt_deg: 0.0,
            ..CameraModel::default()
        };
        let obs = render(&scene, &Pose::new(1.0, 2.0, 0.0), &cam).unwrap();
        let det = obs.visible.iter().find(|d| d.object_id == 7).expect("sofa visible");
        // with no tilt, a point at forward distance x and lateral offset y
        // lands in column 32 - f*y/x; the widest span comes from the near face
        let f = 32.0 / (60f64).to_radians().tan();
        let near = 4.0 - 0.4 - 1.0;
        let u_left = 32.0 - f * 0.8 / near;
        let u_right = 32.0 + f * 0.8 / near;
        assert_eq!(det.bbox[0], u_left.floor() as u32);
        assert_eq!(det.bbox[2], u_right.floor() as u32);
        // and the center column actually shows the sofa color
        let px = obs.rgb.get_pixel(32, 30).0;
        assert!(px[0] > px[1] * 2, "{px:?}");
    }

    #[test]
    fn wall_occludes_detection() {
        let mut cells = open_room(60, 40);
        for j in 0..40 {
            cells[j * 60 + 25] = CellKind::Wall;
        }
        let scene = Scene::new(
            "split",
            0.1,
            60,
            40,
            cells,
            vec![],
            vec![sofa()],
            vec![Spawn {
                position: [1.0, 2.0],
                yaw_deg: 0.0,
            }],
            vec![],
        )
        .unwrap();
        let obs = render(&scene, &Pose::new(1.0, 2.0, 0.0), &CameraModel::default()).unwrap();
        assert!(obs.visible.is_empty());
    }

    #[test]
    fn move_clear_path_reaches_target() {
        let scene = box_scene(vec![]);
        let a = Pose::new(1.0, 1.0, 0.0);
        let b = Pose::new(3.0, 2.5, 1.0);
        assert_eq!(move_agent(&scene, &a, &b), b);
        assert_eq!(move_agent(&scene, &a, &a), a);
    }

    #[test]
    fn move_stops_at_wall() {
        let mut cells = open_room(60, 40);
        for j in 0..40 {
            cells[j * 60 + 30] = CellKind::Wall;
        }
        let scene = Scene::new(
            "split",
            0.1,
            60,
            40,
            cells,
            vec![],
            vec![],
            vec![Spawn {
                position: [1.0, 2.0],
                yaw_deg: 0.0,
            }],
            vec![],
        )
        .unwrap();
        let a = Pose::new(1.0, 1.0, 0.0);
        let b = Pose::new(5.0, 3.0, 0.0);
        let got = move_agent(&scene, &a, &b);
        // segment meets the wall face x = 3.0 at parameter (3.0-1.0)/4
        let s = 0.5;
        let expect = [1.0 + s * 4.0, 1.0 + s * 2.0];
        assert!((got.position[0] - expect[0]).abs() < 1e-2);
        assert!((got.position[1] - expect[1]).abs() < 1e-2);
        assert!(scene.is_traversable(got.xy()));
    }
}
