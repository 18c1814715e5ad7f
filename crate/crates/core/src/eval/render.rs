use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::agent::EpisodeOutput;
use crate::error::{EqaError, Result};
use crate::geometry::Pose;
use crate::mapping::Map2D;

const UNEXPLORED: Rgb<u8> = Rgb([128, 128, 128]);
const FREE: Rgb<u8> = Rgb([255, 255, 255]);
const BLOCKED: Rgb<u8> = Rgb([0, 0, 0]);
const PATH: Rgb<u8> = Rgb([220, 30, 30]);
const START: Rgb<u8> = Rgb([30, 170, 30]);
const END: Rgb<u8> = Rgb([30, 60, 220]);

/// The map at `scale` pixels per cell, north up, with the trajectory
/// drawn over it.
pub fn map_image(map: &Map2D, path: &[Pose], scale: u32) -> RgbImage {
    let s = scale.max(1);
    let (w, h) = (map.width as u32 * s, map.height as u32 * s);
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let (i, j) = ((x / s) as usize, map.height - 1 - (y / s) as usize);
        match (map.explored(i, j), map.traversable(i, j)) {
            (false, _) => UNEXPLORED,
            (true, true) => FREE,
            (true, false) => BLOCKED,
        }
    });
    let px = |p: &Pose| {
        let x = (p.position[0] - map.origin[0]) / map.resolution * s as f64;
        let y = h as f64 - (p.position[1] - map.origin[1]) / map.resolution * s as f64;
        (x, y)
    };
    for pair in path.windows(2) {
        let (a, b) = (px(&pair[0]), px(&pair[1]));
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            put(&mut img, a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t, PATH);
        }
    }
    for (p, c) in [(path.first(), START), (path.last(), END)] {
        if let Some(p) = p {
            let (x, y) = px(p);
            for dy in -2..=2 {
                for dx in -2..=2 {
                    put(&mut img, x + dx as f64, y + dy as f64, c);
                }
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// One row per cell: `i,j,x,y,explored,traversable`.
pub fn map_csv(map: &Map2D) -> String {
    let mut out = String::from("i,j,x,y,explored,traversable\n");
    for j in 0..map.height {
        for i in 0..map.width {
            let c = map.cell_center(i, j);
            out += &format!(
                "{i},{j},{:.3},{:.3},{},{}\n",
                c[0],
                c[1],
                map.explored(i, j) as u8,
                map.traversable(i, j) as u8
            );
        }
    }
    out
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| EqaError::Persist { path: path.into(), reason: e.to_string() })
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, bytes).map_err(|e| EqaError::io(&path, e))?;
    Ok(path)
}

/// `step_NNN.png` per kept frame, then `map.png` (with the trajectory),
/// `map.pgm` and `map.csv`. Returns the written paths.
pub fn write_episode_renders(out: &EpisodeOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| EqaError::io(dir, e))?;
    let mut written = Vec::new();
    for (i, f) in out.frames.iter().enumerate() {
        let p = dir.join(format!("step_{i:03}.png"));
        write_png(f, &p)?;
        written.push(p);
    }
    let mut path: Vec<Pose> = out.trace.steps.iter().map(|s| s.pose).collect();
    if let Some(p) = out.trace.steps.last().and_then(|s| s.decision.next_pose()) {
        path.push(p);
    }
    let p = dir.join("map.png");
    write_png(&map_image(&out.map, &path, 4), &p)?;
    written.push(p);
    written.push(write(dir.join("map.pgm"), &out.map.to_pgm())?);
    written.push(write(dir.join("map.csv"), map_csv(&out.map).as_bytes())?);
    Ok(written)
}
