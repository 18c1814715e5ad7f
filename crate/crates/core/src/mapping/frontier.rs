use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::geometry::{dist2, Pose};

use super::map2d::Map2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Cells `(i, j)` in lexicographic order.
    pub cells: Vec<(usize, usize)>,
    pub centroid: [f64; 2],
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePose {
    pub pose: Pose,
    pub frontier: usize,
    pub distance: f64,
    /// Outside the configured distance band.
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<CandidatePose>,
    /// Set when out-of-band candidates had to be used.
    pub relaxed: bool,
}

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn neighbor(map: &Map2D, i: usize, j: usize, d: (i64, i64)) -> Option<(usize, usize)> {
    let (ni, nj) = (i as i64 + d.0, j as i64 + d.1);
    (ni >= 0 && nj >= 0 && (ni as usize) < map.width && (nj as usize) < map.height).then_some((ni as usize, nj as usize))
}

/// Explored, traversable and 4-adjacent to an unexplored in-bounds cell.
pub fn is_boundary(map: &Map2D, i: usize, j: usize) -> bool {
    map.explored(i, j)
        && map.traversable(i, j)
        && N4
            .iter()
            .any(|&d| neighbor(map, i, j, d).is_some_and(|(a, b)| !map.explored(a, b)))
}

/// Planar heading from a boundary cell toward its unexplored neighbors.
fn facing(map: &Map2D, i: usize, j: usize) -> Option<f64> {
    let (mut x, mut y) = (0.0, 0.0);
    for &d in &N4 {
        if neighbor(map, i, j, d).is_some_and(|(a, b)| !map.explored(a, b)) {
            x += d.0 as f64;
            y += d.1 as f64;
        }
    }
    (x != 0.0 || y != 0.0).then(|| y.atan2(x))
}

/// Boundary cells grouped into 8-connected components, each with candidate
/// poses spaced at least `frontier_spacing` apart.
pub fn detect_frontiers(map: &Map2D, params: &HyperParams) -> Vec<Frontier> {
    let mut seen = vec![false; map.width * map.height];
    let mut out = Vec::new();
    for i in 0..map.width {
        for j in 0..map.height {
            if seen[j * map.width + i] || !is_boundary(map, i, j) {
                continue;
            }
            let mut cells = Vec::new();
            let mut queue = VecDeque::from([(i, j)]);
            seen[j * map.width + i] = true;
            while let Some((a, b)) = queue.pop_front() {
                cells.push((a, b));
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if (di, dj) == (0, 0) {
                            continue;
                        }
                        if let Some((na, nb)) = neighbor(map, a, b, (di, dj)) {
                            let k = nb * map.width + na;
                            if !seen[k] && is_boundary(map, na, nb) {
                                seen[k] = true;
                                queue.push_back((na, nb));
                            }
                        }
                    }
                }
            }
            if cells.len() < params.visual_prompt.min_points_clustering.max(1) {
                continue;
            }
            cells.sort_unstable();
            out.push(build_frontier(map, cells, params.planner.frontier_spacing));
        }
    }
    out
}

fn build_frontier(map: &Map2D, cells: Vec<(usize, usize)>, spacing: f64) -> Frontier {
    let n = cells.len() as f64;
    let centroid = cells.iter().fold([0.0, 0.0], |acc, &(i, j)| {
        let c = map.cell_center(i, j);
        [acc[0] + c[0] / n, acc[1] + c[1] / n]
    });
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        let da = dist2(map.cell_center(cells[a].0, cells[a].1), centroid);
        let db = dist2(map.cell_center(cells[b].0, cells[b].1), centroid);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let fallback_yaw = {
        let (mut x, mut y) = (0.0, 0.0);
        for &(i, j) in &cells {
            if let Some(a) = facing(map, i, j) {
                x += a.cos();
                y += a.sin();
            }
        }
        if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) }
    };
    let mut poses: Vec<Pose> = Vec::new();
    for k in order {
        let (i, j) = cells[k];
        let c = map.cell_center(i, j);
        if poses.iter().all(|p| dist2(p.xy(), c) >= spacing) {
            poses.push(Pose::new(c[0], c[1], facing(map, i, j).unwrap_or(fallback_yaw)));
        }
    }
    Frontier { cells, centroid, poses }
}

/// Picks prompt candidates from frontier poses.
///
/// Poses whose distance from the agent lies in
/// `[point_min_dist, point_max_dist]` are taken nearest first while keeping a
/// pairwise separation of `cluster_threshold`, up to `num_prompt_points`.
/// When fewer than `min_prompt_points` qualify, the closest out-of-band poses
/// top the set up; with none in band the pose nearest the closest frontier
/// centroid is used. Either case sets `relaxed`.
pub fn sample_candidates(frontiers: &[Frontier], agent: &Pose, params: &HyperParams) -> Result<CandidateSet> {
    if frontiers.iter().all(|f| f.poses.is_empty()) {
        return Err(EqaError::InvalidInput("no frontier to sample candidates from".into()));
    }
    let vp = &params.visual_prompt;
    let (lo, hi) = (vp.point_min_dist, vp.point_max_dist);
    let mut all: Vec<CandidatePose> = frontiers
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| {
            f.poses.iter().map(move |p| {
                let distance = dist2(p.xy(), agent.xy());
                CandidatePose {
                    pose: *p,
                    frontier: fi,
                    distance,
                    relaxed: !(lo..=hi).contains(&distance),
                }
            })
        })
        .collect();
    let band_gap = |d: f64| if d < lo { lo - d } else if d > hi { d - hi } else { 0.0 };
    all.sort_by(|a, b| {
        band_gap(a.distance)
            .total_cmp(&band_gap(b.distance))
            .then(a.distance.total_cmp(&b.distance))
            .then(a.frontier.cmp(&b.frontier))
    });

    let cap = vp.num_prompt_points.max(1);
    let mut picked: Vec<CandidatePose> = Vec::new();
    let separated = |picked: &[CandidatePose], c: &CandidatePose| {
        picked.iter().all(|p| dist2(p.pose.xy(), c.pose.xy()) >= vp.cluster_threshold)
    };
    for c in all.iter().filter(|c| !c.relaxed) {
        if picked.len() == cap {
            break;
        }
        if separated(&picked, c) {
            picked.push(c.clone());
        }
    }

    if picked.is_empty() {
        let nearest = frontiers
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.poses.is_empty())
            .min_by(|a, b| {
                dist2(a.1.centroid, agent.xy())
                    .total_cmp(&dist2(b.1.centroid, agent.xy()))
                    .then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .expect("a frontier with poses exists");
        let f = &frontiers[nearest];
        let pose = f.poses[0];
        return Ok(CandidateSet {
            candidates: vec![CandidatePose {
                pose,
                frontier: nearest,
                distance: dist2(pose.xy(), agent.xy()),
                relaxed: true,
            }],
            relaxed: true,
        });
    }

    let mut relaxed = false;
    let want = vp.min_prompt_points.min(cap);
    for c in all.iter().filter(|c| c.relaxed) {
        if picked.len() >= want {
            break;
        }
        if separated(&picked, c) {
            picked.push(c.clone());
            relaxed = true;
        }
    }
    Ok(CandidateSet { candidates: picked, relaxed })
}
