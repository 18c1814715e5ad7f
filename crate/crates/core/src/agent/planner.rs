//! Memory-injected planning: candidate labeling, the semantic weight field
//! over frontier cells and next-pose selection.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::geometry::{dist2, wrap_angle, CameraModel, Pose};
use crate::mapping::{CandidateSet, Frontier, Map2D};
use crate::oracle::{candidate_letter, choose_direction, DirectionChoice, Oracle, OracleImage};
use crate::simulator::FrameTruth;

/// One-hot choice over labeled candidates plus the smoothed field over all
/// frontier cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticWeight {
    pub one_hot: Vec<f64>,
    /// Frontier cells in frontier order, with their smoothed weight.
    pub cells: Vec<(usize, usize)>,
    pub field: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub weight: SemanticWeight,
    /// Candidate indices that received a label, in label order.
    pub labeled: Vec<usize>,
    pub choice: DirectionChoice,
    pub annotated: RgbImage,
    pub fallback: bool,
}

// 3×5 glyphs for A–Z, one row per 3 bits, top row first.
const GLYPHS: [u16; 26] = [
    0b010_101_111_101_101, 0b110_101_110_101_110, 0b011_100_100_100_011, 0b110_101_101_101_110,
    0b111_100_110_100_111, 0b111_100_110_100_100, 0b011_100_101_101_011, 0b101_101_111_101_101,
    0b111_010_010_010_111, 0b001_001_001_101_010, 0b101_101_110_101_101, 0b100_100_100_100_111,
    0b101_111_111_101_101, 0b110_101_101_101_101, 0b010_101_101_101_010, 0b110_101_110_100_100,
    0b010_101_101_110_011, 0b110_101_110_101_101, 0b011_100_010_001_110, 0b111_010_010_010_010,
    0b101_101_101_101_111, 0b101_101_101_101_010, 0b101_101_111_111_101, 0b101_101_010_101_101,
    0b101_101_010_010_010, 0b111_001_010_100_111,
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// White disc with a black rim and a black letter, centered at `(cx, cy)`.
pub fn draw_label(img: &mut RgbImage, cx: f64, cy: f64, radius: f64, letter: char) {
    let r = radius.max(3.0);
    let (x0, y0) = ((cx - r).floor() as i64, (cy - r).floor() as i64);
    let (x1, y1) = ((cx + r).ceil() as i64, (cy + r).ceil() as i64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            if d <= r {
                let c = if d > r - 1.0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) };
                put(img, x, y, c);
            }
        }
    }
    let Some(g) = letter
        .to_ascii_uppercase()
        .is_ascii_uppercase()
        .then(|| GLYPHS[(letter.to_ascii_uppercase() as u8 - b'A') as usize])
    else {
        return;
    };
    let scale = ((r - 1.0) / 3.0).floor().max(1.0) as i64;
    let (gx, gy) = (cx.round() as i64 - scale * 3 / 2, cy.round() as i64 - scale * 5 / 2);
    for row in 0..5 {
        for col in 0..3 {
            if g >> (14 - (row * 3 + col)) & 1 == 1 {
                for sy in 0..scale {
                    for sx in 0..scale {
                        put(img, gx + col * scale + sx, gy + row * scale + sy, Rgb([0, 0, 0]));
                    }
                }
            }
        }
    }
}

/// Frontier cells and their world centers, in frontier order.
fn frontier_cells(frontiers: &[Frontier], map: &Map2D) -> Vec<((usize, usize), [f64; 2], usize)> {
    frontiers
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.cells.iter().map(move |&c| (c, map.cell_center(c.0, c.1), fi)))
        .collect()
}

/// Unit splats on the seed points, Gaussian-smoothed over frontier cells
/// and scaled so the peak is 1.
fn smooth(cells: &[((usize, usize), [f64; 2], usize)], seeds: &[[f64; 2]], sigma_m: f64) -> Vec<f64> {
    let s2 = 2.0 * sigma_m.max(1e-9).powi(2);
    let mut field: Vec<f64> = cells
        .iter()
        .map(|(_, p, _)| seeds.iter().map(|s| (-(dist2(*p, *s).powi(2)) / s2).exp()).sum())
        .collect();
    let peak = field.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        field.iter_mut().for_each(|w| *w /= peak);
    }
    field
}

/// Splat points for one candidate: its frontier's cells within half the
/// frontier spacing, or the nearest cell when none is that close.
fn splat_for(frontier: &Frontier, map: &Map2D, at: [f64; 2], spacing: f64) -> Vec<[f64; 2]> {
    let pts: Vec<[f64; 2]> = frontier.cells.iter().map(|&(i, j)| map.cell_center(i, j)).collect();
    let near: Vec<[f64; 2]> = pts.iter().copied().filter(|p| dist2(*p, at) <= spacing / 2.0).collect();
    if !near.is_empty() {
        return near;
    }
    pts.into_iter()
        .min_by(|a, b| dist2(*a, at).total_cmp(&dist2(*b, at)))
        .into_iter()
        .collect()
}

/// Weight concentrated on the frontier whose centroid is nearest the agent.
pub fn fallback_weight(frontiers: &[Frontier], map: &Map2D, agent: &Pose, params: &HyperParams) -> SemanticWeight {
    let cells = frontier_cells(frontiers, map);
    let nearest = frontiers
        .iter()
        .enumerate()
        .min_by(|a, b| {
            dist2(a.1.centroid, agent.xy())
                .total_cmp(&dist2(b.1.centroid, agent.xy()))
                .then(a.0.cmp(&b.0))
        })
        .map(|(i, _)| i);
    let seeds: Vec<[f64; 2]> = nearest
        .map(|n| frontiers[n].cells.iter().map(|&(i, j)| map.cell_center(i, j)).collect())
        .unwrap_or_default();
    SemanticWeight {
        one_hot: Vec::new(),
        field: smooth(&cells, &seeds, params.planner.smooth_sigma * map.resolution),
        cells: cells.iter().map(|c| c.0).collect(),
    }
}

/// Labels the projectable candidates on the observation, asks the oracle
/// for a direction with `memories` as context and turns the reply into a
/// semantic weight.
#[allow(clippy::too_many_arguments)]
pub fn inject_planner(
    oracle: &dyn Oracle,
    question: &str,
    obs_rgb: &RgbImage,
    truth: &FrameTruth,
    pose: &Pose,
    cam: &CameraModel,
    candidates: &CandidateSet,
    frontiers: &[Frontier],
    map: &Map2D,
    memories: &[String],
    params: &HyperParams,
) -> Injection {
    let camera = cam.at(pose);
    let mut annotated = obs_rgb.clone();
    let radius = params.visual_prompt.circle_radius as f64 * cam.image_width as f64 / 640.0;
    let mut labeled = Vec::new();
    let mut labels = Vec::new();
    for (ci, c) in candidates.candidates.iter().enumerate() {
        let p = c.pose.xy();
        let Some(pr) = camera.project([p[0], p[1], 0.0]) else { continue };
        if camera.pixel_of(&pr).is_none() || labeled.len() == 26 {
            continue;
        }
        let letter = candidate_letter(labeled.len());
        draw_label(&mut annotated, pr.u, pr.v, radius, letter);
        labels.push((letter, p));
        labeled.push(ci);
    }
    let fallback = |choice: DirectionChoice, annotated: RgbImage, labeled: Vec<usize>| Injection {
        weight: fallback_weight(frontiers, map, pose, params),
        labeled,
        choice,
        annotated,
        fallback: true,
    };
    if labeled.is_empty() {
        return fallback(
            DirectionChoice::Fallback("no candidate projects into the view".into()),
            annotated,
            labeled,
        );
    }
    let image = OracleImage::new(
        annotated.clone(),
        Some(FrameTruth {
            labels,
            ..truth.clone()
        }),
    );
    let choice = choose_direction(oracle, question, image, labeled.len(), memories);
    let DirectionChoice::Chosen(k) = choice else {
        return fallback(choice, annotated, labeled);
    };
    let chosen = &candidates.candidates[labeled[k]];
    let mut one_hot = vec![0.0; labeled.len()];
    one_hot[k] = 1.0;
    let cells = frontier_cells(frontiers, map);
    let seeds = frontiers
        .get(chosen.frontier)
        .map(|f| splat_for(f, map, chosen.pose.xy(), params.planner.frontier_spacing))
        .unwrap_or_else(|| vec![chosen.pose.xy()]);
    Injection {
        weight: SemanticWeight {
            one_hot,
            field: smooth(&cells, &seeds, params.planner.smooth_sigma * map.resolution),
            cells: cells.iter().map(|c| c.0).collect(),
        },
        labeled,
        choice,
        annotated,
        fallback: false,
    }
}

/// Direction of `target` relative to the agent's heading, in eight sectors.
pub fn decision_label(pose: &Pose, target: [f64; 2]) -> &'static str {
    let (dx, dy) = (target[0] - pose.position[0], target[1] - pose.position[1]);
    if dx.hypot(dy) < 1e-9 {
        return "stay";
    }
    let rel = wrap_angle(dy.atan2(dx) - pose.yaw).to_degrees();
    const NAMES: [&str; 8] = [
        "forward",
        "forward-left",
        "left",
        "backward-left",
        "backward",
        "backward-right",
        "right",
        "forward-right",
    ];
    let sector = ((rel + 22.5).rem_euclid(360.0) / 45.0).floor() as usize % 8;
    NAMES[sector]
}

/// The camera never sees the floor right under it, so the straight-line
/// check ignores this much of the path next to the agent.
pub const FOOTPRINT_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub target: Pose,
    /// World center of the frontier cell being looked at.
    pub goal: [f64; 2],
    /// The target is a waypoint on the way to a viewpoint, not the
    /// viewpoint itself.
    pub via: bool,
    pub frontier_cell: (usize, usize),
    pub weight: f64,
    pub label: String,
}

/// Preferred distance between a viewpoint and the frontier it looks at.
/// Explored marking only covers floor from roughly a meter out, so standing
/// on a frontier cell never reveals what lies next to it.
pub const VIEW_STANDOFF: f64 = 1.5;

/// Points from which to look at `goal`, in preference order, each between
/// `min_d` and `max_d` from `here`: approach it, back away from it, or
/// sidestep onto the standoff circle.
fn viewpoints(here: [f64; 2], goal: [f64; 2], min_d: f64, max_d: f64) -> Vec<[f64; 2]> {
    let d = dist2(goal, here);
    if d < 1e-9 {
        return Vec::new();
    }
    let u = [(goal[0] - here[0]) / d, (goal[1] - here[1]) / d];
    let along = |s: f64| [here[0] + u[0] * s, here[1] + u[1] * s];
    let s = VIEW_STANDOFF;
    if d - s >= min_d {
        return vec![along((d - s).min(max_d))];
    }
    if s - d >= min_d {
        return vec![along(-(s - d).min(max_d))];
    }
    // circle(here, min_d) ∩ circle(goal, s)
    let a = (min_d * min_d - s * s + d * d) / (2.0 * d);
    let h2 = min_d * min_d - a * a;
    if h2 < 0.0 {
        return Vec::new();
    }
    let h = h2.sqrt();
    let m = along(a);
    vec![[m[0] - u[1] * h, m[1] + u[0] * h], [m[0] + u[1] * h, m[1] - u[0] * h]]
}

/// Frontier cells this close to an earlier target are not targeted again;
/// whatever kept them on the frontier (an occluded strip behind furniture,
/// say) will not change on a second look.
pub const RETARGET_RADIUS: f64 = 0.5;

/// Shortest paths over explored-traversable cells (8-connected, no corner
/// cutting) from the cells under the agent.
struct Reach {
    width: usize,
    cost: Vec<f64>,
    parent: Vec<usize>,
}

impl Reach {
    fn new(map: &Map2D, from: [f64; 2]) -> Self {
        let (w, h) = (map.width, map.height);
        let mut cost = vec![f64::INFINITY; w * h];
        let mut parent = vec![usize::MAX; w * h];
        let mut heap = BinaryHeap::new();
        let r = (FOOTPRINT_RADIUS / map.resolution).ceil() as i64;
        let footprint = |i: usize, j: usize| dist2(map.cell_center(i, j), from) <= FOOTPRINT_RADIUS;
        if let Some((ci, cj)) = map.cell_of(from) {
            for dj in -r..=r {
                for di in -r..=r {
                    let (i, j) = (ci as i64 + di, cj as i64 + dj);
                    if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
                        continue;
                    }
                    let (i, j) = (i as usize, j as usize);
                    if footprint(i, j) {
                        let c = dist2(map.cell_center(i, j), from);
                        cost[j * w + i] = c;
                        heap.push(Reverse((c.to_bits(), j * w + i)));
                    }
                }
            }
        }
        let open = |i: usize, j: usize| (map.explored(i, j) && map.traversable(i, j)) || footprint(i, j);
        while let Some(Reverse((bits, k))) = heap.pop() {
            let c = f64::from_bits(bits);
            if c > cost[k] {
                continue;
            }
            let (i, j) = ((k % w) as i64, (k / w) as i64);
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if !open(ni, nj) {
                    continue;
                }
                if di != 0 && dj != 0 && !(open(i as usize, nj) && open(ni, j as usize)) {
                    continue;
                }
                let nc = c + map.resolution * if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let nk = nj * w + ni;
                if nc < cost[nk] {
                    cost[nk] = nc;
                    parent[nk] = k;
                    heap.push(Reverse((nc.to_bits(), nk)));
                }
            }
        }
        Self { width: w, cost, parent }
    }

    /// Cells from `to` back to the footprint, if `to` is reachable.
    fn path_back(&self, to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let mut k = to.1 * self.width + to.0;
        if !self.cost[k].is_finite() {
            return None;
        }
        let mut out = vec![to];
        while self.parent[k] != usize::MAX {
            k = self.parent[k];
            out.push((k % self.width, k / self.width));
        }
        Some(out)
    }
}

/// The first straight step along the shortest path to `to`: the farthest
/// path point in line of sight and within `max_d`, if it is at least
/// `min_d` away.
fn waypoint(map: &Map2D, reach: &Reach, here: [f64; 2], to: [f64; 2], min_d: f64, max_d: f64) -> Option<[f64; 2]> {
    let path = reach.path_back(map.cell_of(to)?)?;
    path.iter()
        .map(|&(i, j)| map.cell_center(i, j))
        .find(|p| {
            let d = dist2(*p, here);
            d <= max_d && map.segment_clear_from(here, *p, FOOTPRINT_RADIUS)
        })
        .filter(|p| dist2(*p, here) >= min_d)
}

/// A viewpoint of the highest-weighted reachable frontier cell, facing
/// that cell. When no viewpoint is in line of sight the step goes to a
/// waypoint on the shortest path to one. Steps are between
/// `min_dist_from_cur` and `max_dist_from_cur`. Cells near an earlier
/// viewpoint target in `visited` are skipped. `None` means exploration is
/// exhausted.
pub fn plan_next(
    pose: &Pose,
    map: &Map2D,
    weight: &SemanticWeight,
    visited: &[[f64; 2]],
    params: &HyperParams,
) -> Option<Plan> {
    let (min_d, max_d) = (params.planner.min_dist_from_cur, params.planner.max_dist_from_cur);
    let here = pose.xy();
    let mut order: Vec<usize> = (0..weight.cells.len()).collect();
    let center = |k: usize| map.cell_center(weight.cells[k].0, weight.cells[k].1);
    order.sort_by(|&a, &b| {
        weight.field[b]
            .total_cmp(&weight.field[a])
            .then(dist2(center(a), here).total_cmp(&dist2(center(b), here)))
            .then(weight.cells[a].cmp(&weight.cells[b]))
    });
    let mut reach: Option<Reach> = None;
    for k in order {
        let goal = center(k);
        if visited.iter().any(|v| dist2(*v, goal) < RETARGET_RADIUS) {
            continue;
        }
        let views = viewpoints(here, goal, min_d, max_d);
        let direct = views.iter().find(|t| map.segment_clear_from(here, **t, FOOTPRINT_RADIUS));
        let (target, yaw, via) = match direct {
            Some(t) => (*t, (goal[1] - t[1]).atan2(goal[0] - t[0]), false),
            None => {
                let reach = reach.get_or_insert_with(|| Reach::new(map, here));
                // look from the standoff circle on the near side of the path
                let far = [goal[0], goal[1]];
                let Some(w) = std::iter::once(far)
                    .chain(views)
                    .find_map(|t| waypoint(map, reach, here, t, min_d, max_d))
                else {
                    continue;
                };
                (w, (w[1] - here[1]).atan2(w[0] - here[0]), true)
            }
        };
        return Some(Plan {
            target: Pose::new(target[0], target[1], yaw),
            goal,
            via,
            frontier_cell: weight.cells[k],
            weight: weight.field[k],
            label: decision_label(pose, target).to_string(),
        });
    }
    None
}
