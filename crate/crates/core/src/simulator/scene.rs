//! Scene model and the scene file format.
//!
//! Scene files are TOML. The wall layout is a list of run-length encoded
//! rows, northernmost row first. A row is a sequence of `<count><symbol>`
//! runs (count defaults to 1) over the symbols `#` wall, `.` floor and
//! `-` void (open space without a floor):
//!
//! ```toml
//! name = "closet"
//! resolution = 0.1
//! walls = ["5#", "#3.#", "5#"]
//!
//! [[rooms]]
//! name = "closet"
//! min = [0.1, 0.1]
//! max = [0.4, 0.2]
//!
//! [[objects]]
//! id = 1
//! category = "box"
//! color = "red"
//! rgb = [200, 30, 30]
//! position = [0.25, 0.15]
//! footprint = [0.1, 0.1]
//! height = 0.5
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EqaError, Result};
use crate::geometry::Pose;

pub const WALL_HEIGHT: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Floor,
    Wall,
    Void,
}

impl CellKind {
    fn symbol(self) -> char {
        match self {
            CellKind::Floor => '.',
            CellKind::Wall => '#',
            CellKind::Void => '-',
        }
    }

    fn from_symbol(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellKind::Floor),
            '#' => Some(CellKind::Wall),
            '-' => Some(CellKind::Void),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_rgb: Option<[u8; 3]>,
}

impl Room {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] < self.max[0] && p[1] >= self.min[1] && p[1] < self.max[1]
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub color: String,
    pub rgb: [u8; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    /// Footprint center, meters.
    pub position: [f64; 2],
    /// Footprint extent along x and y, meters.
    pub footprint: [f64; 2],
    pub height: f64,
}

impl SceneObject {
    pub fn min(&self) -> [f64; 2] {
        [
            self.position[0] - self.footprint[0] / 2.0,
            self.position[1] - self.footprint[1] / 2.0,
        ]
    }

    pub fn max(&self) -> [f64; 2] {
        [
            self.position[0] + self.footprint[0] / 2.0,
            self.position[1] + self.footprint[1] / 2.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub position: [f64; 2],
    pub yaw_deg: f64,
}

impl Spawn {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position[0], self.position[1], self.yaw_deg.to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Choice,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub kind: QuestionKind,
    /// `"A. Yes"`-style options for choice questions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    /// Gold option letter, or the gold sentence for open questions.
    pub answer: String,
    /// Scene objects the question is about.
    pub entities: Vec<u32>,
    #[serde(default)]
    pub label: String,
}

impl Question {
    /// The question text with its options appended, as shown to a model.
    pub fn prompt_text(&self) -> String {
        if self.options.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.text, self.options.join(" "))
        }
    }

    pub fn option_letters(&self) -> Vec<char> {
        (0..self.options.len()).map(|i| (b'A' + i as u8) as char).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    name: String,
    resolution: f64,
    walls: Vec<String>,
    #[serde(default)]
    rooms: Vec<Room>,
    #[serde(default)]
    objects: Vec<SceneObject>,
    #[serde(default)]
    spawns: Vec<Spawn>,
    #[serde(default)]
    questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major from the south edge: `cells[j * width + i]`.
    pub cells: Vec<CellKind>,
    pub rooms: Vec<Room>,
    pub objects: Vec<SceneObject>,
    pub spawns: Vec<Spawn>,
    pub questions: Vec<Question>,
    object_cells: Vec<Option<usize>>,
}

fn parse_row(row: &str, line: usize) -> Result<Vec<CellKind>> {
    let mut out = Vec::new();
    let mut count = String::new();
    for c in row.chars() {
        if c.is_ascii_digit() {
            count.push(c);
            continue;
        }
        let kind = CellKind::from_symbol(c).ok_or_else(|| {
            EqaError::Scene(format!("walls[{line}]: unknown cell symbol {c:?}"))
        })?;
        let n = if count.is_empty() {
            1
        } else {
            count
                .parse::<usize>()
                .map_err(|e| EqaError::Scene(format!("walls[{line}]: bad run length: {e}")))?
        };
        count.clear();
        out.extend(std::iter::repeat_n(kind, n));
    }
    if !count.is_empty() {
        return Err(EqaError::Scene(format!("walls[{line}]: dangling run length")));
    }
    Ok(out)
}

fn encode_row(cells: &[CellKind]) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < cells.len() {
        let k = cells[i];
        let mut j = i;
        while j < cells.len() && cells[j] == k {
            j += 1;
        }
        let n = j - i;
        if n == 1 {
            s.push(k.symbol());
        } else {
            let _ = write!(s, "{n}{}", k.symbol());
        }
        i = j;
    }
    s
}

impl Scene {
    /// Builds and validates a scene from its parts.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        resolution: f64,
        width: usize,
        height: usize,
        cells: Vec<CellKind>,
        rooms: Vec<Room>,
        objects: Vec<SceneObject>,
        spawns: Vec<Spawn>,
        questions: Vec<Question>,
    ) -> Result<Self> {
        if cells.len() != width * height {
            return Err(EqaError::Scene(format!(
                "cells: expected {} entries, got {}",
                width * height,
                cells.len()
            )));
        }
        let mut scene = Self {
            name: name.into(),
            resolution,
            width,
            height,
            cells,
            rooms,
            objects,
            spawns,
            questions,
            object_cells: Vec::new(),
        };
        scene.validate()?;
        scene.rasterize_objects();
        scene.validate_spawns()?;
        Ok(scene)
    }

    fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(EqaError::Scene("resolution must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(EqaError::Scene("walls: empty grid".into()));
        }
        let (w, h) = self.extent();
        for (i, r) in self.rooms.iter().enumerate() {
            if !(r.min[0] < r.max[0] && r.min[1] < r.max[1]) {
                return Err(EqaError::Scene(format!("rooms[{i}] ({}): empty rectangle", r.name)));
            }
            if r.min[0] < 0.0 || r.min[1] < 0.0 || r.max[0] > w || r.max[1] > h {
                return Err(EqaError::Scene(format!("rooms[{i}] ({}): outside the grid", r.name)));
            }
            for (j, o) in self.rooms.iter().enumerate().take(i) {
                let ox = r.max[0].min(o.max[0]) - r.min[0].max(o.min[0]);
                let oy = r.max[1].min(o.max[1]) - r.min[1].max(o.min[1]);
                if ox > 1e-9 && oy > 1e-9 {
                    return Err(EqaError::Scene(format!(
                        "rooms[{i}] ({}) overlaps rooms[{j}] ({})",
                        r.name, o.name
                    )));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !ids.insert(o.id) {
                return Err(EqaError::Scene(format!("objects[{i}]: duplicate id {}", o.id)));
            }
            if o.category.trim().is_empty() {
                return Err(EqaError::Scene(format!("objects[{i}]: empty category")));
            }
            if !(o.footprint[0] > 0.0 && o.footprint[1] > 0.0 && o.height > 0.0) {
                return Err(EqaError::Scene(format!("objects[{i}] (id {}): non-positive size", o.id)));
            }
            if o.height > WALL_HEIGHT {
                return Err(EqaError::Scene(format!("objects[{i}] (id {}): taller than the walls", o.id)));
            }
            let (lo, hi) = (o.min(), o.max());
            if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > w || hi[1] > h {
                return Err(EqaError::Scene(format!(
                    "objects[{i}] (id {}): position outside the walls",
                    o.id
                )));
            }
            for (ci, cj) in self.footprint_cells(lo, hi) {
                if self.cells[cj * self.width + ci] != CellKind::Floor {
                    return Err(EqaError::Scene(format!(
                        "objects[{i}] (id {}): position outside the walls",
                        o.id
                    )));
                }
            }
        }
        for (i, q) in self.questions.iter().enumerate() {
            for e in &q.entities {
                if !ids.contains(e) {
                    return Err(EqaError::Scene(format!(
                        "questions[{i}] ({}): unknown entity {e}",
                        q.id
                    )));
                }
            }
            if q.kind == QuestionKind::Choice {
                let letters = q.option_letters();
                let ok = q.answer.len() == 1 && letters.contains(&q.answer.chars().next().unwrap());
                if !ok {
                    return Err(EqaError::Scene(format!(
                        "questions[{i}] ({}): answer must be one of the option letters",
                        q.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_spawns(&self) -> Result<()> {
        if self.spawns.is_empty() {
            return Err(EqaError::Scene("spawns: at least one spawn pose required".into()));
        }
        if !self.spawns.iter().any(|s| self.is_traversable(s.position)) {
            return Err(EqaError::Scene("spawns: no traversable spawn pose".into()));
        }
        Ok(())
    }

    fn footprint_cells(&self, lo: [f64; 2], hi: [f64; 2]) -> Vec<(usize, usize)> {
        let r = self.resolution;
        // cells whose centers lie inside the footprint; at least the center cell
        let i0 = ((lo[0] / r) - 0.5).ceil().max(0.0) as usize;
        let i1 = ((hi[0] / r) - 0.5).floor().min(self.width as f64 - 1.0);
        let j0 = ((lo[1] / r) - 0.5).ceil().max(0.0) as usize;
        let j1 = ((hi[1] / r) - 0.5).floor().min(self.height as f64 - 1.0);
        let mut out = Vec::new();
        if i1 >= i0 as f64 && j1 >= j0 as f64 {
            for j in j0..=j1 as usize {
                for i in i0..=i1 as usize {
                    out.push((i, j));
                }
            }
        }
        if out.is_empty() {
            let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
            if let Some(ij) = self.cell_of(c) {
                out.push(ij);
            }
        }
        out
    }

    fn rasterize_objects(&mut self) {
        let mut grid = vec![None; self.width * self.height];
        for (k, o) in self.objects.iter().enumerate() {
            for (i, j) in self.footprint_cells(o.min(), o.max()) {
                grid[j * self.width + i] = Some(k);
            }
        }
        self.object_cells = grid;
    }

    /// Width and height in meters.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let i = (p[0] / self.resolution).floor() as usize;
        let j = (p[1] / self.resolution).floor() as usize;
        (i < self.width && j < self.height).then_some((i, j))
    }

    pub fn cell(&self, i: usize, j: usize) -> CellKind {
        self.cells[j * self.width + i]
    }

    /// Index into `objects` of the object occupying a cell.
    pub fn object_at(&self, i: usize, j: usize) -> Option<usize> {
        self.object_cells[j * self.width + i]
    }

    pub fn cell_blocked(&self, i: usize, j: usize) -> bool {
        self.cell(i, j) == CellKind::Wall || self.object_at(i, j).is_some()
    }

    pub fn is_traversable(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_some_and(|(i, j)| !self.cell_blocked(i, j))
    }

    pub fn room_at(&self, p: [f64; 2]) -> Option<&Room> {
        self.rooms.iter().find(|r| r.contains(p))
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Total room floor area, m².
    pub fn area(&self) -> f64 {
        self.rooms.iter().map(Room::area).sum()
    }

    pub fn room_name_of(&self, o: &SceneObject) -> &str {
        self.room_at(o.position).map(|r| r.name.as_str()).unwrap_or("house")
    }

    /// Canonical short description of an object, e.g. `white sofa in the
    /// living room`.
    pub fn describe(&self, o: &SceneObject) -> String {
        format!("{} {} in the {}", o.color, o.category, self.room_name_of(o))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: SceneFile = toml::from_str(s).map_err(|e| EqaError::Scene(e.to_string()))?;
        let mut rows = Vec::with_capacity(f.walls.len());
        for (k, row) in f.walls.iter().enumerate() {
            rows.push(parse_row(row, k)?);
        }
        let width = rows.first().map_or(0, Vec::len);
        if let Some(k) = rows.iter().position(|r| r.len() != width) {
            return Err(EqaError::Scene(format!(
                "walls[{k}]: row has {} cells, expected {width}",
                rows[k].len()
            )));
        }
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for row in rows.iter().rev() {
            cells.extend_from_slice(row);
        }
        Scene::new(
            f.name,
            f.resolution,
            width,
            height,
            cells,
            f.rooms,
            f.objects,
            f.spawns,
            f.questions,
        )
    }

    pub fn to_toml_string(&self) -> String {
        let walls = (0..self.height)
            .rev()
            .map(|j| encode_row(&self.cells[j * self.width..(j + 1) * self.width]))
            .collect();
        let f = SceneFile {
            name: self.name.clone(),
            resolution: self.resolution,
            walls,
            rooms: self.rooms.clone(),
            objects: self.objects.clone(),
            spawns: self.spawns.clone(),
            questions: self.questions.clone(),
        };
        toml::to_string(&f).expect("scene always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| EqaError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| EqaError::io(path, e))
    }
}
