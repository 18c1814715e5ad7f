//! Scene builder and the bundled fixture scenes.
//!
//! The bundled `.toml` files under `scenes/` are generated from the builders
//! below; `bundled_files_match_builders` keeps the two in sync.

use super::scene::{CellKind, Question, QuestionKind, Room, Scene, SceneObject, Spawn};
use crate::error::{EqaError, Result};

pub const BUNDLED: [&str; 4] = ["two_sofas", "kitchen_count", "three_room_attr", "box_room"];

const TWO_SOFAS: &str = include_str!("../../scenes/two_sofas.toml");
const KITCHEN_COUNT: &str = include_str!("../../scenes/kitchen_count.toml");
const THREE_ROOM_ATTR: &str = include_str!("../../scenes/three_room_attr.toml");
const BOX_ROOM: &str = include_str!("../../scenes/box_room.toml");

/// Loads a bundled scene by name.
pub fn bundled(name: &str) -> Result<Scene> {
    let src = match name {
        "two_sofas" => TWO_SOFAS,
        "kitchen_count" => KITCHEN_COUNT,
        "three_room_attr" => THREE_ROOM_ATTR,
        "box_room" => BOX_ROOM,
        other => return Err(EqaError::Scene(format!("no bundled scene named {other:?}"))),
    };
    Scene::from_toml_str(src)
}

pub fn palette(color: &str) -> [u8; 3] {
    match color {
        "white" => [235, 235, 230],
        "yellow" => [225, 200, 40],
        "red" => [200, 40, 40],
        "blue" => [40, 70, 200],
        "green" => [50, 160, 60],
        "brown" => [130, 85, 45],
        "black" => [45, 45, 45],
        "gray" => [128, 128, 128],
        "orange" => [230, 130, 30],
        "purple" => [130, 60, 160],
        _ => [160, 160, 160],
    }
}

pub struct SceneBuilder {
    name: String,
    res: f64,
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    rooms: Vec<Room>,
    objects: Vec<SceneObject>,
    spawns: Vec<Spawn>,
    questions: Vec<Question>,
}

impl SceneBuilder {
    /// A floor of the given size (meters, 0.1 m cells) ringed by walls.
    pub fn new(name: &str, width_m: f64, height_m: f64) -> Self {
        let res = 0.1;
        let width = (width_m / res).round() as usize;
        let height = (height_m / res).round() as usize;
        let mut b = Self {
            name: name.into(),
            res,
            width,
            height,
            cells: vec![CellKind::Floor; width * height],
            rooms: vec![],
            objects: vec![],
            spawns: vec![],
            questions: vec![],
        };
        b.fill(0.0, 0.0, width_m, res, CellKind::Wall);
        b.fill(0.0, height_m - res, width_m, height_m, CellKind::Wall);
        b.fill(0.0, 0.0, res, height_m, CellKind::Wall);
        b.fill(width_m - res, 0.0, width_m, height_m, CellKind::Wall);
        b
    }

    fn fill(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, kind: CellKind) {
        let i0 = (x0 / self.res).round() as usize;
        let i1 = ((x1 / self.res).round() as usize).min(self.width);
        let j0 = (y0 / self.res).round() as usize;
        let j1 = ((y1 / self.res).round() as usize).min(self.height);
        for j in j0..j1 {
            for i in i0..i1 {
                self.cells[j * self.width + i] = kind;
            }
        }
    }

    /// A one-cell wall along x = `x` with an optional door gap `[d0, d1)`.
    pub fn wall_x(mut self, x: f64, door: Option<(f64, f64)>) -> Self {
        let h = self.height as f64 * self.res;
        self.fill(x, 0.0, x + self.res, h, CellKind::Wall);
        if let Some((d0, d1)) = door {
            self.fill(x, d0, x + self.res, d1, CellKind::Floor);
        }
        self
    }

    pub fn wall_y(mut self, y: f64, door: Option<(f64, f64)>) -> Self {
        let w = self.width as f64 * self.res;
        self.fill(0.0, y, w, y + self.res, CellKind::Wall);
        if let Some((d0, d1)) = door {
            self.fill(d0, y, d1, y + self.res, CellKind::Floor);
        }
        self
    }

    pub fn room(mut self, name: &str, min: [f64; 2], max: [f64; 2], floor_rgb: [u8; 3]) -> Self {
        self.rooms.push(Room {
            name: name.into(),
            min,
            max,
            floor_rgb: Some(floor_rgb),
        });
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn object(
        mut self,
        id: u32,
        category: &str,
        color: &str,
        attributes: &[&str],
        position: [f64; 2],
        footprint: [f64; 2],
        height: f64,
    ) -> Self {
        self.objects.push(SceneObject {
            id,
            category: category.into(),
            color: color.into(),
            rgb: palette(color),
            attributes: attributes.iter().map(|s| s.to_string()).collect(),
            position,
            footprint,
            height,
        });
        self
    }

    pub fn spawn(mut self, x: f64, y: f64, yaw_deg: f64) -> Self {
        self.spawns.push(Spawn {
            position: [x, y],
            yaw_deg,
        });
        self
    }

    pub fn choice(mut self, id: &str, label: &str, text: &str, options: &[&str], answer: &str, entities: &[u32]) -> Self {
        self.questions.push(Question {
            id: id.into(),
            text: text.into(),
            kind: QuestionKind::Choice,
            options: options
                .iter()
                .enumerate()
                .map(|(i, o)| format!("{}. {o}", (b'A' + i as u8) as char))
                .collect(),
            answer: answer.into(),
            entities: entities.to_vec(),
            label: label.into(),
        });
        self
    }

    pub fn open(mut self, id: &str, label: &str, text: &str, answer: &str, entities: &[u32]) -> Self {
        self.questions.push(Question {
            id: id.into(),
            text: text.into(),
            kind: QuestionKind::Open,
            options: vec![],
            answer: answer.into(),
            entities: entities.to_vec(),
            label: label.into(),
        });
        self
    }

    pub fn build(self) -> Result<Scene> {
        Scene::new(
            self.name,
            self.res,
            self.width,
            self.height,
            self.cells,
            self.rooms,
            self.objects,
            self.spawns,
            self.questions,
        )
    }
}

pub fn build_two_sofas() -> Result<Scene> {
    SceneBuilder::new("two_sofas", 10.0, 6.0)
        .wall_x(5.0, Some((2.5, 3.5)))
        .room("living room", [0.1, 0.1], [5.0, 5.9], [120, 105, 90])
        .room("media room", [5.1, 0.1], [9.9, 5.9], [95, 100, 125])
        .object(1, "sofa", "white", &["fabric", "large"], [0.8, 4.6], [0.9, 2.0], 0.8)
        .object(2, "sofa", "yellow", &["leather", "large"], [9.2, 4.6], [0.9, 2.0], 0.8)
        .object(3, "coffee table", "brown", &["wooden", "small"], [2.2, 4.8], [1.0, 0.6], 0.45)
        .object(4, "television", "black", &["flat", "large"], [7.5, 0.35], [1.4, 0.3], 1.1)
        .object(5, "plant", "green", &["potted", "small"], [9.4, 0.6], [0.5, 0.5], 1.2)
        .spawn(3.6, 1.4, 135.0)
        .spawn(2.5, 3.0, 90.0)
        .choice(
            "q1",
            "Comparison",
            "Are the sofa in the living room and the sofa in the media room the same color?",
            &["Yes", "No"],
            "B",
            &[1, 2],
        )
        .open(
            "q2",
            "Attribute",
            "What color is the sofa in the media room?",
            "The sofa in the media room is yellow.",
            &[2],
        )
        .choice(
            "q3",
            "Relationship",
            "Are the coffee table and the television in the same room?",
            &["Yes", "No"],
            "B",
            &[3, 4],
        )
        .choice(
            "q4",
            "Relationship",
            "Which room has the plant?",
            &["The living room", "The media room", "Neither"],
            "B",
            &[5],
        )
        .build()
}

pub fn build_kitchen_count() -> Result<Scene> {
    SceneBuilder::new("kitchen_count", 9.0, 6.0)
        .wall_x(4.5, Some((2.4, 3.6)))
        .room("kitchen", [0.1, 0.1], [4.5, 5.9], [140, 135, 120])
        .room("dining room", [4.6, 0.1], [8.9, 5.9], [110, 90, 80])
        .object(1, "chair", "red", &["wooden", "small"], [0.6, 0.7], [0.5, 0.5], 0.9)
        .object(2, "chair", "blue", &["plastic", "small"], [3.8, 5.2], [0.5, 0.5], 0.9)
        .object(3, "chair", "green", &["metal", "small"], [0.6, 5.2], [0.5, 0.5], 0.9)
        .object(4, "fridge", "white", &["tall", "large"], [4.0, 0.5], [0.7, 0.6], 1.9)
        .object(5, "dining table", "brown", &["wooden", "large"], [7.0, 3.0], [1.8, 1.0], 0.75)
        .object(6, "chair", "black", &["wooden", "small"], [7.0, 1.9], [0.5, 0.5], 0.9)
        .object(7, "counter", "gray", &["stone", "small"], [2.2, 5.5], [1.2, 0.5], 0.9)
        .spawn(2.4, 2.8, 0.0)
        .spawn(6.5, 4.5, 180.0)
        .choice(
            "q1",
            "Counting",
            "How many chairs are in the kitchen?",
            &["1", "2", "3", "4"],
            "C",
            &[1, 2, 3],
        )
        .open(
            "q2",
            "Attribute",
            "What color is the fridge?",
            "The fridge is white.",
            &[4],
        )
        .choice(
            "q3",
            "Attribute",
            "Is the dining table bigger than the counter in the kitchen?",
            &["Yes", "No"],
            "A",
            &[5, 7],
        )
        .choice(
            "q4",
            "Counting",
            "How many rooms have a chair?",
            &["1", "2", "3"],
            "B",
            &[1, 6],
        )
        .build()
}

pub fn build_three_room_attr() -> Result<Scene> {
    SceneBuilder::new("three_room_attr", 12.0, 5.0)
        .wall_x(4.0, Some((2.0, 3.0)))
        .wall_x(8.0, Some((2.0, 3.0)))
        .room("kitchen", [0.1, 0.1], [4.0, 4.9], [140, 135, 120])
        .room("study", [4.1, 0.1], [8.0, 4.9], [100, 120, 100])
        .room("bedroom", [8.1, 0.1], [11.9, 4.9], [125, 100, 120])
        .object(1, "table", "brown", &["wooden", "large"], [1.5, 3.8], [1.6, 1.0], 0.75)
        .object(2, "table", "white", &["wooden", "small"], [6.0, 4.3], [0.8, 0.6], 0.75)
        .object(3, "lamp", "orange", &["tall", "small"], [7.6, 0.5], [0.4, 0.4], 1.4)
        .object(4, "lamp", "purple", &["short", "small"], [11.5, 4.4], [0.4, 0.4], 0.6)
        .object(5, "bed", "blue", &["double", "large"], [10.6, 1.2], [2.0, 1.6], 0.6)
        .spawn(1.2, 1.0, 45.0)
        .spawn(6.0, 2.5, 0.0)
        .choice(
            "q1",
            "Attribute",
            "Is the table in the kitchen bigger than the table in the study?",
            &["Yes", "No"],
            "A",
            &[1, 2],
        )
        .choice(
            "q2",
            "Comparison",
            "Are the lamp in the study and the lamp in the bedroom the same color?",
            &["Yes", "No"],
            "B",
            &[3, 4],
        )
        .open(
            "q3",
            "Attribute",
            "What color is the bed in the bedroom?",
            "The bed in the bedroom is blue.",
            &[5],
        )
        .choice(
            "q4",
            "Comparison",
            "Are the table in the kitchen and the table in the study the same color?",
            &["Yes", "No"],
            "B",
            &[1, 2],
        )
        .build()
}

pub fn build_box_room() -> Result<Scene> {
    SceneBuilder::new("box_room", 6.0, 4.0)
        .room("box room", [0.1, 0.1], [5.9, 3.9], [120, 105, 90])
        .spawn(3.0, 2.0, 0.0)
        .build()
}

pub fn build(name: &str) -> Result<Scene> {
    match name {
        "two_sofas" => build_two_sofas(),
        "kitchen_count" => build_kitchen_count(),
        "three_room_attr" => build_three_room_attr(),
        "box_room" => build_box_room(),
        other => Err(EqaError::Scene(format!("no bundled scene named {other:?}"))),
    }
}
