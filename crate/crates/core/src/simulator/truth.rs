use serde::{Deserialize, Serialize};

use super::render::Observation;
use crate::geometry::Pose;

/// Ground truth riding along with an image handed to an encoder or oracle.
///
/// Real models ignore it; the mock encoder and the scripted oracle read it in
/// place of perception.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub pose: Option<Pose>,
    pub room: Option<String>,
    /// Ids of objects visible in the frame.
    pub visible: Vec<u32>,
    /// Letter labels drawn on the image and the world points they mark.
    pub labels: Vec<(char, [f64; 2])>,
    /// The object a crop was taken around.
    pub focus: Option<u32>,
}

impl FrameTruth {
    pub fn of(obs: &Observation) -> Self {
        Self {
            pose: Some(obs.pose),
            room: obs.room.clone(),
            visible: obs.visible.iter().map(|d| d.object_id).collect(),
            labels: Vec::new(),
            focus: None,
        }
    }

    pub fn crop(obs: &Observation, object_id: u32) -> Self {
        Self {
            focus: Some(object_id),
            visible: vec![object_id],
            ..Self::of(obs)
        }
    }
}
