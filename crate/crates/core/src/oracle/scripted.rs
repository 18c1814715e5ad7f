use super::templates::TemplateId;
use super::{Oracle, OracleError, OracleRequest, UNSURE};
use crate::geometry::dist2;
use crate::simulator::{Question, QuestionKind, Scene};
use crate::update_gate::black_fraction;

/// Deterministic oracle that answers from scene ground truth.
///
/// An object counts as known when its description (`white sofa in the
/// living room`) appears in the prompt or it is visible in an attached
/// image. Confidence is `E` when every entity of the question is known and
/// `B` otherwise; answers are gold only when every entity is known.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    scene: Scene,
}

impl ScriptedOracle {
    pub fn new(scene: Scene) -> Self {
        Self { scene }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    fn question_in(&self, prompt: &str) -> Option<&Question> {
        self.scene
            .questions
            .iter()
            .filter(|q| prompt.contains(&q.text))
            .max_by_key(|q| q.text.len())
    }

    fn known(&self, id: u32, prompt_lower: &str, req: &OracleRequest) -> bool {
        let Some(obj) = self.scene.object(id) else { return false };
        prompt_lower.contains(&self.scene.describe(obj).to_lowercase())
            || req
                .images
                .iter()
                .any(|i| i.truth.as_ref().is_some_and(|t| t.visible.contains(&id)))
    }

    fn all_known(&self, q: &Question, req: &OracleRequest) -> bool {
        let lower = req.prompt.to_lowercase();
        q.entities.iter().all(|&id| self.known(id, &lower, req))
    }

    fn scene_caption(&self, req: &OracleRequest) -> String {
        let Some(img) = req.images.first() else {
            return "Room: \nObject: \nDescription: ".into();
        };
        let truth = match &img.truth {
            Some(t) if black_fraction(&img.rgb) < 0.95 => t,
            _ => return "Room: \nObject: \nDescription: nothing visible".into(),
        };
        let room = truth.room.clone().unwrap_or_default();
        let objs: Vec<_> = truth.visible.iter().filter_map(|&id| self.scene.object(id)).collect();
        let names: Vec<&str> = objs.iter().map(|o| o.category.as_str()).collect();
        let desc = if objs.is_empty() {
            format!("An empty part of the {room}.")
        } else {
            let parts: Vec<String> = objs.iter().map(|o| format!("a {} {}", o.color, o.category)).collect();
            format!("A view of the {room} with {}.", parts.join(", "))
        };
        format!("Room: {room}\nObject: {}\nDescription: {desc}", names.join(", "))
    }

    fn object_caption(&self, req: &OracleRequest) -> String {
        let obj = req
            .images
            .first()
            .and_then(|i| i.truth.as_ref())
            .and_then(|t| t.focus)
            .and_then(|id| self.scene.object(id));
        match obj {
            Some(o) => {
                let mut attr = vec![o.color.clone()];
                attr.extend(o.attributes.iter().cloned());
                format!(
                    "cate: {}\nattr: {}\ndesc: {}",
                    o.category,
                    attr.join(", "),
                    self.scene.describe(o)
                )
            }
            None => "cate: unknown\nattr: \ndesc: ".into(),
        }
    }

    fn direction(&self, q: &Question, req: &OracleRequest) -> String {
        let Some(truth) = req.images.first().and_then(|i| i.truth.as_ref()) else {
            return "A".into();
        };
        let lower = req.prompt.to_lowercase();
        let here = truth.pose.map(|p| p.xy()).unwrap_or([0.0, 0.0]);
        let target = q
            .entities
            .iter()
            .filter(|&&id| !self.known(id, &lower, req))
            .filter_map(|&id| self.scene.object(id))
            .min_by(|a, b| dist2(a.position, here).total_cmp(&dist2(b.position, here)).then(a.id.cmp(&b.id)));
        let Some(target) = target else { return "A".into() };
        let best = truth
            .labels
            .iter()
            .min_by(|a, b| {
                dist2(a.1, target.position)
                    .total_cmp(&dist2(b.1, target.position))
                    .then(a.0.cmp(&b.0))
            })
            .map_or('A', |l| l.0);
        format!("Heading toward the {} should help. Answer: {best}", target.category)
    }

    fn answer(&self, q: &Question, req: &OracleRequest) -> String {
        let known = self.all_known(q, req);
        match q.kind {
            QuestionKind::Choice if known => q.answer.clone(),
            QuestionKind::Choice => q
                .option_letters()
                .into_iter()
                .find(|c| c.to_string() != q.answer)
                .map_or_else(|| "A".into(), |c| c.to_string()),
            QuestionKind::Open if known => format!("The answer is {}.", q.answer),
            QuestionKind::Open => UNSURE.into(),
        }
    }

    fn judge(&self, prompt: &str) -> String {
        let line = |key: &str| {
            prompt
                .lines()
                .find_map(|l| l.strip_prefix(key))
                .map(|s| s.trim().to_lowercase())
                .unwrap_or_default()
        };
        let (reference, candidate) = (line("Reference answer:"), line("Candidate answer:"));
        if !reference.is_empty() && candidate.contains(&reference) { "5" } else { "1" }.into()
    }
}

impl Oracle for ScriptedOracle {
    fn call(&self, req: &OracleRequest) -> Result<String, OracleError> {
        match req.template {
            TemplateId::SceneCaption => return Ok(self.scene_caption(req)),
            TemplateId::ObjectCaption => return Ok(self.object_caption(req)),
            TemplateId::Judge => return Ok(self.judge(&req.prompt)),
            _ => {}
        }
        let q = self
            .question_in(&req.prompt)
            .ok_or_else(|| OracleError::Malformed("prompt names no known question".into()))?;
        Ok(match req.template {
            TemplateId::Confidence => if self.all_known(q, req) { "E" } else { "B" }.into(),
            TemplateId::Direction => self.direction(q, req),
            TemplateId::AnswerMc | TemplateId::AnswerOpen => self.answer(q, req),
            _ => unreachable!("handled above"),
        })
    }
}
