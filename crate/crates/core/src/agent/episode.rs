use std::f64::consts::PI;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::planner::{inject_planner, plan_next, FOOTPRINT_RADIUS};
use super::{
    is_correct, Ablation, ContextLog, Decision, EpisodeTrace, ForcedBy, RetrievalLog, StepRecord, TraceFooter,
    TraceHeader,
};
use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::geometry::{dist2, Pose};
use crate::mapping::{detect_frontiers, project_to_2d, Map2D, sample_candidates, Bounds2, GridConfig, VoxelGrid};
use crate::memory::{
    build_local_entry, DetectionNote, Encoder, GlobalMemoryEntry, MemoryPayload, MemoryStore, SceneCaption, StateNote,
};
use crate::oracle::{self, Oracle, OracleImage};
use crate::retrieval::{content_retrieve, fuse_query, scene_retrieve, RetrievalParams, SceneMatch};
use crate::simulator::{black_ratio, move_agent, render, FrameTruth, Observation, Question, QuestionKind, Scene};
use crate::update_gate::{self, GateOutcome, ObservationCache, UpdateParams};

/// A move shorter than this counts as blocked.
const STUCK_DIST: f64 = 0.05;

pub struct EpisodeInput<'a> {
    pub scene: &'a Scene,
    pub question: &'a Question,
    pub params: &'a HyperParams,
    pub ablation: Ablation,
    pub spawn: usize,
    pub oracle: &'a dyn Oracle,
    pub encoder: &'a dyn Encoder,
    /// Keep the per-step observations (candidate labels drawn when planning).
    pub keep_frames: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub trace: EpisodeTrace,
    pub frames: Vec<RgbImage>,
    /// Planar map after the last observation.
    pub map: Map2D,
}

struct Captions {
    scene: Option<SceneCaption>,
    detections: Vec<DetectionNote>,
    warnings: Vec<String>,
}

fn crop(rgb: &RgbImage, bbox: [u32; 4]) -> RgbImage {
    let [u0, v0, u1, v1] = bbox;
    let (w, h) = (u1.saturating_sub(u0) + 1, v1.saturating_sub(v0) + 1);
    image::imageops::crop_imm(rgb, u0, v0, w, h).to_image()
}

fn caption(oracle: &dyn Oracle, obs: &Observation) -> Captions {
    let mut warnings = Vec::new();
    let scene = match oracle::describe_scene(oracle, OracleImage::new(obs.rgb.clone(), Some(FrameTruth::of(obs)))) {
        Ok(p) => {
            warnings.extend(p.warnings);
            Some(p.value)
        }
        Err(e) => {
            warnings.push(format!("scene caption: {e}"));
            None
        }
    };
    let detections = obs
        .visible
        .iter()
        .map(|d| {
            let img = OracleImage::new(crop(&obs.rgb, d.bbox), Some(FrameTruth::crop(obs, d.object_id)));
            let cap = match oracle::describe_object(oracle, img) {
                Ok(p) => {
                    warnings.extend(p.warnings);
                    p.value
                }
                Err(e) => {
                    warnings.push(format!("object caption: {e}"));
                    Default::default()
                }
            };
            let known = !cap.cate.is_empty() && cap.cate != "unknown";
            DetectionNote {
                category: if known { cap.cate } else { d.category.clone() },
                attribute: cap.attr,
                description: cap.desc,
                bbox: d.bbox,
            }
        })
        .collect();
    Captions {
        scene,
        detections,
        warnings,
    }
}

/// Adds room and target annotations for this frame. Targets within `β_p`
/// of a stored target of the same category are the same object; the entry
/// is replaced only when the new observer stands closer.
fn update_global(
    store: &mut MemoryStore,
    scene_id: u32,
    encoder: &dyn Encoder,
    obs: &Observation,
    caps: &Captions,
    beta_p: f64,
) -> Result<(Vec<u64>, Vec<u64>)> {
    let (mut added, mut superseded) = (Vec::new(), Vec::new());
    let here = obs.pose.xy();
    if let Some(room) = caps.scene.as_ref().map(|c| c.room.trim()).filter(|r| !r.is_empty()) {
        let known = store.live(scene_id).any(|r| {
            matches!(&r.payload, MemoryPayload::Global(GlobalMemoryEntry::Room { category, .. }) if category == room)
        });
        if !known {
            let payload = MemoryPayload::Global(GlobalMemoryEntry::Room {
                category: room.to_string(),
                position: here,
            });
            added.push(store.insert(payload, scene_id, encoder, None)?);
        }
    }
    for (det, note) in obs.visible.iter().zip(&caps.detections) {
        if note.description.is_empty() {
            continue;
        }
        let p = det.position;
        let observer_dist = dist2(p, here);
        let same: Vec<(u64, f64)> = store
            .live(scene_id)
            .filter_map(|r| match &r.payload {
                MemoryPayload::Global(GlobalMemoryEntry::Target {
                    position,
                    category,
                    observer,
                    ..
                }) if *category == note.category && dist2([position[0], position[1]], p) <= beta_p => {
                    Some((r.index, dist2([position[0], position[1]], observer.xy())))
                }
                _ => None,
            })
            .collect();
        if same.iter().any(|&(_, d)| d <= observer_dist) {
            continue;
        }
        for &(idx, _) in &same {
            store.supersede(idx)?;
            superseded.push(idx);
        }
        let payload = MemoryPayload::Global(GlobalMemoryEntry::Target {
            position: [p[0], p[1], 0.0],
            category: note.category.clone(),
            description: note.description.clone(),
            observer: obs.pose,
        });
        added.push(store.insert(payload, scene_id, encoder, None)?);
    }
    Ok((added, superseded))
}

fn context_of(store: &MemoryStore, indices: &[u64]) -> Vec<String> {
    indices
        .iter()
        .filter_map(|&i| store.get(i))
        .map(|r| r.payload.canonical_text())
        .collect()
}

/// Turns in place towards the least obstructed of eight headings when the
/// current view is mostly black.
fn settle(scene: &Scene, pose: Pose, params: &HyperParams) -> Result<Pose> {
    let cam = params.camera_model();
    let limit = params.navigation.black_pixel_ratio;
    let here = black_ratio(&render(scene, &pose, &cam)?.rgb);
    if here <= limit {
        return Ok(pose);
    }
    let mut best = (here, pose);
    for k in 1..8 {
        let p = pose.with_yaw(pose.yaw + k as f64 * PI / 4.0);
        let r = black_ratio(&render(scene, &p, &cam)?.rgb);
        if r < best.0 {
            best = (r, p);
        }
    }
    Ok(best.1)
}

/// Runs one episode against `store`, which holds any persisted bank and
/// receives this episode's memories.
pub fn run_episode(input: &EpisodeInput<'_>, store: &mut MemoryStore) -> Result<EpisodeOutput> {
    let EpisodeInput {
        scene,
        question,
        params,
        ablation,
        spawn,
        oracle,
        encoder,
        keep_frames,
    } = *input;
    params.validate()?;
    if encoder.dim() != store.dim() {
        return Err(EqaError::Dimension {
            expected: store.dim(),
            got: encoder.dim(),
        });
    }
    if question.text.trim().is_empty() {
        return Err(EqaError::InvalidInput(format!("question {} has no text", question.id)));
    }
    if question.kind == QuestionKind::Choice && question.options.is_empty() {
        return Err(EqaError::InvalidInput(format!("choice question {} has no options", question.id)));
    }
    let start = scene
        .spawns
        .get(spawn)
        .ok_or_else(|| EqaError::InvalidInput(format!("scene {} has no spawn {spawn}", scene.name)))?
        .pose();
    if !scene.is_traversable(start.xy()) {
        return Err(EqaError::NotTraversable(start.xy()));
    }

    let cam = params.camera_model();
    let rp = RetrievalParams::from_params(params);
    let up = UpdateParams::from_params(params);
    let max_steps = params.max_steps(scene.area());
    let reach = cam.max_depth + 1.0;
    let mut grid = VoxelGrid::new(GridConfig::from_params(params), Bounds2::around(start.xy(), reach))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache = ObservationCache::default();
    let f_text = encoder.encode_text(&question.prompt_text());

    let mut pose = start;
    let mut visited: Vec<[f64; 2]> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut frames = Vec::new();
    let mut header: Option<TraceHeader> = None;
    let mut scene_id = 0;

    for i in 0..max_steps {
        let obs = render(scene, &pose, &cam)?;
        let truth = FrameTruth::of(&obs);
        let f_img = encoder.encode_image(&obs.rgb, Some(&truth));
        if header.is_none() {
            // the bank is read once, before the first step
            let matched = match scene_retrieve(store, &f_img, &rp)? {
                SceneMatch::Known(s) => Some(s),
                SceneMatch::Unknown => None,
            };
            scene_id = matched.unwrap_or_else(|| store.fresh_scene_id());
            let loaded_global = store
                .live(scene_id)
                .filter(|r| matches!(r.payload, MemoryPayload::Global(_)))
                .count();
            header = Some(TraceHeader {
                scene: scene.name.clone(),
                question_id: question.id.clone(),
                question: question.prompt_text(),
                gold: question.answer.clone(),
                ablation,
                seed: params.seed,
                spawn,
                max_steps,
                area_m2: scene.area(),
                scene_id,
                scene_matched: matched.is_some(),
                loaded_global,
                memory_in: None,
                params: params.clone(),
            });
        }

        grid.expand(Bounds2::around(pose.xy(), reach))?;
        grid.integrate(&obs.depth, &pose, &cam)?;
        grid.mark_footprint(pose.xy(), FOOTPRINT_RADIUS, cam.mount_height)?;

        let caps = caption(oracle, &obs);
        let mut warnings = caps.warnings.clone();
        let gate = update_gate::evaluate(&pose, &obs.rgb, &f_img, store, scene_id, &cache, &up)?;
        let (global_added, global_superseded) =
            update_global(store, scene_id, encoder, &obs, &caps, params.memory.beta_p)?;

        let f_q = fuse_query(&f_img, &f_text)?;
        let retrieved = content_retrieve(store, scene_id, &f_q, &rp)?;
        let hit_ids: Vec<u64> = retrieved.hits.iter().map(|h| h.index).collect();
        let ctx = |on: bool| if on { hit_ids.clone() } else { Vec::new() };
        let mut context = ContextLog {
            stop: Vec::new(),
            planner: Vec::new(),
            answer: Vec::new(),
        };
        let image = || OracleImage::new(obs.rgb.clone(), Some(truth.clone()));
        let space = caps
            .scene
            .as_ref()
            .map(|c| c.room.clone())
            .filter(|r| !r.is_empty())
            .unwrap_or_else(|| "unknown space".into());

        let forced_max = i + 1 == max_steps;
        let mut confidence = None;
        let mut forced = forced_max.then_some(ForcedBy::MaxSteps);
        let mut stop = forced_max;
        if !forced_max && i >= params.navigation.min_random_init_steps {
            context.stop = ctx(ablation.stop);
            let reply = oracle::confidence(oracle, &question.text, &context_of(store, &context.stop), image());
            warnings.extend(reply.warning.clone());
            stop = reply.value >= params.memory.gamma;
            confidence = Some(reply);
        }

        let mut frame = obs.rgb.clone();
        let mut decision = None;
        if !stop {
            if i < params.navigation.min_random_init_steps {
                let yaw = rng.random_range(-PI..PI);
                decision = Some(Decision::Rotate {
                    yaw,
                    reached: pose.with_yaw(yaw),
                });
            } else {
                let map = project_to_2d(&grid, &cam);
                let frontiers = detect_frontiers(&map, params);
                if frontiers.is_empty() {
                    forced = Some(ForcedBy::Exhausted);
                } else {
                    let candidates = sample_candidates(&frontiers, &pose, params)?;
                    context.planner = ctx(ablation.planner);
                    let inj = inject_planner(
                        oracle,
                        &question.text,
                        &obs.rgb,
                        &truth,
                        &pose,
                        &cam,
                        &candidates,
                        &frontiers,
                        &map,
                        &context_of(store, &context.planner),
                        params,
                    );
                    if let oracle::DirectionChoice::Fallback(why) = &inj.choice {
                        warnings.push(why.clone());
                    }
                    match plan_next(&pose, &map, &inj.weight, &visited, params) {
                        None => forced = Some(ForcedBy::Exhausted),
                        Some(plan) => {
                            let moved = move_agent(scene, &pose, &plan.target);
                            // a blocked move would be planned again forever
                            if !plan.via || dist2(moved.xy(), pose.xy()) < STUCK_DIST {
                                visited.push(plan.goal);
                            }
                            decision = Some(Decision::Move {
                                target: plan.target,
                                reached: settle(scene, moved, params)?,
                                label: plan.label,
                                frontier_cell: plan.frontier_cell,
                                candidates: candidates.candidates.len(),
                                labeled: inj.labeled.len(),
                                chosen: match inj.choice {
                                    oracle::DirectionChoice::Chosen(k) if !inj.fallback => Some(k),
                                    _ => None,
                                },
                                fallback: inj.fallback,
                            });
                        }
                    }
                    frame = inj.annotated;
                }
            }
        }
        let decision = match decision {
            Some(d) => d,
            None => {
                context.answer = ctx(ablation.answer);
                let memories = context_of(store, &context.answer);
                let state = format!(
                    "at ({:.2}, {:.2}) heading {:.0} deg in the {space}",
                    pose.position[0],
                    pose.position[1],
                    pose.yaw.to_degrees()
                );
                let reply = match question.kind {
                    QuestionKind::Choice => oracle::answer_mc(
                        oracle,
                        &question.prompt_text(),
                        &question.option_letters(),
                        &memories,
                        Some(&state),
                        image(),
                    ),
                    QuestionKind::Open => oracle::answer_open(oracle, &question.text, &memories, Some(&state), image()),
                };
                warnings.extend(reply.warning);
                Decision::Answer {
                    answer: reply.answer,
                    raw: reply.raw,
                    forced,
                }
            }
        };

        let inserted = if gate == GateOutcome::Accepted {
            let entry = build_local_entry(
                i as i64,
                &format!("{}/{}/step{i:03}", scene.name, question.id),
                caps.detections.clone(),
                caps.scene.clone(),
                &decision.summary(),
                StateNote { pose, space },
            )?;
            let idx = store.insert(MemoryPayload::Local(entry), scene_id, encoder, Some((&obs.rgb, Some(&truth))))?;
            cache.insert(idx, obs.rgb.clone(), f_img.clone());
            Some(idx)
        } else {
            None
        };

        if keep_frames {
            frames.push(frame);
        }
        let next = decision.next_pose();
        steps.push(StepRecord {
            step: i,
            pose,
            room: obs.room.clone(),
            visible: truth.visible.clone(),
            black_ratio: black_ratio(&obs.rgb),
            gate,
            inserted,
            global_added,
            global_superseded,
            retrieval: RetrievalLog {
                k: retrieved.k,
                entropy: retrieved.entropy,
                hits: retrieved.hits.iter().map(|h| (h.index, h.similarity)).collect(),
            },
            context,
            confidence,
            decision,
            warnings,
        });
        match next {
            Some(p) => pose = p,
            None => break,
        }
    }

    let header = header.expect("at least one step runs");
    let (answer, forced) = match steps.last().map(|s| &s.decision) {
        Some(Decision::Answer { answer, forced, .. }) => (answer.clone(), *forced),
        _ => unreachable!("the last step always answers"),
    };
    let footer = TraceFooter {
        success: is_correct(question, answer.as_deref()),
        answer,
        steps: steps.len(),
        stop_step: steps.len() - 1,
        forced,
    };
    Ok(EpisodeOutput {
        trace: EpisodeTrace { header, steps, footer },
        frames,
        map: project_to_2d(&grid, &cam),
    })
}
