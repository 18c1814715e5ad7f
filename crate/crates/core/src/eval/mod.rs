//! Metrics, the batch runner and ablation harness, and map renders.

mod metrics;
mod render;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::agent::{run_episode, Ablation, EpisodeInput, EpisodeTrace};
use crate::config::HyperParams;
use crate::error::{EqaError, Result};
use crate::memory::{Encoder, MemoryStore};
use crate::oracle::{Oracle, ScriptedOracle};
use crate::simulator::{Question, Scene};

pub use metrics::{lcs_len, norm_step, rouge_l, success_rate, tokens, EpisodeRow, MetricsReport};
pub use render::{map_csv, map_image, write_episode_renders, write_png};

/// Builds the oracle an episode in `scene` talks to.
pub type OracleFactory<'a> = dyn Fn(&Scene) -> Result<Box<dyn Oracle>> + Sync + 'a;

/// The ground-truth scripted oracle for every scene.
pub fn scripted_oracles(scene: &Scene) -> Result<Box<dyn Oracle>> {
    Ok(Box::new(ScriptedOracle::new(scene.clone())))
}

/// Applies `f` to every job on up to `workers` threads; results keep job
/// order.
pub fn run_batch<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

/// The questions `ids` of the given scenes (all of them when `ids` is
/// empty).
pub fn select_questions<'a>(scenes: &'a [Scene], ids: &[String]) -> Result<Vec<(&'a Scene, &'a Question)>> {
    let mut out = Vec::new();
    for s in scenes {
        out.extend(s.questions.iter().filter(|q| ids.is_empty() || ids.contains(&q.id)).map(|q| (s, q)));
    }
    if let Some(missing) = ids.iter().find(|id| !out.iter().any(|(_, q)| &q.id == *id)) {
        return Err(EqaError::InvalidInput(format!("no scene has question {missing:?}")));
    }
    Ok(out)
}

pub struct Harness<'a> {
    pub params: &'a HyperParams,
    pub encoder: &'a dyn Encoder,
    pub oracle_for: &'a OracleFactory<'a>,
    pub workers: usize,
}

impl Harness<'_> {
    /// One episode on a fresh, empty memory store.
    pub fn episode(&self, scene: &Scene, question: &Question, ablation: Ablation) -> Result<EpisodeTrace> {
        let oracle = (self.oracle_for)(scene)?;
        let mut store = MemoryStore::new(self.params.record_dim());
        let input = EpisodeInput {
            scene,
            question,
            params: self.params,
            ablation,
            spawn: 0,
            oracle: oracle.as_ref(),
            encoder: self.encoder,
            keep_frames: false,
        };
        Ok(run_episode(&input, &mut store)?.trace)
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
}

/// Runs every episode once per ablation row, each in isolation. Episode
/// errors become failed report rows.
pub fn ablate(episodes: &[(&Scene, &Question)], rows: &[Ablation], harness: &Harness) -> Result<Vec<AblationRow>> {
    if episodes.is_empty() {
        return Err(EqaError::InvalidInput("ablation needs at least one question".into()));
    }
    if rows.is_empty() {
        return Err(EqaError::InvalidInput("ablation needs at least one flag set".into()));
    }
    let jobs: Vec<(Ablation, &Scene, &Question)> =
        rows.iter().flat_map(|&a| episodes.iter().map(move |&(s, q)| (a, s, q))).collect();
    let results = run_batch(&jobs, harness.workers, |&(a, s, q)| harness.episode(s, q, a));
    let mut out = Vec::new();
    for (r, chunk) in rows.iter().zip(jobs.chunks(episodes.len()).zip(results.chunks(episodes.len()))) {
        let (jobs, results) = chunk;
        let mut report_rows = Vec::new();
        let mut traces = Vec::new();
        for (&(a, s, q), res) in jobs.iter().zip(results) {
            match res {
                Ok(t) => {
                    report_rows.push(EpisodeRow::from_trace(t));
                    traces.push(t.clone());
                }
                Err(e) => {
                    log::warn!("episode {}/{} [{a}] failed: {e}", s.name, q.id);
                    report_rows.push(EpisodeRow::failed(&s.name, &q.id, a, e.to_string()));
                }
            }
        }
        out.push(AblationRow {
            ablation: *r,
            report: MetricsReport::from_rows(&r.to_string(), report_rows)?,
            traces,
        });
    }
    Ok(out)
}
