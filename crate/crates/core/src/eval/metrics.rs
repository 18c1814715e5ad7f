use serde::{Deserialize, Serialize};

use crate::agent::{Ablation, EpisodeTrace, ForcedBy};
use crate::error::{EqaError, Result};
use crate::oracle::{self, Oracle};

/// Lowercased whitespace tokens with punctuation removed.
pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|t| t.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2·LCS(C, R) / (|C| + |R|)` over [`tokens`]. Two empty strings score 0.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (tokens(candidate), tokens(reference));
    if c.is_empty() && r.is_empty() {
        log::warn!("rouge_l: candidate and reference are both empty; scoring 0");
        return 0.0;
    }
    2.0 * lcs_len(&c, &r) as f64 / (c.len() + r.len()) as f64
}

/// Mean of `N_i / (√S_i · γ_s)` over `(steps, area)` pairs.
pub fn norm_step(episodes: &[(usize, f64)], gamma_s: f64) -> Result<f64> {
    if episodes.is_empty() {
        return Err(EqaError::InvalidInput("norm_step of no episodes".into()));
    }
    if !(gamma_s > 0.0) {
        return Err(EqaError::InvalidInput(format!("gamma_s must be positive, got {gamma_s}")));
    }
    let mut sum = 0.0;
    for (n, s) in episodes {
        if !(*s > 0.0) {
            return Err(EqaError::InvalidInput(format!("room size must be positive, got {s}")));
        }
        sum += *n as f64 / (s.sqrt() * gamma_s);
    }
    Ok(sum / episodes.len() as f64)
}

/// Percent of exact matches; `None` (unanswered) never matches.
pub fn success_rate(predictions: &[Option<String>], golds: &[String]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(EqaError::InvalidInput(format!(
            "{} predictions for {} gold answers",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(EqaError::InvalidInput("success rate of no episodes".into()));
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_deref().map(str::trim) == Some(g.trim()))
        .count();
    Ok(100.0 * hits as f64 / golds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scene: String,
    pub question_id: String,
    pub question: String,
    pub ablation: Ablation,
    pub steps: usize,
    pub area_m2: f64,
    pub gamma_s: f64,
    pub success: bool,
    pub answer: Option<String>,
    pub gold: String,
    pub rouge_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<ForcedBy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<f64>,
    /// Set when the episode failed to run; such rows count as failures
    /// and are left out of normalized steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRow {
    pub fn from_trace(t: &EpisodeTrace) -> Self {
        let h = &t.header;
        Self {
            scene: h.scene.clone(),
            question_id: h.question_id.clone(),
            question: h.question.clone(),
            ablation: h.ablation,
            steps: t.footer.steps,
            area_m2: h.area_m2,
            gamma_s: h.params.memory.gamma_s,
            success: t.footer.success,
            answer: t.footer.answer.clone(),
            gold: h.gold.clone(),
            rouge_l: t.footer.answer.as_deref().map_or(0.0, |a| rouge_l(a, &h.gold)),
            forced: t.footer.forced,
            judge: None,
            error: None,
        }
    }

    pub fn failed(scene: &str, question_id: &str, ablation: Ablation, error: String) -> Self {
        Self {
            scene: scene.into(),
            question_id: question_id.into(),
            question: String::new(),
            ablation,
            steps: 0,
            area_m2: 0.0,
            gamma_s: 0.0,
            success: false,
            answer: None,
            gold: String::new(),
            rouge_l: 0.0,
            forced: None,
            judge: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub rouge_l: f64,
    /// `None` when no episode completed.
    pub norm_step: Option<f64>,
    /// Present only when a judge scored the answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<f64>,
    pub rows: Vec<EpisodeRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Summary {
        label: String,
        episodes: usize,
        success_rate: f64,
        rouge_l: f64,
        norm_step: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        judge: Option<f64>,
    },
    Episode(Box<EpisodeRow>),
}

impl MetricsReport {
    pub fn from_rows(label: &str, rows: Vec<EpisodeRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(EqaError::InvalidInput(format!("report {label:?} has no episodes")));
        }
        let n = rows.len() as f64;
        let done: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| (r.steps, r.area_m2))
            .collect();
        // γ_s is recorded per trace; a report mixes only traces run with one config
        let gamma_s = rows.iter().find(|r| r.error.is_none()).map_or(0.0, |r| r.gamma_s);
        let norm = if done.is_empty() { None } else { Some(norm_step(&done, gamma_s)?) };
        let judged: Vec<f64> = rows.iter().filter_map(|r| r.judge).collect();
        Ok(Self {
            label: label.into(),
            episodes: rows.len(),
            success_rate: 100.0 * rows.iter().filter(|r| r.success).count() as f64 / n,
            rouge_l: rows.iter().map(|r| r.rouge_l).sum::<f64>() / n,
            norm_step: norm,
            judge: (!judged.is_empty()).then(|| judged.iter().sum::<f64>() / judged.len() as f64),
            rows,
        })
    }

    pub fn from_traces(label: &str, traces: &[EpisodeTrace]) -> Result<Self> {
        Self::from_rows(label, traces.iter().map(EpisodeRow::from_trace).collect())
    }

    /// Scores every answered row with the judge. Rows the judge cannot
    /// score keep no judge value.
    pub fn add_judge(&mut self, judge: &dyn Oracle) -> Result<()> {
        for r in &mut self.rows {
            if let Some(a) = &r.answer {
                r.judge = oracle::judge(judge, &r.question, &r.gold, a);
            }
        }
        let rows = std::mem::take(&mut self.rows);
        *self = Self::from_rows(&self.label, rows)?;
        Ok(())
    }

    /// A summary line followed by one line per episode.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&ReportLine::Summary {
            label: self.label.clone(),
            episodes: self.episodes,
            success_rate: self.success_rate,
            rouge_l: self.rouge_l,
            norm_step: self.norm_step,
            judge: self.judge,
        })
        .expect("report serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(&ReportLine::Episode(Box::new(r.clone()))).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut label = None;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str(line).map_err(|e| EqaError::Parse(format!("report line {}: {e}", n + 1)))? {
                ReportLine::Summary { label: l, .. } if label.is_none() => label = Some(l),
                ReportLine::Episode(r) if label.is_some() => rows.push(*r),
                _ => return Err(EqaError::Parse(format!("report line {}: out of order", n + 1))),
            }
        }
        Self::from_rows(&label.ok_or_else(|| EqaError::Parse("report has no summary".into()))?, rows)
    }

    /// One aligned text line.
    pub fn summary_line(&self) -> String {
        let norm = self.norm_step.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut s = format!(
            "{:<8} episodes {:>3}  success {:>6.2}%  rouge_l {:.3}  norm_step {norm}",
            self.label, self.episodes, self.success_rate, self.rouge_l
        );
        if let Some(j) = self.judge {
            s += &format!("  judge {j:.3}");
        }
        s
    }
}
