//! Outcome and process metrics computed from finished sessions.

mod judge;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use num_traits::Float;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use judge::{
    label_chat, parse_rating, parse_verdict, render_rubric, InitiativeJudge, InitiativeLabel,
    LmJudge, RubricLevel, RuleBasedJudge, SATISFACTION_QUESTION, SATISFACTION_RUBRIC,
};

use crate::bus::ChatMessage;
use crate::env::{Role, TaskInstance, EDITOR};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("session has no {0} component")]
    MissingComponent(String),
    #[error("score {raw} outside [{min}, {max}]")]
    OutOfRange { raw: f64, min: f64, max: f64 },
    #[error("invalid scale: max {max} must exceed min {min}")]
    InvalidScale { min: f64, max: f64 },
    #[error("label from {0}, who is not one of the parties")]
    UnknownParty(Role),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("report invariant violated: {0}")]
    Inconsistent(String),
}

/// Base-N entropy of initiative counts, N being the number of parties.
/// Absent when no utterance takes initiative or there are fewer than two
/// parties; zero as soon as any party has no initiative.
pub fn entropy_from_counts<T: Float>(counts: &[usize]) -> Option<T> {
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return None;
    }
    if counts.contains(&0) {
        return Some(T::zero());
    }
    let n = T::from(counts.len())?;
    let total = T::from(total)?;
    let h = counts.iter().fold(T::zero(), |acc, &c| {
        let p = T::from(c).unwrap() / total;
        acc - p * p.log(n)
    });
    Some(h.max(T::zero()).min(T::one()))
}

/// Initiative entropy of `labels` over `parties`.
pub fn initiative_entropy<T: Float>(
    labels: &[InitiativeLabel],
    parties: &[Role],
) -> Result<Option<T>, EvalError> {
    let mut counts: BTreeMap<&Role, usize> = parties.iter().map(|p| (p, 0)).collect();
    for l in labels.iter().filter(|l| l.takes_initiative) {
        *counts
            .get_mut(&l.sender)
            .ok_or_else(|| EvalError::UnknownParty(l.sender.clone()))? += 1;
    }
    let counts: Vec<usize> = parties.iter().map(|p| counts[p]).collect();
    Ok(entropy_from_counts(&counts))
}

/// Affine map of `raw` from `[min, max]` onto `[0, 1]`.
pub fn normalize_score<T: Float>(raw: T, min: T, max: T) -> Result<T, EvalError> {
    let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
    if !(max > min) {
        return Err(EvalError::InvalidScale { min: f(min), max: f(max) });
    }
    if !(raw >= min && raw <= max) {
        return Err(EvalError::OutOfRange { raw: f(raw), min: f(min), max: f(max) });
    }
    Ok((raw - min) / (max - min))
}

/// What evaluation needs from a finished session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub task_id: String,
    pub instance_id: String,
    pub parties: Vec<Role>,
    /// Final public components.
    pub components: BTreeMap<String, serde_json::Value>,
    pub chat: Vec<ChatMessage>,
    /// The human's 1 to 5 rating of the final outcome.
    #[serde(default)]
    pub outcome_rating: Option<u8>,
    /// The human's 1 to 5 overall satisfaction with the collaboration.
    #[serde(default)]
    pub satisfaction: Option<u8>,
}

impl Outcome {
    pub fn editor_text(&self) -> Result<&str, EvalError> {
        match self.components.get(EDITOR) {
            Some(serde_json::Value::String(s)) => Ok(s),
            Some(serde_json::Value::Null) => Ok(""),
            _ => Err(EvalError::MissingComponent(EDITOR.into())),
        }
    }
}

/// Whether the final editor holds anything besides whitespace.
pub fn is_delivered(outcome: &Outcome) -> Result<bool, EvalError> {
    Ok(!outcome.editor_text()?.trim().is_empty())
}

/// Task-specific scoring of a delivered outcome, in `[0, 1]`.
pub trait TaskScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, outcome: &Outcome, instance: &TaskInstance) -> Result<f64, EvalError>;
}

/// Normalizes the human's 1 to 5 rating of the outcome.
#[derive(Debug, Clone, Copy, Default)]
pub struct HumanRatingScorer;

impl TaskScorer for HumanRatingScorer {
    fn name(&self) -> &str {
        "human_rating"
    }

    fn score(&self, outcome: &Outcome, _: &TaskInstance) -> Result<f64, EvalError> {
        let r = outcome.outcome_rating.ok_or_else(|| EvalError::Scorer("no rating recorded".into()))?;
        normalize_score(f64::from(r), 1.0, 5.0)
    }
}

/// Fraction of the instance's checklist patterns found in the final editor.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChecklistScorer;

impl TaskScorer for ChecklistScorer {
    fn name(&self) -> &str {
        "checklist"
    }

    fn score(&self, outcome: &Outcome, instance: &TaskInstance) -> Result<f64, EvalError> {
        if instance.checklist.is_empty() {
            return Err(EvalError::Scorer(format!("instance {} has no checklist", instance.instance_id)));
        }
        let text = outcome.editor_text()?;
        let mut hits = 0usize;
        for pattern in &instance.checklist {
            let re = RegexBuilder::new(pattern)
                .case_insensitive(true)
                .build()
                .map_err(|e| EvalError::Scorer(format!("bad checklist pattern {pattern:?}: {e}")))?;
            hits += usize::from(re.is_match(text));
        }
        Ok(hits as f64 / instance.checklist.len() as f64)
    }
}

type ScoreFn = dyn Fn(&Outcome, &TaskInstance) -> Result<f64, EvalError> + Send + Sync;

/// Adapts an external grader.
#[derive(Clone)]
pub struct FnScorer {
    name: String,
    f: Arc<ScoreFn>,
}

impl FnScorer {
    pub fn new(
        name: &str,
        f: impl Fn(&Outcome, &TaskInstance) -> Result<f64, EvalError> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }
}

impl TaskScorer for FnScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, outcome: &Outcome, instance: &TaskInstance) -> Result<f64, EvalError> {
        (self.f)(outcome, instance)
    }
}

/// Scores delivered outcomes; undelivered ones and scorer failures are absent.
pub fn score_task(outcome: &Outcome, instance: &TaskInstance, scorer: &dyn TaskScorer) -> Option<f64> {
    if !is_delivered(outcome).unwrap_or(false) {
        return None;
    }
    match scorer.score(outcome, instance) {
        Ok(s) if (0.0..=1.0).contains(&s) => Some(s),
        Ok(s) => {
            log::warn!("{} returned {s}, outside [0, 1]", scorer.name());
            None
        }
        Err(e) => {
            log::warn!("{} failed: {e}", scorer.name());
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub delivered: bool,
    pub task_performance: Option<T>,
    pub initiative_entropy: Option<T>,
    pub satisfaction: Option<u8>,
    pub labels: Vec<InitiativeLabel>,
}

impl<T: Float> MetricReport<T> {
    pub fn validate(&self) -> Result<(), EvalError> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        if self.task_performance.is_some() && !self.delivered {
            return Err(EvalError::Inconsistent("task performance on an undelivered session".into()));
        }
        if self.task_performance.is_some_and(|p| !unit(p)) {
            return Err(EvalError::Inconsistent("task performance outside [0, 1]".into()));
        }
        if self.initiative_entropy.is_some_and(|h| !unit(h)) {
            return Err(EvalError::Inconsistent("initiative entropy outside [0, 1]".into()));
        }
        if self.satisfaction.is_some_and(|s| !(1..=5).contains(&s)) {
            return Err(EvalError::Inconsistent("satisfaction outside 1 to 5".into()));
        }
        Ok(())
    }
}

/// Computes every metric for one finished session.
pub fn evaluate<T: Float>(
    outcome: &Outcome,
    instance: &TaskInstance,
    judge: &dyn InitiativeJudge,
    scorer: &dyn TaskScorer,
) -> Result<MetricReport<T>, EvalError> {
    let delivered = is_delivered(outcome)?;
    let labels = label_chat(&outcome.chat, judge);
    let report = MetricReport {
        delivered,
        task_performance: score_task(outcome, instance, scorer).and_then(T::from),
        initiative_entropy: initiative_entropy(&labels, &outcome.parties)?,
        satisfaction: outcome.satisfaction,
        labels,
    };
    report.validate()?;
    Ok(report)
}

/// One row of a batch summary: means over the sessions where a metric is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub group: String,
    pub sessions: usize,
    pub delivery_rate: f64,
    pub task_performance: Option<f64>,
    pub initiative_entropy: Option<f64>,
    pub satisfaction: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BatchSummary {
    pub fn from_reports(group: &str, reports: &[MetricReport<f64>]) -> Self {
        Self {
            group: group.into(),
            sessions: reports.len(),
            delivery_rate: mean(reports.iter().map(|r| f64::from(u8::from(r.delivered)))).unwrap_or(0.0),
            task_performance: mean(reports.iter().filter_map(|r| r.task_performance)),
            initiative_entropy: mean(reports.iter().filter_map(|r| r.initiative_entropy)),
            satisfaction: mean(reports.iter().filter_map(|r| r.satisfaction.map(f64::from))),
        }
    }
}

/// Writes summaries as CSV, one row per group; absent means are empty cells.
pub fn write_summary_csv<W: Write>(out: W, rows: &[BatchSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "sessions", "delivery_rate", "task_performance", "initiative_entropy", "satisfaction"])?;
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.sessions.to_string(),
            format!("{:.4}", r.delivery_rate),
            cell(r.task_performance),
            cell(r.initiative_entropy),
            cell(r.satisfaction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
