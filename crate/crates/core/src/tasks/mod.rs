//! Reference task environments (travel planning, related work, tabular
//! analysis) backed by small fixture databases, and a registry that builds
//! them by task id.

pub mod executor;
pub mod related_work;
pub mod tabular;
pub mod travel;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use crate::env::{
    ActionSpec, Components, DeclarativeEnv, DeclarativeTask, EnvError, Environment,
    ObservationView, ParamKind, ParsedAction, Role, StepBudget, TaskEnvironmentSpec,
    TaskInstance, TaskLogic, Team, Transition, EDITOR, FINISH,
};
use executor::{CellExecutor, MockExecutor, SubprocessExecutor};
use related_work::{LexicalOverlap, Paper, RelatedWorkEnv, SimilarityScorer};
use tabular::{Dataset, TabularEnv};
use travel::{TravelDb, TravelEnv};

pub const EDITOR_UPDATE: &str = "EDITOR_UPDATE";

pub(crate) fn editor_spec(description: &str) -> ActionSpec {
    ActionSpec::new(EDITOR_UPDATE, &[("text", ParamKind::Text)], description)
}

pub(crate) fn finish_spec() -> ActionSpec {
    ActionSpec::new(FINISH, &[], "Declare the task complete and end the session.")
}

pub(crate) fn update_editor(c: &mut Components, action: &ParsedAction) -> Result<Transition, EnvError> {
    c.put_shared(EDITOR, &action.arg("text").unwrap_or_default())?;
    Ok(Transition::shared())
}

pub(crate) fn render_rows(rows: &[Value]) -> String {
    if rows.is_empty() {
        return "No results.".into();
    }
    rows.iter()
        .map(|row| match row {
            Value::Object(m) => {
                let fields: Vec<String> = m
                    .iter()
                    .map(|(k, v)| match v {
                        Value::String(s) => format!("{k}: {s}"),
                        other => format!("{k}: {other}"),
                    })
                    .collect();
                format!("- {}", fields.join("; "))
            }
            other => format!("- {other}"),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// All fixture data the reference environments read from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixtureSet {
    pub travel: TravelDb,
    pub papers: Vec<Paper>,
    pub datasets: Vec<Dataset>,
    pub instances: Vec<TaskInstance>,
}

const FIXTURE_FILES: [&str; 6] = [
    "travel/database.json",
    "travel/instances.json",
    "related_work/papers.json",
    "related_work/instances.json",
    "tabular/datasets.json",
    "tabular/instances.json",
];

const BUILTIN: [&str; 6] = [
    include_str!("../../fixtures/travel/database.json"),
    include_str!("../../fixtures/travel/instances.json"),
    include_str!("../../fixtures/related_work/papers.json"),
    include_str!("../../fixtures/related_work/instances.json"),
    include_str!("../../fixtures/tabular/datasets.json"),
    include_str!("../../fixtures/tabular/instances.json"),
];

fn parse<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<T, EnvError> {
    serde_json::from_str(text).map_err(|e| EnvError::InvalidSpec(format!("{name}: {e}")))
}

impl FixtureSet {
    /// The fixtures compiled into the crate.
    pub fn builtin() -> Self {
        Self::from_texts(&BUILTIN).expect("bundled fixtures are valid")
    }

    /// Reads the same layout from a directory.
    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        let mut texts = Vec::new();
        for f in FIXTURE_FILES {
            let path = dir.join(f);
            texts.push(
                std::fs::read_to_string(&path)
                    .map_err(|_| EnvError::FixtureMissing(path.display().to_string()))?,
            );
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        Self::from_texts(&refs)
    }

    fn from_texts(t: &[&str]) -> Result<Self, EnvError> {
        let travel: TravelDb = parse(FIXTURE_FILES[0], t[0])?;
        travel.validate()?;
        let mut instances: Vec<TaskInstance> = parse(FIXTURE_FILES[1], t[1])?;
        let papers: Vec<Paper> = parse(FIXTURE_FILES[2], t[2])?;
        instances.extend(parse::<Vec<TaskInstance>>(FIXTURE_FILES[3], t[3])?);
        let datasets: Vec<Dataset> = parse(FIXTURE_FILES[4], t[4])?;
        instances.extend(parse::<Vec<TaskInstance>>(FIXTURE_FILES[5], t[5])?);
        let mut ids = std::collections::BTreeSet::new();
        for p in &papers {
            if !ids.insert(&p.id) {
                return Err(EnvError::InvalidSpec(format!("duplicate paper id {}", p.id)));
            }
        }
        Ok(Self {
            travel,
            papers,
            datasets,
            instances,
        })
    }
}

/// How the tabular environment runs notebook cells.
#[derive(Clone)]
pub enum ExecutorChoice {
    /// Canned outputs from the instance's `data.mock_cells`.
    Mock,
    Subprocess(SubprocessExecutor),
    Custom(Arc<dyn CellExecutor>),
}

/// Builds task logic by task id. Declarative environments can be added at
/// runtime from their JSON documents.
#[derive(Clone)]
pub struct TaskRegistry {
    travel: Arc<TravelDb>,
    papers: Arc<Vec<Paper>>,
    datasets: Arc<Vec<Dataset>>,
    instances: Arc<Vec<TaskInstance>>,
    declarative: BTreeMap<String, DeclarativeTask>,
    executor: ExecutorChoice,
    similarity: Arc<dyn SimilarityScorer>,
}

impl TaskRegistry {
    pub fn new(fixtures: FixtureSet) -> Self {
        Self {
            travel: Arc::new(fixtures.travel),
            papers: Arc::new(fixtures.papers),
            datasets: Arc::new(fixtures.datasets),
            instances: Arc::new(fixtures.instances),
            declarative: BTreeMap::new(),
            executor: ExecutorChoice::Mock,
            similarity: Arc::new(LexicalOverlap),
        }
    }

    pub fn builtin() -> Self {
        Self::new(FixtureSet::builtin())
    }

    pub fn with_executor(mut self, executor: ExecutorChoice) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_similarity(mut self, scorer: Arc<dyn SimilarityScorer>) -> Self {
        self.similarity = scorer;
        self
    }

    pub fn register_declarative(&mut self, doc: DeclarativeTask) -> Result<(), EnvError> {
        DeclarativeEnv::new(doc.clone())?;
        self.declarative.insert(doc.spec.task_id.clone(), doc);
        Ok(())
    }

    pub fn add_instance(&mut self, instance: TaskInstance) {
        Arc::make_mut(&mut self.instances).push(instance);
    }

    pub fn task_ids(&self) -> Vec<String> {
        let mut ids = vec![
            travel::TASK_ID.to_string(),
            related_work::TASK_ID.to_string(),
            tabular::TASK_ID.to_string(),
        ];
        ids.extend(self.declarative.keys().cloned());
        ids
    }

    pub fn instances(&self) -> &[TaskInstance] {
        &self.instances
    }

    pub fn instance(&self, task_id: &str, instance_id: &str) -> Result<TaskInstance, EnvError> {
        if !self.task_ids().iter().any(|t| t == task_id) {
            return Err(EnvError::UnknownTask(task_id.into()));
        }
        self.instances
            .iter()
            .find(|i| i.task_id == task_id && i.instance_id == instance_id)
            .cloned()
            .ok_or_else(|| EnvError::FixtureMissing(format!("instance {task_id}/{instance_id}")))
    }

    pub fn spec(&self, task_id: &str) -> Result<TaskEnvironmentSpec, EnvError> {
        match task_id {
            travel::TASK_ID => Ok(TravelEnv::spec_doc()),
            related_work::TASK_ID => Ok(RelatedWorkEnv::spec_doc()),
            tabular::TASK_ID => Ok(TabularEnv::spec_doc()),
            other => self
                .declarative
                .get(other)
                .map(|d| d.spec.clone())
                .ok_or_else(|| EnvError::UnknownTask(other.into())),
        }
    }

    /// Task logic for `instance`, after checking its fixture references.
    pub fn logic(&self, instance: &TaskInstance) -> Result<Box<dyn TaskLogic>, EnvError> {
        Ok(match instance.task_id.as_str() {
            travel::TASK_ID => Box::new(TravelEnv::new(self.travel.clone())),
            related_work::TASK_ID => {
                Box::new(RelatedWorkEnv::new(self.papers.clone(), self.similarity.clone()))
            }
            tabular::TASK_ID => {
                for name in tabular::instance_datasets(instance) {
                    if !self.datasets.iter().any(|d| d.name == name) {
                        return Err(EnvError::FixtureMissing(format!("dataset {name}")));
                    }
                }
                let executor: Arc<dyn CellExecutor> = match &self.executor {
                    ExecutorChoice::Mock => {
                        let canned: BTreeMap<String, String> = instance
                            .data
                            .get("mock_cells")
                            .cloned()
                            .map(serde_json::from_value)
                            .transpose()
                            .map_err(|e| EnvError::InvalidSpec(format!("mock_cells: {e}")))?
                            .unwrap_or_default();
                        Arc::new(MockExecutor::new(canned))
                    }
                    ExecutorChoice::Subprocess(s) => {
                        s.probe()?;
                        Arc::new(s.clone())
                    }
                    ExecutorChoice::Custom(c) => c.clone(),
                };
                Box::new(TabularEnv::new(self.datasets.clone(), executor))
            }
            other => Box::new(DeclarativeEnv::new(
                self.declarative
                    .get(other)
                    .cloned()
                    .ok_or_else(|| EnvError::UnknownTask(other.into()))?,
            )?),
        })
    }

    /// Convenience: logic plus `Environment::reset`.
    pub fn reset(
        &self,
        instance: &TaskInstance,
        team: Team,
        budget: StepBudget,
    ) -> Result<(Environment, BTreeMap<Role, ObservationView>), EnvError> {
        Environment::reset(self.logic(instance)?, instance, team, budget)
    }
}
