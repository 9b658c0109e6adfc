use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::executor::{CellExecutor, ExecRequest, NotebookCell};
use super::{editor_spec, finish_spec, update_editor, EDITOR_UPDATE};
use crate::env::{
    ActionSpec, ComponentSpec, Components, EnvError, ParamKind, ParsedAction, Role,
    TaskEnvironmentSpec, TaskInstance, TaskLogic, Team, Transition, EDITOR,
};

pub const TASK_ID: &str = "tabular_analysis";
pub const TABULAR_DATA: &str = "tabular_data";
pub const JUPYTER_HISTORY: &str = "jupyter_history";
pub const EXECUTE_CELL: &str = "JUPYTER_EXECUTE_CELL";

const PREVIEW_ROWS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub description: String,
    pub csv: String,
}

impl Dataset {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    fn preview(&self) -> String {
        let lines: Vec<&str> = self.csv.lines().collect();
        let mut out = format!("{} ({}): {}\n", self.file_name(), lines.len().saturating_sub(1), self.description);
        for l in lines.iter().take(PREVIEW_ROWS) {
            out.push_str(l);
            out.push('\n');
        }
        if lines.len() > PREVIEW_ROWS {
            out.push_str("...\n");
        }
        out
    }
}

/// Dataset names an instance asks for, from `data.datasets`.
pub fn instance_datasets(instance: &TaskInstance) -> Vec<String> {
    instance
        .data
        .get("datasets")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(String::from).collect())
        .unwrap_or_default()
}

pub struct TabularEnv {
    spec: TaskEnvironmentSpec,
    catalog: Arc<Vec<Dataset>>,
    executor: Arc<dyn CellExecutor>,
}

impl TabularEnv {
    pub fn new(catalog: Arc<Vec<Dataset>>, executor: Arc<dyn CellExecutor>) -> Self {
        Self {
            spec: Self::spec_doc(),
            catalog,
            executor,
        }
    }

    pub fn spec_doc() -> TaskEnvironmentSpec {
        TaskEnvironmentSpec {
            task_id: TASK_ID.into(),
            task_description: "Analyze the user-provided tabular data to identify patterns and \
                               insights. Run Python code in the shared notebook and write the \
                               findings as hypotheses in the editor."
                .into(),
            action_specs: vec![
                ActionSpec::new(
                    EXECUTE_CELL,
                    &[("code", ParamKind::Text)],
                    "Run a Python cell in the shared notebook. Data files are in the working directory.",
                ),
                editor_spec("Replace the analysis report in the shared editor."),
                finish_spec(),
            ],
            observation_schema: vec![
                ComponentSpec::public(TABULAR_DATA),
                ComponentSpec::public(JUPYTER_HISTORY),
                ComponentSpec::public(EDITOR),
            ],
            step_limit: 30,
        }
    }
}

impl TaskLogic for TabularEnv {
    fn spec(&self) -> &TaskEnvironmentSpec {
        &self.spec
    }

    fn init(&self, c: &mut Components, instance: &TaskInstance, _: &Team) -> Result<(), EnvError> {
        let mut chosen = Vec::new();
        for name in instance_datasets(instance) {
            let d = self
                .catalog
                .iter()
                .find(|d| d.name == name)
                .ok_or_else(|| EnvError::FixtureMissing(format!("dataset {name}")))?;
            chosen.push(d.clone());
        }
        c.put_shared(TABULAR_DATA, &chosen)?;
        c.put_shared(JUPYTER_HISTORY, &Vec::<NotebookCell>::new())?;
        c.put_shared(EDITOR, &"")
    }

    fn apply(
        &self,
        c: &mut Components,
        _role: &Role,
        action: &ParsedAction,
    ) -> Result<Transition, EnvError> {
        if action.name == EDITOR_UPDATE {
            return update_editor(c, action);
        }
        if action.name != EXECUTE_CELL {
            return Err(EnvError::InvalidAction(action.render()));
        }
        let code = action.arg("code").unwrap_or_default();
        let data: Vec<Dataset> = c.shared_as(TABULAR_DATA)?;
        let files: Vec<(String, String)> =
            data.iter().map(|d| (d.file_name(), d.csv.clone())).collect();
        let mut cells: Vec<NotebookCell> = c.shared_as(JUPYTER_HISTORY)?;
        let outcome = self.executor.execute(&ExecRequest {
            code,
            history: &cells,
            files: &files,
        })?;
        cells.push(NotebookCell {
            code: code.to_string(),
            output: outcome.combined(),
            status: outcome.status,
        });
        c.put_shared(JUPYTER_HISTORY, &cells)?;
        Ok(Transition::shared())
    }

    fn render(&self, component: &str, value: &Value) -> String {
        match component {
            TABULAR_DATA => {
                let data: Vec<Dataset> = serde_json::from_value(value.clone()).unwrap_or_default();
                data.iter().map(Dataset::preview).collect::<Vec<_>>().join("\n")
            }
            JUPYTER_HISTORY => {
                let cells: Vec<NotebookCell> =
                    serde_json::from_value(value.clone()).unwrap_or_default();
                cells
                    .iter()
                    .map(|cell| {
                        format!(
                            "Code block:\n{}\nOutput ({}):\n{}",
                            cell.code,
                            serde_json::to_value(cell.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                            cell.output
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n\n")
            }
            _ => value.as_str().unwrap_or_default().to_string(),
        }
    }
}
