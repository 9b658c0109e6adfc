use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{editor_spec, finish_spec, update_editor, EDITOR_UPDATE};
use crate::env::{
    ActionSpec, ComponentSpec, Components, EnvError, ParamKind, ParsedAction, Role,
    TaskEnvironmentSpec, TaskInstance, TaskLogic, Team, Transition, EDITOR,
};

pub const TASK_ID: &str = "related_work";
pub const SEARCH_WINDOW: &str = "search_window";
pub const PAPER_LIBRARY: &str = "paper_library";
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paper {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub venue: String,
    pub year: u32,
}

pub trait SimilarityScorer: Send + Sync {
    fn score(&self, query: &str, paper: &Paper) -> f64;
}

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() > 1)
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of query tokens found in the title or abstract.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlap;

impl SimilarityScorer for LexicalOverlap {
    fn score(&self, query: &str, paper: &Paper) -> f64 {
        let q = tokens(query);
        if q.is_empty() {
            return 0.0;
        }
        let mut doc = tokens(&paper.title);
        doc.extend(tokens(&paper.abstract_text));
        q.intersection(&doc).count() as f64 / q.len() as f64
    }
}

/// 1 for a case-insensitive title match, else 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl SimilarityScorer for ExactMatch {
    fn score(&self, query: &str, paper: &Paper) -> f64 {
        if query.trim().eq_ignore_ascii_case(paper.title.trim()) {
            1.0
        } else {
            0.0
        }
    }
}

/// Ranks the whole corpus by score, ties broken by id, and keeps `top_k`.
pub fn search_papers<'a>(
    corpus: &'a [Paper],
    query: &str,
    top_k: usize,
    scorer: &dyn SimilarityScorer,
) -> Result<Vec<&'a Paper>, EnvError> {
    let invalid = |reason: &str| EnvError::InvalidParameter {
        action: "SEARCH_PAPER".into(),
        reason: reason.into(),
    };
    if query.trim().is_empty() {
        return Err(invalid("empty query"));
    }
    if top_k == 0 {
        return Err(invalid("top_k must be positive"));
    }
    let mut scored: Vec<(f64, &Paper)> = corpus.iter().map(|p| (scorer.score(query, p), p)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().take(top_k).map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct SearchPane {
    query: String,
    results: Vec<Paper>,
}

/// Skeleton draft citing every library entry exactly once, as `[id]`.
pub fn library_draft(library: &[Paper]) -> String {
    let mut out = String::from("Related Work\n\n");
    for p in library {
        out.push_str(&format!("{} ({} {}) [{}].\n", p.title, p.venue, p.year, p.id));
    }
    out
}

pub struct RelatedWorkEnv {
    spec: TaskEnvironmentSpec,
    corpus: Arc<Vec<Paper>>,
    scorer: Arc<dyn SimilarityScorer>,
    top_k: usize,
}

impl RelatedWorkEnv {
    pub fn new(corpus: Arc<Vec<Paper>>, scorer: Arc<dyn SimilarityScorer>) -> Self {
        Self {
            spec: Self::spec_doc(),
            corpus,
            scorer,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn spec_doc() -> TaskEnvironmentSpec {
        TaskEnvironmentSpec {
            task_id: TASK_ID.into(),
            task_description: "Write a related work section for the user's paper. Collect relevant \
                               papers in the library and cite them in the editor by id, e.g. [p01]."
                .into(),
            action_specs: vec![
                ActionSpec::new(
                    "SEARCH_PAPER",
                    &[("query", ParamKind::Text)],
                    "Search the paper index; results appear in your search window.",
                ),
                ActionSpec::new(
                    "LIBRARY_ADD_PAPER",
                    &[("paper_id", ParamKind::Identifier)],
                    "Add a paper to the shared library.",
                ),
                ActionSpec::new(
                    "LIBRARY_DROP_PAPER",
                    &[("paper_id", ParamKind::Identifier)],
                    "Remove a paper from the shared library.",
                ),
                ActionSpec::new(
                    "LIBRARY_TO_DRAFT",
                    &[],
                    "Replace the editor with a draft citing every library paper.",
                ),
                editor_spec("Replace the related work section in the shared editor."),
                finish_spec(),
            ],
            observation_schema: vec![
                ComponentSpec::private(SEARCH_WINDOW),
                ComponentSpec::public(PAPER_LIBRARY),
                ComponentSpec::public(EDITOR),
            ],
            step_limit: 30,
        }
    }

    fn paper(&self, id: &str) -> Option<&Paper> {
        self.corpus.iter().find(|p| p.id == id.trim())
    }
}

fn bad(action: &str, reason: String) -> EnvError {
    EnvError::InvalidParameter {
        action: action.into(),
        reason,
    }
}

impl TaskLogic for RelatedWorkEnv {
    fn spec(&self) -> &TaskEnvironmentSpec {
        &self.spec
    }

    fn init(
        &self,
        c: &mut Components,
        instance: &TaskInstance,
        team: &Team,
    ) -> Result<(), EnvError> {
        for role in team.roles() {
            c.put_private(SEARCH_WINDOW, role, &SearchPane::default())?;
        }
        let mut library = Vec::new();
        if let Some(ids) = instance.data.get("seed_library").and_then(Value::as_array) {
            for id in ids.iter().filter_map(Value::as_str) {
                let p = self
                    .paper(id)
                    .ok_or_else(|| EnvError::FixtureMissing(format!("paper {id}")))?;
                library.push(p.clone());
            }
        }
        c.put_shared(PAPER_LIBRARY, &library)?;
        c.put_shared(EDITOR, &"")
    }

    fn apply(
        &self,
        c: &mut Components,
        role: &Role,
        action: &ParsedAction,
    ) -> Result<Transition, EnvError> {
        let name = action.name.as_str();
        let arg = |k: &str| action.arg(k).unwrap_or_default().trim().to_string();
        match name {
            EDITOR_UPDATE => update_editor(c, action),
            "SEARCH_PAPER" => {
                let query = arg("query");
                let results = search_papers(&self.corpus, &query, self.top_k, self.scorer.as_ref())?
                    .into_iter()
                    .cloned()
                    .collect();
                c.put_private(SEARCH_WINDOW, role, &SearchPane { query, results })?;
                Ok(Transition::private())
            }
            "LIBRARY_ADD_PAPER" => {
                let id = arg("paper_id");
                let paper = self
                    .paper(&id)
                    .ok_or_else(|| bad(name, format!("unknown paper {id}")))?;
                let mut library: Vec<Paper> = c.shared_as(PAPER_LIBRARY)?;
                if library.iter().any(|p| p.id == id) {
                    return Err(bad(name, format!("{id} is already in the library")));
                }
                library.push(paper.clone());
                c.put_shared(PAPER_LIBRARY, &library)?;
                Ok(Transition::shared())
            }
            "LIBRARY_DROP_PAPER" => {
                let id = arg("paper_id");
                let mut library: Vec<Paper> = c.shared_as(PAPER_LIBRARY)?;
                let before = library.len();
                library.retain(|p| p.id != id);
                if library.len() == before {
                    return Err(bad(name, format!("{id} is not in the library")));
                }
                c.put_shared(PAPER_LIBRARY, &library)?;
                Ok(Transition::shared())
            }
            "LIBRARY_TO_DRAFT" => {
                let library: Vec<Paper> = c.shared_as(PAPER_LIBRARY)?;
                c.put_shared(EDITOR, &library_draft(&library))?;
                Ok(Transition::shared())
            }
            _ => Err(EnvError::InvalidAction(action.render())),
        }
    }

    fn render(&self, component: &str, value: &Value) -> String {
        let listing = |papers: &[Paper]| {
            papers
                .iter()
                .map(|p| format!("[{}] {} ({} {})\n    {}", p.id, p.title, p.venue, p.year, p.abstract_text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        match component {
            SEARCH_WINDOW => {
                let pane: SearchPane = serde_json::from_value(value.clone()).unwrap_or_default();
                if pane.query.is_empty() {
                    String::new()
                } else {
                    format!("Results for \"{}\":\n{}", pane.query, listing(&pane.results))
                }
            }
            PAPER_LIBRARY => {
                let lib: Vec<Paper> = serde_json::from_value(value.clone()).unwrap_or_default();
                listing(&lib)
            }
            _ => value.as_str().unwrap_or_default().to_string(),
        }
    }
}
