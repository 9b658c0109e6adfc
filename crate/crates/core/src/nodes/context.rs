use crate::bus::{ActionRecord, ChatMessage, EventKind, Payload};
use crate::env::{ActionSpec, ObservationView, Role, TaskEnvironmentSpec, TaskInstance, Team};

/// Static facts a node needs about its session.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBrief {
    pub role: Role,
    pub team: Vec<Role>,
    /// Environment instruction followed by the instance's query.
    pub task_description: String,
    pub task_actions: Vec<ActionSpec>,
}

impl NodeBrief {
    pub fn new(role: Role, team: &Team, spec: &TaskEnvironmentSpec, instance: &TaskInstance) -> Self {
        let task_description = if instance.query.is_empty() {
            spec.task_description.clone()
        } else {
            format!("{}\n\n{}", spec.task_description, instance.query)
        };
        Self {
            role,
            team: team.roles().cloned().collect(),
            task_description,
            task_actions: spec.action_specs.clone(),
        }
    }
}

/// Everything a policy sees when deciding. Hidden information is only ever
/// set through [`DecisionContext::for_simulated_human`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub role: Role,
    pub team: Vec<Role>,
    pub task_description: String,
    pub task_actions: Vec<ActionSpec>,
    pub event: EventKind,
    pub observation: ObservationView,
    pub chat_history: Vec<ChatMessage>,
    pub action_history: Vec<ActionRecord>,
    pub turn: Option<Role>,
    pub error: Option<String>,
    hidden_info: Vec<String>,
}

impl DecisionContext {
    pub fn for_agent(brief: &NodeBrief, payload: &Payload) -> Self {
        Self {
            role: brief.role.clone(),
            team: brief.team.clone(),
            task_description: brief.task_description.clone(),
            task_actions: brief.task_actions.clone(),
            event: payload.kind,
            observation: payload.observation.clone(),
            chat_history: payload.chat.clone(),
            action_history: payload.actions.clone(),
            turn: payload.turn.clone(),
            error: payload.error.clone(),
            hidden_info: Vec::new(),
        }
    }

    pub fn for_simulated_human(brief: &NodeBrief, payload: &Payload, hidden_info: &[String]) -> Self {
        Self {
            hidden_info: hidden_info.to_vec(),
            ..Self::for_agent(brief, payload)
        }
    }

    pub fn hidden_info(&self) -> &[String] {
        &self.hidden_info
    }

    /// `agent (you), user` style roster.
    pub fn team_members(&self) -> String {
        self.team
            .iter()
            .map(|r| if *r == self.role { format!("{r} (you)") } else { r.to_string() })
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn render_chat(&self) -> String {
        if self.chat_history.is_empty() {
            return "No chat history.".into();
        }
        self.chat_history
            .iter()
            .map(|m| {
                let who = if m.sender == self.role { "You".to_string() } else { m.sender.to_string() };
                format!("{who}: {}", m.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_actions(&self) -> String {
        if self.action_history.is_empty() {
            return "No actions taken yet.".into();
        }
        self.action_history
            .iter()
            .map(|a| {
                let who = if a.role == self.role { "You".to_string() } else { a.role.to_string() };
                format!("{who}: {}", a.action)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// The latest chat message if it came from someone else and asks a question.
    pub fn pending_question(&self) -> Option<&ChatMessage> {
        self.chat_history
            .last()
            .filter(|m| m.sender != self.role && m.text.trim_end().ends_with('?'))
    }
}

/// Action list shown to language models.
pub fn render_action_space(specs: &[ActionSpec]) -> String {
    specs
        .iter()
        .map(|s| {
            let params: Vec<String> = s.parameters.iter().map(|p| format!("'{}'", p.name)).collect();
            format!(
                "{} (Parameters: [{}])\n- Description: {}\n- Pattern: {}",
                s.name,
                params.join(", "),
                s.description,
                s.display_pattern()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
