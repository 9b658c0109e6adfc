use std::sync::OnceLock;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::env::{ActionSpec, Grammar, ParamKind};

pub const DEFAULT_CAPACITY: usize = 64;

/// In-session key-value notes. Iteration and rendering follow insertion
/// order; adding a new id at capacity evicts the oldest note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scratchpad {
    notes: IndexMap<String, String>,
    capacity: usize,
}

impl Default for Scratchpad {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScratchpadOp {
    AddNote { note_id: String, note: String },
    EditNote { note_id: String, note: String },
    DeleteNote { note_id: String },
    DoNothing,
}

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| {
        let note = [("note_id", ParamKind::Identifier), ("note", ParamKind::Text)];
        Grammar::new(vec![
            ActionSpec::new("ADD_NOTE", &note, "Store a new note under note_id."),
            ActionSpec::new("EDIT_NOTE", &note, "Replace the note stored under note_id."),
            ActionSpec::new("DELETE_NOTE", &[("note_id", ParamKind::Identifier)], "Remove a note."),
            ActionSpec::new("DO_NOTHING", &[], "Leave the scratchpad unchanged."),
        ])
        .expect("static grammar")
    })
}

impl ScratchpadOp {
    pub fn grammar() -> &'static Grammar {
        grammar()
    }

    /// Parses one operation string; anything outside the grammar is `None`.
    pub fn parse(raw: &str) -> Option<Self> {
        let p = grammar().parse(raw.trim()).ok()?;
        let arg = |k: &str| p.arg(k).unwrap_or_default().trim().to_string();
        let op = match p.name.as_str() {
            "ADD_NOTE" => Self::AddNote { note_id: arg("note_id"), note: arg("note") },
            "EDIT_NOTE" => Self::EditNote { note_id: arg("note_id"), note: arg("note") },
            "DELETE_NOTE" => Self::DeleteNote { note_id: arg("note_id") },
            _ => Self::DoNothing,
        };
        match &op {
            Self::AddNote { note_id, .. } | Self::EditNote { note_id, .. } | Self::DeleteNote { note_id }
                if note_id.is_empty() =>
            {
                None
            }
            _ => Some(op),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Self::AddNote { note_id, note } => format!("ADD_NOTE(note_id={note_id}, note={note})"),
            Self::EditNote { note_id, note } => format!("EDIT_NOTE(note_id={note_id}, note={note})"),
            Self::DeleteNote { note_id } => format!("DELETE_NOTE(note_id={note_id})"),
            Self::DoNothing => "DO_NOTHING()".into(),
        }
    }
}

impl Scratchpad {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "scratchpad capacity must be positive");
        Self {
            notes: IndexMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, note_id: &str) -> Option<&str> {
        self.notes.get(note_id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.notes.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Applies `op` and returns the note evicted to make room, if any.
    /// Adding an existing id overwrites it in place; editing an absent id
    /// stores it as new.
    pub fn apply(&mut self, op: &ScratchpadOp) -> Option<(String, String)> {
        match op {
            ScratchpadOp::AddNote { note_id, note } | ScratchpadOp::EditNote { note_id, note } => {
                if let Some(slot) = self.notes.get_mut(note_id) {
                    *slot = note.clone();
                    return None;
                }
                let evicted = if self.notes.len() >= self.capacity {
                    self.notes.shift_remove_index(0)
                } else {
                    None
                };
                self.notes.insert(note_id.clone(), note.clone());
                evicted
            }
            ScratchpadOp::DeleteNote { note_id } => {
                if self.notes.shift_remove(note_id).is_none() {
                    log::warn!("scratchpad has no note {note_id:?} to delete");
                }
                None
            }
            ScratchpadOp::DoNothing => None,
        }
    }

    pub fn render(&self) -> String {
        if self.notes.is_empty() {
            return "No notes yet.".into();
        }
        self.iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn add(id: &str, note: &str) -> ScratchpadOp {
        ScratchpadOp::AddNote { note_id: id.into(), note: note.into() }
    }

    #[test]
    fn parses_every_op() {
        assert_eq!(ScratchpadOp::parse("ADD_NOTE(note_id=k1, note=budget is 1800)"), Some(add("k1", "budget is 1800")));
        assert_eq!(
            ScratchpadOp::parse("DELETE_NOTE(note_id=k1)"),
            Some(ScratchpadOp::DeleteNote { note_id: "k1".into() })
        );
        assert_eq!(ScratchpadOp::parse(" DO_NOTHING() "), Some(ScratchpadOp::DoNothing));
        assert_eq!(ScratchpadOp::parse("ADD_NOTE(k1)"), None);
        assert_eq!(ScratchpadOp::parse("DELETE_NOTE(note_id=)"), None);
    }

    #[test]
    fn add_collision_overwrites_in_place() {
        let mut s = Scratchpad::new(4);
        s.apply(&add("a", "1"));
        s.apply(&add("b", "2"));
        s.apply(&add("a", "3"));
        assert_eq!(s.render(), "a: 3\nb: 2");
    }

    #[test]
    fn delete_absent_and_edit_absent() {
        let mut s = Scratchpad::new(4);
        let before = s.clone();
        s.apply(&ScratchpadOp::DeleteNote { note_id: "x".into() });
        assert_eq!(s, before);
        s.apply(&ScratchpadOp::EditNote { note_id: "x".into(), note: "y".into() });
        assert_eq!(s.get("x"), Some("y"));
    }

    #[test]
    fn eviction_happens_exactly_at_capacity() {
        let mut s = Scratchpad::new(2);
        assert_eq!(s.apply(&add("a", "1")), None);
        assert_eq!(s.apply(&add("b", "2")), None);
        assert_eq!(s.apply(&add("b", "2b")), None);
        assert_eq!(s.apply(&add("c", "3")), Some(("a".into(), "1".into())));
        assert_eq!(s.iter().map(|(k, _)| k).collect::<Vec<_>>(), ["b", "c"]);
    }

    fn op() -> impl Strategy<Value = ScratchpadOp> {
        let id = "[a-e]";
        prop_oneof![
            (id, "[a-z ]{0,8}").prop_map(|(i, n)| ScratchpadOp::AddNote { note_id: i, note: n }),
            (id, "[a-z ]{0,8}").prop_map(|(i, n)| ScratchpadOp::EditNote { note_id: i, note: n }),
            id.prop_map(|i| ScratchpadOp::DeleteNote { note_id: i }),
            Just(ScratchpadOp::DoNothing),
        ]
    }

    proptest! {
        #[test]
        fn stays_bounded_and_evicts_only_when_full(cap in 1usize..4, ops in prop::collection::vec(op(), 0..40)) {
            let mut s = Scratchpad::new(cap);
            for op in &ops {
                let before = s.clone();
                let evicted = s.apply(op);
                prop_assert!(s.len() <= cap);
                if let Some((k, _)) = evicted {
                    prop_assert_eq!(before.len(), cap);
                    prop_assert_eq!(before.iter().next().map(|(k, _)| k.to_string()), Some(k));
                }
                if *op == ScratchpadOp::DoNothing {
                    prop_assert_eq!(&s, &before);
                }
            }
        }

        #[test]
        fn render_round_trips_through_parse(op in op()) {
            prop_assume!(!matches!(&op, ScratchpadOp::AddNote { note, .. } | ScratchpadOp::EditNote { note, .. } if note.trim() != note));
            prop_assert_eq!(ScratchpadOp::parse(&op.render()), Some(op));
        }
    }
}
