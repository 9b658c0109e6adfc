use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{editor_spec, finish_spec, render_rows, update_editor, EDITOR_UPDATE};
use crate::env::{
    ActionSpec, ComponentSpec, Components, EnvError, ParamKind, ParsedAction, Role,
    TaskEnvironmentSpec, TaskInstance, TaskLogic, Team, Transition, EDITOR,
};

pub const TASK_ID: &str = "travel_planning";
pub const SEARCH_WINDOW: &str = "search_window";
pub const DISTANCE_MATRIX: &str = "distance_matrix";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attraction {
    pub name: String,
    pub city: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restaurant {
    pub name: String,
    pub city: String,
    pub cuisines: Vec<String>,
    pub average_cost: u32,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accommodation {
    pub name: String,
    pub city: String,
    pub price: u32,
    pub room_type: String,
    pub max_occupancy: u32,
    pub house_rules: Vec<String>,
    pub minimum_nights: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub flight_number: String,
    pub origin: String,
    pub destination: String,
    pub date: String,
    pub departure_time: String,
    pub arrival_time: String,
    pub price: u32,
}

/// One undirected route for one travel mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub origin: String,
    pub destination: String,
    pub mode: String,
    pub distance_km: f64,
    pub duration_min: u32,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TravelDb {
    pub cities: Vec<City>,
    pub attractions: Vec<Attraction>,
    pub restaurants: Vec<Restaurant>,
    pub accommodations: Vec<Accommodation>,
    pub flights: Vec<Flight>,
    pub distances: Vec<Route>,
}

impl TravelDb {
    /// Checks referential integrity and that each (pair, mode) appears once.
    pub fn validate(&self) -> Result<(), EnvError> {
        let known: BTreeSet<&str> = self.cities.iter().map(|c| c.name.as_str()).collect();
        let check = |city: &str, what: &str| {
            if known.contains(city) {
                Ok(())
            } else {
                Err(EnvError::InvalidSpec(format!("{what} references unknown city {city}")))
            }
        };
        for f in &self.flights {
            check(&f.origin, &f.flight_number)?;
            check(&f.destination, &f.flight_number)?;
        }
        for a in &self.attractions {
            check(&a.city, &a.name)?;
        }
        for r in &self.restaurants {
            check(&r.city, &r.name)?;
        }
        for a in &self.accommodations {
            check(&a.city, &a.name)?;
        }
        let mut seen = BTreeSet::new();
        for r in &self.distances {
            check(&r.origin, "route")?;
            check(&r.destination, "route")?;
            let key = (unordered(&r.origin, &r.destination), r.mode.clone());
            if !seen.insert(key) {
                return Err(EnvError::InvalidSpec(format!(
                    "route {} - {} ({}) listed twice",
                    r.origin, r.destination, r.mode
                )));
            }
        }
        Ok(())
    }

    /// Route lookup in either direction; the returned row is oriented as asked.
    pub fn route(&self, origin: &str, destination: &str, mode: &str) -> Option<Route> {
        self.distances.iter().find_map(|r| {
            if !same(&r.mode, mode) {
                return None;
            }
            if same(&r.origin, origin) && same(&r.destination, destination) {
                Some(r.clone())
            } else if same(&r.origin, destination) && same(&r.destination, origin) {
                Some(Route {
                    origin: r.destination.clone(),
                    destination: r.origin.clone(),
                    ..r.clone()
                })
            } else {
                None
            }
        })
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn same(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    City,
    Attraction,
    Restaurant,
    Flight,
    Accommodation,
    Distance,
}

impl SearchKind {
    pub const ALL: [SearchKind; 6] = [
        SearchKind::City,
        SearchKind::Attraction,
        SearchKind::Restaurant,
        SearchKind::Flight,
        SearchKind::Accommodation,
        SearchKind::Distance,
    ];

    pub fn action_name(self) -> &'static str {
        match self {
            SearchKind::City => "CITY_SEARCH",
            SearchKind::Attraction => "ATTRACTION_SEARCH",
            SearchKind::Restaurant => "RESTAURANT_SEARCH",
            SearchKind::Flight => "FLIGHT_SEARCH",
            SearchKind::Accommodation => "ACCOMMODATION_SEARCH",
            SearchKind::Distance => "DISTANCE_MATRIX",
        }
    }

    pub fn from_action(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.action_name() == name)
    }

    pub fn filters(self) -> &'static [&'static str] {
        match self {
            SearchKind::City => &["state"],
            SearchKind::Attraction | SearchKind::Restaurant | SearchKind::Accommodation => {
                &["city"]
            }
            SearchKind::Flight => &["origin", "destination", "date"],
            SearchKind::Distance => &["origin", "destination", "mode"],
        }
    }

    fn spec(self) -> ActionSpec {
        let (params, desc): (&[(&str, ParamKind)], &str) = match self {
            SearchKind::City => (&[("state", ParamKind::Text)], "List the cities in a state."),
            SearchKind::Attraction => (&[("city", ParamKind::Text)], "List attractions in a city."),
            SearchKind::Restaurant => (&[("city", ParamKind::Text)], "List restaurants in a city."),
            SearchKind::Flight => (
                &[
                    ("origin", ParamKind::Text),
                    ("destination", ParamKind::Text),
                    ("date", ParamKind::Date),
                ],
                "Find flights between two cities on a date (YYYY-MM-DD).",
            ),
            SearchKind::Accommodation => (
                &[("city", ParamKind::Text)],
                "List accommodations in a city.",
            ),
            SearchKind::Distance => (
                &[
                    ("origin", ParamKind::Text),
                    ("destination", ParamKind::Text),
                    ("mode", ParamKind::Text),
                ],
                "Distance, duration and cost between two cities; mode is driving, taxi or self-driving.",
            ),
        };
        ActionSpec::new(self.action_name(), params, desc)
    }
}

/// Looks up fixture rows matching every filter (case-insensitive). Filters
/// that match nothing yield an empty result.
pub fn travel_search(
    db: &TravelDb,
    kind: SearchKind,
    filters: &BTreeMap<String, String>,
) -> Result<Vec<Value>, EnvError> {
    for key in filters.keys() {
        if !kind.filters().contains(&key.as_str()) {
            return Err(EnvError::InvalidParameter {
                action: kind.action_name().into(),
                reason: format!("unknown filter {key}"),
            });
        }
    }
    let want = |k: &str, v: &str| filters.get(k).is_none_or(|f| same(f, v));
    let rows = match kind {
        SearchKind::City => to_rows(db.cities.iter().filter(|c| want("state", &c.state))),
        SearchKind::Attraction => to_rows(db.attractions.iter().filter(|a| want("city", &a.city))),
        SearchKind::Restaurant => to_rows(db.restaurants.iter().filter(|r| want("city", &r.city))),
        SearchKind::Accommodation => {
            to_rows(db.accommodations.iter().filter(|a| want("city", &a.city)))
        }
        SearchKind::Flight => to_rows(db.flights.iter().filter(|f| {
            want("origin", &f.origin) && want("destination", &f.destination) && want("date", &f.date)
        })),
        SearchKind::Distance => {
            let get = |k: &str| filters.get(k).map(String::as_str).unwrap_or("");
            to_rows(db.route(get("origin"), get("destination"), get("mode")).iter())
        }
    };
    Ok(rows)
}

fn to_rows<'a, T: Serialize + 'a>(it: impl Iterator<Item = &'a T>) -> Vec<Value> {
    it.map(|r| serde_json::to_value(r).expect("fixture rows serialize"))
        .collect()
}

/// What a private search pane currently shows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchPane {
    pub query: String,
    pub rows: Vec<Value>,
}

pub struct TravelEnv {
    spec: TaskEnvironmentSpec,
    db: std::sync::Arc<TravelDb>,
}

impl TravelEnv {
    pub fn new(db: std::sync::Arc<TravelDb>) -> Self {
        Self { spec: Self::spec_doc(), db }
    }

    pub fn spec_doc() -> TaskEnvironmentSpec {
        let mut actions: Vec<ActionSpec> = SearchKind::ALL.iter().map(|k| k.spec()).collect();
        actions.push(editor_spec("Replace the travel plan in the shared editor."));
        actions.push(finish_spec());
        TaskEnvironmentSpec {
            task_id: TASK_ID.into(),
            task_description: "Plan a trip that satisfies the traveler's request. Write the final \
                               day-by-day itinerary, with transport, meals and lodging, in the editor."
                .into(),
            action_specs: actions,
            observation_schema: vec![
                ComponentSpec::private(SEARCH_WINDOW),
                ComponentSpec::private(DISTANCE_MATRIX),
                ComponentSpec::public(EDITOR),
            ],
            step_limit: 30,
        }
    }
}

impl TaskLogic for TravelEnv {
    fn spec(&self) -> &TaskEnvironmentSpec {
        &self.spec
    }

    fn init(&self, c: &mut Components, _: &TaskInstance, team: &Team) -> Result<(), EnvError> {
        for role in team.roles() {
            c.put_private(SEARCH_WINDOW, role, &SearchPane::default())?;
            c.put_private(DISTANCE_MATRIX, role, &SearchPane::default())?;
        }
        c.put_shared(EDITOR, &"")
    }

    fn apply(
        &self,
        c: &mut Components,
        role: &Role,
        action: &ParsedAction,
    ) -> Result<Transition, EnvError> {
        if action.name == EDITOR_UPDATE {
            return update_editor(c, action);
        }
        let kind = SearchKind::from_action(&action.name)
            .ok_or_else(|| EnvError::InvalidAction(action.render()))?;
        let filters = action.args.iter().cloned().collect();
        let rows = travel_search(&self.db, kind, &filters)?;
        let target = if kind == SearchKind::Distance {
            DISTANCE_MATRIX
        } else {
            SEARCH_WINDOW
        };
        c.put_private(
            target,
            role,
            &SearchPane {
                query: action.render(),
                rows,
            },
        )?;
        Ok(Transition::private())
    }

    fn render(&self, component: &str, value: &Value) -> String {
        match component {
            SEARCH_WINDOW | DISTANCE_MATRIX => {
                let pane: SearchPane = serde_json::from_value(value.clone()).unwrap_or_default();
                if pane.query.is_empty() {
                    return String::new();
                }
                format!("{}\n{}", pane.query, render_rows(&pane.rows))
            }
            _ => value.as_str().unwrap_or_default().to_string(),
        }
    }
}
