use collab_core::env::{
    ComponentSpec, Components, EnvError, Environment, ParsedAction, Role, StepBudget,
    TaskEnvironmentSpec, TaskInstance, TaskLogic, Team, Transition, Visibility, EDITOR,
};
use collab_core::tasks::{related_work, tabular, travel, TaskRegistry};
use proptest::prelude::*;

fn fresh(task: &str, id: &str, limit: u32) -> Environment {
    let reg = TaskRegistry::builtin();
    let inst = reg.instance(task, id).unwrap();
    reg.reset(&inst, Team::pair(), StepBudget::new(limit)).unwrap().0
}

fn act(env: &mut Environment, role: &Role, raw: &str) -> Result<collab_core::env::StepResult, EnvError> {
    let a = env.grammar().parse(raw)?;
    env.step(role, &a)
}

#[test]
fn thirtieth_agent_action_ends_the_episode() {
    let mut env = fresh(travel::TASK_ID, "q1", 30);
    let agent = Role::agent();
    for i in 1..=30 {
        let r = act(&mut env, &agent, "CITY_SEARCH(state=Texas)").unwrap();
        assert_eq!(r.done, i == 30, "step {i}");
        assert!(r.counted);
    }
    assert_eq!(env.state().agent_action_count, 30);
    assert_eq!(act(&mut env, &agent, "CITY_SEARCH(state=Texas)"), Err(EnvError::EpisodeFinished));
    assert_eq!(act(&mut env, &Role::user(), "FINISH()"), Err(EnvError::EpisodeFinished));
}

#[test]
fn human_actions_are_free_unless_configured() {
    let mut env = fresh(travel::TASK_ID, "q1", 2);
    let user = Role::user();
    for _ in 0..5 {
        assert!(!act(&mut env, &user, "EDITOR_UPDATE(text=x)").unwrap().counted);
    }
    let reg = TaskRegistry::builtin();
    let inst = reg.instance(travel::TASK_ID, "q1").unwrap();
    let budget = StepBudget {
        count_human_actions: true,
        ..StepBudget::new(2)
    };
    let mut env = reg.reset(&inst, Team::pair(), budget).unwrap().0;
    act(&mut env, &user, "EDITOR_UPDATE(text=x)").unwrap();
    assert!(act(&mut env, &user, "EDITOR_UPDATE(text=y)").unwrap().done);
}

#[test]
fn finish_ends_and_unknown_role_is_rejected() {
    let mut env = fresh(related_work::TASK_ID, "rw1", 30);
    assert!(matches!(
        act(&mut env, &Role::new("mallory"), "FINISH()"),
        Err(EnvError::UnknownRole(_))
    ));
    assert!(act(&mut env, &Role::user(), "FINISH()").unwrap().done);
    assert!(env.observation_view(&Role::new("mallory")).is_err());
}

#[test]
fn failed_actions_leave_state_untouched() {
    let mut env = fresh(related_work::TASK_ID, "rw1", 30);
    let before = env.state().clone();
    assert!(act(&mut env, &Role::agent(), "LIBRARY_DROP_PAPER(paper_id=p01)").is_err());
    assert!(act(&mut env, &Role::agent(), "SEARCH_PAPER(query=   )").is_err());
    assert_eq!(env.state(), &before);
}

#[test]
fn views_are_deterministic_and_differ_only_in_private_parts() {
    let mut env = fresh(travel::TASK_ID, "q3", 30);
    act(&mut env, &Role::agent(), "RESTAURANT_SEARCH(city=New York)").unwrap();
    act(&mut env, &Role::user(), "EDITOR_UPDATE(text=plan)").unwrap();
    let a1 = env.observation_view(&Role::agent()).unwrap();
    assert_eq!(a1, env.observation_view(&Role::agent()).unwrap());
    let u = env.observation_view(&Role::user()).unwrap();
    for c in &env.spec().observation_schema {
        if c.visibility == Visibility::Public {
            assert_eq!(a1.component(&c.name), u.component(&c.name));
        }
    }
    assert_ne!(a1.component(travel::SEARCH_WINDOW), u.component(travel::SEARCH_WINDOW));
}

/// Claims its action is private but writes the shared board.
struct Liar(TaskEnvironmentSpec);

impl TaskLogic for Liar {
    fn spec(&self) -> &TaskEnvironmentSpec {
        &self.0
    }
    fn init(&self, _: &mut Components, _: &TaskInstance, _: &Team) -> Result<(), EnvError> {
        Ok(())
    }
    fn apply(&self, c: &mut Components, _: &Role, _: &ParsedAction) -> Result<Transition, EnvError> {
        c.put_shared("board", &"leaked")?;
        Ok(Transition::private())
    }
}

#[test]
fn private_claim_touching_shared_state_is_refused() {
    let spec = TaskEnvironmentSpec {
        task_id: "liar".into(),
        task_description: String::new(),
        action_specs: vec![collab_core::env::ActionSpec::new("POKE", &[], "")],
        observation_schema: vec![ComponentSpec::public("board"), ComponentSpec::private("pad")],
        step_limit: 3,
    };
    let inst = TaskInstance {
        task_id: "liar".into(),
        ..Default::default()
    };
    let (mut env, _) =
        Environment::reset(Box::new(Liar(spec)), &inst, Team::pair(), StepBudget::new(3)).unwrap();
    let before = env.state().clone();
    assert_eq!(act(&mut env, &Role::agent(), "POKE()"), Err(EnvError::PrivacyViolation("POKE".into())));
    assert_eq!(env.state(), &before);
}

fn travel_action() -> impl Strategy<Value = String> {
    let city = prop::sample::select(vec!["Seattle", "Austin", "Miami", "Nowhere", "new york"]);
    prop_oneof![
        city.clone().prop_map(|c| format!("ATTRACTION_SEARCH(city={c})")),
        city.clone().prop_map(|c| format!("ACCOMMODATION_SEARCH(city={c})")),
        (city.clone(), city.clone()).prop_map(|(a, b)| format!("DISTANCE_MATRIX(origin={a}, destination={b}, mode=driving)")),
        "[a-zA-Z ,()]{0,20}".prop_map(|t| format!("EDITOR_UPDATE(text={t})")),
        Just("SEND_TEAMMATE_MESSAGE(message=hi)".to_string()),
    ]
}

fn check_views(env: &Environment) {
    let team: Vec<Role> = env.team().roles().cloned().collect();
    for role in &team {
        let view = env.observation_view(role).unwrap();
        let names: Vec<&String> = view.components.keys().collect();
        let schema: Vec<&String> = env.spec().observation_schema.iter().map(|c| &c.name).collect();
        assert_eq!(names.len(), schema.len());
        for c in &env.spec().observation_schema {
            if c.visibility == Visibility::Private {
                let own = env.state().components.private(&c.name, role).unwrap();
                let rendered = view.component(&c.name).unwrap();
                for other in team.iter().filter(|r| *r != role) {
                    let theirs = env.state().components.private(&c.name, other).unwrap();
                    if theirs != own {
                        assert_ne!(
                            rendered,
                            env.observation_view(other).unwrap().component(&c.name).unwrap()
                        );
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn visibility_soundness_and_private_confinement(
        script in prop::collection::vec((any::<bool>(), travel_action()), 1..25)
    ) {
        let mut env = fresh(travel::TASK_ID, "q1", 30);
        let mut count = 0;
        for (by_agent, raw) in script {
            let role = if by_agent { Role::agent() } else { Role::user() };
            let parsed = env.grammar().parse(&raw).unwrap();
            if parsed.name == "SEND_TEAMMATE_MESSAGE" {
                continue;
            }
            let before = env.state().components.clone();
            let r = env.step(&role, &parsed).unwrap();
            let changed = env.state().components.diff(&before);
            if r.private {
                for (name, roles) in &changed {
                    prop_assert_eq!(env.spec().component(name).unwrap().visibility, Visibility::Private);
                    prop_assert!(roles.iter().all(|x| *x == role));
                }
            }
            prop_assert!(env.state().agent_action_count >= count);
            count = env.state().agent_action_count;
            check_views(&env);
            if r.done {
                break;
            }
        }
    }
}

#[test]
fn tabular_reset_exposes_shared_notebook() {
    let env = fresh(tabular::TASK_ID, "t3", 30);
    let v = env.observation_view(&Role::agent()).unwrap();
    assert!(v.component(tabular::TABULAR_DATA).unwrap().contains("crop_yield.csv"));
    assert_eq!(v.component(EDITOR), Some(""));
    assert_eq!(
        v.component(tabular::TABULAR_DATA),
        env.observation_view(&Role::user()).unwrap().component(tabular::TABULAR_DATA)
    );
}
