use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::tasks::TaskRegistry;

/// Direct summation with natural logs, divided by ln N at the end.
fn oracle(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let n = counts.len() as f64;
    let mut h = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        if p == 0.0 {
            return 0.0;
        }
        h -= p * p.ln();
    }
    h / n.ln()
}

#[test]
fn entropy_worked_values() {
    assert_eq!(entropy_from_counts::<f64>(&[5, 5]), Some(1.0));
    assert_eq!(entropy_from_counts::<f64>(&[7, 0]), Some(0.0));
    assert_abs_diff_eq!(entropy_from_counts::<f64>(&[3, 1]).unwrap(), 0.8113, epsilon = 1e-4);
    assert_abs_diff_eq!(entropy_from_counts::<f32>(&[3, 1]).unwrap(), 0.8113, epsilon = 1e-4);
    assert_eq!(entropy_from_counts::<f64>(&[0, 0]), None);
    assert_eq!(entropy_from_counts::<f64>(&[4]), None);
    assert_abs_diff_eq!(entropy_from_counts::<f64>(&[2, 2, 2]).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn entropy_over_labels_checks_parties() {
    let label = |s: &str, yes| InitiativeLabel {
        message_index: 0,
        sender: Role::new(s),
        takes_initiative: yes,
        judge: "t".into(),
    };
    let parties = [Role::user(), Role::agent()];
    let labels = [label("user", true), label("agent", true), label("agent", true), label("agent", true), label("user", false)];
    assert_abs_diff_eq!(initiative_entropy::<f64>(&labels, &parties).unwrap().unwrap(), 0.8113, epsilon = 1e-4);
    assert_eq!(initiative_entropy::<f64>(&[label("user", false)], &parties), Ok(None));
    assert_eq!(
        initiative_entropy::<f64>(&[label("ghost", true)], &parties),
        Err(EvalError::UnknownParty(Role::new("ghost")))
    );
}

proptest! {
    #[test]
    fn entropy_matches_oracle_and_is_bounded(counts in prop::collection::vec(0usize..50, 2..=4)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let h = entropy_from_counts::<f64>(&counts).unwrap();
        prop_assert!((h - oracle(&counts)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&h));
        let uniform = counts.iter().all(|&c| c == counts[0]);
        prop_assert_eq!((h - 1.0).abs() < 1e-12, uniform);
    }

    #[test]
    fn entropy_is_permutation_symmetric(mut counts in prop::collection::vec(1usize..30, 2..=4), seed in any::<u64>()) {
        let before = entropy_from_counts::<f64>(&counts).unwrap();
        let k = (seed as usize) % counts.len();
        counts.rotate_left(k);
        counts.reverse();
        prop_assert!((entropy_from_counts::<f64>(&counts).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn rule_judge_is_a_pure_function(s in ".{0,60}") {
        prop_assert_eq!(RuleBasedJudge.judge(&s), RuleBasedJudge.judge(&s.clone()));
    }
}

#[test]
fn normalization() {
    assert_eq!(normalize_score(5.0, 1.0, 5.0), Ok(1.0));
    assert_eq!(normalize_score(1.0, 1.0, 5.0), Ok(0.0));
    assert_eq!(normalize_score(3.0, 1.0, 5.0), Ok(0.5));
    assert_eq!(normalize_score(4.0f32, 1.0, 5.0), Ok(0.75));
    assert!(matches!(normalize_score(6.0, 1.0, 5.0), Err(EvalError::OutOfRange { .. })));
    assert!(matches!(normalize_score(1.0, 5.0, 5.0), Err(EvalError::InvalidScale { .. })));
}

fn outcome(editor: serde_json::Value) -> Outcome {
    Outcome {
        task_id: "travel_planning".into(),
        instance_id: "q1".into(),
        parties: vec![Role::user(), Role::agent()],
        components: [("editor".to_string(), editor)].into(),
        chat: Vec::new(),
        outcome_rating: None,
        satisfaction: None,
    }
}

#[test]
fn delivery_trims_whitespace() {
    assert_eq!(is_delivered(&outcome(json!("Day 1: fly to San Francisco"))), Ok(true));
    assert_eq!(is_delivered(&outcome(json!(""))), Ok(false));
    assert_eq!(is_delivered(&outcome(json!("  \n\t "))), Ok(false));
    let mut missing = outcome(json!(""));
    missing.components.clear();
    assert_eq!(is_delivered(&missing), Err(EvalError::MissingComponent("editor".into())));
}

#[test]
fn checklist_scorer_counts_matched_patterns() {
    let inst = TaskInstance {
        checklist: vec!["vegan".into(), "thai".into(), r"\$\d+".into(), "entire home".into()],
        ..Default::default()
    };
    let o = outcome(json!("Dinner at a Vegan place, lunch THAI. Hotel room."));
    assert_eq!(score_task(&o, &inst, &ChecklistScorer), Some(0.5));
    assert_eq!(score_task(&outcome(json!(" ")), &inst, &ChecklistScorer), None);

    let fixture = TaskRegistry::builtin().instance("travel_planning", "q1").unwrap();
    let expected = {
        let text = "entire home/apt, vegan dinner, total $1750";
        let hits = fixture
            .checklist
            .iter()
            .filter(|p| regex::RegexBuilder::new(p).case_insensitive(true).build().unwrap().is_match(text))
            .count();
        hits as f64 / fixture.checklist.len() as f64
    };
    let o = outcome(json!("entire home/apt, vegan dinner, total $1750"));
    assert_eq!(score_task(&o, &fixture, &ChecklistScorer), Some(expected));
}

#[test]
fn rating_and_custom_scorers() {
    let mut o = outcome(json!("plan"));
    o.outcome_rating = Some(4);
    let inst = TaskInstance::default();
    assert_eq!(score_task(&o, &inst, &HumanRatingScorer), Some(0.75));
    let failing = FnScorer::new("grader", |_, _| Err(EvalError::Scorer("offline".into())));
    assert_eq!(score_task(&o, &inst, &failing), None);
    let wild = FnScorer::new("wild", |_, _| Ok(1.5));
    assert_eq!(score_task(&o, &inst, &wild), None);
}

#[test]
fn report_and_csv() {
    let mut o = outcome(json!("Day 1"));
    o.outcome_rating = Some(5);
    o.satisfaction = Some(5);
    o.chat = vec![
        ChatMessage { sender: Role::agent(), text: "What is your total budget for the trip?".into(), timestamp: 0 },
        ChatMessage { sender: Role::user(), text: "My total budget is $1800.".into(), timestamp: 1 },
        ChatMessage { sender: Role::agent(), text: "Right, okay.".into(), timestamp: 2 },
    ];
    let r = evaluate::<f64>(&o, &TaskInstance::default(), &RuleBasedJudge, &HumanRatingScorer).unwrap();
    assert_eq!((r.delivered, r.task_performance, r.initiative_entropy, r.satisfaction), (true, Some(1.0), Some(1.0), Some(5)));
    assert_eq!(r.labels.iter().map(|l| l.takes_initiative).collect::<Vec<_>>(), [true, true, false]);

    let undelivered = MetricReport::<f64> {
        delivered: false,
        task_performance: None,
        initiative_entropy: None,
        satisfaction: None,
        labels: vec![],
    };
    let bad = MetricReport { task_performance: Some(0.5), ..undelivered.clone() };
    assert!(bad.validate().is_err());

    let summary = BatchSummary::from_reports("collaborative", &[r, undelivered]);
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &[summary]).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "group,sessions,delivery_rate,task_performance,initiative_entropy,satisfaction\n\
         collaborative,2,0.5000,1.0000,1.0000,5.0000\n"
    );
}
