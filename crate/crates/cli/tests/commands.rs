use std::process::Command;

fn collab(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_collab")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_replay_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("session.json");
    std::fs::write(
        &cfg,
        r#"{
  "task_id": "travel_planning",
  "instance_id": "q1",
  "team": [
    {"role": "user", "kind": "human", "policy": "scripted",
     "actions": ["SEND_TEAMMATE_MESSAGE(message=I only eat vegan food.)", "WAIT_TEAMMATE_CONTINUE()"], "repeat": true},
    {"role": "agent", "kind": "agent", "policy": "scripted",
     "actions": ["SEND_TEAMMATE_MESSAGE(message=Let's start with flights from Seattle.)",
                 "EDITOR_UPDATE(text=Seattle to San Francisco, vegan meals, entire home)", "FINISH()"]}
  ],
  "step_limit": 30,
  "idle_threshold_secs": 10.0,
  "wall_clock_limit_secs": 600,
  "seed": 3
}"#,
    )
    .unwrap();
    let traj = dir.path().join("t.jsonl");
    let cfg_s = cfg.to_str().unwrap();
    let traj_s = traj.to_str().unwrap();
    let summary = collab(&["run", "--config", cfg_s, "--seed", "4", "--out", traj_s]);
    assert!(summary.contains("end=Finished") && summary.contains("delivered=true"), "{summary}");
    assert!(collab(&["replay", traj_s]).starts_with("ok: "));
    let csv = collab(&["evaluate", traj_s]);
    assert!(csv.starts_with("group,sessions,delivery_rate"), "{csv}");
    assert!(csv.contains("\nscripted,1,1.0000,"), "{csv}");

    let diff = collab(&["run", "--config", cfg_s, "--ablation"]);
    assert!(diff.contains("same_final_state"), "{diff}");

    let bad = Command::new(env!("CARGO_BIN_EXE_collab")).args(["run", "--task", "nope"]).output().unwrap();
    assert!(!bad.status.success());
}
