use std::path::PathBuf;

use stepcheck_core::agent::{judge_completion, run_steps, ExecutionLimits, LexicalPredictor, Termination};
use stepcheck_core::eval::summarize_demo;
use stepcheck_core::simenv::load_app_scripts;

fn apps_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/apps")
}

#[test]
fn every_fixture_task_completes_in_every_wording() {
    let apps = load_app_scripts(&apps_dir()).unwrap();
    let domains: std::collections::BTreeSet<_> =
        apps.iter().filter(|a| !a.tasks.is_empty()).map(|a| &a.domain).collect();
    assert!(domains.len() >= 3);
    for app in &apps {
        for task in &app.tasks {
            for style in 0..3 {
                let steps = summarize_demo(task, style);
                let t = run_steps(
                    "p",
                    "q",
                    &steps,
                    &task.aux_context,
                    app,
                    &mut LexicalPredictor::default(),
                    &ExecutionLimits::default(),
                )
                .unwrap();
                assert_eq!(
                    t.termination,
                    Termination::Completed,
                    "{}/{} style {style}: {steps:?}",
                    app.app_name,
                    task.task_id
                );
                assert_eq!(judge_completion(&t, steps.len()), 1.0, "{}/{} style {style}", app.app_name, task.task_id);
            }
        }
    }
}
