//! Scriptable device simulator.
//!
//! Screens are region trees; an [`AppScript`] wires them together with
//! label-matched transitions. The simulator knows nothing about instructions.

mod device;
mod script;

pub use device::{
    actionable_ids, apply_action, candidate_actions, distill_controls, ActionKind, ActionRequest, ActionResult,
    ActionSet, ActionStatus, CandidateAction, Capability, Direction, DistilledControl, UiState, BACK_STACK_LIMIT,
    FALLBACK_OVERLAP,
};
pub use script::{
    load_app_script, load_app_scripts, AppScript, Bounds, DemoStep, Region, RegionIter, Screen, SimError, Task,
    Transition, TransitionAction,
};


#[cfg(test)]
mod tests {
    use super::testkit::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_three_screen_script() {
        let s = settings();
        assert_eq!(s.screens.len(), 3);
        assert_eq!(s.reachable_screens().len(), 3);
        assert_eq!(s.screen("sound").unwrap().root.children[1].bounds, Some(Bounds::SCREEN));
    }

    #[test]
    fn dangling_and_duplicate_screens_are_rejected() {
        let ghost = SETTINGS.replace(r#""to": "ringtone"}"#, r#""to": "Ghost"}"#);
        let err = AppScript::from_json(&ghost, "x").unwrap_err().to_string();
        assert!(err.contains("Ghost"), "{err}");
        let dup = SETTINGS.replace(r#""screen_id": "ringtone""#, r#""screen_id": "sound""#);
        let err = AppScript::from_json(&dup, "x").unwrap_err().to_string();
        assert!(err.contains("duplicate screen_id"), "{err}");
        let err = AppScript::from_json("{\"app_name\": 3}", "bad.json").unwrap_err().to_string();
        assert!(err.contains("bad.json:1:"), "{err}");
    }

    #[test]
    fn out_of_bounds_child_is_rejected() {
        let bad = SETTINGS.replace(
            r#""text": "Chime"}"#,
            r#""text": "Chime", "bounds": {"left": 0, "top": 0, "right": 5000, "bottom": 10}}"#,
        );
        assert!(AppScript::from_json(&bad, "x").is_err());
    }

    #[test]
    fn consolidates_child_texts_into_row_label() {
        let s = settings();
        let labels: Vec<String> =
            distill_controls(&s.screen("sound").unwrap().root).into_iter().map(|c| c.label).collect();
        assert_eq!(labels, ["Volume", "Ringtone Default", "Vibrate for calls", "Device name"]);
    }

    #[test]
    fn invisible_button_is_excluded() {
        let s = settings();
        let controls = distill_controls(&s.screen("home").unwrap().root);
        assert!(controls.iter().all(|c| c.label != "Developer options"));
        assert_eq!(controls.len(), 2);
    }

    /// Independent formulation: enumerate root-to-node paths, then label each
    /// actionable node from the texts of nodes whose path to it crosses no
    /// other actionable node.
    fn distill_oracle(root: &Region) -> Vec<(String, String)> {
        fn paths<'a>(r: &'a Region, prefix: Vec<&'a Region>, out: &mut Vec<Vec<&'a Region>>) {
            let mut p = prefix;
            p.push(r);
            out.push(p.clone());
            for c in &r.children {
                paths(c, p.clone(), out);
            }
        }
        let mut all = Vec::new();
        paths(root, Vec::new(), &mut all);
        let mut out = Vec::new();
        for p in &all {
            let node = *p.last().unwrap();
            if !node.actionable || p.iter().any(|r| !r.visible) {
                continue;
            }
            let label = match node.display_text() {
                Some(t) => t.to_string(),
                None => all
                    .iter()
                    .filter(|q| q.len() > p.len() && std::ptr::eq(q[p.len() - 1], node))
                    .filter(|q| q[p.len()..].iter().all(|r| r.visible && !r.actionable))
                    .filter_map(|q| q.last().unwrap().display_text().map(str::to_string))
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            if !label.is_empty() {
                out.push((node.region_id.clone(), label));
            }
        }
        out
    }

    #[test]
    fn nested_actionable_regions_yield_separate_controls() {
        let mut parent = region("card");
        parent.actionable = true;
        parent.children = vec![
            text("t1", "Wi-Fi"),
            Region { children: vec![text("t2", "Connected")], ..region("wrap") },
            button("btn", "Forget"),
        ];
        parent.children[2].children.push(text("inner", "network"));
        let root = Region { children: vec![parent], ..region("root") };
        let got: Vec<(String, String)> =
            distill_controls(&root).into_iter().map(|c| (c.source_region_id, c.label)).collect();
        assert_eq!(got, distill_oracle(&root));
        assert_eq!(got[0], ("card".to_string(), "Wi-Fi Connected".to_string()));
        assert_eq!(got[1], ("btn".to_string(), "Forget".to_string()));
    }

    #[test]
    fn candidate_rules() {
        let root = Region { children: vec![button("a", "One"), button("b", "Two")], ..region("r") };
        let state = UiState { screen_id: "s".into(), root, fields: Default::default(), back_stack: vec![] };
        let set = candidate_actions(&distill_controls(&state.root), &state);
        assert_eq!(set.len(), 4);
        assert_eq!(set.count(ActionKind::Click), 2);
        assert_eq!(set.count(ActionKind::Back) + set.count(ActionKind::Done), 2);

        let s = settings();
        let sound = UiState {
            screen_id: "sound".into(),
            root: s.screen("sound").unwrap().root.clone(),
            ..UiState::initial(&s)
        };
        let set = candidate_actions(&distill_controls(&sound.root), &sound);
        assert_eq!(set.count(ActionKind::Input), 1);
        assert_eq!(set.count(ActionKind::Swipe), 0);
        let home = UiState::initial(&s);
        let set = candidate_actions(&distill_controls(&home.root), &home);
        assert!(set.contains(&ActionRequest::swipe(Direction::Up)));
        assert!(set.contains(&ActionRequest::swipe(Direction::Down)));
    }

    #[test]
    fn click_fires_transition() {
        let s = settings();
        let home = UiState::initial(&s);
        let controls = distill_controls(&home.root);
        let r = apply_action(&home, &ActionRequest::click(&controls[0]), &s).unwrap();
        assert_eq!(r.status, ActionStatus::Applied);
        assert_eq!(r.new_state.screen_id, "sound");
        assert_eq!(r.new_state.back_stack, ["home"]);
        let back = apply_action(&r.new_state, &ActionRequest::back(), &s).unwrap();
        assert_eq!(back.new_state.screen_id, "home");
        assert_eq!(apply_action(&home, &ActionRequest::back(), &s).unwrap().status, ActionStatus::Rejected);
    }

    #[test]
    fn stale_index_falls_back_to_unique_label_match() {
        let s = settings();
        let home = UiState::initial(&s);
        let sound = apply_action(&home, &ActionRequest::click(&distill_controls(&home.root)[0]), &s).unwrap().new_state;
        let req = ActionRequest {
            kind: ActionKind::Click,
            control_index: Some(7),
            text_value: None,
            direction: None,
            control_label: Some("Ringtone".into()),
        };
        let r = apply_action(&sound, &req, &s).unwrap();
        assert_eq!(r.status, ActionStatus::AppliedViaFallback);
        assert_eq!(r.new_state.screen_id, "ringtone");
        assert_eq!(r.resolved_label.as_deref(), Some("Ringtone Default"));
    }

    #[test]
    fn unmatched_label_is_rejected_without_side_effects() {
        let s = settings();
        let home = UiState::initial(&s);
        let req =
            ActionRequest { control_index: Some(9), control_label: Some("Bluetooth".into()), ..ActionRequest::done() };
        let req = ActionRequest { kind: ActionKind::Click, ..req };
        let r = apply_action(&home, &req, &s).unwrap();
        assert_eq!(r.status, ActionStatus::Rejected);
        assert_eq!(r.new_state.fingerprint(), home.fingerprint());
        // a present control without a transition does nothing either
        let display = distill_controls(&home.root)[1].clone();
        assert_eq!(apply_action(&home, &ActionRequest::click(&display), &s).unwrap().status, ActionStatus::Rejected);
    }

    #[test]
    fn toggle_only_control_and_input() {
        let s = settings();
        let home = UiState::initial(&s);
        let sound = apply_action(&home, &ActionRequest::click(&distill_controls(&home.root)[0]), &s).unwrap().new_state;
        let controls = distill_controls(&sound.root);
        let r = apply_action(&sound, &ActionRequest::click(&controls[2]), &s).unwrap();
        assert_eq!(r.status, ActionStatus::AppliedViaFallback);
        assert_eq!(r.new_state.fields["vib"], "on");
        let r = apply_action(&sound, &ActionRequest::input(&controls[3], "Pixel"), &s).unwrap();
        assert_eq!(r.status, ActionStatus::Applied);
        assert_eq!(r.new_state.fields["name"], "Pixel");
        let r = apply_action(&sound, &ActionRequest::input(&controls[0], "x"), &s).unwrap();
        assert_eq!(r.status, ActionStatus::Rejected);
    }

    #[test]
    fn malformed_requests_are_errors() {
        let s = settings();
        let home = UiState::initial(&s);
        let bad = ActionRequest { kind: ActionKind::Swipe, ..ActionRequest::done() };
        assert!(matches!(apply_action(&home, &bad, &s), Err(SimError::MalformedRequest(_))));
        let bad = ActionRequest { kind: ActionKind::Input, control_index: Some(0), ..ActionRequest::done() };
        assert!(apply_action(&home, &bad, &s).is_err());
    }

    #[test]
    fn back_stack_is_bounded() {
        let s = AppScript::from_json(
            r#"{"app_name": "Loop", "domain": "Tools", "initial_screen": "a",
                "screens": [{"screen_id": "a", "root": {"region_id": "n", "actionable": true, "text": "Next"}},
                            {"screen_id": "b", "root": {"region_id": "n", "actionable": true, "text": "Next"}}],
                "transitions": [{"from": "a", "control_label_pattern": "next", "action": "click", "to": "b"},
                                {"from": "b", "control_label_pattern": "next", "action": "click", "to": "a"}]}"#,
            "loop",
        )
        .unwrap();
        let mut state = UiState::initial(&s);
        for _ in 0..100 {
            let c = distill_controls(&state.root)[0].clone();
            state = apply_action(&state, &ActionRequest::click(&c), &s).unwrap().new_state;
        }
        assert_eq!(state.back_stack.len(), BACK_STACK_LIMIT);
    }

    fn arb_region(depth: u32) -> BoxedStrategy<Region> {
        let leaf = (any::<bool>(), any::<bool>(), proptest::option::of("[a-z]{1,6}( [a-z]{1,6})?"), any::<u8>())
            .prop_map(|(visible, actionable, text, id)| Region {
                visible: visible || id % 3 == 0,
                actionable,
                text,
                ..region(&format!("n{id}"))
            });
        leaf.prop_recursive(depth, 24, 4, |inner| {
            (any::<bool>(), any::<bool>(), proptest::option::of("[a-z]{1,6}"), proptest::collection::vec(inner, 0..4))
                .prop_map(|(visible, actionable, text, children)| Region {
                    visible: visible || children.len() % 2 == 0,
                    actionable,
                    text,
                    children,
                    ..region("inner")
                })
        })
        .boxed()
    }

    fn subtree_tokens(r: &Region) -> std::collections::BTreeSet<String> {
        r.iter().filter_map(|n| n.display_text()).flat_map(crate::text::raw_tokens).collect()
    }

    proptest! {
        #[test]
        fn distilled_controls_come_from_visible_actionable_subtrees(mut root in arb_region(4)) {
            fn renumber(r: &mut Region, next: &mut usize) {
                r.region_id = format!("n{next}");
                *next += 1;
                r.children.iter_mut().for_each(|c| renumber(c, next));
            }
            renumber(&mut root, &mut 0);
            let controls = distill_controls(&root);
            let ids = actionable_ids(&root);
            let oracle = distill_oracle(&root);
            prop_assert_eq!(controls.len(), oracle.len());
            for (i, c) in controls.iter().enumerate() {
                prop_assert_eq!(c.control_index, i);
                prop_assert!(!c.label.is_empty());
                prop_assert!(ids.contains(&c.source_region_id));
                let src = root.iter().find(|r| r.region_id == c.source_region_id && r.actionable && r.visible).unwrap();
                let allowed = subtree_tokens(src);
                for t in crate::text::raw_tokens(&c.label) {
                    prop_assert!(allowed.contains(&t));
                }
            }
        }

        #[test]
        fn apply_is_deterministic_and_rejections_are_pure(idx in 0usize..6, label in "[A-Za-z ]{0,12}", screen in 0usize..3) {
            let s = settings();
            let mut state = UiState::initial(&s);
            state.screen_id = s.screens[screen].screen_id.clone();
            state.root = s.screens[screen].root.clone();
            let req = ActionRequest { kind: ActionKind::Click, control_index: Some(idx), text_value: None, direction: None, control_label: Some(label) };
            let a = apply_action(&state, &req, &s).unwrap();
            let b = apply_action(&state, &req, &s).unwrap();
            prop_assert_eq!(&a, &b);
            if a.status == ActionStatus::Rejected {
                prop_assert_eq!(a.new_state.fingerprint(), state.fingerprint());
            }
        }
    }
}
