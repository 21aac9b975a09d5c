use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;

use stepcheck_core::agent::{judge_completion, run_steps, ExecutionLimits, LexicalPredictor};
use stepcheck_core::eval::{
    baseline_order, f4_order, ndcg_at_k, oracle_order, precision_at_k, reciprocal_rank, rule_order,
};
use stepcheck_core::extract::{
    clean_html, ground_instructions, index_snippets, ExtractionResult, GroundingConfig, GroundingStatus, HashedEmbedder,
};
use stepcheck_core::features::FeatureVector;
use stepcheck_core::rerank::{
    init_params, neural_sort, order_by_scores, score_items, ModelConfig, ModelKind, RankGroup, RankItem,
};
use stepcheck_core::simenv::{apply_action, candidate_actions, distill_controls, load_app_scripts, AppScript, UiState};
use stepcheck_core::{load_corpus, save_corpus, CorpusBundle, PageRecord, QueryRecord};

fn apps() -> Vec<AppScript> {
    load_app_scripts(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/apps")).unwrap()
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["Tap", "Sound", "ringtone", "open", "the", "Display", "menu", "Save", "Next", "x"]),
        1..6,
    )
    .prop_map(|w| w.join(" "))
}

fn item(rank: u32, label: u8, verified: bool, f4: f64, with_instructions: bool) -> RankItem {
    let mut f = [0.0; 18];
    f[3] = f4;
    f[0] = f64::from(rank % 7) / 7.0;
    RankItem {
        page_id: format!("p{rank}"),
        features: FeatureVector(f),
        label: Some(label),
        original_rank: rank,
        verified,
        has_instructions: with_instructions,
        grounding_status: if with_instructions { GroundingStatus::Full } else { GroundingStatus::None },
        applied_actions: usize::from(verified),
    }
}

fn arb_group() -> impl Strategy<Value = RankGroup> {
    prop::collection::vec((0u8..2, any::<bool>(), 0.0f64..=1.0, any::<bool>()), 1..12).prop_map(|rows| {
        let items = rows
            .into_iter()
            .enumerate()
            .map(|(i, (y, v, f4, w))| item(i as u32 + 1, y, v && w && f4 > 0.0, f4, w))
            .collect();
        RankGroup::new("q", items)
    })
}

fn labels_in(group: &RankGroup, order: &[usize]) -> Vec<u8> {
    order.iter().map(|&i| group.items[i].label.unwrap()).collect()
}

fn is_subsequence(part: &[usize], order: &[usize]) -> bool {
    let mut it = order.iter();
    part.iter().all(|p| it.any(|o| o == p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trip_is_lossless(
        pages in prop::collection::vec((words(), "[ -~]{0,40}", prop::option::of(0u8..2)), 1..8),
        meta in prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,12}", 0..3),
    ) {
        let bundle = CorpusBundle {
            queries: vec![QueryRecord { query_id: "q1".into(), text: "how to x".into(), app_domain: "System".into(), app_name: "Settings".into() }],
            pages: pages
                .into_iter()
                .enumerate()
                .map(|(i, (title, html, label))| PageRecord {
                    page_id: format!("q1-{i}"),
                    query_id: "q1".into(),
                    url: format!("https://e.example/{i}"),
                    original_rank: i as u32 + 1,
                    title,
                    raw_html: html,
                    label,
                })
                .collect(),
            metadata: meta,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&bundle, &path).unwrap();
        prop_assert_eq!(load_corpus(&path).unwrap(), bundle);
    }

    #[test]
    fn grounding_binds_only_generated_steps_to_indexed_snippets(
        items in prop::collection::vec(words(), 1..7),
        prose in prop::collection::vec(words(), 0..4),
        steps in prop::collection::vec(words(), 0..7),
        reuse in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
    ) {
        let list: String = items.iter().map(|s| format!("<li>{s}</li>")).collect();
        let paras: String = prose.iter().map(|s| format!("<p>{s}</p>")).collect();
        let html = format!("<html><body>{paras}<ol>{list}</ol><script>var a = 1;</script></body></html>");
        let doc = clean_html(&html, "p").unwrap();
        let snippets = index_snippets(&doc);
        let mut generated = steps;
        generated.extend(reuse.iter().map(|i| i.get(&items).clone()));
        let result = ExtractionResult { steps: generated.clone(), generator_id: "prop".into() };
        let cfg = GroundingConfig::default();
        let g = ground_instructions(&result, &snippets, &HashedEmbedder::default(), &cfg);
        prop_assert!(g.steps.windows(2).all(|w| w[0].snippet_index < w[1].snippet_index));
        for s in &g.steps {
            prop_assert!(s.match_scores.rouge > 0.7 || s.match_scores.embedding_distance < 0.25);
            prop_assert!(generated.contains(&s.instruction_text));
            prop_assert!(snippets.iter().any(|n| n.index == s.snippet_index && n.xpath == s.xpath));
        }
        let expected = match g.steps.len() {
            0 => GroundingStatus::None,
            n if n == generated.len() => GroundingStatus::Full,
            _ => GroundingStatus::Partial,
        };
        prop_assert_eq!(g.grounding_status, expected);
        let again = clean_html(&doc.text, "p").unwrap();
        prop_assert_eq!(index_snippets(&again), snippets);
    }

    #[test]
    fn executions_respect_limits_candidates_and_replay(
        app_idx in 0usize..5,
        steps in prop::collection::vec(words(), 0..8),
        max_steps in 1usize..30,
    ) {
        let apps = apps();
        let app = &apps[app_idx % apps.len()];
        let aux: BTreeMap<String, String> = app.tasks.iter().flat_map(|t| t.aux_context.clone()).collect();
        let limits = ExecutionLimits { max_steps, ..ExecutionLimits::default() };
        let run = || run_steps("p", "q", &steps, &aux, app, &mut LexicalPredictor::default(), &limits).unwrap();
        let t = run();
        prop_assert!(t.step_count <= max_steps && t.step_count == t.steps.len());
        prop_assert_eq!(serde_json::to_string(&t).unwrap(), serde_json::to_string(&run()).unwrap());

        let mut state = UiState::initial(app);
        for s in &t.steps {
            let controls = distill_controls(&state.root);
            prop_assert_eq!(&controls, &s.snapshot.distilled_controls);
            prop_assert!(candidate_actions(&controls, &state).contains(&s.action));
            state = apply_action(&state, &s.action, app).unwrap().new_state;
        }
        let f4 = judge_completion(&t, steps.len());
        let attributed = t.steps.iter().any(|s| s.status.is_applied() && s.confidence > 0.0 && s.attributed_step < steps.len());
        prop_assert_eq!(f4 == 0.0, !attributed);
        if t.applied_actions() == 0 {
            prop_assert_eq!(f4, 0.0);
        }
    }

    #[test]
    fn near_zero_temperature_sorts_exactly(scores in prop::collection::btree_set(-1000i32..1000, 1..7)) {
        let mut s: Vec<f64> = scores.into_iter().map(|v| f64::from(v) / 100.0).collect();
        s.reverse();
        let half = s.len() / 2;
        s.rotate_left(half);
        let mut expected: Vec<usize> = (0..s.len()).collect();
        expected.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        prop_assert_eq!(neural_sort(&s, 1e-4).unwrap().row_argmax(), expected);
    }

    #[test]
    fn gated_order_keeps_blocks_and_unverified_order(group in arb_group(), seed in any::<u64>()) {
        let scores: Vec<f64> = (0..group.items.len()).map(|i| ((seed >> (i % 60)) & 0xff) as f64).collect();
        let order = order_by_scores(&group, &scores);
        let nv = group.verified_indices().len();
        prop_assert!(order[..nv].iter().all(|&i| group.items[i].verified));
        for &i in &order[..nv] {
            prop_assert!(group.items[i].applied_actions >= 1 && group.items[i].features.completion() > 0.0);
        }
        let rest: Vec<usize> = (0..group.items.len()).filter(|&i| !group.items[i].verified).collect();
        prop_assert_eq!(&order[nv..], &rest[..]);
    }

    #[test]
    fn transformer_scores_follow_their_items(group in arb_group(), shift in 1usize..11) {
        let cfg = ModelConfig { embed_width: 8, model_width: 8, heads: 2, ff_width: 16, ..ModelConfig::default() };
        let params = init_params(&cfg, ModelKind::TmlpNeuralndcg, 3);
        let scores = score_items(ModelKind::TmlpNeuralndcg, &cfg, &params, &group);
        let mut rotated = group.clone();
        let k = shift % rotated.items.len();
        rotated.items.rotate_left(k);
        let moved = score_items(ModelKind::TmlpNeuralndcg, &cfg, &params, &rotated);
        for (i, s) in moved.iter().enumerate() {
            let j = (i + k) % group.items.len();
            prop_assert!((s - scores[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_dominates_and_reference_orders_are_stable(group in arb_group()) {
        let oracle = labels_in(&group, &oracle_order(&group).unwrap());
        for order in [baseline_order(&group), f4_order(&group), rule_order(&group)] {
            let ranked = labels_in(&group, &order);
            prop_assert!(ndcg_at_k(&oracle, 5) >= ndcg_at_k(&ranked, 5));
            prop_assert!(precision_at_k(&oracle, 1) >= precision_at_k(&ranked, 1));
        }
        let n = group.items.len();
        let with: Vec<usize> = (0..n).filter(|&i| group.items[i].has_instructions).collect();
        let without: Vec<usize> = (0..n).filter(|&i| !group.items[i].has_instructions).collect();
        let base = baseline_order(&group);
        prop_assert!(is_subsequence(&with, &base) && is_subsequence(&without, &base));
        let rule = rule_order(&group);
        let full: Vec<usize> = (0..n).filter(|&i| group.items[i].features.completion() == 1.0).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| group.items[i].features.completion() != 1.0).collect();
        prop_assert!(is_subsequence(&full, &rule) && is_subsequence(&rest, &rule));
    }

    #[test]
    fn mrr_equals_p_at_1_when_hits_are_first(first in any::<bool>(), tail in prop::collection::vec(0u8..1, 0..8)) {
        let mut ranked = vec![u8::from(first)];
        ranked.extend(tail);
        prop_assert_eq!(reciprocal_rank(&ranked), precision_at_k(&ranked, 1));
    }
}
