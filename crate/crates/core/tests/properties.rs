use cameo_core::data::{demo_sites, generate_synthetic_history, wind_to_power, PowerCurve, SiteHistory};
use cameo_core::executor::{cache_key, ResolvedTask};
use cameo_core::optimizer::audit::audit_model_a;
use cameo_core::optimizer::fixtures::random_tiny_case;
use cameo_core::optimizer::{build_model_a, solve_design, solve_lp, StochasticInput, DEFAULT_TOL};
use cameo_core::provenance::summarize;
use cameo_core::scenario::{build_scenario_tree, KMeansConfig};
use cameo_core::workflow::{
    apply_channel_op, build_dag, parse_workflow, plan_tasks, resolve_sources, serialize_workflow, ChannelOp, Item,
};
use proptest::prelude::*;
use serde_json::{json, Value};
use std::collections::BTreeMap;

fn sweep_doc(a: &[i64], b: &[String], seed: u64) -> String {
    json!({
        "schema_version": 1,
        "name": "sweep",
        "params": {"seed": seed},
        "channels": [
            {"name": "xs", "source": {"type": "literal", "values": a}},
            {"name": "ys", "source": {"type": "literal", "values": b}},
            {"name": "pairs", "source": {"type": "output", "process": "first", "port": "done"},
             "ops": [{"op": "cross", "with": "ys"}]}
        ],
        "processes": [
            {"name": "first", "kind": {"builtin": "sleep@1"}, "inputs": {"ms": "xs"}, "outputs": {"done": "Scalar"}},
            {"name": "second", "kind": {"exec": "cat {pair} > done.out.json"}, "inputs": {"pair": "pairs"},
             "outputs": {"done": "Scalar"}, "tag": "{params.seed}"}
        ]
    })
    .to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_size_is_product(a in prop::collection::vec(any::<i32>(), 0..12), b in prop::collection::vec(any::<i32>(), 0..12)) {
        let left: Vec<Item> = a.iter().map(|x| Item::Value(json!(x))).collect();
        let right: Vec<Item> = b.iter().map(|x| Item::Value(json!(x))).collect();
        let op = ChannelOp::Cross { with: "r".into() };
        let out = apply_channel_op(&left, &op, Some(&right)).unwrap();
        prop_assert_eq!(out.len(), a.len() * b.len());
        // crossing a tuple channel again extends the tuples
        let again = apply_channel_op(&out, &op, Some(&right)).unwrap();
        prop_assert_eq!(again.len(), a.len() * b.len() * b.len());
        for it in &again {
            match it {
                Item::Tuple(xs) => prop_assert_eq!(xs.len(), 3),
                other => prop_assert!(false, "not a tuple: {:?}", other),
            }
        }
    }

    #[test]
    fn workflow_text_round_trips(
        a in prop::collection::vec(0i64..1000, 1..6),
        b in prop::collection::vec("[a-z]{1,6}", 1..4),
        seed in any::<u64>(),
    ) {
        let spec = parse_workflow(&sweep_doc(&a, &b, seed)).unwrap();
        let text = serialize_workflow(&spec);
        prop_assert_eq!(parse_workflow(&text).unwrap(), spec);
    }

    #[test]
    fn planning_is_deterministic(
        a in prop::collection::vec(0i64..1000, 1..6),
        b in prop::collection::vec("[a-z]{1,6}", 1..4),
        seed in any::<u64>(),
    ) {
        let dir = std::env::temp_dir();
        let plan = || {
            let spec = parse_workflow(&sweep_doc(&a, &b, seed)).unwrap();
            let graph = build_dag(&spec).unwrap();
            plan_tasks(&graph, &resolve_sources(&spec, &dir).unwrap()).unwrap()
        };
        let (p1, p2) = (plan(), plan());
        prop_assert_eq!(p1.count("second"), Some(a.len() * b.len()));
        prop_assert_eq!(&p1, &p2);
    }

    #[test]
    fn power_curve_is_monotone_below_cut_out(v1 in 0.0f64..30.0, v2 in 0.0f64..30.0) {
        let c = PowerCurve::default();
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let (p_lo, p_hi) = (wind_to_power(lo, &c), wind_to_power(hi, &c));
        prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
        if hi < c.cut_out_ms {
            prop_assert!(p_lo <= p_hi);
        } else {
            prop_assert_eq!(p_hi, 0.0);
        }
    }

    #[test]
    fn cache_key_ignores_identity_and_tracks_payload(
        id in "[a-z]{1,8}", attempt in 1u32..5, x in any::<i64>(), k in "[a-z]{1,4}", v in any::<i32>(),
    ) {
        let params: BTreeMap<String, Value> = [(k.clone(), json!(v))].into_iter().collect();
        let task = |task_id: &str, attempt: u32, x: i64| ResolvedTask {
            task_id: task_id.into(),
            process: "p".into(),
            version: "sleep@1".into(),
            attempt,
            tag: task_id.into(),
            inputs: [("ms".to_string(), json!({"b": x, "a": [x, 1]}))].into_iter().collect(),
            params: params.clone(),
        };
        let base = cache_key(&task("t", 1, x)).unwrap();
        prop_assert_eq!(&base, &cache_key(&task(&id, attempt, x)).unwrap());
        prop_assert_ne!(&base, &cache_key(&task("t", 1, x.wrapping_add(1))).unwrap());
        let mut other = task("t", 1, x);
        other.params.insert(k, json!(v as i64 + 1));
        prop_assert_ne!(&base, &cache_key(&other).unwrap());
    }

    #[test]
    fn summary_is_ordered_and_sums(xs in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let s = summarize(&xs).unwrap();
        prop_assert_eq!(s.n, xs.len());
        prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
        let sum: f64 = xs.iter().sum();
        prop_assert!((s.mean * xs.len() as f64 - sum).abs() <= 1e-6 * (1.0 + sum.abs()));
        prop_assert!(s.std >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tree_probabilities_are_conserved(seed in any::<u64>(), b1 in 1usize..5, b2 in 1usize..4, site in 0usize..5) {
        let s = demo_sites()[site].clone();
        let record = generate_synthetic_history(&s, seed, 24);
        let tree = build_scenario_tree(&SiteHistory { site: s, record }, &PowerCurve::default(), (b1, b2), seed, &KMeansConfig::default()).unwrap();
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for n in &tree.nodes {
            if let Some(p) = n.parent {
                *sums.entry(p).or_default() += n.probability;
            }
        }
        for sum in sums.values() {
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
        let total: f64 = tree.leaves().map(|l| tree.absolute_probability(l.node_id)).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert_eq!(tree.leaves().count(), b1 * b2);
    }

    #[test]
    fn higher_cost_never_raises_net_value(seed in any::<u64>(), extra in 1.0f64..500.0) {
        let case = random_tiny_case(seed);
        let mut dearer = case.clone();
        dearer.battery.cost_usd_per_kw += extra;
        let (a, b) = (solve_design(&case).unwrap(), solve_design(&dearer).unwrap());
        prop_assert!(b.net_usd <= a.net_usd + 1e-9 * (1.0 + a.net_usd.abs()));
        prop_assert!(a.p_star_mw >= -1e-9 && a.p_star_mw <= case.battery.rating_mw + 1e-9);
    }

    #[test]
    fn optimal_schedules_conserve_energy(seed in any::<u64>()) {
        let case = random_tiny_case(seed);
        let StochasticInput::Set(set) = &case.input else { unreachable!() };
        let model = build_model_a(set, &case.battery, &case.economics);
        let sol = solve_lp(&model.lp, DEFAULT_TOL).unwrap();
        let v = audit_model_a(&model, &sol.x, &case.battery, &case.site, 1e-6);
        prop_assert!(v.is_empty(), "{:?}", v);
    }
}
