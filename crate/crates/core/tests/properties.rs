use ctxpipe_core::dataset::percent;
use ctxpipe_core::estimators::{chapman, n_version_detection, wright_cost, CaptureRecapture};
use ctxpipe_core::roles::{
    classify_size, estimate_tokens, parse_manifest, priority_of, render_manifest, resolve_conflict, ContextElement,
    ContextRole, SourceKind,
};
use ctxpipe_core::{ContextPackage, Pipeline, PipelineId, Scale, SizeClass, Stage, ToolDescriptor, ToolType};
use proptest::prelude::*;

fn role() -> impl Strategy<Value = ContextRole> {
    prop::sample::select(ContextRole::ALL.to_vec())
}

fn source_kind() -> impl Strategy<Value = SourceKind> {
    prop::sample::select(vec![SourceKind::File, SourceKind::Verbal, SourceKind::Memory])
}

fn size_rank(c: SizeClass) -> u8 {
    match c {
        SizeClass::Minimal => 0,
        SizeClass::Moderate => 1,
        SizeClass::Comprehensive => 2,
    }
}

fn package_with(tokens: &[u64]) -> ContextPackage {
    let id: PipelineId = "P-PROP-TEST".parse().unwrap();
    tokens.iter().enumerate().fold(ContextPackage::new("PK", id, Stage::Builder), |p, (i, t)| {
        p.with_element(
            ContextElement::new(format!("E{i}"), ContextRole::Exemplar, SourceKind::File, "x", "x.md").with_tokens(*t),
        )
    })
}

proptest! {
    #[test]
    fn conflict_winner_ignores_argument_order(ra in role(), rb in role()) {
        let a = ContextElement::new("A", ra, SourceKind::File, "a", "a.md");
        let b = ContextElement::new("B", rb, SourceKind::Verbal, "b", "b");
        let ab = resolve_conflict(&a, &b).unwrap();
        let ba = resolve_conflict(&b, &a).unwrap();
        prop_assert_eq!(&ab.winner, &ba.winner);
        prop_assert_eq!(ab.outcome, ba.outcome);
        if let Some(w) = ab.winner {
            let (win, lose) = if w == "A" { (ra, rb) } else { (rb, ra) };
            prop_assert!(priority_of(win) < priority_of(lose));
        } else {
            prop_assert_eq!(priority_of(ra), priority_of(rb));
        }
    }

    #[test]
    fn size_class_is_monotone(tokens in prop::collection::vec(0u64..3000, 0..6), extra in 0u64..5000) {
        let base = package_with(&tokens);
        let mut more = tokens.clone();
        more.push(extra);
        prop_assert!(size_rank(classify_size(&base)) <= size_rank(classify_size(&package_with(&more))));
    }

    #[test]
    fn token_estimate_is_ceiling_of_quarter_bytes(bytes in prop::collection::vec(any::<u8>(), 0..2000)) {
        prop_assert_eq!(estimate_tokens(&bytes), bytes.len().div_ceil(4) as u64);
    }

    #[test]
    fn manifest_round_trip(
        elements in prop::collection::vec(
            (role(), source_kind(), "[a-zA-Z0-9 ._-]{1,20}", prop::option::of(0u64..5000), prop::option::of(any::<bool>())),
            1..8,
        )
    ) {
        let id: PipelineId = "P-PROP-TEST".parse().unwrap();
        let pkg = elements.iter().enumerate().fold(
            ContextPackage::new("PK-1", id, Stage::Design),
            |p, (i, (role, kind, label, tokens, reviewed))| {
                let mut e = ContextElement::new(format!("E{i}"), *role, *kind, label.clone(), format!("ref-{i}"));
                e.token_estimate = *tokens;
                e.reviewed = *reviewed;
                p.with_element(e)
            },
        );
        let text = render_manifest(&pkg);
        let back = parse_manifest(&text).unwrap();
        prop_assert_eq!(&back, &pkg);
        prop_assert_eq!(render_manifest(&back), text);
    }

    #[test]
    fn chapman_never_below_either_count(n1 in 0u64..500, n2 in 0u64..500, m_frac in 0.0f64..=1.0) {
        let m = (n1.min(n2) as f64 * m_frac).floor() as u64;
        let n = chapman(CaptureRecapture::new(n1, n2, m).unwrap());
        prop_assert!(n + 1e-9 >= n1.max(n2) as f64);
    }

    #[test]
    fn another_reviewer_never_lowers_detection(ps in prop::collection::vec(0.0f64..=1.0, 0..6), extra in 0.0f64..=1.0) {
        let before = n_version_detection(&ps).unwrap();
        let mut more = ps.clone();
        more.push(extra);
        let after = n_version_detection(&more).unwrap();
        prop_assert!(after + 1e-12 >= before);
        prop_assert!((0.0..=1.0).contains(&after));
    }

    #[test]
    fn learning_curve_decreases(c1 in 0.1f64..1000.0, n in 1u64..10_000, rate in 0.5f64..0.99) {
        let now = wright_cost(c1, n, rate).unwrap();
        let next = wright_cost(c1, n + 1, rate).unwrap();
        prop_assert!(next < now);
        prop_assert!((wright_cost(c1, 2 * n, rate).unwrap() / now - rate).abs() < 1e-9);
    }

    #[test]
    fn percent_matches_exact_half_up(total in 1u64..100_000, frac in 0.0f64..=1.0) {
        let count = (total as f64 * frac).floor() as u64;
        let p = percent(count, total);
        // compare in tenths with exact integer arithmetic
        let tenths = (p * 10.0).round() as u64;
        let lower = tenths * 2 * total;
        let value2 = count * 2000;
        prop_assert!(value2 + total >= lower && value2 + total < lower + 2 * total);
    }

    #[test]
    fn rule6_ignores_tool_name_case(name in "[A-Za-z]{2,10}", flips in prop::collection::vec(any::<bool>(), 10)) {
        let recased: String = name
            .chars()
            .zip(flips.iter().cycle())
            .map(|(c, f)| if *f { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
            .collect();
        let mut p = Pipeline::create("PROP", "RULE", Scale::Task).unwrap().value;
        let id = p.id.clone();
        for stage in Stage::ALL {
            let pkg = ContextPackage::new(format!("PK-{}", stage.name()), id.clone(), stage).with_element(
                ContextElement::new("DA", ContextRole::Authority, SourceKind::File, "design", "d.md")
                    .with_tag(ctxpipe_core::ElementTag::DesignAuthority),
            );
            p.attach_package(pkg).unwrap();
        }
        for stage in [Stage::Reviewer, Stage::Design, Stage::Builder] {
            let tool = if stage == Stage::Builder { name.clone() } else { "Other".to_string() };
            let r = p.begin_stage(stage, ToolDescriptor::new(tool, ToolType::GeneralistLlm), &format!("PK-{}", stage.name()), "main").unwrap().value;
            p.complete_stage(&r.record_id, "out.md", None).unwrap();
        }
        let e = p
            .begin_stage(Stage::Auditor, ToolDescriptor::new(recased, ToolType::SpecializedAgent), "PK-Auditor", "main")
            .unwrap_err();
        prop_assert_eq!(e.code(), "RULE6_VIOLATION");
    }

    #[test]
    fn stage_names_parse_back(stage in prop::sample::select(Stage::ALL.to_vec())) {
        prop_assert_eq!(stage.name().parse::<Stage>().unwrap(), stage);
        prop_assert_eq!(stage.name().to_uppercase().parse::<Stage>().unwrap(), stage);
        let json = serde_json::to_string(&stage).unwrap();
        prop_assert_eq!(serde_json::from_str::<Stage>(&json).unwrap(), stage);
    }
}
