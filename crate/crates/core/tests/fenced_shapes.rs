use narrative_core::backend::{
    parse_fenced_yaml, render_fenced_yaml, FencedFields, FencedYamlError,
};
use proptest::prelude::*;

#[test]
fn planning_shapes() {
    let stage = "Here is my plan.\n```YAML\nStage: Problem Externalization\nResponse: \"It sounds like the worry follows you home.\"\n```";
    let f = parse_fenced_yaml(stage, &["Stage", "Response"]).unwrap();
    assert_eq!(f.get("Stage"), Some("Problem Externalization"));
    assert_eq!(
        f.get("Response"),
        Some("It sounds like the worry follows you home.")
    );

    let level = "```yaml\nReflection_level: Mapping the Problem's Effects\nResponse: |\n  What does the worry take from you?\n  When is it loudest?\n```";
    let f = parse_fenced_yaml(level, &["Reflection_level", "Response"]).unwrap();
    assert_eq!(
        f.get("Reflection_level"),
        Some("Mapping the Problem's Effects")
    );
    assert_eq!(
        f.get("Response"),
        Some("What does the worry take from you?\nWhen is it loudest?")
    );
}

#[test]
fn annotation_shape_with_long_analysis() {
    let raw = "```YAML\nannotation: <Protest I>I told him no this time.</Protest I>\nresource: client-generated\nconfidence: 0.85\nlatent_narrative_dynamics_analysis: The client pushes back on the pattern.\n  This is new compared with earlier turns,\n  where she stayed silent.\n\n  A small but clear shift.\n```\n";
    let f = parse_fenced_yaml(
        raw,
        &[
            "annotation",
            "resource",
            "confidence",
            "latent_narrative_dynamics_analysis",
        ],
    )
    .unwrap();
    assert_eq!(
        f.get("annotation"),
        Some("<Protest I>I told him no this time.</Protest I>")
    );
    assert_eq!(f.get("resource"), Some("client-generated"));
    let analysis = f.get("latent_narrative_dynamics_analysis").unwrap();
    assert!(analysis.starts_with("The client pushes back on the pattern.\n"));
    assert!(analysis.ends_with("A small but clear shift."));
    assert_eq!(analysis.lines().count(), 5);

    let none = "```YAML\nannotation: None\nresource: None\nconfidence: 1.0\nlatent_narrative_dynamics_analysis: No change.\n```";
    assert_eq!(
        parse_fenced_yaml(none, &["annotation"])
            .unwrap()
            .get("annotation"),
        Some("None")
    );
}

#[test]
fn supervisor_and_client_shapes() {
    let score = "```YAML\nReassuring: 3.5\nexplanation: >\n  Warm tone throughout,\n  though some replies felt rushed.\n```";
    let f = parse_fenced_yaml(score, &["Reassuring", "explanation"]).unwrap();
    assert_eq!(f.get("reassuring"), Some("3.5"));
    assert_eq!(
        f.get("explanation"),
        Some("Warm tone throughout, though some replies felt rushed.")
    );

    let client = "```YAML\nuser: \"I guess. I just want to sleep through one night.\"\n```";
    assert_eq!(
        parse_fenced_yaml(client, &["user"]).unwrap().get("user"),
        Some("I guess. I just want to sleep through one night.")
    );
}

#[test]
fn failure_shapes() {
    assert_eq!(
        parse_fenced_yaml("Stage: trust building", &["Stage"]),
        Err(FencedYamlError::NoFencedBlock)
    );
    assert_eq!(
        parse_fenced_yaml(
            "```YAML\nStage: trust building\n```",
            &["Stage", "Response"]
        ),
        Err(FencedYamlError::MissingKey("Response".into()))
    );
    assert!(matches!(
        parse_fenced_yaml("```YAML\nStage: trust building", &["Stage"]),
        Err(FencedYamlError::MalformedBlock(_))
    ));
}

fn arb_fields() -> impl Strategy<Value = FencedFields> {
    let value = prop_oneof![
        "[a-zA-Z0-9 ,.!?'<>/-]{0,40}",
        "[a-z ]{1,20}\n[a-z :]{0,20}\n\n[a-z]{1,10}",
        "\"[a-z ]{0,10}\"",
        "[|>] ?[a-z]{0,5}",
    ]
    .prop_filter("value line opens with a fence marker", |v: &String| {
        v.lines().all(|l| {
            let l = l.trim_start();
            !l.starts_with("```") && !l.starts_with("'''")
        })
    });
    prop::collection::btree_map("[A-Za-z][A-Za-z0-9_]{0,12}", value, 1..6).prop_map(|m| {
        let mut f = FencedFields::new();
        for (k, v) in m {
            let _ = f.insert(k, v);
        }
        f
    })
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(fields in arb_fields()) {
        let rendered = render_fenced_yaml(&fields);
        let parsed = parse_fenced_yaml(&rendered, &[]).unwrap();
        prop_assert_eq!(&parsed, &fields);
        prop_assert_eq!(render_fenced_yaml(&parsed), rendered);
    }
}
