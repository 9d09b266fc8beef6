mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{fixture, narrative, read};
use narrative_core::ima::{write_annotations, IMSpan, IMType, Resource, TurnAnnotation};
use narrative_core::supervisor::{write_scores, Dimension, DimensionScore};
use narrative_core::{Stage, TherapeuticState, Transcript, Variant};

fn span(text: &str, needle: &str, im_type: IMType) -> IMSpan {
    let start = text.find(needle).unwrap();
    IMSpan::new(im_type, start, start + needle.len(), needle)
}

fn annotated(turn: u32, text: &str, needle: &str, im_type: IMType) -> TurnAnnotation {
    TurnAnnotation::new(
        turn,
        "tagged",
        vec![span(text, needle, im_type)],
        Resource::ClientGenerated,
        0.9,
        "",
    )
    .unwrap()
}

fn write_session(
    dir: &Path,
    id: &str,
    variant: Variant,
    turns: &[(&str, &str)],
    annotations: &[TurnAnnotation],
    scores: [f64; 5],
) {
    let mut t = Transcript::new(id);
    t.header_mut().variant = Some(variant);
    for (c, th) in turns {
        t.push(
            *c,
            *th,
            Some(TherapeuticState::initial(Stage::TrustBuilding)),
            vec![],
        )
        .unwrap();
    }
    t.save(dir.join(format!("{id}.jsonl"))).unwrap();
    write_annotations(dir.join(format!("{id}.annotations.jsonl")), id, annotations).unwrap();
    let scores: Vec<DimensionScore> = Dimension::ALL
        .iter()
        .zip(scores)
        .map(|(&dimension, score)| DimensionScore {
            dimension,
            score,
            explanation: String::new(),
        })
        .collect();
    write_scores(dir.join(format!("{id}.scores.jsonl")), id, &scores).unwrap();
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Salience by hand:
/// a: 25 words; Action I covers 6 (24%), Reflection I covers 7 (28%).
/// b: no moments.
/// c: 11 words; Protest I covers 5 (45.4545…%).
#[test]
fn fixture_tables_match_hand_computed_values() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    std::fs::create_dir(&t).unwrap();
    let a1 = "I went for a walk today and felt better";
    let a2 = "Maybe the worry is not all of me";
    write_session(
        &t,
        "a",
        Variant::Full,
        &[(a1, "That is good news"), (a2, "Say more about that")],
        &[
            annotated(1, a1, "I went for a walk today", IMType::ActionI),
            annotated(2, a2, "the worry is not all of me", IMType::ReflectionI),
        ],
        [3.0, 3.5, 4.0, 2.5, 4.5],
    );
    write_session(
        &t,
        "b",
        Variant::Full,
        &[("Nothing changes", "Tell me more")],
        &[TurnAnnotation::none(1)],
        [2.5, 2.5, 3.0, 3.5, 4.0],
    );
    let c1 = "I told my boss no for once";
    write_session(
        &t,
        "c",
        Variant::NoRag,
        &[(c1, "How did that feel")],
        &[annotated(1, c1, "I told my boss no", IMType::ProtestI)],
        [4.0, 4.0, 4.5, 4.5, 5.0],
    );

    let run = narrative(dir.path(), &["report", "t", "--out", "r"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let r = dir.path().join("r");

    let sessions = csv_rows(&r.join("salience_sessions.csv"));
    assert_eq!(
        sessions[0],
        [
            "session_id",
            "variant",
            "Action I",
            "Reflection I",
            "Protest I",
            "Action II",
            "Reflection II",
            "Protest II",
            "SUM"
        ]
    );
    assert_eq!(
        sessions[1][2..],
        ["24.000", "28.000", "0.000", "0.000", "0.000", "0.000", "52.000"]
    );
    assert_eq!(sessions[2][2..], ["0.000"; 7]);
    assert_eq!(
        sessions[3][2..],
        ["0.000", "0.000", "45.455", "0.000", "0.000", "0.000", "45.455"]
    );

    let aggregate = csv_rows(&r.join("salience_aggregate.csv"));
    let by_group: BTreeMap<&str, &[String]> = aggregate[1..]
        .iter()
        .map(|row| (row[0].as_str(), &row[1..]))
        .collect();
    assert_eq!(
        by_group["full"],
        ["2", "12.000", "14.000", "0.000", "0.000", "0.000", "0.000", "26.000"]
    );
    assert_eq!(
        by_group["no_rag"],
        ["1", "0.000", "0.000", "45.455", "0.000", "0.000", "0.000", "45.455"]
    );
    assert_eq!(
        by_group["all"],
        ["3", "8.000", "9.333", "15.152", "0.000", "0.000", "0.000", "32.485"]
    );
    for row in &aggregate[1..] {
        let thousandths: Vec<u64> = row[2..]
            .iter()
            .map(|c| c.replace('.', "").parse().unwrap())
            .collect();
        assert_eq!(thousandths[..6].iter().sum::<u64>(), thousandths[6]);
    }
    assert!(run.stdout.contains("32.485%"));

    let dims = csv_rows(&r.join("dimensions.csv"));
    let by_group: BTreeMap<&str, &[String]> = dims[1..]
        .iter()
        .map(|row| (row[0].as_str(), &row[1..]))
        .collect();
    // full: means 2.75, 3.00, 3.50, 3.00 -> 3.0625
    assert_eq!(
        by_group["full"],
        ["2", "2.75", "3.00", "3.50", "3.00", "4.25", "3.06"]
    );
    // all: means 3.1666…, 3.3333…, 3.8333…, 3.5 -> 3.4583…
    assert_eq!(
        by_group["all"],
        ["3", "3.17", "3.33", "3.83", "3.50", "4.50", "3.46"]
    );

    let traj = csv_rows(&r.join("trajectory.csv"));
    assert_eq!(
        traj[1],
        ["a", "full", "1", "1", "0", "0", "0", "0", "0", "1", "0"]
    );
    assert_eq!(
        traj[2],
        ["a", "full", "2", "0", "1", "0", "0", "0", "0", "1", "0"]
    );

    let words = csv_rows(&r.join("word_stats.csv"));
    assert_eq!(words[1], ["a", "full", "2", "8.500", "4.000"]);
}

#[test]
fn mismatched_annotation_file_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    std::fs::create_dir(&t).unwrap();
    write_session(
        &t,
        "a",
        Variant::Full,
        &[("one two", "three")],
        &[TurnAnnotation::none(1)],
        [3.0; 5],
    );
    write_session(
        &t,
        "b",
        Variant::Full,
        &[("one two", "three")],
        &[TurnAnnotation::none(1), TurnAnnotation::none(2)],
        [3.0; 5],
    );
    let run = narrative(dir.path(), &["report", "t", "--out", "r"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("skipping"));
    let sessions = csv_rows(&dir.path().join("r/salience_sessions.csv"));
    assert_eq!(sessions.len(), 2);
    assert_eq!(sessions[1][0], "a");
}

/// Counts states straight from the raw transcript records.
fn count_states(dir: &Path) -> BTreeMap<(String, String, String), usize> {
    let mut counts = BTreeMap::new();
    for name in common::listing(dir) {
        let text = read(dir.join(&name));
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        let variant = header["variant"].as_str().unwrap().to_string();
        for line in lines {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            if let (Some(stage), Some(level)) = (rec["stage"].as_str(), rec["level"].as_str()) {
                for group in [variant.as_str(), "all"] {
                    *counts
                        .entry((group.to_string(), stage.to_string(), level.to_string()))
                        .or_default() += 1;
                }
            }
        }
    }
    counts
}

#[test]
fn state_distribution_matches_direct_counting() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = fixture("profiles.jsonl");
    let t = dir.path().join("t");
    std::fs::create_dir(&t).unwrap();
    for variant in ["full", "no_rag", "no_ragrl", "role_play"] {
        let out = format!("sim-{variant}");
        let run = narrative(
            dir.path(),
            &[
                "simulate",
                "--profiles",
                profiles.to_str().unwrap(),
                "--out",
                &out,
                "--variant",
                variant,
                "--min-turns",
                "12",
                "--seed",
                "11",
            ],
        );
        assert_eq!(run.code, 0, "{}", run.stderr);
        for name in common::listing(&dir.path().join(&out)) {
            let text = read(dir.path().join(&out).join(&name)).replacen(
                "\"session_id\":\"sim-",
                &format!("\"session_id\":\"{variant}-"),
                1,
            );
            std::fs::write(t.join(format!("{variant}-{name}")), text).unwrap();
        }
    }
    let expected = count_states(&t);
    assert!(expected.keys().any(|(g, _, _)| g == "no_rag"));
    assert!(!expected.keys().any(|(g, _, _)| g == "role_play"));

    let run = narrative(dir.path(), &["report", "t", "--out", "r"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let rows = csv_rows(&dir.path().join("r/state_distribution.csv"));
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for ((g, _, _), n) in &expected {
        *totals.entry(g.clone()).or_default() += n;
    }
    let mut seen = 0;
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for row in &rows[1..] {
        let key = (row[0].clone(), row[1].clone(), row[2].clone());
        let n: usize = row[4].parse().unwrap();
        assert_eq!(expected.get(&key), Some(&n), "{key:?}");
        let fraction: f64 = row[5].parse().unwrap();
        assert!((fraction - n as f64 / totals[&row[0]] as f64).abs() <= 5e-7);
        *sums.entry(row[0].clone()).or_default() += n as f64 / totals[&row[0]] as f64;
        seen += 1;
    }
    assert_eq!(seen, expected.len());
    for (g, s) in sums {
        assert!((s - 1.0).abs() < 1e-12, "{g}: {s}");
    }
}
