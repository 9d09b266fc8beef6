use std::sync::Arc;

use narrative_core::backend::{ChatBackend, RuleBackend};
use narrative_core::clientsim::{
    default_cooperation_levels, ClientProfile, SimulatedClient, DEFAULT_OPENING,
};
use narrative_core::exemplars::Repository;
use narrative_core::ima::{
    annotate_transcript, read_annotations, salience_report, trajectory, write_annotations,
};
use narrative_core::par::Execution;
use narrative_core::prompts::PromptSet;
use narrative_core::supervisor::{
    average_score, evaluate_transcript, on_grid, read_scores, write_scores, Dimension,
};
use narrative_core::{run_session, Engine, EngineConfig, Transcript, Variant};

fn session(seed: u64) -> (Arc<dyn ChatBackend>, Transcript) {
    let backend: Arc<dyn ChatBackend> = Arc::new(RuleBackend::new(seed));
    let prompts = Arc::new(PromptSet::builtin());
    let repo = Arc::new(Repository::seed(&*backend).unwrap());
    let engine = Engine::new(
        backend.clone(),
        prompts.clone(),
        repo,
        EngineConfig::default(),
    );
    let profile = ClientProfile {
        id: "p".into(),
        demographics: "52".into(),
        background_story: "Cares for an ill parent.".into(),
        emotional_state: "guilty".into(),
        core_concerns: "no time for herself".into(),
    };
    let client = SimulatedClient::new(
        backend.clone(),
        prompts,
        profile,
        default_cooperation_levels()[2].clone(),
    );
    let mut t = Transcript::new("eval");
    t.header_mut().variant = Some(Variant::Full);
    (
        backend.clone(),
        run_session(&engine, &client, t, 35, DEFAULT_OPENING, None).unwrap(),
    )
}

#[test]
fn annotate_score_and_persist() {
    let (backend, t) = session(21);
    let prompts = PromptSet::builtin();

    let seq: Vec<_> = annotate_transcript(&*backend, &prompts, &t, Execution::Sequential)
        .into_iter()
        .collect::<Result<_, _>>()
        .unwrap();
    let par: Vec<_> = annotate_transcript(&*backend, &prompts, &t, Execution::from_jobs(Some(3)))
        .into_iter()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.len(), t.len());

    let report = salience_report(&t, &seq).unwrap();
    assert!(report.per_type.values().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(trajectory(&seq).len(), t.len());

    let dir = tempfile::tempdir().unwrap();
    let ann_path = dir.path().join("ann.jsonl");
    write_annotations(&ann_path, t.session_id(), &seq).unwrap();
    let back: Vec<_> = read_annotations(&ann_path)
        .unwrap()
        .into_iter()
        .map(|(_, a)| a)
        .collect();
    assert_eq!(back, seq);

    let scores: Vec<_> = evaluate_transcript(&*backend, &prompts, &t, Execution::from_jobs(None))
        .into_iter()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(
        scores.iter().map(|s| s.dimension).collect::<Vec<_>>(),
        Dimension::ALL.to_vec()
    );
    assert!(scores.iter().all(|s| on_grid(s.score)));
    let avg = average_score(&scores).unwrap();
    assert!((1.0..=5.0).contains(&avg));

    let score_path = dir.path().join("scores.jsonl");
    write_scores(&score_path, t.session_id(), &scores).unwrap();
    let records = read_scores(&score_path).unwrap();
    assert_eq!(records.len(), scores.len());
    assert!(records
        .iter()
        .zip(&scores)
        .all(|(r, s)| r.score == s.score && r.dimension == s.dimension));
}
