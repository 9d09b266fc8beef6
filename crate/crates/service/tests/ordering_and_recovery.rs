mod common;

use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;

use common::{engine, get, post, Server};
use narrative_core::transcript::read_committed;
use narrative_service::api::{MessageReply, SessionDetail, SessionSummary};
use narrative_service::store::INDEX_FILE;
use narrative_service::{AppState, ServiceOptions};
use serde_json::json;

#[test]
fn concurrent_posts_on_one_session_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let created: SessionSummary = post(&format!("{}/sessions", s.base), json!({}));
    let url = format!("{}/sessions/{}/messages", s.base, created.record.session_id);

    let barrier = Arc::new(std::sync::Barrier::new(12));
    let handles: Vec<_> = (0..12)
        .map(|i| {
            let (url, barrier) = (url.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                let r: MessageReply = post(
                    &url,
                    json!({ "client_text": format!("message number {i}") }),
                );
                (i, r)
            })
        })
        .collect();
    let mut replies: Vec<(usize, MessageReply)> =
        handles.into_iter().map(|h| h.join().unwrap()).collect();
    replies.sort_by_key(|(_, r)| r.turn.turn);
    assert_eq!(
        replies.iter().map(|(_, r)| r.turn.turn).collect::<Vec<_>>(),
        (1..=12).collect::<Vec<_>>()
    );

    let detail: SessionDetail = get(&format!(
        "{}/sessions/{}",
        s.base, created.record.session_id
    ));
    for ((i, r), stored) in replies.iter().zip(&detail.turns) {
        assert_eq!(stored.client_text, format!("message number {i}"));
        assert_eq!(stored, &r.turn);
    }
}

#[test]
fn double_post_gets_turns_one_then_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let created: SessionSummary = post(&format!("{}/sessions", s.base), json!({}));
    let url = format!("{}/sessions/{}/messages", s.base, created.record.session_id);
    let first = {
        let url = url.clone();
        std::thread::spawn(move || post::<MessageReply>(&url, json!({"client_text": "first"})))
    };
    let second = post::<MessageReply>(&url, json!({"client_text": "second"}));
    let first = first.join().unwrap();
    let mut turns = [first.turn.turn, second.turn.turn];
    turns.sort();
    assert_eq!(turns, [1, 2]);
    assert_eq!(first.turn.state.is_some(), second.turn.state.is_some());
}

#[test]
fn restart_recovers_committed_turns_and_discards_torn_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut acked: Vec<(String, Vec<MessageReply>)> = Vec::new();
    {
        let s = Server::start(dir.path());
        let handles: Vec<_> = (0..10)
            .map(|n| {
                let base = s.base.clone();
                std::thread::spawn(move || {
                    let variant = ["full", "no_rag", "no_ragrl", "role_play"][n % 4];
                    let created: SessionSummary =
                        post(&format!("{base}/sessions"), json!({ "variant": variant }));
                    let id = created.record.session_id;
                    let replies: Vec<MessageReply> = (0..(3 + n % 4))
                        .map(|t| {
                            post(
                                &format!("{base}/sessions/{id}/messages"),
                                json!({ "client_text": format!("session {n} line {t}") }),
                            )
                        })
                        .collect();
                    (id, replies)
                })
            })
            .collect();
        acked.extend(handles.into_iter().map(|h| h.join().unwrap()));
        s.stop();
    }
    for (i, (id, _)) in acked.iter().enumerate() {
        if i % 3 == 0 {
            let mut f = OpenOptions::new()
                .append(true)
                .open(dir.path().join(format!("{id}.jsonl")))
                .unwrap();
            f.write_all(b"{\"turn\":99,\"client_text\":\"half writ")
                .unwrap();
        }
    }
    OpenOptions::new()
        .append(true)
        .open(dir.path().join(INDEX_FILE))
        .unwrap()
        .write_all(b"{\"event\":\"cre")
        .unwrap();

    let app = AppState::open(engine(1), dir.path(), ServiceOptions::default()).unwrap();
    let s = Server::start_with(app);
    for (id, replies) in &acked {
        let detail: SessionDetail = get(&format!("{}/sessions/{id}", s.base));
        assert_eq!(detail.turns.len(), replies.len(), "{id}");
        for (stored, r) in detail.turns.iter().zip(replies) {
            assert_eq!(stored, &r.turn);
        }
        let recovered = read_committed(dir.path().join(format!("{id}.jsonl"))).unwrap();
        assert_eq!(recovered.discarded_bytes, 0);
        let next: MessageReply = post(
            &format!("{}/sessions/{id}/messages", s.base),
            json!({"client_text": "after restart"}),
        );
        assert_eq!(next.turn.turn as usize, replies.len() + 1);
    }
    let fresh: SessionSummary = post(&format!("{}/sessions", s.base), json!({}));
    assert!(acked.iter().all(|(id, _)| *id != fresh.record.session_id));
}
