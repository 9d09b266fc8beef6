use std::io::{BufRead, Write};
use std::path::PathBuf;

use chrono::Utc;
use narrative_core::transcript::{TranscriptHeader, TranscriptWriter};
use narrative_core::{Engine, Transcript};

use crate::args::ChatArgs;
use crate::context::Context;
use crate::error::CliError;

pub fn run(ctx: &Context, args: &ChatArgs) -> Result<(), CliError> {
    let engine = ctx.engine(args.variant)?;
    let out = args.out.clone().unwrap_or_else(|| {
        PathBuf::from(format!(
            "{}-{}.jsonl",
            args.session_id,
            Utc::now().format("%Y%m%dT%H%M%S")
        ))
    });
    let header = TranscriptHeader {
        session_id: args.session_id.clone(),
        profile_ref: args.profile_ref.clone(),
        created_at: Utc::now(),
        variant: Some(engine.config().variant),
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let turns = repl(&engine, header, &out, stdin.lock(), stdout.lock())?;
    eprintln!("transcript: {} ({turns} turns)", out.display());
    Ok(())
}

/// Reads client lines until EOF, committing each turn before printing it.
pub fn repl(
    engine: &Engine,
    header: TranscriptHeader,
    out: &std::path::Path,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<usize, CliError> {
    let mut session = Transcript::with_header(header);
    let mut writer = TranscriptWriter::create(out, session.header())
        .map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    let io_err = |e: std::io::Error| CliError::Failed(e.to_string());
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let index = session.next_index();
        let result = match engine.respond(&session, text) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("turn {index} failed: {e}");
                continue;
            }
        };
        let turn = result.into_turn(index, text);
        writer
            .append(&turn)
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let badge = turn
            .state
            .map_or_else(|| "role play".to_string(), |s| s.badge());
        writeln!(output, "[{badge}] {}", turn.therapist_text).map_err(io_err)?;
        output.flush().map_err(io_err)?;
        session
            .push_turn(turn)
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    Ok(session.len())
}
