use std::path::{Path, PathBuf};

use narrative_core::ima::{annotate_transcript, write_annotations, TurnAnnotation};
use narrative_core::par::Execution;
use narrative_core::supervisor::{
    average_score, evaluate_transcript, write_scores, DimensionScore,
};
use narrative_core::Transcript;

use crate::args::BatchArgs;
use crate::context::{create_dir, transcript_files, Context, ANNOTATIONS_SUFFIX, SCORES_SUFFIX};
use crate::error::{CliError, Outcome};

/// Inputs and output directory shared by annotate and evaluate.
fn prepare(args: &BatchArgs) -> Result<(Vec<PathBuf>, PathBuf), CliError> {
    let files = transcript_files(&args.transcripts)?;
    let out = args.out.clone().unwrap_or_else(|| args.transcripts.clone());
    create_dir(&out)?;
    Ok((files, out))
}

fn for_each_transcript(
    ctx: &Context,
    files: &[PathBuf],
    f: impl Fn(&Path, &Transcript) -> Result<String, String> + Sync + Send,
) -> Outcome {
    let results = ctx.execution.map(files, |path| {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match Transcript::load(path) {
            Ok(t) => f(path, &t).map_err(|e| format!("{} FAILED: {e}", t.session_id())),
            Err(e) => Err(format!("{name} FAILED: {e}")),
        }
    });
    let mut outcome = Outcome::default();
    for r in &results {
        outcome.record(r);
        match r {
            Ok(line) | Err(line) => println!("{line}"),
        }
    }
    outcome
}

pub fn annotate(ctx: &Context, args: &BatchArgs) -> Result<Outcome, CliError> {
    let (files, out) = prepare(args)?;
    Ok(for_each_transcript(ctx, &files, |_, t| {
        let annotations =
            annotate_transcript(&*ctx.backend, &ctx.prompts, t, Execution::Sequential)
                .into_iter()
                .collect::<Result<Vec<TurnAnnotation>, _>>()
                .map_err(|e| e.to_string())?;
        let path = out.join(format!("{}{ANNOTATIONS_SUFFIX}", t.session_id()));
        write_annotations(&path, t.session_id(), &annotations).map_err(|e| e.to_string())?;
        let coded = annotations
            .iter()
            .filter(|a| !a.coded_types().is_empty())
            .count();
        Ok(format!(
            "{} turns={} im_turns={coded} ok",
            t.session_id(),
            annotations.len()
        ))
    }))
}

pub fn evaluate(ctx: &Context, args: &BatchArgs) -> Result<Outcome, CliError> {
    let (files, out) = prepare(args)?;
    Ok(for_each_transcript(ctx, &files, |_, t| {
        let scores = evaluate_transcript(&*ctx.backend, &ctx.prompts, t, Execution::Sequential)
            .into_iter()
            .collect::<Result<Vec<DimensionScore>, _>>()
            .map_err(|e| e.to_string())?;
        let path = out.join(format!("{}{SCORES_SUFFIX}", t.session_id()));
        write_scores(&path, t.session_id(), &scores).map_err(|e| e.to_string())?;
        let cells: Vec<String> = scores
            .iter()
            .map(|s| format!("{}={:.1}", s.dimension, s.score))
            .collect();
        let avg = average_score(&scores).map_err(|e| e.to_string())?;
        Ok(format!(
            "{} {} avg={avg:.2} ok",
            t.session_id(),
            cells.join(" ")
        ))
    }))
}
