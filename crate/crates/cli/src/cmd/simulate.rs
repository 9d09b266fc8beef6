use chrono::Utc;
use narrative_core::clientsim::{load_profiles, CooperationLevel, SimulatedClient};
use narrative_core::run_session;
use narrative_core::transcript::{TranscriptHeader, TranscriptWriter};
use narrative_core::Transcript;

use crate::args::SimulateArgs;
use crate::context::{create_dir, Context};
use crate::error::{require_exists, CliError, Outcome};

pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<Outcome, CliError> {
    require_exists(&args.profiles)?;
    let profiles = load_profiles(&args.profiles).map_err(|e| CliError::Usage(e.to_string()))?;
    if profiles.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no profiles",
            args.profiles.display()
        )));
    }
    let levels: Vec<CooperationLevel> = match &args.cooperation {
        Some(label) => {
            let level = ctx
                .config
                .simulation
                .cooperation
                .iter()
                .find(|c| c.label == *label)
                .ok_or_else(|| CliError::Usage(format!("unknown cooperation level `{label}`")))?;
            vec![level.clone()]
        }
        None => ctx.config.simulation.cooperation.clone(),
    };
    let min_turns = args.min_turns.unwrap_or(ctx.config.simulation.min_turns);
    if min_turns == 0 {
        return Err(CliError::Usage("--min-turns must be at least 1".into()));
    }
    let n = args.sessions.unwrap_or(profiles.len());
    let engine = ctx.engine(args.variant)?;
    let variant = engine.config().variant;
    let opening = ctx.config.simulation.opening.as_str();
    create_dir(&args.out)?;

    let results = ctx.execution.map_range(n, |i| {
        let profile = &profiles[i % profiles.len()];
        let cooperation = &levels[i % levels.len()];
        let id = format!("sim-{:04}", i + 1);
        let header = TranscriptHeader {
            session_id: id.clone(),
            profile_ref: Some(profile.id.clone()),
            created_at: Utc::now(),
            variant: Some(variant),
        };
        let client = SimulatedClient::new(
            ctx.backend.clone(),
            ctx.prompts.clone(),
            profile.clone(),
            cooperation.clone(),
        )
        .with_opening(opening);
        let prefix = format!(
            "{id} profile={} variant={variant} cooperation={}",
            profile.id, cooperation.label
        );
        let path = args.out.join(format!("{id}.jsonl"));
        let session = Transcript::with_header(header);
        let mut writer = match TranscriptWriter::create(&path, session.header()) {
            Ok(w) => w,
            Err(e) => return Err(format!("{prefix} FAILED: {}: {e}", path.display())),
        };
        match run_session(
            &engine,
            &client,
            session,
            min_turns,
            opening,
            Some(&mut writer),
        ) {
            Ok(t) => Ok(format!("{prefix} turns={} ok", t.len())),
            Err(e) => Err(format!(
                "{prefix} FAILED after {} turns: {}",
                e.partial.len(),
                e.source
            )),
        }
    });

    let mut outcome = Outcome::default();
    for r in &results {
        outcome.record(r);
        match r {
            Ok(line) => println!("{line}"),
            Err(line) => println!("{line}"),
        }
    }
    Ok(outcome)
}
