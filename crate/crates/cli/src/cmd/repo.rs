use narrative_core::clientsim::{ingest_esconv, write_profiles};
use narrative_core::exemplars::{load_raw, Repository};

use crate::args::{BuildRepoArgs, IngestArgs};
use crate::context::Context;
use crate::error::{require_exists, CliError};

pub fn build(ctx: &Context, args: &BuildRepoArgs) -> Result<(), CliError> {
    require_exists(&args.raw)?;
    let raw = load_raw(&args.raw)
        .map_err(|e| CliError::Failed(format!("{}: {e}", args.raw.display())))?;
    let repo = Repository::build(&*ctx.backend, raw, ctx.execution)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    repo.save(&args.out)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    println!(
        "{} exemplars, dim {} -> {}",
        repo.len(),
        repo.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    require_exists(&args.input)?;
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.input.display())))?;
    let mut profiles = ingest_esconv(&text)
        .map_err(|e| CliError::Failed(format!("{}: {e}", args.input.display())))?;
    if let Some(limit) = args.limit {
        profiles.truncate(limit);
    }
    if profiles.is_empty() {
        return Err(CliError::Failed(format!(
            "{}: no usable records",
            args.input.display()
        )));
    }
    write_profiles(&args.out, &profiles).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{} profiles -> {}", profiles.len(), args.out.display());
    Ok(())
}
