use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use narrative_core::Variant;

#[derive(Debug, Parser)]
#[command(
    name = "narrative",
    version,
    about = "Narrative therapist simulation and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each overrides the matching config key.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed of the mock backend.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch commands; 1 runs sequentially.
    #[arg(long, global = true, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub jobs: Option<usize>,
    /// Exemplars retrieved per turn.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Turns of history shown to the planner.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Embedded exemplar repository; defaults to the built-in seed set.
    #[arg(long, global = true, value_name = "FILE")]
    pub repository: Option<PathBuf>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Talk to the therapist on stdin; one line per client turn.
    Chat(ChatArgs),
    /// Run simulated-client sessions against the therapist.
    Simulate(SimulateArgs),
    /// Code Innovative Moments in every transcript of a directory.
    Annotate(BatchArgs),
    /// Score every transcript of a directory on the therapeutic dimensions.
    Evaluate(BatchArgs),
    /// Write salience, dimension, state and trajectory tables.
    Report(ReportArgs),
    /// Embed a raw exemplar file into a repository.
    BuildRepo(BuildRepoArgs),
    /// Serve the session HTTP API.
    Serve(ServeArgs),
    /// Convert ESConv records into client profiles.
    IngestProfiles(IngestArgs),
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Transcript file to create.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "chat")]
    pub session_id: String,
    #[arg(long)]
    pub profile_ref: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Client profiles, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pub profiles: PathBuf,
    /// Directory receiving one transcript per session.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of sessions; defaults to one per profile.
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub min_turns: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Cooperation level label; by default sessions cycle through all levels.
    #[arg(long)]
    pub cooperation: Option<String>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Directory of transcripts.
    pub transcripts: PathBuf,
    /// Output directory; defaults to the transcript directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding transcripts with their annotation and score files.
    pub dir: PathBuf,
    /// Directory receiving the CSV tables.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildRepoArgs {
    /// Raw exemplars, one JSON object per line, without embeddings.
    pub raw: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "DIR", default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Variant of sessions created without one.
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// ESConv JSON array or JSON-lines file.
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Keep at most this many profiles.
    #[arg(long)]
    pub limit: Option<usize>,
}
