use std::path::{Path, PathBuf};
use std::sync::Arc;

use narrative_core::backend::ChatBackend;
use narrative_core::config::Config;
use narrative_core::exemplars::Repository;
use narrative_core::par::Execution;
use narrative_core::prompts::PromptSet;
use narrative_core::{Engine, Variant};

use crate::args::GlobalArgs;
use crate::error::CliError;

/// Resolved configuration plus the shared backend and prompts.
pub struct Context {
    pub config: Config,
    pub backend: Arc<dyn ChatBackend>,
    pub prompts: Arc<PromptSet>,
    pub execution: Execution,
}

impl Context {
    pub fn new(args: &GlobalArgs) -> Result<Self, CliError> {
        let config = resolve_config(args, |k| std::env::var(k).ok())?;
        let backend = config.build_backend()?;
        let prompts = Arc::new(config.prompt_set()?);
        Ok(Self {
            config,
            backend,
            prompts,
            execution: Execution::from_jobs(args.jobs),
        })
    }

    pub fn repository(&self) -> Result<Repository, CliError> {
        match &self.config.repository {
            Some(path) => {
                crate::error::require_exists(path)?;
                Repository::load(path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
            None => Repository::seed(&*self.backend)
                .map_err(|e| CliError::Failed(format!("seed repository: {e}"))),
        }
    }

    pub fn engine(&self, variant: Option<Variant>) -> Result<Engine, CliError> {
        let mut config = self.config.engine_config();
        if let Some(v) = variant {
            config.variant = v;
        }
        Ok(Engine::new(
            self.backend.clone(),
            self.prompts.clone(),
            Arc::new(self.repository()?),
            config,
        ))
    }
}

/// File, then `NT_*` variables read through `env`, then flags.
pub fn resolve_config(
    args: &GlobalArgs,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Config, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            crate::error::require_exists(path)?;
            Config::from_file(path)?
        }
        None => Config::default(),
    };
    config.apply_env(env)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k {
        config.engine.k = k;
    }
    if let Some(w) = args.window {
        config.engine.window = w;
    }
    if let Some(path) = &args.repository {
        config.repository = Some(path.clone());
    }
    config.validate()?;
    Ok(config)
}

/// Transcript files in `dir`, skipping derived annotation and score files.
pub fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    crate::error::require_exists(dir)?;
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_transcript_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::EmptyInput(dir.to_path_buf()));
    }
    Ok(paths)
}

pub const ANNOTATIONS_SUFFIX: &str = ".annotations.jsonl";
pub const SCORES_SUFFIX: &str = ".scores.jsonl";

fn is_transcript_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    path.is_file()
        && name.ends_with(".jsonl")
        && !name.ends_with(ANNOTATIONS_SUFFIX)
        && !name.ends_with(SCORES_SUFFIX)
        && name != narrative_service::store::INDEX_FILE
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn args(extra: &[&str]) -> GlobalArgs {
        use clap::Parser;
        #[derive(Parser)]
        struct T {
            #[command(flatten)]
            g: GlobalArgs,
        }
        let mut v = vec!["t"];
        v.extend_from_slice(extra);
        T::parse_from(v).g
    }

    #[test]
    fn flags_override_env_which_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 1\n[engine]\nk = 3\nwindow = 4\n").unwrap();
        let path = file.to_str().unwrap();
        let env: HashMap<&str, &str> = [("NT_K", "7"), ("NT_SEED", "2")].into();
        let get = |k: &str| env.get(k).map(|v| v.to_string());

        let c = resolve_config(&args(&["--config", path]), get).unwrap();
        assert_eq!((c.seed, c.engine.k, c.engine.window), (2, 7, 4));
        let c = resolve_config(&args(&["--config", path, "--seed", "9", "--k", "2"]), get).unwrap();
        assert_eq!((c.seed, c.engine.k, c.engine.window), (9, 2, 4));
        let c = resolve_config(&args(&["--config", path]), |_| None).unwrap();
        assert_eq!((c.seed, c.engine.k), (1, 3));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            resolve_config(&args(&["--k", "0"]), |_| None),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve_config(&args(&[]), |k| (k == "NT_K").then(|| "many".into())),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            resolve_config(&args(&["--config", "/nonexistent/c.toml"]), |_| None),
            Err(CliError::MissingInput(_))
        ));
    }

    #[test]
    fn derived_files_are_not_transcripts() {
        let dir = tempfile::tempdir().unwrap();
        for name in [
            "a.jsonl",
            "a.annotations.jsonl",
            "a.scores.jsonl",
            "sessions.jsonl",
            "notes.txt",
        ] {
            std::fs::write(dir.path().join(name), "").unwrap();
        }
        let files = transcript_files(dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("a.jsonl")]);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            transcript_files(empty.path()),
            Err(CliError::EmptyInput(_))
        ));
    }
}
