//! Expert exemplar repository and top-k cosine retrieval.
//!
//! Candidates are filtered by the planned state before ranking. When fewer
//! than `k` exemplars share the `(stage, level)` pair the filter widens to the
//! stage, then to the whole repository; the tier used is part of the result.
//! Ties in score are broken by ascending id.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, EmbeddingVector};
use crate::par::Execution;
use crate::taxonomy::{validate_state, ReflectionLevel, Stage, TaxonomyError, TherapeuticState};

pub const DEFAULT_K: usize = 5;

/// Raw exemplars shipped with the crate, one JSON object per line.
pub const SEED_EXEMPLARS: &str = include_str!("../data/seed_exemplars.jsonl");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CosineError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
}

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("repository is empty")]
    EmptyRepository,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate exemplar id `{0}`")]
    DuplicateId(String),
    #[error("exemplar `{id}` has dimension {found}, repository uses {expected}")]
    Dimension {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("exemplar `{0}` has a zero embedding")]
    ZeroEmbedding(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    State {
        line: usize,
        #[source]
        source: TaxonomyError,
    },
    #[error(transparent)]
    Cosine(#[from] CosineError),
    #[error("embedding exemplar `{id}`: {source}")]
    Embed {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`. Symmetric bit-for-bit.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, CosineError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, CosineError> {
    if a.len() != b.len() {
        return Err(CosineError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CosineError::ZeroVector);
    }
    let (lo, hi) = if na <= nb { (na, nb) } else { (nb, na) };
    Ok((dot / (lo * hi)).clamp(-1.0, 1.0))
}

/// Text embedded for a retrieval query.
pub fn build_query_key(utterance: &str, state: &TherapeuticState) -> String {
    format!(
        "{} | {} | {}",
        state.stage().label(),
        state.level().name,
        utterance
    )
}

/// An exemplar before embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExemplar {
    pub id: String,
    pub stage: Stage,
    pub level: String,
    pub context: String,
    pub response_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExemplarRecord {
    id: String,
    stage: Stage,
    level: String,
    context: String,
    response_text: String,
    embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub id: String,
    pub state: TherapeuticState,
    pub context: String,
    pub response_text: String,
    pub embedding: EmbeddingVector,
}

impl Exemplar {
    pub fn stage(&self) -> Stage {
        self.state.stage()
    }

    pub fn level(&self) -> ReflectionLevel {
        self.state.level()
    }

    /// The text embedded for this exemplar; same layout as a query key.
    pub fn key(&self) -> String {
        build_query_key(&self.context, &self.state)
    }

    fn record(&self) -> ExemplarRecord {
        ExemplarRecord {
            id: self.id.clone(),
            stage: self.stage(),
            level: self.level().name.to_string(),
            context: self.context.clone(),
            response_text: self.response_text.clone(),
            embedding: self.embedding.clone(),
        }
    }
}

/// Which candidate filter produced a retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    State,
    Stage,
    All,
}

impl Tier {
    pub fn admits(self, exemplar: &Exemplar, state: &TherapeuticState) -> bool {
        match self {
            Tier::State => exemplar.state == *state,
            Tier::Stage => exemplar.stage() == state.stage(),
            Tier::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExemplar {
    pub exemplar: Exemplar,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub exemplars: Vec<ScoredExemplar>,
    pub query_key: String,
    pub tier: Tier,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<String> {
        self.exemplars
            .iter()
            .map(|s| s.exemplar.id.clone())
            .collect()
    }
}

/// Immutable set of embedded exemplars with a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Repository {
    dim: usize,
    exemplars: Vec<Exemplar>,
}

impl Repository {
    pub fn new(exemplars: Vec<Exemplar>) -> Result<Self, RepositoryError> {
        let dim = exemplars
            .first()
            .ok_or(RepositoryError::EmptyRepository)?
            .embedding
            .dim();
        let mut seen = BTreeSet::new();
        for e in &exemplars {
            if !seen.insert(e.id.as_str()) {
                return Err(RepositoryError::DuplicateId(e.id.clone()));
            }
            if e.embedding.dim() != dim {
                return Err(RepositoryError::Dimension {
                    id: e.id.clone(),
                    expected: dim,
                    found: e.embedding.dim(),
                });
            }
            if e.embedding.norm() == 0.0 {
                return Err(RepositoryError::ZeroEmbedding(e.id.clone()));
            }
        }
        Ok(Self { dim, exemplars })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    /// Embeds raw exemplars with `backend`.
    pub fn build<B: ChatBackend + ?Sized>(
        backend: &B,
        raw: Vec<RawExemplar>,
        execution: Execution,
    ) -> Result<Self, RepositoryError> {
        let states = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                validate_state(r.stage, &r.level).map_err(|source| RepositoryError::State {
                    line: i + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let keyed: Vec<(RawExemplar, TherapeuticState)> = raw.into_iter().zip(states).collect();
        let embedded = execution.map(&keyed, |(r, state)| {
            backend
                .embed(&build_query_key(&r.context, state))
                .map_err(|source| RepositoryError::Embed {
                    id: r.id.clone(),
                    source,
                })
        });
        let exemplars = keyed
            .into_iter()
            .zip(embedded)
            .map(|((r, state), emb)| {
                Ok(Exemplar {
                    id: r.id,
                    state,
                    context: r.context,
                    response_text: r.response_text,
                    embedding: emb?,
                })
            })
            .collect::<Result<Vec<_>, RepositoryError>>()?;
        Self::new(exemplars)
    }

    /// The shipped seed exemplars embedded with `backend`.
    pub fn seed<B: ChatBackend + ?Sized>(backend: &B) -> Result<Self, RepositoryError> {
        Self::build(backend, parse_raw(SEED_EXEMPLARS)?, Execution::Sequential)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RepositoryError> {
        let path = path.as_ref();
        let io_err = |source| RepositoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut exemplars = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExemplarRecord =
                serde_json::from_str(&line).map_err(|e| RepositoryError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let state =
                validate_state(rec.stage, &rec.level).map_err(|source| RepositoryError::State {
                    line: i + 1,
                    source,
                })?;
            exemplars.push(Exemplar {
                id: rec.id,
                state,
                context: rec.context,
                response_text: rec.response_text,
                embedding: rec.embedding,
            });
        }
        Self::new(exemplars)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RepositoryError> {
        let path = path.as_ref();
        let io_err = |source| RepositoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        for e in &self.exemplars {
            let line = serde_json::to_string(&e.record()).expect("records serialize");
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Candidates for `state` and the tier that produced them.
    pub fn candidates(&self, state: &TherapeuticState, k: usize) -> (Vec<&Exemplar>, Tier) {
        for tier in [Tier::State, Tier::Stage] {
            let c: Vec<&Exemplar> = self
                .exemplars
                .iter()
                .filter(|e| tier.admits(e, state))
                .collect();
            if c.len() >= k {
                return (c, tier);
            }
        }
        (self.exemplars.iter().collect(), Tier::All)
    }

    /// Ranks candidates against an already embedded query.
    pub fn retrieve_embedded(
        &self,
        query_key: String,
        query: &EmbeddingVector,
        state: &TherapeuticState,
        k: usize,
    ) -> Result<RetrievalResult, RepositoryError> {
        if k == 0 {
            return Err(RepositoryError::InvalidK);
        }
        let (candidates, tier) = self.candidates(state, k);
        let mut scored = candidates
            .into_iter()
            .map(|e| Ok((e, cosine(query, &e.embedding)?)))
            .collect::<Result<Vec<_>, CosineError>>()?;
        scored.sort_by(|(a, sa), (b, sb)| sb.total_cmp(sa).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(k);
        Ok(RetrievalResult {
            exemplars: scored
                .into_iter()
                .map(|(e, score)| ScoredExemplar {
                    exemplar: e.clone(),
                    score,
                })
                .collect(),
            query_key,
            tier,
        })
    }
}

/// Embeds the query key for `utterance` at `state` and returns the top `k`.
pub fn retrieve<B: ChatBackend + ?Sized>(
    repo: &Repository,
    backend: &B,
    utterance: &str,
    state: &TherapeuticState,
    k: usize,
) -> Result<RetrievalResult, RepositoryError> {
    if repo.is_empty() {
        return Err(RepositoryError::EmptyRepository);
    }
    let key = build_query_key(utterance, state);
    let query = backend.embed(&key)?;
    repo.retrieve_embedded(key, &query, state, k)
}

/// Parses raw exemplar lines (the build input format).
pub fn parse_raw(text: &str) -> Result<Vec<RawExemplar>, RepositoryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RepositoryError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Vec<RawExemplar>, RepositoryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RepositoryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_raw(&text)
}
