use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use narrative_core::ima::{
    read_annotations, salience_report, trajectory, IMType, SalienceReport, TurnAnnotation,
};
use narrative_core::orchestrator::{word_stats, WordStats};
use narrative_core::supervisor::{
    average_of, dimension_means, read_scores, round_half_up, Dimension, ScoreRecord,
};
use narrative_core::{TherapeuticState, Transcript};

use crate::args::ReportArgs;
use crate::context::{create_dir, transcript_files, ANNOTATIONS_SUFFIX, SCORES_SUFFIX};
use crate::error::{CliError, Outcome};

pub const SALIENCE_SESSIONS: &str = "salience_sessions.csv";
pub const SALIENCE_AGGREGATE: &str = "salience_aggregate.csv";
pub const DIMENSIONS: &str = "dimensions.csv";
pub const STATE_DISTRIBUTION: &str = "state_distribution.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const WORD_STATS: &str = "word_stats.csv";

/// Group label used for rows over every session.
pub const ALL: &str = "all";

struct Session {
    variant: String,
    transcript: Transcript,
    annotations: Option<Vec<TurnAnnotation>>,
    salience: Option<SalienceReport>,
    scores: Vec<ScoreRecord>,
}

/// A percentage with three decimals, held as an integer count of 0.001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Milli(pub u64);

impl Milli {
    pub fn from_fraction(fraction: f64) -> Self {
        Milli((round_half_up(fraction * 100.0, 3) * 1000.0).round() as u64)
    }
}

impl std::fmt::Display for Milli {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

/// Six per-type percentages followed by their SUM. The SUM adds the rounded
/// cells, so a rendered row always adds up.
pub fn salience_cells(report: &SalienceReport) -> Vec<Milli> {
    let mut cells: Vec<Milli> = IMType::ALL
        .iter()
        .map(|&t| Milli::from_fraction(report.get(t)))
        .collect();
    cells.push(Milli(cells.iter().map(|m| m.0).sum()));
    cells
}

fn salience_header(first: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain(IMType::ALL.iter().map(|t| t.label().to_string()))
        .chain(["SUM".to_string()])
        .collect()
}

fn load_session(path: &Path) -> Result<Session, String> {
    let transcript = Transcript::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let id = transcript.session_id().to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    let variant = transcript
        .variant()
        .map_or_else(|| "unknown".to_string(), |v| v.to_string());

    let ann_path = dir.join(format!("{id}{ANNOTATIONS_SUFFIX}"));
    let (annotations, salience) = if ann_path.exists() {
        let records = read_annotations(&ann_path).map_err(|e| e.to_string())?;
        if let Some((other, _)) = records.iter().find(|(s, _)| *s != id) {
            return Err(format!(
                "{}: belongs to session `{other}`",
                ann_path.display()
            ));
        }
        let annotations: Vec<TurnAnnotation> = records.into_iter().map(|(_, a)| a).collect();
        let report = salience_report(&transcript, &annotations)
            .map_err(|e| format!("{}: {e}", ann_path.display()))?;
        (Some(annotations), Some(report))
    } else {
        (None, None)
    };

    let score_path = dir.join(format!("{id}{SCORES_SUFFIX}"));
    let scores = if score_path.exists() {
        let scores = read_scores(&score_path).map_err(|e| e.to_string())?;
        if let Some(r) = scores.iter().find(|r| r.session_id != id) {
            return Err(format!(
                "{}: belongs to session `{}`",
                score_path.display(),
                r.session_id
            ));
        }
        scores
    } else {
        Vec::new()
    };
    Ok(Session {
        variant,
        transcript,
        annotations,
        salience,
        scores,
    })
}

/// Groups by variant plus one group over everything.
fn groups(sessions: &[Session]) -> BTreeMap<String, Vec<&Session>> {
    let mut out: BTreeMap<String, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        out.entry(s.variant.clone()).or_default().push(s);
        out.entry(ALL.to_string()).or_default().push(s);
    }
    out
}

/// Stated turns per state, counted over all transcripts of a group.
pub fn pooled_distribution<'a>(
    transcripts: impl IntoIterator<Item = &'a Transcript>,
) -> BTreeMap<TherapeuticState, usize> {
    let mut counts = BTreeMap::new();
    for t in transcripts {
        for state in t.turns().iter().filter_map(|turn| turn.state) {
            *counts.entry(state).or_default() += 1;
        }
    }
    counts
}

struct Tables {
    out: PathBuf,
}

impl Tables {
    fn write(
        &self,
        name: &str,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<(), CliError> {
        let path = self.out.join(name);
        let fail = |e: csv::Error| CliError::Failed(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(fail)?;
        w.write_record(&header).map_err(fail)?;
        for r in rows {
            w.write_record(&r).map_err(fail)?;
        }
        w.flush()
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
    }
}

pub fn run(args: &ReportArgs) -> Result<Outcome, CliError> {
    let files = transcript_files(&args.dir)?;
    create_dir(&args.out)?;
    let mut outcome = Outcome::default();
    let mut sessions = Vec::new();
    for path in &files {
        let r = load_session(path);
        outcome.record(&r);
        match r {
            Ok(s) => sessions.push(s),
            Err(e) => eprintln!("skipping: {e}"),
        }
    }
    let tables = Tables {
        out: args.out.clone(),
    };
    let groups = groups(&sessions);

    let mut rows = Vec::new();
    for s in &sessions {
        if let Some(report) = &s.salience {
            let mut row = vec![s.transcript.session_id().to_string(), s.variant.clone()];
            row.extend(salience_cells(report).iter().map(Milli::to_string));
            rows.push(row);
        }
    }
    tables.write(
        SALIENCE_SESSIONS,
        salience_header(&["session_id", "variant"]),
        rows,
    )?;

    let mut aggregate = Vec::new();
    for (group, members) in &groups {
        let reports: Vec<SalienceReport> =
            members.iter().filter_map(|s| s.salience.clone()).collect();
        if reports.is_empty() {
            continue;
        }
        let mean = SalienceReport::mean(group.clone(), &reports);
        aggregate.push((group.clone(), reports.len(), salience_cells(&mean)));
    }
    tables.write(
        SALIENCE_AGGREGATE,
        salience_header(&["group", "sessions"]),
        aggregate
            .iter()
            .map(|(g, n, cells)| {
                [g.clone(), n.to_string()]
                    .into_iter()
                    .chain(cells.iter().map(Milli::to_string))
                    .collect()
            })
            .collect(),
    )?;

    let mut dims = Vec::new();
    for (group, members) in &groups {
        let scored: Vec<&&Session> = members.iter().filter(|s| !s.scores.is_empty()).collect();
        if scored.is_empty() {
            continue;
        }
        let records: Vec<ScoreRecord> = scored
            .iter()
            .flat_map(|s| s.scores.iter().cloned())
            .collect();
        let means = dimension_means(&records);
        let mut row = vec![group.clone(), scored.len().to_string()];
        row.extend(Dimension::ALL.iter().map(|d| {
            means
                .get(d)
                .map_or_else(String::new, |m| format!("{:.2}", round_half_up(*m, 2)))
        }));
        let pairs: Vec<(Dimension, f64)> = means.iter().map(|(d, m)| (*d, *m)).collect();
        row.push(average_of(&pairs).map_or_else(|_| String::new(), |a| format!("{a:.2}")));
        dims.push(row);
    }
    let dim_header = ["group", "sessions"]
        .iter()
        .map(|s| s.to_string())
        .chain(Dimension::ALL.iter().map(|d| d.name().to_string()))
        .chain(["Avg".to_string()])
        .collect();
    tables.write(DIMENSIONS, dim_header, dims)?;

    let mut dist = Vec::new();
    for (group, members) in &groups {
        let counts = pooled_distribution(members.iter().map(|s| &s.transcript));
        let total: usize = counts.values().sum();
        for (state, n) in counts {
            dist.push(vec![
                group.clone(),
                state.stage().label().to_string(),
                state.level().name.to_string(),
                state.badge(),
                n.to_string(),
                format!("{:.6}", n as f64 / total as f64),
            ]);
        }
    }
    tables.write(
        STATE_DISTRIBUTION,
        ["group", "stage", "level", "badge", "turns", "fraction"]
            .map(String::from)
            .to_vec(),
        dist,
    )?;

    let mut traj = Vec::new();
    for s in &sessions {
        let Some(annotations) = &s.annotations else {
            continue;
        };
        for p in trajectory(annotations).points {
            let mut row = vec![
                s.transcript.session_id().to_string(),
                s.variant.clone(),
                p.turn.to_string(),
            ];
            row.extend(
                IMType::ALL
                    .iter()
                    .map(|t| u8::from(p.coded_types.contains(t)).to_string()),
            );
            row.push(u8::from(p.level1).to_string());
            row.push(u8::from(p.level2).to_string());
            traj.push(row);
        }
    }
    let traj_header = ["session_id", "variant", "turn"]
        .iter()
        .map(|s| s.to_string())
        .chain(IMType::ALL.iter().map(|t| t.label().to_string()))
        .chain(["level1".to_string(), "level2".to_string()])
        .collect();
    tables.write(TRAJECTORY, traj_header, traj)?;

    let words: Vec<Vec<String>> = sessions
        .iter()
        .map(|s| {
            let w: WordStats = word_stats(&s.transcript);
            vec![
                s.transcript.session_id().to_string(),
                s.variant.clone(),
                w.turns.to_string(),
                format!("{:.3}", w.client_mean),
                format!("{:.3}", w.therapist_mean),
            ]
        })
        .collect();
    tables.write(
        WORD_STATS,
        [
            "session_id",
            "variant",
            "turns",
            "client_mean",
            "therapist_mean",
        ]
        .map(String::from)
        .to_vec(),
        words,
    )?;

    print_salience(&aggregate);
    let annotated = sessions.iter().filter(|s| s.salience.is_some()).count();
    let scored = sessions.iter().filter(|s| !s.scores.is_empty()).count();
    println!(
        "report: {} sessions ({annotated} annotated, {scored} scored) -> {}",
        sessions.len(),
        args.out.display()
    );
    Ok(outcome)
}

fn print_salience(rows: &[(String, usize, Vec<Milli>)]) {
    if rows.is_empty() {
        return;
    }
    let header = salience_header(&["group", "n"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(g, n, cells)| {
            [g.clone(), n.to_string()]
                .into_iter()
                .chain(cells.iter().map(|c| format!("{c}%")))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            body.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    for row in std::iter::once(&header).chain(&body) {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        println!("{}", line.join("  "));
    }
}
