//! CSV files produced and consumed by the pipeline steps.

use std::path::Path;

use qevo::evolution::{IterationStats, SensitivityEntry, SensitivityRanking};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RankingRow {
    rank: usize,
    layer: String,
    metric: f64,
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    iteration: usize,
    best_fitness: f64,
    mean_fitness: f64,
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Core(qevo::Error::Parse {
            line: 0,
            message: format!("{}: {other:?}", path.display()),
        }),
    }
}

/// Writes `rank,layer,metric` rows, rank 1 first.
pub fn write_ranking(path: &Path, ranking: &SensitivityRanking) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for (i, e) in ranking.entries.iter().enumerate() {
        w.serialize(RankingRow {
            rank: i + 1,
            layer: e.layer.clone(),
            metric: e.metric,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_ranking(path: &Path) -> Result<SensitivityRanking> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut entries = Vec::new();
    for (i, row) in r.deserialize::<RankingRow>().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.rank != i + 1 {
            return Err(qevo::Error::Parse {
                line: i as u64 + 2,
                message: format!("expected rank {}, found {}", i + 1, row.rank),
            }
            .into());
        }
        entries.push(SensitivityEntry {
            layer: row.layer,
            metric: row.metric,
        });
    }
    Ok(SensitivityRanking { entries })
}

/// Writes `iteration,best_fitness,mean_fitness` rows.
pub fn write_history(path: &Path, history: &[IterationStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if history.is_empty() {
        w.write_record(["iteration", "best_fitness", "mean_fitness"])
            .map_err(|e| csv_err(path, e))?;
    }
    for s in history {
        w.serialize(HistoryRow {
            iteration: s.iteration,
            best_fitness: s.best,
            mean_fitness: s.mean,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
