use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("history is empty")]
    Empty,
    #[error("history I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("history line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Losses and accuracies after one epoch, both measured in inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Renders the history CSV. Floats use the shortest representation that
/// round-trips exactly.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        ));
    }
    out
}

pub fn export_history(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), HistoryError> {
    if records.is_empty() {
        return Err(HistoryError::Empty);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(history_csv(records).as_bytes())?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>, HistoryError> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines();
    if lines.next() != Some(HEADER) {
        return Err(HistoryError::Parse {
            line: 1,
            message: format!("expected header `{HEADER}`"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let err = |message: String| HistoryError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| err(e.to_string()));
        records.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            train_loss: float(fields[1])?,
            train_accuracy: float(fields[2])?,
            val_loss: float(fields[3])?,
            val_accuracy: float(fields[4])?,
        });
    }
    if records.is_empty() {
        return Err(HistoryError::Empty);
    }
    Ok(records)
}
