//! JSON Lines metrics stream, one record per episode.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::agent::MetricsRecord;
use crate::error::{Error, Result};

pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
    flush_interval: usize,
    pending: usize,
    last_episode: Option<usize>,
}

impl MetricsWriter {
    /// Truncates any existing file.
    pub fn create(path: &Path, flush_interval: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            flush_interval: flush_interval.max(1),
            pending: 0,
            last_episode: None,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if self.last_episode.is_some_and(|e| record.episode <= e) {
            return Err(Error::InvalidArgument(format!(
                "metrics episode {} does not follow {}",
                record.episode,
                self.last_episode.unwrap_or(0)
            )));
        }
        let line =
            serde_json::to_string(record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.last_episode = Some(record.episode);
        self.pending += 1;
        if self.pending >= self.flush_interval {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.pending = 0;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Parses a metrics stream. Blank lines are skipped; line numbers are 1-based.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(line).map_err(|e| Error::MetricsLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if rec.episode <= prev.episode {
                return Err(Error::MetricsLine {
                    line: i + 1,
                    message: format!("episode {} does not follow {}", rec.episode, prev.episode),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}

#[cfg(test)]
pub(crate) fn sample_record(episode: usize) -> MetricsRecord {
    let x = episode as f64;
    MetricsRecord {
        episode,
        env_steps: (episode + 1) * 100,
        mean_intrinsic: 1.0 / (1.0 + x),
        max_intrinsic: 2.0 / (1.0 + x),
        extrinsic_return: 0.1 * x,
        goal_reach_rate: (0.1 * x).min(1.0),
        i_pred: -3.0 + x,
        i_nce: -2.0,
        i_upper: 5.0 - 0.1 * x,
        total_loss: 0.2,
        encoder_std: 0.5,
        coverage: 0.3,
        cumulative_coverage: 0.4,
        probe_bonus: 0.7,
        policy_entropy: 1.3,
        policy_loss: 0.01,
        value_loss: 0.02,
        wall_clock_ms: None,
    }
}
