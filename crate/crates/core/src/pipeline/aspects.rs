use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geometry::AngleRad;
use crate::kalman::{estimate_aspect_series, segment_trajectory, HeadingMode, KfParams};
use crate::simulator::Dataset;

/// Leading steps of each filter segment whose estimates are not trusted.
pub const WARMUP_STEPS: usize = 2;

/// Conventional sidecar file name.
pub const ASPECT_PRED_FILE: &str = "aspect_pred.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AspectStatus {
    Ok,
    Warmup,
    Missing,
}

impl fmt::Display for AspectStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AspectStatus::Ok => "ok",
            AspectStatus::Warmup => "warmup",
            AspectStatus::Missing => "missing",
        })
    }
}

impl FromStr for AspectStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ok" => Ok(AspectStatus::Ok),
            "warmup" => Ok(AspectStatus::Warmup),
            "missing" => Ok(AspectStatus::Missing),
            _ => Err(format!("unknown aspect status '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectPred {
    pub aspect: Option<AngleRad>,
    pub status: AspectStatus,
}

/// Kalman settings for the predicted-aspect protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectEstimatorConfig {
    pub params: KfParams,
    pub max_gap: f64,
    pub mode: HeadingMode,
    /// When set, each record's estimate uses only the last `k` measurements
    /// of its segment instead of the whole causal history.
    pub context: Option<usize>,
}

/// Runs the causal estimator over every ship track, segment by segment, and
/// reads off each record's estimate at its trajectory row. Records in the
/// first [`WARMUP_STEPS`] steps of a segment are flagged `warmup`; records
/// whose track is absent or unusable are flagged `missing`.
pub fn predict_aspects(dataset: &Dataset, cfg: &AspectEstimatorConfig) -> Result<Vec<AspectPred>, PipelineError> {
    if cfg.context.is_some_and(|k| k < 2) {
        return Err(PipelineError::Config(
            "aspect context must be at least 2 measurements".into(),
        ));
    }
    let radar = dataset.manifest.radar;
    // Per ship, per trajectory row: (estimate, step within segment).
    type Row = Option<(Option<AngleRad>, usize)>;
    let mut per_ship: Vec<Vec<Row>> = Vec::new();
    for (ship, track) in dataset.trajectories.iter().enumerate() {
        let mut rows = vec![None; track.len()];
        if !track.is_empty() {
            let segments =
                segment_trajectory(track, cfg.max_gap).map_err(|e| PipelineError::Data(format!("ship {ship}: {e}")))?;
            let mut start = 0;
            for seg in segments {
                match cfg.context {
                    None => match estimate_aspect_series(seg, radar, &cfg.params, cfg.mode) {
                        Ok(est) => {
                            for (step, e) in est.iter().enumerate() {
                                rows[start + step] = Some((e.aspect, step));
                            }
                        }
                        Err(e) => log::debug!("ship {ship}: segment at row {start} skipped: {e}"),
                    },
                    Some(_) if seg.len() < 2 => {}
                    Some(k) => {
                        // A single measurement carries no heading.
                        rows[start] = Some((None, 0));
                        for step in 1..seg.len() {
                            let window = &seg[(step + 1).saturating_sub(k)..=step];
                            match estimate_aspect_series(window, radar, &cfg.params, cfg.mode) {
                                Ok(est) => rows[start + step] = Some((est[est.len() - 1].aspect, step)),
                                Err(e) => log::debug!("ship {ship}: row {} skipped: {e}", start + step),
                            }
                        }
                    }
                }
                start += seg.len();
            }
        }
        per_ship.push(rows);
    }
    Ok(dataset
        .manifest
        .records
        .iter()
        .map(|idx| {
            match per_ship
                .get(idx.ship_id)
                .and_then(|rows| rows.get(idx.row))
                .copied()
                .flatten()
            {
                Some((aspect, step)) if step < WARMUP_STEPS => AspectPred {
                    aspect,
                    status: AspectStatus::Warmup,
                },
                Some((Some(a), _)) => AspectPred {
                    aspect: Some(a),
                    status: AspectStatus::Ok,
                },
                _ => AspectPred {
                    aspect: None,
                    status: AspectStatus::Missing,
                },
            }
        })
        .collect())
}

/// Sets `aspect_pred` on every record flagged `ok` and clears it elsewhere.
pub fn apply_aspects(dataset: &mut Dataset, preds: &[AspectPred]) -> Result<(), PipelineError> {
    if preds.len() != dataset.records.len() {
        return Err(PipelineError::Data(format!(
            "{} aspect estimates for {} records",
            preds.len(),
            dataset.records.len()
        )));
    }
    for (r, p) in dataset.records.iter_mut().zip(preds) {
        r.aspect_pred = match p.status {
            AspectStatus::Ok => p.aspect,
            _ => None,
        };
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    index: usize,
    aspect_pred: Option<f64>,
    status: String,
}

/// `index,aspect_pred,status` with radians in shortest round-trip form and
/// an empty field when no estimate exists.
pub fn write_aspects_csv<W: Write>(w: W, preds: &[AspectPred]) -> Result<(), PipelineError> {
    let mut wr = csv::Writer::from_writer(w);
    for (index, p) in preds.iter().enumerate() {
        wr.serialize(Row {
            index,
            aspect_pred: p.aspect.map(|a| a.value()),
            status: p.status.to_string(),
        })
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    wr.flush().map_err(|e| PipelineError::Data(e.to_string()))
}

pub fn read_aspects_csv<R: Read>(r: R) -> Result<Vec<AspectPred>, PipelineError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| PipelineError::Data(format!("aspect sidecar row {}: {e}", i + 2)))?;
        if row.index != i {
            return Err(PipelineError::Data(format!(
                "aspect sidecar row {}: index {} out of sequence",
                i + 2,
                row.index
            )));
        }
        let status: AspectStatus = row.status.parse().map_err(PipelineError::Data)?;
        let aspect = row
            .aspect_pred
            .map(AngleRad::new)
            .transpose()
            .map_err(|e| PipelineError::Data(format!("aspect sidecar row {}: {e}", i + 2)))?;
        out.push(AspectPred { aspect, status });
    }
    Ok(out)
}
