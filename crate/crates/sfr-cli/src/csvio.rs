//! CSV row contracts shared by the commands and the report aggregator.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One optimizer-step record of a training run. NMSE cells are filled on
/// evaluation iterations only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub l1_loss: f64,
    pub observed_nmse_db: Option<f64>,
    pub full_nmse_db: Option<f64>,
}

/// Final metrics of a pretraining run. `wall_time_s` is the only
/// non-deterministic column and stays last so tooling can strip it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummaryRow {
    pub final_iteration: u64,
    pub l1_loss: f64,
    pub full_nmse_db: f64,
    pub observed_nmse_db: f64,
    pub unobserved_nmse_db: Option<f64>,
    pub nn_full_nmse_db: f64,
    pub nn_unobserved_nmse_db: Option<f64>,
    pub m_tilde: u64,
    pub trainable_params: u64,
    pub wall_time_s: f64,
}

/// Final metrics of an adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummaryRow {
    pub mode: String,
    pub final_iteration: u64,
    pub l1_loss: f64,
    pub full_nmse_db: f64,
    pub observed_nmse_db: f64,
    pub unobserved_nmse_db: Option<f64>,
    pub m_tilde: u64,
    pub rank: Option<u64>,
    pub alpha: Option<f64>,
    pub trainable_params: u64,
    pub trainable_fraction: f64,
    pub wall_time_s: f64,
}

/// One evaluation point of the rank sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRankRow {
    pub rank: u64,
    pub iteration: u64,
    pub nmse_db: f64,
    pub trainable_params: u64,
}

/// One cell of the microphone-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMicsRow {
    #[serde(rename = "M_tilde")]
    pub m_tilde: u64,
    pub mode: String,
    pub nmse_db: f64,
}

/// One cell of the cross-room transfer matrix. `kind` is `pretrain` for the
/// diagonal full-observation fits and `adapt` for transfer cells;
/// `lora_minus_best_db` is filled on lora rows with the gap to the best
/// competing mode in the same cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRoomRow {
    pub kind: String,
    pub pretrain_room: String,
    pub target_room: String,
    pub m_tilde: u64,
    pub mode: String,
    pub nmse_db: f64,
    pub lora_minus_best_db: Option<f64>,
}

/// Serialize rows (with a header) and write the file in one shot.
pub fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::invalid(format!("csv buffer: {e}")))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a whole CSV file into typed rows.
pub fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Trajectory rows of a training record, one per optimizer step.
pub fn trajectory_rows(record: &sfr_core::train::TrainRecord) -> Vec<TrajectoryRow> {
    record
        .rows
        .iter()
        .map(|r| TrajectoryRow {
            iteration: r.iteration as u64,
            l1_loss: r.l1_loss,
            observed_nmse_db: r.observed_nmse_db,
            full_nmse_db: r.full_nmse_db,
        })
        .collect()
}
