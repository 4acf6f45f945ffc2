//! `sfr pretrain`: fit a scratch deep prior on the pretraining mask of the
//! first source and persist the trained base model.

use std::path::{Path, PathBuf};

use sfr_core::net::DpNetwork;
use sfr_core::signal::{make_random_mask, nmse, nmse_over_channels, SamplingMask};
use sfr_core::train::{baseline_nearest_neighbor, ObservationSet, TrainMode};

use super::{fit_and_eval, fresh_network, noise_input, prepare_out_dir};
use crate::csvio::{self, PretrainSummaryRow};
use crate::error::Result;
use crate::spec::{ExperimentSpec, Scenario};

/// Everything a caller might want to reuse after pretraining: the trained
/// network stays in memory so sweeps can fork it without re-reading the
/// checkpoint.
pub struct PretrainOutcome {
    pub net: DpNetwork<f32>,
    pub mask: SamplingMask,
    pub summary: PretrainSummaryRow,
    pub checkpoint_path: PathBuf,
}

pub fn cmd_pretrain(spec: &ExperimentSpec, out: &Path) -> Result<PretrainOutcome> {
    if spec.scenario != Scenario::SingleRoomSourceMove {
        return Err(crate::error::CliError::invalid(
            "pretrain drives single_room_source_move specs; use `sfr cross-room` for multi-room",
        ));
    }
    prepare_out_dir(out)?;
    let room = spec.single_room()?;
    let reference = spec.ground_truth(room, 0)?;
    let mask = make_random_mask(
        spec.array.num_mics,
        spec.pretrain_mask.m_tilde,
        spec.pretrain_mask.seed,
    )?;
    let z = noise_input(spec)?;
    let mut net = fresh_network(spec)?;

    let mut cfg = spec.train.clone();
    cfg.mode = TrainMode::Scratch;
    cfg.rank = None;
    cfg.alpha = None;

    let arts = fit_and_eval(&mut net, &z, &reference, &mask, &cfg)?;

    let obs = ObservationSet::from_reference(&reference, &mask)?;
    let nn = baseline_nearest_neighbor(&obs)?;
    let nn_full = nmse(&nn, &reference)?;
    let complement = mask.complement();
    let nn_unobserved = if complement.is_empty() {
        None
    } else {
        Some(nmse_over_channels(&nn, &reference, &complement)?)
    };

    let last = arts.record.rows.last().expect("fit yields at least one row");
    let summary = PretrainSummaryRow {
        final_iteration: last.iteration as u64,
        l1_loss: last.l1_loss,
        full_nmse_db: arts.metrics.full_nmse_db,
        observed_nmse_db: arts.metrics.observed_nmse_db,
        unobserved_nmse_db: arts.metrics.unobserved_nmse_db,
        nn_full_nmse_db: nn_full,
        nn_unobserved_nmse_db: nn_unobserved,
        m_tilde: mask.len() as u64,
        trainable_params: arts.record.trainable_param_count as u64,
        wall_time_s: arts.record.wall_time_s,
    };

    csvio::write_rows(
        &out.join("pretrain_trajectory.csv"),
        &csvio::trajectory_rows(&arts.record),
    )?;
    csvio::write_rows(&out.join("pretrain_summary.csv"), &[summary.clone()])?;
    let checkpoint_path = out.join("pretrain_checkpoint.srk");
    sfr_core::io::write_checkpoint(&checkpoint_path, &net)?;

    println!(
        "pretrain: M~={} full {:.2} dB observed {:.2} dB ({} iterations, {} trainable params)",
        summary.m_tilde,
        summary.full_nmse_db,
        summary.observed_nmse_db,
        summary.final_iteration,
        summary.trainable_params
    );

    Ok(PretrainOutcome { net, mask, summary, checkpoint_path })
}
