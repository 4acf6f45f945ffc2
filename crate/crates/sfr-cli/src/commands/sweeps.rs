//! `sfr sweep-rank` and `sfr sweep-mics`: LoRA rank sweep and
//! microphone-count sweep over a shared pretrained base model.

use std::fs;
use std::path::Path;

use sfr_core::lora;
use sfr_core::net::DpNetwork;
use sfr_core::signal::make_random_mask;
use sfr_core::train::TrainMode;

use super::adapt::DEFAULT_LORA_RANK;
use super::{check_architecture, cmd_pretrain, fit_and_eval, fresh_network, noise_input, prepare_out_dir};
use crate::csvio::{self, SweepMicsRow, SweepRankRow};
use crate::error::{CliError, Result};
use crate::render;
use crate::spec::{ExperimentSpec, Scenario};
use crate::workers::run_cells;

pub const DEFAULT_RANKS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const DEFAULT_MIC_COUNTS: [usize; 4] = [4, 8, 16, 32];

/// Load the base model from a checkpoint, or pretrain one into `out`.
fn base_model(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<DpNetwork<f32>> {
    match checkpoint {
        Some(path) => {
            let net = sfr_core::io::read_checkpoint(path)?;
            check_architecture(net.config(), &spec.network)?;
            Ok(net)
        }
        None => Ok(cmd_pretrain(spec, out)?.net),
    }
}

fn require_source_move(spec: &ExperimentSpec, what: &str) -> Result<()> {
    if spec.scenario != Scenario::SingleRoomSourceMove {
        return Err(CliError::invalid(format!(
            "{what} drives single_room_source_move specs; use `sfr cross-room` for multi-room"
        )));
    }
    if spec.sources.len() < 2 {
        return Err(CliError::invalid(
            "sweeps need a second source position in the spec",
        ));
    }
    Ok(())
}

pub fn cmd_sweep_rank(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    ranks: &[usize],
    out: &Path,
) -> Result<Vec<SweepRankRow>> {
    require_source_move(spec, "sweep-rank")?;
    if ranks.is_empty() {
        return Err(CliError::invalid("rank list must be nonempty"));
    }
    prepare_out_dir(out)?;
    let base = base_model(spec, checkpoint, out)?;
    let room = spec.single_room()?;
    let reference = spec.ground_truth(room, 1)?;
    let mask = make_random_mask(
        spec.array.num_mics,
        spec.adapt_mask.m_tilde,
        spec.adapt_mask.seed,
    )?;
    let z = noise_input(spec)?;

    let per_rank = run_cells(ranks.len(), |i| {
        let rank = ranks[i];
        let mut cfg = spec.train.clone();
        cfg.mode = TrainMode::Lora;
        cfg.rank = Some(rank);
        let mut net = base.clone();
        let bundle = lora::new_bundle(&net, rank, cfg.alpha, cfg.seed)?;
        lora::attach_adapters(&mut net, &bundle)?;
        let arts = fit_and_eval(&mut net, &z, &reference, &mask, &cfg)?;
        let rows: Vec<SweepRankRow> = arts
            .record
            .rows
            .iter()
            .filter(|r| r.full_nmse_db.is_some())
            .map(|r| SweepRankRow {
                rank: rank as u64,
                iteration: r.iteration as u64,
                nmse_db: r.full_nmse_db.unwrap(),
                trainable_params: arts.record.trainable_param_count as u64,
            })
            .collect();
        Ok(rows)
    })?;

    let rows: Vec<SweepRankRow> = per_rank.into_iter().flatten().collect();
    csvio::write_rows(&out.join("sweep_rank.csv"), &rows)?;
    fs::write(out.join("sweep_rank.svg"), render::sweep_rank_plot(&rows))?;
    for rank in ranks {
        let last = rows.iter().filter(|r| r.rank == *rank as u64).last().unwrap();
        println!(
            "sweep-rank: r={} final {:.2} dB ({} trainable params)",
            rank, last.nmse_db, last.trainable_params
        );
    }
    Ok(rows)
}

pub fn cmd_sweep_mics(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    counts: &[usize],
    out: &Path,
) -> Result<Vec<SweepMicsRow>> {
    require_source_move(spec, "sweep-mics")?;
    if counts.is_empty() {
        return Err(CliError::invalid("count list must be nonempty"));
    }
    for &c in counts {
        if c < 1 || c > spec.array.num_mics {
            return Err(CliError::invalid(format!(
                "count {c} outside 1..={}",
                spec.array.num_mics
            )));
        }
    }
    prepare_out_dir(out)?;
    let base = base_model(spec, checkpoint, out)?;
    let room = spec.single_room()?;
    let reference = spec.ground_truth(room, 1)?;
    let z = noise_input(spec)?;
    let modes = [TrainMode::Scratch, TrainMode::FullFinetune, TrainMode::Lora];

    // Cell (count, mode); the mask seed depends only on the count so all
    // three modes of a cell share the same observed channels.
    let cells = counts.len() * modes.len();
    let results = run_cells(cells, |idx| {
        let count = counts[idx / modes.len()];
        let mode = modes[idx % modes.len()];
        let mask = make_random_mask(
            spec.array.num_mics,
            count,
            spec.adapt_mask.seed.wrapping_add(count as u64),
        )?;
        let mut cfg = spec.train.clone();
        cfg.mode = mode;
        let mut net = match mode {
            TrainMode::Scratch => {
                cfg.rank = None;
                cfg.alpha = None;
                fresh_network(spec)?
            }
            TrainMode::FullFinetune => {
                cfg.rank = None;
                cfg.alpha = None;
                base.clone()
            }
            TrainMode::Lora => {
                cfg.rank = cfg.rank.or(Some(DEFAULT_LORA_RANK));
                let mut net = base.clone();
                let bundle = lora::new_bundle(&net, cfg.rank.unwrap(), cfg.alpha, cfg.seed)?;
                lora::attach_adapters(&mut net, &bundle)?;
                net
            }
        };
        let arts = fit_and_eval(&mut net, &z, &reference, &mask, &cfg)?;
        Ok(SweepMicsRow {
            m_tilde: count as u64,
            mode: mode.token().to_string(),
            nmse_db: arts.metrics.full_nmse_db,
        })
    })?;

    csvio::write_rows(&out.join("sweep_mics.csv"), &results)?;
    fs::write(out.join("sweep_mics.svg"), render::sweep_mics_plot(&results))?;
    for row in &results {
        println!(
            "sweep-mics: M~={} {} {:.2} dB",
            row.m_tilde, row.mode, row.nmse_db
        );
    }
    Ok(results)
}
