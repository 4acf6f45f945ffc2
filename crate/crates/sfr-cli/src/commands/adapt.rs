//! `sfr adapt`: transfer a pretrained base model to the second source
//! position in scratch, full fine-tuning, or LoRA mode.

use std::path::Path;

use sfr_core::lora;
use sfr_core::net::DpNetwork;
use sfr_core::signal::make_random_mask;
use sfr_core::train::{TrainConfig, TrainMode};

use super::{check_architecture, fit_and_eval, fresh_network, noise_input, prepare_out_dir};
use crate::csvio::{self, AdaptSummaryRow};
use crate::error::{CliError, Result};
use crate::spec::{ExperimentSpec, Scenario};

pub const DEFAULT_LORA_RANK: usize = 16;

pub struct AdaptOutcome {
    pub net: DpNetwork<f32>,
    pub summary: AdaptSummaryRow,
}

/// Resolve the effective train config for an adaptation run.
fn adapt_config(spec: &ExperimentSpec, mode: TrainMode, rank: Option<usize>) -> TrainConfig {
    let mut cfg = spec.train.clone();
    cfg.mode = mode;
    if mode == TrainMode::Lora {
        cfg.rank = rank.or(cfg.rank).or(Some(DEFAULT_LORA_RANK));
    } else {
        cfg.rank = None;
        cfg.alpha = None;
    }
    cfg
}

/// Load the base model for ft/lora, or build a fresh one for scratch.
fn base_network(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    mode: TrainMode,
) -> Result<DpNetwork<f32>> {
    match mode {
        TrainMode::Scratch => {
            if checkpoint.is_some() {
                eprintln!("warning: scratch mode ignores --checkpoint");
            }
            fresh_network(spec)
        }
        TrainMode::FullFinetune | TrainMode::Lora => {
            let path = checkpoint.ok_or_else(|| {
                CliError::invalid(format!(
                    "{} mode requires --checkpoint with a pretrained base model",
                    mode.token()
                ))
            })?;
            let net = sfr_core::io::read_checkpoint(path)?;
            check_architecture(net.config(), &spec.network)?;
            Ok(net)
        }
    }
}

pub fn cmd_adapt(
    spec: &ExperimentSpec,
    checkpoint: Option<&Path>,
    mode: TrainMode,
    rank: Option<usize>,
    out: &Path,
) -> Result<AdaptOutcome> {
    if spec.scenario != Scenario::SingleRoomSourceMove {
        return Err(CliError::invalid(
            "adapt drives single_room_source_move specs; use `sfr cross-room` for multi-room",
        ));
    }
    if spec.sources.len() < 2 {
        return Err(CliError::invalid(
            "adapt needs a second source position in the spec",
        ));
    }
    prepare_out_dir(out)?;
    let room = spec.single_room()?;
    let reference = spec.ground_truth(room, 1)?;
    let mask = make_random_mask(
        spec.array.num_mics,
        spec.adapt_mask.m_tilde,
        spec.adapt_mask.seed,
    )?;
    let z = noise_input(spec)?;
    let cfg = adapt_config(spec, mode, rank);
    let mut net = base_network(spec, checkpoint, mode)?;

    let bundle_seed = cfg.seed;
    if mode == TrainMode::Lora {
        let bundle = lora::new_bundle(&net, cfg.rank.unwrap(), cfg.alpha, bundle_seed)?;
        lora::attach_adapters(&mut net, &bundle)?;
    }

    let arts = fit_and_eval(&mut net, &z, &reference, &mask, &cfg)?;
    let base_params = net.count_base_parameters();
    let trainable = arts.record.trainable_param_count;

    let token = mode.token().to_string();
    if mode == TrainMode::Lora {
        let bundle = lora::extract_bundle(&net, bundle_seed)?;
        sfr_core::io::write_adapters(&out.join(format!("adapt_{token}_adapters.srl")), &bundle)?;
    }

    let last = arts.record.rows.last().expect("fit yields at least one row");
    let summary = AdaptSummaryRow {
        mode: token.clone(),
        final_iteration: last.iteration as u64,
        l1_loss: last.l1_loss,
        full_nmse_db: arts.metrics.full_nmse_db,
        observed_nmse_db: arts.metrics.observed_nmse_db,
        unobserved_nmse_db: arts.metrics.unobserved_nmse_db,
        m_tilde: mask.len() as u64,
        rank: cfg.rank.map(|r| r as u64),
        alpha: if mode == TrainMode::Lora {
            Some(cfg.alpha.unwrap_or_else(|| lora::default_alpha(cfg.rank.unwrap())))
        } else {
            None
        },
        trainable_params: trainable as u64,
        trainable_fraction: trainable as f64 / base_params as f64,
        wall_time_s: arts.record.wall_time_s,
    };

    csvio::write_rows(
        &out.join(format!("adapt_{token}_trajectory.csv")),
        &csvio::trajectory_rows(&arts.record),
    )?;
    csvio::write_rows(&out.join(format!("adapt_{token}_summary.csv")), &[summary.clone()])?;

    println!(
        "adapt[{token}]: M~={} full {:.2} dB observed {:.2} dB | {} trainable params ({:.1}% of base)",
        summary.m_tilde,
        summary.full_nmse_db,
        summary.observed_nmse_db,
        summary.trainable_params,
        100.0 * summary.trainable_fraction
    );

    Ok(AdaptOutcome { net, summary })
}
