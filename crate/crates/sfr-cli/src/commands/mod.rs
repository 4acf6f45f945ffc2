//! The six experiment commands. Each command reads an [`ExperimentSpec`],
//! never mutates its inputs, and writes all artifacts under the chosen
//! output directory.

mod adapt;
mod cross_room;
mod pretrain;
mod report;
mod sweeps;

pub use adapt::{cmd_adapt, AdaptOutcome};
pub use cross_room::cmd_cross_room;
pub use pretrain::{cmd_pretrain, PretrainOutcome};
pub use report::cmd_report;
pub use sweeps::{cmd_sweep_mics, cmd_sweep_rank, DEFAULT_MIC_COUNTS, DEFAULT_RANKS};

use std::fs;
use std::path::Path;

use sfr_core::net::{
    build_network, pad_to_grid, sample_noise_input, DpNetwork, NetworkConfig, NoiseInput,
};
use sfr_core::signal::ImpulseResponseGrid;

use crate::error::{CliError, Result};
use crate::spec::ExperimentSpec;

/// Create the output directory (verifying it is writable) and return it.
fn prepare_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Build the scene's noise input, padded for the network depth.
fn noise_input(spec: &ExperimentSpec) -> Result<NoiseInput> {
    let pad = pad_to_grid(
        (spec.rir_length, spec.array.num_mics),
        spec.network.depth,
    );
    Ok(sample_noise_input(
        pad.padded.0,
        pad.padded.1,
        spec.network.input_channels,
        spec.noise.variance,
        spec.noise.seed,
    )?)
}

/// Fresh untrained network for the scene.
fn fresh_network(spec: &ExperimentSpec) -> Result<DpNetwork<f32>> {
    Ok(build_network::<f32>(&spec.network)?)
}

/// Error unless the checkpointed architecture matches the spec (seeds may
/// differ; the checkpoint carries the trained weights either way).
fn check_architecture(loaded: &NetworkConfig, expected: &NetworkConfig) -> Result<()> {
    let mut a = loaded.clone();
    let mut b = expected.clone();
    a.seed = 0;
    b.seed = 0;
    if a != b {
        return Err(CliError::invalid(format!(
            "checkpoint architecture {a:?} does not match the spec's {b:?}"
        )));
    }
    Ok(())
}

/// Shared result bundle for a finished fit.
pub(crate) struct FitArtifacts {
    pub record: sfr_core::train::TrainRecord,
    pub metrics: sfr_core::train::EvalMetrics,
}

/// Fit `net` on observations of `reference` under `mask`, then evaluate at
/// physical scale.
pub(crate) fn fit_and_eval(
    net: &mut DpNetwork<f32>,
    z: &NoiseInput,
    reference: &ImpulseResponseGrid,
    mask: &sfr_core::signal::SamplingMask,
    cfg: &sfr_core::train::TrainConfig,
) -> Result<FitArtifacts> {
    let obs = sfr_core::train::ObservationSet::from_reference(reference, mask)?;
    let record = sfr_core::train::fit(net, z, &obs, cfg)?;
    let metrics = sfr_core::train::evaluate_scaled(net, z, reference, mask, obs.amp_scale())?;
    Ok(FitArtifacts { record, metrics })
}
