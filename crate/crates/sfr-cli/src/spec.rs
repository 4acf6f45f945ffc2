//! Experiment specification files: JSON documents mirroring [`ExperimentSpec`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfr_core::net::NetworkConfig;
use sfr_core::room::{simulate_rir, ArrayGeometry, RoomSpec, SourceSpec};
use sfr_core::signal::ImpulseResponseGrid;
use sfr_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Which experimental protocol the spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// One room, two source positions: pretrain on the first, adapt to the
    /// second.
    SingleRoomSourceMove,
    /// Several rooms with one source each: pretrain per room, adapt across
    /// room pairs.
    MultiRoom,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::SingleRoomSourceMove => write!(f, "single_room_source_move"),
            Scenario::MultiRoom => write!(f, "multi_room"),
        }
    }
}

fn default_reflection_order() -> usize {
    16
}

fn default_speed_of_sound() -> f64 {
    RoomSpec::DEFAULT_SPEED_OF_SOUND
}

fn default_noise_variance() -> f64 {
    0.1
}

/// Shoebox room description as written in spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomFile {
    /// Identifier used in cross-room result tables; required for multi-room
    /// scenarios.
    #[serde(default)]
    pub name: String,
    pub dimensions_m: [f64; 3],
    pub t60_s: f64,
    #[serde(default = "default_reflection_order")]
    pub max_reflection_order: usize,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound_mps: f64,
}

impl RoomFile {
    pub fn build(&self) -> Result<RoomSpec> {
        Ok(RoomSpec::new(
            self.dimensions_m,
            self.t60_s,
            self.max_reflection_order,
            self.speed_of_sound_mps,
        )?)
    }
}

/// Source position plus an optional pre-rendered ground-truth grid. When
/// `rir_file` is set the grid is loaded from disk instead of simulated;
/// relative paths resolve against the spec file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub position_m: [f64; 3],
    #[serde(default)]
    pub rir_file: Option<PathBuf>,
}

impl SourceFile {
    pub fn build(&self) -> Result<SourceSpec> {
        Ok(SourceSpec::new(self.position_m)?)
    }
}

/// Uniform linear microphone array as written in spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayFile {
    pub first_mic_position_m: [f64; 3],
    pub axis_unit_vector: [f64; 3],
    pub num_mics: usize,
    pub spacing_m: f64,
}

impl ArrayFile {
    pub fn build(&self) -> Result<ArrayGeometry> {
        Ok(ArrayGeometry::new(
            self.first_mic_position_m,
            self.axis_unit_vector,
            self.num_mics,
            self.spacing_m,
        )?)
    }
}

/// Channel-subsampling parameters: how many microphones are observed and the
/// seed of the uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub m_tilde: usize,
    pub seed: u64,
}

/// Network input noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_variance")]
    pub variance: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A complete experiment description. Spec files are JSON documents with
/// exactly this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    /// The room for single-room scenarios.
    #[serde(default)]
    pub room: Option<RoomFile>,
    /// The rooms for multi-room scenarios.
    #[serde(default)]
    pub rooms: Vec<RoomFile>,
    /// Source positions; multi-room scenarios pair `sources[i]` with
    /// `rooms[i]`.
    pub sources: Vec<SourceFile>,
    pub array: ArrayFile,
    pub sample_rate_hz: f64,
    /// Grid length N in samples.
    pub rir_length: usize,
    /// Measurement-chain bandwidth: simulated ground truth is low-passed at
    /// this cutoff (zero-phase). Omitted means full-band impulse responses;
    /// grids loaded from `rir_file` are used as-is either way.
    #[serde(default)]
    pub lowpass_hz: Option<f64>,
    pub network: NetworkConfig,
    pub noise: NoiseSpec,
    pub pretrain_mask: MaskSpec,
    pub adapt_mask: MaskSpec,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Directory the spec file was loaded from; resolves relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentSpec {
    /// Load and validate a spec file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Spec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut spec: ExperimentSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Spec {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        spec.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        spec.validate().map_err(|e| CliError::Spec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(CliError::invalid(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.rir_length < 1 {
            return Err(CliError::invalid("rir_length must be at least 1"));
        }
        if !(self.noise.variance.is_finite() && self.noise.variance > 0.0) {
            return Err(CliError::invalid(format!(
                "noise variance must be positive, got {}",
                self.noise.variance
            )));
        }
        if let Some(cutoff) = self.lowpass_hz {
            if !(cutoff.is_finite() && cutoff > 0.0 && cutoff < self.sample_rate_hz / 2.0) {
                return Err(CliError::invalid(format!(
                    "lowpass_hz {cutoff} outside (0, Nyquist)"
                )));
            }
        }
        self.network.validate()?;
        self.train.validate()?;
        self.array.build()?;
        let m = self.array.num_mics;
        for (label, mask) in [("pretrain_mask", self.pretrain_mask), ("adapt_mask", self.adapt_mask)] {
            if mask.m_tilde < 1 || mask.m_tilde > m {
                return Err(CliError::invalid(format!(
                    "{label}.m_tilde must lie in 1..={m}, got {}",
                    mask.m_tilde
                )));
            }
        }
        match self.scenario {
            Scenario::SingleRoomSourceMove => {
                let room = self.room.as_ref().ok_or_else(|| {
                    CliError::invalid("single_room_source_move requires a `room` entry")
                })?;
                room.build()?;
                if !self.rooms.is_empty() {
                    return Err(CliError::invalid(
                        "single_room_source_move takes `room`, not `rooms`",
                    ));
                }
                if self.sources.is_empty() {
                    return Err(CliError::invalid("at least one source is required"));
                }
            }
            Scenario::MultiRoom => {
                if self.room.is_some() {
                    return Err(CliError::invalid("multi_room takes `rooms`, not `room`"));
                }
                if self.rooms.len() < 2 {
                    return Err(CliError::invalid("multi_room requires at least two rooms"));
                }
                if self.sources.len() != self.rooms.len() {
                    return Err(CliError::invalid(format!(
                        "multi_room pairs one source per room: {} rooms but {} sources",
                        self.rooms.len(),
                        self.sources.len()
                    )));
                }
                let mut names: Vec<&str> = Vec::new();
                for room in &self.rooms {
                    room.build()?;
                    if room.name.is_empty() {
                        return Err(CliError::invalid("multi_room rooms need unique names"));
                    }
                    if names.contains(&room.name.as_str()) {
                        return Err(CliError::invalid(format!(
                            "duplicate room name {:?}",
                            room.name
                        )));
                    }
                    names.push(&room.name);
                }
            }
        }
        for source in &self.sources {
            source.build()?;
            if let Some(rel) = &source.rir_file {
                let path = self.resolve(rel);
                if !path.is_file() {
                    return Err(CliError::invalid(format!(
                        "referenced ground-truth grid {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolve a possibly-relative path against the spec file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The single room of a source-move scenario.
    pub fn single_room(&self) -> Result<&RoomFile> {
        self.room
            .as_ref()
            .ok_or_else(|| CliError::invalid("spec has no `room` entry"))
    }

    pub fn source(&self, index: usize) -> Result<&SourceFile> {
        self.sources.get(index).ok_or_else(|| {
            CliError::invalid(format!(
                "scenario needs source index {index} but the spec lists only {}",
                self.sources.len()
            ))
        })
    }

    /// Ground truth for `sources[index]` in `room`: loaded from `rir_file`
    /// when given, otherwise simulated with the image-source model.
    pub fn ground_truth(&self, room: &RoomFile, index: usize) -> Result<ImpulseResponseGrid> {
        let source = self.source(index)?;
        if let Some(rel) = &source.rir_file {
            let path = self.resolve(rel);
            let grid = sfr_core::io::read_grid(&path)?;
            if grid.n() != self.rir_length || grid.m() != self.array.num_mics {
                return Err(CliError::invalid(format!(
                    "grid {} is {}x{} but the spec expects {}x{}",
                    path.display(),
                    grid.n(),
                    grid.m(),
                    self.rir_length,
                    self.array.num_mics
                )));
            }
            if grid.sample_rate_hz() != self.sample_rate_hz {
                return Err(CliError::invalid(format!(
                    "grid {} sampled at {} Hz but the spec expects {} Hz",
                    path.display(),
                    grid.sample_rate_hz(),
                    self.sample_rate_hz
                )));
            }
            return Ok(grid);
        }
        let mut grid = simulate_rir(
            &room.build()?,
            &source.build()?,
            &self.array.build()?,
            self.sample_rate_hz,
            self.rir_length,
        )?;
        if let Some(cutoff) = self.lowpass_hz {
            grid = sfr_core::signal::bandlimit(&grid, cutoff)?;
        }
        let label = if room.name.is_empty() {
            format!("sim src{index}")
        } else {
            format!("sim {} src{index}", room.name)
        };
        Ok(grid.with_label(label))
    }
}
