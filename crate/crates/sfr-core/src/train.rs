//! Optimization loop for the deep-prior reconstruction.
//!
//! The network is fitted to the sparse observations with a masked ℓ1 loss and
//! AdamW. Three modes exist: training from scratch, full fine-tuning of a
//! pretrained base, and low-rank adaptation where only attached adapter
//! factors move. Evaluation (NMSE against a held-out reference) is strictly
//! read-only: it never touches parameters, optimizer state, or randomness, so
//! deleting the reference from an [`ObservationSet`] changes no trained value.
//!
//! Amplitude handling: the observation amplitude `amp_scale = max |observed|`
//! is divided out of the training target and multiplied back into the network
//! output at evaluation time, so reported NMSE values always refer to the
//! original physical scale.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfrError};
use crate::net::{pad_to_grid, DpNetwork, NoiseInput};
use crate::signal::{
    apply_sampling, channel_ratios, nmse, ratio_to_db, ImpulseResponseGrid, SamplingMask,
};
use crate::tensor::Tensor;

/// Which parameter set the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Random initialization, all base parameters trained.
    #[serde(rename = "scratch")]
    Scratch,
    /// Pretrained base, all base parameters trained.
    #[serde(rename = "ft")]
    FullFinetune,
    /// Pretrained base frozen, only attached adapter factors trained.
    #[serde(rename = "lora")]
    Lora,
}

impl TrainMode {
    /// Canonical CLI/CSV token for this mode.
    pub fn token(&self) -> &'static str {
        match self {
            TrainMode::Scratch => "scratch",
            TrainMode::FullFinetune => "ft",
            TrainMode::Lora => "lora",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TrainMode {
    type Err = SfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(TrainMode::Scratch),
            "ft" => Ok(TrainMode::FullFinetune),
            "lora" => Ok(TrainMode::Lora),
            other => Err(SfrError::InvalidArgument(format!(
                "unknown training mode '{other}' (expected scratch, ft, or lora)"
            ))),
        }
    }
}

/// Hyperparameters for one [`fit`] run. Serialized fields fall back to the
/// paper defaults when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// AdamW step size.
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Number of optimizer steps; must be at least 1.
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    /// Decoupled weight decay, applied to every trained parameter.
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Adapter rank; required in lora mode and forbidden otherwise.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Adapter scale override; `None` selects the rank-derived default.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Seed for run-scoped randomness (noise input, masks, adapter init).
    #[serde(default)]
    pub seed: u64,
    /// Evaluate NMSE every this many iterations (and always at the end).
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn iterations() -> usize {
        500
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn eval_every() -> usize {
        50
    }
}

impl TrainConfig {
    /// Paper defaults for the given mode; `rank`/`alpha` stay unset.
    pub fn default_for(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            learning_rate: defaults::learning_rate(),
            iterations: defaults::iterations(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            epsilon: defaults::epsilon(),
            weight_decay: defaults::weight_decay(),
            rank: None,
            alpha: None,
            seed: 0,
            eval_every: defaults::eval_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SfrError::InvalidArgument(
                "iterations must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(SfrError::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "weight decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        if self.eval_every == 0 {
            return Err(SfrError::InvalidArgument(
                "eval_every must be at least 1".into(),
            ));
        }
        match (self.mode, self.rank) {
            (TrainMode::Lora, None) => {
                return Err(SfrError::InvalidArgument(
                    "lora mode requires a rank".into(),
                ));
            }
            (TrainMode::Lora, Some(0)) => {
                return Err(SfrError::InvalidArgument(
                    "adapter rank must be at least 1".into(),
                ));
            }
            (TrainMode::Scratch | TrainMode::FullFinetune, Some(r)) => {
                return Err(SfrError::InvalidArgument(format!(
                    "rank {r} given but mode {} trains base parameters",
                    self.mode
                )));
            }
            _ => {}
        }
        if let Some(alpha) = self.alpha {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(SfrError::InvalidArgument(format!(
                    "alpha must be positive and finite, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::default_for(TrainMode::Scratch)
    }
}

/// Sparse observations of a sound field, plus optional held-out reference.
///
/// `observed` holds one column per selected channel (N × M̃); `mask` records
/// which of the M grid channels those columns are. The `amp_scale` is the
/// maximum absolute observed sample (1.0 for all-zero observations) and is
/// used to normalize the training target.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    observed: ImpulseResponseGrid,
    mask: SamplingMask,
    full_reference: Option<ImpulseResponseGrid>,
    amp_scale: f64,
}

impl ObservationSet {
    pub fn new(
        observed: ImpulseResponseGrid,
        mask: SamplingMask,
        full_reference: Option<ImpulseResponseGrid>,
    ) -> Result<Self> {
        if observed.m() != mask.len() {
            return Err(SfrError::ShapeMismatch(format!(
                "observed grid has {} channels but the mask selects {}",
                observed.m(),
                mask.len()
            )));
        }
        if let Some(reference) = &full_reference {
            if reference.n() != observed.n() || reference.m() != mask.total_channels() {
                return Err(SfrError::ShapeMismatch(format!(
                    "reference {}x{} does not cover a {}-sample, {}-channel grid",
                    reference.n(),
                    reference.m(),
                    observed.n(),
                    mask.total_channels()
                )));
            }
            if reference.sample_rate_hz() != observed.sample_rate_hz() {
                return Err(SfrError::SampleRateMismatch(
                    observed.sample_rate_hz(),
                    reference.sample_rate_hz(),
                ));
            }
        }
        let peak = observed.max_abs();
        let amp_scale = if peak > 0.0 { peak } else { 1.0 };
        Ok(ObservationSet {
            observed,
            mask,
            full_reference,
            amp_scale,
        })
    }

    /// Carve the masked channels out of a full reference grid, keeping the
    /// reference for evaluation.
    pub fn from_reference(reference: &ImpulseResponseGrid, mask: &SamplingMask) -> Result<Self> {
        let observed = apply_sampling(reference, mask)?;
        ObservationSet::new(observed, mask.clone(), Some(reference.clone()))
    }

    /// Same observations with the held-out reference removed.
    pub fn without_reference(mut self) -> Self {
        self.full_reference = None;
        self
    }

    pub fn observed(&self) -> &ImpulseResponseGrid {
        &self.observed
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn full_reference(&self) -> Option<&ImpulseResponseGrid> {
        self.full_reference.as_ref()
    }

    pub fn amp_scale(&self) -> f64 {
        self.amp_scale
    }

    /// Samples per channel.
    pub fn n(&self) -> usize {
        self.observed.n()
    }

    /// Channels in the full grid (observed and unobserved).
    pub fn total_channels(&self) -> usize {
        self.mask.total_channels()
    }
}

/// Mean absolute error between a full-grid prediction and the observations,
/// taken over observed channels only (Eq. 4 of the reconstruction objective).
///
/// Values are compared at their raw physical scale; the amplitude
/// normalization used inside [`fit`] is an internal detail.
pub fn masked_l1_loss(prediction: &ImpulseResponseGrid, obs: &ObservationSet) -> Result<f64> {
    if prediction.n() != obs.n() || prediction.m() != obs.total_channels() {
        return Err(SfrError::ShapeMismatch(format!(
            "prediction {}x{} vs expected {}x{}",
            prediction.n(),
            prediction.m(),
            obs.n(),
            obs.total_channels()
        )));
    }
    let mut total = 0.0f64;
    for (ci, &j) in obs.mask.indices().iter().enumerate() {
        let pred = prediction.channel(j);
        let seen = obs.observed.channel(ci);
        for (p, o) in pred.iter().zip(seen.iter()) {
            total += (p - o).abs();
        }
    }
    Ok(total / (obs.n() * obs.mask.len()) as f64)
}

/// One row of the training trajectory.
///
/// `l1_loss` is the masked training loss (amplitude-normalized) measured at
/// the top of iteration `iteration`, i.e. the value the step descends.
/// NMSE entries are present on evaluation iterations and measure the network
/// state *after* the step, via a fresh forward pass at physical scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    /// 1-based optimizer step index.
    pub iteration: usize,
    pub l1_loss: f64,
    pub observed_nmse_db: Option<f64>,
    pub full_nmse_db: Option<f64>,
}

/// Outcome of a [`fit`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub rows: Vec<TrainRow>,
    /// Number of parameters the optimizer touched.
    pub trainable_param_count: usize,
    /// Wall-clock duration of the loop in seconds (not deterministic).
    pub wall_time_s: f64,
}

/// Evaluation metrics of a reconstruction against a full reference grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// NMSE over all channels, in dB.
    pub full_nmse_db: f64,
    /// NMSE aggregated over the observed channels only.
    pub observed_nmse_db: f64,
    /// NMSE over the unobserved channels; `None` when the mask covers
    /// every channel.
    pub unobserved_nmse_db: Option<f64>,
    /// Per-channel NMSE, indexed by grid channel.
    pub per_channel_db: Vec<f64>,
}

/// Fit the network to the observations with AdamW under a masked ℓ1 loss.
///
/// Preconditions: the noise input must already be padded to the grid
/// dimensions (see [`pad_to_grid`]), and the network's adapter state must
/// match `cfg.mode` — adapters attached for lora, absent otherwise. The
/// optimizer starts from fresh state on every call; there is no learning-rate
/// schedule. A non-finite loss aborts with [`SfrError::TrainingDiverged`].
pub fn fit(
    net: &mut DpNetwork<f32>,
    z: &NoiseInput,
    obs: &ObservationSet,
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    cfg.validate()?;
    let lora_mode = cfg.mode == TrainMode::Lora;
    if lora_mode {
        if !net.is_adapted() {
            return Err(SfrError::InvalidArgument(
                "lora mode requires attached adapters".into(),
            ));
        }
        let mut attached_rank = None;
        net.visit_convs(&mut |c| {
            if let Some(state) = &c.adapter {
                attached_rank.get_or_insert(state.rank);
            }
        });
        if attached_rank != cfg.rank {
            return Err(SfrError::InvalidArgument(format!(
                "configured rank {:?} does not match attached rank {:?}",
                cfg.rank, attached_rank
            )));
        }
    } else if net.is_adapted() {
        return Err(SfrError::InvalidArgument(format!(
            "mode {} trains base parameters; detach adapters first",
            cfg.mode
        )));
    }

    let n = obs.n();
    let m = obs.total_channels();
    let pad = pad_to_grid((n, m), net.config().depth);
    if (z.n(), z.m()) != pad.padded {
        return Err(SfrError::ShapeMismatch(format!(
            "noise input is {}x{} but the {}x{} grid pads to {}x{}",
            z.n(),
            z.m(),
            n,
            m,
            pad.padded.0,
            pad.padded.1
        )));
    }
    if z.channels() != net.config().input_channels {
        return Err(SfrError::ShapeMismatch(format!(
            "noise input has {} channels, network expects {}",
            z.channels(),
            net.config().input_channels
        )));
    }

    // Map grid channel -> observed column, and pre-scale the target.
    let mut observed_col = vec![None; m];
    for (ci, &j) in obs.mask.indices().iter().enumerate() {
        observed_col[j] = Some(ci);
    }
    let scale = obs.amp_scale();
    let count = (n * obs.mask.len()) as f64;
    let grad_unit = (1.0 / count) as f32;

    let x = z.to_tensor::<f32>();

    let mut trainable = 0usize;
    net.visit_params(&mut |_, kind, data| {
        if kind.is_base() != lora_mode {
            trainable += data.len();
        }
    });
    let mut moment1 = vec![0.0f64; trainable];
    let mut moment2 = vec![0.0f64; trainable];

    let mut rows = Vec::with_capacity(cfg.iterations);
    let started = Instant::now();
    for t in 1..=cfg.iterations {
        net.zero_grads();
        let y = net.forward_tensor(&x, true)?;
        let (ph, pw) = (y.height(), y.width());
        let mut dy = Tensor::<f32>::zeros(y.channels(), ph, pw);
        let mut loss = 0.0f64;
        {
            let yc = y.channel(0);
            let dyc = dy.channel_mut(0);
            for (j, col) in observed_col.iter().enumerate() {
                let Some(ci) = col else { continue };
                let seen = obs.observed.channel(*ci);
                for i in 0..n {
                    let idx = i * pw + j;
                    let e = yc[idx] as f64 - seen[i] / scale;
                    loss += e.abs();
                    dyc[idx] = if e > 0.0 {
                        grad_unit
                    } else if e < 0.0 {
                        -grad_unit
                    } else {
                        0.0
                    };
                }
            }
            loss /= count;
        }
        if !loss.is_finite() {
            net.clear_caches();
            return Err(SfrError::TrainingDiverged { iteration: t, loss });
        }
        net.backward(&dy);

        // AdamW with decoupled weight decay over the trainable set.
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut offset = 0usize;
        net.visit_params_mut(&mut |_, kind, data, grad| {
            if kind.is_base() == lora_mode {
                return;
            }
            for (p, g) in data.iter_mut().zip(grad.iter()) {
                let g = *g as f64;
                let slot = offset;
                offset += 1;
                moment1[slot] = cfg.beta1 * moment1[slot] + (1.0 - cfg.beta1) * g;
                moment2[slot] = cfg.beta2 * moment2[slot] + (1.0 - cfg.beta2) * g * g;
                let m_hat = moment1[slot] / bc1;
                let v_hat = moment2[slot] / bc2;
                let p64 = *p as f64;
                *p = (p64
                    - cfg.learning_rate
                        * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * p64))
                    as f32;
            }
        });
        debug_assert_eq!(offset, trainable);

        let mut observed_nmse_db = None;
        let mut full_nmse_db = None;
        if t % cfg.eval_every == 0 || t == cfg.iterations {
            let estimate = cropped_estimate(
                net,
                &x,
                n,
                m,
                obs.observed.sample_rate_hz(),
                obs.observed.channel_spacing_m(),
                scale,
            )?;
            let sampled = apply_sampling(&estimate, &obs.mask)?;
            observed_nmse_db = Some(nmse(&sampled, &obs.observed)?);
            if let Some(reference) = &obs.full_reference {
                full_nmse_db = Some(nmse(&estimate, reference)?);
            }
        }
        rows.push(TrainRow {
            iteration: t,
            l1_loss: loss,
            observed_nmse_db,
            full_nmse_db,
        });
    }
    net.clear_caches();

    Ok(TrainRecord {
        rows,
        trainable_param_count: trainable,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Forward pass cropped to the original grid and rescaled to physical units.
fn cropped_estimate(
    net: &mut DpNetwork<f32>,
    x: &Tensor<f32>,
    n: usize,
    m: usize,
    sample_rate_hz: f64,
    channel_spacing_m: f64,
    scale: f64,
) -> Result<ImpulseResponseGrid> {
    let y = net.forward_tensor(x, false)?;
    let pw = y.width();
    let yc = y.channel(0);
    let mut samples = Vec::with_capacity(n * m);
    for j in 0..m {
        for i in 0..n {
            samples.push(yc[i * pw + j] as f64 * scale);
        }
    }
    ImpulseResponseGrid::new(samples, n, m, sample_rate_hz, channel_spacing_m, "dp-estimate")
}

/// Evaluate the current network against a full reference grid.
///
/// The network output is compared as-is; use [`evaluate_scaled`] to undo the
/// amplitude normalization applied during [`fit`]. The noise input must pad
/// to the reference dimensions. Evaluation mutates nothing but forward-pass
/// scratch space.
pub fn evaluate(
    net: &mut DpNetwork<f32>,
    z: &NoiseInput,
    reference: &ImpulseResponseGrid,
    mask: &SamplingMask,
) -> Result<EvalMetrics> {
    evaluate_scaled(net, z, reference, mask, 1.0)
}

/// [`evaluate`] with the network output multiplied by `amp_scale` first.
pub fn evaluate_scaled(
    net: &mut DpNetwork<f32>,
    z: &NoiseInput,
    reference: &ImpulseResponseGrid,
    mask: &SamplingMask,
    amp_scale: f64,
) -> Result<EvalMetrics> {
    if !(amp_scale.is_finite() && amp_scale > 0.0) {
        return Err(SfrError::InvalidArgument(format!(
            "amplitude scale must be positive and finite, got {amp_scale}"
        )));
    }
    let (refn, refm) = (reference.n(), reference.m());
    if mask.total_channels() != refm {
        return Err(SfrError::ShapeMismatch(format!(
            "mask covers {} channels, reference has {}",
            mask.total_channels(),
            refm
        )));
    }
    let pad = pad_to_grid((refn, refm), net.config().depth);
    if (z.n(), z.m()) != pad.padded {
        return Err(SfrError::ShapeMismatch(format!(
            "noise input is {}x{} but the {}x{} reference pads to {}x{}",
            z.n(),
            z.m(),
            refn,
            refm,
            pad.padded.0,
            pad.padded.1
        )));
    }
    let x = z.to_tensor::<f32>();
    let estimate = cropped_estimate(
        net,
        &x,
        refn,
        refm,
        reference.sample_rate_hz(),
        reference.channel_spacing_m(),
        amp_scale,
    )?;
    let ratios = channel_ratios(&estimate, reference)?;
    let mean = |idx: &[usize]| -> f64 {
        idx.iter().map(|&j| ratios[j]).sum::<f64>() / idx.len() as f64
    };
    let all: Vec<usize> = (0..refm).collect();
    let complement = mask.complement();
    Ok(EvalMetrics {
        full_nmse_db: ratio_to_db(mean(&all)),
        observed_nmse_db: ratio_to_db(mean(mask.indices())),
        unobserved_nmse_db: if complement.is_empty() {
            None
        } else {
            Some(ratio_to_db(mean(&complement)))
        },
        per_channel_db: ratios.iter().map(|&r| ratio_to_db(r)).collect(),
    })
}

/// Fill every unobserved channel with its nearest observed channel
/// (ties break toward the lower channel index).
pub fn baseline_nearest_neighbor(obs: &ObservationSet) -> Result<ImpulseResponseGrid> {
    let indices = obs.mask.indices();
    let n = obs.n();
    let m = obs.total_channels();
    let mut samples = Vec::with_capacity(n * m);
    for j in 0..m {
        let mut best = 0usize;
        for (ci, &k) in indices.iter().enumerate() {
            // Strict inequality keeps the first (lowest-index) channel on ties
            // because `indices` is sorted ascending.
            if j.abs_diff(k) < j.abs_diff(indices[best]) {
                best = ci;
            }
        }
        samples.extend_from_slice(obs.observed.channel(best));
    }
    ImpulseResponseGrid::new(
        samples,
        n,
        m,
        obs.observed.sample_rate_hz(),
        obs.observed.channel_spacing_m(),
        "nn-baseline",
    )
}
