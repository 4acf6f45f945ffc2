//! Domain types for RIR grids, the sampling operator, the convolutional
//! signal model, and the NMSE evaluation metric.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SfrError};

/// Floor applied to NMSE values so exact equality yields a finite number.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// An N×M matrix of room-impulse-response samples plus acquisition metadata.
///
/// Columns are microphone channels; storage is channel-major (all N samples
/// of channel 0, then channel 1, ...). Samples are kept in `f64` so metric
/// identities hold to tight tolerances; persistence narrows to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseGrid {
    samples: Vec<f64>,
    n: usize,
    m: usize,
    sample_rate_hz: f64,
    channel_spacing_m: f64,
    origin_label: String,
}

impl ImpulseResponseGrid {
    /// Build a grid from channel-major samples (length must be `n·m`).
    pub fn new(
        samples: Vec<f64>,
        n: usize,
        m: usize,
        sample_rate_hz: f64,
        channel_spacing_m: f64,
        origin_label: impl Into<String>,
    ) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(SfrError::InvalidArgument(format!(
                "grid dimensions must be at least 1x1, got {n}x{m}"
            )));
        }
        if samples.len() != n * m {
            return Err(SfrError::ShapeMismatch(format!(
                "expected {n}*{m} = {} samples, got {}",
                n * m,
                samples.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !(channel_spacing_m.is_finite() && channel_spacing_m > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "channel spacing must be positive, got {channel_spacing_m}"
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite(format!(
                "grid sample at flat index {pos} is not finite"
            )));
        }
        Ok(Self {
            samples,
            n,
            m,
            sample_rate_hz,
            channel_spacing_m,
            origin_label: origin_label.into(),
        })
    }

    /// Samples per channel (rows).
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    /// Number of channels (columns).
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }
    #[inline]
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
    #[inline]
    pub fn channel_spacing_m(&self) -> f64 {
        self.channel_spacing_m
    }
    #[inline]
    pub fn origin_label(&self) -> &str {
        &self.origin_label
    }
    /// Channel-major flat sample storage.
    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Contiguous view of channel `j`.
    #[inline]
    pub fn channel(&self, j: usize) -> &[f64] {
        &self.samples[j * self.n..(j + 1) * self.n]
    }

    /// Sample `i` of channel `j`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.samples[j * self.n + i]
    }

    /// Largest absolute sample value.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Copy of this grid with every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.samples.iter().map(|v| v * factor).collect(),
            self.n,
            self.m,
            self.sample_rate_hz,
            self.channel_spacing_m,
            self.origin_label.clone(),
        )
    }

    /// Replace the free-form label, keeping everything else.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.origin_label = label.into();
        self
    }
}

/// Ordered subset of channel indices realizing the sampling operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    indices: Vec<usize>,
    total_channels: usize,
}

impl SamplingMask {
    /// Build a mask; indices are sorted ascending and must be distinct and
    /// within `[0, total_channels)`.
    pub fn new(mut indices: Vec<usize>, total_channels: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(SfrError::InvalidArgument(
                "mask must select at least one channel".into(),
            ));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(SfrError::InvalidArgument(
                "mask indices must be distinct".into(),
            ));
        }
        if *indices.last().unwrap() >= total_channels {
            return Err(SfrError::InvalidArgument(format!(
                "mask index {} out of range for {} channels",
                indices.last().unwrap(),
                total_channels
            )));
        }
        Ok(Self {
            indices,
            total_channels,
        })
    }

    /// Selected channel indices, strictly increasing.
    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    /// Number of channels in the full grid the mask refers to.
    #[inline]
    pub fn total_channels(&self) -> usize {
        self.total_channels
    }
    /// Number of selected channels.
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    /// True if channel `j` is selected.
    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
    /// Indices in `[0, total_channels)` NOT selected by this mask.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.total_channels).filter(|j| !self.contains(*j)).collect()
    }
}

/// A source excitation signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl SourceSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(SfrError::InvalidArgument(
                "source signal must contain at least one sample".into(),
            ));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::NonFinite("source signal sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
    #[inline]
    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Select the masked columns of a grid, preserving metadata.
pub fn apply_sampling(
    grid: &ImpulseResponseGrid,
    mask: &SamplingMask,
) -> Result<ImpulseResponseGrid> {
    if mask.total_channels() != grid.m() {
        return Err(SfrError::MaskMismatch(format!(
            "mask covers {} channels but grid has {}",
            mask.total_channels(),
            grid.m()
        )));
    }
    let mut samples = Vec::with_capacity(grid.n() * mask.len());
    for &j in mask.indices() {
        samples.extend_from_slice(grid.channel(j));
    }
    ImpulseResponseGrid::new(
        samples,
        grid.n(),
        mask.len(),
        grid.sample_rate_hz(),
        grid.channel_spacing_m(),
        grid.origin_label(),
    )
}

/// Uniform sample of `m_tilde` distinct channel indices out of `m`, sorted
/// ascending; deterministic per seed.
///
/// Procedure (relied on by tests as the published reference): run a partial
/// Fisher-Yates shuffle over `[0, m)` driven by `ChaCha8Rng::seed_from_u64
/// (seed)`, where step `i` swaps position `i` with `i + (next_u64() % (m-i))`,
/// then take the first `m_tilde` entries and sort them.
pub fn make_random_mask(m: usize, m_tilde: usize, seed: u64) -> Result<SamplingMask> {
    if m_tilde < 1 || m_tilde > m {
        return Err(SfrError::InvalidArgument(format!(
            "cannot select {m_tilde} channels out of {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..m_tilde {
        let j = i + (rng.next_u64() as usize) % (m - i);
        idx.swap(i, j);
    }
    idx.truncate(m_tilde);
    SamplingMask::new(idx, m)
}

/// Band-limit every channel with a zero-phase windowed-sinc lowpass,
/// modeling the finite bandwidth of a loudspeaker/microphone measurement
/// chain. `cutoff_hz` must lie strictly between 0 and Nyquist. The filter is
/// a 65-tap Hamming-windowed sinc normalized to unit DC gain, applied
/// symmetrically (zero delay) with zero padding at the edges.
pub fn bandlimit(grid: &ImpulseResponseGrid, cutoff_hz: f64) -> Result<ImpulseResponseGrid> {
    let nyquist = grid.sample_rate_hz() / 2.0;
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(SfrError::InvalidArgument(format!(
            "cutoff {cutoff_hz} Hz outside (0, {nyquist}) Hz"
        )));
    }
    const HALF: usize = 32;
    let len = 2 * HALF + 1;
    let fc = cutoff_hz / grid.sample_rate_hz(); // cycles per sample
    let mut taps = vec![0.0f64; len];
    let mut dc = 0.0;
    for (i, tap) in taps.iter_mut().enumerate() {
        let t = i as f64 - HALF as f64;
        let sinc = if t == 0.0 {
            2.0 * fc
        } else {
            (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
        };
        let window =
            0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos();
        *tap = sinc * window;
        dc += *tap;
    }
    for tap in &mut taps {
        *tap /= dc;
    }
    let (n, m) = (grid.n(), grid.m());
    let mut out = vec![0.0f64; n * m];
    for c in 0..m {
        let channel = grid.channel(c);
        for i in 0..n {
            let mut acc = 0.0;
            for (k, &tap) in taps.iter().enumerate() {
                let j = i as isize + k as isize - HALF as isize;
                if j >= 0 && (j as usize) < n {
                    acc += tap * channel[j as usize];
                }
            }
            out[c * n + i] = acc;
        }
    }
    ImpulseResponseGrid::new(
        out,
        n,
        m,
        grid.sample_rate_hz(),
        grid.channel_spacing_m(),
        grid.origin_label(),
    )
}

/// Full linear convolution of an RIR with a source signal plus optional
/// i.i.d. Gaussian sensor noise; output length is `N + L - 1`.
pub fn render_mic_signal(
    rir: &[f64],
    rir_sample_rate_hz: f64,
    source: &SourceSignal,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if rir.is_empty() {
        return Err(SfrError::InvalidArgument("empty RIR".into()));
    }
    if rir_sample_rate_hz != source.sample_rate_hz() {
        return Err(SfrError::SampleRateMismatch(
            rir_sample_rate_hz,
            source.sample_rate_hz(),
        ));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(SfrError::InvalidArgument(format!(
            "noise std must be nonnegative, got {noise_std}"
        )));
    }
    let s = source.samples();
    let mut out = vec![0.0f64; rir.len() + s.len() - 1];
    for (i, &hi) in rir.iter().enumerate() {
        if hi == 0.0 {
            continue;
        }
        for (j, &sj) in s.iter().enumerate() {
            out[i + j] += hi * sj;
        }
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| SfrError::InvalidArgument(format!("noise distribution: {e}")))?;
        for v in &mut out {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Per-channel squared-error ratios `||e_m − r_m||² / ||r_m||²`.
pub(crate) fn channel_ratios(
    estimate: &ImpulseResponseGrid,
    reference: &ImpulseResponseGrid,
) -> Result<Vec<f64>> {
    if estimate.n() != reference.n() || estimate.m() != reference.m() {
        return Err(SfrError::ShapeMismatch(format!(
            "estimate {}x{} vs reference {}x{}",
            estimate.n(),
            estimate.m(),
            reference.n(),
            reference.m()
        )));
    }
    let mut ratios = Vec::with_capacity(reference.m());
    for ch in 0..reference.m() {
        let (e, r) = (estimate.channel(ch), reference.channel(ch));
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in e.iter().zip(r.iter()) {
            let d = a - b;
            num += d * d;
            den += b * b;
        }
        if den == 0.0 {
            return Err(SfrError::DegenerateReference(ch));
        }
        ratios.push(num / den);
    }
    Ok(ratios)
}

/// Channel-averaged normalized mean squared error in decibels, clamped below
/// at [`NMSE_FLOOR_DB`].
pub fn nmse(estimate: &ImpulseResponseGrid, reference: &ImpulseResponseGrid) -> Result<f64> {
    let ratios = channel_ratios(estimate, reference)?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(ratio_to_db(mean))
}

/// Per-channel NMSE in decibels (each entry clamped at [`NMSE_FLOOR_DB`]).
pub fn nmse_per_channel(
    estimate: &ImpulseResponseGrid,
    reference: &ImpulseResponseGrid,
) -> Result<Vec<f64>> {
    Ok(channel_ratios(estimate, reference)?
        .into_iter()
        .map(ratio_to_db)
        .collect())
}

/// NMSE restricted to a channel subset: the per-channel error ratios are
/// averaged over `channels` before conversion to decibels, mirroring the
/// full-grid aggregation.
pub fn nmse_over_channels(
    estimate: &ImpulseResponseGrid,
    reference: &ImpulseResponseGrid,
    channels: &[usize],
) -> Result<f64> {
    if channels.is_empty() {
        return Err(SfrError::InvalidArgument(
            "channel subset must be nonempty".into(),
        ));
    }
    let ratios = channel_ratios(estimate, reference)?;
    if let Some(&bad) = channels.iter().find(|&&c| c >= ratios.len()) {
        return Err(SfrError::InvalidArgument(format!(
            "channel {bad} out of range for a {}-channel grid",
            ratios.len()
        )));
    }
    let mean = channels.iter().map(|&c| ratios[c]).sum::<f64>() / channels.len() as f64;
    Ok(ratio_to_db(mean))
}

#[inline]
pub(crate) fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
}
