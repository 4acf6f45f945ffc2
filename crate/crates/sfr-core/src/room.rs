//! Synthetic ground truth: shoebox image-source simulation of RIR grids.
//!
//! Uniform wall absorption is derived from the target reverberation time via
//! the Sabine relation; each image source contributes an attenuated,
//! fractionally delayed impulse realized with a unit-gain calibrated 16-tap
//! Hann-windowed sinc kernel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SfrError};
use crate::signal::{ImpulseResponseGrid, SourceSignal};

/// Shoebox room with a target reverberation time.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    dimensions_m: [f64; 3],
    t60_s: f64,
    max_reflection_order: usize,
    speed_of_sound_mps: f64,
}

impl RoomSpec {
    pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

    pub fn new(
        dimensions_m: [f64; 3],
        t60_s: f64,
        max_reflection_order: usize,
        speed_of_sound_mps: f64,
    ) -> Result<Self> {
        if dimensions_m.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(SfrError::InvalidRoom(format!(
                "room dimensions must be positive, got {dimensions_m:?}"
            )));
        }
        if !(t60_s.is_finite() && t60_s > 0.0) {
            return Err(SfrError::InvalidRoom(format!(
                "T60 must be positive, got {t60_s}"
            )));
        }
        if !(speed_of_sound_mps.is_finite() && speed_of_sound_mps > 0.0) {
            return Err(SfrError::InvalidRoom(format!(
                "speed of sound must be positive, got {speed_of_sound_mps}"
            )));
        }
        Ok(Self {
            dimensions_m,
            t60_s,
            max_reflection_order,
            speed_of_sound_mps,
        })
    }

    #[inline]
    pub fn dimensions_m(&self) -> [f64; 3] {
        self.dimensions_m
    }
    #[inline]
    pub fn t60_s(&self) -> f64 {
        self.t60_s
    }
    #[inline]
    pub fn max_reflection_order(&self) -> usize {
        self.max_reflection_order
    }
    #[inline]
    pub fn speed_of_sound_mps(&self) -> f64 {
        self.speed_of_sound_mps
    }

    /// Room volume in m^3.
    pub fn volume(&self) -> f64 {
        self.dimensions_m.iter().product()
    }

    /// Total wall surface area in m^2.
    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dimensions_m;
        2.0 * (x * y + x * z + y * z)
    }

    fn contains_strict(&self, p: [f64; 3]) -> bool {
        p.iter()
            .zip(self.dimensions_m.iter())
            .all(|(&c, &l)| c.is_finite() && c > 0.0 && c < l)
    }
}

/// Uniform linear microphone array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    first_mic_position_m: [f64; 3],
    axis_unit_vector: [f64; 3],
    num_mics: usize,
    spacing_m: f64,
}

impl ArrayGeometry {
    pub fn new(
        first_mic_position_m: [f64; 3],
        axis_unit_vector: [f64; 3],
        num_mics: usize,
        spacing_m: f64,
    ) -> Result<Self> {
        if num_mics < 1 {
            return Err(SfrError::InvalidArgument(
                "array needs at least one microphone".into(),
            ));
        }
        if !(spacing_m.is_finite() && spacing_m > 0.0) {
            return Err(SfrError::InvalidArgument(format!(
                "mic spacing must be positive, got {spacing_m}"
            )));
        }
        let norm = axis_unit_vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(SfrError::Geometry(format!(
                "array axis must be unit length, |axis| = {norm}"
            )));
        }
        if first_mic_position_m.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::Geometry("non-finite mic position".into()));
        }
        Ok(Self {
            first_mic_position_m,
            axis_unit_vector,
            num_mics,
            spacing_m,
        })
    }

    #[inline]
    pub fn num_mics(&self) -> usize {
        self.num_mics
    }
    #[inline]
    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }
    #[inline]
    pub fn first_mic_position_m(&self) -> [f64; 3] {
        self.first_mic_position_m
    }
    #[inline]
    pub fn axis_unit_vector(&self) -> [f64; 3] {
        self.axis_unit_vector
    }

    /// Position of microphone `i`.
    pub fn mic_position(&self, i: usize) -> [f64; 3] {
        let d = self.spacing_m * i as f64;
        [
            self.first_mic_position_m[0] + d * self.axis_unit_vector[0],
            self.first_mic_position_m[1] + d * self.axis_unit_vector[1],
            self.first_mic_position_m[2] + d * self.axis_unit_vector[2],
        ]
    }
}

/// A point source position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    position_m: [f64; 3],
}

impl SourceSpec {
    pub fn new(position_m: [f64; 3]) -> Result<Self> {
        if position_m.iter().any(|v| !v.is_finite()) {
            return Err(SfrError::Geometry("non-finite source position".into()));
        }
        Ok(Self { position_m })
    }

    #[inline]
    pub fn position_m(&self) -> [f64; 3] {
        self.position_m
    }
}

/// Uniform wall absorption coefficient from the Sabine relation
/// `a = 0.1611 * V / (S * T60)`, clamped to at most 1.
pub fn sabine_absorption(room: &RoomSpec) -> Result<f64> {
    let a = 0.1611 * room.volume() / (room.surface_area() * room.t60_s());
    if !(a.is_finite() && a > 0.0) {
        return Err(SfrError::InvalidRoom(format!(
            "Sabine absorption computed as {a}"
        )));
    }
    Ok(a.min(1.0))
}

const KERNEL_HALF_WIDTH: i64 = 8;

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[inline]
fn hann(x: f64) -> f64 {
    if x.abs() > KERNEL_HALF_WIDTH as f64 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * x / KERNEL_HALF_WIDTH as f64).cos())
    }
}

/// Add one attenuated arrival at fractional delay `tau` (samples) into `out`.
///
/// The kernel is a 16-tap Hann-windowed sinc normalized so the band-limited
/// readout at `tau` equals `amplitude` exactly (unit-gain calibration).
fn add_arrival(out: &mut [f64], tau: f64, amplitude: f64) {
    let t0 = tau.floor() as i64;
    let mut gain = 0.0;
    for dt in (1 - KERNEL_HALF_WIDTH)..=KERNEL_HALF_WIDTH {
        let x = (t0 + dt) as f64 - tau;
        let ws = hann(x) * sinc(x);
        gain += ws * sinc(x);
    }
    if gain <= 0.0 {
        return;
    }
    let scale = amplitude / gain;
    for dt in (1 - KERNEL_HALF_WIDTH)..=KERNEL_HALF_WIDTH {
        let t = t0 + dt;
        if t < 0 || t as usize >= out.len() {
            continue;
        }
        let x = t as f64 - tau;
        out[t as usize] += scale * hann(x) * sinc(x);
    }
}

/// Per-axis mirror images: coordinate, wall-hit count.
fn axis_images(coord: f64, length: f64, max_order: usize) -> Vec<(f64, usize)> {
    let mut images = Vec::new();
    let bound = max_order as i64 / 2 + 1;
    for p in 0..=1i64 {
        for n in -bound..=bound {
            let hits = (n - p).unsigned_abs() as usize + n.unsigned_abs() as usize;
            if hits > max_order {
                continue;
            }
            images.push(((1 - 2 * p) as f64 * coord + 2.0 * n as f64 * length, hits));
        }
    }
    images
}

/// Image-source simulation of the RIR grid seen by a microphone array.
///
/// Each image up to `max_reflection_order` total wall hits contributes
/// `(1-a)^hits / (4*pi*d)` at delay `fs*d/c`; output is truncated or
/// zero-padded to `rir_length` samples. Deterministic: images are summed in
/// a fixed enumeration order per microphone.
pub fn simulate_rir(
    room: &RoomSpec,
    source: &SourceSpec,
    array: &ArrayGeometry,
    sample_rate_hz: f64,
    rir_length: usize,
) -> Result<ImpulseResponseGrid> {
    if rir_length < 1 {
        return Err(SfrError::InvalidArgument(
            "RIR length must be at least 1".into(),
        ));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(SfrError::InvalidArgument(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    let src = source.position_m();
    if !room.contains_strict(src) {
        return Err(SfrError::Geometry(format!(
            "source {src:?} is not strictly inside the room {:?}",
            room.dimensions_m()
        )));
    }
    for i in 0..array.num_mics() {
        let mic = array.mic_position(i);
        if !room.contains_strict(mic) {
            return Err(SfrError::Geometry(format!(
                "microphone {i} at {mic:?} is not strictly inside the room {:?}",
                room.dimensions_m()
            )));
        }
        let d2: f64 = mic
            .iter()
            .zip(src.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2.sqrt() < 1e-9 {
            return Err(SfrError::Geometry(format!(
                "source coincides with microphone {i} at {mic:?}"
            )));
        }
    }

    let absorption = sabine_absorption(room)?;
    let reflection = 1.0 - absorption;
    let order = room.max_reflection_order();
    let dims = room.dimensions_m();
    let imgs_x = axis_images(src[0], dims[0], order);
    let imgs_y = axis_images(src[1], dims[1], order);
    let imgs_z = axis_images(src[2], dims[2], order);

    // (1-a)^hits lookup; hits = 0 contributes factor 1 even when a = 1.
    let mut attenuation = vec![1.0f64; order + 1];
    for h in 1..=order {
        attenuation[h] = attenuation[h - 1] * reflection;
    }

    let mut samples = vec![0.0f64; rir_length * array.num_mics()];
    let four_pi = 4.0 * std::f64::consts::PI;
    for mic_idx in 0..array.num_mics() {
        let mic = array.mic_position(mic_idx);
        let out = &mut samples[mic_idx * rir_length..(mic_idx + 1) * rir_length];
        for &(ix, hx) in &imgs_x {
            for &(iy, hy) in &imgs_y {
                let hxy = hx + hy;
                if hxy > order {
                    continue;
                }
                for &(iz, hz) in &imgs_z {
                    let hits = hxy + hz;
                    if hits > order {
                        continue;
                    }
                    let dx = ix - mic[0];
                    let dy = iy - mic[1];
                    let dz = iz - mic[2];
                    let d = (dx * dx + dy * dy + dz * dz).sqrt();
                    let tau = sample_rate_hz * d / room.speed_of_sound_mps();
                    let amplitude = attenuation[hits] / (four_pi * d);
                    add_arrival(out, tau, amplitude);
                }
            }
        }
    }

    ImpulseResponseGrid::new(
        samples,
        rir_length,
        array.num_mics(),
        sample_rate_hz,
        array.spacing_m(),
        "image-source",
    )
}

/// Deterministic unit-variance white-noise excitation.
pub fn broadband_excitation(length: usize, sample_rate_hz: f64, seed: u64) -> Result<SourceSignal> {
    if length < 1 {
        return Err(SfrError::InvalidArgument(
            "excitation length must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal is well-formed");
    let samples: Vec<f64> = (0..length).map(|_| normal.sample(&mut rng)).collect();
    SourceSignal::new(samples, sample_rate_hz)
}
