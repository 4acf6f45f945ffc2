//! Bit-exact persistence: RIR grids, network checkpoints, and adapter
//! bundles, plus an ingestion path for externally measured datasets.
//!
//! All three formats share one layout: an ASCII header (magic + version on
//! the first line, then `key value` lines) terminated by a `---` line,
//! followed by a raw little-endian float32 payload. Fixed byte order makes
//! the files portable across platforms; float32 matches training precision,
//! so write→read round trips are bitwise lossless for f32-representable data
//! (negative zero included). Writes go to a temp file in the target
//! directory and are renamed into place atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Result, SfrError};
use crate::lora::{AdapterBundle, LoraAdapter};
use crate::net::{build_network, DpNetwork, NetworkConfig};
use crate::signal::ImpulseResponseGrid;

const GRID_MAGIC: &str = "SFRGRID";
const CHECKPOINT_MAGIC: &str = "SFRCKPT";
const ADAPTER_MAGIC: &str = "SFRLORA";
const FORMAT_VERSION: u32 = 1;
const TERMINATOR: &str = "---";

// ------------------------------------------------------------------ plumbing

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| SfrError::Io(e.error))?;
    Ok(())
}

/// Header key/value pairs in file order plus the raw payload.
struct RawFile {
    pairs: Vec<(String, String)>,
    payload: Vec<u8>,
}

fn split_file(mut bytes: Vec<u8>, magic: &str) -> Result<RawFile> {
    // The header is pure ASCII we wrote ourselves; the first `\n---\n`
    // therefore marks the payload boundary.
    let marker = format!("\n{TERMINATOR}\n");
    let boundary = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| SfrError::Corrupt("missing header terminator".into()))?;
    let payload = bytes.split_off(boundary + marker.len());
    bytes.truncate(boundary);
    let header = String::from_utf8(bytes)
        .map_err(|_| SfrError::Corrupt("header is not valid UTF-8".into()))?;

    let mut lines = header.lines();
    let first = lines
        .next()
        .ok_or_else(|| SfrError::Corrupt("empty header".into()))?;
    let (tag, version) = first
        .split_once(' ')
        .ok_or_else(|| SfrError::Corrupt(format!("malformed magic line '{first}'")))?;
    if tag != magic {
        return Err(SfrError::Corrupt(format!(
            "expected a {magic} file, found '{tag}'"
        )));
    }
    if version != FORMAT_VERSION.to_string() {
        return Err(SfrError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version.to_string(),
        });
    }

    let mut pairs = Vec::new();
    for line in lines {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| SfrError::Corrupt(format!("malformed header line '{line}'")))?;
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(RawFile { pairs, payload })
}

impl RawFile {
    /// The value of a key that must appear exactly once.
    fn unique(&self, key: &str) -> Result<&str> {
        let mut found = None;
        for (k, v) in &self.pairs {
            if k == key {
                if found.is_some() {
                    return Err(SfrError::Corrupt(format!("duplicate header key '{key}'")));
                }
                found = Some(v.as_str());
            }
        }
        found.ok_or_else(|| SfrError::Corrupt(format!("missing header key '{key}'")))
    }

    fn values_of<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| SfrError::Corrupt(format!("header key '{key}' has invalid value '{value}'")))
}

fn check_payload_len(expected: u64, actual: u64) -> Result<()> {
    if actual < expected {
        return Err(SfrError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(SfrError::Corrupt(format!(
            "payload has {} trailing bytes beyond the promised {expected}",
            actual - expected
        )));
    }
    Ok(())
}

fn decode_f32_le(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn header(magic: &str) -> String {
    format!("{magic} {FORMAT_VERSION}\n")
}

fn push_kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key} {value}");
}

// ----------------------------------------------------------------- grid files

/// Persist a grid: header (dimensions, rates, label) + little-endian f32
/// payload in channel-major order.
pub fn write_grid(path: &Path, grid: &ImpulseResponseGrid) -> Result<()> {
    let mut head = header(GRID_MAGIC);
    push_kv(&mut head, "n", grid.n());
    push_kv(&mut head, "m", grid.m());
    push_kv(&mut head, "sample_rate_hz", grid.sample_rate_hz());
    push_kv(&mut head, "channel_spacing_m", grid.channel_spacing_m());
    push_kv(&mut head, "dtype", "f32");
    push_kv(&mut head, "label", grid.origin_label());
    head.push_str(TERMINATOR);
    head.push('\n');

    let mut bytes = head.into_bytes();
    bytes.reserve(4 * grid.samples().len());
    for &v in grid.samples() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_grid(path: &Path) -> Result<ImpulseResponseGrid> {
    let raw = split_file(std::fs::read(path)?, GRID_MAGIC)?;
    let n: usize = parse_num("n", raw.unique("n")?)?;
    let m: usize = parse_num("m", raw.unique("m")?)?;
    let sample_rate_hz: f64 = parse_num("sample_rate_hz", raw.unique("sample_rate_hz")?)?;
    let spacing: f64 = parse_num("channel_spacing_m", raw.unique("channel_spacing_m")?)?;
    let dtype = raw.unique("dtype")?;
    if dtype != "f32" {
        return Err(SfrError::Corrupt(format!(
            "unsupported grid dtype '{dtype}'"
        )));
    }
    let label = raw.unique("label")?.to_string();
    check_payload_len(4 * (n * m) as u64, raw.payload.len() as u64)?;
    let values = decode_f32_le(&raw.payload);
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(SfrError::NonFinite(format!(
            "grid payload sample at flat index {pos}"
        )));
    }
    ImpulseResponseGrid::new(
        values.into_iter().map(f64::from).collect(),
        n,
        m,
        sample_rate_hz,
        spacing,
        label,
    )
}

// ---------------------------------------------------------------- checkpoints

/// Persist the base parameters of an unadapted network together with its
/// configuration. Reloading rebuilds the architecture from the config echo
/// and restores every parameter bitwise.
pub fn write_checkpoint(path: &Path, net: &DpNetwork<f32>) -> Result<()> {
    if net.is_adapted() {
        return Err(SfrError::InvalidArgument(
            "detach adapters before writing a checkpoint".into(),
        ));
    }
    let cfg = net.config();
    let mut head = header(CHECKPOINT_MAGIC);
    push_kv(&mut head, "depth", cfg.depth);
    push_kv(&mut head, "base_filters", cfg.base_filters);
    push_kv(&mut head, "kernel_size", cfg.kernel_size);
    push_kv(&mut head, "input_channels", cfg.input_channels);
    push_kv(&mut head, "output_channels", cfg.output_channels);
    push_kv(&mut head, "seed", cfg.seed);

    let mut payload: Vec<u8> = Vec::new();
    net.visit_params(&mut |name, _, data| {
        let _ = writeln!(head, "param {name} {}", data.len());
        for &v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    head.push_str(TERMINATOR);
    head.push('\n');

    let mut bytes = head.into_bytes();
    bytes.extend_from_slice(&payload);
    atomic_write(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<DpNetwork<f32>> {
    let raw = split_file(std::fs::read(path)?, CHECKPOINT_MAGIC)?;
    let cfg = NetworkConfig {
        depth: parse_num("depth", raw.unique("depth")?)?,
        base_filters: parse_num("base_filters", raw.unique("base_filters")?)?,
        kernel_size: parse_num("kernel_size", raw.unique("kernel_size")?)?,
        input_channels: parse_num("input_channels", raw.unique("input_channels")?)?,
        output_channels: parse_num("output_channels", raw.unique("output_channels")?)?,
        seed: parse_num("seed", raw.unique("seed")?)?,
    };
    let mut net = build_network::<f32>(&cfg)?;

    // The manifest must list exactly the canonical parameters, in order.
    let mut manifest: Vec<(String, usize)> = Vec::new();
    for entry in raw.values_of("param") {
        let (name, len) = entry
            .rsplit_once(' ')
            .ok_or_else(|| SfrError::Corrupt(format!("malformed param entry '{entry}'")))?;
        manifest.push((name.to_string(), parse_num("param", len)?));
    }
    let mut expected: Vec<(String, usize)> = Vec::new();
    net.visit_params(&mut |name, _, data| expected.push((name.to_string(), data.len())));
    if manifest != expected {
        return Err(SfrError::Corrupt(
            "checkpoint manifest does not match the network's parameter census".into(),
        ));
    }

    let total: usize = manifest.iter().map(|(_, len)| len).sum();
    check_payload_len(4 * total as u64, raw.payload.len() as u64)?;
    let values = decode_f32_le(&raw.payload);
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(SfrError::NonFinite(format!(
            "checkpoint payload value at flat index {pos}"
        )));
    }
    let mut cursor = 0usize;
    net.visit_params_mut(&mut |_, _, data, _| {
        let len = data.len();
        data.copy_from_slice(&values[cursor..cursor + len]);
        cursor += len;
    });
    Ok(net)
}

// -------------------------------------------------------------- adapter files

/// Persist an adapter bundle: manifest (rank, alpha, base fingerprint, seed,
/// per-layer shapes with byte offsets) + concatenated A-then-B payload.
pub fn write_adapters(path: &Path, bundle: &AdapterBundle) -> Result<()> {
    bundle.validate()?;
    let mut head = header(ADAPTER_MAGIC);
    push_kv(&mut head, "rank", bundle.rank);
    push_kv(&mut head, "alpha", bundle.alpha);
    push_kv(&mut head, "fingerprint", &bundle.base_model_fingerprint);
    push_kv(&mut head, "seed", bundle.created_with_seed);

    let mut payload: Vec<u8> = Vec::new();
    for adapter in &bundle.adapters {
        let (c_out, c_in, k_h, k_w) = adapter.layer_shape;
        let a_off = payload.len();
        for &v in &adapter.a {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let b_off = payload.len();
        for &v in &adapter.b {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let _ = writeln!(
            head,
            "layer {} {c_out} {c_in} {k_h} {k_w} {a_off} {} {b_off} {}",
            adapter.layer_name,
            4 * adapter.a.len(),
            4 * adapter.b.len(),
        );
    }
    head.push_str(TERMINATOR);
    head.push('\n');

    let mut bytes = head.into_bytes();
    bytes.extend_from_slice(&payload);
    atomic_write(path, &bytes)
}

pub fn read_adapters(path: &Path) -> Result<AdapterBundle> {
    let raw = split_file(std::fs::read(path)?, ADAPTER_MAGIC)?;
    let rank: usize = parse_num("rank", raw.unique("rank")?)?;
    let alpha: f64 = parse_num("alpha", raw.unique("alpha")?)?;
    let fingerprint = raw.unique("fingerprint")?.to_string();
    let seed: u64 = parse_num("seed", raw.unique("seed")?)?;

    let values = decode_f32_le(&raw.payload);
    let mut adapters = Vec::new();
    let mut cursor = 0u64; // next expected byte offset
    for entry in raw.values_of("layer") {
        let fields: Vec<&str> = entry.split(' ').collect();
        if fields.len() != 9 {
            return Err(SfrError::Corrupt(format!(
                "malformed layer entry '{entry}'"
            )));
        }
        let name = fields[0].to_string();
        let dims: Vec<usize> = fields[1..5]
            .iter()
            .map(|f| parse_num("layer shape", f))
            .collect::<Result<_>>()?;
        let shape = (dims[0], dims[1], dims[2], dims[3]);
        let nums: Vec<u64> = fields[5..9]
            .iter()
            .map(|f| parse_num("layer offset", f))
            .collect::<Result<_>>()?;
        let (a_off, a_bytes, b_off, b_bytes) = (nums[0], nums[1], nums[2], nums[3]);

        // Offsets must tile the payload contiguously in manifest order, and
        // the advertised byte counts must follow from shape and rank.
        if a_off != cursor || b_off != a_off + a_bytes {
            return Err(SfrError::Corrupt(format!(
                "layer {name}: offsets overlap or leave gaps"
            )));
        }
        if a_bytes != 4 * LoraAdapter::a_len(shape, rank) as u64
            || b_bytes != 4 * LoraAdapter::b_len(shape, rank) as u64
        {
            return Err(SfrError::Corrupt(format!(
                "layer {name}: shape {shape:?} at rank {rank} disagrees with payload byte counts"
            )));
        }
        cursor = b_off + b_bytes;
        if cursor > raw.payload.len() as u64 {
            return Err(SfrError::Truncated {
                expected: cursor,
                actual: raw.payload.len() as u64,
            });
        }
        let a_start = (a_off / 4) as usize;
        let b_start = (b_off / 4) as usize;
        adapters.push(LoraAdapter {
            layer_name: name,
            layer_shape: shape,
            rank,
            alpha,
            a: values[a_start..a_start + (a_bytes / 4) as usize].to_vec(),
            b: values[b_start..b_start + (b_bytes / 4) as usize].to_vec(),
        });
    }
    check_payload_len(cursor, raw.payload.len() as u64)?;

    let bundle = AdapterBundle {
        adapters,
        base_model_fingerprint: fingerprint,
        rank,
        alpha,
        created_with_seed: seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

// ------------------------------------------------------------ external import

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalDtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalByteOrder {
    Little,
    Big,
}

/// Sample ordering of the raw file: channel-major means all samples of
/// channel 0 first; time-major means all channels at time 0 first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalOrdering {
    ChannelMajor,
    TimeMajor,
}

/// Description of a headerless external capture.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLayout {
    pub dtype: ExternalDtype,
    pub byte_order: ExternalByteOrder,
    pub ordering: ExternalOrdering,
    pub n: usize,
    pub m: usize,
    pub sample_rate_hz: f64,
    pub channel_spacing_m: f64,
    pub label: String,
}

/// Normalize an externally measured raw file into grid conventions.
/// f64 inputs are narrowed to f32 with round-to-nearest, matching the
/// storage precision of [`write_grid`].
pub fn import_external(path: &Path, layout: &ExternalLayout) -> Result<ImpulseResponseGrid> {
    let bytes = std::fs::read(path)?;
    let elem = match layout.dtype {
        ExternalDtype::F32 => 4,
        ExternalDtype::F64 => 8,
    };
    let count = layout.n * layout.m;
    check_payload_len((elem * count) as u64, bytes.len() as u64)?;

    let decode_f32 = |c: [u8; 4]| match layout.byte_order {
        ExternalByteOrder::Little => f32::from_le_bytes(c),
        ExternalByteOrder::Big => f32::from_be_bytes(c),
    };
    let decode_f64 = |c: [u8; 8]| match layout.byte_order {
        ExternalByteOrder::Little => f64::from_le_bytes(c),
        ExternalByteOrder::Big => f64::from_be_bytes(c),
    };
    let values: Vec<f64> = match layout.dtype {
        ExternalDtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(decode_f32([c[0], c[1], c[2], c[3]])))
            .collect(),
        ExternalDtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| {
                let wide = decode_f64([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]);
                f64::from(wide as f32)
            })
            .collect(),
    };

    let samples = match layout.ordering {
        ExternalOrdering::ChannelMajor => values,
        ExternalOrdering::TimeMajor => {
            let mut out = vec![0.0f64; count];
            for t in 0..layout.n {
                for ch in 0..layout.m {
                    out[ch * layout.n + t] = values[t * layout.m + ch];
                }
            }
            out
        }
    };
    ImpulseResponseGrid::new(
        samples,
        layout.n,
        layout.m,
        layout.sample_rate_hz,
        layout.channel_spacing_m,
        layout.label.clone(),
    )
}
