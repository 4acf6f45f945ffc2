//! File-format tests: bitwise round trips, typed failure modes, golden
//! files produced by an independent writer, and the external-import path.

use std::fs;
use std::path::Path;

use sfr_core::io::{
    import_external, read_adapters, read_checkpoint, read_grid, write_adapters, write_checkpoint,
    write_grid, ExternalByteOrder, ExternalDtype, ExternalLayout, ExternalOrdering,
};
use sfr_core::lora::{attach_adapters, new_bundle, new_bundle_filtered};
use sfr_core::net::{build_network, sample_noise_input, NetworkConfig};
use sfr_core::signal::ImpulseResponseGrid;
use sfr_core::SfrError;

fn tiny_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        depth: 1,
        base_filters: 4,
        kernel_size: 3,
        input_channels: 2,
        output_channels: 1,
        seed,
    }
}

/// A grid whose samples are all exactly representable in f32 (the payload
/// precision), including a negative zero.
fn f32_exact_grid(n: usize, m: usize, seed: u64) -> ImpulseResponseGrid {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<f64> = (0..n * m)
        .map(|_| rng.gen_range(-1.0f32..1.0f32) as f64)
        .collect();
    samples[1] = f64::from(-0.0f32);
    ImpulseResponseGrid::new(samples, n, m, 8000.0, 0.0429, "round trip fixture").unwrap()
}

fn replace_once(bytes: &[u8], needle: &str, replacement: &str) -> Vec<u8> {
    let text_len = bytes
        .windows(4)
        .position(|w| w == b"\n---")
        .expect("header terminator")
        + 5;
    let head = std::str::from_utf8(&bytes[..text_len]).unwrap();
    assert!(head.contains(needle), "header must contain '{needle}'");
    let patched = head.replacen(needle, replacement, 1);
    let mut out = patched.into_bytes();
    out.extend_from_slice(&bytes[text_len..]);
    out
}

// ----------------------------------------------------------------- grid files

#[test]
fn grid_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    let grid = f32_exact_grid(16, 4, 9);
    write_grid(&path, &grid).unwrap();
    let back = read_grid(&path).unwrap();
    assert_eq!(back.n(), 16);
    assert_eq!(back.m(), 4);
    assert_eq!(back.sample_rate_hz(), 8000.0);
    assert_eq!(back.channel_spacing_m(), 0.0429);
    assert_eq!(back.origin_label(), "round trip fixture");
    for (a, b) in back.samples().iter().zip(grid.samples()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // The negative zero survived with its sign bit.
    assert_eq!(back.samples()[1].to_bits(), (-0.0f64).to_bits());
}

#[test]
fn grid_truncation_reports_expected_and_actual() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    write_grid(&path, &f32_exact_grid(16, 4, 9)).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&path, &bytes).unwrap();
    match read_grid(&path) {
        Err(SfrError::Truncated { expected, actual }) => {
            assert_eq!(expected, 4 * 16 * 4);
            assert_eq!(actual, 4 * 16 * 4 - 4);
        }
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn grid_header_payload_disagreement_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    write_grid(&path, &f32_exact_grid(16, 4, 9)).unwrap();
    let bytes = fs::read(&path).unwrap();

    // Header promises more channels than the payload carries.
    fs::write(&path, replace_once(&bytes, "m 4", "m 5")).unwrap();
    assert!(matches!(read_grid(&path), Err(SfrError::Truncated { .. })));

    // Header promises fewer: trailing bytes are corruption, not silence.
    fs::write(&path, replace_once(&bytes, "m 4", "m 3")).unwrap();
    assert!(matches!(read_grid(&path), Err(SfrError::Corrupt(_))));
}

#[test]
fn grid_version_and_magic_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    write_grid(&path, &f32_exact_grid(4, 2, 9)).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, replace_once(&bytes, "SFRGRID 1", "SFRGRID 9")).unwrap();
    match read_grid(&path) {
        Err(SfrError::VersionMismatch { expected, found }) => {
            assert_eq!(expected, 1);
            assert_eq!(found, "9");
        }
        other => panic!("expected version mismatch, got {other:?}"),
    }

    fs::write(&path, replace_once(&bytes, "SFRGRID 1", "XXRGRID 1")).unwrap();
    assert!(matches!(read_grid(&path), Err(SfrError::Corrupt(_))));
}

#[test]
fn grid_nan_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    write_grid(&path, &f32_exact_grid(4, 2, 9)).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let len = bytes.len();
    bytes[len - 8..len - 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_grid(&path), Err(SfrError::NonFinite(_))));
}

// ----------------------------------------------------------------- checkpoints

#[test]
fn checkpoint_round_trip_reproduces_forward_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.srk");
    let cfg = tiny_config(5);
    let mut net = build_network::<f32>(&cfg).unwrap();
    // Move off the initialization so the payload actually matters.
    net.visit_params_mut(&mut |_, _, data, _| {
        for (i, v) in data.iter_mut().enumerate() {
            *v += (i % 7) as f32 * 1e-3;
        }
    });
    write_checkpoint(&path, &net).unwrap();
    let mut back = read_checkpoint(&path).unwrap();
    assert_eq!(back.base_parameter_hash(), net.base_parameter_hash());
    assert_eq!(*back.config(), cfg);

    let z = sample_noise_input(16, 8, 2, 0.1, 3).unwrap();
    let y0 = net.forward(&z).unwrap();
    let y1 = back.forward(&z).unwrap();
    for (a, b) in y0.samples().iter().zip(y1.samples()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn checkpoint_rejects_adapted_network_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.srk");
    let mut net = build_network::<f32>(&tiny_config(5)).unwrap();

    let bundle = new_bundle(&net, 2, None, 1).unwrap();
    attach_adapters(&mut net, &bundle).unwrap();
    assert!(write_checkpoint(&path, &net).is_err());
    sfr_core::lora::detach_adapters(&mut net);

    write_checkpoint(&path, &net).unwrap();
    let bytes = fs::read(&path).unwrap();

    // Rename a manifest entry: the canonical order no longer matches.
    fs::write(
        &path,
        replace_once(&bytes, "param enc0.conv1.weight", "param enc0.conv9.weight"),
    )
    .unwrap();
    assert!(matches!(read_checkpoint(&path), Err(SfrError::Corrupt(_))));

    // Chop the payload.
    let mut short = bytes.clone();
    short.truncate(bytes.len() - 2);
    fs::write(&path, &short).unwrap();
    assert!(matches!(
        read_checkpoint(&path),
        Err(SfrError::Truncated { .. })
    ));
}

// -------------------------------------------------------------- adapter files

#[test]
fn adapter_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapters.srl");
    let net = build_network::<f32>(&tiny_config(5)).unwrap();
    // Two-layer bundle exercises offset bookkeeping without bulk.
    let bundle = new_bundle_filtered(&net, 2, Some(3.25), 11, &|name| {
        name == "enc0.conv1" || name == "head"
    })
    .unwrap();
    assert_eq!(bundle.adapters.len(), 2);
    write_adapters(&path, &bundle).unwrap();
    let back = read_adapters(&path).unwrap();
    assert_eq!(back, bundle);
}

#[test]
fn adapter_file_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapters.srl");
    let net = build_network::<f32>(&tiny_config(5)).unwrap();
    let bundle = new_bundle_filtered(&net, 2, None, 11, &|name| {
        name == "enc0.conv1" || name == "head"
    })
    .unwrap();
    write_adapters(&path, &bundle).unwrap();
    let bytes = fs::read(&path).unwrap();

    // Overlapping offsets: second layer's A starts inside the first payload.
    let payload_floats: usize = bundle.adapters.iter().map(|a| a.param_count()).sum();
    let head = std::str::from_utf8(&bytes[..bytes.len() - 4 * payload_floats]).unwrap();
    let head_line = head
        .lines()
        .find(|l| l.starts_with("layer head"))
        .unwrap()
        .to_string();
    let mut fields: Vec<String> = head_line.split(' ').map(String::from).collect();
    fields[6] = "0".into(); // a_offset
    fs::write(&path, replace_once(&bytes, &head_line, &fields.join(" "))).unwrap();
    assert!(matches!(read_adapters(&path), Err(SfrError::Corrupt(_))));

    // Layer shape inconsistent with the payload byte count.
    fs::write(
        &path,
        replace_once(&bytes, "layer enc0.conv1 1 2 3 3", "layer enc0.conv1 1 3 3 3"),
    )
    .unwrap();
    assert!(matches!(read_adapters(&path), Err(SfrError::Corrupt(_))));

    // Fingerprint line removed entirely.
    fs::write(&path, replace_once(&bytes, "fingerprint", "fungerprint")).unwrap();
    assert!(matches!(read_adapters(&path), Err(SfrError::Corrupt(_))));
}

#[test]
fn adapter_file_attaches_only_to_matching_base() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapters.srl");
    let net = build_network::<f32>(&tiny_config(5)).unwrap();
    let bundle = new_bundle(&net, 2, None, 11).unwrap();
    write_adapters(&path, &bundle).unwrap();
    let back = read_adapters(&path).unwrap();

    // Same config, any seed: fingerprint matches.
    let mut same = build_network::<f32>(&tiny_config(99)).unwrap();
    attach_adapters(&mut same, &back).unwrap();

    // Different architecture: incompatible.
    let mut other_cfg = tiny_config(5);
    other_cfg.base_filters = 6;
    let mut other = build_network::<f32>(&other_cfg).unwrap();
    assert!(matches!(
        attach_adapters(&mut other, &back),
        Err(SfrError::AdapterIncompatible(_))
    ));
}

// -------------------------------------------------------------- golden files

#[test]
fn golden_grid_file_reads_expected_values() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/plain.srg");
    let grid = read_grid(&path).unwrap();
    assert_eq!((grid.n(), grid.m()), (3, 2));
    assert_eq!(grid.sample_rate_hz(), 8000.0);
    assert_eq!(grid.channel_spacing_m(), 0.0429);
    assert_eq!(grid.origin_label(), "golden grid");
    let want = [0.5f32, -0.25, 1.5, -0.0, 3.25, 0.125];
    for (got, want) in grid.samples().iter().zip(want) {
        assert_eq!(got.to_bits(), f64::from(want).to_bits());
    }
}

#[test]
fn golden_adapter_file_reads_expected_values() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tiny.srl");
    let bundle = read_adapters(&path).unwrap();
    assert_eq!(bundle.rank, 1);
    assert_eq!(bundle.alpha, 2.0);
    assert_eq!(bundle.created_with_seed, 7);
    assert_eq!(bundle.base_model_fingerprint, "feedface");
    assert_eq!(bundle.adapters.len(), 1);
    let a = &bundle.adapters[0];
    assert_eq!(a.layer_name, "lone");
    assert_eq!(a.layer_shape, (1, 1, 1, 1));
    assert_eq!(a.a, vec![0.75f32]);
    assert_eq!(a.b, vec![-2.0f32]);
}

// ------------------------------------------------------------ external import

#[test]
fn import_time_major_pattern_transposes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext.bin");
    // Time-major 3×2: rows are time steps, columns are channels.
    let time_major: [f32; 6] = [10.0, 20.0, 11.0, 21.0, 12.0, 22.0];
    let mut bytes = Vec::new();
    for v in time_major {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, &bytes).unwrap();
    let layout = ExternalLayout {
        dtype: ExternalDtype::F32,
        byte_order: ExternalByteOrder::Little,
        ordering: ExternalOrdering::TimeMajor,
        n: 3,
        m: 2,
        sample_rate_hz: 8000.0,
        channel_spacing_m: 0.1,
        label: "ext".into(),
    };
    let grid = import_external(&path, &layout).unwrap();
    assert_eq!(grid.channel(0), &[10.0, 11.0, 12.0]);
    assert_eq!(grid.channel(1), &[20.0, 21.0, 22.0]);
}

#[test]
fn import_f64_matches_f32_cast_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext64.bin");
    // 0.1 is inexact in f32; 1 + 2^-24 ties to even (1.0); plus a clean value.
    let values: [f64; 4] = [0.1, 1.0 + (2f64).powi(-24), -3.5, f64::from(-0.0f32)];
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, &bytes).unwrap();
    let layout = ExternalLayout {
        dtype: ExternalDtype::F64,
        byte_order: ExternalByteOrder::Little,
        ordering: ExternalOrdering::ChannelMajor,
        n: 2,
        m: 2,
        sample_rate_hz: 16000.0,
        channel_spacing_m: 0.05,
        label: "ext64".into(),
    };
    let grid = import_external(&path, &layout).unwrap();
    for (got, original) in grid.samples().iter().zip(values) {
        let narrowed = original as f32;
        assert_eq!(got.to_bits(), f64::from(narrowed).to_bits());
    }
    assert_eq!(grid.at(1, 0), 1.0, "tie rounds to even");
}

#[test]
fn import_big_endian_and_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("be.bin");
    let values: [f32; 4] = [1.0, -2.0, 0.5, 4.0];
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(&path, &bytes).unwrap();
    let layout = ExternalLayout {
        dtype: ExternalDtype::F32,
        byte_order: ExternalByteOrder::Big,
        ordering: ExternalOrdering::ChannelMajor,
        n: 2,
        m: 2,
        sample_rate_hz: 8000.0,
        channel_spacing_m: 0.1,
        label: "be".into(),
    };
    let grid = import_external(&path, &layout).unwrap();
    assert_eq!(grid.samples(), &[1.0, -2.0, 0.5, 4.0]);

    let mut wrong = layout.clone();
    wrong.n = 3;
    assert!(matches!(
        import_external(&path, &wrong),
        Err(SfrError::Truncated { .. })
    ));
    let mut wrong = layout.clone();
    wrong.n = 1;
    assert!(matches!(
        import_external(&path, &wrong),
        Err(SfrError::Corrupt(_))
    ));
}

// -------------------------------------------------------------------- writes

#[test]
fn writes_are_atomic_replacements() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.srg");
    write_grid(&path, &f32_exact_grid(4, 2, 1)).unwrap();
    let first = fs::read(&path).unwrap();
    // Overwriting in place succeeds and fully replaces the content.
    write_grid(&path, &f32_exact_grid(8, 2, 2)).unwrap();
    let second = fs::read(&path).unwrap();
    assert_ne!(first, second);
    assert_eq!(read_grid(&path).unwrap().n(), 8);

    // Missing parent directory surfaces as an I/O error.
    let missing = dir.path().join("nope/grid.srg");
    assert!(matches!(
        write_grid(&missing, &f32_exact_grid(4, 2, 1)),
        Err(SfrError::Io(_))
    ));
}
