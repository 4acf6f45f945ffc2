//! Oracle and property tests for the image-source room simulator.

use sfr_core::room::{
    broadband_excitation, sabine_absorption, simulate_rir, ArrayGeometry, RoomSpec, SourceSpec,
};

fn room_5_5_4(t60: f64, order: usize) -> RoomSpec {
    RoomSpec::new([5.0, 5.0, 4.0], t60, order, 343.0).unwrap()
}

fn single_mic(position: [f64; 3]) -> ArrayGeometry {
    ArrayGeometry::new(position, [1.0, 0.0, 0.0], 1, 0.03).unwrap()
}

/// Band-limited readout of `h` at fractional index `tau`.
fn sinc_readout(h: &[f64], tau: f64) -> f64 {
    let sinc = |x: f64| {
        if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    };
    h.iter()
        .enumerate()
        .map(|(t, &v)| v * sinc(t as f64 - tau))
        .sum()
}

// --------------------------------------------------------------------- Sabine

#[test]
fn sabine_matches_independent_evaluation() {
    // [DERIVED] V = 100 m^3, S = 130 m^2, T60 = 0.4 s:
    // a = 0.1611 * 100 / (130 * 0.4) = 0.30980769...
    let a = sabine_absorption(&room_5_5_4(0.4, 0)).unwrap();
    assert!((a - 0.1611 * 100.0 / (130.0 * 0.4)).abs() < 1e-12);
    assert!((a - 0.3098).abs() < 1e-3);
}

#[test]
fn sabine_inverse_proportionality_and_limit() {
    let a1 = sabine_absorption(&room_5_5_4(0.4, 0)).unwrap();
    let a2 = sabine_absorption(&room_5_5_4(0.8, 0)).unwrap();
    assert!((a1 / a2 - 2.0).abs() < 1e-12, "doubling T60 must halve a");

    let tiny = sabine_absorption(&room_5_5_4(1e6, 0)).unwrap();
    assert!(tiny > 0.0 && tiny < 1e-4, "large T60 drives a toward 0+");

    // Very reverberant-impossible rooms clamp to 1.
    let clamped = sabine_absorption(&room_5_5_4(0.01, 0)).unwrap();
    assert_eq!(clamped, 1.0);
}

// -------------------------------------------------------------- image sources

#[test]
fn free_field_direct_path_peak_and_delay() {
    // Order 0 at distance exactly 1 m: one arrival at fs*d/c = 23.32 samples
    // with amplitude 1/(4*pi) within 2 %.
    let room = room_5_5_4(0.4, 0);
    let source = SourceSpec::new([1.5, 2.5, 2.0]).unwrap();
    let array = single_mic([2.5, 2.5, 2.0]);
    let grid = simulate_rir(&room, &source, &array, 8000.0, 64).unwrap();
    assert_eq!(grid.n(), 64);
    assert_eq!(grid.m(), 1);

    let h = grid.channel(0);
    let tau: f64 = 8000.0 * 1.0 / 343.0;
    let argmax = h
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap()
        .0 as i64;
    assert!(
        (argmax - tau.round() as i64).abs() <= 1,
        "direct-path argmax {argmax} vs expected {:.2}",
        tau
    );

    let g = 1.0 / (4.0 * std::f64::consts::PI);
    let peak = sinc_readout(h, tau);
    assert!(
        ((peak - g) / g).abs() < 0.02,
        "free-field peak {peak} vs 1/(4*pi) = {g}"
    );
}

#[test]
fn inverse_distance_law_two_mics() {
    let room = RoomSpec::new([8.0, 5.0, 4.0], 0.4, 0, 343.0).unwrap();
    let source = SourceSpec::new([1.0, 2.5, 2.0]).unwrap();
    // Mics at d = 1 m and d = 2 m along x.
    let array = ArrayGeometry::new([2.0, 2.5, 2.0], [1.0, 0.0, 0.0], 2, 1.0).unwrap();
    let grid = simulate_rir(&room, &source, &array, 8000.0, 96).unwrap();

    let p1 = sinc_readout(grid.channel(0), 8000.0 * 1.0 / 343.0);
    let p2 = sinc_readout(grid.channel(1), 8000.0 * 2.0 / 343.0);
    assert!(
        (p1 / p2 - 2.0).abs() < 0.04,
        "1/d law: peaks {p1} vs {p2}, ratio {}",
        p1 / p2
    );
}

#[test]
fn reflections_add_tail_energy_monotonically() {
    let source = SourceSpec::new([1.5, 2.0, 1.2]).unwrap();
    let array = single_mic([3.5, 3.0, 2.2]);
    let mut energies = Vec::new();
    for order in 0..=4 {
        let room = room_5_5_4(0.4, order);
        let grid = simulate_rir(&room, &source, &array, 8000.0, 512).unwrap();
        let e: f64 = grid.channel(0).iter().map(|v| v * v).sum();
        energies.push(e);
    }
    for w in energies.windows(2) {
        assert!(
            w[1] >= w[0] * (1.0 - 1e-12),
            "energy must not decrease with order: {energies:?}"
        );
    }
    assert!(
        energies[4] > energies[0] * 1.05,
        "order 4 should add visible reflection energy: {energies:?}"
    );
}

#[test]
fn order_two_tail_energy_exceeds_order_zero() {
    let source = SourceSpec::new([1.2, 1.7, 1.1]).unwrap();
    let array = single_mic([3.8, 3.4, 2.6]);
    let g0 = simulate_rir(&room_5_5_4(0.4, 0), &source, &array, 8000.0, 256).unwrap();
    let g2 = simulate_rir(&room_5_5_4(0.4, 2), &source, &array, 8000.0, 256).unwrap();
    // Tail = everything 3 ms after the direct arrival.
    let d = ((3.8f64 - 1.2).powi(2) + (3.4f64 - 1.7).powi(2) + (2.6f64 - 1.1).powi(2)).sqrt();
    let tail_start = (8000.0 * d / 343.0) as usize + 24;
    let tail = |h: &[f64]| -> f64 { h[tail_start..].iter().map(|v| v * v).sum() };
    assert!(
        tail(g2.channel(0)) > tail(g0.channel(0)),
        "order-2 tail energy must strictly exceed order-0"
    );
}

#[test]
fn reciprocity_swap_source_and_mic() {
    let room = room_5_5_4(0.5, 3);
    let a = [1.3, 2.1, 1.6];
    let b = [3.6, 3.9, 2.4];
    let fwd = simulate_rir(
        &room,
        &SourceSpec::new(a).unwrap(),
        &single_mic(b),
        8000.0,
        384,
    )
    .unwrap();
    let rev = simulate_rir(
        &room,
        &SourceSpec::new(b).unwrap(),
        &single_mic(a),
        8000.0,
        384,
    )
    .unwrap();
    let (hf, hr) = (fwd.channel(0), rev.channel(0));
    let scale: f64 = hf.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..hf.len() {
        assert!(
            (hf[i] - hr[i]).abs() <= 1e-6 * scale,
            "reciprocity violated at sample {i}: {} vs {}",
            hf[i],
            hr[i]
        );
    }
}

#[test]
fn simulation_is_deterministic() {
    let room = room_5_5_4(0.4, 6);
    let source = SourceSpec::new([1.5, 2.5, 2.0]).unwrap();
    let array = ArrayGeometry::new([2.5, 2.5, 2.0], [0.0, 1.0, 0.0], 4, 0.03).unwrap();
    let g1 = simulate_rir(&room, &source, &array, 8000.0, 256).unwrap();
    let g2 = simulate_rir(&room, &source, &array, 8000.0, 256).unwrap();
    assert_eq!(g1.samples(), g2.samples());
}

#[test]
fn geometry_violations_are_rejected() {
    let room = room_5_5_4(0.4, 0);
    // Source outside the room.
    assert!(SourceSpec::new([1.0, 1.0, 1.0]).is_ok());
    let outside = SourceSpec::new([7.0, 1.0, 1.0]).unwrap();
    let array = single_mic([2.5, 2.5, 2.0]);
    assert!(simulate_rir(&room, &outside, &array, 8000.0, 64).is_err());

    // Mic outside the room.
    let source = SourceSpec::new([1.0, 1.0, 1.0]).unwrap();
    let far_array = single_mic([4.99, 4.99, 3.99]);
    let escaping = ArrayGeometry::new([4.9, 2.5, 2.0], [1.0, 0.0, 0.0], 8, 0.1).unwrap();
    assert!(simulate_rir(&room, &source, &far_array, 8000.0, 64).is_ok());
    assert!(simulate_rir(&room, &source, &escaping, 8000.0, 64).is_err());

    // Source coincident with a mic.
    let coincident = SourceSpec::new([2.5, 2.5, 2.0]).unwrap();
    assert!(simulate_rir(&room, &coincident, &array, 8000.0, 64).is_err());

    // Non-unit axis rejected at construction.
    assert!(ArrayGeometry::new([1.0, 1.0, 1.0], [1.0, 1.0, 0.0], 2, 0.03).is_err());
}

// ----------------------------------------------------------------- excitation

#[test]
fn broadband_excitation_statistics() {
    let sig = broadband_excitation(4096, 8000.0, 11).unwrap();
    let n = sig.len() as f64;
    let mean: f64 = sig.samples().iter().sum::<f64>() / n;
    let var: f64 = sig.samples().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!(var > 0.9 && var < 1.1, "variance {var} outside [0.9, 1.1]");

    let sig2 = broadband_excitation(1024, 8000.0, 12).unwrap();
    let mean2: f64 = sig2.samples().iter().sum::<f64>() / 1024.0;
    assert!(mean2.abs() < 0.05, "mean {mean2} outside +/-0.05");
}

#[test]
fn broadband_excitation_determinism() {
    let a = broadband_excitation(256, 8000.0, 5).unwrap();
    let b = broadband_excitation(256, 8000.0, 5).unwrap();
    let c = broadband_excitation(256, 8000.0, 6).unwrap();
    assert_eq!(a.samples(), b.samples());
    assert_ne!(a.samples(), c.samples());
    assert!(broadband_excitation(0, 8000.0, 5).is_err());
}
