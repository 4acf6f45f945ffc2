//! Low-rank adapter tests: contraction oracles, zero-init identity,
//! attach/detach/swap semantics, and parameter accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfr_core::lora::{
    adapted_forward, attach_adapters, attach_adapters_with, bundle_param_count, compose_delta,
    default_alpha, detach_adapters, extract_bundle, init_adapter, new_bundle,
    new_bundle_filtered, swap_adapters,
};
use sfr_core::net::{build_network, sample_noise_input, NetworkConfig};
use sfr_core::nn::{Conv2d, ParamKind};
use sfr_core::tensor::Tensor;
use sfr_core::SfrError;

fn small_config() -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        base_filters: 8,
        kernel_size: 3,
        input_channels: 4,
        output_channels: 1,
        seed: 3,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-30);
    (a - b).abs() / scale
}

fn random_adapter(
    name: &str,
    shape: (usize, usize, usize, usize),
    rank: usize,
    alpha: f64,
    seed: u64,
) -> sfr_core::lora::LoraAdapter {
    let mut ad = init_adapter(name, shape, rank, alpha, seed).unwrap();
    // Fill B too (init leaves it zero by contract).
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    for v in &mut ad.b {
        *v = rng.gen_range(-1.0f32..1.0);
    }
    ad
}

#[test]
fn init_is_zero_delta_and_deterministic() {
    let shape = (4, 3, 3, 3);
    let ad = init_adapter("L", shape, 2, 4.0, 7).unwrap();
    assert_eq!(ad.a.len(), 2 * 3 * 3);
    assert_eq!(ad.b.len(), 4 * 3 * 2);
    assert!(ad.b.iter().all(|&v| v == 0.0));
    assert!(compose_delta(&ad).iter().all(|&v| v == 0.0));
    assert_eq!(ad.param_count(), 2 * 3 * 3 + 4 * 3 * 2);

    let ad2 = init_adapter("L", shape, 2, 4.0, 7).unwrap();
    assert!(ad.a.iter().zip(&ad2.a).all(|(x, y)| x.to_bits() == y.to_bits()));
    let ad3 = init_adapter("L", shape, 2, 4.0, 8).unwrap();
    assert!(ad.a.iter().zip(&ad3.a).any(|(x, y)| x != y));

    assert!(init_adapter("L", shape, 0, 4.0, 7).is_err());
    assert!(init_adapter("L", shape, 2, 0.0, 7).is_err());
}

#[test]
fn init_gaussian_scale_tracks_formula() {
    // std = 1/sqrt(rank * C_in * k); with many samples the empirical std
    // must sit within 10% of it.
    let shape = (8, 16, 3, 3);
    let rank = 4;
    let ad = init_adapter("L", shape, rank, default_alpha(rank), 21).unwrap();
    let expect = 1.0 / ((rank * 16 * 3) as f64).sqrt();
    let n = ad.a.len() as f64;
    let mean = ad.a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = ad.a.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(
        (var.sqrt() - expect).abs() / expect < 0.10,
        "std {} vs {expect}",
        var.sqrt()
    );
}

#[test]
fn spec_example_adapter_count() {
    let ad = init_adapter("L", (128, 128, 3, 3), 16, default_alpha(16), 0).unwrap();
    assert_eq!(ad.param_count(), 12_288);
}

#[test]
fn compose_scalar_example() {
    let mut ad = init_adapter("L", (1, 1, 1, 1), 1, 2.0, 0).unwrap();
    ad.a[0] = 2.0;
    ad.b[0] = 3.0;
    assert_eq!(compose_delta(&ad), vec![12.0]);
}

#[test]
fn compose_matches_bruteforce_contraction() {
    let (c_out, c_in, k, r) = (4usize, 3usize, 3usize, 2usize);
    let ad = random_adapter("L", (c_out, c_in, k, k), r, 3.0, 99);
    let delta = compose_delta(&ad);
    for o in 0..c_out {
        for i in 0..c_in {
            for u in 0..k {
                for v in 0..k {
                    let mut acc = 0.0f64;
                    for rho in 0..r {
                        let b = ad.b[(o * k + u) * r + rho] as f64;
                        let a = ad.a[(rho * c_in + i) * k + v] as f64;
                        acc += b * a;
                    }
                    acc *= ad.alpha;
                    let got = delta[((o * c_in + i) * k + u) * k + v];
                    assert!(rel_err(got, acc) < 1e-12, "({o},{i},{u},{v}): {got} vs {acc}");
                }
            }
        }
    }
}

#[test]
fn compose_linearity_and_scale_equivalence() {
    // Entries on a 2^-8 grid so f32 sums and 2.5x scalings are exact and the
    // 1e-12 bound tests the contraction itself, not input rounding.
    let quantized = |name: &str, shape, rank, alpha, seed: u64| {
        let mut ad = init_adapter(name, shape, rank, alpha, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in ad.a.iter_mut().chain(ad.b.iter_mut()) {
            *v = rng.gen_range(-256i32..=256) as f32 / 256.0;
        }
        ad
    };
    let shape = (5, 4, 3, 3);
    let a1 = quantized("L", shape, 3, 1.0, 1);
    let mut a2 = quantized("L", shape, 3, 1.0, 2);
    // Same B for both so linearity in A applies.
    a2.b = a1.b.clone();

    let d1 = compose_delta(&a1);
    let d2 = compose_delta(&a2);
    let mut sum = a1.clone();
    for (s, o) in sum.a.iter_mut().zip(&a2.a) {
        *s += *o;
    }
    let dsum = compose_delta(&sum);
    for idx in 0..dsum.len() {
        assert!(rel_err(dsum[idx], d1[idx] + d2[idx]) < 1e-12);
    }

    // compose(alpha=c, A, B) == compose(alpha=1, c*A, B)
    let c = 2.5f64;
    let mut scaled_alpha = a1.clone();
    scaled_alpha.alpha = c;
    let mut scaled_a = a1.clone();
    scaled_a.alpha = 1.0;
    for v in &mut scaled_a.a {
        *v *= c as f32;
    }
    let lhs = compose_delta(&scaled_alpha);
    let rhs = compose_delta(&scaled_a);
    for idx in 0..lhs.len() {
        assert!(rel_err(lhs[idx], rhs[idx]) < 1e-12);
    }
}

#[test]
fn adapted_forward_zero_delta_is_bitwise_identity() {
    let mut conv = Conv2d::<f32>::same("c", 3, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for w in &mut conv.weight {
        *w = rng.gen_range(-1.0..1.0);
    }
    for b in &mut conv.bias {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = {
        let data: Vec<f32> = (0..3 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, 3, 5, 5)
    };
    let ad = init_adapter("c", conv.shape(), 2, 4.0, 9).unwrap();
    let base = conv.forward(&x, false);
    let adapted = adapted_forward(&x, &conv, &ad).unwrap();
    assert!(base
        .data()
        .iter()
        .zip(adapted.data())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn adapted_forward_superposition_and_materialization() {
    // Double precision so the 1e-10 agreement bound between the two
    // evaluation strategies (materialized W + dW vs adapter path) is sharp.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut conv = Conv2d::<f64>::same("c", 3, 4, 3);
    for w in &mut conv.weight {
        *w = rng.gen_range(-1.0..1.0);
    }
    let x = {
        let data: Vec<f64> = (0..3 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, 3, 5, 5)
    };
    let ad = random_adapter("c", conv.shape(), 2, 3.0, 23);

    // Materialization oracle: forward with explicit W + dW.
    let delta = compose_delta(&ad);
    let mut materialized = conv.clone();
    for (w, d) in materialized.weight.iter_mut().zip(&delta) {
        *w += *d;
    }
    let want = materialized.forward(&x, false);
    let got = adapted_forward(&x, &conv, &ad).unwrap();
    for (p, q) in want.data().iter().zip(got.data()) {
        assert!(rel_err(*p, *q) < 1e-10);
    }

    // Superposition: zero base weight -> output equals conv with delta alone
    // (biases zero here).
    let mut zero_base = conv.clone();
    zero_base.weight.fill(0.0);
    let mut delta_conv = conv.clone();
    for (w, d) in delta_conv.weight.iter_mut().zip(&delta) {
        *w = *d;
    }
    let want = delta_conv.forward(&x, false);
    let got = adapted_forward(&x, &zero_base, &ad).unwrap();
    for (p, q) in want.data().iter().zip(got.data()) {
        assert!(rel_err(*p, *q) < 1e-10);
    }

    // Shape mismatch is rejected.
    let bad = init_adapter("c", (4, 3, 5, 5), 2, 4.0, 0).unwrap();
    assert!(adapted_forward(&x, &conv, &bad).is_err());
}

#[test]
fn attach_zero_init_preserves_outputs_bitwise() {
    let mut net = build_network::<f32>(&small_config()).unwrap();
    let z = sample_noise_input(16, 8, 4, 0.1, 11).unwrap();
    let y0 = net.forward(&z).unwrap();
    let base_count = net.count_parameters();

    let bundle = new_bundle(&net, 2, None, 31).unwrap();
    attach_adapters(&mut net, &bundle).unwrap();
    assert!(net.is_adapted());

    let y1 = net.forward(&z).unwrap();
    assert!(y0
        .samples()
        .iter()
        .zip(y1.samples())
        .all(|(p, q)| p.to_bits() == q.to_bits()));

    // Trainable set is exactly the adapter tensors now.
    let (bundle_count, frac) = bundle_param_count(&bundle, &net);
    assert_eq!(net.count_parameters(), bundle_count);
    assert!(frac > 0.0);
    let mut trainable = 0usize;
    net.visit_params(&mut |name, kind, data| {
        if !kind.is_base() {
            assert!(name.ends_with(".lora_a") || name.ends_with(".lora_b"));
            trainable += data.len();
        }
    });
    assert_eq!(trainable, bundle_count);
    assert_eq!(net.count_base_parameters(), base_count);
}

#[test]
fn attach_validation_errors() {
    let mut net = build_network::<f32>(&small_config()).unwrap();
    let bundle = new_bundle(&net, 2, None, 1).unwrap();

    // Fingerprint mismatch (different architecture).
    let mut other_cfg = small_config();
    other_cfg.base_filters = 6;
    let mut other = build_network::<f32>(&other_cfg).unwrap();
    match attach_adapters(&mut other, &bundle) {
        Err(SfrError::AdapterIncompatible(_)) => {}
        other => panic!("expected incompatibility, got {other:?}"),
    }

    // Unknown layer name.
    let mut tampered = bundle.clone();
    tampered.adapters[0].layer_name = "nonexistent.conv".into();
    match attach_adapters(&mut net, &tampered) {
        Err(SfrError::UnknownLayer(name)) => assert_eq!(name, "nonexistent.conv"),
        other => panic!("expected unknown layer, got {other:?}"),
    }

    // Double attach.
    attach_adapters(&mut net, &bundle).unwrap();
    assert!(attach_adapters(&mut net, &bundle).is_err());
    detach_adapters(&mut net);

    // Mixed ranks inside a bundle.
    let mut mixed = bundle.clone();
    mixed.adapters[0] =
        init_adapter(&mixed.adapters[0].layer_name, mixed.adapters[0].layer_shape, 3, 6.0, 0)
            .unwrap();
    assert!(attach_adapters(&mut net, &mixed).is_err());
}

#[test]
fn fingerprint_override_for_filtered_bundles() {
    let net_a = build_network::<f32>(&small_config()).unwrap();
    // Exclude the head so remaining shapes match a variant with a different
    // output width.
    let bundle = new_bundle_filtered(&net_a, 2, None, 5, &|name| name != "head").unwrap();

    let mut cfg_b = small_config();
    cfg_b.output_channels = 2;
    let mut net_b = build_network::<f32>(&cfg_b).unwrap();
    assert!(attach_adapters(&mut net_b, &bundle).is_err());
    attach_adapters_with(&mut net_b, &bundle, true).unwrap();
    assert!(net_b.is_adapted());
}

#[test]
fn swap_round_trip_is_bitwise() {
    let mut net = build_network::<f32>(&small_config()).unwrap();
    let z = sample_noise_input(16, 8, 4, 0.1, 2).unwrap();
    let y_base = net.forward(&z).unwrap();

    let b1 = new_bundle(&net, 2, None, 101).unwrap();
    let b2 = new_bundle(&net, 2, None, 202).unwrap();

    attach_adapters(&mut net, &b1).unwrap();
    // Simulate training: push deterministic nonzero values into the factors.
    let mut counter = 0u32;
    net.visit_params_mut(&mut |_, kind, data, _| {
        if kind == ParamKind::LoraB {
            for v in data.iter_mut() {
                counter += 1;
                *v = ((counter % 13) as f32 - 6.0) * 0.03;
            }
        }
    });
    let y1 = net.forward(&z).unwrap();
    let trained = extract_bundle(&net, 101).unwrap();

    swap_adapters(&mut net, &b2).unwrap();
    let y2 = net.forward(&z).unwrap();
    assert!(y1.samples().iter().zip(y2.samples()).any(|(p, q)| p != q));

    swap_adapters(&mut net, &trained).unwrap();
    let y3 = net.forward(&z).unwrap();
    assert!(y1
        .samples()
        .iter()
        .zip(y3.samples())
        .all(|(p, q)| p.to_bits() == q.to_bits()));

    detach_adapters(&mut net);
    let y4 = net.forward(&z).unwrap();
    assert!(y_base
        .samples()
        .iter()
        .zip(y4.samples())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn frozen_base_hash_survives_adapter_mutation() {
    let mut net = build_network::<f32>(&small_config()).unwrap();
    let z = sample_noise_input(16, 8, 4, 0.1, 4).unwrap();
    let y0 = net.forward(&z).unwrap();
    let h0 = net.base_parameter_hash();

    detach_adapters(&mut net); // no-op on a plain network
    assert_eq!(net.base_parameter_hash(), h0);

    let bundle = new_bundle(&net, 4, None, 77).unwrap();
    attach_adapters(&mut net, &bundle).unwrap();
    net.visit_params_mut(&mut |_, kind, data, _| {
        if !kind.is_base() {
            for (i, v) in data.iter_mut().enumerate() {
                *v += 0.01 * ((i % 7) as f32 - 3.0);
            }
        }
    });
    let _ = net.forward(&z).unwrap();
    assert_eq!(net.base_parameter_hash(), h0, "adapter training touched base");

    detach_adapters(&mut net);
    let y1 = net.forward(&z).unwrap();
    assert!(y0
        .samples()
        .iter()
        .zip(y1.samples())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn bundle_param_count_cases() {
    let net = build_network::<f32>(&small_config()).unwrap();

    let empty = new_bundle_filtered(&net, 2, None, 0, &|_| false).unwrap();
    assert_eq!(bundle_param_count(&empty, &net), (0, 0.0));

    // Single layer closed form on the tiny architecture: enc0.conv1 of a
    // depth-1, 4-filter, 2-input-channel net has shape (1, 2, 3, 3).
    let tiny = build_network::<f32>(&NetworkConfig {
        depth: 1,
        base_filters: 4,
        kernel_size: 3,
        input_channels: 2,
        output_channels: 1,
        seed: 0,
    })
    .unwrap();
    let single = new_bundle_filtered(&tiny, 2, None, 0, &|n| n == "enc0.conv1").unwrap();
    assert_eq!(single.adapters.len(), 1);
    assert_eq!(single.adapters[0].layer_shape, (1, 2, 3, 3));
    let (count, _) = bundle_param_count(&single, &tiny);
    assert_eq!(count, 2 * 2 * 3 + 1 * 3 * 2);
}

#[test]
fn default_architecture_rank_sweep_accounting() {
    let net = build_network::<f32>(&NetworkConfig::default()).unwrap();
    assert_eq!(net.count_base_parameters(), 2_108_352);

    let expected: [(usize, usize); 7] = [
        (1, 20_350),
        (2, 40_700),
        (4, 81_400),
        (8, 162_800),
        (16, 325_600),
        (32, 651_200),
        (64, 1_302_400),
    ];
    let mut prev_frac = 0.0f64;
    for (rank, count) in expected {
        let bundle = new_bundle(&net, rank, None, 7).unwrap();
        let (n, frac) = bundle_param_count(&bundle, &net);
        assert_eq!(n, count, "rank {rank}");
        assert!(frac > prev_frac, "fractions must increase with rank");
        prev_frac = frac;
    }
    // The r=16 fraction brackets the published ~30% adapter size.
    let bundle = new_bundle(&net, 16, None, 7).unwrap();
    let (_, frac) = bundle_param_count(&bundle, &net);
    assert!((0.15..=0.45).contains(&frac), "fraction {frac}");
    assert!((frac - 0.154433).abs() < 1e-5);
}

#[test]
fn default_alpha_rule_and_override() {
    assert_eq!(default_alpha(16), 32.0);
    let net = build_network::<f32>(&small_config()).unwrap();
    let bundle = new_bundle(&net, 4, None, 0).unwrap();
    assert!(bundle.adapters.iter().all(|a| a.alpha == 8.0));
    assert_eq!(bundle.alpha, 8.0);
    let bundle = new_bundle(&net, 4, Some(1.5), 0).unwrap();
    assert!(bundle.adapters.iter().all(|a| a.alpha == 1.5));
}

#[test]
fn extract_bundle_metadata_round_trip() {
    let mut net = build_network::<f32>(&small_config()).unwrap();
    assert!(extract_bundle(&net, 0).is_err());

    let bundle = new_bundle(&net, 2, Some(5.0), 404).unwrap();
    attach_adapters(&mut net, &bundle).unwrap();
    let out = extract_bundle(&net, 404).unwrap();
    assert_eq!(out.rank, 2);
    assert_eq!(out.alpha, 5.0);
    assert_eq!(out.created_with_seed, 404);
    assert_eq!(out.base_model_fingerprint, net.fingerprint());
    assert_eq!(out.adapters.len(), bundle.adapters.len());
    for (x, y) in out.adapters.iter().zip(&bundle.adapters) {
        assert_eq!(x.layer_name, y.layer_name);
        assert_eq!(x.layer_shape, y.layer_shape);
        assert!(x.a.iter().zip(&y.a).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(x.b.iter().zip(&y.b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
