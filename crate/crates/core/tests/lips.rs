mod common;

use lipsfl::lips::{
    apply_mask, decayed_tau, layer_vectors, select_mask, sensitivity_scores, zero_count, Criterion,
    Reinit,
};
use lipsfl::model::{build_model, Arch, ModelParams};
use proptest::prelude::*;
use rand::Rng;

/// A model whose every parameter (including biases and BN blocks) is
/// random. `coarse` rounds weights to a few levels so that ties show up.
fn scrambled(arch: Arch, width: usize, seed: u64, coarse: bool) -> ModelParams {
    let shape: Vec<usize> = match arch {
        Arch::Mlp => vec![width],
        _ => vec![2, 4, 4],
    };
    let mut m = build_model(arch, &shape, 3, seed).unwrap();
    let mut rng = common::rng(seed ^ 0xABCD);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v: f64 = rng.random_range(-1.0..1.0);
        if coarse {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    };
    for l in &mut m.layers {
        l.weight
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = draw(&mut rng));
        if let Some(b) = &mut l.bias {
            b.data_mut().iter_mut().for_each(|v| *v = draw(&mut rng));
        }
    }
    m
}

fn brute_force_lowest(scores: &[f64], z: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut picked = order[..z].to_vec();
    picked.sort_unstable();
    picked
}

fn arch_strategy() -> impl Strategy<Value = Arch> {
    prop::sample::select(vec![Arch::Mlp, Arch::VggMini, Arch::ResnetMini])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sensitivity_mask_matches_sort_oracle(
        arch in arch_strategy(),
        width in 1usize..12,
        tau in prop::sample::select(vec![0.1, 0.3, 0.5, 0.7]),
        seed in any::<u64>(),
        coarse in any::<bool>(),
    ) {
        let before = scrambled(arch, width, seed, coarse);
        let after = scrambled(arch, width, seed.wrapping_add(1), coarse);
        let scope = after.middle_layer_names();
        let w = layer_vectors(&after, &scope).unwrap();
        let dw = lipsfl::lips::weight_delta(&before, &after, &scope).unwrap();
        let scores = sensitivity_scores(&w, &dw).unwrap();
        let mut rng = common::rng(0);
        let mask = select_mask(&after, Some(&scores), tau, Criterion::Sensitivity, &scope, &mut rng).unwrap();
        for (name, s) in &scores.layers {
            let lm = mask.layer(name).unwrap();
            prop_assert_eq!(lm.zero_count(), (tau * s.len() as f64).floor() as usize);
            let got: Vec<usize> = lm.masked_indices().collect();
            prop_assert_eq!(got, brute_force_lowest(s, lm.zero_count()));
        }
    }

    #[test]
    fn masking_touches_only_scoped_weights(
        arch in arch_strategy(),
        width in 1usize..12,
        tau in prop::sample::select(vec![0.1, 0.3, 0.5, 0.7]),
        criterion in prop::sample::select(vec![Criterion::Magnitude, Criterion::Random]),
        reinit in prop::sample::select(vec![Reinit::Zero, Reinit::OriginalInit]),
        seed in any::<u64>(),
    ) {
        let m = scrambled(arch, width, seed, false);
        let init = scrambled(arch, width, seed.wrapping_add(7), false);
        let scope = m.middle_layer_names();
        let mut rng = common::rng(seed);
        let mask = select_mask(&m, None, tau, criterion, &scope, &mut rng).unwrap();
        let out = apply_mask(&m, &mask, reinit, Some(&init)).unwrap();
        for (a, b) in m.layers.iter().zip(&out.layers) {
            let bits = |t: &lipsfl::numerics::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.bias.as_ref().unwrap()), bits(b.bias.as_ref().unwrap()));
            prop_assert_eq!(&a.running, &b.running);
            let Some(lm) = mask.layer(&a.name) else {
                prop_assert_eq!(bits(&a.weight), bits(&b.weight));
                continue;
            };
            prop_assert!(a.is_middle_weight_layer());
            let n = a.weight.len();
            prop_assert_eq!(lm.zero_count(), zero_count(tau, n));
            let init_w = init.layer(&a.name).unwrap().weight.data();
            let cells = lm.keep.iter().zip(a.weight.data()).zip(init_w).zip(b.weight.data());
            for (((&keep, &before), &orig), &after) in cells {
                let expect = match (keep, reinit) {
                    (true, _) => before,
                    (false, Reinit::Zero) => 0.0,
                    (false, Reinit::OriginalInit) => orig,
                };
                prop_assert_eq!(after.to_bits(), expect.to_bits());
            }
            if criterion == Criterion::Magnitude {
                let mags: Vec<f64> = a.weight.data().iter().map(|v| v.abs()).collect();
                let got: Vec<usize> = lm.masked_indices().collect();
                prop_assert_eq!(got, brute_force_lowest(&mags, lm.zero_count()));
            }
        }
    }

    #[test]
    fn schedule_is_monotone(tau0 in 0.0f64..0.99, total in 1usize..400) {
        prop_assert_eq!(decayed_tau(0, tau0, total).unwrap(), tau0);
        prop_assert_eq!(decayed_tau(total, tau0, total).unwrap(), 0.0);
        let taus: Vec<f64> = (0..=total).map(|t| decayed_tau(t, tau0, total).unwrap()).collect();
        prop_assert!(taus.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(decayed_tau(total + 1, tau0, total).is_err());
    }
}

#[test]
fn first_and_last_layers_are_out_of_scope() {
    let m = scrambled(Arch::VggMini, 0, 1, false);
    let mut rng = common::rng(0);
    for name in ["conv1", "fc", "bn2"] {
        let err = select_mask(
            &m,
            None,
            0.5,
            Criterion::Magnitude,
            &[name.to_string()],
            &mut rng,
        );
        assert!(err.is_err(), "{name}");
    }
}

#[test]
fn random_criterion_depends_on_the_rng() {
    let m = scrambled(Arch::VggMini, 0, 1, false);
    let scope = m.middle_layer_names();
    let a = select_mask(
        &m,
        None,
        0.5,
        Criterion::Random,
        &scope,
        &mut common::rng(1),
    )
    .unwrap();
    let b = select_mask(
        &m,
        None,
        0.5,
        Criterion::Random,
        &scope,
        &mut common::rng(1),
    )
    .unwrap();
    let c = select_mask(
        &m,
        None,
        0.5,
        Criterion::Random,
        &scope,
        &mut common::rng(2),
    )
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
