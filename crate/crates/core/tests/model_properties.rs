mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relocl_core::graphdomain::{extract_relocations, EntityCatalog, GraphSnapshot, IndexedGraph};
use relocl_core::numcore::{Adam, AdamConfig, Tape, Tensor};
use relocl_core::relocnet::{decode_relocations, model_loss, ParameterSet, RelocModel};

use common::{catalog, random_model, random_pair};

const OBJECTS: [&str; 5] = ["mug", "plate", "spoon", "book", "keys"];
const LOCATIONS: [&str; 6] = ["house", "table", "sink", "cabinet", "shelf", "desk"];

/// The same model with its objects listed in the order `perm`.
fn permuted(model: &RelocModel<f64>, perm: &[usize]) -> RelocModel<f64> {
    let names: Vec<&str> = perm.iter().map(|&i| OBJECTS[i]).collect();
    let cat = Arc::new(EntityCatalog::from_names(&names, &LOCATIONS).unwrap());
    let tensors = model
        .params
        .names()
        .iter()
        .zip(model.params.tensors())
        .map(|(name, t)| {
            if name == "embed.object" {
                let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
                Tensor::matrix(t.rows(), t.cols(), data).unwrap()
            } else {
                t.clone()
            }
        })
        .collect();
    let params = ParameterSet::new(model.params.names().to_vec(), tensors);
    RelocModel::from_params(model.config, cat, params).unwrap()
}

#[test]
fn relabelling_objects_permutes_the_predictions() {
    let perm = [3, 0, 4, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let model = random_model(seed);
        let other = permuted(&model, &perm);
        let pair = random_pair(&mut rng, 2);
        let input = IndexedGraph {
            t: pair.input.t,
            parent: perm.iter().map(|&i| pair.input.parent[i]).collect(),
        };
        let a = model.predict_indexed(&pair.input, 30).unwrap();
        let b = other.predict_indexed(&input, 30).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((a.move_prob[old] - b.move_prob[new]).abs() < 1e-12);
            for (x, y) in a
                .location_probs
                .row(old)
                .iter()
                .zip(b.location_probs.row(new))
            {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for (x, y) in a.context.iter().zip(&b.context) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn loss_of(
    model: &RelocModel<f64>,
    tape: &mut Tape<f64>,
    pairs: &[relocl_core::graphdomain::TransitionPair],
) -> (f64, Vec<Tensor<f64>>) {
    let mut total = 0.0;
    let mut grads: Option<Vec<Tensor<f64>>> = None;
    for p in pairs {
        let (l, g) = model.loss_and_gradient(tape, p).unwrap();
        total += l.total;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    (total / pairs.len() as f64, grads.unwrap())
}

#[test]
fn a_single_transition_can_be_memorised() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pair = random_pair(&mut rng, 2);
    let mut model = RelocModel::<f64>::init(common::small_config(), catalog(), &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    let mut tape = Tape::new();
    let (initial, _) = loss_of(&model, &mut tape, std::slice::from_ref(&pair));
    for _ in 0..200 {
        let (_, g) = loss_of(&model, &mut tape, std::slice::from_ref(&pair));
        adam.step(model.params.tensors_mut(), &g).unwrap();
    }
    let (last, _) = loss_of(&model, &mut tape, std::slice::from_ref(&pair));
    assert!(last < 0.05 * initial, "{initial} -> {last}");
    let pred = model.predict_indexed(&pair.input, pair.horizon()).unwrap();
    let decoded = pred.decode_indexed(&pair.input.parent, 0.5);
    let expected: Vec<Option<usize>> = pair
        .input
        .parent
        .iter()
        .zip(&pair.target.parent)
        .map(|(a, b)| (a != b).then_some(*b))
        .collect();
    assert_eq!(decoded, expected);
}

#[test]
fn full_batch_loss_decreases_monotonically_for_small_steps() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pairs: Vec<_> = (0..6).map(|i| random_pair(&mut rng, i % 3)).collect();
        let mut model =
            RelocModel::<f64>::init(common::small_config(), catalog(), &mut rng).unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        });
        let mut tape = Tape::new();
        let (mut prev, mut grads) = loss_of(&model, &mut tape, &pairs);
        for step in 0..50 {
            adam.step(model.params.tensors_mut(), &grads).unwrap();
            let (l, g) = loss_of(&model, &mut tape, &pairs);
            assert!(l <= prev + 1e-12, "seed {seed} step {step}: {prev} -> {l}");
            prev = l;
            grads = g;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_distributions(seed in 0u64..1000, moved in 0usize..5, horizon in 1u64..400) {
        let model = random_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let pair = random_pair(&mut rng, moved);
        let pred = model.predict_indexed(&pair.input, horizon).unwrap();
        for &p in &pred.move_prob {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        for r in 0..pred.location_probs.rows() {
            let row = pred.location_probs.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decoding_agrees_with_relocation_extraction(seed in 0u64..1000, moved in 0usize..5) {
        let model = random_model(seed);
        let cat = catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let pair = random_pair(&mut rng, moved);
        let current = GraphSnapshot::from_indexed(cat.clone(), 0, &pair.input).unwrap();
        let pred = model.predict_indexed(&pair.input, pair.horizon()).unwrap();
        let events = decode_relocations(&pred, &current, 0.5).unwrap();
        // applying the decoded moves and extracting them again is the identity
        let mut parent = pair.input.parent.clone();
        for (i, to) in pred.decode_indexed(&pair.input.parent, 0.5).into_iter().enumerate() {
            if let Some(to) = to {
                parent[i] = to;
            }
        }
        let later = GraphSnapshot::from_indexed(
            cat,
            0,
            &IndexedGraph { t: pair.target.t, parent },
        )
        .unwrap();
        prop_assert_eq!(extract_relocations(&current, &later).unwrap(), events);
    }

    #[test]
    fn loss_on_prediction_matches_the_tape(seed in 0u64..1000, moved in 0usize..5) {
        let model = random_model(seed);
        let cat = catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
        let pair = random_pair(&mut rng, moved);
        let mut tape = Tape::new();
        let (tape_loss, _) = model.loss_and_gradient(&mut tape, &pair).unwrap();
        let pred = model.predict_indexed(&pair.input, pair.horizon()).unwrap();
        let current = GraphSnapshot::from_indexed(cat.clone(), 0, &pair.input).unwrap();
        let target = GraphSnapshot::from_indexed(cat, 0, &pair.target).unwrap();
        let direct = model_loss(&pred, &target, &current).unwrap();
        prop_assert!((direct.total - tape_loss.total).abs() < 1e-9 * (1.0 + tape_loss.total.abs()));
        prop_assert!((direct.class - tape_loss.class).abs() < 1e-9);
        prop_assert!((direct.location - tape_loss.location).abs() < 1e-9);
        prop_assert!((direct.context - tape_loss.context).abs() < 1e-9);
    }
}
