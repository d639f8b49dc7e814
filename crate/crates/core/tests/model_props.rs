use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ered::encoder::precompute_cache;
use ered::fusion::AlignmentScheme;
use ered::heads::LossWeights;
use ered::kb::SlotRole;
use ered::model::{Ered, ModelConfig, ModelInput, TrainItem};
use ered::reference;
use ered::synth::typing_dataset;
use ered::tape::Tape;
use ered::tensor::Tensor;
use ered::train::metrics::evaluate_sets;
use ered::train::{TrainConfig, Trainer};
use ered::vocab::{SpecialPositions, TaskKind, TokenizedExample, CLS, SEP};

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn with_negative(item: &TrainItem, row: usize) -> TrainItem {
    let mut out = item.clone();
    for s in out.input.slots.slots.iter_mut().filter(|s| s.role == SlotRole::Negative) {
        s.row = row;
    }
    out
}

struct Snapshot {
    h_i: Vec<u64>,
    h_e: Vec<u64>,
    e_p: Vec<u64>,
    main: u64,
    aux_a: u64,
    aux_b: f64,
}

fn snapshot(model: &Ered, item: &TrainItem) -> Snapshot {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &item.input).unwrap();
    let v = fwd.views;
    let h_i = bits(tape.value(v.h_i.unwrap()));
    let h_e = bits(tape.value(v.h_e));
    let e_p = bits(tape.value(v.e_p.unwrap()));
    let mut tape = Tape::new();
    let (_, b) = model
        .batch_loss(&mut tape, std::slice::from_ref(item), reference::weights())
        .unwrap();
    Snapshot {
        h_i,
        h_e,
        e_p,
        main: b.main.to_bits(),
        aux_a: b.aux_a.to_bits(),
        aux_b: b.aux_b,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn negatives_only_reach_the_pollution_loss(which in 0usize..2, a in 0usize..6, b in 0usize..6) {
        let model = Ered::new(&reference::config()).unwrap();
        let item = &reference::batch(&model).unwrap()[which];
        let x = snapshot(&model, &with_negative(item, a));
        let y = snapshot(&model, &with_negative(item, b));
        prop_assert_eq!(x.h_i, y.h_i);
        prop_assert_eq!(x.h_e, y.h_e);
        prop_assert_eq!(x.e_p, y.e_p);
        prop_assert_eq!(x.main, y.main);
        prop_assert_eq!(x.aux_a, y.aux_a);
        if a != b {
            prop_assert_ne!(x.aux_b, y.aux_b);
        }
    }

    #[test]
    fn total_is_the_left_to_right_weighted_sum(alpha in 0.0f64..3.0, beta in 0.0f64..3.0, use_a: bool, use_b: bool) {
        let model = Ered::new(&reference::config()).unwrap();
        let batch = reference::batch(&model).unwrap();
        let w = LossWeights { alpha, beta, use_aux_a: use_a, use_aux_b: use_b };
        let mut tape = Tape::new();
        let (_, b) = model.batch_loss(&mut tape, &batch, w).unwrap();
        let mut expect = b.main;
        if use_a {
            expect += alpha * b.aux_a;
        } else {
            prop_assert_eq!(b.aux_a, 0.0);
        }
        if use_b {
            expect += beta * b.aux_b;
        } else {
            prop_assert_eq!(b.aux_b, 0.0);
        }
        prop_assert_eq!(b.total.to_bits(), expect.to_bits());
    }

    #[test]
    fn without_knowledge_or_slots_the_model_is_the_plain_encoder(
        ids in proptest::collection::vec(3u32..20, 1..6),
        seed in 0u64..1000,
    ) {
        let cfg = ModelConfig {
            task: TaskKind::Sentence,
            entities_per_example: 0,
            negatives: 0,
            knowledge_layers: 0,
            vocab_size: 20,
            max_text_len: 8,
            seed,
            ..reference::config()
        };
        let model = Ered::new(&cfg).unwrap();
        let mut token_ids = vec![CLS];
        token_ids.extend(&ids);
        token_ids.push(SEP);
        let length = token_ids.len();
        token_ids.resize(8, 0);
        let tokens = TokenizedExample { token_ids, length, char_to_token: Vec::new(), special: SpecialPositions::default() };
        let input = ModelInput { tokens: tokens.clone(), slots: Default::default(), cls: Vec::new() };
        let mut tape = Tape::new();
        let fused = model.forward(&mut tape, &input).unwrap().state;
        let plain = model.network.plain_encode(&mut tape, &model.store, &tokens).unwrap();
        prop_assert_eq!(bits(tape.value(fused)), bits(tape.value(plain)));
    }
}

#[test]
fn cached_description_vectors_equal_live_ones() {
    let model = Ered::new(&reference::config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let descriptions: Vec<(String, Vec<u32>)> = (0..20)
        .map(|i| {
            let mut ids = vec![CLS, rng.random_range(8..16), SEP, 0];
            if rng.random_bool(0.5) {
                ids[2] = rng.random_range(8..16);
                ids[3] = SEP;
            }
            (format!("Q{i}"), ids)
        })
        .collect();
    let cache = precompute_cache(&model.knowledge, &descriptions).unwrap();
    let mut bytes = Vec::new();
    cache.write_to(&mut bytes).unwrap();
    let reread = ered::encoder::DescriptionCache::read_from(bytes.as_slice()).unwrap();
    for (id, ids) in &descriptions {
        let live = model.describe(ids).unwrap();
        for c in [&cache, &reread] {
            let stored = c.get(id).unwrap();
            assert_eq!(stored.len(), live.len());
            for (a, b) in stored.iter().zip(&live) {
                assert_eq!(bits(a), bits(b));
            }
        }
    }
}

#[test]
fn training_leaves_the_knowledge_module_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = typing_dataset(2, 40).unwrap();
    ds.config.max_steps = Some(30);
    ds.config.number_of_negatives = 1;
    let cfg = TrainConfig::load(&ds.write(dir.path()).unwrap()).unwrap();
    let mut trainer = Trainer::new(cfg).unwrap();
    let snapshot = |t: &Trainer, pick: &dyn Fn(&str) -> bool, knowledge: bool| -> Vec<(String, Vec<u64>)> {
        let store = if knowledge { t.model().knowledge.store() } else { &t.model().store };
        store
            .iter()
            .filter(|(_, p)| pick(&p.name))
            .map(|(_, p)| (p.name.clone(), bits(&p.value)))
            .collect()
    };
    let frozen_before = snapshot(&trainer, &|_| true, true);
    let learned_before = snapshot(&trainer, &|n| n.starts_with("aligner") || n == "entity.table", false);
    trainer.run(None).unwrap();
    assert_eq!(snapshot(&trainer, &|_| true, true), frozen_before);
    let learned_after = snapshot(&trainer, &|n| n.starts_with("aligner") || n == "entity.table", false);
    assert!(!learned_before.is_empty());
    for (a, b) in learned_before.iter().zip(&learned_after) {
        assert_ne!(a.1, b.1, "{} did not move", a.0);
    }
}

fn oracle(gold: &[BTreeSet<usize>], pred: &[BTreeSet<usize>], labels: usize) -> [f64; 5] {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let count = |l: usize, g: bool, p: bool| {
        gold.iter()
            .zip(pred)
            .filter(|(x, y)| x.contains(&l) == g && y.contains(&l) == p)
            .count()
    };
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut macro_sum = 0.0;
    let mut present = 0;
    for l in 0..labels {
        let (t, p, n) = (count(l, true, true), count(l, false, true), count(l, true, false));
        tp += t;
        fp += p;
        fn_ += n;
        if t + p + n > 0 {
            present += 1;
            macro_sum += ratio(2 * t, 2 * t + p + n);
        }
    }
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let exact = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    [
        p,
        r,
        f,
        if present == 0 { 0.0 } else { macro_sum / present as f64 },
        ratio(exact, gold.len()),
    ]
}

#[test]
fn metrics_match_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let labels = rng.random_range(1..6);
        let n = rng.random_range(1..8);
        let mut draw = || -> Vec<BTreeSet<usize>> { (0..n).map(|_| (0..labels).filter(|_| rng.random_bool(0.4)).collect()).collect() };
        let gold = draw();
        let pred = draw();
        let m = evaluate_sets(&gold, &pred).unwrap();
        let got = [m.micro_precision, m.micro_recall, m.micro_f1, m.macro_f1, m.accuracy];
        assert_eq!(
            got.map(f64::to_bits),
            oracle(&gold, &pred, labels).map(f64::to_bits),
            "{gold:?} {pred:?}"
        );
    }
}

#[test]
fn every_scheme_builds_a_model() {
    for scheme in ["last", "first", "first_and_last", "uniform", "middle", "custom:1,2"] {
        let cfg = ModelConfig {
            alignment: scheme.parse::<AlignmentScheme>().unwrap(),
            knowledge_layers: 2,
            ..reference::config()
        };
        let model = Ered::new(&cfg).unwrap();
        assert_eq!(model.network.schedule().len(), 2, "{scheme}");
    }
}
