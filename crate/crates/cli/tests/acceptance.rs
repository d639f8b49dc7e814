//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Tolerances and budgets are the constants below.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ered::fusion::{AlignmentSchedule, AlignmentScheme};
use ered::heads::LossWeights;
use ered::kb::SlotRole;
use ered::model::{Ered, ModelConfig, ModelInput, TrainItem};
use ered::reference;
use ered::synth;
use ered::tape::Tape;
use ered::tensor::Tensor;
use ered::train::metrics::evaluate_sets;
use ered::train::{TrainConfig, Trainer};
use ered::vocab::{SpecialPositions, TaskKind, TokenizedExample, CLS, SEP};

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_EPSILON: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const FROZEN_STEPS: usize = 100;
const CACHE_STEPS: usize = 50;
const KNOWLEDGE_STEPS: usize = 2000;
const KNOWLEDGE_MIN_DEV_ACC: f64 = 0.90;
const BASELINE_MAX_DEV_ACC: f64 = 0.60;
const KNOWLEDGE_BUDGET: Duration = Duration::from_secs(300);
const TYPING_STEPS: usize = 500;
const TYPING_MIN_F1: f64 = 0.99;
const METRIC_TRIALS: usize = 1000;

type Outcome = anyhow::Result<(bool, String)>;
type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn trainer_for(ds: &synth::SynthDataset, dir: &Path, edit: impl FnOnce(&mut TrainConfig)) -> anyhow::Result<Trainer> {
    let mut cfg = TrainConfig::load(&ds.write(dir)?)?;
    edit(&mut cfg);
    Ok(Trainer::new(cfg)?)
}

fn gradient_check() -> Outcome {
    assert_eq!((reference::EPSILON, reference::TOLERANCE), (GRAD_EPSILON, GRAD_TOLERANCE));
    let start = Instant::now();
    let native = reference::model_grad_check(None)?;
    let elapsed = start.elapsed();
    let large = reference::model_grad_check(Some(0.4))?;
    let ok = native.max_rel_error <= GRAD_TOLERANCE && large.max_rel_error <= GRAD_TOLERANCE && elapsed < GRAD_BUDGET;
    Ok((
        ok,
        format!(
            "{} elements, max rel err {:.2e} at init / {:.2e} with N(0, 0.4²) weights, {:.1?}",
            native.checked, native.max_rel_error, large.max_rel_error, elapsed
        ),
    ))
}

fn frozen_invariance(dir: &Path) -> Outcome {
    let ds = synth::typing_dataset(3, 100)?;
    let mut t = trainer_for(&ds, dir, |c| {
        c.max_steps = Some(FROZEN_STEPS);
        c.number_of_negatives = 1;
    })?;
    let grab = |t: &Trainer, knowledge: bool| -> Vec<(String, Vec<u64>)> {
        let store = if knowledge { t.model().knowledge.store() } else { &t.model().store };
        store
            .iter()
            .filter(|(_, p)| knowledge || p.name.starts_with("aligner") || p.name == "entity.table")
            .map(|(_, p)| (p.name.clone(), bits(&p.value)))
            .collect()
    };
    let (k0, l0) = (grab(&t, true), grab(&t, false));
    for _ in 0..FROZEN_STEPS {
        t.step()?;
    }
    let (k1, l1) = (grab(&t, true), grab(&t, false));
    let moved = l0.iter().zip(&l1).filter(|(a, b)| a.1 != b.1).count();
    Ok((
        k0 == k1 && moved == l0.len(),
        format!(
            "{} knowledge tensors bit-identical: {}; {moved}/{} aligner/entity tensors changed",
            k0.len(),
            k0 == k1,
            l0.len()
        ),
    ))
}

fn cache_equivalence(dir: &Path) -> Outcome {
    let ds = synth::typing_dataset(4, 100)?;
    let mut live = trainer_for(&ds, &dir.join("live"), |c| c.max_steps = Some(CACHE_STEPS))?;
    let cache_path = dir.join("cache.bin");
    live.build_cache()?.save(&cache_path)?;
    let mut cached = trainer_for(&ds, &dir.join("cached"), |c| {
        c.max_steps = Some(CACHE_STEPS);
        c.cache = Some(cache_path.clone());
    })?;
    let mut same = 0;
    for _ in 0..CACHE_STEPS {
        let (a, b) = (live.step()?, cached.step()?);
        let key = |s: &ered::train::StepLog| [s.main, s.aux_a, s.aux_b, s.total].map(f64::to_bits);
        same += usize::from(key(&a) == key(&b));
    }
    Ok((same == CACHE_STEPS, format!("{same}/{CACHE_STEPS} steps with bit-identical losses")))
}

fn negative_isolation() -> Outcome {
    let model = Ered::new(&reference::config())?;
    let base = &reference::batch(&model)?[0];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let observe = |item: &TrainItem| -> anyhow::Result<(Vec<Vec<u64>>, [u64; 2], f64)> {
        let mut tape = Tape::new();
        let v = model.forward(&mut tape, &item.input)?.views;
        let views = [v.h_i.unwrap(), v.h_e, v.e_p.unwrap()]
            .iter()
            .map(|&x| bits(tape.value(x)))
            .collect();
        let mut tape = Tape::new();
        let (_, b) = model.batch_loss(&mut tape, std::slice::from_ref(item), reference::weights())?;
        Ok((views, [b.main.to_bits(), b.aux_a.to_bits()], b.aux_b))
    };
    let reference_obs = observe(base)?;
    let (mut isolated, mut changed, trials) = (0, 0, 20);
    for _ in 0..trials {
        let mut item = base.clone();
        let positives = item.input.slots.rows_with(SlotRole::Positive);
        let fresh = loop {
            let r = rng.random_range(1..reference::config().num_entities);
            if !positives.contains(&r) && r != item.input.slots.rows_with(SlotRole::Negative)[0] {
                break r;
            }
        };
        for s in item.input.slots.slots.iter_mut().filter(|s| s.role == SlotRole::Negative) {
            s.row = fresh;
        }
        let obs = observe(&item)?;
        isolated += usize::from(obs.0 == reference_obs.0 && obs.1 == reference_obs.1);
        changed += usize::from(obs.2 != reference_obs.2);
    }
    Ok((
        isolated == trials && changed == trials,
        format!("{trials} resamples: h_I/h_E/e_p/L_m/L_a identical in {isolated}, L_ap changed in {changed}"),
    ))
}

fn reduction_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut equal, trials) = (0, 20);
    for seed in 0..trials {
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
        let model = Ered::new(&cfg)?;
        let len = rng.random_range(2..=8);
        let mut ids: Vec<u32> = (0..len).map(|_| rng.random_range(8..20)).collect();
        ids[0] = CLS;
        ids[len - 1] = SEP;
        ids.resize(8, 0);
        let tokens = TokenizedExample {
            token_ids: ids,
            length: len,
            char_to_token: Vec::new(),
            special: SpecialPositions::default(),
        };
        let input = ModelInput {
            tokens: tokens.clone(),
            slots: Default::default(),
            cls: Vec::new(),
        };
        let mut tape = Tape::new();
        let fused = model.forward(&mut tape, &input)?.state;
        let plain = model.network.plain_encode(&mut tape, &model.store, &tokens)?;
        equal += usize::from(bits(tape.value(fused)) == bits(tape.value(plain)));
    }
    Ok((equal == trials as usize, format!("{equal}/{trials} random inputs bit-exact")))
}

fn schedules() -> Outcome {
    let resolve = |s: AlignmentScheme, l, k| AlignmentSchedule::resolve(&s, l, k).map(|r| r.layers().to_vec());
    let checks = [
        (resolve(AlignmentScheme::Last, 24, 6)?, (19..=24).collect::<Vec<_>>()),
        (resolve(AlignmentScheme::Custom { layers: vec![1, 2, 5] }, 6, 3)?, vec![1, 2, 5]),
        (resolve(AlignmentScheme::First, 12, 6)?, (1..=6).collect()),
        (resolve(AlignmentScheme::FirstAndLast, 12, 6)?, vec![1, 2, 3, 10, 11, 12]),
        (resolve(AlignmentScheme::Uniform, 12, 6)?, vec![2, 4, 6, 8, 10, 12]),
        (resolve(AlignmentScheme::Middle, 12, 6)?, (3..=8).collect()),
        (resolve(AlignmentScheme::Last, 12, 6)?, (7..=12).collect()),
    ];
    let ok = checks.iter().filter(|(a, b)| a == b).count();
    let rejects = resolve(AlignmentScheme::Custom { layers: vec![2, 1, 5] }, 6, 3).is_err();
    Ok((
        ok == checks.len() && rejects,
        format!("{ok}/{} index sets match; unordered custom list rejected: {rejects}", checks.len()),
    ))
}

fn loss_composition() -> Outcome {
    let model = Ered::new(&reference::config())?;
    let batch = reference::batch(&model)?;
    let mut exact = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let w = LossWeights {
            alpha: rng.random_range(0.0..2.0),
            beta: rng.random_range(0.0..2.0),
            use_aux_a: true,
            use_aux_b: true,
        };
        let (_, b) = model.batch_loss(&mut Tape::new(), &batch, w)?;
        exact += usize::from(b.total.to_bits() == (b.main + w.alpha * b.aux_a + w.beta * b.aux_b).to_bits());
    }
    let head_grad_zero = |w: LossWeights, prefixes: &[&str]| -> anyhow::Result<bool> {
        let mut tape = Tape::new();
        let (loss, bundle) = model.batch_loss(&mut tape, &batch, w)?;
        let grads = tape.backward(loss)?;
        let term_zero = (w.use_aux_a || bundle.aux_a == 0.0) && (w.use_aux_b || bundle.aux_b == 0.0);
        let grads_zero = model
            .store
            .iter()
            .filter(|(_, p)| prefixes.iter().any(|x| p.name.starts_with(x)))
            .all(|(id, _)| grads.param(&model.store, id).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
        Ok(term_zero && grads_zero)
    };
    let full = reference::weights();
    let no_a = head_grad_zero(LossWeights { use_aux_a: false, ..full }, &["head.enhancement", "head.description"])?;
    let no_b = head_grad_zero(LossWeights { use_aux_b: false, ..full }, &["head.pollution"])?;
    Ok((
        exact == 20 && no_a && no_b,
        format!("total exact in {exact}/20; no-aux-a zeroed: {no_a}; no-aux-b zeroed: {no_b}"),
    ))
}

fn knowledge_utility(dir: &Path) -> Outcome {
    let ds = synth::knowledge_dataset(
        7,
        synth::KNOWLEDGE_TRAIN_ENTITIES,
        synth::KNOWLEDGE_DEV_ENTITIES,
        synth::KNOWLEDGE_PER_ENTITY,
    )?;
    let start = Instant::now();
    let mut full = trainer_for(&ds, &dir.join("full"), |c| c.max_steps = Some(KNOWLEDGE_STEPS))?;
    let full_best = full.run(None)?.best.map_or(0.0, |b| b.metrics.accuracy);
    let full_time = start.elapsed();
    let mut base = trainer_for(&ds, &dir.join("base"), |c| {
        c.max_steps = Some(KNOWLEDGE_STEPS);
        c.number_of_entities = 0;
        c.number_of_negatives = 0;
        c.knowledge_layers = 0;
        c.use_aux_a = false;
        c.use_aux_b = false;
    })?;
    let base_best = base.run(None)?.best.map_or(1.0, |b| b.metrics.accuracy);
    Ok((
        full_best >= KNOWLEDGE_MIN_DEV_ACC && base_best <= BASELINE_MAX_DEV_ACC && full_time < KNOWLEDGE_BUDGET,
        format!("full Ered dev acc {full_best:.3} in {full_time:.1?}; baseline {base_best:.3}"),
    ))
}

fn typing_overfit(dir: &Path) -> Outcome {
    let ds = synth::typing_dataset(1, 100)?;
    let mut t = trainer_for(&ds, dir, |c| {
        c.max_steps = Some(TYPING_STEPS);
        c.dev = None;
    })?;
    let best = t.run(None)?.best.map_or(0.0, |b| b.metrics.micro_f1);
    Ok((
        best >= TYPING_MIN_F1,
        format!("best train micro-F1 {best:.4} within {TYPING_STEPS} steps"),
    ))
}

fn brute_force(gold: &[BTreeSet<usize>], pred: &[BTreeSet<usize>], labels: usize) -> [f64; 5] {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let (mut tp, mut fp, mut fn_, mut present, mut macro_sum) = (0, 0, 0, 0, 0.0);
    for l in 0..labels {
        let (mut t, mut p, mut n) = (0, 0, 0);
        for (g, q) in gold.iter().zip(pred) {
            match (g.contains(&l), q.contains(&l)) {
                (true, true) => t += 1,
                (false, true) => p += 1,
                (true, false) => n += 1,
                _ => {}
            }
        }
        (tp, fp, fn_) = (tp + t, fp + p, fn_ + n);
        if t + p + n > 0 {
            present += 1;
            macro_sum += ratio(2 * t, 2 * t + p + n);
        }
    }
    let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let exact = gold.iter().zip(pred).filter(|(g, q)| g == q).count();
    [
        p,
        r,
        f,
        if present == 0 { 0.0 } else { macro_sum / present as f64 },
        ratio(exact, gold.len()),
    ]
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut agree = 0;
    for _ in 0..METRIC_TRIALS {
        let labels = rng.random_range(1..7);
        let n = rng.random_range(1..10);
        let mut draw = || -> Vec<BTreeSet<usize>> { (0..n).map(|_| (0..labels).filter(|_| rng.random_bool(0.35)).collect()).collect() };
        let (gold, pred) = (draw(), draw());
        let m = evaluate_sets(&gold, &pred)?;
        let got = [m.micro_precision, m.micro_recall, m.micro_f1, m.macro_f1, m.accuracy].map(f64::to_bits);
        agree += usize::from(got == brute_force(&gold, &pred, labels).map(f64::to_bits));
    }
    Ok((agree == METRIC_TRIALS, format!("{agree}/{METRIC_TRIALS} random sets match exactly")))
}

fn determinism(dir: &Path) -> Outcome {
    let ds = synth::typing_dataset(6, 100)?;
    let mut cfg = ds.config.clone();
    cfg.max_steps = Some(60);
    cfg.evaluation_steps = 20;
    let config = ds.write(dir)?;
    std::fs::write(&config, serde_json::to_string(&cfg)?)?;
    let run = |out: &str| -> anyhow::Result<bool> {
        let status = Command::new(env!("CARGO_BIN_EXE_ered"))
            .args(["train", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(dir.join(out))
            .output()?
            .status;
        Ok(status.success())
    };
    let ran = run("a")? && run("b")?;
    let same = |f: &str| -> anyhow::Result<bool> { Ok(std::fs::read(dir.join("a").join(f))? == std::fs::read(dir.join("b").join(f))?) };
    let (log, ckpt) = if ran {
        (same("loss_log.csv")?, same("checkpoint.bin")?)
    } else {
        (false, false)
    };
    Ok((
        ran && log && ckpt,
        format!("loss logs identical: {log}; checkpoints identical: {ckpt}"),
    ))
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let sub = |name: &str| root.path().join(name);
    let criteria: Vec<Criterion> = vec![
        ("gradient check", Box::new(gradient_check)),
        ("frozen knowledge module", Box::new(move || frozen_invariance(&sub("c2")))),
        ("cache equivalence", Box::new(move || cache_equivalence(&sub("c3")))),
        ("negative isolation", Box::new(negative_isolation)),
        ("reduction equivalence", Box::new(reduction_equivalence)),
        ("alignment schedules", Box::new(schedules)),
        ("loss composition", Box::new(loss_composition)),
        ("knowledge utility", Box::new(move || knowledge_utility(&sub("c8")))),
        ("typing overfit", Box::new(move || typing_overfit(&sub("c9")))),
        ("metric oracle", Box::new(metric_oracle)),
        ("determinism", Box::new(move || determinism(&sub("c11")))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e:#}")));
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<26} {}  ({detail})",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
