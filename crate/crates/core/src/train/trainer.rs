//! The optimisation loop with periodic evaluation and best-checkpoint
//! selection.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{precompute_cache, DescriptionCache};
use crate::error::{Error, Result};
use crate::heads::LossBundle;
use crate::model::{Ered, ModelInput, TrainItem};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::checkpoint;
use crate::train::config::TrainConfig;
use crate::train::data::{load_dataset, prepare_all, PreparedExample, Resources};
use crate::train::metrics::{argmax, evaluate_sets, threshold, MetricReport};
use crate::train::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::vocab::TaskKind;

/// Independent stream for `(seed, a, b)`; used per (step, example) for
/// negative sampling and the pollution-task order, and per epoch for
/// shuffling.
pub fn derive_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&a.to_le_bytes());
    bytes[16..24].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(rename = "L_m")]
    pub main: f64,
    #[serde(rename = "L_a")]
    pub aux_a: f64,
    #[serde(rename = "L_ap")]
    pub aux_b: f64,
    pub total: f64,
    pub lr: f64,
}

impl StepLog {
    fn new(step: usize, b: &LossBundle, lr: f64) -> Self {
        Self {
            step,
            main: b.main,
            aux_a: b.aux_a,
            aux_b: b.aux_b,
            total: b.total,
            lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub split: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalRecord>,
    pub best: Option<EvalRecord>,
}

/// Number of updates implied by the config and training-set size.
pub fn total_steps(cfg: &TrainConfig, train_len: usize) -> usize {
    cfg.max_steps.unwrap_or_else(|| cfg.epoch * train_len.div_ceil(cfg.batch_size))
}

/// Score used to pick the best checkpoint.
pub fn selection_score(task: TaskKind, m: &MetricReport) -> f64 {
    match task {
        TaskKind::Sentence => m.accuracy,
        TaskKind::Typing | TaskKind::Relation => m.micro_f1,
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    res: Resources,
    train: Vec<PreparedExample>,
    dev: Vec<PreparedExample>,
    model: Ered,
    optimizer: AdamW,
    schedule: LrSchedule,
    cache: Option<DescriptionCache>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let raw_train = load_dataset(&cfg.train)?;
        let res = Resources::build(&cfg, &raw_train)?;
        let train = prepare_all(&raw_train, &res, &cfg)?;
        let dev = match &cfg.dev {
            Some(p) => prepare_all(&load_dataset(p)?, &res, &cfg)?,
            None => Vec::new(),
        };
        let model = Ered::new(&cfg.model_config(res.labels.len(), res.vocab.len(), res.entities.len()))?;
        let cache = match &cfg.cache {
            Some(p) if cfg.number_of_entities > 0 => Some(DescriptionCache::load(p)?),
            _ => None,
        };
        if let Some(c) = &cache {
            if c.layers() != cfg.knowledge_layers || c.width() != cfg.knowledge_dim {
                return Err(Error::Config(format!(
                    "cache holds {} layers of width {}, model expects {} of width {}",
                    c.layers(),
                    c.width(),
                    cfg.knowledge_layers,
                    cfg.knowledge_dim
                )));
            }
        }
        let schedule = LrSchedule::new(cfg.learning_rate, total_steps(&cfg, train.len()), cfg.warmup_ratio)?;
        let optimizer = AdamW::new(AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        });
        Ok(Self {
            cfg,
            res,
            train,
            dev,
            model,
            optimizer,
            schedule,
            cache,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn resources(&self) -> &Resources {
        &self.res
    }

    pub fn model(&self) -> &Ered {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Ered {
        &mut self.model
    }

    pub fn train_examples(&self) -> &[PreparedExample] {
        &self.train
    }

    pub fn dev_examples(&self) -> &[PreparedExample] {
        &self.dev
    }

    pub fn total_steps(&self) -> usize {
        self.schedule.total_steps
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Description cache built from the current (frozen) knowledge module.
    pub fn build_cache(&self) -> Result<DescriptionCache> {
        precompute_cache(
            &self.model.knowledge,
            &self.res.all_descriptions(self.cfg.maximum_description_length),
        )
    }

    fn description_vectors(&self, ex: &PreparedExample) -> Result<Vec<Tensor>> {
        match (&ex.description, &self.cache) {
            (None, _) => Ok(Vec::new()),
            (Some((id, _)), Some(cache)) => Ok(cache.get(id)?.to_vec()),
            (Some((_, ids)), None) => self.model.describe(ids),
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size.min(self.train.len()) {
            if self.cursor == self.order.len() {
                let mut rng = derive_rng(self.cfg.seed, self.epoch, SHUFFLE_STREAM);
                self.order = (0..self.train.len()).collect();
                rand::seq::SliceRandom::shuffle(self.order.as_mut_slice(), &mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    fn train_item(&self, index: usize) -> Result<TrainItem> {
        let ex = &self.train[index];
        let mut rng = derive_rng(self.cfg.seed, self.step as u64, index as u64);
        let slots = if self.cfg.number_of_negatives > 0 {
            ex.slots
                .with_negatives(self.res.entities.len(), self.cfg.number_of_negatives, &mut rng)?
        } else {
            ex.slots.clone()
        };
        let swap = rng.random_bool(0.5);
        Ok(TrainItem {
            input: ModelInput {
                tokens: ex.tokens.clone(),
                slots,
                cls: self.description_vectors(ex)?,
            },
            target: ex.target.clone(),
            swap,
        })
    }

    /// One optimizer update on the next batch.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = self.next_batch();
        let items = batch.iter().map(|&i| self.train_item(i)).collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let (loss, bundle) = self.model.batch_loss(&mut tape, &items, self.cfg.loss_weights())?;
        let grads = tape.backward(loss)?;
        let lr = self.schedule.lr(self.step);
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        let log = StepLog::new(self.step, &bundle, lr);
        self.step += 1;
        Ok(log)
    }

    /// Predicted label sets: positive logits for typing, argmax otherwise.
    pub fn predict(&self, ex: &PreparedExample) -> Result<std::collections::BTreeSet<usize>> {
        let input = ModelInput {
            tokens: ex.tokens.clone(),
            slots: ex.slots.clone(),
            cls: self.description_vectors(ex)?,
        };
        let logits = self.model.logits(&input)?;
        Ok(match self.cfg.task {
            TaskKind::Typing => threshold(&logits),
            TaskKind::Relation | TaskKind::Sentence => argmax(&logits),
        })
    }

    pub fn evaluate(&self, examples: &[PreparedExample]) -> Result<MetricReport> {
        let gold: Vec<_> = examples.iter().map(|e| e.gold.clone()).collect();
        let pred = examples.iter().map(|e| self.predict(e)).collect::<Result<Vec<_>>>()?;
        evaluate_sets(&gold, &pred)
    }

    fn eval_split(&self) -> Result<EvalRecord> {
        let (split, examples) = if self.dev.is_empty() {
            ("train", &self.train)
        } else {
            ("dev", &self.dev)
        };
        Ok(EvalRecord {
            step: self.step,
            split: split.to_string(),
            metrics: self.evaluate(examples)?,
        })
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&[&self.model.store, self.model.knowledge.store()])
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let Ered { store, knowledge, .. } = &mut self.model;
        checkpoint::load(path, &mut [store, knowledge.store_mut()])
    }

    /// Trains for the configured number of steps. With `out`, writes
    /// `loss_log.csv`, `metrics.json` (one JSON object per evaluation) and
    /// `checkpoint.bin` (the best evaluation so far; dev split when present,
    /// otherwise train).
    pub fn run(&mut self, out: Option<&Path>) -> Result<TrainSummary> {
        let mut files = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut log = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_path(dir.join("loss_log.csv"))
                    .map_err(csv_err)?;
                log.write_record(["step", "L_m", "L_a", "L_ap", "total", "lr"]).map_err(csv_err)?;
                let metrics = std::fs::File::create(dir.join("metrics.json"))?;
                Some((dir.to_path_buf(), log, metrics))
            }
            None => None,
        };
        let total = self.total_steps();
        let mut summary = TrainSummary {
            steps: Vec::with_capacity(total),
            evals: Vec::new(),
            best: None,
        };
        while self.step < total {
            let log = self.step()?;
            if let Some((_, w, _)) = files.as_mut() {
                w.serialize(log).map_err(csv_err)?;
            }
            summary.steps.push(log);
            if self.step.is_multiple_of(self.cfg.evaluation_steps) || self.step == total {
                let record = self.eval_split()?;
                let score = selection_score(self.cfg.task, &record.metrics);
                let improved = summary
                    .best
                    .as_ref()
                    .is_none_or(|b| score > selection_score(self.cfg.task, &b.metrics));
                if let Some((dir, _, metrics)) = files.as_mut() {
                    writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
                    if improved {
                        std::fs::write(dir.join("checkpoint.bin"), self.checkpoint_bytes())?;
                    }
                }
                if improved {
                    summary.best = Some(record.clone());
                }
                summary.evals.push(record);
            }
        }
        if let Some((_, mut w, mut metrics)) = files {
            w.flush()?;
            metrics.flush()?;
        }
        Ok(summary)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("loss log: {e}"))
}
