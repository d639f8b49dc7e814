//! Synthetic datasets.
//!
//! * [`knowledge_dataset`]: binary sentence classification whose label is a
//!   function of a keyword in the linked entity's KB description. The text
//!   holds only label-independent filler around the entity name, and dev
//!   entities never occur in training, so without the description a model
//!   can do no better than chance on dev.
//! * [`typing_dataset`]: a small multi-label entity-typing set for overfit
//!   checks.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::AlignmentScheme;
use crate::kb::{KbRecord, KnowledgeBase};
use crate::train::config::TrainConfig;
use crate::train::data::{save_dataset, RawExample, RawMention};
use crate::vocab::{TaskKind, RESERVED};

const TEXT_FILLER: [&str; 12] = [
    "today", "we", "saw", "heard", "about", "near", "again", "with", "then", "later", "there", "here",
];
const DESCRIPTION_FILLER: [&str; 8] = ["a", "known", "old", "the", "famous", "local", "small", "large"];
const CLASS_KEYWORDS: [&str; 2] = ["river", "singer"];
const CLASS_LABELS: [&str; 2] = ["place", "person"];

/// A generated dataset plus a matching training configuration whose paths
/// are relative to the directory it is written to.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub kb: KnowledgeBase,
    pub config: TrainConfig,
}

impl SynthDataset {
    /// Writes `train.jsonl`, `dev.jsonl`, `kb.jsonl` and `config.json`;
    /// returns the config path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        save_dataset(&dir.join("train.jsonl"), &self.train)?;
        save_dataset(&dir.join("dev.jsonl"), &self.dev)?;
        self.kb.save(&dir.join("kb.jsonl"))?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(path)
    }
}

/// Joins words with spaces and returns the char span of word `target`.
fn sentence(words: &[String], target: usize) -> (String, [usize; 2]) {
    let mut text = String::new();
    let mut span = [0, 0];
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(w);
        if i == target {
            span = [start, start + w.chars().count()];
        }
    }
    (text, span)
}

fn mention_example<R: Rng>(rng: &mut R, name: &str, entity_id: &str, labels: Vec<String>) -> RawExample {
    let before = rng.random_range(1..=2);
    let after = rng.random_range(1..=2);
    let mut words: Vec<String> = (0..before)
        .map(|_| TEXT_FILLER.choose(rng).expect("non-empty").to_string())
        .collect();
    words.push(name.to_string());
    words.extend((0..after).map(|_| TEXT_FILLER.choose(rng).expect("non-empty").to_string()));
    let (text, span) = sentence(&words, before);
    RawExample {
        text,
        labels,
        mentions: vec![RawMention {
            span,
            entity_id: entity_id.to_string(),
        }],
        target_span: None,
        head_span: None,
        tail_span: None,
    }
}

/// Entity counts and examples per entity used by the `synth` command.
pub const KNOWLEDGE_TRAIN_ENTITIES: usize = 1000;
pub const KNOWLEDGE_DEV_ENTITIES: usize = 100;
pub const KNOWLEDGE_PER_ENTITY: usize = 1;

/// `train_entities` training and `dev_entities` held-out entities with
/// balanced classes; each appears in `per_entity` examples. A description is
/// one class keyword and one filler word in random order.
pub fn knowledge_dataset(seed: u64, train_entities: usize, dev_entities: usize, per_entity: usize) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut classes = Vec::new();
    for i in 0..train_entities + dev_entities {
        let class = i % 2;
        let filler = *DESCRIPTION_FILLER.choose(&mut rng).expect("non-empty");
        let keyword = CLASS_KEYWORDS[class];
        let words = if rng.random_bool(0.5) {
            [filler, keyword]
        } else {
            [keyword, filler]
        };
        records.push(KbRecord {
            entity_id: format!("E{i}"),
            name: format!("ent{i}"),
            description: words.join(" "),
        });
        classes.push(class);
    }
    let make = |range: std::ops::Range<usize>, rng: &mut ChaCha8Rng| -> Vec<RawExample> {
        let mut out = Vec::new();
        for i in range {
            for _ in 0..per_entity {
                let r = &records[i];
                out.push(mention_example(
                    rng,
                    &r.name,
                    &r.entity_id,
                    vec![CLASS_LABELS[classes[i]].to_string()],
                ));
            }
        }
        out
    };
    let mut train = make(0..train_entities, &mut rng);
    let mut dev = make(train_entities..train_entities + dev_entities, &mut rng);
    use rand::seq::SliceRandom;
    train.shuffle(&mut rng);
    dev.shuffle(&mut rng);

    let mut config = TrainConfig::new(TaskKind::Sentence, "train.jsonl");
    config.dev = Some("dev.jsonl".into());
    config.kb = Some("kb.jsonl".into());
    // Exactly the filler and keyword words: entity names stay out of the vocabulary.
    config.vocab_size = RESERVED.len() + TEXT_FILLER.len() + DESCRIPTION_FILLER.len() + CLASS_KEYWORDS.len();
    config.maximum_text_length = 8;
    config.maximum_description_length = 8;
    config.number_of_entities = 1;
    config.number_of_negatives = 1;
    config.batch_size = 16;
    config.learning_rate = 1e-3;
    config.max_steps = Some(2000);
    config.evaluation_steps = 200;
    config.alignment = AlignmentScheme::Last;
    config.seed = seed;
    Ok(SynthDataset {
        train,
        dev,
        kb: KnowledgeBase::new(records)?,
        config,
    })
}

const TYPES: [&str; 5] = ["person", "location", "organization", "event", "artifact"];

/// `examples` typing examples over 20 entities, each carrying a fixed set of
/// one or two of five types; the vocabulary is capped at 64 tokens.
pub fn typing_dataset(seed: u64, examples: usize) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut types = Vec::new();
    for i in 0..20 {
        let first = i % TYPES.len();
        let mut t = vec![first];
        if rng.random_bool(0.4) {
            t.push((first + rng.random_range(1..TYPES.len())) % TYPES.len());
        }
        t.sort_unstable();
        let desc: Vec<&str> = t.iter().map(|&k| TYPES[k]).collect();
        records.push(KbRecord {
            entity_id: format!("T{i}"),
            name: format!("name{i}"),
            description: format!("a {}", desc.join(" and ")),
        });
        types.push(t);
    }
    let train: Vec<RawExample> = (0..examples)
        .map(|_| {
            let i = rng.random_range(0..records.len());
            let labels = types[i].iter().map(|&k| TYPES[k].to_string()).collect();
            mention_example(&mut rng, &records[i].name, &records[i].entity_id, labels)
        })
        .collect();
    let mut config = TrainConfig::new(TaskKind::Typing, "train.jsonl");
    config.kb = Some("kb.jsonl".into());
    config.vocab_size = 64;
    config.maximum_text_length = 10;
    config.maximum_description_length = 8;
    config.number_of_entities = 1;
    config.batch_size = 10;
    config.learning_rate = 2e-3;
    config.max_steps = Some(500);
    config.evaluation_steps = 100;
    config.seed = seed;
    Ok(SynthDataset {
        dev: train.clone(),
        train,
        kb: KnowledgeBase::new(records)?,
        config,
    })
}
