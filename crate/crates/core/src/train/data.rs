//! JSONL dataset loading, label vocabularies, and conversion of raw records
//! into model-ready examples.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::Target;
use crate::kb::{identifier_count, EntitySlot, EntitySlotSet, EntityVocab, Gazetteer, KnowledgeBase, LinkedMention, SlotRole};
use crate::train::config::{EntitySource, TrainConfig};
use crate::vocab::{CharSpan, TaskKind, TokenizedExample, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMention {
    pub span: [usize; 2],
    pub entity_id: String,
}

/// One dataset line. Spans are half-open character offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExample {
    pub text: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<RawMention>,
    /// Typing target; defaults to the first mention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_span: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_span: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_span: Option<[usize; 2]>,
}

fn span(s: [usize; 2]) -> CharSpan {
    CharSpan::new(s[0], s[1])
}

/// Parses a JSONL dataset; errors carry the offending line number.
pub fn load_dataset(path: &Path) -> Result<Vec<RawExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, examples: &[RawExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Label strings ↔ indices, sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelVocab {
    pub fn from_examples(examples: &[RawExample]) -> Result<Self> {
        let set: BTreeSet<&str> = examples.iter().flat_map(|e| e.labels.iter().map(String::as_str)).collect();
        if set.is_empty() {
            return Err(Error::Config("training data has no labels".into()));
        }
        let labels: Vec<String> = set.into_iter().map(str::to_string).collect();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.index.get(label).copied().ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Vocabularies and lookup tables shared by every split.
#[derive(Clone, Debug)]
pub struct Resources {
    pub task: TaskKind,
    pub vocab: Vocab,
    pub kb: KnowledgeBase,
    pub entities: EntityVocab,
    pub gazetteer: Gazetteer,
    pub labels: LabelVocab,
}

impl Resources {
    /// Loads the KB and gazetteer, builds or loads the token vocabulary
    /// (training texts plus KB descriptions) and the label set of `train`.
    pub fn build(cfg: &TrainConfig, train: &[RawExample]) -> Result<Self> {
        let kb = match &cfg.kb {
            Some(p) => KnowledgeBase::load(p)?,
            None => KnowledgeBase::default(),
        };
        let gazetteer = match &cfg.gazetteer {
            Some(p) => Gazetteer::parse_tsv(&std::fs::read_to_string(p)?)?,
            None => Gazetteer::from_kb(&kb),
        };
        let vocab = match &cfg.vocab {
            Some(p) => Vocab::load(p)?,
            None => {
                let corpus = train
                    .iter()
                    .map(|e| e.text.as_str())
                    .chain(kb.records().iter().map(|r| r.description.as_str()));
                Vocab::build(corpus, cfg.vocab_size)?
            }
        };
        Ok(Self {
            task: cfg.task,
            entities: EntityVocab::from_kb(&kb),
            labels: LabelVocab::from_examples(train)?,
            vocab,
            kb,
            gazetteer,
        })
    }

    /// Padded description ids of an entity (`[CLS] [SEP]` for an empty one).
    pub fn description_ids(&self, entity_id: &str, max_len: usize) -> Vec<u32> {
        self.vocab.encode_plain(self.kb.description(entity_id), max_len)
    }

    /// Every entity of the table with its padded description ids, in row order.
    pub fn all_descriptions(&self, max_len: usize) -> Vec<(String, Vec<u32>)> {
        self.entities
            .ids()
            .iter()
            .map(|id| (id.clone(), self.description_ids(id, max_len)))
            .collect()
    }
}

/// A validated example without negatives: those are drawn per step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub tokens: TokenizedExample,
    /// Positive and identifier slots; empty when entities are disabled.
    pub slots: EntitySlotSet,
    pub target: Target,
    pub gold: BTreeSet<usize>,
    /// Entity whose description is attached, with its padded ids.
    pub description: Option<(String, Vec<u32>)>,
}

/// Links (or reads) mentions, encodes the text with task markers, and
/// builds positive and identifier slots.
pub fn prepare(raw: &RawExample, res: &Resources, cfg: &TrainConfig) -> Result<PreparedExample> {
    let kind = cfg.task;
    let mentions: Vec<LinkedMention> = match cfg.recognized_entities {
        EntitySource::Dataset => raw
            .mentions
            .iter()
            .map(|m| LinkedMention {
                span: span(m.span),
                entity_id: m.entity_id.clone(),
            })
            .collect(),
        EntitySource::Gazetteer => res.gazetteer.link(&raw.text),
    };
    let markers: Vec<CharSpan> = match kind {
        TaskKind::Sentence => Vec::new(),
        TaskKind::Typing => {
            let target = raw.target_span.map(span).or_else(|| raw.mentions.first().map(|m| span(m.span)));
            vec![target.ok_or_else(|| Error::InvalidArgument {
                op: "prepare",
                msg: "typing example needs a target_span or a mention".into(),
            })?]
        }
        TaskKind::Relation => {
            let (h, t) = raw.head_span.zip(raw.tail_span).ok_or_else(|| Error::InvalidArgument {
                op: "prepare",
                msg: "relation example needs head_span and tail_span".into(),
            })?;
            vec![span(h), span(t)]
        }
    };
    let tokens = res.vocab.encode(&raw.text, &markers, kind, cfg.maximum_text_length)?;

    let mut gold = BTreeSet::new();
    for l in &raw.labels {
        gold.insert(res.labels.index(l)?);
    }
    let target = match kind {
        TaskKind::Typing => {
            let mut y = vec![0.0; res.labels.len()];
            for &g in &gold {
                y[g] = 1.0;
            }
            Target::MultiHot(y)
        }
        TaskKind::Relation | TaskKind::Sentence => {
            if gold.len() != 1 {
                return Err(Error::InvalidArgument {
                    op: "prepare",
                    msg: format!("{kind:?} examples need exactly one label, got {}", gold.len()),
                });
            }
            Target::Class(*gold.iter().next().expect("one label"))
        }
    };

    let (slots, description) = if cfg.number_of_entities == 0 {
        (EntitySlotSet::default(), None)
    } else {
        let mut ordered: Vec<&LinkedMention> = mentions.iter().collect();
        ordered.sort_by_key(|m| m.span);
        let mut slots = Vec::new();
        for m in ordered.iter().take(cfg.number_of_entities) {
            let row = res
                .entities
                .row(&m.entity_id)
                .ok_or_else(|| Error::UnknownEntity(m.entity_id.clone()))?;
            slots.push(EntitySlot {
                row,
                role: SlotRole::Positive,
            });
        }
        if slots.is_empty() {
            slots.push(EntitySlot {
                row: 0,
                role: SlotRole::Positive,
            });
        }
        slots.extend((0..identifier_count(kind)).map(|_| EntitySlot {
            row: 0,
            role: SlotRole::Identifier,
        }));
        let first = res.entities.id(slots[0].row).expect("row from the entity vocab").to_string();
        let ids = res.description_ids(&first, cfg.maximum_description_length);
        (EntitySlotSet { slots }, Some((first, ids)))
    };
    Ok(PreparedExample {
        tokens,
        slots,
        target,
        gold,
        description,
    })
}

pub fn prepare_all(raw: &[RawExample], res: &Resources, cfg: &TrainConfig) -> Result<Vec<PreparedExample>> {
    raw.iter().map(|r| prepare(r, res, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KbRecord;
    use crate::vocab::ENTITY;

    const TABLE1_TEXT: &str = "The British Information Commissioner 's Office invites Web users to locate its address using Google Maps .";

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn table1_setup(dir: &Path) -> (TrainConfig, Vec<RawExample>) {
        let line = serde_json::json!({
            "text": TABLE1_TEXT,
            "labels": ["organization"],
            "mentions": [{"span": [12, 46], "entity_id": "Q1"}],
        });
        let train = write(dir, "train.jsonl", &format!("{line}\n"));
        let kb = KnowledgeBase::new(vec![KbRecord {
            entity_id: "Q1".into(),
            name: "Information Commissioner 's Office".into(),
            description: "non-departmental public body".into(),
        }])
        .unwrap();
        let kb_path = dir.join("kb.jsonl");
        kb.save(&kb_path).unwrap();
        let mut cfg = TrainConfig::new(TaskKind::Typing, train.clone());
        cfg.kb = Some(kb_path);
        (cfg, load_dataset(&train).unwrap())
    }

    #[test]
    fn table1_record_prepares() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, raw) = table1_setup(dir.path());
        assert_eq!(raw[0].mentions[0].span, [12, 46]);
        let res = Resources::build(&cfg, &raw).unwrap();
        let ex = prepare(&raw[0], &res, &cfg).unwrap();
        assert_eq!(ex.tokens.token_ids[ex.tokens.special.entity.unwrap()], ENTITY);
        assert_eq!(ex.slots.rows_with(SlotRole::Positive), vec![1]);
        let (id, ids) = ex.description.unwrap();
        assert_eq!(id, "Q1");
        assert_eq!(res.vocab.decode(&ids[1..4]), vec!["non", "-", "departmental"]);
        assert_eq!(ex.target, Target::MultiHot(vec![1.0]));

        let mut gaz = cfg.clone();
        gaz.recognized_entities = EntitySource::Gazetteer;
        let mut no_mentions = raw[0].clone();
        no_mentions.mentions.clear();
        no_mentions.target_span = Some([12, 46]);
        let ex = prepare(&no_mentions, &res, &gaz).unwrap();
        assert_eq!(ex.slots.rows_with(SlotRole::Positive), vec![1]);
    }

    #[test]
    fn malformed_empty_and_unseen_labels() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "bad.jsonl", "{\"text\":\"a\",\"labels\":[]}\n{oops\n");
        match load_dataset(&bad) {
            Err(Error::Dataset { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let empty = write(dir.path(), "empty.jsonl", "");
        assert!(matches!(load_dataset(&empty), Err(Error::EmptyDataset)));

        let (cfg, raw) = table1_setup(dir.path());
        let res = Resources::build(&cfg, &raw).unwrap();
        let mut dev = raw[0].clone();
        dev.labels = vec!["person".into()];
        match prepare(&dev, &res, &cfg) {
            Err(Error::UnknownLabel(l)) => assert_eq!(l, "person"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relation_and_sentence_need_one_label() {
        let dir = tempfile::tempdir().unwrap();
        let (mut cfg, mut raw) = table1_setup(dir.path());
        cfg.task = TaskKind::Sentence;
        raw[0].labels.push("other".into());
        let res = Resources::build(&cfg, &raw).unwrap();
        assert!(prepare(&raw[0], &res, &cfg).is_err());
        cfg.task = TaskKind::Relation;
        raw[0].labels.pop();
        assert!(prepare(&raw[0], &res, &cfg).is_err());
        raw[0].head_span = Some([0, 3]);
        raw[0].tail_span = Some([95, 101]);
        let ex = prepare(&raw[0], &res, &cfg).unwrap();
        assert_eq!(ex.slots.indices(SlotRole::Identifier).len(), 2);
        assert!(ex.tokens.special.head.is_some() && ex.tokens.special.tail.is_some());
    }
}
