//! Knowledge base records, the entity vocabulary, gazetteer linking and
//! negative-entity sampling.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{tokenize, CharSpan, TaskKind};

/// Reserved entity at row 0: the entity identifier and the positive fallback.
pub const MASK_ENTITY: &str = "[E-MASK]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbRecord {
    pub entity_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    records: Vec<KbRecord>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(records: Vec<KbRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.entity_id == MASK_ENTITY {
                return Err(Error::Format(format!("{MASK_ENTITY} is reserved")));
            }
            if by_id.insert(r.entity_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate entity id {:?}", r.entity_id)));
            }
        }
        Ok(Self { records, by_id })
    }

    /// Reads the JSONL format, one `{"entity_id", "name", "description"}` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: KbRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn records(&self) -> &[KbRecord] {
        &self.records
    }

    pub fn get(&self, entity_id: &str) -> Option<&KbRecord> {
        self.by_id.get(entity_id).map(|&i| &self.records[i])
    }

    /// Description text; empty for the reserved entity and unknown ids.
    pub fn description(&self, entity_id: &str) -> &str {
        self.get(entity_id).map_or("", |r| r.description.as_str())
    }
}

/// Bijection between entity ids and embedding-table rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityVocab {
    ids: Vec<String>,
    rows: HashMap<String, usize>,
}

impl EntityVocab {
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let ids = std::iter::once(MASK_ENTITY.to_string())
            .chain(kb.records().iter().map(|r| r.entity_id.clone()))
            .collect();
        Self::from_ids(ids)
    }

    fn from_ids(ids: Vec<String>) -> Self {
        let rows = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self { ids, rows }
    }

    /// Parses `entity_id<TAB>row_index` lines. Rows must be exactly `0..n`
    /// with the reserved entity at row 0.
    pub fn parse_tsv(contents: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in contents.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, row) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("entity vocab line {}: expected two columns", i + 1)))?;
            let row: usize = row
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("entity vocab line {}: bad row index", i + 1)))?;
            pairs.push((row, id.to_string()));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, (row, _))| *row != i) {
            return Err(Error::Format("entity vocab rows must be exactly 0..n".into()));
        }
        if pairs.first().map(|p| p.1.as_str()) != Some(MASK_ENTITY) {
            return Err(Error::Format(format!("entity vocab row 0 must be {MASK_ENTITY}")));
        }
        let vocab = Self::from_ids(pairs.into_iter().map(|(_, id)| id).collect());
        if vocab.rows.len() != vocab.ids.len() {
            return Err(Error::Format("entity vocab contains duplicate ids".into()));
        }
        Ok(vocab)
    }

    pub fn to_tsv(&self) -> String {
        self.ids.iter().enumerate().map(|(i, id)| format!("{id}\t{i}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, entity_id: &str) -> Option<usize> {
        self.rows.get(entity_id).copied()
    }

    pub fn id(&self, row: usize) -> Option<&str> {
        self.ids.get(row).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedMention {
    pub span: CharSpan,
    pub entity_id: String,
}

/// Surface form → entity dictionary, matched over normalised token sequences.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    entries: HashMap<Vec<String>, String>,
    max_tokens: usize,
}

impl Gazetteer {
    /// Adds a name; names are normalised with the text tokenizer, so casing
    /// and spacing around punctuation do not matter. The first entry for a
    /// surface form wins.
    pub fn insert(&mut self, name: &str, entity_id: &str) {
        let key: Vec<String> = tokenize(name).into_iter().map(|t| t.text).collect();
        if key.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(key.len());
        self.entries.entry(key).or_insert_with(|| entity_id.to_string());
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let mut g = Self::default();
        for r in kb.records() {
            g.insert(&r.name, &r.entity_id);
        }
        g
    }

    /// Parses `name<TAB>entity_id` lines.
    pub fn parse_tsv(contents: &str) -> Result<Self> {
        let mut g = Self::default();
        for (i, line) in contents.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (name, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("gazetteer line {}: expected two columns", i + 1)))?;
            g.insert(name, id.trim());
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Greedy longest match, left to right, at token boundaries.
    pub fn link(&self, text: &str) -> Vec<LinkedMention> {
        let tokens = tokenize(text);
        let texts: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i))
                .rev()
                .find_map(|n| self.entries.get(&texts[i..i + n]).map(|id| (n, id)));
            match longest {
                Some((n, id)) => {
                    out.push(LinkedMention {
                        span: CharSpan::new(tokens[i].span.start, tokens[i + n - 1].span.end),
                        entity_id: id.clone(),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Draws `count` distinct rows uniformly from the vocabulary minus the
/// positives and minus row 0.
pub fn sample_negatives<R: Rng + ?Sized>(vocab_size: usize, positives: &[usize], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let excluded: BTreeSet<usize> = positives.iter().copied().chain(std::iter::once(0)).collect();
    let candidates: Vec<usize> = (0..vocab_size).filter(|r| !excluded.contains(r)).collect();
    if candidates.len() < count || vocab_size <= positives.len() + count {
        return Err(Error::VocabTooSmall {
            vocab: vocab_size,
            positives: positives.len(),
            count,
        });
    }
    Ok(sample(rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotRole {
    Positive,
    Identifier,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntitySlot {
    pub row: usize,
    pub role: SlotRole,
}

/// Entity slots of one example, ordered positives, identifiers, negatives.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntitySlotSet {
    pub slots: Vec<EntitySlot>,
}

impl EntitySlotSet {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn rows(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.row).collect()
    }

    pub fn indices(&self, role: SlotRole) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn rows_with(&self, role: SlotRole) -> Vec<usize> {
        self.slots.iter().filter(|s| s.role == role).map(|s| s.row).collect()
    }

    /// Entity whose description is attached: the first positive slot.
    pub fn description_row(&self) -> Option<usize> {
        self.rows_with(SlotRole::Positive).first().copied()
    }

    /// Copy with `count` freshly sampled negatives replacing any existing ones.
    pub fn with_negatives<R: Rng + ?Sized>(&self, vocab_size: usize, count: usize, rng: &mut R) -> Result<Self> {
        let mut slots: Vec<EntitySlot> = self.slots.iter().filter(|s| s.role != SlotRole::Negative).cloned().collect();
        let positives = self.rows_with(SlotRole::Positive);
        for row in sample_negatives(vocab_size, &positives, count, rng)? {
            slots.push(EntitySlot {
                row,
                role: SlotRole::Negative,
            });
        }
        Ok(Self { slots })
    }

    /// Replaces the negative slots with freshly sampled rows.
    pub fn resample_negatives<R: Rng + ?Sized>(&mut self, vocab_size: usize, rng: &mut R) -> Result<()> {
        let count = self.indices(SlotRole::Negative).len();
        *self = self.with_negatives(vocab_size, count, rng)?;
        Ok(())
    }
}

pub fn identifier_count(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Relation => 2,
        TaskKind::Typing | TaskKind::Sentence => 1,
    }
}

/// Builds the slot set: up to `max_positives` positives in span order (row 0
/// when there is no mention), the task's identifier slots, then
/// `neg_count` sampled negatives.
pub fn resolve_slots<R: Rng + ?Sized>(
    mentions: &[LinkedMention],
    entities: &EntityVocab,
    max_positives: usize,
    neg_count: usize,
    kind: TaskKind,
    rng: &mut R,
) -> Result<EntitySlotSet> {
    if max_positives == 0 {
        return Err(Error::Config("number of entities must be at least 1".into()));
    }
    let mut ordered: Vec<&LinkedMention> = mentions.iter().collect();
    ordered.sort_by_key(|m| m.span);
    let mut positives = Vec::new();
    for m in ordered.into_iter().take(max_positives) {
        let row = entities
            .row(&m.entity_id)
            .ok_or_else(|| Error::UnknownEntity(m.entity_id.clone()))?;
        positives.push(row);
    }
    if positives.is_empty() {
        positives.push(0);
    }
    let mut slots: Vec<EntitySlot> = positives
        .iter()
        .map(|&row| EntitySlot {
            row,
            role: SlotRole::Positive,
        })
        .collect();
    slots.extend((0..identifier_count(kind)).map(|_| EntitySlot {
        row: 0,
        role: SlotRole::Identifier,
    }));
    for row in sample_negatives(entities.len(), &positives, neg_count, rng)? {
        slots.push(EntitySlot {
            row,
            role: SlotRole::Negative,
        });
    }
    Ok(EntitySlotSet { slots })
}
