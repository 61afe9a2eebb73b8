//! Object-hallucination metrics.
//!
//! CHAIR compares the object classes mentioned in each caption against the
//! image's ground-truth classes. POPE scores yes/no existence questions with
//! "yes" as the positive class.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Surface form to canonical object class.
///
/// Surface forms are stored tokenized, so `"hot_dog"`, `"Hot Dog"` and
/// `"hot dog"` are the same key. Every canonical class also maps to itself.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    entries: HashMap<Vec<String>, String>,
    max_words: usize,
}

impl SynonymTable {
    pub fn new<I, S, C>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, C)>,
        S: AsRef<str>,
        C: AsRef<str>,
    {
        let mut table = Self::default();
        let mut canon = BTreeSet::new();
        for (surface, class) in pairs {
            let class = class.as_ref().trim().to_lowercase();
            if class.is_empty() {
                return Err(Error::InvalidArgument("empty canonical class".into()));
            }
            table.insert(surface.as_ref(), &class)?;
            canon.insert(class);
        }
        for class in canon {
            table.insert(&class, &class)?;
        }
        Ok(table)
    }

    fn insert(&mut self, surface: &str, class: &str) -> Result<()> {
        let key = tokenize(surface);
        if key.is_empty() {
            return Err(Error::InvalidArgument(format!("surface form {surface:?} has no words")));
        }
        match self.entries.get(&key) {
            Some(existing) if existing != class => {
                return Err(Error::InvalidArgument(format!(
                    "surface form {surface:?} maps to both {existing:?} and {class:?}"
                )))
            }
            Some(_) => {}
            None => {
                self.max_words = self.max_words.max(key.len());
                self.entries.insert(key, class.to_owned());
            }
        }
        Ok(())
    }

    /// Reads a JSON object whose values are either a canonical class
    /// (`{"sports car": "car"}`) or a list of surface forms
    /// (`{"car": ["sports car", "automobile"]}`).
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Entry {
            Class(String),
            Surfaces(Vec<String>),
        }
        let raw: BTreeMap<String, Entry> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("synonym table: {e}")))?;
        let mut pairs = Vec::new();
        for (key, entry) in raw {
            match entry {
                Entry::Class(class) => pairs.push((key, class)),
                Entry::Surfaces(surfaces) => {
                    pairs.push((key.clone(), key.clone()));
                    pairs.extend(surfaces.into_iter().map(|s| (s, key.clone())));
                }
            }
        }
        Self::new(pairs)
    }

    /// Canonical class for a whole surface form, if known.
    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.entries.get(&tokenize(surface)).map(String::as_str)
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.entries.values().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Canonical classes mentioned in `caption`, longest surface form first.
pub fn extract_objects(caption: &str, table: &SynonymTable) -> BTreeSet<String> {
    let words = tokenize(caption);
    let mut found = BTreeSet::new();
    let mut i = 0;
    'scan: while i < words.len() {
        let longest = table.max_words.min(words.len() - i);
        for n in (1..=longest).rev() {
            if let Some(class) = table.entries.get(&words[i..i + n]) {
                found.insert(class.clone());
                i += n;
                continue 'scan;
            }
        }
        i += 1;
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub mentioned: BTreeSet<String>,
    pub ground_truth: BTreeSet<String>,
}

impl CaptionRecord {
    /// Extracts mentions from `caption` and canonicalizes the ground truth.
    /// Unknown ground-truth labels are rejected.
    pub fn from_caption<S: AsRef<str>>(
        id: impl Into<String>,
        caption: &str,
        ground_truth: &[S],
        table: &SynonymTable,
    ) -> Result<Self> {
        let id = id.into();
        let mut gt = BTreeSet::new();
        for label in ground_truth {
            let label = label.as_ref();
            let class = table.lookup(label).ok_or_else(|| {
                Error::InvalidArgument(format!("record {id}: ground-truth label {label:?} is not in the synonym table"))
            })?;
            gt.insert(class.to_owned());
        }
        Ok(Self {
            mentioned: extract_objects(caption, table),
            ground_truth: gt,
            id,
        })
    }

    pub fn hallucinated(&self) -> impl Iterator<Item = &String> {
        self.mentioned.difference(&self.ground_truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub captions: usize,
    pub hallucinated_captions: usize,
    pub mentions: usize,
    pub hallucinated_mentions: usize,
    pub ground_truth_objects: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Corpus-level CHAIR with micro-averaged object precision, recall and F1.
pub fn chair(records: &[CaptionRecord]) -> Result<ChairReport> {
    if records.is_empty() {
        return Err(Error::Empty("chair needs at least one caption record"));
    }
    let mut hallucinated_captions = 0;
    let mut mentions = 0;
    let mut hallucinated_mentions = 0;
    let mut ground_truth_objects = 0;
    for r in records {
        let bad = r.hallucinated().count();
        mentions += r.mentioned.len();
        hallucinated_mentions += bad;
        ground_truth_objects += r.ground_truth.len();
        if bad > 0 {
            hallucinated_captions += 1;
        }
    }
    let correct = mentions - hallucinated_mentions;
    let precision = ratio(correct, mentions);
    let recall = ratio(correct, ground_truth_objects);
    Ok(ChairReport {
        chair_s: ratio(hallucinated_captions, records.len()),
        chair_i: ratio(hallucinated_mentions, mentions),
        precision,
        recall,
        f1: harmonic(precision, recall),
        captions: records.len(),
        hallucinated_captions,
        mentions,
        hallucinated_mentions,
        ground_truth_objects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    #[serde(alias = "Yes", alias = "YES")]
    Yes,
    #[serde(alias = "No", alias = "NO")]
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeRecord {
    pub id: String,
    pub predicted: Answer,
    pub gold: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopeReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

pub fn pope_f1(records: &[PopeRecord]) -> Result<PopeReport> {
    if records.is_empty() {
        return Err(Error::Empty("pope needs at least one answer record"));
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for r in records {
        match (r.predicted, r.gold) {
            (Answer::Yes, Answer::Yes) => tp += 1,
            (Answer::Yes, Answer::No) => fp += 1,
            (Answer::No, Answer::No) => tn += 1,
            (Answer::No, Answer::Yes) => fneg += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    Ok(PopeReport {
        precision,
        recall,
        f1: harmonic(precision, recall),
        accuracy: ratio(tp + tn, records.len()),
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fneg,
    })
}

/// Mean F1 over independently scored POPE splits.
pub fn pope_average_f1(splits: &[Vec<PopeRecord>]) -> Result<f64> {
    if splits.is_empty() {
        return Err(Error::Empty("no POPE splits given"));
    }
    let mut sum = 0.0;
    for s in splits {
        sum += pope_f1(s)?.f1;
    }
    Ok(sum / splits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn rec(id: &str, mentioned: &[&str], gt: &[&str]) -> CaptionRecord {
        CaptionRecord {
            id: id.into(),
            mentioned: set(mentioned),
            ground_truth: set(gt),
        }
    }

    #[test]
    fn multi_word_synonym_wins() {
        let t = SynonymTable::new([("dog", "dog"), ("sports car", "car"), ("car", "car")]).unwrap();
        assert_eq!(extract_objects("A dog and a sports car.", &t), set(&["dog", "car"]));
        assert!(extract_objects("", &t).is_empty());
    }

    #[test]
    fn longest_match_consumes_words() {
        let t = SynonymTable::new([("hot dog", "hot_dog"), ("dog", "dog")]).unwrap();
        assert_eq!(extract_objects("He ate a HOT-DOG at the park", &t), set(&["hot_dog"]));
        assert_eq!(extract_objects("a hot dog next to a dog", &t), set(&["hot_dog", "dog"]));
        assert_eq!(extract_objects("hotdog", &t), set(&[]));
    }

    #[test]
    fn table_is_closed_and_consistent() {
        let t = SynonymTable::new([("automobile", "car")]).unwrap();
        assert_eq!(t.lookup("car"), Some("car"));
        assert!(SynonymTable::new([("car", "car"), ("Car", "vehicle")]).is_err());
        // canonical "car" may not map elsewhere
        assert!(SynonymTable::new([("auto", "car"), ("car", "vehicle")]).is_err());
    }

    #[test]
    fn json_table_both_shapes() {
        let t = SynonymTable::from_json(r#"{"car": ["sports car", "automobile"], "pup": "dog"}"#).unwrap();
        assert_eq!(t.lookup("Sports Car"), Some("car"));
        assert_eq!(t.lookup("pup"), Some("dog"));
        assert_eq!(t.lookup("dog"), Some("dog"));
        assert_eq!(t.classes(), ["car", "dog"].into_iter().collect());
        assert!(SynonymTable::from_json("[1,2]").is_err());
    }

    #[test]
    fn single_record_chair() {
        let r = chair(&[rec("a", &["dog", "cat", "car"], &["dog", "car"])]).unwrap();
        assert!((r.chair_i - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.chair_s, 1.0);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn two_record_chair_s() {
        let r = chair(&[
            rec("a", &["dog", "cat", "car"], &["dog", "car"]),
            rec("b", &["person"], &["person", "bench"]),
        ])
        .unwrap();
        assert_eq!(r.chair_s, 0.5);
        assert_eq!(r.hallucinated_mentions, 1);
        assert_eq!(r.mentions, 4);
    }

    #[test]
    fn empty_mentions_are_not_hallucinations() {
        let r = chair(&[rec("a", &[], &["dog"])]).unwrap();
        assert_eq!((r.chair_s, r.chair_i, r.precision, r.recall, r.f1), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(chair(&[]).is_err());
    }

    #[test]
    fn ground_truth_must_be_known() {
        let t = SynonymTable::new([("dog", "dog")]).unwrap();
        assert!(CaptionRecord::from_caption("x", "a dog", &["unicorn"], &t).is_err());
        let r = CaptionRecord::from_caption("x", "a Dog", &["DOG"], &t).unwrap();
        assert_eq!(r.ground_truth, set(&["dog"]));
    }

    #[test]
    fn pope_formulas() {
        use Answer::*;
        let mk = |p, g| PopeRecord {
            id: String::new(),
            predicted: p,
            gold: g,
        };
        let recs = vec![mk(Yes, Yes), mk(Yes, Yes), mk(Yes, No), mk(No, Yes), mk(No, No), mk(No, No)];
        let r = pope_f1(&recs).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);

        let perfect: Vec<_> = recs.iter().map(|r| mk(r.gold, r.gold)).collect();
        assert_eq!(pope_f1(&perfect).unwrap().f1, 1.0);
        assert!(pope_f1(&[]).is_err());
        let avg = pope_average_f1(&[recs, perfect]).unwrap();
        assert!((avg - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pope_answers_parse() {
        let r: PopeRecord = serde_json::from_str(r#"{"id":"q1","predicted":"Yes","gold":"no"}"#).unwrap();
        assert_eq!((r.predicted, r.gold), (Answer::Yes, Answer::No));
        assert!(serde_json::from_str::<PopeRecord>(r#"{"id":"q","predicted":"maybe","gold":"no"}"#).is_err());
    }
}
