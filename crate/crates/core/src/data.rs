//! Dataset files, per-aspect instance expansion, and the two split protocols.
//!
//! Two on-disk layouts are understood:
//!
//! * `task_json`: shared-task style objects (`ID`, `Text`, and a list of
//!   aspect entries such as `Aspect_VA` or `Quadruplet`, each carrying
//!   `Aspect` and a `VA` string). Either a top-level JSON array or one object
//!   per line. Field names come from a [`FieldMap`].
//! * `simple_jsonl`: one `{"id", "text", "aspects": [{"aspect", "va"}]}`
//!   object per line.
//!
//! Splits always operate on sentence ids so that all aspects of one sentence
//! land on the same side.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed;
use crate::va::{parse_va_string, VaPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectLabel {
    pub aspect: String,
    pub gold: Option<VaPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub aspects: Vec<AspectLabel>,
}

/// One (text, aspect) sample. `aspect_index` is the aspect's position in
/// its sentence, so duplicate aspect strings stay distinguishable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectInstance {
    pub sentence_id: String,
    pub aspect_index: usize,
    pub text: String,
    pub aspect: String,
    #[serde(rename = "va", default)]
    pub gold: Option<VaPair>,
}

impl AspectInstance {
    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            sentence_id: self.sentence_id.clone(),
            aspect_index: self.aspect_index,
        }
    }

    pub fn require_gold(&self) -> Result<VaPair> {
        self.gold
            .ok_or_else(|| Error::record(self.key().to_string(), "missing gold VA label"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub sentence_id: String,
    pub aspect_index: usize,
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sentence_id, self.aspect_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    TaskJson,
    SimpleJsonl,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_json" => Ok(DatasetFormat::TaskJson),
            "simple_jsonl" => Ok(DatasetFormat::SimpleJsonl),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected task_json or simple_jsonl)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::TaskJson => "task_json",
            DatasetFormat::SimpleJsonl => "simple_jsonl",
        })
    }
}

/// Field names for the `task_json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub text: String,
    /// Candidate keys holding the aspect entry list; the first present wins.
    pub aspect_lists: Vec<String>,
    pub aspect: String,
    pub va: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "ID".into(),
            text: "Text".into(),
            aspect_lists: vec!["Aspect_VA".into(), "Quadruplet".into()],
            aspect: "Aspect".into(),
            va: "VA".into(),
        }
    }
}

pub fn parse_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<SentenceRecord>> {
    parse_dataset_with(path, format, &FieldMap::default())
}

pub fn parse_dataset_with(
    path: &Path,
    format: DatasetFormat,
    fields: &FieldMap,
) -> Result<Vec<SentenceRecord>> {
    let content = read_utf8(path)?;
    let located = match format {
        DatasetFormat::TaskJson => parse_task_json(path, &content, fields)?,
        DatasetFormat::SimpleJsonl => parse_simple_jsonl(path, &content)?,
    };
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(located.len());
    for (line, record) in located {
        let fail = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.id.is_empty() {
            return Err(fail("empty record id".into()));
        }
        if record.aspects.is_empty() {
            return Err(fail(format!("record {}: empty aspect list", record.id)));
        }
        if !seen.insert(record.id.clone()) {
            return Err(fail(format!("duplicate record id {:?}", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    String::from_utf8(bytes)
        .map_err(|e| Error::Data(format!("{} is not valid UTF-8: {e}", path.display())))
}

/// Iterates non-blank lines with 1-based line numbers.
fn json_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_task_json(
    path: &Path,
    content: &str,
    fields: &FieldMap,
) -> Result<Vec<(usize, SentenceRecord)>> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let values: Vec<(usize, Value)> = if content.trim_start().starts_with('[') {
        let array: Vec<Value> = serde_json::from_str(content)
            .map_err(|e| malformed(e.line(), format!("invalid JSON: {e}")))?;
        // Array elements have no line of their own; report the element ordinal.
        array.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        json_lines(content)
            .map(|(line, text)| {
                serde_json::from_str(text)
                    .map(|v| (line, v))
                    .map_err(|e| malformed(line, format!("invalid JSON: {e}")))
            })
            .collect::<Result<_>>()?
    };
    values
        .into_iter()
        .map(|(line, value)| {
            task_record(&value, fields)
                .map(|r| (line, r))
                .map_err(|message| malformed(line, message))
        })
        .collect()
}

fn task_record(value: &Value, fields: &FieldMap) -> std::result::Result<SentenceRecord, String> {
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let id = match obj.get(&fields.id) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(format!("missing string field {:?}", fields.id)),
    };
    let text = obj
        .get(&fields.text)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("record {id}: missing string field {:?}", fields.text))?
        .to_string();

    let entries = fields.aspect_lists.iter().find_map(|k| obj.get(k));
    let aspects = match entries {
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| task_aspect(item, fields).map_err(|m| format!("record {id}: {m}")))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        Some(_) => return Err(format!("record {id}: aspect list is not an array")),
        // Unlabelled files list bare aspect strings under the aspect key.
        None => match obj.get(&fields.aspect) {
            Some(Value::Array(items)) => items
                .iter()
                .map(|item| {
                    item.as_str()
                        .map(|a| AspectLabel {
                            aspect: a.to_string(),
                            gold: None,
                        })
                        .ok_or_else(|| format!("record {id}: aspect is not a string"))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?,
            _ => return Err(format!("record {id}: no aspect list found")),
        },
    };
    Ok(SentenceRecord { id, text, aspects })
}

fn task_aspect(item: &Value, fields: &FieldMap) -> std::result::Result<AspectLabel, String> {
    match item {
        Value::String(a) => Ok(AspectLabel {
            aspect: a.clone(),
            gold: None,
        }),
        Value::Object(o) => {
            let aspect = o
                .get(&fields.aspect)
                .and_then(Value::as_str)
                .ok_or_else(|| format!("aspect entry missing {:?}", fields.aspect))?
                .to_string();
            let gold = match o.get(&fields.va) {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(parse_va_string(s).map_err(|e| e.to_string())?),
                Some(_) => return Err(format!("{:?} must be a V#A string", fields.va)),
            };
            Ok(AspectLabel { aspect, gold })
        }
        _ => Err("aspect entry must be a string or object".into()),
    }
}

#[derive(Deserialize)]
struct SimpleRecord {
    id: String,
    text: String,
    aspects: Vec<SimpleAspect>,
}

#[derive(Deserialize)]
struct SimpleAspect {
    aspect: String,
    #[serde(default)]
    va: Option<String>,
}

fn parse_simple_jsonl(path: &Path, content: &str) -> Result<Vec<(usize, SentenceRecord)>> {
    json_lines(content)
        .map(|(line, text)| {
            let malformed = |message: String| Error::Malformed {
                path: path.to_path_buf(),
                line,
                message,
            };
            let raw: SimpleRecord =
                serde_json::from_str(text).map_err(|e| malformed(format!("invalid record: {e}")))?;
            let aspects = raw
                .aspects
                .into_iter()
                .map(|a| {
                    let gold = a
                        .va
                        .as_deref()
                        .map(parse_va_string)
                        .transpose()
                        .map_err(|e| malformed(format!("record {}: {e}", raw.id)))?;
                    Ok(AspectLabel {
                        aspect: a.aspect,
                        gold,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                line,
                SentenceRecord {
                    id: raw.id,
                    text: raw.text,
                    aspects,
                },
            ))
        })
        .collect()
}

pub fn expand_instances(records: &[SentenceRecord]) -> Vec<AspectInstance> {
    records
        .iter()
        .flat_map(|r| {
            r.aspects.iter().enumerate().map(|(i, a)| AspectInstance {
                sentence_id: r.id.clone(),
                aspect_index: i,
                text: r.text.clone(),
                aspect: a.aspect.clone(),
                gold: a.gold,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<AspectInstance>,
    pub eval: Vec<AspectInstance>,
    pub seed: u64,
    /// Fraction of sentences on the train side.
    pub ratio: f64,
}

impl DatasetSplit {
    pub fn sentence_ids(side: &[AspectInstance]) -> BTreeSet<&str> {
        side.iter().map(|i| i.sentence_id.as_str()).collect()
    }
}

/// Moves `eval_count` seeded-random sentences to the eval side. The id set is
/// sorted before shuffling, so the result does not depend on input order.
fn split_sentences(
    instances: &[AspectInstance],
    eval_count: usize,
    seed: u64,
) -> (Vec<AspectInstance>, Vec<AspectInstance>) {
    let mut ids: Vec<&str> = DatasetSplit::sentence_ids(instances).into_iter().collect();
    let mut rng = seed::stream_rng(seed, seed::SPLIT);
    ids.shuffle(&mut rng);
    let eval_ids: HashSet<&str> = ids.into_iter().take(eval_count).collect();
    instances
        .iter()
        .cloned()
        .partition(|i| !eval_ids.contains(i.sentence_id.as_str()))
}

fn distinct_sentences(instances: &[AspectInstance]) -> usize {
    DatasetSplit::sentence_ids(instances).len()
}

/// Development protocol: `ratio` of the sentences train, the rest evaluate.
pub fn split_dev_protocol(
    instances: &[AspectInstance],
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = distinct_sentences(instances);
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct sentences to split, found {n}"
        )));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let (train, eval) = split_sentences(instances, n - n_train, seed);
    Ok(DatasetSplit {
        train,
        eval,
        seed,
        ratio,
    })
}

/// Submission protocol: merge train and dev, then hold out `holdout_fraction`
/// of the merged sentences for validation.
pub fn merge_and_hold_out(
    train: &[AspectInstance],
    dev: &[AspectInstance],
    holdout_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction {holdout_fraction} must lie in (0, 1); a validation set is required for early stopping"
        )));
    }
    let train_ids = DatasetSplit::sentence_ids(train);
    let overlap: Vec<&str> = DatasetSplit::sentence_ids(dev)
        .intersection(&train_ids)
        .copied()
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Data(format!(
            "train and dev share sentence ids: {}",
            overlap.join(", ")
        )));
    }
    let merged: Vec<AspectInstance> = train.iter().chain(dev).cloned().collect();
    let n = distinct_sentences(&merged);
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct sentences to hold out, found {n}"
        )));
    }
    let n_hold = ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (fit, holdout) = split_sentences(&merged, n_hold, seed);
    Ok(DatasetSplit {
        train: fit,
        eval: holdout,
        seed,
        ratio: 1.0 - holdout_fraction,
    })
}

/// One labelled group of records for [`dataset_stats`].
#[derive(Debug, Clone, Copy)]
pub struct StatsInput<'a> {
    pub language: &'a str,
    pub domain: &'a str,
    pub split: &'a str,
    pub records: &'a [SentenceRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub language: String,
    pub domain: String,
    pub split: String,
    pub sentences: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl StatsTable {
    pub fn total_sentences(&self) -> usize {
        self.rows.iter().map(|r| r.sentences).sum()
    }

    pub fn total_instances(&self) -> usize {
        self.rows.iter().map(|r| r.instances).sum()
    }
}

pub fn dataset_stats(groups: &[StatsInput<'_>]) -> StatsTable {
    let mut table = StatsTable::default();
    for g in groups {
        let instances = g.records.iter().map(|r| r.aspects.len()).sum();
        match table.rows.iter_mut().find(|r| {
            r.language == g.language && r.domain == g.domain && r.split == g.split
        }) {
            Some(row) => {
                row.sentences += g.records.len();
                row.instances += instances;
            }
            None => table.rows.push(StatsRow {
                language: g.language.to_string(),
                domain: g.domain.to_string(),
                split: g.split.to_string(),
                sentences: g.records.len(),
                instances,
            }),
        }
    }
    table
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:<12} {:<10} {:>10} {:>10}",
            "Language", "Domain", "Split", "Sentences", "Instances"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:<12} {:<10} {:>10} {:>10}",
                r.language, r.domain, r.split, r.sentences, r.instances
            )?;
        }
        write!(
            f,
            "{:<10} {:<12} {:<10} {:>10} {:>10}",
            "total",
            "",
            "",
            self.total_sentences(),
            self.total_instances()
        )
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let file =
        fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::json("serializing record", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let content = read_utf8(path)?;
    json_lines(&content)
        .map(|(line, text)| {
            serde_json::from_str(text).map_err(|e| Error::Malformed {
                path: PathBuf::from(path),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_instances(path: &Path, instances: &[AspectInstance]) -> Result<()> {
    write_jsonl(path, instances)
}

pub fn read_instances(path: &Path) -> Result<Vec<AspectInstance>> {
    let instances: Vec<AspectInstance> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for inst in &instances {
        if !seen.insert(inst.key()) {
            return Err(Error::Data(format!(
                "{}: duplicate instance {}",
                path.display(),
                inst.key()
            )));
        }
    }
    Ok(instances)
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sentence_id: String,
    pub aspect_index: usize,
    pub aspect: String,
    pub va: VaPair,
}

impl PredictionRecord {
    pub fn new(instance: &AspectInstance, va: VaPair) -> Self {
        Self {
            sentence_id: instance.sentence_id.clone(),
            aspect_index: instance.aspect_index,
            aspect: instance.aspect.clone(),
            // Written files carry two decimals; keep the in-memory value identical.
            va: round_pair(va),
        }
    }

    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            sentence_id: self.sentence_id.clone(),
            aspect_index: self.aspect_index,
        }
    }
}

fn round_pair(va: VaPair) -> VaPair {
    va.to_va_string().parse().unwrap_or(va)
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, predictions)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn temp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn record(id: &str, n_aspects: usize) -> SentenceRecord {
        SentenceRecord {
            id: id.into(),
            text: format!("text of {id}"),
            aspects: (0..n_aspects)
                .map(|i| AspectLabel {
                    aspect: format!("a{i}"),
                    gold: Some(VaPair::new(5.0, 5.0).unwrap()),
                })
                .collect(),
        }
    }

    fn sentences(n: usize, aspects_each: usize) -> Vec<AspectInstance> {
        let records: Vec<_> = (0..n).map(|i| record(&format!("s{i:03}"), aspects_each)).collect();
        expand_instances(&records)
    }

    #[test]
    fn simple_jsonl_parses_gold() {
        let f = temp_file(
            r#"{"id":"r1","text":"the food was absolutely amazing!","aspects":[{"aspect":"food","va":"8.50#8.25"}]}"#,
        );
        let recs = parse_dataset(f.path(), DatasetFormat::SimpleJsonl).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].text, "the food was absolutely amazing!");
        let gold = recs[0].aspects[0].gold.unwrap();
        assert_eq!((gold.valence(), gold.arousal()), (8.50, 8.25));
    }

    #[test]
    fn empty_aspect_list_is_rejected() {
        let f = temp_file(r#"{"id":"r1","text":"t","aspects":[]}"#);
        let err = parse_dataset(f.path(), DatasetFormat::SimpleJsonl).unwrap_err();
        assert!(err.to_string().contains("empty aspect list"), "{err}");
    }

    #[test]
    fn out_of_range_gold_names_record() {
        let f = temp_file(
            "{\"id\":\"ok\",\"text\":\"t\",\"aspects\":[{\"aspect\":\"x\",\"va\":\"5#5\"}]}\n\
             {\"id\":\"bad7\",\"text\":\"t\",\"aspects\":[{\"aspect\":\"x\",\"va\":\"10.0#4.0\"}]}\n",
        );
        let err = parse_dataset(f.path(), DatasetFormat::SimpleJsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("valence out of range"), "{msg}");
        assert!(msg.contains("bad7"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = temp_file(
            "{\"id\":\"a\",\"text\":\"t\",\"aspects\":[{\"aspect\":\"x\"}]}\n\n{not json\n",
        );
        match parse_dataset(f.path(), DatasetFormat::SimpleJsonl).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = temp_file(
            "{\"id\":\"a\",\"text\":\"t\",\"aspects\":[{\"aspect\":\"x\"}]}\n\
             {\"id\":\"a\",\"text\":\"u\",\"aspects\":[{\"aspect\":\"y\"}]}\n",
        );
        let err = parse_dataset(f.path(), DatasetFormat::SimpleJsonl).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn task_json_lines_and_array_forms() {
        let line = r#"{"ID":"rest_1","Text":"but the staff was so horrible to us.","Aspect_VA":[{"Aspect":"staff","VA":"1.33#8.67"},{"Aspect":"NULL","VA":"5.00#5.00"}]}"#;
        let f = temp_file(line);
        let recs = parse_dataset(f.path(), DatasetFormat::TaskJson).unwrap();
        assert_eq!(recs[0].aspects.len(), 2);
        assert_eq!(recs[0].aspects[1].aspect, "NULL");

        let f = temp_file(&format!("[\n{line}\n]"));
        assert_eq!(parse_dataset(f.path(), DatasetFormat::TaskJson).unwrap(), recs);
    }

    #[test]
    fn task_json_quadruplets_and_unlabelled() {
        let f = temp_file(concat!(
            r#"{"ID":"q","Text":"t","Quadruplet":[{"Aspect":"battery","Category":"X","Opinion":"good","VA":"6.00#6.00"}]}"#,
            "\n",
            r#"{"ID":"u","Text":"t","Aspect":["food","service"]}"#
        ));
        let recs = parse_dataset(f.path(), DatasetFormat::TaskJson).unwrap();
        assert_eq!(recs[0].aspects[0].aspect, "battery");
        assert!(recs[0].aspects[0].gold.is_some());
        assert_eq!(recs[1].aspects.len(), 2);
        assert!(recs[1].aspects.iter().all(|a| a.gold.is_none()));
    }

    #[test]
    fn field_map_is_configurable() {
        let f = temp_file(r#"{"sid":"1","sentence":"t","targets":[{"target":"x","score":"2.00#3.00"}]}"#);
        let fields = FieldMap {
            id: "sid".into(),
            text: "sentence".into(),
            aspect_lists: vec!["targets".into()],
            aspect: "target".into(),
            va: "score".into(),
        };
        let recs = parse_dataset_with(f.path(), DatasetFormat::TaskJson, &fields).unwrap();
        assert_eq!(recs[0].aspects[0].aspect, "x");
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(parse_dataset(Path::new("/nonexistent/x.jsonl"), DatasetFormat::TaskJson).is_err());
    }

    #[test]
    fn expansion_counts() {
        let recs = vec![record("a", 3)];
        let inst = expand_instances(&recs);
        assert_eq!(inst.len(), 3);
        assert!(inst.iter().all(|i| i.text == recs[0].text));
        assert_eq!(
            inst.iter().map(|i| i.aspect_index).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert!(expand_instances(&[]).is_empty());
    }

    #[test]
    fn dev_protocol_sizes_and_determinism() {
        let inst = sentences(10, 2);
        let split = split_dev_protocol(&inst, 0.8, 42).unwrap();
        assert_eq!(DatasetSplit::sentence_ids(&split.train).len(), 8);
        assert_eq!(DatasetSplit::sentence_ids(&split.eval).len(), 2);
        assert_eq!(split.train.len() + split.eval.len(), inst.len());
        assert_eq!(split, split_dev_protocol(&inst, 0.8, 42).unwrap());
    }

    #[test]
    fn dev_protocol_seed_changes_membership() {
        let inst = sentences(100, 1);
        let a = split_dev_protocol(&inst, 0.8, 1).unwrap();
        let b = split_dev_protocol(&inst, 0.8, 2).unwrap();
        assert_ne!(
            DatasetSplit::sentence_ids(&a.eval),
            DatasetSplit::sentence_ids(&b.eval)
        );
    }

    #[test]
    fn dev_protocol_rejects_degenerate() {
        assert!(split_dev_protocol(&sentences(1, 3), 0.8, 1).is_err());
        assert!(split_dev_protocol(&sentences(5, 1), 0.0, 1).is_err());
        assert!(split_dev_protocol(&sentences(5, 1), 1.0, 1).is_err());
    }

    #[test]
    fn merge_and_hold_out_sizes() {
        let all = sentences(100, 1);
        let (train, dev) = all.split_at(90);
        let split = merge_and_hold_out(train, dev, 0.1, 42).unwrap();
        assert_eq!(DatasetSplit::sentence_ids(&split.eval).len(), 10);
        assert_eq!(DatasetSplit::sentence_ids(&split.train).len(), 90);
        assert!(merge_and_hold_out(train, dev, 0.0, 42).is_err());
        assert!(merge_and_hold_out(train, train, 0.1, 42).is_err());
    }

    #[test]
    fn stats_table() {
        assert_eq!(dataset_stats(&[]).total_sentences(), 0);
        assert_eq!(dataset_stats(&[]).total_instances(), 0);
        let recs = vec![record("a", 1), record("b", 2), record("c", 1)];
        let t = dataset_stats(&[StatsInput {
            language: "eng",
            domain: "restaurant",
            split: "train",
            records: &recs,
        }]);
        assert_eq!((t.total_sentences(), t.total_instances()), (3, 4));
        assert!(t.to_string().contains("restaurant"));
    }

    #[test]
    fn instance_and_prediction_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = sentences(3, 2);
        let p = dir.path().join("inst.jsonl");
        write_instances(&p, &inst).unwrap();
        assert_eq!(read_instances(&p).unwrap(), inst);

        let preds: Vec<_> = inst
            .iter()
            .map(|i| PredictionRecord::new(i, VaPair::new(6.456, 2.0).unwrap()))
            .collect();
        let p = dir.path().join("pred.jsonl");
        write_predictions(&p, &preds).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().contains("\"va\":\"6.46#2.00\""));
        assert_eq!(read_predictions(&p).unwrap(), preds);
    }

    proptest! {
        #[test]
        fn splits_never_leak(n in 2usize..60, per in 1usize..4, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let inst = sentences(n, per);
            let s = split_dev_protocol(&inst, ratio, seed).unwrap();
            let tr = DatasetSplit::sentence_ids(&s.train);
            let ev = DatasetSplit::sentence_ids(&s.eval);
            prop_assert!(tr.is_disjoint(&ev));
            prop_assert_eq!(s.train.len() + s.eval.len(), inst.len());
            let expect = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
            prop_assert_eq!(tr.len(), expect);
        }

        #[test]
        fn split_ignores_input_order(n in 2usize..40, seed in any::<u64>()) {
            let inst = sentences(n, 2);
            let mut rev = inst.clone();
            rev.reverse();
            let a = split_dev_protocol(&inst, 0.8, seed).unwrap();
            let b = split_dev_protocol(&rev, 0.8, seed).unwrap();
            prop_assert_eq!(DatasetSplit::sentence_ids(&a.eval), DatasetSplit::sentence_ids(&b.eval));
        }

        #[test]
        fn expansion_preserves_pairs(sizes in proptest::collection::vec(1usize..5, 0..20)) {
            let recs: Vec<_> = sizes.iter().enumerate().map(|(i, &k)| record(&i.to_string(), k)).collect();
            let inst = expand_instances(&recs);
            let mut got: Vec<_> = inst.iter().map(|i| (i.text.clone(), i.aspect.clone())).collect();
            let mut want: Vec<_> = recs.iter().flat_map(|r| r.aspects.iter().map(|a| (r.text.clone(), a.aspect.clone()))).collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
    }
}
