use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use super::DataError;
use crate::dst::{Candidate, Dialog, DialogState, DialogTurn, Ontology};
use crate::tokenizer::Vocab;

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DataError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| DataError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| DataError::io(path, e))?;
    tmp.persist(path).map_err(|e| DataError::io(path, e.error))?;
    Ok(())
}

/// JSON object whose entries are kept in file order, repeated keys included.
struct OrderedEntries(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping slot names to value lists")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry::<String, Vec<String>>()? {
                    out.push(entry);
                }
                Ok(OrderedEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    informable: Option<OrderedEntries>,
    requestable: Option<Vec<String>>,
}

/// Parses `{"informable": {slot: [values]}, "requestable": [slots]}`.
pub fn parse_ontology(text: &str) -> Result<Ontology, DataError> {
    let file: OntologyFile = serde_json::from_str(text).map_err(|e| DataError::Parse(e.to_string()))?;
    let informable = file.informable.ok_or_else(|| DataError::MissingField("informable".into()))?;
    let requestable = file.requestable.ok_or_else(|| DataError::MissingField("requestable".into()))?;
    Ok(Ontology::new(informable.0, requestable)?)
}

pub fn load_ontology(path: &Path) -> Result<Ontology, DataError> {
    parse_ontology(&read(path)?)
}

pub fn ontology_to_json(ontology: &Ontology) -> String {
    serde_json::to_string_pretty(ontology).expect("ontology serializes")
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, at: &str) -> Result<&'a Value, DataError> {
    obj.get(name).ok_or_else(|| DataError::MissingField(format!("{at}.{name}")))
}

fn as_str<'a>(v: &'a Value, at: &str) -> Result<&'a str, DataError> {
    v.as_str().ok_or_else(|| DataError::Parse(format!("{at}: expected a string")))
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>, DataError> {
    v.as_object().ok_or_else(|| DataError::Parse(format!("{at}: expected an object")))
}

fn as_array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>, DataError> {
    v.as_array().ok_or_else(|| DataError::Parse(format!("{at}: expected an array")))
}

fn parse_turn(value: &Value, at: &str, ontology: &Ontology) -> Result<(DialogTurn, DialogState), DataError> {
    let obj = as_object(value, at)?;
    let system = obj
        .get("system")
        .map(|v| as_str(v, &format!("{at}.system")))
        .transpose()?
        .unwrap_or("");
    let user = as_str(field(obj, "user", at)?, &format!("{at}.user"))?;

    let mut label = BTreeSet::new();
    for (k, pair) in as_array(field(obj, "turn_label", at)?, &format!("{at}.turn_label"))?
        .iter()
        .enumerate()
    {
        let pat = format!("{at}.turn_label[{k}]");
        let pair = as_array(pair, &pat)?;
        if pair.len() != 2 {
            return Err(DataError::Parse(format!("{pat}: expected [slot, value]")));
        }
        let candidate = Candidate::inform(as_str(&pair[0], &pat)?, as_str(&pair[1], &pat)?);
        ontology.check(&candidate)?;
        label.insert(candidate);
    }

    let mut goals = BTreeMap::new();
    for (slot, v) in as_object(field(obj, "goals", at)?, &format!("{at}.goals"))? {
        let v = as_str(v, &format!("{at}.goals.{slot}"))?;
        ontology.check(&Candidate::inform(slot, v))?;
        goals.insert(slot.clone(), v.to_string());
    }
    let mut requests = BTreeSet::new();
    for v in as_array(field(obj, "requests", at)?, &format!("{at}.requests"))? {
        let slot = as_str(v, &format!("{at}.requests"))?;
        ontology.check(&Candidate::request(slot))?;
        requests.insert(slot.to_string());
    }
    Ok((
        DialogTurn {
            system_utterance: system.to_string(),
            user_utterance: user.to_string(),
            gold_turn_label: label,
        },
        DialogState { goals, requests },
    ))
}

/// Parses a JSON array of dialogs, validating every label and gold state
/// against `ontology`.
///
/// ```json
/// [{"id": "d0", "turns": [{"system": "", "user": "i want chinese food",
///   "turn_label": [["food", "chinese"]], "goals": {"food": "chinese"}, "requests": []}]}]
/// ```
///
/// Requests appear in `turn_label` as `["request", <slot>]`. `system` may be
/// omitted and defaults to the empty string.
pub fn parse_dialogs(text: &str, ontology: &Ontology) -> Result<Vec<Dialog>, DataError> {
    let root: Value = serde_json::from_str(text).map_err(|e| DataError::Parse(e.to_string()))?;
    let mut dialogs = Vec::new();
    for (i, d) in as_array(&root, "dialogs")?.iter().enumerate() {
        let at = format!("dialogs[{i}]");
        let obj = as_object(d, &at)?;
        let id = as_str(field(obj, "id", &at)?, &format!("{at}.id"))?.to_string();
        let mut turns = Vec::new();
        let mut gold_states = Vec::new();
        for (t, turn) in as_array(field(obj, "turns", &at)?, &format!("{at}.turns"))?.iter().enumerate() {
            let (turn, state) = parse_turn(turn, &format!("{at}.turns[{t}]"), ontology)?;
            turns.push(turn);
            gold_states.push(state);
        }
        dialogs.push(Dialog { id, turns, gold_states });
    }
    Ok(dialogs)
}

pub fn load_dialogs(path: &Path, ontology: &Ontology) -> Result<Vec<Dialog>, DataError> {
    parse_dialogs(&read(path)?, ontology)
}

pub fn dialogs_to_json(dialogs: &[Dialog]) -> String {
    let root: Vec<Value> = dialogs
        .iter()
        .map(|d| {
            let turns: Vec<Value> = d
                .turns
                .iter()
                .zip(&d.gold_states)
                .map(|(turn, state)| {
                    let label: Vec<Value> = turn.gold_turn_label.iter().map(|c| serde_json::json!([c.slot, c.value])).collect();
                    serde_json::json!({
                        "system": turn.system_utterance,
                        "user": turn.user_utterance,
                        "turn_label": label,
                        "goals": state.goals,
                        "requests": state.requests,
                    })
                })
                .collect();
            serde_json::json!({ "id": d.id, "turns": turns })
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&root).expect("dialogs serialize");
    out.push('\n');
    out
}

/// Per-turn states of one dialog, as written by tracking and read by
/// evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackedDialog {
    pub id: String,
    pub states: Vec<DialogState>,
}

/// Parses `[{"id": ..., "states": [{"goals": {..}, "requests": [..]}]}]`.
pub fn parse_states(text: &str, ontology: Option<&Ontology>) -> Result<Vec<TrackedDialog>, DataError> {
    let tracked: Vec<TrackedDialog> = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        match message.strip_prefix("missing field `") {
            Some(rest) => DataError::MissingField(rest.split('`').next().unwrap_or_default().to_string()),
            None => DataError::Parse(message),
        }
    })?;
    if let Some(ontology) = ontology {
        for state in tracked.iter().flat_map(|t| &t.states) {
            ontology.check_state(state)?;
        }
    }
    Ok(tracked)
}

pub fn load_states(path: &Path, ontology: Option<&Ontology>) -> Result<Vec<TrackedDialog>, DataError> {
    parse_states(&read(path)?, ontology)
}

pub fn states_to_json(tracked: &[TrackedDialog]) -> String {
    let mut out = serde_json::to_string_pretty(tracked).expect("states serialize");
    out.push('\n');
    out
}

/// Non-empty trimmed lines.
pub fn load_corpus(path: &Path) -> Result<Vec<String>, DataError> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn save_corpus(path: &Path, sentences: &[String]) -> Result<(), DataError> {
    let mut text = sentences.join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_vocab(path: &Path) -> Result<Vocab, DataError> {
    Ok(Vocab::from_text(&read(path)?)?)
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<(), DataError> {
    write_atomic(path, vocab.to_text().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Ontology {
        parse_ontology(r#"{"informable":{"food":["chinese","korean"],"area":["north"]},"requestable":["phone"]}"#).unwrap()
    }

    #[test]
    fn ontology_example() {
        let o = parse_ontology(r#"{"informable":{"food":["chinese"]},"requestable":["phone"]}"#).unwrap();
        assert_eq!(o.informable().len(), 1);
        assert_eq!(o.requestable(), ["phone"]);
    }

    #[test]
    fn ontology_errors() {
        assert_eq!(
            parse_ontology(r#"{"informable":{"food":["a"],"food":["b"]},"requestable":[]}"#),
            Err(DataError::DuplicateSlot("food".into()))
        );
        assert_eq!(
            parse_ontology(r#"{"informable":{"food":[]},"requestable":[]}"#),
            Err(DataError::EmptyValueList("food".into()))
        );
        assert!(matches!(
            parse_ontology(r#"{"informable":{"food":["a"]}"#),
            Err(DataError::Parse(_))
        ));
        assert_eq!(
            parse_ontology(r#"{"informable":{"food":["a"]}}"#),
            Err(DataError::MissingField("requestable".into()))
        );
        assert!(matches!(
            parse_ontology(r#"{"informable":{"food":"a"},"requestable":[]}"#),
            Err(DataError::Parse(_))
        ));
    }

    #[test]
    fn ontology_round_trip() {
        let o = small();
        assert_eq!(parse_ontology(&ontology_to_json(&o)).unwrap(), o);
    }

    const ONE: &str = r#"[{"id":"d0","turns":[{"system":"","user":"i want chinese food","turn_label":[["food","chinese"]],"goals":{"food":"chinese"},"requests":[]}]}]"#;

    #[test]
    fn dialog_example() {
        let d = parse_dialogs(ONE, &small()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].turns[0].gold_turn_label.len(), 1);
        assert_eq!(d[0].gold_states[0].goals["food"], "chinese");
        assert_eq!(parse_dialogs(&dialogs_to_json(&d), &small()).unwrap(), d);
    }

    #[test]
    fn dialog_errors() {
        let sushi = ONE.replace(r#"["food","chinese"]]"#, r#"["food","sushi"]]"#);
        assert_eq!(
            parse_dialogs(&sushi, &small()),
            Err(DataError::LabelNotInOntology {
                slot: "food".into(),
                value: "sushi".into()
            })
        );
        let no_user = ONE.replace(r#""user":"i want chinese food","#, "");
        assert!(matches!(parse_dialogs(&no_user, &small()), Err(DataError::MissingField(f)) if f.ends_with("user")));
        assert!(matches!(parse_dialogs("{", &small()), Err(DataError::Parse(_))));
        let triple = ONE.replace(r#"["food","chinese"]]"#, r#"["food","chinese","x"]]"#);
        assert!(matches!(parse_dialogs(&triple, &small()), Err(DataError::Parse(_))));
    }

    #[test]
    fn states_round_trip() {
        let mut s = DialogState::default();
        s.goals.insert("food".into(), "korean".into());
        s.requests.insert("phone".into());
        let t = vec![TrackedDialog {
            id: "d0".into(),
            states: vec![DialogState::default(), s],
        }];
        assert_eq!(parse_states(&states_to_json(&t), Some(&small())).unwrap(), t);
        assert_eq!(parse_states(r#"[{"id":"x"}]"#, None), Err(DataError::MissingField("states".into())));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus.txt")),
            Err(DataError::Io { .. })
        ));
    }
}
