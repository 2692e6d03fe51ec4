//! Feature schemas, choice sessions, and their on-disk formats.
//!
//! Sessions are stored as JSON lines:
//!
//! ```text
//! {"individual": {"office": "3", "days": 12.0}, "alternatives": [{"price": 120.5}, ...], "choice": 0}
//! ```
//!
//! Categorical values are strings, numeric values finite doubles. The schema
//! lives in a separate JSON document and fixes field order, kinds,
//! cardinalities and declared ranges.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{PcmcError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldKind {
    Numeric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<[f64; 2]>,
    },
    Categorical {
        cardinality: usize,
        /// Level names; when absent, levels are the strings `"0"..cardinality`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn numeric(name: &str, range: Option<[f64; 2]>) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind: FieldKind::Numeric { range },
        }
    }

    pub fn categorical(name: &str, cardinality: usize) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind: FieldKind::Categorical {
                cardinality,
                levels: None,
            },
        }
    }

    pub fn categorical_with_levels(name: &str, levels: &[&str]) -> Self {
        FieldSpec {
            name: name.to_string(),
            kind: FieldKind::Categorical {
                cardinality: levels.len(),
                levels: Some(levels.iter().map(|s| s.to_string()).collect()),
            },
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, FieldKind::Numeric { .. })
    }

    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            FieldKind::Categorical { cardinality, .. } => Some(*cardinality),
            FieldKind::Numeric { .. } => None,
        }
    }

    /// Index of a categorical level, or `None` for an unknown level.
    pub fn level_index(&self, value: &str) -> Option<usize> {
        match &self.kind {
            FieldKind::Categorical {
                levels: Some(levels),
                ..
            } => levels.iter().position(|l| l == value),
            FieldKind::Categorical { cardinality, .. } => {
                value.parse::<usize>().ok().filter(|i| i < cardinality)
            }
            FieldKind::Numeric { .. } => None,
        }
    }

    /// Name of level `i` of a categorical field.
    pub fn level_name(&self, i: usize) -> String {
        match &self.kind {
            FieldKind::Categorical {
                levels: Some(levels),
                ..
            } => levels[i].clone(),
            _ => i.to_string(),
        }
    }
}

/// Declaration of individual and alternative features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureSchema {
    pub individual_fields: Vec<FieldSpec>,
    pub alternative_fields: Vec<FieldSpec>,
}

impl FeatureSchema {
    pub fn new(individual_fields: Vec<FieldSpec>, alternative_fields: Vec<FieldSpec>) -> Result<Self> {
        let schema = FeatureSchema {
            individual_fields,
            alternative_fields,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for (which, fields) in [
            ("individual", &self.individual_fields),
            ("alternative", &self.alternative_fields),
        ] {
            let mut seen = HashSet::new();
            for f in fields {
                if !seen.insert(f.name.as_str()) {
                    return Err(PcmcError::Schema(format!(
                        "duplicate {which} field '{}'",
                        f.name
                    )));
                }
                match &f.kind {
                    FieldKind::Categorical { cardinality, levels } => {
                        if *cardinality < 1 {
                            return Err(PcmcError::Schema(format!(
                                "categorical field '{}' has cardinality 0",
                                f.name
                            )));
                        }
                        if let Some(levels) = levels {
                            if levels.len() != *cardinality {
                                return Err(PcmcError::Schema(format!(
                                    "field '{}' lists {} levels for cardinality {}",
                                    f.name,
                                    levels.len(),
                                    cardinality
                                )));
                            }
                        }
                    }
                    FieldKind::Numeric { range: Some([lo, hi]) } if !(lo <= hi) => {
                        return Err(PcmcError::Schema(format!(
                            "field '{}' has empty range [{lo}, {hi}]",
                            f.name
                        )));
                    }
                    FieldKind::Numeric { .. } => {}
                }
            }
        }
        Ok(())
    }

    pub fn alternative_field(&self, name: &str) -> Option<usize> {
        self.alternative_fields.iter().position(|f| f.name == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| PcmcError::io(&path, e))?;
        let schema: FeatureSchema = serde_json::from_str(&text)
            .map_err(|e| PcmcError::Schema(format!("{}: {e}", path.as_ref().display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| PcmcError::io(&path, e))
    }

    /// Check that a session conforms to this schema.
    pub fn check_session(&self, s: &Session) -> Result<()> {
        check_tuple(&self.individual_fields, &s.individual, "individual")?;
        if s.alternatives.is_empty() {
            return Err(PcmcError::Schema("session has no alternatives".into()));
        }
        for alt in &s.alternatives {
            check_tuple(&self.alternative_fields, alt, "alternative")?;
        }
        if s.choice >= s.alternatives.len() {
            return Err(PcmcError::Schema(format!(
                "choice {} out of range for {} alternatives",
                s.choice,
                s.alternatives.len()
            )));
        }
        Ok(())
    }

    pub fn session_to_json(&self, s: &Session) -> Value {
        let mut obj = Map::new();
        obj.insert(
            "individual".into(),
            tuple_to_json(&self.individual_fields, &s.individual),
        );
        obj.insert(
            "alternatives".into(),
            Value::Array(
                s.alternatives
                    .iter()
                    .map(|a| tuple_to_json(&self.alternative_fields, a))
                    .collect(),
            ),
        );
        obj.insert("choice".into(), Value::from(s.choice));
        Value::Object(obj)
    }

    pub fn session_from_json(&self, v: &Value) -> Result<Session> {
        let obj = v
            .as_object()
            .ok_or_else(|| PcmcError::Schema("session is not a JSON object".into()))?;
        let individual = match obj.get("individual") {
            Some(v) => tuple_from_json(&self.individual_fields, v)?,
            None if self.individual_fields.is_empty() => Vec::new(),
            None => return Err(PcmcError::Schema("missing 'individual'".into())),
        };
        let alternatives = obj
            .get("alternatives")
            .and_then(Value::as_array)
            .ok_or_else(|| PcmcError::Schema("missing 'alternatives' array".into()))?
            .iter()
            .map(|a| tuple_from_json(&self.alternative_fields, a))
            .collect::<Result<Vec<_>>>()?;
        let choice = obj
            .get("choice")
            .and_then(Value::as_u64)
            .ok_or_else(|| PcmcError::Schema("missing or invalid 'choice'".into()))?
            as usize;
        let s = Session {
            individual,
            alternatives,
            choice,
        };
        self.check_session(&s)?;
        Ok(s)
    }
}

fn check_tuple(fields: &[FieldSpec], values: &[FeatureValue], what: &str) -> Result<()> {
    if fields.len() != values.len() {
        return Err(PcmcError::Schema(format!(
            "{what} tuple has {} values, schema declares {}",
            values.len(),
            fields.len()
        )));
    }
    for (f, v) in fields.iter().zip(values) {
        match (&f.kind, v) {
            (FieldKind::Numeric { .. }, FeatureValue::Num(x)) if x.is_finite() => {}
            (FieldKind::Numeric { .. }, FeatureValue::Num(_)) => {
                return Err(PcmcError::Schema(format!("field '{}' is not finite", f.name)))
            }
            (FieldKind::Categorical { .. }, FeatureValue::Cat(_)) => {}
            _ => {
                return Err(PcmcError::Schema(format!(
                    "field '{}' has the wrong kind of value",
                    f.name
                )))
            }
        }
    }
    Ok(())
}

fn tuple_to_json(fields: &[FieldSpec], values: &[FeatureValue]) -> Value {
    let mut obj = Map::new();
    for (f, v) in fields.iter().zip(values) {
        let jv = match v {
            FeatureValue::Num(x) => Value::from(*x),
            FeatureValue::Cat(s) => Value::from(s.clone()),
        };
        obj.insert(f.name.clone(), jv);
    }
    Value::Object(obj)
}

fn tuple_from_json(fields: &[FieldSpec], v: &Value) -> Result<Vec<FeatureValue>> {
    let obj = v
        .as_object()
        .ok_or_else(|| PcmcError::Schema("feature tuple is not an object".into()))?;
    fields
        .iter()
        .map(|f| {
            let raw = obj
                .get(&f.name)
                .ok_or_else(|| PcmcError::Schema(format!("missing field '{}'", f.name)))?;
            match (&f.kind, raw) {
                (FieldKind::Numeric { .. }, Value::Number(n)) => {
                    Ok(FeatureValue::Num(n.as_f64().unwrap_or(f64::NAN)))
                }
                (FieldKind::Categorical { .. }, Value::String(s)) => Ok(FeatureValue::Cat(s.clone())),
                _ => Err(PcmcError::Schema(format!(
                    "field '{}' has the wrong JSON type",
                    f.name
                ))),
            }
        })
        .collect()
}

/// A single feature value.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(x) => Some(*x),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(s) => Some(s),
            FeatureValue::Num(_) => None,
        }
    }
}

impl From<f64> for FeatureValue {
    fn from(x: f64) -> Self {
        FeatureValue::Num(x)
    }
}

impl From<&str> for FeatureValue {
    fn from(s: &str) -> Self {
        FeatureValue::Cat(s.to_string())
    }
}

/// One choice observation: individual features, the ordered choice set, and
/// the position of the chosen alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub individual: Vec<FeatureValue>,
    pub alternatives: Vec<Vec<FeatureValue>>,
    pub choice: usize,
}

impl Session {
    pub fn len(&self) -> usize {
        self.alternatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alternatives.is_empty()
    }
}

pub fn read_sessions(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<Session>> {
    let file = fs::File::open(&path).map_err(|e| PcmcError::io(&path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PcmcError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| PcmcError::Schema(format!("line {}: {e}", lineno + 1)))?;
        let s = schema
            .session_from_json(&v)
            .map_err(|e| PcmcError::Schema(format!("line {}: {e}", lineno + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn write_sessions(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    sessions: &[Session],
) -> Result<()> {
    let file = fs::File::create(&path).map_err(|e| PcmcError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for s in sessions {
        let line = serde_json::to_string(&schema.session_to_json(s))?;
        writeln!(w, "{line}").map_err(|e| PcmcError::io(&path, e))?;
    }
    w.flush().map_err(|e| PcmcError::io(&path, e))
}

/// Session over a finite universe of indexed items, as used by the
/// non-amortized estimator. `choice` is a position in `set`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSession {
    pub set: Vec<usize>,
    pub choice: usize,
}

/// Map feature sessions whose alternatives carry a categorical item field onto
/// universe indices (the level index of that field).
pub fn index_sessions(
    schema: &FeatureSchema,
    sessions: &[Session],
    item_field: &str,
) -> Result<(usize, Vec<IndexedSession>)> {
    let k = schema
        .alternative_field(item_field)
        .ok_or_else(|| PcmcError::Schema(format!("no alternative field '{item_field}'")))?;
    let field = &schema.alternative_fields[k];
    let universe = field
        .cardinality()
        .ok_or_else(|| PcmcError::Schema(format!("field '{item_field}' is not categorical")))?;
    let out = sessions
        .iter()
        .map(|s| {
            let set = s
                .alternatives
                .iter()
                .map(|a| {
                    let level = a[k].as_cat().unwrap_or_default();
                    field.level_index(level).ok_or_else(|| {
                        PcmcError::Schema(format!("unknown item level '{level}'"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IndexedSession {
                set,
                choice: s.choice,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((universe, out))
}
