//! Representation layer: numeric fields are standardized and passed through,
//! categorical fields go through an embedding table (or a fixed one-hot code)
//! with one extra row reserved for unknown levels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ArchitectureConfig, CategoricalEncoding};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{FeatureSchema, FeatureValue, FieldKind, FieldSpec, Session};
use crate::error::{PcmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
}

/// Training-set means and standard deviations of numeric fields, aligned with
/// the schema's field lists (`None` for categorical fields).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub individual: Vec<Option<FieldStats>>,
    pub alternative: Vec<Option<FieldStats>>,
}

impl NormalizationStats {
    pub fn fit(schema: &FeatureSchema, sessions: &[Session]) -> Self {
        let individual = fit_fields(
            &schema.individual_fields,
            sessions.iter().map(|s| s.individual.as_slice()),
        );
        let alternative = fit_fields(
            &schema.alternative_fields,
            sessions
                .iter()
                .flat_map(|s| s.alternatives.iter().map(Vec::as_slice)),
        );
        NormalizationStats {
            individual,
            alternative,
        }
    }
}

fn fit_fields<'a>(
    fields: &[FieldSpec],
    rows: impl Iterator<Item = &'a [FeatureValue]> + Clone,
) -> Vec<Option<FieldStats>> {
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if !f.is_numeric() {
                return None;
            }
            let (mut n, mut sum) = (0usize, 0.0);
            for r in rows.clone() {
                if let Some(x) = r[k].as_num() {
                    n += 1;
                    sum += x;
                }
            }
            if n == 0 {
                return Some(FieldStats { mean: 0.0, std: 1.0 });
            }
            let mean = sum / n as f64;
            let var = rows
                .clone()
                .filter_map(|r| r[k].as_num())
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>()
                / n as f64;
            let std = var.sqrt();
            Some(FieldStats {
                mean,
                std: if std > 1e-12 { std } else { 1.0 },
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
enum FieldEncoder {
    Numeric(FieldStats),
    Skipped,
    Embedding {
        table: ParamId,
        cardinality: usize,
        dim: usize,
    },
    OneHot {
        cardinality: usize,
    },
}

impl FieldEncoder {
    fn width(&self) -> usize {
        match self {
            FieldEncoder::Numeric(_) => 1,
            FieldEncoder::Skipped => 0,
            FieldEncoder::Embedding { dim, .. } => *dim,
            FieldEncoder::OneHot { cardinality } => *cardinality,
        }
    }
}

/// Encoders for one side (individual or alternative) of the schema.
#[derive(Debug, Clone)]
pub(crate) struct TupleEncoder {
    fields: Vec<FieldSpec>,
    encoders: Vec<FieldEncoder>,
    width: usize,
}

impl TupleEncoder {
    /// Create encoders, registering embedding tables in `store` under
    /// `prefix.<field>`. Tables are initialized from `rng` when given,
    /// otherwise expected to be present already.
    pub(crate) fn build(
        prefix: &str,
        fields: &[FieldSpec],
        stats: &[Option<FieldStats>],
        config: &ArchitectureConfig,
        store: &mut ParamStore,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Self> {
        if stats.len() != fields.len() {
            return Err(PcmcError::Schema(format!(
                "{} normalization entries for {} {prefix} fields",
                stats.len(),
                fields.len()
            )));
        }
        let mut encoders = Vec::with_capacity(fields.len());
        for (f, st) in fields.iter().zip(stats) {
            let enc = match &f.kind {
                FieldKind::Numeric { .. } if !config.numeric_passthrough => FieldEncoder::Skipped,
                FieldKind::Numeric { .. } => FieldEncoder::Numeric(st.ok_or_else(|| {
                    PcmcError::Schema(format!("no normalization stats for '{}'", f.name))
                })?),
                FieldKind::Categorical { cardinality, .. } => match config.categorical_encoding {
                    CategoricalEncoding::OneHot => FieldEncoder::OneHot {
                        cardinality: *cardinality,
                    },
                    CategoricalEncoding::Embedding => {
                        let dim = config.embedding_dim(*cardinality);
                        let name = format!("{prefix}.{}", f.name);
                        let table = match rng.as_deref_mut() {
                            Some(rng) => store.add(name, normal_table(rng, cardinality + 1, dim)),
                            None => {
                                let id = store.find(&name).ok_or_else(|| {
                                    PcmcError::Schema(format!("missing embedding table '{name}'"))
                                })?;
                                if store.get(id).shape() != [cardinality + 1, dim] {
                                    return Err(PcmcError::Schema(format!(
                                        "embedding '{name}' has shape {:?}, expected [{}, {dim}]",
                                        store.get(id).shape(),
                                        cardinality + 1
                                    )));
                                }
                                id
                            }
                        };
                        FieldEncoder::Embedding {
                            table,
                            cardinality: *cardinality,
                            dim,
                        }
                    }
                },
            };
            encoders.push(enc);
        }
        let width = encoders.iter().map(FieldEncoder::width).sum();
        Ok(TupleEncoder {
            fields: fields.to_vec(),
            encoders,
            width,
        })
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    fn level(&self, k: usize, v: &FeatureValue, cardinality: usize) -> Result<usize> {
        let s = v.as_cat().ok_or_else(|| {
            PcmcError::Schema(format!("field '{}' expects a categorical value", self.fields[k].name))
        })?;
        Ok(self.fields[k].level_index(s).unwrap_or(cardinality))
    }

    fn numeric(&self, k: usize, v: &FeatureValue, st: &FieldStats) -> Result<f64> {
        let x = v.as_num().ok_or_else(|| {
            PcmcError::Schema(format!("field '{}' expects a numeric value", self.fields[k].name))
        })?;
        Ok((x - st.mean) / st.std)
    }

    fn check_len(&self, tuple: &[FeatureValue]) -> Result<()> {
        if tuple.len() != self.fields.len() {
            return Err(PcmcError::Schema(format!(
                "tuple has {} values, schema declares {}",
                tuple.len(),
                self.fields.len()
            )));
        }
        Ok(())
    }

    /// Plain (tape-free) encoding of one tuple.
    pub(crate) fn encode(&self, store: &ParamStore, tuple: &[FeatureValue]) -> Result<Vec<f64>> {
        self.check_len(tuple)?;
        let mut out = Vec::with_capacity(self.width);
        for (k, (enc, v)) in self.encoders.iter().zip(tuple).enumerate() {
            match enc {
                FieldEncoder::Numeric(st) => out.push(self.numeric(k, v, st)?),
                FieldEncoder::Skipped => {}
                FieldEncoder::Embedding {
                    table,
                    cardinality,
                    dim,
                } => {
                    let row = self.level(k, v, *cardinality)?;
                    out.extend_from_slice(&store.get(*table).data()[row * dim..(row + 1) * dim]);
                }
                FieldEncoder::OneHot { cardinality } => {
                    let row = self.level(k, v, *cardinality)?;
                    out.extend((0..*cardinality).map(|c| if c == row { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    /// Encode several tuples as the rows of one tape node. Returns `None`
    /// when the encoding is empty.
    pub(crate) fn encode_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tuples: &[&[FeatureValue]],
    ) -> Result<Option<Var>> {
        if self.width == 0 {
            return Ok(None);
        }
        let rows = tuples.len();
        for t in tuples {
            self.check_len(t)?;
        }
        let mut parts: Vec<Var> = Vec::new();
        // Runs of constant columns (numeric and one-hot) become one block.
        let mut block: Vec<Vec<f64>> = vec![Vec::new(); rows];
        let flush = |tape: &mut Tape, block: &mut Vec<Vec<f64>>, parts: &mut Vec<Var>| {
            if block[0].is_empty() {
                return;
            }
            let cols = block[0].len();
            let data: Vec<f64> = block.iter_mut().flat_map(std::mem::take).collect();
            parts.push(tape.constant(Tensor::from_parts(rows, cols, data)));
        };
        for (k, enc) in self.encoders.iter().enumerate() {
            match enc {
                FieldEncoder::Skipped => {}
                FieldEncoder::Numeric(st) => {
                    for (r, t) in tuples.iter().enumerate() {
                        block[r].push(self.numeric(k, &t[k], st)?);
                    }
                }
                FieldEncoder::OneHot { cardinality } => {
                    for (r, t) in tuples.iter().enumerate() {
                        let level = self.level(k, &t[k], *cardinality)?;
                        block[r].extend((0..*cardinality).map(|c| if c == level { 1.0 } else { 0.0 }));
                    }
                }
                FieldEncoder::Embedding {
                    table, cardinality, ..
                } => {
                    flush(tape, &mut block, &mut parts);
                    let idx = tuples
                        .iter()
                        .map(|t| self.level(k, &t[k], *cardinality))
                        .collect::<Result<Vec<_>>>()?;
                    let tv = tape.param(store, *table);
                    parts.push(tape.embedding_lookup(tv, &idx)?);
                }
            }
        }
        flush(tape, &mut block, &mut parts);
        if parts.len() == 1 {
            Ok(Some(parts[0]))
        } else {
            tape.concat(&parts).map(Some)
        }
    }
}

/// Embedding initialization: N(0, 0.01), i.e. standard deviation 0.1.
fn normal_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| 0.1 * standard_normal(rng)).collect();
    Tensor::from_parts(rows, cols, data)
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller; rand 0.8 keeps the normal distribution in rand_distr.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
