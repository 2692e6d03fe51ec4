//! Versioned JSON checkpoints for every model kind.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::baselines::{FieldRanker, MnlModel, MnlParts};
use crate::choice::{RateMatrix, Validation};
use crate::data::{FeatureSchema, Session};
use crate::error::{PcmcError, Result};
use crate::mle::MleModel;
use crate::model::{ChoiceModel, ModelKind, Ranker, UniformModel};
use crate::net::{ArchitectureConfig, NormalizationStats, PcmcNet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointBody {
    PcmcNet {
        config: ArchitectureConfig,
        normalization: NormalizationStats,
        params: Vec<NamedTensor>,
    },
    PcmcMle {
        item_field: String,
        rates: RateMatrix,
    },
    Mnl(MnlParts),
    Uniform,
    Field {
        field: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub schema: FeatureSchema,
    pub body: CheckpointBody,
}

/// Any model the toolkit can train, evaluate or checkpoint.
#[derive(Debug, Clone)]
pub enum AnyModel {
    PcmcNet(PcmcNet),
    PcmcMle(MleModel),
    Mnl(MnlModel),
    Uniform(FeatureSchema),
    Field(FieldRanker, FeatureSchema),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::PcmcNet(_) => ModelKind::PcmcNet,
            AnyModel::PcmcMle(_) => ModelKind::PcmcMle,
            AnyModel::Mnl(_) => ModelKind::Mnl,
            AnyModel::Uniform(_) => ModelKind::Uniform,
            AnyModel::Field(r, _) => r.kind(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            AnyModel::PcmcNet(m) => m.schema(),
            AnyModel::PcmcMle(m) => &m.schema,
            AnyModel::Mnl(m) => m.schema(),
            AnyModel::Uniform(s) | AnyModel::Field(_, s) => s,
        }
    }

    /// `None` for rankers that assign no probabilities.
    pub fn as_choice_model(&self) -> Option<&dyn ChoiceModel> {
        match self {
            AnyModel::PcmcNet(m) => Some(m),
            AnyModel::PcmcMle(m) => Some(m),
            AnyModel::Mnl(m) => Some(m),
            AnyModel::Uniform(_) => Some(&UniformModel),
            AnyModel::Field(..) => None,
        }
    }

    pub fn as_ranker(&self) -> &dyn Ranker {
        match self {
            AnyModel::PcmcNet(m) => m,
            AnyModel::PcmcMle(m) => m,
            AnyModel::Mnl(m) => m,
            AnyModel::Uniform(_) => &UniformModel,
            AnyModel::Field(r, _) => r,
        }
    }

    /// Check that a session matches the model's schema.
    pub fn check_session(&self, session: &Session) -> Result<()> {
        self.schema().check_session(session)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let body = match self {
            AnyModel::PcmcNet(m) => CheckpointBody::PcmcNet {
                config: m.config().clone(),
                normalization: m.stats().clone(),
                params: m
                    .params()
                    .iter()
                    .map(|(name, t)| NamedTensor {
                        name: name.to_string(),
                        rows: t.rows(),
                        cols: t.cols(),
                        data: t.data().to_vec(),
                    })
                    .collect(),
            },
            AnyModel::PcmcMle(m) => CheckpointBody::PcmcMle {
                item_field: m.item_field.clone(),
                rates: m.rates.clone(),
            },
            AnyModel::Mnl(m) => CheckpointBody::Mnl(m.parts()),
            AnyModel::Uniform(_) => CheckpointBody::Uniform,
            AnyModel::Field(r, _) => CheckpointBody::Field {
                field: r.field().to_string(),
            },
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            model_kind: self.kind(),
            schema: self.schema().clone(),
            body,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format_version != FORMAT_VERSION {
            return Err(PcmcError::Schema(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                c.format_version
            )));
        }
        c.schema.validate()?;
        let kind = c.model_kind;
        let model = match c.body {
            CheckpointBody::PcmcNet {
                config,
                normalization,
                params,
            } => {
                let mut store = ParamStore::new();
                for t in params {
                    store.add(t.name, Tensor::new(t.rows, t.cols, t.data)?);
                }
                AnyModel::PcmcNet(PcmcNet::from_parts(c.schema, config, normalization, store)?)
            }
            CheckpointBody::PcmcMle { item_field, rates } => {
                if let Validation::Invalid(v) = rates.validate() {
                    return Err(PcmcError::InvalidRateMatrix(format!("{v:?}")));
                }
                AnyModel::PcmcMle(MleModel::new(c.schema, &item_field, rates)?)
            }
            CheckpointBody::Mnl(parts) => AnyModel::Mnl(MnlModel::new(&c.schema, &parts.normalization, parts.weights)?),
            CheckpointBody::Uniform => AnyModel::Uniform(c.schema),
            CheckpointBody::Field { field } => AnyModel::Field(FieldRanker::new(kind, &c.schema, &field)?, c.schema),
        };
        if model.kind() != kind {
            return Err(PcmcError::Schema(format!(
                "checkpoint declares {kind} but its body holds {}",
                model.kind()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(&path, json).map_err(|e| PcmcError::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PcmcError::io(&path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_mnl, MnlOptions};
    use crate::datagen::{
        airline_schema, airline_synthetic, indexed_schema, random_pcmc, AirlineOptions, ITEM_FIELD,
    };

    fn roundtrip(m: &AnyModel) -> AnyModel {
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        AnyModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap()
    }

    #[test]
    fn lossless_for_every_kind() {
        let schema = airline_schema();
        let opts = AirlineOptions {
            max_set_size: 6,
            ..Default::default()
        };
        let (sessions, net) = airline_synthetic(&schema, 40, &opts, 3).unwrap();
        let mnl = fit_mnl(&schema, &sessions, &MnlOptions::default()).unwrap().model;
        let models = [
            AnyModel::PcmcNet(net),
            AnyModel::Mnl(mnl),
            AnyModel::Uniform(schema.clone()),
            AnyModel::Field(FieldRanker::cheapest(&schema).unwrap(), schema.clone()),
        ];
        for m in &models {
            let back = roundtrip(m);
            assert_eq!(back.kind(), m.kind());
            assert_eq!(back.to_checkpoint(), m.to_checkpoint());
            for s in &sessions {
                assert_eq!(back.as_ranker().scores(s).unwrap(), m.as_ranker().scores(s).unwrap());
            }
        }
        let mle = MleModel::new(indexed_schema(5), ITEM_FIELD, random_pcmc(5, 1).unwrap()).unwrap();
        let back = roundtrip(&AnyModel::PcmcMle(mle.clone()));
        match back {
            AnyModel::PcmcMle(b) => assert_eq!(b.rates, mle.rates),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn embedding_rows_include_oov() {
        let (_, net) = airline_synthetic(&airline_schema(), 1, &AirlineOptions::default(), 0).unwrap();
        let c = AnyModel::PcmcNet(net).to_checkpoint();
        let CheckpointBody::PcmcNet { params, .. } = &c.body else { panic!() };
        let airline = params.iter().find(|t| t.name == "emb.alt.airline").unwrap();
        assert_eq!((airline.rows, airline.cols), (64, 32));
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let (_, net) = airline_synthetic(&airline_schema(), 1, &AirlineOptions::default(), 0).unwrap();
        let good = AnyModel::PcmcNet(net).to_checkpoint();

        let mut c = good.clone();
        c.format_version = 99;
        assert!(matches!(AnyModel::from_checkpoint(c), Err(PcmcError::Schema(_))));

        let mut c = good.clone();
        if let CheckpointBody::PcmcNet { params, .. } = &mut c.body {
            params.pop();
        }
        assert!(AnyModel::from_checkpoint(c).is_err());

        let mut c = good;
        c.model_kind = ModelKind::Mnl;
        assert!(AnyModel::from_checkpoint(c).is_err());

        let bad = RateMatrix::from_dense_unchecked(2, vec![0.0, 0.0, 0.0, 0.0]);
        let c = Checkpoint {
            format_version: FORMAT_VERSION,
            model_kind: ModelKind::PcmcMle,
            schema: indexed_schema(2),
            body: CheckpointBody::PcmcMle {
                item_field: ITEM_FIELD.into(),
                rates: bad,
            },
        };
        assert!(matches!(AnyModel::from_checkpoint(c), Err(PcmcError::InvalidRateMatrix(_))));
    }
}
