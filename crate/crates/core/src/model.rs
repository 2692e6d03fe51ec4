//! Common interface of fitted models and rankers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceDistribution;
use crate::data::Session;
use crate::error::{PcmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "pcmc-net")]
    PcmcNet,
    #[serde(rename = "pcmc-mle")]
    PcmcMle,
    #[serde(rename = "mnl")]
    Mnl,
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "cheapest")]
    Cheapest,
    #[serde(rename = "shortest")]
    Shortest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::PcmcNet,
        ModelKind::PcmcMle,
        ModelKind::Mnl,
        ModelKind::Uniform,
        ModelKind::Cheapest,
        ModelKind::Shortest,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::PcmcNet => "pcmc-net",
            ModelKind::PcmcMle => "pcmc-mle",
            ModelKind::Mnl => "mnl",
            ModelKind::Uniform => "uniform",
            ModelKind::Cheapest => "cheapest",
            ModelKind::Shortest => "shortest",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pcmcnet" | "pcmc-net" => Ok(ModelKind::PcmcNet),
            "pcmc-mle" | "mle" => Ok(ModelKind::PcmcMle),
            "mnl" => Ok(ModelKind::Mnl),
            "uniform" => Ok(ModelKind::Uniform),
            "cheapest" => Ok(ModelKind::Cheapest),
            "shortest" => Ok(ModelKind::Shortest),
            other => Err(PcmcError::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }

    /// Whether the model assigns probabilities (and hence has an NLL).
    pub fn is_probabilistic(self) -> bool {
        !matches!(self, ModelKind::Cheapest | ModelKind::Shortest)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Anything that orders the alternatives of a session. Higher scores rank
/// first; ties are broken at evaluation time.
pub trait Ranker {
    fn scores(&self, session: &Session) -> Result<Vec<f64>>;
}

/// A model assigning a probability to each alternative of a session.
pub trait ChoiceModel {
    fn kind(&self) -> ModelKind;

    fn predict(&self, session: &Session) -> Result<ChoiceDistribution>;
}

impl<M: ChoiceModel + ?Sized> Ranker for M {
    fn scores(&self, session: &Session) -> Result<Vec<f64>> {
        Ok(self.predict(session)?.into_vec())
    }
}

/// Probability 1/|S| on every alternative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UniformModel;

impl ChoiceModel for UniformModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Uniform
    }

    fn predict(&self, session: &Session) -> Result<ChoiceDistribution> {
        if session.alternatives.is_empty() {
            return Err(PcmcError::EmptySubset);
        }
        Ok(ChoiceDistribution::uniform(session.alternatives.len()))
    }
}

impl ChoiceModel for crate::net::PcmcNet {
    fn kind(&self) -> ModelKind {
        ModelKind::PcmcNet
    }

    fn predict(&self, session: &Session) -> Result<ChoiceDistribution> {
        self.forward(session)
    }
}
