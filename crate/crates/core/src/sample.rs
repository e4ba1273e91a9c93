use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Planted ground-truth quality label of a synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Plain,
    Informative,
    Chaotic,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Plain, Tier::Informative, Tier::Chaotic];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Plain => "plain",
            Tier::Informative => "informative",
            Tier::Chaotic => "chaotic",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Tier::Plain => 0,
            Tier::Informative => 1,
            Tier::Chaotic => 2,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Tier::Plain),
            "informative" => Ok(Tier::Informative),
            "chaotic" => Ok(Tier::Chaotic),
            other => Err(format!("unknown tier `{other}`")),
        }
    }
}

/// One training item: a condition vector (the "prompt") and the target it
/// should produce (the "image content").
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f64> {
    pub id: String,
    pub condition: Vec<T>,
    pub target: Vec<T>,
    pub tier: Option<Tier>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: impl Into<String>, condition: Vec<T>, target: Vec<T>) -> Self {
        Self {
            id: id.into(),
            condition,
            target,
            tier: None,
        }
    }

    pub fn with_tier(mut self, tier: Tier) -> Self {
        self.tier = Some(tier);
        self
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            condition: self.condition.iter().map(|v| U::of(v.as_f64())).collect(),
            target: self.target.iter().map(|v| U::of(v.as_f64())).collect(),
            tier: self.tier,
        }
    }
}
