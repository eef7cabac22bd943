//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath;

/// Ordered entity classes with a designated non-entity class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpace {
    names: Vec<String>,
    o_index: usize,
}

impl LabelSpace {
    pub fn new(names: Vec<String>, o_index: usize) -> Result<Self> {
        let space = LabelSpace { names, o_index };
        space.validate()?;
        Ok(space)
    }

    /// `n_entities` entity classes named `E0..` followed by `O`.
    pub fn synthetic(n_entities: usize) -> Self {
        let mut names: Vec<String> = (0..n_entities).map(|c| format!("E{c}")).collect();
        names.push("O".to_string());
        LabelSpace {
            names,
            o_index: n_entities,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::LabelSpace("no classes".into()));
        }
        if self.o_index >= self.names.len() {
            return Err(Error::LabelSpace(format!(
                "o_index {} out of range for {} classes",
                self.o_index,
                self.names.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            if self.names[..i].contains(name) {
                return Err(Error::LabelSpace(format!("duplicate class name {name:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn o_index(&self) -> usize {
        self.o_index
    }
}

/// A probability distribution over the label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    const SUM_TOLERANCE: f64 = 1e-9;

    /// Wraps `probs` after checking non-negativity and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::LengthMismatch { left: 0, right: 1 });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::ConfigInvalid(
                "soft label has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::ConfigInvalid(format!("soft label sums to {sum}")));
        }
        Ok(SoftLabel(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= Self::SUM_TOLERANCE);
        SoftLabel(probs)
    }

    pub fn one_hot(n: usize, class: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[class] = 1.0;
        SoftLabel(probs)
    }

    pub fn uniform(n: usize) -> Self {
        SoftLabel(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn hard(&self) -> usize {
        vecmath::hard_label(&self.0)
    }
}

impl Deref for SoftLabel {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense span representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid(
                "embedding has non-finite entry".into(),
            ));
        }
        Ok(Embedding(values))
    }

    pub fn normalized(&self) -> Result<Embedding> {
        vecmath::l2_normalize(&self.0).map(Embedding)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Source,
    Target,
    TargetTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::Target => "target",
            Split::TargetTest => "target_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "source" => Ok(Split::Source),
            "target" => Ok(Split::Target),
            "target_test" => Ok(Split::TargetTest),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One span: its embedding, split, optional gold class and soft pseudo label.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: u64,
    pub split: Split,
    pub gold: Option<usize>,
    pub pseudo: Option<SoftLabel>,
    pub embedding: Embedding,
}

impl Record {
    /// Hard pseudo label, if a pseudo label is assigned.
    pub fn hard_pseudo(&self) -> Option<usize> {
        self.pseudo.as_ref().map(SoftLabel::hard)
    }

    /// Label used for prototypes and the neighbor repository: gold for
    /// source records, hard pseudo for target records.
    pub fn denoise_label(&self) -> Option<usize> {
        match self.split {
            Split::Source => self.gold,
            Split::Target => self.hard_pseudo(),
            Split::TargetTest => None,
        }
    }
}

/// Records sorted by id plus the label space they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labels: LabelSpace,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(labels: LabelSpace, mut records: Vec<Record>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::ConfigInvalid(format!(
                "duplicate record id {}",
                w[0].id
            )));
        }
        let dim = records.first().map_or(0, |r| r.embedding.dim());
        for r in &records {
            if r.embedding.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.embedding.dim(),
                });
            }
            if let Some(g) = r.gold {
                if g >= labels.len() {
                    return Err(Error::ConfigInvalid(format!(
                        "record {} gold {} out of range",
                        r.id, g
                    )));
                }
            }
            if let Some(p) = &r.pseudo {
                if p.len() != labels.len() {
                    return Err(Error::LengthMismatch {
                        left: p.len(),
                        right: labels.len(),
                    });
                }
            }
        }
        Ok(Dataset { labels, records })
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.embedding.dim())
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}
