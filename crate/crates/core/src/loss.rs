//! Bag-level multiple-instance losses.
//!
//! Every loss maps the frame predictions `o_j ∈ [0, 1]` of one recording and
//! its weak label `Y` to a scalar. Losses are trait objects held in a
//! [`LossRegistry`] and looked up by their config name:
//!
//! | name       | value                                                        |
//! |------------|--------------------------------------------------------------|
//! | `fsl`      | `mean_j BCE(o_j, Y)`                                         |
//! | `max_se`   | `½ (max_j o_j − Y)²`                                         |
//! | `max_bce`  | `BCE(max_j o_j, Y)`                                          |
//! | `max_mean` | `½ [BCE(max o, Y) + BCE(mean o, Y/2)]`                       |
//! | `max_min`  | `½ [BCE(max o, Y) + BCE(min o, 0)]`                          |
//! | `mmm`      | `⅓ [BCE(max o, Y) + BCE(mean o, Y/2) + BCE(min o, 0)]`       |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::WeakLabel;
use crate::error::{Error, Result};
use crate::tensor::{bce_value, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Fsl,
    MaxSe,
    MaxBce,
    MaxMean,
    MaxMin,
    Mmm,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Fsl,
        LossKind::MaxSe,
        LossKind::MaxBce,
        LossKind::MaxMean,
        LossKind::MaxMin,
        LossKind::Mmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Fsl => "fsl",
            LossKind::MaxSe => "max_se",
            LossKind::MaxBce => "max_bce",
            LossKind::MaxMean => "max_mean",
            LossKind::MaxMin => "max_min",
            LossKind::Mmm => "mmm",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown loss `{s}`")))
    }
}

/// One evaluated bag loss with its named sub-terms.
#[derive(Clone, Debug, PartialEq)]
pub struct BagLoss {
    pub kind: LossKind,
    pub value: f64,
    pub terms: Vec<(&'static str, f64)>,
}

impl BagLoss {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

pub trait MilLoss: Send + Sync {
    fn kind(&self) -> LossKind;

    /// Direct evaluation on plain predictions.
    fn evaluate(&self, preds: &[f64], label: WeakLabel) -> Result<BagLoss>;

    /// Records the loss on `g`, where `preds` is a `[M]` node holding one
    /// bag's frame predictions. Returns a scalar node.
    fn record(&self, g: &mut Graph, preds: NodeId, label: WeakLabel) -> Result<NodeId>;
}

#[derive(Clone, Copy, Debug)]
enum Pool {
    Frames,
    Max,
    Mean,
    Min,
}

#[derive(Clone, Copy, Debug)]
enum Criterion {
    Bce,
    HalfSquared,
}

/// Target as a multiple of `Y`: `Y`, `Y/2` or `0`.
#[derive(Clone, Copy, Debug)]
struct Term {
    name: &'static str,
    pool: Pool,
    target_scale: f64,
    criterion: Criterion,
}

const fn term(name: &'static str, pool: Pool, target_scale: f64) -> Term {
    Term {
        name,
        pool,
        target_scale,
        criterion: Criterion::Bce,
    }
}

const MAX_TERM: Term = term("max", Pool::Max, 1.0);
const MEAN_TERM: Term = term("mean", Pool::Mean, 0.5);
const MIN_TERM: Term = term("min", Pool::Min, 0.0);

/// Arithmetic mean of pooled-prediction terms; covers the whole family.
struct PooledLoss {
    kind: LossKind,
    terms: &'static [Term],
}

fn check_bag(preds: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Contract("empty bag".into()));
    }
    Ok(())
}

impl MilLoss for PooledLoss {
    fn kind(&self) -> LossKind {
        self.kind
    }

    fn evaluate(&self, preds: &[f64], label: WeakLabel) -> Result<BagLoss> {
        check_bag(preds)?;
        let y = label.value();
        let terms: Vec<(&'static str, f64)> = self
            .terms
            .iter()
            .map(|t| {
                let target = t.target_scale * y;
                let crit = |p: f64| match t.criterion {
                    Criterion::Bce => bce_value(p, target),
                    Criterion::HalfSquared => 0.5 * (p - target) * (p - target),
                };
                let v = match t.pool {
                    Pool::Frames => preds.iter().map(|&p| crit(p)).sum::<f64>() / preds.len() as f64,
                    Pool::Max => crit(preds.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                    Pool::Min => crit(preds.iter().copied().fold(f64::INFINITY, f64::min)),
                    Pool::Mean => crit(preds.iter().sum::<f64>() / preds.len() as f64),
                };
                (t.name, v)
            })
            .collect();
        let value = terms.iter().map(|(_, v)| v).sum::<f64>() / terms.len() as f64;
        Ok(BagLoss {
            kind: self.kind,
            value,
            terms,
        })
    }

    fn record(&self, g: &mut Graph, preds: NodeId, label: WeakLabel) -> Result<NodeId> {
        let shape = g.value(preds).shape().to_vec();
        if shape.len() != 1 {
            return Err(Error::shape("bag predictions", &shape, &[]));
        }
        check_bag(g.value(preds).data())?;
        let y = label.value();
        let mut parts = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            let pooled = match t.pool {
                Pool::Frames => preds,
                Pool::Max => g.reduce_max(preds)?,
                Pool::Mean => g.reduce_mean(preds)?,
                Pool::Min => g.reduce_min(preds)?,
            };
            let target = Tensor::full(g.value(pooled).shape(), t.target_scale * y);
            let per = match t.criterion {
                Criterion::Bce => g.bce(pooled, &target)?,
                Criterion::HalfSquared => {
                    let sq = g.squared_error(pooled, &target)?;
                    g.scale(sq, 0.5)
                }
            };
            parts.push(g.mean(per));
        }
        let stacked = g.stack(&parts)?;
        Ok(g.mean(stacked))
    }
}

fn builtin(kind: LossKind) -> PooledLoss {
    const FRAMES: [Term; 1] = [term("frames", Pool::Frames, 1.0)];
    const MAX_SE: [Term; 1] = [Term {
        name: "max",
        pool: Pool::Max,
        target_scale: 1.0,
        criterion: Criterion::HalfSquared,
    }];
    const MAX: [Term; 1] = [MAX_TERM];
    const MAX_MEAN: [Term; 2] = [MAX_TERM, MEAN_TERM];
    const MAX_MIN: [Term; 2] = [MAX_TERM, MIN_TERM];
    const MMM: [Term; 3] = [MAX_TERM, MEAN_TERM, MIN_TERM];
    let terms: &'static [Term] = match kind {
        LossKind::Fsl => &FRAMES,
        LossKind::MaxSe => &MAX_SE,
        LossKind::MaxBce => &MAX,
        LossKind::MaxMean => &MAX_MEAN,
        LossKind::MaxMin => &MAX_MIN,
        LossKind::Mmm => &MMM,
    };
    PooledLoss { kind, terms }
}

/// Name-keyed collection of losses.
pub struct LossRegistry {
    entries: BTreeMap<String, Box<dyn MilLoss>>,
}

impl LossRegistry {
    pub fn empty() -> Self {
        LossRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// All six built-in losses under their config names.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for kind in LossKind::ALL {
            r.register(kind.name(), Box::new(builtin(kind)));
        }
        r
    }

    pub fn register(&mut self, name: impl Into<String>, loss: Box<dyn MilLoss>) {
        self.entries.insert(name.into(), loss);
    }

    pub fn get(&self, name: &str) -> Result<&dyn MilLoss> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Param(format!("unknown loss `{name}`; known: {}", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// Shorthand for a built-in loss.
pub fn loss_for(kind: LossKind) -> Box<dyn MilLoss> {
    Box::new(builtin(kind))
}

/// Mean bag loss over a batch, accumulated in bag order.
pub fn batch_loss(loss: &dyn MilLoss, bags: &[(&[f64], WeakLabel)]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut total = 0.0;
    for (preds, label) in bags {
        total += loss.evaluate(preds, *label)?.value;
    }
    Ok(total / bags.len() as f64)
}
