use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::WeakManifestEntry;

/// Recording-level presence label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WeakLabel {
    Negative,
    Positive,
}

impl WeakLabel {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            WeakLabel::Positive
        } else {
            WeakLabel::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == WeakLabel::Positive
    }

    /// `Y` as used in the loss targets: 0 or 1.
    pub fn value(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Collapses a set of raw classes into one detection target, e.g. every
/// bird species into `bird`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub target: String,
    pub positives: BTreeSet<String>,
}

impl LabelMap {
    pub fn new(target: impl Into<String>, positives: impl IntoIterator<Item = impl Into<String>>) -> Self {
        LabelMap {
            target: target.into(),
            positives: positives.into_iter().map(Into::into).collect(),
        }
    }

    pub fn label(&self, labels: &BTreeSet<String>) -> WeakLabel {
        WeakLabel::from_bool(labels.iter().any(|l| self.positives.contains(l)))
    }
}

/// `Y = 1` iff the entry carries any of the map's positive labels.
pub fn apply_label_map(entries: &[WeakManifestEntry], map: &LabelMap) -> Vec<(String, WeakLabel)> {
    entries.iter().map(|e| (e.id.clone(), map.label(&e.labels))).collect()
}
