//! Corpus ingestion: manifests, label collapsing, bags, strong annotations
//! and balanced batch sampling.

mod annotation;
mod labels;
mod manifest;
mod sampler;

pub use annotation::{
    frames_from_annotation, load_strong_annotations, write_strong_annotations, Event, StrongAnnotation,
};
pub use labels::{apply_label_map, LabelMap, WeakLabel};
pub use manifest::{load_weak_manifest, write_weak_manifest, WeakManifestEntry};
pub use sampler::{Anchor, HnhSampler};

use crate::dsp::FeatureMatrix;

/// One recording: its frames are the instances, its weak label the bag label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    pub features: FeatureMatrix,
    pub label: WeakLabel,
}

impl Bag {
    pub fn new(features: FeatureMatrix, label: WeakLabel) -> Self {
        Bag {
            id: features.id.clone(),
            features,
            label,
        }
    }

    pub fn instance_count(&self) -> usize {
        self.features.frames()
    }
}
