use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::rotation::Vec3;
use super::KinematicsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexEntryConfig {
    pub label: String,
    pub joint: String,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexEntry {
    pub label: String,
    pub joint: usize,
    pub offset: Vec3,
}

/// Semantically labelled surface points, each rigidly attached to a joint.
#[derive(Debug, Clone, Default)]
pub struct VertexCatalog {
    entries: Vec<VertexEntry>,
    index: HashMap<String, usize>,
}

impl VertexCatalog {
    pub(crate) fn from_config(
        entries: &[VertexEntryConfig],
        joints: &HashMap<String, usize>,
    ) -> Result<Self, KinematicsError> {
        let mut catalog = VertexCatalog::default();
        for e in entries {
            let joint = *joints.get(&e.joint).ok_or_else(|| {
                KinematicsError::InvalidSkeleton(format!(
                    "vertex {} attached to unknown joint {}",
                    e.label, e.joint
                ))
            })?;
            catalog.push(VertexEntry {
                label: e.label.clone(),
                joint,
                offset: Vec3::from(e.offset),
            })?;
        }
        Ok(catalog)
    }

    pub fn push(&mut self, entry: VertexEntry) -> Result<(), KinematicsError> {
        if self.index.contains_key(&entry.label) {
            return Err(KinematicsError::InvalidSkeleton(format!(
                "duplicate vertex label {}",
                entry.label
            )));
        }
        self.index.insert(entry.label.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&VertexEntry> {
        self.index.get(label).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[VertexEntry] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    /// Closest label by Levenshtein distance, ties broken by catalog order.
    pub fn nearest_label(&self, query: &str) -> Option<&str> {
        self.entries
            .iter()
            .map(|e| (strsim::levenshtein(query, &e.label), e.label.as_str()))
            .min_by_key(|(d, _)| *d)
            .map(|(_, l)| l)
    }
}
