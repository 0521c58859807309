use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::RecordId;
use crate::rng::{derive_rng, sample_positions};

use super::{read_query_subset, FilterFn, GroupSource, MappingFn, QrelGroup, Registry};

/// Replacement for surviving scores: a constant label or a named mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreTransform {
    Constant(i32),
    Named(String),
}

fn default_format() -> String {
    "tsv".to_owned()
}

/// Declarative recipe for loading and transforming one qrel collection.
///
/// Field names follow the JSON config schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    pub qrel_path: PathBuf,
    #[serde(default = "default_format")]
    pub qrel_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_subset_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_score: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_score: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_transform: Option<ScoreTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_random_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_fn: Option<String>,
    #[serde(default)]
    pub seed_salt: String,
}

impl CollectionConfig {
    pub fn new(qrel_path: impl Into<PathBuf>) -> Self {
        CollectionConfig {
            qrel_path: qrel_path.into(),
            qrel_format: default_format(),
            query_path: None,
            corpus_path: None,
            query_subset_path: None,
            min_score: None,
            max_score: None,
            score_transform: None,
            group_random_k: None,
            filter_fn: None,
            seed_salt: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(lo), Some(hi)) = (self.min_score, self.max_score) {
            if lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "min_score {lo} exceeds max_score {hi}"
                )));
            }
        }
        if self.group_random_k == Some(0) {
            return Err(Error::InvalidConfig("group_random_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.qrel_path);
        for p in [
            &mut self.query_path,
            &mut self.corpus_path,
            &mut self.query_subset_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn has_entry_filters(&self) -> bool {
        self.min_score.is_some() || self.max_score.is_some() || self.filter_fn.is_some()
    }
}

enum Relabel {
    Constant(i32),
    Mapping(MappingFn),
}

/// Entry-level steps (2)-(5) of the transform pipeline, callbacks resolved.
struct GroupTransform {
    min_score: Option<i32>,
    max_score: Option<i32>,
    filter: Option<FilterFn>,
    relabel: Option<Relabel>,
    random_k: Option<usize>,
    seed: u64,
    salt: String,
}

impl GroupTransform {
    fn resolve(cfg: &CollectionConfig, registry: &Registry, seed: u64) -> Result<Self> {
        let filter = cfg.filter_fn.as_deref().map(|n| registry.filter(n).cloned()).transpose()?;
        let relabel = match &cfg.score_transform {
            None => None,
            Some(ScoreTransform::Constant(c)) => Some(Relabel::Constant(*c)),
            Some(ScoreTransform::Named(n)) => Some(Relabel::Mapping(registry.mapping(n)?.clone())),
        };
        Ok(GroupTransform {
            min_score: cfg.min_score,
            max_score: cfg.max_score,
            filter,
            relabel,
            random_k: cfg.group_random_k,
            seed,
            salt: cfg.seed_salt.clone(),
        })
    }

    fn apply(&self, mut group: QrelGroup) -> Option<QrelGroup> {
        let qid = group.query_id.clone();
        let (lo, hi) = (
            self.min_score.unwrap_or(i32::MIN),
            self.max_score.unwrap_or(i32::MAX),
        );
        group.entries.retain(|(doc, score)| {
            (lo..=hi).contains(score)
                && self.filter.as_ref().is_none_or(|f| f(qid.as_str(), doc.as_str(), *score))
        });
        match &self.relabel {
            Some(Relabel::Constant(c)) => group.entries.iter_mut().for_each(|e| e.1 = *c),
            Some(Relabel::Mapping(f)) => group.entries.iter_mut().for_each(|e| e.1 = f(e.1)),
            None => {}
        }
        if let Some(k) = self.random_k {
            if group.entries.len() > k {
                let mut rng = derive_rng(self.seed, &[self.salt.as_bytes(), qid.as_str().as_bytes()]);
                let keep = sample_positions(&mut rng, group.entries.len(), k);
                group.entries = keep.into_iter().map(|i| group.entries[i].clone()).collect();
            }
        }
        (!group.entries.is_empty()).then_some(group)
    }
}

/// A transformed, read-only view over a group source.
///
/// Only surviving positions are held in memory; entry transforms run when a
/// group is accessed and are deterministic per query id.
pub struct CollectionView {
    source: Arc<dyn GroupSource>,
    survivors: Vec<usize>,
    transform: GroupTransform,
}

impl std::fmt::Debug for CollectionView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectionView")
            .field("groups", &self.survivors.len())
            .finish()
    }
}

/// Applies the config pipeline in fixed order: query subset, score range,
/// `filter_fn`, score transform, per-group random sampling. Groups left
/// empty are dropped.
pub fn apply_config(
    source: Arc<dyn GroupSource>,
    cfg: &CollectionConfig,
    registry: &Registry,
    seed: u64,
) -> Result<CollectionView> {
    cfg.validate()?;
    let transform = GroupTransform::resolve(cfg, registry, seed)?;

    let mut survivors: Vec<usize> = match &cfg.query_subset_path {
        Some(path) => {
            let subset = read_query_subset(path)?;
            subset_positions(source.as_ref(), subset.iter())
        }
        None => (0..source.len()).collect(),
    };

    if cfg.has_entry_filters() {
        let mut kept = Vec::with_capacity(survivors.len());
        for pos in survivors {
            if transform.apply(source.group(pos)?).is_some() {
                kept.push(pos);
            }
        }
        survivors = kept;
    }

    Ok(CollectionView {
        source,
        survivors,
        transform,
    })
}

fn subset_positions<'a>(
    source: &dyn GroupSource,
    subset: impl Iterator<Item = &'a RecordId>,
) -> Vec<usize> {
    // Subset ids arrive sorted, so positions come out ascending.
    subset.filter_map(|id| source.position(id.as_str())).collect()
}

impl GroupSource for CollectionView {
    fn len(&self) -> usize {
        self.survivors.len()
    }

    fn query_id(&self, i: usize) -> &str {
        self.source.query_id(self.survivors[i])
    }

    fn group(&self, i: usize) -> Result<QrelGroup> {
        let pos = *self.survivors.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.survivors.len(),
        })?;
        let group = self.source.group(pos)?;
        let qid = group.query_id.clone();
        self.transform
            .apply(group)
            .ok_or_else(|| Error::InvalidConfig(format!("surviving group {qid} became empty")))
    }

    fn position(&self, query_id: &str) -> Option<usize> {
        let pos = self.source.position(query_id)?;
        self.survivors.binary_search(&pos).ok()
    }
}
