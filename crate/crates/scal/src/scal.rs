//! The three-tier cascade: per-class compression models feed a class
//! correlation matrix, correlated classes are grouped into subproblems,
//! an instance distributor routes traffic to its subproblem, and one
//! local decision tree per multi-class subproblem does the final call.
//!
//! Fingerprints are training-time only; inference sees raw features, so
//! no compression runs on the hot path. With k=1 the cascade collapses
//! to a single global tree (the no-harm fallback).

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cart::{self, TreeModel, TreeParams};
use crate::compressor::{self, ClassCompressionModel, CompressorConfig};
use crate::dataset::Dataset;
use crate::decomposition::{self, SubproblemPartition};
use crate::error::{Error, Result};

/// Per-subproblem predictor. Single-class subproblems are answered
/// directly; a subproblem the distributor never routes to during
/// training degenerates to a constant prior.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalPredictor {
    Tree(TreeModel),
    Singleton(usize),
    Constant(usize),
}

#[derive(Debug, Clone)]
pub struct ScalModel {
    /// Empty for pseudo-mode models (no fingerprints involved).
    pub compression_models: Vec<ClassCompressionModel>,
    pub partition: SubproblemPartition,
    /// Absent when k=1.
    pub distributor: Option<TreeModel>,
    /// One per subproblem group.
    pub locals: Vec<LocalPredictor>,
    pub classes: Vec<String>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub class: usize,
    pub probs: Vec<f64>,
    pub route: usize,
}

/// How many subproblems to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    /// Validation search over 1..=k_max.
    Auto { k_max: usize },
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x243F_6A88_85A3_08D3)
}

/// Lines 7-11 of the training procedure: fit the distributor on raw
/// features against subproblem ids, route the training set through it,
/// and fit one local tree per multi-class subproblem on the instances
/// actually routed there (so locals learn the distributor's real
/// mistakes).
pub fn train_with_partition(
    train: &Dataset,
    partition: SubproblemPartition,
    params: &TreeParams,
    seed: u64,
) -> Result<ScalModel> {
    let start = Instant::now();
    let n_classes = train.n_classes();
    let k = partition.k();
    if k == 0 || partition.groups.iter().flatten().count() != n_classes {
        return Err(Error::InvalidParameter(
            "partition must cover all classes exactly once".into(),
        ));
    }

    if k == 1 {
        // byte-identical in behavior to a plain global tree
        let tree = cart::fit_tree(train, params, seed)?;
        return Ok(ScalModel {
            compression_models: Vec::new(),
            partition,
            distributor: None,
            locals: vec![LocalPredictor::Tree(tree)],
            classes: train.classes.clone(),
            train_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let group_of_class = partition.group_of_class(n_classes);
    let route_labels: Vec<usize> = train
        .records
        .iter()
        .map(|r| group_of_class[r.label_index])
        .collect();
    let all: Vec<usize> = (0..train.len()).collect();
    let distributor = cart::fit_indices(&train.records, &route_labels, &all, k, params, seed)?;

    // route the training set through the trained distributor
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, r) in train.records.iter().enumerate() {
        let (g, _) = distributor.predict(&r.values)?;
        routed[g].push(i);
    }

    let true_labels: Vec<usize> = train.records.iter().map(|r| r.label_index).collect();
    let class_counts = train.class_counts();
    let locals: Vec<LocalPredictor> = partition
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, members)| {
            if members.len() == 1 {
                return Ok(LocalPredictor::Singleton(members[0]));
            }
            if routed[g].is_empty() {
                let majority = members
                    .iter()
                    .copied()
                    .max_by_key(|&c| (class_counts[c], std::cmp::Reverse(c)))
                    .unwrap();
                log::warn!(
                    "subproblem {g} received no routed instances; using constant predictor for class {majority}"
                );
                return Ok(LocalPredictor::Constant(majority));
            }
            let tree = cart::fit_indices(
                &train.records,
                &true_labels,
                &routed[g],
                n_classes,
                params,
                derived_seed(seed, g as u64 + 1),
            )?;
            Ok(LocalPredictor::Tree(tree))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScalModel {
        compression_models: Vec::new(),
        partition,
        distributor: Some(distributor),
        locals,
        classes: train.classes.clone(),
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Full training procedure: compression models, fingerprint profile,
/// correlation matrix, partition (fixed k or validation search), then the
/// cascade. Returns the model and the k-search scores (empty for fixed k).
pub fn train(
    train_set: &Dataset,
    k: KChoice,
    params: &TreeParams,
    comp_cfg: &CompressorConfig,
    seed: u64,
) -> Result<(ScalModel, Vec<(usize, f64)>)> {
    if train_set.n_classes() < 2 {
        return Err(Error::InvalidParameter("training needs >= 2 classes".into()));
    }
    let start = Instant::now();
    let models = compressor::train_class_models(train_set, comp_cfg)?;
    let prof = compressor::profile(train_set, &models)?;
    let corr = decomposition::correlation_matrix(&prof)?;
    let (partition, scores) = match k {
        KChoice::Fixed(k) => (decomposition::cluster(&corr, k)?, Vec::new()),
        KChoice::Auto { k_max } => {
            let res = decomposition::select_k(train_set, &prof, &corr, k_max, params, seed)?;
            log::info!("k search chose k={} from scores {:?}", res.chosen_k, res.scores);
            (res.partition, res.scores)
        }
    };
    let mut model = train_with_partition(train_set, partition, params, seed)?;
    model.compression_models = models;
    model.train_seconds = start.elapsed().as_secs_f64();
    Ok((model, scores))
}

/// Ablation: identical pipeline with a uniformly random k-way class
/// partition (every group non-empty) instead of the correlation-derived
/// one. No fingerprints are computed.
pub fn train_pseudo(
    train_set: &Dataset,
    k: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<ScalModel> {
    let n_classes = train_set.n_classes();
    if k < 2 || k > n_classes {
        return Err(Error::InvalidParameter(format!(
            "pseudo partition needs 2 <= k <= {n_classes}, got {k}"
        )));
    }
    let partition = random_partition(n_classes, k, seed);
    train_with_partition(train_set, partition, params, seed)
}

pub fn random_partition(n_classes: usize, k: usize, seed: u64) -> SubproblemPartition {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, 0x9a27));
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, c) in order.into_iter().enumerate() {
        if i < k {
            groups[i].push(c);
        } else {
            groups[rng.gen_range(0..k)].push(c);
        }
    }
    let mut p = SubproblemPartition { groups };
    p.normalize();
    p
}

impl ScalModel {
    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn n_features(&self) -> usize {
        if let Some(d) = &self.distributor {
            return d.n_features;
        }
        match &self.locals[0] {
            LocalPredictor::Tree(t) => t.n_features,
            _ => 0,
        }
    }

    /// Cascaded inference: route with the distributor, then answer with
    /// the routed local predictor. Probabilities live in the full class
    /// space; singleton and constant routes answer with probability 1.
    pub fn infer(&self, x: &[f64]) -> Result<InferOutput> {
        let expected = self.n_features();
        if expected > 0 && x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: x.len(),
            });
        }
        let n_classes = self.n_classes();
        let route = match &self.distributor {
            None => 0,
            Some(d) => d.predict(x)?.0,
        };
        match &self.locals[route] {
            LocalPredictor::Tree(t) => {
                let (class, probs) = t.predict(x)?;
                Ok(InferOutput { class, probs, route })
            }
            LocalPredictor::Singleton(c) | LocalPredictor::Constant(c) => {
                let mut probs = vec![0.0; n_classes];
                probs[*c] = 1.0;
                Ok(InferOutput {
                    class: *c,
                    probs,
                    route,
                })
            }
        }
    }

    /// Sum of component sizes plus the manifest.
    pub fn serialized_bytes(&self) -> u64 {
        let mut total = crate::persist::scal_manifest(self).len() as u64;
        for m in &self.compression_models {
            total += m.dictionary.len() as u64;
        }
        if let Some(d) = &self.distributor {
            total += d.serialized_bytes() as u64;
        }
        for l in &self.locals {
            if let LocalPredictor::Tree(t) = l {
                total += t.serialized_bytes() as u64;
            }
        }
        total
    }

    pub fn n_nodes_total(&self) -> u64 {
        let mut total = 0u64;
        if let Some(d) = &self.distributor {
            total += d.n_nodes as u64;
        }
        for l in &self.locals {
            if let LocalPredictor::Tree(t) = l {
                total += t.n_nodes as u64;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, FeatureVector, SyntheticSpec};

    fn block_corpus(seed: u64) -> Dataset {
        let mut spec = SyntheticSpec::uniform(4, 2, 80, 0.85);
        spec.payload_len = 256;
        generate_synthetic(&spec, seed).unwrap()
    }

    #[test]
    fn k1_fallback_is_identical_to_global_tree() {
        let ds = block_corpus(1);
        let params = TreeParams::default();
        let model =
            train_with_partition(&ds, SubproblemPartition::single_group(4), &params, 5).unwrap();
        let tree = cart::fit_tree(&ds, &params, 5).unwrap();
        assert!(model.distributor.is_none());
        for r in &ds.records {
            let out = model.infer(&r.values).unwrap();
            let (c, p) = tree.predict(&r.values).unwrap();
            assert_eq!(out.class, c);
            assert_eq!(out.probs, p);
            assert_eq!(out.route, 0);
        }
    }

    #[test]
    fn singleton_subproblem_has_no_local_tree() {
        let ds = block_corpus(2);
        let partition = SubproblemPartition {
            groups: vec![vec![0], vec![1, 2, 3]],
        };
        let model = train_with_partition(&ds, partition, &TreeParams::default(), 0).unwrap();
        assert_eq!(model.locals[0], LocalPredictor::Singleton(0));
        assert!(matches!(model.locals[1], LocalPredictor::Tree(_)));
    }

    #[test]
    fn singleton_route_predicts_its_class_with_probability_one() {
        let ds = block_corpus(3);
        let partition = SubproblemPartition {
            groups: vec![vec![0], vec![1, 2, 3]],
        };
        let model = train_with_partition(&ds, partition, &TreeParams::default(), 0).unwrap();
        let mut seen_singleton = false;
        for r in &ds.records {
            let out = model.infer(&r.values).unwrap();
            if out.route == 0 {
                seen_singleton = true;
                assert_eq!(out.class, 0);
                assert_eq!(out.probs[0], 1.0);
            }
        }
        assert!(seen_singleton);
    }

    #[test]
    fn infer_probabilities_sum_to_one_and_route_is_consistent() {
        let ds = block_corpus(4);
        let (model, _) = train(
            &ds,
            KChoice::Fixed(2),
            &TreeParams::default(),
            &CompressorConfig::default(),
            7,
        )
        .unwrap();
        let d = model.distributor.as_ref().unwrap();
        for r in ds.records.iter().take(60) {
            let out = model.infer(&r.values).unwrap();
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(out.route, d.predict(&r.values).unwrap().0);
        }
    }

    #[test]
    fn empty_route_degenerates_to_constant_predictor() {
        // classes 2 and 3 are feature-identical to 0 and 1 but rare, so
        // the distributor routes everything to group 0
        let mk = |v: f64, label: usize| FeatureVector {
            values: vec![v],
            payload_len: 0,
            label_index: label,
        };
        let mut records = Vec::new();
        for _ in 0..4 {
            records.push(mk(0.0, 0));
            records.push(mk(1.0, 1));
        }
        for _ in 0..2 {
            records.push(mk(0.0, 2));
            records.push(mk(1.0, 3));
        }
        let ds = Dataset {
            records,
            classes: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            split_seed: 0,
        };
        let partition = SubproblemPartition {
            groups: vec![vec![0, 1], vec![2, 3]],
        };
        let model = train_with_partition(&ds, partition, &TreeParams::default(), 0).unwrap();
        assert_eq!(model.locals[1], LocalPredictor::Constant(2));
    }

    #[test]
    fn pseudo_partition_is_seeded_and_valid() {
        let p1 = random_partition(6, 3, 11);
        let p2 = random_partition(6, 3, 11);
        assert_eq!(p1, p2);
        assert_eq!(p1.k(), 3);
        let mut all: Vec<usize> = p1.groups.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(p1.groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn pseudo_with_k_equal_classes_is_distributor_only() {
        let ds = block_corpus(5);
        let model = train_pseudo(&ds, 4, &TreeParams::default(), 3).unwrap();
        assert_eq!(model.k(), 4);
        assert!(model
            .locals
            .iter()
            .all(|l| matches!(l, LocalPredictor::Singleton(_))));
        assert!(model.distributor.is_some());
    }

    #[test]
    fn pseudo_rejects_k_out_of_range() {
        let ds = block_corpus(6);
        assert!(train_pseudo(&ds, 1, &TreeParams::default(), 0).is_err());
        assert!(train_pseudo(&ds, 5, &TreeParams::default(), 0).is_err());
    }
}
