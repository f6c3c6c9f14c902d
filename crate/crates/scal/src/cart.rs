//! From-scratch CART decision trees with Gini impurity, cost-complexity
//! pruning, and a bagged random-forest baseline.
//!
//! Used for the instance distributor, the per-subproblem local
//! classifiers, the global single-tree baseline, and the forest cost
//! baseline. All tie-breaks (argmax, equal-gain splits, forest votes) go
//! to the lowest index, so fitting and prediction are fully
//! deterministic.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, FeatureVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub min_gain: f64,
    /// Features considered per split; None means all.
    pub feature_subsample: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            min_gain: 1e-7,
            feature_subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        /// value <= threshold goes left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        class_counts: Vec<u64>,
        predicted_class: usize,
    },
}

impl TreeNode {
    fn count_nodes(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.count_nodes() + right.count_nodes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub root: TreeNode,
    pub n_nodes: usize,
    pub n_classes: usize,
    pub n_features: usize,
    /// Wall-clock fit time; never serialized.
    pub train_seconds: f64,
}

fn argmax_lowest(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive Gini split search over midpoints of consecutive distinct
/// sorted values. Returns (feature, threshold, gain); ties keep the
/// lowest feature index, then the lowest threshold.
fn best_split(
    records: &[FeatureVector],
    labels: &[usize],
    indices: &[usize],
    parent_counts: &[u64],
    params: &TreeParams,
    feature_pool: &[usize],
) -> Option<(usize, f64, f64)> {
    let n = indices.len();
    let nf = n as f64;
    let parent_sum_sq: u64 = parent_counts.iter().map(|&c| c * c).sum();
    let parent_score = parent_sum_sq as f64 / nf;
    let mut best: Option<(usize, f64, f64)> = None;

    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left_counts: Vec<u64> = vec![0; parent_counts.len()];
    for &f in feature_pool {
        pairs.clear();
        for &i in indices {
            pairs.push((records[i].values[f], labels[i]));
        }
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        left_counts.iter_mut().for_each(|c| *c = 0);
        let mut sum_sq_left: u64 = 0;
        let mut sum_sq_right: u64 = parent_sum_sq;
        for i in 0..n - 1 {
            let c = pairs[i].1;
            sum_sq_left += 2 * left_counts[c] + 1;
            left_counts[c] += 1;
            sum_sq_right -= 2 * (parent_counts[c] - left_counts[c]) + 1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < params.min_leaf || n_right < params.min_leaf {
                continue;
            }
            let score = sum_sq_left as f64 / n_left as f64 + sum_sq_right as f64 / n_right as f64;
            let gain = (score - parent_score) / nf;
            let threshold = (pairs[i].0 + pairs[i + 1].0) / 2.0;
            if best.is_none_or(|(_, _, bg)| gain > bg) {
                best = Some((f, threshold, gain));
            }
        }
    }
    match best {
        Some((_, _, g)) if g >= params.min_gain => best,
        _ => None,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    records: &[FeatureVector],
    labels: &[usize],
    indices: &[usize],
    n_classes: usize,
    n_features: usize,
    params: &TreeParams,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let mut counts = vec![0u64; n_classes];
    for &i in indices {
        counts[labels[i]] += 1;
    }
    let leaf = |counts: Vec<u64>| {
        let predicted_class = argmax_lowest(&counts);
        TreeNode::Leaf {
            class_counts: counts,
            predicted_class,
        }
    };
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let depth_stop = params.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_stop || indices.len() < 2 * params.min_leaf {
        return leaf(counts);
    }
    let pool: Vec<usize> = match params.feature_subsample {
        Some(m) if m < n_features => {
            let mut sel = rand::seq::index::sample(rng, n_features, m).into_vec();
            sel.sort_unstable();
            sel
        }
        _ => (0..n_features).collect(),
    };
    let Some((feature, threshold, _)) = best_split(records, labels, indices, &counts, params, &pool)
    else {
        return leaf(counts);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| records[i].values[feature] <= threshold);
    let left = build_node(records, labels, &left_idx, n_classes, n_features, params, depth + 1, rng);
    let right = build_node(records, labels, &right_idx, n_classes, n_features, params, depth + 1, rng);
    TreeNode::Internal {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Fit a CART tree on an index view with explicit labels (which may be a
/// relabeling of the dataset, e.g. subproblem ids for the distributor).
pub fn fit_indices(
    records: &[FeatureVector],
    labels: &[usize],
    indices: &[usize],
    n_classes: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<TreeModel> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset("cannot fit tree on no instances".into()));
    }
    if n_classes == 0 {
        return Err(Error::InvalidParameter("n_classes must be >= 1".into()));
    }
    let start = Instant::now();
    let n_features = records[indices[0]].values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = build_node(records, labels, indices, n_classes, n_features, params, 0, &mut rng);
    let n_nodes = root.count_nodes();
    Ok(TreeModel {
        root,
        n_nodes,
        n_classes,
        n_features,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn fit_tree(ds: &Dataset, params: &TreeParams, seed: u64) -> Result<TreeModel> {
    let labels: Vec<usize> = ds.records.iter().map(|r| r.label_index).collect();
    let indices: Vec<usize> = (0..ds.records.len()).collect();
    fit_indices(&ds.records, &labels, &indices, ds.n_classes(), params, seed)
}

impl TreeModel {
    /// Hard prediction plus leaf class-frequency probabilities.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
                TreeNode::Leaf {
                    class_counts,
                    predicted_class,
                } => {
                    let total: u64 = class_counts.iter().sum();
                    let probs = class_counts
                        .iter()
                        .map(|&c| c as f64 / total as f64)
                        .collect();
                    return Ok((*predicted_class, probs));
                }
            }
        }
    }

    pub fn accuracy(&self, records: &[FeatureVector], labels: &[usize]) -> Result<f64> {
        let mut hit = 0usize;
        for (r, &y) in records.iter().zip(labels.iter()) {
            if self.predict(&r.values)?.0 == y {
                hit += 1;
            }
        }
        Ok(hit as f64 / records.len() as f64)
    }

    pub fn serialized_bytes(&self) -> usize {
        encode_tree(self).len()
    }
}

// ---------------------------------------------------------------------
// cost-complexity pruning

#[derive(Clone)]
struct FlatNode {
    feature: i64, // -1 for leaf
    threshold: f64,
    left: usize,
    right: usize,
    counts: Vec<u64>,
}

fn flatten(node: &TreeNode, out: &mut Vec<FlatNode>) -> usize {
    let id = out.len();
    match node {
        TreeNode::Leaf { class_counts, .. } => {
            out.push(FlatNode {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
                counts: class_counts.clone(),
            });
            id
        }
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(FlatNode {
                feature: *feature as i64,
                threshold: *threshold,
                left: 0,
                right: 0,
                counts: Vec::new(),
            });
            let l = flatten(left, out);
            let r = flatten(right, out);
            out[id].left = l;
            out[id].right = r;
            let counts: Vec<u64> = out[l]
                .counts
                .iter()
                .zip(out[r].counts.iter())
                .map(|(&a, &b)| a + b)
                .collect();
            out[id].counts = counts;
            id
        }
    }
}

fn unflatten(arena: &[FlatNode], id: usize) -> TreeNode {
    let n = &arena[id];
    if n.feature < 0 {
        TreeNode::Leaf {
            class_counts: n.counts.clone(),
            predicted_class: argmax_lowest(&n.counts),
        }
    } else {
        TreeNode::Internal {
            feature: n.feature as usize,
            threshold: n.threshold,
            left: Box::new(unflatten(arena, n.left)),
            right: Box::new(unflatten(arena, n.right)),
        }
    }
}

/// (resubstitution errors as a leaf, subtree errors, subtree leaves)
fn subtree_stats(arena: &[FlatNode], id: usize) -> (u64, u64, usize) {
    let n = &arena[id];
    let self_err = n.counts.iter().sum::<u64>() - n.counts[argmax_lowest(&n.counts)];
    if n.feature < 0 {
        (self_err, self_err, 1)
    } else {
        let (_, le, ll) = subtree_stats(arena, n.left);
        let (_, re, rl) = subtree_stats(arena, n.right);
        (self_err, le + re, ll + rl)
    }
}

fn collect_internal(arena: &[FlatNode], id: usize, out: &mut Vec<usize>) {
    if arena[id].feature >= 0 {
        out.push(id);
        collect_internal(arena, arena[id].left, out);
        collect_internal(arena, arena[id].right, out);
    }
}

/// Weakest-link cost-complexity pruning against a holdout accuracy
/// budget: among the pruning sequence's subtrees whose holdout accuracy
/// stays within `max_acc_loss` of the unpruned tree, return the one with
/// the fewest nodes.
pub fn prune(
    model: &TreeModel,
    holdout: &[FeatureVector],
    holdout_labels: &[usize],
    max_acc_loss: f64,
) -> Result<TreeModel> {
    if holdout.is_empty() {
        return Err(Error::EmptyDataset("pruning needs a non-empty holdout".into()));
    }
    if max_acc_loss < 0.0 {
        return Err(Error::InvalidParameter("max_acc_loss must be >= 0".into()));
    }
    let base_acc = model.accuracy(holdout, holdout_labels)?;
    let mut arena = Vec::new();
    flatten(&model.root, &mut arena);

    let rebuild = |arena: &[FlatNode]| -> TreeModel {
        let root = unflatten(arena, 0);
        let n_nodes = root.count_nodes();
        TreeModel {
            root,
            n_nodes,
            n_classes: model.n_classes,
            n_features: model.n_features,
            train_seconds: 0.0,
        }
    };

    let mut best = model.clone();
    loop {
        let mut internal = Vec::new();
        collect_internal(&arena, 0, &mut internal);
        if internal.is_empty() {
            break;
        }
        // weakest link: minimal per-leaf gain from keeping the subtree;
        // ties collapse the earliest node in preorder
        let mut weakest = internal[0];
        let mut weakest_g = f64::INFINITY;
        for &id in &internal {
            let (self_err, sub_err, leaves) = subtree_stats(&arena, id);
            let g = (self_err as f64 - sub_err as f64) / (leaves as f64 - 1.0);
            if g < weakest_g {
                weakest_g = g;
                weakest = id;
            }
        }
        arena[weakest].feature = -1;
        let candidate = rebuild(&arena);
        let acc = candidate.accuracy(holdout, holdout_labels)?;
        if acc >= base_acc - max_acc_loss && candidate.n_nodes < best.n_nodes {
            best = candidate;
        }
    }
    Ok(best)
}

/// Dataset convenience wrapper for `prune`.
pub fn prune_on(model: &TreeModel, holdout: &Dataset, max_acc_loss: f64) -> Result<TreeModel> {
    let labels: Vec<usize> = holdout.records.iter().map(|r| r.label_index).collect();
    prune(model, &holdout.records, &labels, max_acc_loss)
}

// ---------------------------------------------------------------------
// bagged forest baseline

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub n_estimators: usize,
    pub bootstrap_seed: u64,
    pub train_seconds: f64,
}

/// Bootstrap-sampled trees with sqrt-feature subsampling at each split.
pub fn fit_forest(
    ds: &Dataset,
    n_estimators: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<ForestModel> {
    if n_estimators == 0 {
        return Err(Error::InvalidParameter("n_estimators must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot fit forest".into()));
    }
    let start = Instant::now();
    let labels: Vec<usize> = ds.records.iter().map(|r| r.label_index).collect();
    let n = ds.records.len();
    let d = ds.records[0].values.len();
    let mut tree_params = params.clone();
    if tree_params.feature_subsample.is_none() {
        tree_params.feature_subsample = Some((d as f64).sqrt().ceil() as usize);
    }
    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let indices: Vec<usize> = (0..n)
                .map(|_| rand::Rng::gen_range(&mut rng, 0..n))
                .collect();
            fit_indices(&ds.records, &labels, &indices, ds.n_classes(), &tree_params, tree_seed)
        })
        .collect::<Result<Vec<TreeModel>>>()?;
    Ok(ForestModel {
        trees,
        n_estimators,
        bootstrap_seed: seed,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

impl ForestModel {
    /// Plurality vote (lowest class index on ties); probabilities are the
    /// mean of per-tree leaf distributions.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let n_classes = self.trees[0].n_classes;
        let mut votes = vec![0u64; n_classes];
        let mut probs = vec![0.0; n_classes];
        for t in &self.trees {
            let (c, p) = t.predict(x)?;
            votes[c] += 1;
            for (acc, v) in probs.iter_mut().zip(p.iter()) {
                *acc += v;
            }
        }
        for p in probs.iter_mut() {
            *p /= self.trees.len() as f64;
        }
        Ok((argmax_lowest(&votes), probs))
    }

    pub fn serialized_bytes(&self) -> usize {
        encode_forest(self).len()
    }
}

// ---------------------------------------------------------------------
// binary serialization

pub const TREE_MAGIC: &[u8; 9] = b"SCALTREE1";
pub const FOREST_MAGIC: &[u8; 9] = b"SCALFRST1";

fn encode_node(node: &TreeNode, out: &mut Vec<u8>) {
    match node {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(1);
            out.extend_from_slice(&(*feature as u32).to_le_bytes());
            out.extend_from_slice(&threshold.to_le_bytes());
            encode_node(left, out);
            encode_node(right, out);
        }
        TreeNode::Leaf { class_counts, .. } => {
            out.push(0);
            for &c in class_counts {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
}

pub fn encode_tree(model: &TreeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TREE_MAGIC);
    out.extend_from_slice(&(model.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.n_features as u32).to_le_bytes());
    out.extend_from_slice(&(model.n_nodes as u32).to_le_bytes());
    encode_node(&model.root, &mut out);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: std::path::PathBuf,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelFormat {
                path: self.path.clone(),
                reason: "truncated model file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_node(cur: &mut Cursor, n_classes: usize) -> Result<TreeNode> {
    match cur.u8()? {
        1 => {
            let feature = cur.u32()? as usize;
            let threshold = cur.f64()?;
            let left = decode_node(cur, n_classes)?;
            let right = decode_node(cur, n_classes)?;
            Ok(TreeNode::Internal {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        0 => {
            let mut class_counts = Vec::with_capacity(n_classes);
            for _ in 0..n_classes {
                class_counts.push(cur.u64()?);
            }
            let predicted_class = argmax_lowest(&class_counts);
            Ok(TreeNode::Leaf {
                class_counts,
                predicted_class,
            })
        }
        tag => Err(Error::ModelFormat {
            path: cur.path.clone(),
            reason: format!("unknown node tag {tag}"),
        }),
    }
}

pub fn decode_tree(buf: &[u8], path: impl AsRef<Path>) -> Result<TreeModel> {
    let path = path.as_ref().to_path_buf();
    let mut cur = Cursor { buf, pos: 0, path: path.clone() };
    if cur.take(9)? != TREE_MAGIC {
        return Err(Error::ModelFormat {
            path,
            reason: "bad magic, expected SCALTREE1".into(),
        });
    }
    let n_classes = cur.u32()? as usize;
    let n_features = cur.u32()? as usize;
    let n_nodes = cur.u32()? as usize;
    let root = decode_node(&mut cur, n_classes)?;
    let counted = root.count_nodes();
    if counted != n_nodes {
        return Err(Error::ModelFormat {
            path,
            reason: format!("node count header {n_nodes} != actual {counted}"),
        });
    }
    Ok(TreeModel {
        root,
        n_nodes,
        n_classes,
        n_features,
        train_seconds: 0.0,
    })
}

pub fn encode_forest(model: &ForestModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FOREST_MAGIC);
    out.extend_from_slice(&(model.trees.len() as u32).to_le_bytes());
    out.extend_from_slice(&model.bootstrap_seed.to_le_bytes());
    for t in &model.trees {
        let blob = encode_tree(t);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    out
}

pub fn decode_forest(buf: &[u8], path: impl AsRef<Path>) -> Result<ForestModel> {
    let path = path.as_ref().to_path_buf();
    let mut cur = Cursor { buf, pos: 0, path: path.clone() };
    if cur.take(9)? != FOREST_MAGIC {
        return Err(Error::ModelFormat {
            path,
            reason: "bad magic, expected SCALFRST1".into(),
        });
    }
    let n_trees = cur.u32()? as usize;
    let bootstrap_seed = cur.u64()?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let len = cur.u64()? as usize;
        let blob = cur.take(len)?;
        trees.push(decode_tree(blob, &path)?);
    }
    Ok(ForestModel {
        n_estimators: trees.len(),
        trees,
        bootstrap_seed,
        train_seconds: 0.0,
    })
}

pub fn save_tree(model: &TreeModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), encode_tree(model)).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<TreeModel> {
    let buf = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_tree(&buf, path)
}

pub fn save_forest(model: &ForestModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), encode_forest(model)).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<ForestModel> {
    let buf = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_forest(&buf, path)
}

/// Public entry to the incremental split scan over all features, for
/// oracle comparisons against [`best_split_brute_force`].
pub fn best_split_exhaustive(
    records: &[FeatureVector],
    labels: &[usize],
    indices: &[usize],
    n_classes: usize,
    params: &TreeParams,
) -> Option<(usize, f64, f64)> {
    let mut parent_counts = vec![0u64; n_classes];
    for &i in indices {
        parent_counts[labels[i]] += 1;
    }
    let pool: Vec<usize> = (0..records[indices[0]].values.len()).collect();
    best_split(records, labels, indices, &parent_counts, params, &pool)
}

/// Brute-force split evaluator used as the oracle for the fast scan: it
/// enumerates every (feature, midpoint) candidate, partitions the data,
/// and recomputes the Gini gain from scratch with the same tie rule.
pub fn best_split_brute_force(
    records: &[FeatureVector],
    labels: &[usize],
    indices: &[usize],
    n_classes: usize,
    params: &TreeParams,
) -> Option<(usize, f64, f64)> {
    let n = indices.len();
    let nf = n as f64;
    let n_features = records[indices[0]].values.len();
    let mut parent_counts = vec![0u64; n_classes];
    for &i in indices {
        parent_counts[labels[i]] += 1;
    }
    let parent_score = parent_counts.iter().map(|&c| c * c).sum::<u64>() as f64 / nf;
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..n_features {
        let mut vals: Vec<f64> = indices.iter().map(|&i| records[i].values[f]).collect();
        vals.sort_unstable_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let threshold = (w[0] + w[1]) / 2.0;
            let mut lc = vec![0u64; n_classes];
            let mut rc = vec![0u64; n_classes];
            for &i in indices {
                if records[i].values[f] <= threshold {
                    lc[labels[i]] += 1;
                } else {
                    rc[labels[i]] += 1;
                }
            }
            let nl: u64 = lc.iter().sum();
            let nr: u64 = rc.iter().sum();
            if (nl as usize) < params.min_leaf || (nr as usize) < params.min_leaf {
                continue;
            }
            let score = lc.iter().map(|&c| c * c).sum::<u64>() as f64 / nl as f64
                + rc.iter().map(|&c| c * c).sum::<u64>() as f64 / nr as f64;
            let gain = (score - parent_score) / nf;
            if best.is_none_or(|(_, _, bg)| gain > bg) {
                best = Some((f, threshold, gain));
            }
        }
    }
    match best {
        Some((_, _, g)) if g >= params.min_gain => best,
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(values: Vec<f64>, label: usize) -> FeatureVector {
        FeatureVector {
            values,
            payload_len: 0,
            label_index: label,
        }
    }

    fn fit_plain(records: &[FeatureVector], n_classes: usize, params: &TreeParams) -> TreeModel {
        let labels: Vec<usize> = records.iter().map(|r| r.label_index).collect();
        let indices: Vec<usize> = (0..records.len()).collect();
        fit_indices(records, &labels, &indices, n_classes, params, 0).unwrap()
    }

    #[test]
    fn single_class_yields_single_leaf() {
        let recs = vec![fv(vec![1.0, 2.0], 0), fv(vec![3.0, 4.0], 0)];
        let t = fit_plain(&recs, 1, &TreeParams::default());
        assert_eq!(t.n_nodes, 1);
        assert_eq!(t.predict(&[0.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn xor_fits_perfectly_with_zero_min_gain() {
        // root split has zero gain on XOR, so min_gain must be 0 here
        let recs = vec![
            fv(vec![0.0, 0.0], 0),
            fv(vec![0.0, 1.0], 1),
            fv(vec![1.0, 0.0], 1),
            fv(vec![1.0, 1.0], 0),
        ];
        let params = TreeParams {
            min_gain: 0.0,
            ..TreeParams::default()
        };
        let t = fit_plain(&recs, 2, &params);
        for r in &recs {
            assert_eq!(t.predict(&r.values).unwrap().0, r.label_index);
        }
        assert!(t.n_nodes >= 5, "depth >= 2 needs at least 5 nodes, got {}", t.n_nodes);
    }

    #[test]
    fn separable_1d_splits_at_boundary_midpoint() {
        let recs = vec![
            fv(vec![0.1], 0),
            fv(vec![0.2], 0),
            fv(vec![0.3], 0),
            fv(vec![0.8], 1),
            fv(vec![0.9], 1),
        ];
        let t = fit_plain(&recs, 2, &TreeParams::default());
        match &t.root {
            TreeNode::Internal { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!((*threshold - 0.55).abs() < 1e-12, "threshold={threshold}");
            }
            _ => panic!("expected internal root"),
        }
    }

    #[test]
    fn leaf_counts_become_frequencies() {
        let t = TreeModel {
            root: TreeNode::Leaf {
                class_counts: vec![3, 1],
                predicted_class: 0,
            },
            n_nodes: 1,
            n_classes: 2,
            n_features: 1,
            train_seconds: 0.0,
        };
        let (c, p) = t.predict(&[0.0]).unwrap();
        assert_eq!(c, 0);
        assert_eq!(p, vec![0.75, 0.25]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let recs = vec![fv(vec![0.0, 0.0], 0), fv(vec![1.0, 1.0], 1)];
        let t = fit_plain(&recs, 2, &TreeParams::default());
        assert!(matches!(
            t.predict(&[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn training_accuracy_nondecreasing_in_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<FeatureVector> = (0..60)
            .map(|_| {
                let x: f64 = rng.gen();
                let y: f64 = rng.gen();
                let label = ((x > 0.5) as usize + (y > 0.3) as usize) % 2;
                fv(vec![x, y], label)
            })
            .collect();
        let labels: Vec<usize> = recs.iter().map(|r| r.label_index).collect();
        let mut prev = 0.0;
        for depth in 1..=6 {
            let params = TreeParams {
                max_depth: Some(depth),
                min_gain: 0.0,
                ..TreeParams::default()
            };
            let t = fit_plain(&recs, 2, &params);
            let acc = t.accuracy(&recs, &labels).unwrap();
            assert!(acc >= prev - 1e-12, "depth {depth}: {acc} < {prev}");
            prev = acc;
        }
    }

    #[test]
    fn prune_with_vacuous_budget_returns_majority_leaf() {
        let recs = vec![
            fv(vec![0.0], 0),
            fv(vec![1.0], 0),
            fv(vec![2.0], 1),
        ];
        let t = fit_plain(&recs, 2, &TreeParams::default());
        assert!(t.n_nodes > 1);
        let labels: Vec<usize> = recs.iter().map(|r| r.label_index).collect();
        let p = prune(&t, &recs, &labels, 1.0).unwrap();
        assert_eq!(p.n_nodes, 1);
        assert_eq!(p.predict(&[5.0]).unwrap().0, 0); // majority class
    }

    #[test]
    fn prune_single_leaf_is_fixpoint() {
        let recs = vec![fv(vec![0.0], 0), fv(vec![1.0], 0)];
        let t = fit_plain(&recs, 1, &TreeParams::default());
        let labels = vec![0, 0];
        let p = prune(&t, &recs, &labels, 0.0).unwrap();
        assert_eq!(p, t);
    }

    #[test]
    fn prune_removes_overfit_split_at_zero_budget() {
        // feature 0 separates the classes; two mislabeled points force
        // an extra split on the noise feature 1 that a clean holdout
        // proves useless
        let mut recs = Vec::new();
        for i in 0..6 {
            recs.push(fv(vec![0.1 + 0.05 * i as f64, 0.1 + 0.04 * i as f64], 0));
            recs.push(fv(vec![0.6 + 0.05 * i as f64, 0.1 + 0.04 * i as f64], 1));
        }
        recs.push(fv(vec![0.12, 0.90], 1)); // label noise
        recs.push(fv(vec![0.28, 0.95], 1));
        let params = TreeParams {
            min_gain: 0.0,
            ..TreeParams::default()
        };
        let overgrown = fit_plain(&recs, 2, &params);
        assert!(overgrown.n_nodes >= 5);

        let holdout = &recs[..12]; // the clean points only
        let labels: Vec<usize> = holdout.iter().map(|r| r.label_index).collect();
        let base = overgrown.accuracy(holdout, &labels).unwrap();
        let pruned = prune(&overgrown, holdout, &labels, 0.0).unwrap();
        assert!(pruned.n_nodes < overgrown.n_nodes);
        assert!(pruned.accuracy(holdout, &labels).unwrap() >= base);
    }

    #[test]
    fn forest_of_one_votes_like_its_tree() {
        let spec = crate::dataset::SyntheticSpec::uniform(2, 2, 30, 0.0);
        let ds = crate::dataset::generate_synthetic(&spec, 3).unwrap();
        let f = fit_forest(&ds, 1, &TreeParams::default(), 9).unwrap();
        for r in ds.records.iter().take(20) {
            assert_eq!(
                f.predict(&r.values).unwrap().0,
                f.trees[0].predict(&r.values).unwrap().0
            );
        }
    }

    #[test]
    fn forest_is_deterministic_under_seed() {
        let spec = crate::dataset::SyntheticSpec::uniform(2, 2, 30, 0.0);
        let ds = crate::dataset::generate_synthetic(&spec, 3).unwrap();
        let a = fit_forest(&ds, 5, &TreeParams::default(), 11).unwrap();
        let b = fit_forest(&ds, 5, &TreeParams::default(), 11).unwrap();
        assert_eq!(encode_forest(&a), encode_forest(&b));
    }

    #[test]
    fn split_finder_matches_brute_force_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let n = rng.gen_range(4..=50);
            let d = rng.gen_range(1..=8);
            let n_classes = rng.gen_range(2..=3);
            let recs: Vec<FeatureVector> = (0..n)
                .map(|_| {
                    fv(
                        (0..d).map(|_| (rng.gen_range(0..6) as f64) / 2.0).collect(),
                        rng.gen_range(0..n_classes),
                    )
                })
                .collect();
            let labels: Vec<usize> = recs.iter().map(|r| r.label_index).collect();
            let indices: Vec<usize> = (0..n).collect();
            let params = TreeParams::default();
            let mut counts = vec![0u64; n_classes];
            for &l in &labels {
                counts[l] += 1;
            }
            let pool: Vec<usize> = (0..d).collect();
            let fast = best_split(&recs, &labels, &indices, &counts, &params, &pool);
            let brute = best_split_brute_force(&recs, &labels, &indices, n_classes, &params);
            match (fast, brute) {
                (None, None) => {}
                (Some((ff, ft, fg)), Some((bf, bt, bg))) => {
                    assert_eq!(ff, bf);
                    assert_eq!(ft, bt);
                    assert!((fg - bg).abs() < 1e-12);
                }
                other => panic!("split finder disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn tree_serialization_round_trips() {
        let spec = crate::dataset::SyntheticSpec::uniform(2, 2, 30, 0.0);
        let ds = crate::dataset::generate_synthetic(&spec, 3).unwrap();
        let t = fit_tree(&ds, &TreeParams::default(), 0).unwrap();
        let blob = encode_tree(&t);
        assert_eq!(&blob[..9], TREE_MAGIC);
        assert_eq!(t.serialized_bytes(), blob.len());
        let back = decode_tree(&blob, "mem").unwrap();
        assert_eq!(back.root, t.root);
        assert_eq!(back.n_nodes, t.n_nodes);
    }
}
