//! Per-class compression models and instance fingerprints.
//!
//! One zstd dictionary is trained per class; an instance's fingerprint is
//! the vector of compressed code lengths of its payload under each class
//! model. Correlated classes compress each other well, which is what the
//! decomposition stage measures.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_LEVEL: i32 = 2;
pub const DEFAULT_DICT_SIZE: usize = 16 * 1024;
pub const DEFAULT_MAX_DICT_SAMPLES: usize = 10_000;
/// Minimum per-class corpus for dictionary training.
pub const MIN_DICT_SAMPLES: usize = 8;

#[derive(Debug, Clone)]
pub struct CompressorConfig {
    pub level: i32,
    pub dict_size: usize,
    pub max_dict_samples: usize,
    pub seed: u64,
}

impl Default for CompressorConfig {
    fn default() -> Self {
        CompressorConfig {
            level: DEFAULT_LEVEL,
            dict_size: DEFAULT_DICT_SIZE,
            max_dict_samples: DEFAULT_MAX_DICT_SAMPLES,
            seed: 0,
        }
    }
}

/// A trained dictionary plus fixed-level lossless compression. An empty
/// dictionary means plain compression (fallback for tiny classes).
#[derive(Debug, Clone)]
pub struct ClassCompressionModel {
    pub class_index: usize,
    pub dictionary: Vec<u8>,
    pub level: i32,
}

impl ClassCompressionModel {
    pub fn compressor(&self) -> Result<zstd::bulk::Compressor<'_>> {
        let c = if self.dictionary.is_empty() {
            zstd::bulk::Compressor::new(self.level)
        } else {
            zstd::bulk::Compressor::with_dictionary(self.level, &self.dictionary)
        };
        c.map_err(|e| Error::Compression(e.to_string()))
    }

    /// Compressed size in bytes of `payload` under this model.
    pub fn code_length(&self, payload: &[u8]) -> Result<usize> {
        let mut c = self.compressor()?;
        let out = c
            .compress(payload)
            .map_err(|e| Error::Compression(e.to_string()))?;
        Ok(out.len())
    }
}

/// Vector of per-class code lengths for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub code_lengths: Vec<f64>,
}

/// Code lengths for every training instance; rows parallel dataset order,
/// columns parallel class order.
#[derive(Debug, Clone)]
pub struct FingerprintProfile {
    pub rows: Vec<Vec<f64>>,
    pub class_of_row: Vec<usize>,
}

impl FingerprintProfile {
    pub fn n_classes(&self) -> usize {
        self.rows.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Column `c` over all rows.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }
}

/// Deterministic cap: the first `cap` positions of a seeded shuffle.
fn sample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(cap);
        idx.sort_unstable();
    }
    idx
}

fn train_dictionary(payloads: &[Vec<u8>], cfg: &CompressorConfig, class_index: usize) -> Vec<u8> {
    if payloads.len() < MIN_DICT_SAMPLES {
        log::warn!(
            "class {class_index}: only {} payload samples (< {MIN_DICT_SAMPLES}); \
             falling back to an empty dictionary",
            payloads.len()
        );
        return Vec::new();
    }
    let mut buf = Vec::new();
    let mut sizes = Vec::new();
    for p in payloads {
        if !p.is_empty() {
            buf.extend_from_slice(p);
            sizes.push(p.len());
        }
    }
    if sizes.len() < MIN_DICT_SAMPLES {
        log::warn!("class {class_index}: too few non-empty payloads; empty dictionary");
        return Vec::new();
    }
    match zstd::dict::from_continuous(&buf, &sizes, cfg.dict_size) {
        Ok(d) => d,
        Err(e) => {
            // Small-but-legitimate corpora can fail ZDICT; a raw-content
            // dictionary keeps per-class specialization.
            log::warn!("class {class_index}: dictionary training failed ({e}); using raw-content dictionary");
            buf.truncate(cfg.dict_size);
            buf
        }
    }
}

/// Train one compression model per class, ordered by class index.
pub fn train_class_models(train: &Dataset, cfg: &CompressorConfig) -> Result<Vec<ClassCompressionModel>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("cannot train compression models".into()));
    }
    let mut by_class: Vec<Vec<Vec<u8>>> = vec![Vec::new(); train.n_classes()];
    for r in &train.records {
        by_class[r.label_index].push(r.payload());
    }
    let models: Vec<ClassCompressionModel> = by_class
        .into_par_iter()
        .enumerate()
        .map(|(ci, payloads)| {
            let idx = sample_indices(
                payloads.len(),
                cfg.max_dict_samples,
                cfg.seed ^ (0xd1c7 + ci as u64),
            );
            let capped: Vec<Vec<u8>> = idx.into_iter().map(|i| payloads[i].clone()).collect();
            ClassCompressionModel {
                class_index: ci,
                dictionary: train_dictionary(&capped, cfg, ci),
                level: cfg.level,
            }
        })
        .collect();
    Ok(models)
}

/// Fingerprint of one payload under every class model.
pub fn fingerprint(payload: &[u8], models: &[ClassCompressionModel]) -> Result<Fingerprint> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("no compression models".into()));
    }
    let code_lengths = models
        .iter()
        .map(|m| m.code_length(payload).map(|n| n as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Fingerprint { code_lengths })
}

/// Fingerprint every training payload; rows parallel to dataset order.
pub fn profile(train: &Dataset, models: &[ClassCompressionModel]) -> Result<FingerprintProfile> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("no compression models".into()));
    }
    let payloads: Vec<Vec<u8>> = train.records.iter().map(|r| r.payload()).collect();
    // One compressor per class, reused across all payloads.
    let columns: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| {
            let mut c = m.compressor()?;
            payloads
                .iter()
                .map(|p| {
                    c.compress(p)
                        .map(|out| out.len() as f64)
                        .map_err(|e| Error::Compression(e.to_string()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let rows = (0..payloads.len())
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();
    Ok(FingerprintProfile {
        rows,
        class_of_row: train.records.iter().map(|r| r.label_index).collect(),
    })
}

/// Serialize models to `dir`: one dictionary file per class plus a
/// manifest carrying class order, level, sample cap, and seed.
pub fn save_models(
    models: &[ClassCompressionModel],
    classes: &[String],
    cfg: &CompressorConfig,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    manifest.push_str(&format!("classes={}\n", classes.join(",")));
    manifest.push_str(&format!("level={}\n", cfg.level));
    manifest.push_str(&format!("dict_size={}\n", cfg.dict_size));
    manifest.push_str(&format!("max_dict_samples={}\n", cfg.max_dict_samples));
    manifest.push_str(&format!("seed={}\n", cfg.seed));
    let mpath = dir.join("compressor_manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    for m in models {
        let p = dir.join(format!("dict_{}.bin", m.class_index));
        std::fs::write(&p, &m.dictionary).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn load_models(dir: impl AsRef<Path>) -> Result<(Vec<ClassCompressionModel>, Vec<String>)> {
    let dir = dir.as_ref();
    let mpath = dir.join("compressor_manifest.txt");
    let manifest = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut classes: Vec<String> = Vec::new();
    let mut level = DEFAULT_LEVEL;
    for line in manifest.lines() {
        if let Some(v) = line.strip_prefix("classes=") {
            classes = v.split(',').map(|s| s.to_string()).collect();
        } else if let Some(v) = line.strip_prefix("level=") {
            level = v.parse().map_err(|_| Error::ModelFormat {
                path: mpath.clone(),
                reason: format!("bad level {v:?}"),
            })?;
        }
    }
    if classes.is_empty() {
        return Err(Error::ModelFormat {
            path: mpath,
            reason: "manifest missing classes".into(),
        });
    }
    let models = (0..classes.len())
        .map(|ci| {
            let p = dir.join(format!("dict_{ci}.bin"));
            let dictionary = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok(ClassCompressionModel {
                class_index: ci,
                dictionary,
                level,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((models, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn corpus() -> Dataset {
        let spec = SyntheticSpec::uniform(3, 3, 60, 0.0);
        generate_synthetic(&spec, 42).unwrap()
    }

    #[test]
    fn one_model_per_class_in_order() {
        let ds = corpus();
        let models = train_class_models(&ds, &CompressorConfig::default()).unwrap();
        assert_eq!(models.len(), 3);
        for (i, m) in models.iter().enumerate() {
            assert_eq!(m.class_index, i);
            assert_eq!(m.level, 2);
            assert!(!m.dictionary.is_empty());
        }
    }

    #[test]
    fn tiny_class_falls_back_to_empty_dictionary() {
        let ds = corpus();
        // keep only 2 instances of class 2
        let keep: Vec<usize> = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label_index < 2)
            .map(|(i, _)| i)
            .chain(
                ds.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.label_index == 2)
                    .map(|(i, _)| i)
                    .take(2),
            )
            .collect();
        let small = ds.subset(&keep);
        let models = train_class_models(&small, &CompressorConfig::default()).unwrap();
        assert!(models[2].dictionary.is_empty());
        assert!(!models[0].dictionary.is_empty());
        // empty dictionary still compresses
        let n = models[2].code_length(&small.records[0].payload()).unwrap();
        assert!(n > 0);
    }

    #[test]
    fn fingerprint_is_deterministic_with_right_dimension() {
        let ds = corpus();
        let models = train_class_models(&ds, &CompressorConfig::default()).unwrap();
        let p = ds.records[0].payload();
        let f1 = fingerprint(&p, &models).unwrap();
        let f2 = fingerprint(&p, &models).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.code_lengths.len(), 3);
        assert!(f1.code_lengths.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn profile_matches_stacked_fingerprints() {
        let ds = corpus();
        let models = train_class_models(&ds, &CompressorConfig::default()).unwrap();
        let prof = profile(&ds, &models).unwrap();
        assert_eq!(prof.rows.len(), ds.len());
        assert_eq!(prof.n_classes(), 3);
        for i in [0usize, 17, 119] {
            let f = fingerprint(&ds.records[i].payload(), &models).unwrap();
            assert_eq!(prof.rows[i], f.code_lengths);
            assert_eq!(prof.class_of_row[i], ds.records[i].label_index);
        }
    }

    #[test]
    fn own_model_beats_plain_compression_on_identical_payloads() {
        // class of identical payloads: own-dictionary code length must be
        // below plain level-2 compression of the same payload
        let ds = corpus();
        let mut uniform = ds.clone();
        let template = ds.records[0].clone();
        for r in uniform.records.iter_mut().filter(|r| r.label_index == 0) {
            let li = r.label_index;
            *r = template.clone();
            r.label_index = li;
        }
        let models = train_class_models(&uniform, &CompressorConfig::default()).unwrap();
        let payload = template.payload();
        let own = models[0].code_length(&payload).unwrap();
        let plain = zstd::bulk::compress(&payload, 2).unwrap().len();
        assert!(own < plain, "own={own} plain={plain}");
    }

    #[test]
    fn row_shuffle_permutes_profile_rows_identically() {
        let ds = corpus();
        let models = train_class_models(&ds, &CompressorConfig::default()).unwrap();
        let prof = profile(&ds, &models).unwrap();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let shuffled = ds.subset(&perm);
        let prof2 = profile(&shuffled, &models).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(prof2.rows[i], prof.rows[src]);
        }
    }

    #[test]
    fn models_round_trip_through_directory() {
        let ds = corpus();
        let cfg = CompressorConfig::default();
        let models = train_class_models(&ds, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_models(&models, &ds.classes, &cfg, dir.path()).unwrap();
        let (back, classes) = load_models(dir.path()).unwrap();
        assert_eq!(classes, ds.classes);
        for (a, b) in models.iter().zip(back.iter()) {
            assert_eq!(a.dictionary, b.dictionary);
            assert_eq!(a.level, b.level);
        }
    }
}
