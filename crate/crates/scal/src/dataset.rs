//! Labeled payload datasets: CSV ingestion, fixed-width feature vectors,
//! stratified splits, and synthetic corpora with controllable class
//! correlation.
//!
//! Each instance is a raw application payload (up to 1500 bytes,
//! zero-padded) plus four packet-header features: time to live, total
//! length, protocol, and duration. Source/destination addresses and ports
//! are deliberately absent from the schema.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Payload slots in the feature vector.
pub const PAYLOAD_WIDTH: usize = 1500;
/// Payload bytes plus ttl, total_length, protocol, duration.
pub const FEATURE_DIM: usize = PAYLOAD_WIDTH + 4;

pub const IDX_TTL: usize = PAYLOAD_WIDTH;
pub const IDX_TOTAL_LENGTH: usize = PAYLOAD_WIDTH + 1;
pub const IDX_PROTOCOL: usize = PAYLOAD_WIDTH + 2;
pub const IDX_DURATION: usize = PAYLOAD_WIDTH + 3;

/// One labeled traffic instance before feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadRecord {
    pub payload: Vec<u8>,
    pub ttl: u8,
    pub total_length: u32,
    pub protocol: u8,
    pub duration: f64,
    pub label: String,
}

/// Fixed-width numeric view of one instance.
///
/// `values[0..1500]` are the zero-padded payload bytes, then the four
/// packet features. `payload_len` remembers the true (pre-padding)
/// payload length so the raw bytes can be recovered for compression.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub payload_len: usize,
    pub label_index: usize,
}

impl FeatureVector {
    pub fn from_record(rec: &PayloadRecord, label_index: usize) -> Self {
        let mut values = vec![0.0; FEATURE_DIM];
        let n = rec.payload.len().min(PAYLOAD_WIDTH);
        for (i, &b) in rec.payload[..n].iter().enumerate() {
            values[i] = b as f64;
        }
        values[IDX_TTL] = rec.ttl as f64;
        values[IDX_TOTAL_LENGTH] = rec.total_length as f64;
        values[IDX_PROTOCOL] = rec.protocol as f64;
        values[IDX_DURATION] = rec.duration;
        FeatureVector {
            values,
            payload_len: n,
            label_index,
        }
    }

    /// Raw payload bytes (unpadded).
    pub fn payload(&self) -> Vec<u8> {
        self.values[..self.payload_len]
            .iter()
            .map(|&v| v as u8)
            .collect()
    }
}

/// Immutable after load; safe to share across parallel workers.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<FeatureVector>,
    pub classes: Vec<String>,
    pub split_seed: u64,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Instance counts per class, in class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for r in &self.records {
            counts[r.label_index] += 1;
        }
        counts
    }

    /// Subset view materialized as a new dataset (same class domain).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            classes: self.classes.clone(),
            split_seed: self.split_seed,
        }
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: u64, name: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("cannot parse {name} from {s:?}"),
    })
}

/// Load a dataset from CSV with header
/// `label,ttl,total_length,protocol,duration,payload_b64`.
///
/// Payloads are base64 (standard alphabet, padded), truncated at 1500
/// bytes. The class list is the sorted set of labels seen.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file)
}

pub fn load_csv_reader(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let expected = ["label", "ttl", "total_length", "protocol", "duration", "payload_b64"];
    let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    if got != expected {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("header must be {expected:?}, got {got:?}"),
        });
    }

    let b64 = base64::engine::general_purpose::STANDARD;
    let mut raw: Vec<PayloadRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 6 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 6 fields, got {}", rec.len()),
            });
        }
        let label = rec[0].trim().to_string();
        if label.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty label".into(),
            });
        }
        let ttl: i64 = parse_field(&rec[1], line, "ttl")?;
        if !(0..=255).contains(&ttl) {
            return Err(Error::FieldOutOfRange {
                line,
                reason: format!("ttl={ttl} not in [0,255]"),
            });
        }
        let total_length: i64 = parse_field(&rec[2], line, "total_length")?;
        if total_length < 0 || total_length > u32::MAX as i64 {
            return Err(Error::FieldOutOfRange {
                line,
                reason: format!("total_length={total_length} negative or too large"),
            });
        }
        let protocol: i64 = parse_field(&rec[3], line, "protocol")?;
        if !(0..=255).contains(&protocol) {
            return Err(Error::FieldOutOfRange {
                line,
                reason: format!("protocol={protocol} not in [0,255]"),
            });
        }
        let duration: f64 = parse_field(&rec[4], line, "duration")?;
        if !duration.is_finite() || duration < 0.0 {
            return Err(Error::FieldOutOfRange {
                line,
                reason: format!("duration={duration} must be finite and >= 0"),
            });
        }
        let mut payload = b64.decode(rec[5].trim()).map_err(|e| Error::MalformedRow {
            line,
            reason: format!("payload_b64 decode failed: {e}"),
        })?;
        payload.truncate(PAYLOAD_WIDTH);
        raw.push(PayloadRecord {
            payload,
            ttl: ttl as u8,
            total_length: total_length as u32,
            protocol: protocol as u8,
            duration,
            label,
        });
    }

    if raw.is_empty() {
        return Err(Error::EmptyDataset("no data rows in file".into()));
    }

    let mut classes: Vec<String> = raw.iter().map(|r| r.label.clone()).collect();
    classes.sort();
    classes.dedup();
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let records = raw
        .iter()
        .map(|r| FeatureVector::from_record(r, index[r.label.as_str()]))
        .collect();
    Ok(Dataset {
        records,
        classes,
        split_seed: 0,
    })
}

/// Write a dataset back out in the ingestion schema.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::MalformedRow {
        line: 0,
        reason: e.to_string(),
    })?;
    wtr.write_record(["label", "ttl", "total_length", "protocol", "duration", "payload_b64"])
        .map_err(|e| Error::MalformedRow {
            line: 0,
            reason: e.to_string(),
        })?;
    for r in &ds.records {
        let payload = r.payload();
        wtr.write_record([
            ds.classes[r.label_index].as_str(),
            &format!("{}", r.values[IDX_TTL] as u8),
            &format!("{}", r.values[IDX_TOTAL_LENGTH] as u64),
            &format!("{}", r.values[IDX_PROTOCOL] as u8),
            &format!("{:.9}", r.values[IDX_DURATION]),
            &b64.encode(&payload),
        ])
        .map_err(|e| Error::MalformedRow {
            line: 0,
            reason: e.to_string(),
        })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Stratified train/test split. Deterministic under `seed`; partitions
/// are disjoint and exhaustive.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction={train_fraction} must be in (0,1)"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, r) in ds.records.iter().enumerate() {
        by_class[r.label_index].push(i);
    }
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.len() < 2 {
            return Err(Error::CannotStratify {
                class: ds.classes[c].clone(),
                count: idxs.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for idxs in &mut by_class {
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&idxs[..n_train]);
        test_idx.extend_from_slice(&idxs[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let mut train = ds.subset(&train_idx);
    let mut test = ds.subset(&test_idx);
    train.split_seed = seed;
    test.split_seed = seed;
    Ok((train, test))
}

/// Per-class packet-feature ranges for synthetic generation.
#[derive(Debug, Clone)]
pub struct PacketRanges {
    pub ttl: (u8, u8),
    pub total_length: (u32, u32),
    pub protocols: Vec<u8>,
    pub duration: (f64, f64),
}

impl Default for PacketRanges {
    fn default() -> Self {
        PacketRanges {
            ttl: (32, 128),
            total_length: (60, 1500),
            protocols: vec![6, 17],
            duration: (0.0, 2.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    /// Correlation group; classes in the same group share `overlap` of
    /// their motif pool.
    pub group: usize,
    pub n_instances: usize,
    pub packet: PacketRanges,
}

/// Template-with-noise byte sources: each class draws payload slots from
/// a motif pool, partially shared within its correlation group.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    /// Fraction of each class's motif pool shared with its group, in [0,1].
    pub overlap: f64,
    pub payload_len: usize,
    pub motifs_per_class: usize,
    pub motif_len: usize,
    /// Per-byte substitution probability.
    pub noise: f64,
}

impl SyntheticSpec {
    /// Uniform corpus: `n_classes` classes dealt into `n_groups`
    /// contiguous groups, `n_instances` each.
    pub fn uniform(n_classes: usize, n_groups: usize, n_instances: usize, overlap: f64) -> Self {
        let per_group = n_classes.div_ceil(n_groups.max(1));
        let classes = (0..n_classes)
            .map(|i| ClassSpec {
                name: format!("c{i}"),
                group: i / per_group.max(1),
                n_instances,
                packet: PacketRanges::default(),
            })
            .collect();
        SyntheticSpec {
            classes,
            overlap,
            payload_len: 384,
            motifs_per_class: 24,
            motif_len: 32,
            noise: 0.02,
        }
    }
}

/// Generate a desk-scale corpus whose same-group classes yield mutually
/// compressible payloads.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.classes.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need >= 2 classes, got {}",
            spec.classes.len()
        )));
    }
    if !(0.0..=1.0).contains(&spec.overlap) {
        return Err(Error::InvalidParameter(format!(
            "overlap={} not in [0,1]",
            spec.overlap
        )));
    }
    if spec.payload_len == 0 || spec.payload_len > PAYLOAD_WIDTH {
        return Err(Error::InvalidParameter(format!(
            "payload_len={} not in [1,{PAYLOAD_WIDTH}]",
            spec.payload_len
        )));
    }
    if spec.motif_len == 0 || spec.motifs_per_class == 0 {
        return Err(Error::InvalidParameter(
            "motif_len and motifs_per_class must be positive".into(),
        ));
    }

    let gen_motif = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        (0..spec.motif_len).map(|_| rng.gen::<u8>()).collect()
    };

    // One shared pool per group, then per-class pools mixing shared and
    // private motifs.
    let n_groups = spec.classes.iter().map(|c| c.group).max().unwrap() + 1;
    let mut group_pools: Vec<Vec<Vec<u8>>> = Vec::new();
    for g in 0..n_groups {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x67726f75 + g as u64));
        group_pools.push((0..spec.motifs_per_class).map(|_| gen_motif(&mut rng)).collect());
    }
    let n_shared = ((spec.overlap * spec.motifs_per_class as f64).round() as usize)
        .min(spec.motifs_per_class);

    let mut classes: Vec<String> = spec.classes.iter().map(|c| c.name.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() != spec.classes.len() {
        return Err(Error::InvalidParameter("duplicate class names".into()));
    }
    let label_index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let n_slots = spec.payload_len.div_ceil(spec.motif_len);
    let mut records = Vec::new();
    for (ci, cs) in spec.classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xc1a55 + 7919 * ci as u64));
        let mut pool: Vec<Vec<u8>> = group_pools[cs.group][..n_shared].to_vec();
        for _ in n_shared..spec.motifs_per_class {
            pool.push(gen_motif(&mut rng));
        }
        for _ in 0..cs.n_instances {
            let mut payload = Vec::with_capacity(n_slots * spec.motif_len);
            for _ in 0..n_slots {
                let m = &pool[rng.gen_range(0..pool.len())];
                payload.extend_from_slice(m);
            }
            payload.truncate(spec.payload_len);
            if spec.noise > 0.0 {
                for b in payload.iter_mut() {
                    if rng.gen::<f64>() < spec.noise {
                        *b = rng.gen::<u8>();
                    }
                }
            }
            let p = &cs.packet;
            let ttl = if p.ttl.0 == p.ttl.1 {
                p.ttl.0
            } else {
                rng.gen_range(p.ttl.0..=p.ttl.1)
            };
            let total_length = if p.total_length.0 == p.total_length.1 {
                p.total_length.0
            } else {
                rng.gen_range(p.total_length.0..=p.total_length.1)
            };
            let protocol = p.protocols[rng.gen_range(0..p.protocols.len())];
            let duration = rng.gen_range(p.duration.0..p.duration.1.max(p.duration.0 + 1e-9));
            let rec = PayloadRecord {
                payload,
                ttl,
                total_length,
                protocol,
                duration,
                label: cs.name.clone(),
            };
            records.push(FeatureVector::from_record(&rec, label_index[cs.name.as_str()]));
        }
    }
    Ok(Dataset {
        records,
        classes,
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_bytes(rows: &[&str]) -> Vec<u8> {
        let mut s = String::from("label,ttl,total_length,protocol,duration,payload_b64\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s.into_bytes()
    }

    #[test]
    fn load_zero_pads_payload() {
        // "ABCD" base64-decodes to bytes [0, 16, 131]
        let ds = load_csv_reader(&csv_bytes(&["a,64,100,6,0.5,ABCD"])[..]).unwrap();
        assert_eq!(ds.records.len(), 1);
        let fv = &ds.records[0];
        assert_eq!(fv.payload_len, 3);
        assert_eq!(&fv.values[..3], &[0.0, 16.0, 131.0]);
        assert!(fv.values[3..PAYLOAD_WIDTH].iter().all(|&v| v == 0.0));
        assert_eq!(fv.values[IDX_TTL], 64.0);
        assert_eq!(fv.values[IDX_TOTAL_LENGTH], 100.0);
        assert_eq!(fv.values[IDX_PROTOCOL], 6.0);
        assert_eq!(fv.values[IDX_DURATION], 0.5);
        assert_eq!(fv.payload(), vec![0u8, 16, 131]);
    }

    #[test]
    fn classes_are_sorted_unique() {
        let ds = load_csv_reader(
            &csv_bytes(&["b,64,100,6,0.5,AA==", "a,64,100,6,0.5,AA==", "a,64,100,6,0.5,AA=="])[..],
        )
        .unwrap();
        assert_eq!(ds.classes, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[0].label_index, 1);
        assert_eq!(ds.records[1].label_index, 0);
    }

    #[test]
    fn ttl_out_of_range_errors() {
        let err = load_csv_reader(&csv_bytes(&["a,300,100,6,0.5,AA=="])[..]).unwrap_err();
        assert!(matches!(err, Error::FieldOutOfRange { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("field out of range"));
    }

    #[test]
    fn bad_base64_errors_with_line() {
        let err =
            load_csv_reader(&csv_bytes(&["a,64,100,6,0.5,AA==", "a,64,100,6,0.5,@@@"])[..])
                .unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_file_errors() {
        let err = load_csv_reader(&csv_bytes(&[])[..]).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn oversized_payload_truncated() {
        let b64 = base64::engine::general_purpose::STANDARD;
        let payload = vec![7u8; 2000];
        let row = format!("a,64,100,6,0.5,{}", b64.encode(&payload));
        let ds = load_csv_reader(&csv_bytes(&[&row])[..]).unwrap();
        assert_eq!(ds.records[0].payload_len, PAYLOAD_WIDTH);
        assert_eq!(ds.records[0].values.len(), FEATURE_DIM);
    }

    fn balanced_two_class(n_per_class: usize) -> Dataset {
        let spec = SyntheticSpec::uniform(2, 2, n_per_class, 0.0);
        generate_synthetic(&spec, 7).unwrap()
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = balanced_two_class(50);
        let (tr, te) = split(&ds, 0.75, 3).unwrap();
        assert_eq!(tr.len() + te.len(), ds.len());
        for c in 0..2 {
            let frac = tr.class_counts()[c] as f64 / 50.0;
            assert!((frac - 0.75).abs() <= 0.02, "class {c} ratio {frac}");
        }
        let (tr2, te2) = split(&ds, 0.75, 3).unwrap();
        assert_eq!(tr.records, tr2.records);
        assert_eq!(te.records, te2.records);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let mut ds = balanced_two_class(5);
        // drop all but one instance of class 1
        let keep: Vec<usize> = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label_index == 0)
            .map(|(i, _)| i)
            .chain(
                ds.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.label_index == 1)
                    .map(|(i, _)| i)
                    .take(1),
            )
            .collect();
        ds = ds.subset(&keep);
        let err = split(&ds, 0.75, 0).unwrap_err();
        assert!(matches!(err, Error::CannotStratify { count: 1, .. }));
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let mut spec = SyntheticSpec::uniform(2, 1, 10, 1.5);
        assert!(matches!(
            generate_synthetic(&spec, 0),
            Err(Error::InvalidParameter(_))
        ));
        spec.overlap = 0.5;
        spec.classes.clear();
        assert!(matches!(
            generate_synthetic(&spec, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn feature_extraction_is_pure() {
        let rec = PayloadRecord {
            payload: vec![1, 2, 3],
            ttl: 10,
            total_length: 43,
            protocol: 17,
            duration: 0.25,
            label: "x".into(),
        };
        assert_eq!(FeatureVector::from_record(&rec, 0), FeatureVector::from_record(&rec, 0));
    }

    #[test]
    fn csv_round_trip() {
        let ds = balanced_two_class(10);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.classes, ds.classes);
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.records.iter().zip(back.records.iter()) {
            assert_eq!(a.payload(), b.payload());
            assert_eq!(a.label_index, b.label_index);
            assert!((a.values[IDX_DURATION] - b.values[IDX_DURATION]).abs() < 1e-9);
        }
    }
}
