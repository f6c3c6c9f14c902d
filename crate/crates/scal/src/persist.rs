//! Model directories: a plain-text manifest plus one file per component
//! (dictionaries, distributor, local trees, scaler). Training wall time
//! is deliberately never serialized so identical configs and seeds give
//! byte-identical artifacts.

use std::path::{Path, PathBuf};

use crate::adversarial::Scaler;
use crate::cart::{self, ForestModel, TreeModel};
use crate::compressor::ClassCompressionModel;
use crate::decomposition::SubproblemPartition;
use crate::error::{Error, Result};
use crate::scal::{LocalPredictor, ScalModel};

pub const MANIFEST_FILE: &str = "manifest.txt";

fn bad(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
    Error::ModelFormat {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Extra `config.key=value` lines echoed into the manifest so every
/// artifact records the settings that produced it.
pub type ConfigEcho = [(String, String)];

fn echo_lines(extra: &ConfigEcho) -> String {
    let mut s = String::new();
    for (k, v) in extra {
        s.push_str(&format!("config.{k}={v}\n"));
    }
    s
}

pub fn scal_manifest(model: &ScalModel) -> String {
    let mut s = String::new();
    s.push_str("kind=scal\n");
    s.push_str(&format!("classes={}\n", model.classes.join(",")));
    s.push_str(&format!("k={}\n", model.k()));
    for (g, members) in model.partition.groups.iter().enumerate() {
        let csv: Vec<String> = members.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("group.{g}={}\n", csv.join(",")));
    }
    for (g, local) in model.locals.iter().enumerate() {
        let v = match local {
            LocalPredictor::Tree(_) => "tree".to_string(),
            LocalPredictor::Singleton(c) => format!("singleton:{c}"),
            LocalPredictor::Constant(c) => format!("constant:{c}"),
        };
        s.push_str(&format!("local.{g}={v}\n"));
    }
    let has_dicts = !model.compression_models.is_empty();
    s.push_str(&format!("has_dicts={}\n", has_dicts as u8));
    if has_dicts {
        s.push_str(&format!("level={}\n", model.compression_models[0].level));
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<u64> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

/// Returns total bytes written.
pub fn save_scal(
    model: &ScalModel,
    dir: impl AsRef<Path>,
    scaler: Option<&Scaler>,
    extra: &ConfigEcho,
) -> Result<u64> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut total = 0u64;
    let manifest = format!("{}{}", scal_manifest(model), echo_lines(extra));
    total += write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    for m in &model.compression_models {
        total += write_file(&dir.join(format!("dict_{}.bin", m.class_index)), &m.dictionary)?;
    }
    if let Some(d) = &model.distributor {
        total += write_file(&dir.join("distributor.tree"), &cart::encode_tree(d))?;
    }
    for (g, local) in model.locals.iter().enumerate() {
        if let LocalPredictor::Tree(t) = local {
            total += write_file(&dir.join(format!("local_{g}.tree")), &cart::encode_tree(t))?;
        }
    }
    if let Some(s) = scaler {
        total += write_file(&dir.join("scaler.bin"), &s.to_bytes())?;
    }
    Ok(total)
}

pub fn save_tree_dir(
    model: &TreeModel,
    classes: &[String],
    dir: impl AsRef<Path>,
    scaler: Option<&Scaler>,
    extra: &ConfigEcho,
) -> Result<u64> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = format!(
        "kind=tree\nclasses={}\n{}",
        classes.join(","),
        echo_lines(extra)
    );
    let mut total = write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    total += write_file(&dir.join("model.tree"), &cart::encode_tree(model))?;
    if let Some(s) = scaler {
        total += write_file(&dir.join("scaler.bin"), &s.to_bytes())?;
    }
    Ok(total)
}

pub fn save_forest_dir(
    model: &ForestModel,
    classes: &[String],
    dir: impl AsRef<Path>,
    scaler: Option<&Scaler>,
    extra: &ConfigEcho,
) -> Result<u64> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = format!(
        "kind=forest\nclasses={}\n{}",
        classes.join(","),
        echo_lines(extra)
    );
    let mut total = write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    total += write_file(&dir.join("model.forest"), &cart::encode_forest(model))?;
    if let Some(s) = scaler {
        total += write_file(&dir.join("scaler.bin"), &s.to_bytes())?;
    }
    Ok(total)
}

fn parse_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut kv = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(&mpath, format!("manifest line without '=': {line:?}")))?;
        kv.push((k.to_string(), v.to_string()));
    }
    Ok(kv)
}

fn get<'a>(kv: &'a [(String, String)], key: &str, mpath: &Path) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| bad(mpath, format!("manifest missing key {key:?}")))
}

fn load_scaler(dir: &Path) -> Result<Option<Scaler>> {
    let p = dir.join("scaler.bin");
    if !p.exists() {
        return Ok(None);
    }
    let buf = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Scaler::from_bytes(&buf, &p.to_string_lossy()).map(Some)
}

pub fn load_scal(dir: impl AsRef<Path>) -> Result<(ScalModel, Option<Scaler>)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let kv = parse_manifest(dir)?;
    if get(&kv, "kind", &mpath)? != "scal" {
        return Err(bad(&mpath, "not a scal model directory"));
    }
    let classes: Vec<String> = get(&kv, "classes", &mpath)?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let k: usize = get(&kv, "k", &mpath)?
        .parse()
        .map_err(|_| bad(&mpath, "bad k"))?;
    let mut groups = Vec::with_capacity(k);
    for g in 0..k {
        let raw = get(&kv, &format!("group.{g}"), &mpath)?;
        let members = raw
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| bad(&mpath, "bad group member")))
            .collect::<Result<Vec<usize>>>()?;
        groups.push(members);
    }
    let partition = SubproblemPartition { groups };

    let has_dicts = get(&kv, "has_dicts", &mpath)? == "1";
    let mut compression_models = Vec::new();
    if has_dicts {
        let level: i32 = get(&kv, "level", &mpath)?
            .parse()
            .map_err(|_| bad(&mpath, "bad level"))?;
        for ci in 0..classes.len() {
            let p = dir.join(format!("dict_{ci}.bin"));
            let dictionary = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            compression_models.push(ClassCompressionModel {
                class_index: ci,
                dictionary,
                level,
            });
        }
    }

    let distributor = if k > 1 {
        let p = dir.join("distributor.tree");
        let buf = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Some(cart::decode_tree(&buf, &p)?)
    } else {
        None
    };

    let mut locals = Vec::with_capacity(k);
    for g in 0..k {
        let spec = get(&kv, &format!("local.{g}"), &mpath)?;
        let local = if spec == "tree" {
            let p = dir.join(format!("local_{g}.tree"));
            let buf = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            LocalPredictor::Tree(cart::decode_tree(&buf, &p)?)
        } else if let Some(c) = spec.strip_prefix("singleton:") {
            LocalPredictor::Singleton(c.parse().map_err(|_| bad(&mpath, "bad singleton class"))?)
        } else if let Some(c) = spec.strip_prefix("constant:") {
            LocalPredictor::Constant(c.parse().map_err(|_| bad(&mpath, "bad constant class"))?)
        } else {
            return Err(bad(&mpath, format!("unknown local kind {spec:?}")));
        };
        locals.push(local);
    }

    Ok((
        ScalModel {
            compression_models,
            partition,
            distributor,
            locals,
            classes,
            train_seconds: 0.0,
        },
        load_scaler(dir)?,
    ))
}

/// Any trained model directory, for CLI commands that work on all kinds.
pub enum AnyModel {
    Scal(ScalModel),
    Tree { model: TreeModel, classes: Vec<String> },
    Forest { model: ForestModel, classes: Vec<String> },
}

impl AnyModel {
    pub fn classes(&self) -> &[String] {
        match self {
            AnyModel::Scal(m) => &m.classes,
            AnyModel::Tree { classes, .. } => classes,
            AnyModel::Forest { classes, .. } => classes,
        }
    }

    /// (class, probabilities, route); route is always 0 for flat models.
    pub fn infer(&self, x: &[f64]) -> Result<(usize, Vec<f64>, usize)> {
        match self {
            AnyModel::Scal(m) => m.infer(x).map(|o| (o.class, o.probs, o.route)),
            AnyModel::Tree { model, .. } => model.predict(x).map(|(c, p)| (c, p, 0)),
            AnyModel::Forest { model, .. } => model.predict(x).map(|(c, p)| (c, p, 0)),
        }
    }

    pub fn attack_target(&self) -> crate::adversarial::AttackTarget<'_> {
        match self {
            AnyModel::Scal(m) => crate::adversarial::AttackTarget::Scal(m),
            AnyModel::Tree { model, .. } => crate::adversarial::AttackTarget::Tree(model),
            AnyModel::Forest { model, .. } => crate::adversarial::AttackTarget::Forest(model),
        }
    }

    pub fn serialized_bytes(&self) -> u64 {
        match self {
            AnyModel::Scal(m) => m.serialized_bytes(),
            AnyModel::Tree { model, .. } => model.serialized_bytes() as u64,
            AnyModel::Forest { model, .. } => model.serialized_bytes() as u64,
        }
    }

    pub fn n_nodes_total(&self) -> u64 {
        match self {
            AnyModel::Scal(m) => m.n_nodes_total(),
            AnyModel::Tree { model, .. } => model.n_nodes as u64,
            AnyModel::Forest { model, .. } => {
                model.trees.iter().map(|t| t.n_nodes as u64).sum()
            }
        }
    }
}

pub fn load_any(dir: impl AsRef<Path>) -> Result<(AnyModel, Option<Scaler>)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let kv = parse_manifest(dir)?;
    let kind = get(&kv, "kind", &mpath)?;
    match kind {
        "scal" => {
            let (m, s) = load_scal(dir)?;
            Ok((AnyModel::Scal(m), s))
        }
        "tree" => {
            let classes = get(&kv, "classes", &mpath)?
                .split(',')
                .map(|s| s.to_string())
                .collect();
            let p = dir.join("model.tree");
            let buf = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let model = cart::decode_tree(&buf, &p)?;
            Ok((AnyModel::Tree { model, classes }, load_scaler(dir)?))
        }
        "forest" => {
            let classes = get(&kv, "classes", &mpath)?
                .split(',')
                .map(|s| s.to_string())
                .collect();
            let p = dir.join("model.forest");
            let buf = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let model = cart::decode_forest(&buf, &p)?;
            Ok((AnyModel::Forest { model, classes }, load_scaler(dir)?))
        }
        other => Err(bad(&mpath, format!("unknown model kind {other:?}"))),
    }
}
