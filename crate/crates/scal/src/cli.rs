//! Single-binary workflow: synth -> fingerprint/decompose -> train ->
//! predict/eval/attack/prune, plus the theory-check lab. All randomness
//! flows from --seed; a key=value config file supplies defaults that
//! flags override; the effective settings are echoed into every output
//! artifact (as `config.*` manifest lines or `# key=value` CSV comments).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use crate::adversarial::{self, AttackBudget, AttackTarget, Scaler};
use crate::cart::{self, TreeParams};
use crate::compressor::{self, CompressorConfig};
use crate::dataset::{self, Dataset, SyntheticSpec};
use crate::decomposition;
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::persist::{self, AnyModel};
use crate::risk_lab::{self, SubtaskWorld};
use crate::scal::{self, KChoice};

#[derive(Parser)]
#[command(name = "scal", version, about = "Divide-and-conquer payload classifier workbench")]
pub struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads (0 or absent = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key=value config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrainMode {
    Scal,
    Pseudo,
    GlobalTree,
    Forest,
}

impl TrainMode {
    fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Scal => "scal",
            TrainMode::Pseudo => "pseudo",
            TrainMode::GlobalTree => "global-tree",
            TrainMode::Forest => "forest",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackMode {
    Auto,
    Blackbox,
    Greybox,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus with controllable class
    /// correlation structure.
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        /// Instances per class.
        #[arg(long)]
        instances: Option<usize>,
        /// Fraction of motif material shared within a correlation group.
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        payload_len: Option<usize>,
        #[arg(long)]
        motifs_per_class: Option<usize>,
        #[arg(long)]
        motif_len: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// If set, the last class is shrunk to this fraction of
        /// `instances` (minority-class experiments).
        #[arg(long)]
        minority_frac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train per-class compression models and emit the fingerprint
    /// profile of a dataset.
    Fingerprint {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dict_size: Option<usize>,
        #[arg(long)]
        level: Option<i32>,
        #[arg(long)]
        max_dict_samples: Option<usize>,
        /// Optional directory to persist the compression models.
        #[arg(long)]
        models_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Compute the class correlation matrix and the subproblem partition.
    Decompose {
        #[arg(long)]
        data: PathBuf,
        /// "auto" (validation search) or a fixed integer.
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        min_gain: Option<f64>,
        #[arg(long)]
        dict_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train a model and write a model directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<TrainMode>,
        /// "auto" or a fixed integer (scal/pseudo modes).
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        estimators: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        min_gain: Option<f64>,
        #[arg(long)]
        dict_size: Option<usize>,
        #[arg(long)]
        level: Option<i32>,
        #[arg(long)]
        max_dict_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Per-row predictions: `row,route,pred,prob_max`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate a model directory, or retrain `--repeats` times with
    /// seeds 0..N-1 and report mean +/- std.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Test data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        /// Training data for repeated retraining runs.
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<TrainMode>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        estimators: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_leaf: Option<usize>,
        #[arg(long)]
        min_gain: Option<f64>,
        #[arg(long)]
        dict_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Attack a trained model and report clean vs adversarial metrics.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// One epsilon, or a comma-separated sweep (warm-started).
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        p_init: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<AttackMode>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Cost-complexity pruning of a tree model under an accuracy budget.
    Prune {
        #[arg(long)]
        model: PathBuf,
        /// Holdout data for the accuracy constraint.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        max_acc_loss: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Monte-Carlo check of the conflict-region excess-risk story.
    TheoryCheck {
        /// Comma-separated target correlations.
        #[arg(long)]
        rho_levels: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        p1: Option<f64>,
        #[arg(long)]
        p2: Option<f64>,
        /// Use CART-learned classifiers instead of the exact regions.
        #[arg(long)]
        learned: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Defaults from the config file, overridden by flags; records the
/// effective values for echoing into artifacts.
struct Settings {
    file: BTreeMap<String, String>,
    effective: Vec<(String, String)>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Settings> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::InvalidParameter(format!("config line without '=': {line:?}"))
                })?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings {
            file,
            effective: Vec::new(),
        })
    }

    fn get<T: FromStr + ToString>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse().map_err(|_| {
                    Error::InvalidParameter(format!("config key {key}: cannot parse {raw:?}"))
                })?,
                None => default,
            },
        };
        self.effective.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    fn get_opt<T: FromStr + ToString>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(raw.parse().map_err(|_| {
                    Error::InvalidParameter(format!("config key {key}: cannot parse {raw:?}"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.effective.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    fn echo(&self) -> &[(String, String)] {
        &self.effective
    }

    fn csv_header(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.effective {
            let _ = writeln!(s, "# {k}={v}");
        }
        s
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_k(raw: &str) -> Result<Option<usize>> {
    if raw == "auto" {
        Ok(None)
    } else {
        raw.parse::<usize>().map(Some).map_err(|_| {
            Error::InvalidParameter(format!("--k must be \"auto\" or an integer, got {raw:?}"))
        })
    }
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad {what} entry {s:?}")))
        })
        .collect()
}

fn tree_params(
    s: &mut Settings,
    max_depth: Option<usize>,
    min_leaf: Option<usize>,
    min_gain: Option<f64>,
) -> Result<TreeParams> {
    let defaults = TreeParams::default();
    Ok(TreeParams {
        max_depth: s.get_opt(max_depth, "max-depth")?,
        min_leaf: s.get(min_leaf, "min-leaf", defaults.min_leaf)?,
        min_gain: s.get(min_gain, "min-gain", defaults.min_gain)?,
        feature_subsample: None,
    })
}

fn comp_config(
    s: &mut Settings,
    dict_size: Option<usize>,
    level: Option<i32>,
    max_dict_samples: Option<usize>,
    seed: u64,
) -> Result<CompressorConfig> {
    let d = CompressorConfig::default();
    Ok(CompressorConfig {
        level: s.get(level, "level", d.level)?,
        dict_size: s.get(dict_size, "dict-size", d.dict_size)?,
        max_dict_samples: s.get(max_dict_samples, "max-dict-samples", d.max_dict_samples)?,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_any(
    train_ds: &Dataset,
    mode: TrainMode,
    k: Option<usize>,
    k_max: usize,
    estimators: usize,
    params: &TreeParams,
    comp_cfg: &CompressorConfig,
    seed: u64,
) -> Result<AnyModel> {
    match mode {
        TrainMode::Scal => {
            let choice = match k {
                Some(k) => KChoice::Fixed(k),
                None => KChoice::Auto { k_max },
            };
            let (model, _) = scal::train(train_ds, choice, params, comp_cfg, seed)?;
            Ok(AnyModel::Scal(model))
        }
        TrainMode::Pseudo => {
            let k = k.ok_or_else(|| {
                Error::InvalidParameter("pseudo mode needs a fixed --k >= 2".into())
            })?;
            Ok(AnyModel::Scal(scal::train_pseudo(train_ds, k, params, seed)?))
        }
        TrainMode::GlobalTree => Ok(AnyModel::Tree {
            model: cart::fit_tree(train_ds, params, seed)?,
            classes: train_ds.classes.clone(),
        }),
        TrainMode::Forest => Ok(AnyModel::Forest {
            model: cart::fit_forest(train_ds, estimators, params, seed)?,
            classes: train_ds.classes.clone(),
        }),
    }
}

fn save_any(model: &AnyModel, dir: &Path, scaler: &Scaler, echo: &[(String, String)]) -> Result<u64> {
    match model {
        AnyModel::Scal(m) => persist::save_scal(m, dir, Some(scaler), echo),
        AnyModel::Tree { model, classes } => {
            persist::save_tree_dir(model, classes, dir, Some(scaler), echo)
        }
        AnyModel::Forest { model, classes } => {
            persist::save_forest_dir(model, classes, dir, Some(scaler), echo)
        }
    }
}

fn eval_model(model: &AnyModel, test: &Dataset) -> Result<EvalReport> {
    if test.classes != model.classes() {
        return Err(Error::ClassDomainMismatch(format!(
            "model classes {:?} vs test classes {:?}",
            model.classes(),
            test.classes
        )));
    }
    let mut report = metrics::evaluate(|x| model.infer(x).map(|o| o.0), test)?;
    report.model_bytes = model.serialized_bytes();
    report.n_nodes_total = model.n_nodes_total();
    Ok(report)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.get(cli.seed, "seed", 0u64)?;
    let threads = s.get(cli.threads, "threads", 0usize)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }

    match cli.cmd {
        Cmd::Synth {
            classes,
            groups,
            instances,
            overlap,
            payload_len,
            motifs_per_class,
            motif_len,
            noise,
            minority_frac,
            out,
        } => {
            let n_classes = s.get(classes, "classes", 4usize)?;
            let n_groups = s.get(groups, "groups", 2usize)?;
            let n_instances = s.get(instances, "instances", 200usize)?;
            let overlap = s.get(overlap, "overlap", 0.85f64)?;
            let mut spec = SyntheticSpec::uniform(n_classes, n_groups, n_instances, overlap);
            spec.payload_len = s.get(payload_len, "payload-len", spec.payload_len)?;
            spec.motifs_per_class =
                s.get(motifs_per_class, "motifs-per-class", spec.motifs_per_class)?;
            spec.motif_len = s.get(motif_len, "motif-len", spec.motif_len)?;
            spec.noise = s.get(noise, "noise", spec.noise)?;
            if let Some(frac) = s.get_opt(minority_frac, "minority-frac")? {
                if !(0.0..=1.0).contains(&frac) {
                    return Err(Error::InvalidParameter(format!(
                        "minority-frac={frac} must be in [0,1]"
                    )));
                }
                let last = spec.classes.len() - 1;
                let shrunk = ((n_instances as f64 * frac).round() as usize).max(2);
                spec.classes[last].n_instances = shrunk;
            }
            let ds = dataset::generate_synthetic(&spec, seed)?;
            dataset::save_csv(&ds, &out)?;
            // prepend the effective config as CSV comments
            let body = std::fs::read_to_string(&out).map_err(|e| Error::io(&out, e))?;
            write_text(&out, &format!("{}{body}", s.csv_header()))?;
            println!(
                "wrote {} rows, {} classes to {}",
                ds.len(),
                ds.n_classes(),
                out.display()
            );
        }

        Cmd::Fingerprint {
            data,
            dict_size,
            level,
            max_dict_samples,
            models_out,
            out,
        } => {
            let ds = dataset::load_csv(&data)?;
            let cfg = comp_config(&mut s, dict_size, level, max_dict_samples, seed)?;
            let models = compressor::train_class_models(&ds, &cfg)?;
            let prof = compressor::profile(&ds, &models)?;
            if let Some(dir) = models_out {
                compressor::save_models(&models, &ds.classes, &cfg, &dir)?;
            }
            let mut body = String::from("label");
            for c in &ds.classes {
                let _ = write!(body, ",len_{c}");
            }
            body.push('\n');
            for (row, &ci) in prof.rows.iter().zip(prof.class_of_row.iter()) {
                let _ = write!(body, "{}", ds.classes[ci]);
                for v in row {
                    let _ = write!(body, ",{v}");
                }
                body.push('\n');
            }
            write_text(&out, &format!("{}{body}", s.csv_header()))?;
            println!("wrote {}x{} profile to {}", prof.rows.len(), ds.n_classes(), out.display());
        }

        Cmd::Decompose {
            data,
            k,
            k_max,
            max_depth,
            min_leaf,
            min_gain,
            dict_size,
            out,
        } => {
            let ds = dataset::load_csv(&data)?;
            let k_raw = s.get(k, "k", "auto".to_string())?;
            let k_fixed = parse_k(&k_raw)?;
            let k_max = s.get(k_max, "k-max", ds.n_classes())?;
            let params = tree_params(&mut s, max_depth, min_leaf, min_gain)?;
            let cfg = comp_config(&mut s, dict_size, None, None, seed)?;
            let models = compressor::train_class_models(&ds, &cfg)?;
            let prof = compressor::profile(&ds, &models)?;
            let corr = decomposition::correlation_matrix(&prof)?;
            let (partition, chosen_k, scores) = match k_fixed {
                Some(k) => (decomposition::cluster(&corr, k)?, k, Vec::new()),
                None => {
                    let res = decomposition::select_k(&ds, &prof, &corr, k_max, &params, seed)?;
                    (res.partition, res.chosen_k, res.scores)
                }
            };
            let mut body = format!("k={chosen_k}\n");
            for (g, members) in partition.groups.iter().enumerate() {
                let names: Vec<&str> =
                    members.iter().map(|&c| ds.classes[c].as_str()).collect();
                let _ = writeln!(body, "group.{g}={}", names.join(","));
            }
            for (k, f1) in &scores {
                let _ = writeln!(body, "score.{k}={f1:.9e}");
            }
            for (key, v) in s.echo() {
                let _ = writeln!(body, "config.{key}={v}");
            }
            write_text(&out, &body)?;
            println!("chose k={chosen_k}; partition written to {}", out.display());
        }

        Cmd::Train {
            data,
            mode,
            k,
            k_max,
            estimators,
            max_depth,
            min_leaf,
            min_gain,
            dict_size,
            level,
            max_dict_samples,
            out,
        } => {
            let ds = dataset::load_csv(&data)?;
            let mode = mode.unwrap_or(TrainMode::Scal);
            s.effective.push(("mode".into(), mode.as_str().into()));
            let k_raw = s.get(k, "k", "auto".to_string())?;
            let k_fixed = parse_k(&k_raw)?;
            let k_max = s.get(k_max, "k-max", ds.n_classes())?;
            let estimators = s.get(estimators, "estimators", 100usize)?;
            let params = tree_params(&mut s, max_depth, min_leaf, min_gain)?;
            let cfg = comp_config(&mut s, dict_size, level, max_dict_samples, seed)?;
            let model = train_any(&ds, mode, k_fixed, k_max, estimators, &params, &cfg, seed)?;
            let scaler = Scaler::fit(&ds)?;
            let bytes = save_any(&model, &out, &scaler, s.echo())?;
            println!(
                "trained {} model ({bytes} bytes, {} nodes) -> {}",
                mode.as_str(),
                model.n_nodes_total(),
                out.display()
            );
        }

        Cmd::Predict { model, data, out } => {
            let (model, _) = persist::load_any(&model)?;
            let ds = dataset::load_csv(&data)?;
            let mut body = String::from("row,route,pred,prob_max\n");
            for (row, r) in ds.records.iter().enumerate() {
                let (c, probs, route) = model.infer(&r.values)?;
                let prob_max = probs.iter().cloned().fold(0.0f64, f64::max);
                let _ = writeln!(body, "{row},{route},{},{prob_max:.9e}", model.classes()[c]);
            }
            write_text(&out, &format!("{}{body}", s.csv_header()))?;
            println!("wrote {} predictions to {}", ds.len(), out.display());
        }

        Cmd::Eval {
            model,
            data,
            repeats,
            train_data,
            mode,
            k,
            k_max,
            estimators,
            max_depth,
            min_leaf,
            min_gain,
            dict_size,
            out,
        } => {
            let test = dataset::load_csv(&data)?;
            let repeats = s.get(repeats, "repeats", 1usize)?;
            if repeats <= 1 {
                let dir = model.ok_or_else(|| {
                    Error::InvalidParameter("eval needs --model (or --repeats with --train-data)".into())
                })?;
                let (model, _) = persist::load_any(&dir)?;
                let report = eval_model(&model, &test)?;
                let body = metrics::report_to_csv(&report, model.classes());
                let text = format!("{}{body}", s.csv_header());
                match out {
                    Some(p) => write_text(&p, &text)?,
                    None => print!("{text}"),
                }
                println!(
                    "accuracy={:.4} macro_f1={:.4} bytes={} nodes={}",
                    report.accuracy, report.macro_f1, report.model_bytes, report.n_nodes_total
                );
            } else {
                let train_path = train_data.ok_or_else(|| {
                    Error::InvalidParameter("eval --repeats needs --train-data".into())
                })?;
                let train_ds = dataset::load_csv(&train_path)?;
                let mode = mode.unwrap_or(TrainMode::Scal);
                s.effective.push(("mode".into(), mode.as_str().into()));
                let k_raw = s.get(k, "k", "auto".to_string())?;
                let k_fixed = parse_k(&k_raw)?;
                let k_max = s.get(k_max, "k-max", train_ds.n_classes())?;
                let estimators = s.get(estimators, "estimators", 100usize)?;
                let params = tree_params(&mut s, max_depth, min_leaf, min_gain)?;
                let mut accs = Vec::new();
                let mut f1s = Vec::new();
                for run_seed in 0..repeats as u64 {
                    let cfg = comp_config(&mut Settings::load(None)?, dict_size, None, None, run_seed)?;
                    let m = train_any(
                        &train_ds, mode, k_fixed, k_max, estimators, &params, &cfg, run_seed,
                    )?;
                    let rep = eval_model(&m, &test)?;
                    accs.push(rep.accuracy);
                    f1s.push(rep.macro_f1);
                }
                let stats = |v: &[f64]| {
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let var =
                        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
                    (mean, var.sqrt())
                };
                let (am, asd) = stats(&accs);
                let (fm, fsd) = stats(&f1s);
                let mut body = String::from("metric,mean,std\n");
                let _ = writeln!(body, "accuracy,{am:.9e},{asd:.9e}");
                let _ = writeln!(body, "macro_f1,{fm:.9e},{fsd:.9e}");
                let text = format!("{}{body}", s.csv_header());
                match out {
                    Some(p) => write_text(&p, &text)?,
                    None => print!("{text}"),
                }
                println!("{repeats} runs: accuracy {am:.4}+/-{asd:.4}, macro_f1 {fm:.4}+/-{fsd:.4}");
            }
        }

        Cmd::Attack {
            model,
            data,
            eps,
            iters,
            p_init,
            mode,
            out,
        } => {
            let (any, scaler) = persist::load_any(&model)?;
            let scaler = scaler.ok_or_else(|| {
                Error::InvalidParameter(
                    "model directory has no scaler.bin; retrain with this version".into(),
                )
            })?;
            let test = dataset::load_csv(&data)?;
            if test.classes != any.classes() {
                return Err(Error::ClassDomainMismatch(format!(
                    "model classes {:?} vs data classes {:?}",
                    any.classes(),
                    test.classes
                )));
            }
            let eps_raw = s.get(eps, "eps", "0.1".to_string())?;
            let eps_list = parse_f64_list(&eps_raw, "eps")?;
            let budget = AttackBudget {
                epsilon: eps_list[0],
                n_iters: s.get(iters, "iters", 500usize)?,
                p_init: s.get(p_init, "p-init", 0.1f64)?,
                seed,
            };
            let mode = mode.unwrap_or(AttackMode::Auto);
            let target = match (mode, &any) {
                (AttackMode::Blackbox, AnyModel::Scal(m)) => AttackTarget::Blackbox(m),
                (AttackMode::Greybox, AnyModel::Scal(m)) => AttackTarget::Scal(m),
                (AttackMode::Greybox, _) => {
                    return Err(Error::InvalidParameter(
                        "greybox mode only applies to scal models".into(),
                    ))
                }
                _ => any.attack_target(),
            };
            let mut body = String::from("eps,row,success,queries\n");
            let mut footer = String::new();
            let sweeps = adversarial::sweep_epsilons(&target, &test, &budget, &eps_list, &scaler)?;
            for (eps, rep) in &sweeps {
                for (row, res) in rep.results.iter().enumerate() {
                    let _ = writeln!(body, "{eps},{row},{},{}", res.success as u8, res.queries_used);
                }
                let _ = writeln!(footer, "agg,{eps},clean_accuracy,{:.9e}", rep.clean.accuracy);
                let _ = writeln!(footer, "agg,{eps},adv_accuracy,{:.9e}", rep.adversarial.accuracy);
                let _ = writeln!(footer, "agg,{eps},clean_macro_f1,{:.9e}", rep.clean.macro_f1);
                let _ = writeln!(footer, "agg,{eps},adv_macro_f1,{:.9e}", rep.adversarial.macro_f1);
                let _ = writeln!(footer, "agg,{eps},success_rate,{:.9e}", rep.success_rate);
                let _ = writeln!(footer, "agg,{eps},mean_queries,{:.9e}", rep.mean_queries);
                println!(
                    "eps={eps}: success_rate={:.3} adv_acc={:.3} (clean {:.3})",
                    rep.success_rate, rep.adversarial.accuracy, rep.clean.accuracy
                );
            }
            write_text(&out, &format!("{}{body}{footer}", s.csv_header()))?;
        }

        Cmd::Prune {
            model,
            data,
            max_acc_loss,
            out,
        } => {
            let (any, scaler) = persist::load_any(&model)?;
            let tree = match &any {
                AnyModel::Tree { model, .. } => model,
                _ => {
                    return Err(Error::InvalidParameter(
                        "prune expects a tree model directory".into(),
                    ))
                }
            };
            let holdout = dataset::load_csv(&data)?;
            let budget = s.get(max_acc_loss, "max-acc-loss", 0.0f64)?;
            let pruned = cart::prune_on(tree, &holdout, budget)?;
            println!(
                "pruned {} -> {} nodes (budget {budget})",
                tree.n_nodes, pruned.n_nodes
            );
            persist::save_tree_dir(&pruned, any.classes(), &out, scaler.as_ref(), s.echo())?;
        }

        Cmd::TheoryCheck {
            rho_levels,
            samples,
            p1,
            p2,
            learned,
            out,
        } => {
            let levels_raw = s.get(rho_levels, "rho-levels", "0,0.2,0.5,0.8".to_string())?;
            let levels = parse_f64_list(&levels_raw, "rho-levels")?;
            let samples = s.get(samples, "samples", 100_000usize)?;
            let p1 = s.get(p1, "p1", 0.3f64)?;
            let p2 = s.get(p2, "p2", 0.25f64)?;
            let ests = if learned {
                levels
                    .iter()
                    .map(|&rho| {
                        let w = if rho == 0.0 {
                            risk_lab::BoxWorld::disjoint(p1, p2)?
                        } else {
                            risk_lab::make_world_for_rho(rho, p1, p2)?
                        };
                        let world: SubtaskWorld = risk_lab::learned_world(w, 4_000, samples, seed)?;
                        risk_lab::estimate_risks(&world)
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                risk_lab::sweep_correlation(&levels, p1, p2, samples, seed)?
            };
            let mut body = String::from(
                "rho_target,rho_hat,p,p1,p2,pr_conflict,se_conflict,excess_risk,se_excess,predicted_excess,err_composite,err_joint\n",
            );
            for (rho, e) in levels.iter().zip(ests.iter()) {
                let _ = writeln!(
                    body,
                    "{rho},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                    e.rho,
                    e.p,
                    e.p1,
                    e.p2,
                    e.pr_conflict,
                    e.se_conflict,
                    e.excess_risk,
                    e.se_excess,
                    e.predicted_excess,
                    e.err_composite,
                    e.err_joint
                );
                println!(
                    "rho={rho}: excess={:.5} predicted={:.5} (se {:.5})",
                    e.excess_risk, e.predicted_excess, e.se_excess
                );
            }
            write_text(&out, &format!("{}{body}", s.csv_header()))?;
        }
    }
    Ok(())
}
