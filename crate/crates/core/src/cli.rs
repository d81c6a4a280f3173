//! Command-line front end.
//!
//! Settings resolve as built-in defaults, then a `key=value` config file,
//! then command-line flags. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    generate_pairs, load_pairs, load_records, sample_person_names, split_records, synthesize_addresses,
    synthesize_names, write_pairs, write_pairs_file, write_records, Filter, LabeledPair, NoiseConfig, Record,
    SamplingConfig, PAIRS_HEADER, RECORDS_HEADER,
};
use crate::edits::{registry, EditOp};
use crate::error::Error;
use crate::eval::{
    accuracy_coverage, classify, classify_transitive, max_f1, prf, render_table, render_tsv, run_ablation, score,
    AblationConfig, Variant,
};
use crate::features::{build_lexicon, FeatureSet};
use crate::lattice::{Alignment, Beam, Constraint, Scorer, Skeleton};
use crate::model::{load_model, save_model_file, FsmModel, Label, StateId, TyingScheme};
use crate::training::{em_train, init_params, InitScheme, TrainConfig, TrainMode};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crfedit", version, about = "Learned string edit distance with latent alignments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic records corpus.
    Synth {
        /// Base names, one per line (default: sampled person names).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Records TSV to write (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// `names` or `addresses`.
        #[arg(long, default_value = "names")]
        kind: String,
        #[command(flatten)]
        opts: Options,
    },
    /// Build labeled pairs from a records file.
    Pairs {
        #[arg(long)]
        records: PathBuf,
        /// Pairs TSV to write (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Split records by entity first and write the held-out pairs here.
        #[arg(long)]
        test_output: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Train a model from a records or pairs file.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Training log (default: stderr).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Score labeled pairs with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Precision, recall and F1 of a model on labeled pairs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Write the accuracy/coverage curve as TSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Show the best alignment of two strings.
    Align {
        #[arg(long)]
        model: PathBuf,
        x: String,
        y: String,
        /// `match`, `mismatch` or `best`.
        #[arg(long, default_value = "best")]
        subset: String,
        #[command(flatten)]
        opts: Options,
    },
    /// Train and evaluate model variants on identical splits.
    Ablate {
        #[arg(long)]
        records: PathBuf,
        /// `name;ops=..;features=..;order=..;inference=..`, repeatable.
        #[arg(long = "variant", required = true)]
        variants: Vec<String>,
        /// Comma-separated split seeds.
        #[arg(long, default_value = "0")]
        splits: String,
        /// TSV report (the text table always goes to stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        opts: Options,
    },
    /// Print a model's structure and largest weights.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
}

/// Flags shared by the pipeline commands. Every key is also accepted in
/// the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat `key=value` file; keys mirror flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sigma2: Option<String>,
    #[arg(long)]
    pub em_iters: Option<String>,
    #[arg(long)]
    pub em_tol: Option<String>,
    #[arg(long)]
    pub mstep_iters: Option<String>,
    /// Beam width per anti-diagonal; 0 or `inf` for exact inference.
    #[arg(long)]
    pub beam: Option<String>,
    /// 1 (first-order) or 2 (second-order) tying.
    #[arg(long)]
    pub order: Option<String>,
    /// Comma-separated predicates, or `all`.
    #[arg(long)]
    pub features: Option<String>,
    /// Comma-separated edit operations, or `all`.
    #[arg(long)]
    pub ops: Option<String>,
    #[arg(long)]
    pub ratio: Option<String>,
    /// jaro, cosine or handset.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// fb or viterbi.
    #[arg(long)]
    pub inference: Option<String>,
    #[arg(long)]
    pub transitive_closure: bool,
    /// Optimize the likelihood directly instead of running EM.
    #[arg(long)]
    pub direct: bool,
    #[arg(long)]
    pub fraction: Option<String>,
    #[arg(long)]
    pub lexicon_size: Option<String>,
    #[arg(long)]
    pub shrink: Option<String>,
    #[arg(long)]
    pub names: Option<String>,
    #[arg(long)]
    pub duplicates: Option<String>,
    #[arg(long)]
    pub record_error: Option<String>,
    #[arg(long)]
    pub typo_insert: Option<String>,
    #[arg(long)]
    pub typo_delete: Option<String>,
    #[arg(long)]
    pub typo_swap: Option<String>,
    #[arg(long)]
    pub word_swap: Option<String>,
}

impl Options {
    fn flags(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        let pairs: [(&'static str, &Option<String>); 22] = [
            ("sigma2", &self.sigma2),
            ("em-iters", &self.em_iters),
            ("em-tol", &self.em_tol),
            ("mstep-iters", &self.mstep_iters),
            ("beam", &self.beam),
            ("order", &self.order),
            ("features", &self.features),
            ("ops", &self.ops),
            ("ratio", &self.ratio),
            ("filter", &self.filter),
            ("threshold", &self.threshold),
            ("seed", &self.seed),
            ("inference", &self.inference),
            ("fraction", &self.fraction),
            ("lexicon-size", &self.lexicon_size),
            ("shrink", &self.shrink),
            ("names", &self.names),
            ("duplicates", &self.duplicates),
            ("record-error", &self.record_error),
            ("typo-insert", &self.typo_insert),
            ("typo-delete", &self.typo_delete),
            ("typo-swap", &self.typo_swap),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                m.insert(k, v.clone());
            }
        }
        if let Some(v) = &self.word_swap {
            m.insert("word-swap", v.clone());
        }
        if self.transitive_closure {
            m.insert("transitive-closure", "true".into());
        }
        if self.direct {
            m.insert("direct", "true".into());
        }
        m
    }
}

const KEYS: &[&str] = &[
    "sigma2",
    "em-iters",
    "em-tol",
    "mstep-iters",
    "beam",
    "order",
    "features",
    "ops",
    "ratio",
    "filter",
    "threshold",
    "seed",
    "inference",
    "transitive-closure",
    "direct",
    "fraction",
    "lexicon-size",
    "shrink",
    "names",
    "duplicates",
    "record-error",
    "typo-insert",
    "typo-delete",
    "typo-swap",
    "word-swap",
];

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub order: TyingScheme,
    pub features: FeatureSet,
    pub ops: Vec<EditOp>,
    pub sampling: SamplingConfig,
    pub threshold: f64,
    pub seed: u64,
    pub transitive_closure: bool,
    pub fraction: f64,
    pub lexicon_size: usize,
    pub names: usize,
    pub duplicates: usize,
    pub noise: NoiseConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            order: TyingScheme::FirstOrder,
            features: FeatureSet::all(),
            ops: vec![EditOp::Insert, EditOp::Delete, EditOp::Substitute],
            sampling: SamplingConfig::default(),
            threshold: 0.5,
            seed: 0,
            transitive_closure: false,
            fraction: 0.5,
            lexicon_size: 50,
            names: 200,
            duplicates: 3,
            noise: NoiseConfig::strong(0),
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            match e {
                Error::InvalidArgument(_) | Error::UnknownPredicate(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!("invalid value `{v}` for `{key}` (expected true or false)"))),
    }
}

/// Comma-separated op names. Accepts `all`, `ins`, `del`, `sub`, `swap`,
/// and `skip` (both skip-word-if-present operations).
pub fn parse_ops(s: &str) -> crate::Result<Vec<EditOp>> {
    let mut ops = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match t {
            "all" => ops.extend(registry()),
            "ins" => ops.push(EditOp::Insert),
            "del" => ops.push(EditOp::Delete),
            "sub" => ops.push(EditOp::Substitute),
            "swap" => ops.push(EditOp::SwapTwoCharacters),
            "skip" => ops.extend([EditOp::SkipWordIfPresentX, EditOp::SkipWordIfPresentY]),
            name => ops.push(name.parse()?),
        }
    }
    ops.sort_by_key(|&o| crate::model::registry_position(o));
    ops.dedup();
    Ok(ops)
}

fn parse_beam(v: &str) -> CliResult<Beam> {
    match v.trim() {
        "0" | "inf" | "unlimited" => Ok(Beam::Unlimited),
        w => Ok(Beam::Width(parse_value("beam", w)?)),
    }
}

fn read_config(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut m = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{}: line {}: expected key=value", path.display(), k + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::usage(format!("{}: line {}: unknown key `{key}`", path.display(), k + 1)));
        }
        m.insert(key, value.trim().to_string());
    }
    Ok(m)
}

impl Settings {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(opts: &Options) -> CliResult<Settings> {
        let mut values: BTreeMap<String, String> = match &opts.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        for (k, v) in opts.flags() {
            values.insert(k.to_string(), v);
        }
        let mut s = Settings::default();
        for (k, v) in &values {
            s.apply(k, v)?;
        }
        s.sampling.seed = s.seed;
        s.noise.seed = s.seed;
        s.train.seed = s.seed;
        s.train.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(s)
    }

    fn apply(&mut self, k: &str, v: &str) -> CliResult<()> {
        let usage = |e: Error| CliError::usage(e.to_string());
        match k {
            "sigma2" => self.train.sigma2 = parse_value(k, v)?,
            "em-iters" => self.train.em_max_iters = parse_value(k, v)?,
            "em-tol" => self.train.em_tol = parse_value(k, v)?,
            "mstep-iters" => self.train.mstep_max_iters = parse_value(k, v)?,
            "beam" => self.train.beam = parse_beam(v)?,
            "order" => self.order = v.parse().map_err(usage)?,
            "features" => self.features = FeatureSet::parse_list(v).map_err(usage)?,
            "ops" => self.ops = parse_ops(v).map_err(usage)?,
            "ratio" => self.sampling.ratio = parse_value(k, v)?,
            "filter" => self.sampling.filter = v.parse::<Filter>().map_err(usage)?,
            "threshold" => self.threshold = parse_value(k, v)?,
            "seed" => self.seed = parse_value(k, v)?,
            "inference" => self.train.inference = v.parse().map_err(usage)?,
            "transitive-closure" => self.transitive_closure = parse_bool(k, v)?,
            "direct" => {
                self.train.mode = if parse_bool(k, v)? { TrainMode::Direct } else { TrainMode::Em };
            }
            "fraction" => self.fraction = parse_value(k, v)?,
            "lexicon-size" => self.lexicon_size = parse_value(k, v)?,
            "shrink" => {
                self.train.init = InitScheme {
                    shrink: parse_value(k, v)?,
                    ..self.train.init.clone()
                }
            }
            "names" => self.names = parse_value(k, v)?,
            "duplicates" => self.duplicates = parse_value(k, v)?,
            "record-error" => self.noise.record_error_prob = parse_value(k, v)?,
            "typo-insert" => self.noise.typo_insert_prob = parse_value(k, v)?,
            "typo-delete" => self.noise.typo_delete_prob = parse_value(k, v)?,
            "typo-swap" => self.noise.typo_swap_prob = parse_value(k, v)?,
            "word-swap" => self.noise.word_swap_prob = parse_value(k, v)?,
            _ => return Err(CliError::usage(format!("unknown setting `{k}`"))),
        }
        if let Beam::Width(0) = self.train.beam {
            self.train.beam = Beam::Unlimited;
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_out(path: Option<&Path>, stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Error::from(e).into()),
    }
}

fn load_model_path(path: &Path) -> CliResult<FsmModel> {
    let text = read_file(path)?;
    load_model(text.as_bytes()).map_err(|e| match e {
        Error::Parse(inner) => CliError {
            code: EXIT_DATA,
            message: format!("{}: {inner}", path.display()),
        },
        other => other.into(),
    })
}

/// Pairs from a records or pairs file, chosen by its header.
fn load_training_pairs(path: &Path, s: &Settings) -> CliResult<Vec<LabeledPair>> {
    let text = read_file(path)?;
    let name = path.display().to_string();
    let header = text.lines().next().unwrap_or("");
    if header == RECORDS_HEADER {
        let records = load_records(text.as_bytes(), &name)?;
        Ok(generate_pairs(&records, &s.sampling)?)
    } else if header == PAIRS_HEADER {
        Ok(load_pairs(text.as_bytes(), &name)?)
    } else {
        Err(Error::Data {
            path: name,
            line: 1,
            message: "header matches neither a records nor a pairs file".into(),
        }
        .into())
    }
}

/// Builds a model for `ops` with lexicons from `train` when needed, and
/// hand-set initial weights.
pub fn initial_model(s: &Settings, train: &[LabeledPair]) -> crate::Result<FsmModel> {
    let lexicons = if s.ops.iter().any(|o| o.uses_lexicon()) {
        let texts = train.iter().flat_map(|p| [p.x.as_str(), p.y.as_str()]);
        vec![build_lexicon(texts, s.lexicon_size, &Default::default())?]
    } else {
        vec![]
    };
    let model = FsmModel::default_for(&s.ops, s.order, s.features.clone(), lexicons)?;
    let init = init_params(&model, &s.train.init)?;
    model.with_params(init)
}

/// Grid with `y` across and `x` down; the path's landing cells carry op
/// codes and the start cell `-`. Exactly `|x| + 2` lines.
pub fn render_alignment(x: &str, y: &str, a: &Alignment) -> String {
    let xs: Vec<char> = x.chars().collect();
    let ys: Vec<char> = y.chars().collect();
    let mut grid = vec![vec!['.'; ys.len() + 1]; xs.len() + 1];
    grid[0][0] = '-';
    for k in 0..a.len() {
        grid[a.ix[k]][a.iy[k]] = a.edits[k].code();
    }
    let show = |c: char| if c == ' ' { '_' } else { c };
    let mut out = String::from("  ε");
    for &c in &ys {
        out.push(' ');
        out.push(show(c));
    }
    out.push('\n');
    for (i, row) in grid.iter().enumerate() {
        out.push(if i == 0 { 'ε' } else { show(xs[i - 1]) });
        for &c in row {
            out.push(' ');
            out.push(c);
        }
        out.push('\n');
    }
    out
}

fn describe_states(model: &FsmModel, a: &Alignment) -> String {
    a.edits
        .iter()
        .zip(&a.states)
        .map(|(op, s)| format!("{}:{}", op.name(), s.0))
        .collect::<Vec<_>>()
        .join(" ")
        + &match a.label(model) {
            Some(l) => format!(" ({l})"),
            None => String::new(),
        }
}

/// Parses `name;key=value;...` into a variant, defaulting unspecified
/// keys to the resolved settings.
pub fn parse_variant(text: &str, s: &Settings) -> CliResult<Variant> {
    let mut parts = text.split(';');
    let name = parts.next().unwrap_or("").trim().to_string();
    if name.is_empty() {
        return Err(CliError::usage(format!("variant `{text}` has no name")));
    }
    let mut v = Variant {
        name,
        features: s.features.clone(),
        ops: s.ops.clone(),
        order: s.order,
        inference: s.train.inference,
    };
    let usage = |e: Error| CliError::usage(e.to_string());
    for part in parts.map(str::trim).filter(|p| !p.is_empty()) {
        let (k, val) = part
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("variant field `{part}` is not key=value")))?;
        match k.trim() {
            "ops" => v.ops = parse_ops(val).map_err(usage)?,
            "features" => v.features = FeatureSet::parse_list(val).map_err(usage)?,
            "order" => v.order = val.parse().map_err(usage)?,
            "inference" => v.inference = val.parse().map_err(usage)?,
            other => return Err(CliError::usage(format!("unknown variant field `{other}`"))),
        }
    }
    Ok(v)
}

fn cmd_synth(
    input: Option<&Path>,
    output: Option<&Path>,
    kind: &str,
    s: &Settings,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let records = match kind {
        "names" => {
            let names = match input {
                Some(p) => read_file(p)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => sample_person_names(s.names, s.seed)?,
            };
            synthesize_names(&names, &s.noise, s.duplicates)?
        }
        "addresses" => {
            let families = s.names.div_ceil(3).max(1);
            synthesize_addresses(families, 3, s.duplicates, s.seed)?
        }
        other => return Err(CliError::usage(format!("unknown synth kind `{other}` (expected names or addresses)"))),
    };
    let mut buf = Vec::new();
    write_records(&mut buf, &records)?;
    write_out(output, stdout, &String::from_utf8(buf).expect("utf-8"))
}

fn cmd_pairs(
    records: &Path,
    output: Option<&Path>,
    test_output: Option<&Path>,
    s: &Settings,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let text = read_file(records)?;
    let recs = load_records(text.as_bytes(), &records.display().to_string())?;
    let (train, test): (Vec<Record>, Option<Vec<Record>>) = match test_output {
        Some(_) => {
            let (a, b) = split_records(&recs, s.fraction, s.seed)?;
            (a, Some(b))
        }
        None => (recs, None),
    };
    let pairs = generate_pairs(&train, &s.sampling)?;
    if let (Some(path), Some(test)) = (test_output, test) {
        write_pairs_file(path, &generate_pairs(&test, &s.sampling)?)?;
    }
    let mut buf = Vec::new();
    write_pairs(&mut buf, &pairs)?;
    write_out(output, stdout, &String::from_utf8(buf).expect("utf-8"))
}

fn cmd_train(input: &Path, model_path: &Path, log_path: Option<&Path>, s: &Settings, stderr: &mut dyn Write) -> CliResult<()> {
    let pairs = load_training_pairs(input, s)?;
    let model = initial_model(s, &pairs)?;
    let state = em_train(&model, &pairs, &s.train)?;
    let mut log = String::new();
    for line in &state.log {
        log.push_str(&line.to_string());
        log.push('\n');
    }
    match log_path {
        Some(p) => fs::write(p, &log).map_err(|e| io_err(p, e))?,
        None => stderr.write_all(log.as_bytes()).map_err(Error::from)?,
    }
    let trained = model.with_params(state.params)?;
    save_model_file(&trained, model_path)?;
    Ok(())
}

fn cmd_score(model: &Path, pairs: &Path, output: Option<&Path>, s: &Settings, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let model = load_model_path(model)?;
    let text = read_file(pairs)?;
    let pairs = load_pairs(text.as_bytes(), &pairs.display().to_string())?;
    let results = crate::training::score_pairs(&model, &pairs, s.train.beam, s.train.inference);
    let mut out = String::from("pair_id\tp_match\tprediction\n");
    let mut worst: Option<CliError> = None;
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(v) => out.push_str(&format!("{}\t{:.6}\t{}\n", p.pair_id, v, (v > s.threshold) as u8)),
            Err(e) => {
                out.push_str(&format!("{}\tNA\tNA\n", p.pair_id));
                let _ = writeln!(stderr, "error: {e}");
                let e = CliError::from(e);
                if worst.as_ref().is_none_or(|w| e.code > w.code) {
                    worst = Some(e);
                }
            }
        }
    }
    write_out(output, stdout, &out)?;
    match worst {
        Some(e) => Err(CliError {
            code: e.code,
            message: "some pairs could not be scored".into(),
        }),
        None => Ok(()),
    }
}

fn cmd_eval(model: &Path, pairs: &Path, curve: Option<&Path>, s: &Settings, stdout: &mut dyn Write) -> CliResult<()> {
    let model = load_model_path(model)?;
    let text = read_file(pairs)?;
    let pairs = load_pairs(text.as_bytes(), &pairs.display().to_string())?;
    let (scored, failed) = score(&model, &pairs, s.train.beam, s.train.inference);
    if let Some((_, e)) = failed.into_iter().next() {
        return Err(e.into());
    }
    let c = if s.transitive_closure {
        classify_transitive(&scored, s.threshold)?
    } else {
        classify(&scored, s.threshold)?
    };
    let m = prf(&c);
    let (best, at) = max_f1(&scored);
    let mut out = String::new();
    out.push_str(&format!("threshold\t{}\n", s.threshold));
    out.push_str(&format!("tp\t{}\nfp\t{}\nfn\t{}\ntn\t{}\n", c.tp, c.fp, c.fn_, c.tn));
    out.push_str(&format!("precision\t{:.6}\nrecall\t{:.6}\nf1\t{:.6}\n", m.precision, m.recall, m.f1));
    out.push_str(&format!("max_f1\t{best:.6}\nmax_f1_threshold\t{at:.6}\n"));
    if m.empty_positive {
        out.push_str("note\tno positive pairs and no positive predictions\n");
    }
    stdout.write_all(out.as_bytes()).map_err(Error::from)?;
    if let Some(path) = curve {
        let mut t = String::from("covered\tcoverage\taccuracy\n");
        for p in accuracy_coverage(&scored, s.threshold) {
            t.push_str(&format!("{}\t{:.6}\t{:.6}\n", p.covered, p.coverage, p.accuracy));
        }
        fs::write(path, t).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn cmd_align(model: &Path, x: &str, y: &str, subset: &str, s: &Settings, stdout: &mut dyn Write) -> CliResult<()> {
    let model = load_model_path(model)?;
    let sk = Skeleton::new(&model, x, y)?;
    let scorer = Scorer::of(&model);
    let [mismatch, matched] = scorer.viterbi_both(&sk);
    let score_of = |a: &Option<Alignment>| a.as_ref().map(|a| a.score).unwrap_or(f64::NEG_INFINITY);
    let (v0, v1) = (score_of(&mismatch), score_of(&matched));
    let chosen = match subset {
        "match" => matched.clone().ok_or(Error::NoPath(Some(Label::Match)))?,
        "mismatch" => mismatch.clone().ok_or(Error::NoPath(Some(Label::Mismatch)))?,
        "best" => scorer.viterbi(&sk, Constraint::All)?,
        other => return Err(CliError::usage(format!("unknown subset `{other}` (expected match, mismatch or best)"))),
    };
    let mut out = render_alignment(x, y, &chosen);
    out.push_str(&format!("path\t{}\n", describe_states(&model, &chosen)));
    let fmt = |v: f64| if v.is_finite() { format!("{v:.6}") } else { "none".into() };
    out.push_str(&format!("match_score\t{}\nmismatch_score\t{}\n", fmt(v1), fmt(v0)));
    out.push_str(&format!("higher\t{}\n", if v1 >= v0 { "match" } else { "mismatch" }));
    let _ = s;
    stdout.write_all(out.as_bytes()).map_err(Error::from)?;
    Ok(())
}

fn cmd_ablate(records: &Path, variants: &[String], splits: &str, output: Option<&Path>, s: &Settings, stdout: &mut dyn Write) -> CliResult<()> {
    let text = read_file(records)?;
    let recs = load_records(text.as_bytes(), &records.display().to_string())?;
    let variants = variants.iter().map(|v| parse_variant(v, s)).collect::<CliResult<Vec<_>>>()?;
    let split_seeds = splits
        .split(',')
        .map(|t| parse_value::<u64>("splits", t))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = AblationConfig {
        split_seeds,
        fraction: s.fraction,
        sampling: s.sampling,
        train: s.train.clone(),
        threshold: s.threshold,
        transitive_closure: s.transitive_closure,
        lexicon_size: s.lexicon_size,
        ..AblationConfig::default()
    };
    let rows = run_ablation(&recs, &variants, &cfg)?;
    if let Some(p) = output {
        fs::write(p, render_tsv(&rows)).map_err(|e| io_err(p, e))?;
    }
    stdout.write_all(render_table(&rows).as_bytes()).map_err(Error::from)?;
    Ok(())
}

fn cmd_inspect(model: &Path, top: usize, stdout: &mut dyn Write) -> CliResult<()> {
    let model = load_model_path(model)?;
    let mut out = String::new();
    out.push_str(&format!("tying\t{}\n", model.tying()));
    out.push_str(&format!("dimension\t{}\n", model.dimension()));
    out.push_str(&format!("groups\t{}\n", model.n_groups()));
    let preds: Vec<&str> = model.features().predicates().iter().map(|p| p.name()).collect();
    out.push_str(&format!("features\t{}\n", preds.join(",")));
    out.push_str("operations\n");
    for op in registry() {
        let used = if model.ops().contains(&op) { "yes" } else { "no" };
        out.push_str(&format!("  {}\t{used}\n", op.name()));
    }
    out.push_str("states\n");
    for (k, st) in model.topology().states.iter().enumerate() {
        let ctx = st.context.map(|o| format!("\tafter {o}")).unwrap_or_default();
        out.push_str(&format!("  {k}\t{:?}{ctx}\n", model.topology().subset_of(StateId(k)).expect("state exists")));
    }
    out.push_str(&format!("transitions\t{}\n", model.topology().transitions.len()));
    for l in model.lexicons() {
        out.push_str(&format!("lexicon\t{}\t{} words\n", l.name, l.len()));
    }
    let mut idx: Vec<usize> = (0..model.dimension()).collect();
    idx.sort_by(|&a, &b| model.params.0[b].abs().total_cmp(&model.params.0[a].abs()).then(a.cmp(&b)));
    out.push_str(&format!("top {} weights\n", top.min(idx.len())));
    for &k in idx.iter().take(top) {
        out.push_str(&format!("  {:+.6}\t{}\n", model.params.0[k], model.feature_name(k)));
    }
    stdout.write_all(out.as_bytes()).map_err(Error::from)?;
    Ok(())
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Synth { input, output, kind, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_synth(input.as_deref(), output.as_deref(), &kind, &s, stdout)
        }
        Command::Pairs { records, output, test_output, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_pairs(&records, output.as_deref(), test_output.as_deref(), &s, stdout)
        }
        Command::Train { input, model, log, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_train(&input, &model, log.as_deref(), &s, stderr)
        }
        Command::Score { model, pairs, output, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_score(&model, &pairs, output.as_deref(), &s, stdout, stderr)
        }
        Command::Eval { model, pairs, curve, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_eval(&model, &pairs, curve.as_deref(), &s, stdout)
        }
        Command::Align { model, x, y, subset, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_align(&model, &x, &y, &subset, &s, stdout)
        }
        Command::Ablate { records, variants, splits, output, opts } => {
            let s = Settings::resolve(&opts)?;
            cmd_ablate(&records, &variants, &splits, output.as_deref(), &s, stdout)
        }
        Command::Inspect { model, top } => cmd_inspect(&model, top, stdout),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}
