//! Records, labeled pairs, negative sampling, splits, and synthetic corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Label;

pub const RECORDS_HEADER: &str = "record_id\tentity_id\ttext";
pub const PAIRS_HEADER: &str = "pair_id\tx\ty\tz";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub record_id: String,
    pub entity_id: String,
    pub text: String,
}

impl Record {
    pub fn new(record_id: impl Into<String>, entity_id: impl Into<String>, text: impl Into<String>) -> Self {
        Record {
            record_id: record_id.into(),
            entity_id: entity_id.into(),
            text: text.into(),
        }
    }
}

/// Where a generated pair came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSource {
    pub records: (String, String),
    pub entities: (String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub pair_id: String,
    pub x: String,
    pub y: String,
    pub z: Label,
    pub source: Option<PairSource>,
}

impl LabeledPair {
    pub fn new(pair_id: impl Into<String>, x: impl Into<String>, y: impl Into<String>, z: Label) -> Self {
        LabeledPair {
            pair_id: pair_id.into(),
            x: x.into(),
            y: y.into(),
            z,
            source: None,
        }
    }
}

// ---- TSV I/O ----

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn data_err(name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: name.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads data rows with exactly `width` tab-separated fields after checking
/// the header. Returns `(line number, fields)`.
fn read_rows<R: Read>(source: R, name: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    let width = header.split('\t').count();
    let mut lines = BufReader::new(source).lines();
    match lines.next() {
        Some(h) => {
            let h = h?;
            if h != header {
                return Err(data_err(name, 1, format!("expected header `{}`", header.replace('\t', "<TAB>"))));
            }
        }
        None => return Err(data_err(name, 1, "missing header")),
    }
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != width {
            return Err(data_err(name, lineno, format!("expected {width} tab-separated columns, found {}", fields.len())));
        }
        rows.push((lineno, fields));
    }
    Ok(rows)
}

fn check_field(what: &str, s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::invalid(format!("{what} `{s}` contains a tab or line break")));
    }
    Ok(())
}

/// Parses a records TSV. `name` labels error messages.
pub fn load_records<R: Read>(source: R, name: &str) -> Result<Vec<Record>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, f) in read_rows(source, name, RECORDS_HEADER)? {
        let [record_id, entity_id, text]: [String; 3] = f.try_into().expect("width checked");
        if record_id.is_empty() || entity_id.is_empty() {
            return Err(data_err(name, line, "empty record_id or entity_id"));
        }
        if text.is_empty() {
            return Err(data_err(name, line, "empty text"));
        }
        if !seen.insert(record_id.clone()) {
            return Err(Error::DuplicateRecord(record_id));
        }
        out.push(Record { record_id, entity_id, text });
    }
    Ok(out)
}

pub fn load_records_file(path: &Path) -> Result<Vec<Record>> {
    load_records(open(path)?, &path.display().to_string())
}

pub fn write_records<W: Write>(mut dest: W, records: &[Record]) -> Result<()> {
    writeln!(dest, "{RECORDS_HEADER}")?;
    for r in records {
        check_field("record_id", &r.record_id)?;
        check_field("entity_id", &r.entity_id)?;
        check_field("text", &r.text)?;
        writeln!(dest, "{}\t{}\t{}", r.record_id, r.entity_id, r.text)?;
    }
    dest.flush()?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[Record]) -> Result<()> {
    write_records(create(path)?, records)
}

/// Parses a pairs TSV.
pub fn load_pairs<R: Read>(source: R, name: &str) -> Result<Vec<LabeledPair>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, f) in read_rows(source, name, PAIRS_HEADER)? {
        let [pair_id, x, y, z]: [String; 4] = f.try_into().expect("width checked");
        let z = match z.as_str() {
            "0" => Label::Mismatch,
            "1" => Label::Match,
            other => return Err(data_err(name, line, format!("label must be 0 or 1, found `{other}`"))),
        };
        if pair_id.is_empty() {
            return Err(data_err(name, line, "empty pair_id"));
        }
        if !seen.insert(pair_id.clone()) {
            return Err(data_err(name, line, format!("duplicate pair_id `{pair_id}`")));
        }
        out.push(LabeledPair { pair_id, x, y, z, source: None });
    }
    Ok(out)
}

pub fn load_pairs_file(path: &Path) -> Result<Vec<LabeledPair>> {
    load_pairs(open(path)?, &path.display().to_string())
}

pub fn write_pairs<W: Write>(mut dest: W, pairs: &[LabeledPair]) -> Result<()> {
    writeln!(dest, "{PAIRS_HEADER}")?;
    for p in pairs {
        check_field("pair_id", &p.pair_id)?;
        check_field("x", &p.x)?;
        check_field("y", &p.y)?;
        writeln!(dest, "{}\t{}\t{}\t{}", p.pair_id, p.x, p.y, p.z.z())?;
    }
    dest.flush()?;
    Ok(())
}

pub fn write_pairs_file(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    write_pairs(create(path)?, pairs)
}

// ---- pair generation ----

/// Similarity used to rank negative candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Filter {
    #[default]
    Jaro,
    Cosine,
    /// Posterior match probability under the hand-set initial model.
    Handset,
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaro" | "jaro-top" => Ok(Filter::Jaro),
            "cosine" | "cosine-top" => Ok(Filter::Cosine),
            "handset" | "handset-crf-top" => Ok(Filter::Handset),
            _ => Err(Error::invalid(format!("unknown filter `{s}` (expected jaro, cosine or handset)"))),
        }
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Filter::Jaro => "jaro",
            Filter::Cosine => "cosine",
            Filter::Handset => "handset",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Negatives per positive.
    pub ratio: f64,
    pub filter: Filter,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            ratio: 10.0,
            filter: Filter::Jaro,
            seed: 0,
        }
    }
}

fn make_pair(a: &Record, b: &Record) -> LabeledPair {
    LabeledPair {
        pair_id: format!("{}|{}", a.record_id, b.record_id),
        x: a.text.clone(),
        y: b.text.clone(),
        z: if a.entity_id == b.entity_id { Label::Match } else { Label::Mismatch },
        source: Some(PairSource {
            records: (a.record_id.clone(), b.record_id.clone()),
            entities: (a.entity_id.clone(), b.entity_id.clone()),
        }),
    }
}

/// All intra-entity pairs plus the `ratio * |positives|` most similar
/// cross-entity pairs. Output is ordered by pair id.
pub fn generate_pairs(records: &[Record], cfg: &SamplingConfig) -> Result<Vec<LabeledPair>> {
    if records.len() < 2 {
        return Err(Error::invalid("pair generation needs at least 2 records"));
    }
    if !(cfg.ratio >= 0.0) || !cfg.ratio.is_finite() {
        return Err(Error::invalid("ratio must be a finite number >= 0"));
    }
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut positives = Vec::new();
    let mut candidates = Vec::new();
    for (k, a) in sorted.iter().enumerate() {
        for b in &sorted[k + 1..] {
            if a.entity_id == b.entity_id {
                positives.push(make_pair(a, b));
            } else {
                candidates.push((*a, *b));
            }
        }
    }
    let wanted = ((cfg.ratio * positives.len() as f64).round() as usize).min(candidates.len());
    let scorer = match cfg.filter {
        Filter::Handset => Some(crate::training::handset_model()?),
        _ => None,
    };
    let scored: Vec<(f64, String)> = candidates
        .par_iter()
        .map(|(a, b)| {
            let s = match cfg.filter {
                Filter::Jaro => crate::metrics::jaro(&a.text, &b.text),
                Filter::Cosine => crate::metrics::cosine_tokens(&a.text, &b.text),
                Filter::Handset => {
                    let m = scorer.as_ref().expect("built above");
                    crate::lattice::posterior_match(m, &a.text, &b.text).unwrap_or(0.0)
                }
            };
            (s, format!("{}|{}", a.record_id, b.record_id))
        })
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| scored[j].0.total_cmp(&scored[i].0).then_with(|| scored[i].1.cmp(&scored[j].1)));
    let mut out = positives;
    out.extend(order[..wanted].iter().map(|&k| make_pair(candidates[k].0, candidates[k].1)));
    out.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(out)
}

// ---- splits ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// No entity contributes pairs to both sides.
    #[default]
    EntityDisjoint,
    /// Plain random split over pairs.
    PairLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

impl Split {
    /// The same split with the folds interchanged.
    pub fn swapped(self) -> Split {
        Split {
            train: self.test,
            test: self.train,
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Greedy assignment of shuffled units so the train side approaches
/// `fraction` of the total size. Returns the train flag per unit.
fn assign_units(sizes: &[usize], fraction: f64, seed: u64) -> Vec<bool> {
    let total: usize = sizes.iter().sum();
    let target = fraction * total as f64;
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; sizes.len()];
    let mut size = 0usize;
    for &u in &order {
        let with = (size + sizes[u]) as f64;
        if (with - target).abs() < (size as f64 - target).abs() {
            in_train[u] = true;
            size += sizes[u];
        }
    }
    if !in_train.iter().any(|&t| t) {
        in_train[order[0]] = true;
    }
    if in_train.iter().all(|&t| t) {
        let last = *order.iter().rev().find(|&&u| in_train[u]).expect("non-empty");
        in_train[last] = false;
    }
    in_train
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    Ok(())
}

/// Splits pairs into train and test. In entity-disjoint mode, pairs are
/// grouped into connected components over their source entities; pairs
/// without a source form their own unit.
pub fn split_pairs(pairs: &[LabeledPair], fraction: f64, seed: u64, mode: SplitMode) -> Result<Split> {
    check_fraction(fraction)?;
    if pairs.is_empty() {
        return Err(Error::invalid("cannot split an empty pair list"));
    }
    let unit_of: Vec<usize> = match mode {
        SplitMode::PairLevel => (0..pairs.len()).collect(),
        SplitMode::EntityDisjoint => {
            let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
            for p in pairs {
                if let Some(s) = &p.source {
                    for e in [&s.entities.0, &s.entities.1] {
                        let n = ids.len();
                        ids.entry(e.as_str()).or_insert(n);
                    }
                }
            }
            let mut uf = UnionFind::new(ids.len() + pairs.len());
            let base = ids.len();
            for (k, p) in pairs.iter().enumerate() {
                if let Some(s) = &p.source {
                    let (a, b) = (ids[s.entities.0.as_str()], ids[s.entities.1.as_str()]);
                    uf.union(a, b);
                    uf.union(a, base + k);
                }
            }
            (0..pairs.len()).map(|k| uf.find(base + k)).collect()
        }
    };
    // units numbered by first appearance
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sizes = Vec::new();
    let mut unit = Vec::with_capacity(pairs.len());
    for &root in &unit_of {
        let n = index.len();
        let u = *index.entry(root).or_insert_with(|| {
            sizes.push(0);
            n
        });
        sizes[u] += 1;
        unit.push(u);
    }
    if sizes.len() < 2 {
        return Err(Error::Split("all pairs belong to a single entity group".into()));
    }
    let in_train = assign_units(&sizes, fraction, seed);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (p, u) in pairs.iter().zip(unit) {
        if in_train[u] {
            split.train.push(p.clone());
        } else {
            split.test.push(p.clone());
        }
    }
    Ok(split)
}

/// Entity-level split of records, so that pairs generated on each side
/// never share an entity.
pub fn split_records(records: &[Record], fraction: f64, seed: u64) -> Result<(Vec<Record>, Vec<Record>)> {
    check_fraction(fraction)?;
    let mut entities: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *entities.entry(r.entity_id.as_str()).or_default() += 1;
    }
    if entities.len() < 2 {
        return Err(Error::Split("records belong to a single entity".into()));
    }
    let names: Vec<&str> = entities.keys().copied().collect();
    let sizes: Vec<usize> = entities.values().copied().collect();
    let in_train = assign_units(&sizes, fraction, seed);
    let train_set: BTreeSet<&str> = names.iter().zip(&in_train).filter(|(_, &t)| t).map(|(n, _)| *n).collect();
    let (train, test) = records.iter().cloned().partition(|r| train_set.contains(r.entity_id.as_str()));
    Ok((train, test))
}

// ---- synthetic corpora ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub record_error_prob: f64,
    pub typo_insert_prob: f64,
    pub typo_delete_prob: f64,
    pub typo_swap_prob: f64,
    pub word_swap_prob: f64,
    pub seed: u64,
}

impl NoiseConfig {
    /// Record error 0.4, each typo kind 0.4, word swap 0.5.
    pub fn strong(seed: u64) -> Self {
        NoiseConfig {
            record_error_prob: 0.4,
            typo_insert_prob: 0.4,
            typo_delete_prob: 0.4,
            typo_swap_prob: 0.4,
            word_swap_prob: 0.5,
            seed,
        }
    }

    pub fn none(seed: u64) -> Self {
        NoiseConfig {
            record_error_prob: 0.0,
            typo_insert_prob: 0.0,
            typo_delete_prob: 0.0,
            typo_swap_prob: 0.0,
            word_swap_prob: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let probs = [
            self.record_error_prob,
            self.typo_insert_prob,
            self.typo_delete_prob,
            self.typo_swap_prob,
            self.word_swap_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("noise probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn swap_first_last_words(s: &str) -> String {
    let mut words: Vec<&str> = s.split_whitespace().collect();
    if words.len() < 2 {
        return s.to_string();
    }
    let last = words.len() - 1;
    words.swap(0, last);
    words.join(" ")
}

/// Applies one noisy-record event: a possible first/last word swap, then at
/// most one typo. The typo kind is drawn uniformly and applied with that
/// kind's probability, so equal kind probabilities `p` give a typo rate `p`.
fn perturb(s: &str, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> String {
    let text = if rng.random_bool(noise.word_swap_prob) {
        swap_first_last_words(s)
    } else {
        s.to_string()
    };
    let mut chars: Vec<char> = text.chars().collect();
    let kind = rng.random_range(0..3);
    let prob = [noise.typo_insert_prob, noise.typo_delete_prob, noise.typo_swap_prob][kind];
    if !rng.random_bool(prob) {
        return text;
    }
    match kind {
        0 => {
            let at = rng.random_range(0..=chars.len());
            chars.insert(at, (b'a' + rng.random_range(0..26u8)) as char);
        }
        1 if chars.len() > 1 => {
            chars.remove(rng.random_range(0..chars.len()));
        }
        2 if chars.len() > 1 => {
            let at = rng.random_range(0..chars.len() - 1);
            chars.swap(at, at + 1);
        }
        _ => {}
    }
    chars.into_iter().collect()
}

/// For each base name, the original record plus `duplicates_per_name`
/// copies, each corrupted with probability `record_error_prob`.
pub fn synthesize_names(base_names: &[String], noise: &NoiseConfig, duplicates_per_name: usize) -> Result<Vec<Record>> {
    noise.validate()?;
    if base_names.is_empty() {
        return Err(Error::invalid("no base names"));
    }
    if let Some(bad) = base_names.iter().find(|n| n.trim().is_empty() || n.contains(['\t', '\n', '\r'])) {
        return Err(Error::invalid(format!("unusable base name `{bad}`")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let width = base_names.len().to_string().len().max(4);
    let mut out = Vec::with_capacity(base_names.len() * (duplicates_per_name + 1));
    for (k, name) in base_names.iter().enumerate() {
        let entity = format!("e{k:0width$}");
        out.push(Record::new(format!("{entity}-0"), &entity, name.clone()));
        for d in 1..=duplicates_per_name {
            let text = if rng.random_bool(noise.record_error_prob) {
                perturb(name, noise, &mut rng)
            } else {
                name.clone()
            };
            out.push(Record::new(format!("{entity}-{d}"), &entity, text));
        }
    }
    Ok(out)
}

const FIRST_NAMES: &[&str] = &[
    "james", "mary", "john", "patricia", "robert", "jennifer", "michael", "linda", "william", "elizabeth",
    "david", "barbara", "richard", "susan", "joseph", "jessica", "thomas", "sarah", "charles", "karen",
    "daniel", "nancy", "matthew", "lisa", "anthony", "betty", "mark", "margaret", "donald", "sandra",
    "steven", "ashley", "paul", "kimberly", "andrew", "emily", "joshua", "donna", "kenneth", "michelle",
    "kevin", "carol", "brian", "amanda", "george", "melissa", "edward", "deborah", "ronald", "stephanie",
    "timothy", "rebecca", "jason", "laura", "jeffrey", "helen", "ryan", "sharon", "jacob", "cynthia",
];

const LAST_NAMES: &[&str] = &[
    "smith", "johnson", "williams", "brown", "jones", "garcia", "miller", "davis", "rodriguez", "martinez",
    "hernandez", "lopez", "gonzalez", "wilson", "anderson", "thomas", "taylor", "moore", "jackson", "martin",
    "lee", "perez", "thompson", "white", "harris", "sanchez", "clark", "ramirez", "lewis", "robinson",
    "walker", "young", "allen", "king", "wright", "scott", "torres", "nguyen", "hill", "flores",
    "green", "adams", "nelson", "baker", "hall", "rivera", "campbell", "mitchell", "carter", "roberts",
    "gomez", "phillips", "evans", "turner", "diaz", "parker", "cruz", "edwards", "collins", "reyes",
    "stewart", "morris", "morales", "murphy", "cook", "rogers", "gutierrez", "ortiz", "morgan", "cooper",
    "peterson", "bailey", "reed", "kelly", "howard", "ramos", "kim", "cox", "ward", "richardson",
];

/// `n` distinct "first last" names drawn from built-in lists.
pub fn sample_person_names(n: usize, seed: u64) -> Result<Vec<String>> {
    let total = FIRST_NAMES.len() * LAST_NAMES.len();
    if n > total {
        return Err(Error::invalid(format!("at most {total} distinct names are available")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n);
    Ok(picks
        .into_iter()
        .map(|k| format!("{} {}", FIRST_NAMES[k / LAST_NAMES.len()], LAST_NAMES[k % LAST_NAMES.len()]))
        .collect())
}

const STREETS: &[&str] = &[
    "oak", "maple", "cedar", "pine", "elm", "washington", "lake", "hill", "park", "main", "church", "mill",
    "river", "spring", "ridge", "sunset", "highland", "forest", "meadow", "willow", "franklin", "jackson",
];

const SUFFIXES: &[(&str, &str)] = &[("street", "st"), ("avenue", "ave"), ("road", "rd"), ("boulevard", "blvd"), ("drive", "dr")];

/// An address-like corpus mixing digits and letters.
///
/// Entities come in families sharing a street and differing in one digit of
/// the house number, so near-miss negatives differ only in digits while
/// duplicates differ only in letters.
pub fn synthesize_addresses(families: usize, per_family: usize, duplicates: usize, seed: u64) -> Result<Vec<Record>> {
    if families == 0 || per_family == 0 {
        return Err(Error::invalid("need at least one family and one entity per family"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut entity = 0usize;
    for _ in 0..families {
        let street = STREETS[rng.random_range(0..STREETS.len())];
        let (long, short) = SUFFIXES[rng.random_range(0..SUFFIXES.len())];
        let base: u32 = rng.random_range(100..10000);
        let digits: Vec<char> = base.to_string().chars().collect();
        let mut numbers = BTreeSet::new();
        numbers.insert(base.to_string());
        while numbers.len() < per_family {
            let mut d = digits.clone();
            let at = rng.random_range(0..d.len());
            let lo = if at == 0 { 1 } else { 0 };
            d[at] = char::from_digit(rng.random_range(lo..10), 10).expect("digit");
            numbers.insert(d.into_iter().collect());
        }
        for number in numbers {
            let id = format!("a{entity:05}");
            entity += 1;
            let canonical = format!("{number} {street} {long}");
            out.push(Record::new(format!("{id}-0"), &id, canonical));
            for k in 1..=duplicates {
                let mut name: Vec<char> = street.chars().collect();
                if rng.random_bool(0.5) && name.len() > 2 {
                    let at = rng.random_range(1..name.len());
                    if rng.random_bool(0.5) {
                        name.remove(at);
                    } else {
                        name[at] = (b'a' + rng.random_range(0..26u8)) as char;
                    }
                }
                let suffix = if rng.random_bool(0.5) { short } else { long };
                let text = format!("{number} {} {suffix}", name.into_iter().collect::<String>());
                out.push(Record::new(format!("{id}-{k}"), &id, text));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(rows: &[(&str, &str, &str)]) -> Vec<Record> {
        rows.iter().map(|(r, e, t)| Record::new(*r, *e, *t)).collect()
    }

    #[test]
    fn records_tsv() {
        let ok = "record_id\tentity_id\ttext\nr1\te1\tjohn smith\nr2\te1\tj smith\nr3\te2\tmary jones\n";
        assert_eq!(load_records(ok.as_bytes(), "t").unwrap().len(), 3);
        let short = "record_id\tentity_id\ttext\nr1\te1\n";
        match load_records(short.as_bytes(), "t") {
            Err(Error::Data { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let dup = "record_id\tentity_id\ttext\nr1\te1\ta\nr1\te2\tb\n";
        assert!(matches!(load_records(dup.as_bytes(), "t"), Err(Error::DuplicateRecord(id)) if id == "r1"));
        let tabbed = "record_id\tentity_id\ttext\nr1\te1\ta\tb\n";
        assert!(load_records(tabbed.as_bytes(), "t").is_err());
    }

    #[test]
    fn pairs_tsv_round_trip() {
        let pairs = vec![LabeledPair::new("p1", "a b", "ab", Label::Match), LabeledPair::new("p2", "x", "", Label::Mismatch)];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(load_pairs(buf.as_slice(), "t").unwrap(), pairs);
        let bad = "pair_id\tx\ty\tz\np\ta\tb\t2\n";
        assert!(load_pairs(bad.as_bytes(), "t").is_err());
        let mut sink = Vec::new();
        assert!(write_pairs(&mut sink, &[LabeledPair::new("p", "a\tb", "c", Label::Match)]).is_err());
    }

    #[test]
    fn single_entity_positives() {
        let r = recs(&[("r1", "e", "a"), ("r2", "e", "b"), ("r3", "e", "c")]);
        let pairs = generate_pairs(&r, &SamplingConfig::default()).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.z == Label::Match));
    }

    #[test]
    fn ratio_and_jaro_selection() {
        let mut r = Vec::new();
        for e in 0..5 {
            r.push(Record::new(format!("r{e}a"), format!("e{e}"), format!("name{e} alpha")));
            r.push(Record::new(format!("r{e}b"), format!("e{e}"), format!("name{e} alpah")));
        }
        for e in 5..20 {
            r.push(Record::new(format!("r{e}"), format!("e{e}"), format!("other{e} {}", "z".repeat(e))));
        }
        let cfg = SamplingConfig { ratio: 10.0, filter: Filter::Jaro, seed: 0 };
        let pairs = generate_pairs(&r, &cfg).unwrap();
        let pos = pairs.iter().filter(|p| p.z == Label::Match).count();
        let neg: Vec<&LabeledPair> = pairs.iter().filter(|p| p.z == Label::Mismatch).collect();
        assert_eq!((pos, neg.len()), (5, 50));
        let chosen: BTreeSet<&str> = neg.iter().map(|p| p.pair_id.as_str()).collect();
        let min_chosen = neg.iter().map(|p| jaro_of(p)).fold(f64::INFINITY, f64::min);
        let mut sorted = r.clone();
        sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        for (k, a) in sorted.iter().enumerate() {
            for b in &sorted[k + 1..] {
                let id = format!("{}|{}", a.record_id, b.record_id);
                if a.entity_id != b.entity_id && !chosen.contains(id.as_str()) {
                    assert!(crate::metrics::jaro(&a.text, &b.text) <= min_chosen);
                }
            }
        }
        // input order does not matter
        let mut rev = r.clone();
        rev.reverse();
        assert_eq!(generate_pairs(&rev, &cfg).unwrap(), pairs);
    }

    fn jaro_of(p: &LabeledPair) -> f64 {
        crate::metrics::jaro(&p.x, &p.y)
    }

    fn entity_pairs(n_entities: usize, per: usize) -> Vec<LabeledPair> {
        let mut r = Vec::new();
        for e in 0..n_entities {
            for k in 0..per {
                r.push(Record::new(format!("e{e}r{k}"), format!("e{e}"), format!("t{e}{k}")));
            }
        }
        let cfg = SamplingConfig { ratio: 0.0, ..SamplingConfig::default() };
        generate_pairs(&r, &cfg).unwrap()
    }

    #[test]
    fn entity_disjoint_split() {
        let pairs = entity_pairs(4, 3);
        let s = split_pairs(&pairs, 0.5, 7, SplitMode::EntityDisjoint).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (6, 6));
        let ents = |v: &[LabeledPair]| -> BTreeSet<String> { v.iter().map(|p| p.source.as_ref().unwrap().entities.0.clone()).collect() };
        assert_eq!(ents(&s.train).len(), 2);
        assert!(ents(&s.train).is_disjoint(&ents(&s.test)));
        assert_eq!(split_pairs(&pairs, 0.5, 7, SplitMode::EntityDisjoint).unwrap(), s);
        let sw = s.clone().swapped();
        assert_eq!((sw.train, sw.test), (s.test, s.train));
        let one = entity_pairs(1, 3);
        assert!(matches!(split_pairs(&one, 0.5, 0, SplitMode::EntityDisjoint), Err(Error::Split(_))));
        let pl = split_pairs(&one, 0.5, 0, SplitMode::PairLevel).unwrap();
        assert_eq!(pl.train.len() + pl.test.len(), 3);
    }

    #[test]
    fn record_split_keeps_entities_whole() {
        let r = synthesize_names(&sample_person_names(10, 1).unwrap(), &NoiseConfig::none(0), 2).unwrap();
        let (a, b) = split_records(&r, 0.5, 3).unwrap();
        assert_eq!(a.len(), 15);
        let ea: BTreeSet<&str> = a.iter().map(|r| r.entity_id.as_str()).collect();
        assert!(b.iter().all(|r| !ea.contains(r.entity_id.as_str())));
    }

    #[test]
    fn synthesis() {
        let names = vec!["John Smith".to_string(), "Ann Lee".to_string()];
        let clean = synthesize_names(&names, &NoiseConfig::none(1), 2).unwrap();
        assert_eq!(clean.len(), 6);
        assert!(clean.iter().all(|r| r.text == names[r.entity_id[1..].parse::<usize>().unwrap()]));
        let swap = NoiseConfig { record_error_prob: 1.0, word_swap_prob: 1.0, ..NoiseConfig::none(1) };
        let out = synthesize_names(&names[..1], &swap, 1).unwrap();
        assert_eq!(out[1].text, "Smith John");
        let strong = NoiseConfig::strong(5);
        assert_eq!(synthesize_names(&names, &strong, 3).unwrap(), synthesize_names(&names, &strong, 3).unwrap());
        assert!(synthesize_names(&names, &NoiseConfig { word_swap_prob: 1.5, ..strong }, 1).is_err());
    }

    #[test]
    fn names_and_addresses() {
        let a = sample_person_names(200, 4).unwrap();
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 200);
        assert_eq!(a, sample_person_names(200, 4).unwrap());
        let addr = synthesize_addresses(3, 2, 2, 9).unwrap();
        assert_eq!(addr.len(), 18);
        for r in &addr {
            let num: String = r.text.chars().take_while(|c| c.is_ascii_digit()).collect();
            assert!(!num.is_empty());
        }
    }
}
