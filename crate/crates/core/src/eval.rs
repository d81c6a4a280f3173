//! Duplicate-detection metrics and the ablation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{generate_pairs, split_records, LabeledPair, Record, SamplingConfig};
use crate::edits::EditOp;
use crate::error::{Error, Result};
use crate::features::{build_lexicon, FeatureSet};
use crate::lattice::Beam;
use crate::model::{FsmModel, Label, TyingScheme};
use crate::training::{em_train, init_params, score_pairs, InferenceMode, TrainConfig};

/// One scored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub pair_id: String,
    pub p_match: f64,
    pub z: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn add(&mut self, predicted: bool, z: Label) {
        match (predicted, z) {
            (true, Label::Match) => self.tp += 1,
            (true, Label::Mismatch) => self.fp += 1,
            (false, Label::Match) => self.fn_ += 1,
            (false, Label::Mismatch) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Precision, recall and F1. `empty_positive` flags the case with no
/// true and no predicted positives, where F1 is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty_positive: bool,
}

pub fn prf(c: &Counts) -> Prf {
    let precision = if c.tp + c.fp == 0 { 1.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    let empty_positive = c.tp + c.fp + c.fn_ == 0;
    let f1 = if empty_positive || precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
        empty_positive,
    }
}

pub fn f1(c: &Counts) -> f64 {
    prf(c).f1
}

fn check_probabilities(scores: &[Scored]) -> Result<()> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(&s.p_match)) {
        Some(s) => Err(Error::invalid(format!("pair `{}` has probability {} outside [0, 1]", s.pair_id, s.p_match))),
        None => Ok(()),
    }
}

/// Predicts a match iff `p_match > threshold`.
pub fn classify(scores: &[Scored], threshold: f64) -> Result<Counts> {
    check_probabilities(scores)?;
    let mut c = Counts::default();
    for s in scores {
        c.add(s.p_match > threshold, s.z);
    }
    Ok(c)
}

/// Like [`classify`], then closes predicted matches transitively over the
/// record ids encoded in `a|b` pair ids.
pub fn classify_transitive(scores: &[Scored], threshold: f64) -> Result<Counts> {
    check_probabilities(scores)?;
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let ends: Vec<Option<(usize, usize)>> = scores
        .iter()
        .map(|s| {
            s.pair_id.split_once('|').map(|(a, b)| {
                let n = ids.len();
                let a = *ids.entry(a).or_insert(n);
                let n = ids.len();
                let b = *ids.entry(b).or_insert(n);
                (a, b)
            })
        })
        .collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    for (s, e) in scores.iter().zip(&ends) {
        if let (true, Some((a, b))) = (s.p_match > threshold, e) {
            let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut c = Counts::default();
    for (s, e) in scores.iter().zip(&ends) {
        let predicted = match e {
            Some((a, b)) => find(&mut parent, *a) == find(&mut parent, *b),
            None => s.p_match > threshold,
        };
        c.add(predicted, s.z);
    }
    Ok(c)
}

/// Best F1 over all thresholds, with the threshold achieving it (predict
/// a match for every pair scoring at least that value).
pub fn max_f1(scores: &[Scored]) -> (f64, f64) {
    let mut order: Vec<&Scored> = scores.iter().collect();
    order.sort_by(|a, b| b.p_match.total_cmp(&a.p_match));
    let positives = scores.iter().filter(|s| s.z == Label::Match).count();
    let mut best = (0.0, 1.0);
    let mut tp = 0usize;
    for (k, s) in order.iter().enumerate() {
        if s.z == Label::Match {
            tp += 1;
        }
        // only cut between distinct scores
        if order.get(k + 1).is_some_and(|n| n.p_match == s.p_match) {
            continue;
        }
        let c = Counts { tp, fp: k + 1 - tp, fn_: positives - tp, tn: 0 };
        let f = f1(&c);
        if f > best.0 {
            best = (f, s.p_match);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Number of most-confident pairs covered.
    pub covered: usize,
    pub coverage: f64,
    pub accuracy: f64,
}

/// Accuracy of thresholded predictions over each prefix of the pairs
/// sorted by descending `p_match` (ties by pair id).
pub fn accuracy_coverage(scores: &[Scored], threshold: f64) -> Vec<CurvePoint> {
    let mut order: Vec<&Scored> = scores.iter().collect();
    order.sort_by(|a, b| b.p_match.total_cmp(&a.p_match).then_with(|| a.pair_id.cmp(&b.pair_id)));
    let n = order.len();
    let mut right = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if (s.p_match > threshold) == (s.z == Label::Match) {
                right += 1;
            }
            CurvePoint {
                covered: k + 1,
                coverage: (k + 1) as f64 / n as f64,
                accuracy: right as f64 / (k + 1) as f64,
            }
        })
        .collect()
}

/// Scores pairs with a model. Failed pairs are returned separately.
pub fn score(model: &FsmModel, pairs: &[LabeledPair], beam: Beam, mode: InferenceMode) -> (Vec<Scored>, Vec<(String, Error)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in pairs.iter().zip(score_pairs(model, pairs, beam, mode)) {
        match r {
            Ok(v) => ok.push(Scored {
                pair_id: p.pair_id.clone(),
                p_match: v,
                z: p.z,
            }),
            Err(e) => failed.push((p.pair_id.clone(), e)),
        }
    }
    (ok, failed)
}

// ---- ablation ----

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub features: FeatureSet,
    pub ops: Vec<EditOp>,
    pub order: TyingScheme,
    pub inference: InferenceMode,
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// One entity-level split of the records per seed.
    pub split_seeds: Vec<u64>,
    pub fraction: f64,
    /// Also train on the test fold and test on the train fold.
    pub swap_folds: bool,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub threshold: f64,
    pub transitive_closure: bool,
    /// Size of the frequent-word lexicon built from training text.
    pub lexicon_size: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            split_seeds: vec![0],
            fraction: 0.5,
            swap_folds: true,
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            threshold: 0.5,
            transitive_closure: false,
            lexicon_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub fold_f1: Vec<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub error: Option<String>,
}

/// Trains one variant on `train` and returns its counts on `test`.
pub fn train_and_test(
    variant: &Variant,
    train: &[LabeledPair],
    test: &[LabeledPair],
    cfg: &AblationConfig,
) -> Result<Counts> {
    let lexicons = if variant.ops.iter().any(|o| o.uses_lexicon()) {
        let texts = train.iter().flat_map(|p| [p.x.as_str(), p.y.as_str()]);
        vec![build_lexicon(texts, cfg.lexicon_size, &Default::default())?]
    } else {
        vec![]
    };
    let model = FsmModel::default_for(&variant.ops, variant.order, variant.features.clone(), lexicons)?;
    let init = init_params(&model, &cfg.train.init)?;
    let model = model.with_params(init)?;
    let tc = TrainConfig {
        inference: variant.inference,
        ..cfg.train.clone()
    };
    let state = em_train(&model, train, &tc)?;
    let model = model.with_params(state.params)?;
    let (scored, failed) = score(&model, test, cfg.train.beam, variant.inference);
    if let Some((_, e)) = failed.into_iter().next() {
        return Err(e);
    }
    if cfg.transitive_closure {
        classify_transitive(&scored, cfg.threshold)
    } else {
        classify(&scored, cfg.threshold)
    }
}

/// Trains and evaluates every variant on identical folds. A failing
/// variant gets an error row; the others are unaffected.
pub fn run_ablation(records: &[Record], variants: &[Variant], cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::invalid("no variants given"));
    }
    if cfg.split_seeds.is_empty() {
        return Err(Error::invalid("at least one split seed is required"));
    }
    let mut folds = Vec::new();
    for &seed in &cfg.split_seeds {
        let (a, b) = split_records(records, cfg.fraction, seed)?;
        let sampling = SamplingConfig { seed, ..cfg.sampling };
        let pa = generate_pairs(&a, &sampling)?;
        let pb = generate_pairs(&b, &sampling)?;
        if cfg.swap_folds {
            folds.push((pb.clone(), pa.clone()));
        }
        folds.push((pa, pb));
    }
    let mut rows = Vec::new();
    for v in variants {
        let mut fold_f1 = Vec::new();
        let mut sums = (0.0, 0.0);
        let mut error = None;
        for (train, test) in &folds {
            match train_and_test(v, train, test, cfg) {
                Ok(c) => {
                    let m = prf(&c);
                    log::info!("variant={} tp={} fp={} fn={} tn={} f1={:.4}", v.name, c.tp, c.fp, c.fn_, c.tn, m.f1);
                    fold_f1.push(m.f1);
                    sums.0 += m.precision;
                    sums.1 += m.recall;
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let n = fold_f1.len().max(1) as f64;
        rows.push(AblationRow {
            name: v.name.clone(),
            f1: if error.is_some() { f64::NAN } else { fold_f1.iter().sum::<f64>() / n },
            precision: sums.0 / n,
            recall: sums.1 / n,
            fold_f1,
            error,
        });
    }
    Ok(rows)
}

pub fn render_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tf1\tprecision\trecall\tfold_f1\terror\n");
    for r in rows {
        let folds: Vec<String> = r.fold_f1.iter().map(|f| format!("{f:.4}")).collect();
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            r.name,
            r.f1,
            r.precision,
            r.recall,
            folds.join(","),
            r.error.as_deref().unwrap_or("")
        );
    }
    s
}

/// Aligned-column text table.
pub fn render_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("variant".len());
    let mut s = format!("{:<width$}  {:>6}  {:>9}  {:>6}\n", "variant", "F1", "precision", "recall");
    for r in rows {
        match &r.error {
            Some(e) => {
                let _ = writeln!(s, "{:<width$}  failed: {e}", r.name);
            }
            None => {
                let _ = writeln!(s, "{:<width$}  {:>6.3}  {:>9.3}  {:>6.3}", r.name, r.f1, r.precision, r.recall);
            }
        }
    }
    s
}
