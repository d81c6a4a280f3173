//! Penalized maximum-likelihood training with latent alignments.
//!
//! The objective is the incomplete log-likelihood of the labels,
//! `L_I = Σ_j log p(z_j | x_j, y_j)`, minus the Gaussian penalty
//! `Σ_k λ_k² / σ²`. EM alternates clamped expectations (E-step) with an
//! L-BFGS ascent on the expected complete log-likelihood (M-step).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::LabeledPair;
use crate::edits::EditOp;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, Predicate};
use crate::lattice::{log_add_exp, posterior_from, Beam, Constraint, Scorer, Skeleton};
use crate::model::{FsmModel, Label, ParameterVector, Subset, TyingScheme};
use crate::optim::{self, LbfgsConfig};

/// Pairs per fixed reduction chunk; sums never depend on thread count.
const CHUNK: usize = 32;

/// How expectations and scores are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceMode {
    /// Sum over all alignments.
    #[default]
    ForwardBackward,
    /// Use the single best alignment in each subset.
    Viterbi,
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fb" | "forward-backward" => Ok(InferenceMode::ForwardBackward),
            "viterbi" => Ok(InferenceMode::Viterbi),
            _ => Err(Error::invalid(format!("unknown inference mode `{s}` (expected fb or viterbi)"))),
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::ForwardBackward => "fb",
            InferenceMode::Viterbi => "viterbi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    Em,
    /// L-BFGS directly on the penalized incomplete log-likelihood.
    Direct,
}

/// Hand-set match-side weights per op and predicate, and the shrink
/// constant used to derive the mismatch side.
#[derive(Debug, Clone, PartialEq)]
pub struct InitScheme {
    pub table: BTreeMap<EditOp, BTreeMap<Predicate, f64>>,
    pub shrink: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        use Predicate::*;
        let mut table = BTreeMap::new();
        for op in crate::edits::registry() {
            let mut w = BTreeMap::new();
            match op {
                EditOp::Substitute => {
                    for p in [Same, SameAlphabetic, SameNumeric] {
                        w.insert(p, 1.0);
                    }
                    for p in [Different, DifferentAlphabetic, DifferentNumeric] {
                        w.insert(p, -1.0);
                    }
                }
                EditOp::Insert | EditOp::Delete => {
                    w.insert(Bias, -0.5);
                }
                op if op.is_word_level() => {
                    w.insert(Bias, -0.2);
                }
                _ => {}
            }
            table.insert(op, w);
        }
        InitScheme { table, shrink: 0.1 }
    }
}

fn shrink(v: f64, c: f64) -> f64 {
    if v > 0.0 {
        (v - c).max(0.0)
    } else if v < 0.0 {
        (v + c).min(0.0)
    } else {
        0.0
    }
}

/// Match groups get the hand-set table; mismatch groups get each value
/// moved toward zero by the shrink constant.
pub fn init_params(model: &FsmModel, scheme: &InitScheme) -> Result<ParameterVector> {
    if !scheme.shrink.is_finite() || scheme.shrink < 0.0 {
        return Err(Error::invalid("shrink constant must be finite and >= 0"));
    }
    let preds = model.features().predicates();
    let mut w = vec![0.0; model.dimension()];
    for g in 0..model.n_groups() {
        let info = model.group_info(g);
        let row = scheme
            .table
            .get(&info.op)
            .ok_or_else(|| Error::invalid(format!("init table has no entry for `{}`", info.op)))?;
        for (slot, p) in preds.iter().enumerate() {
            let v = row.get(p).copied().unwrap_or(0.0);
            w[g * preds.len() + slot] = match info.subset {
                Subset::Mismatch => shrink(v, scheme.shrink),
                _ => v,
            };
        }
    }
    Ok(ParameterVector(w))
}

/// The first-order insert/delete/substitute model with hand-set weights.
pub fn handset_model() -> Result<FsmModel> {
    let ops = [EditOp::Insert, EditOp::Delete, EditOp::Substitute];
    let m = FsmModel::default_for(&ops, TyingScheme::FirstOrder, FeatureSet::all(), vec![])?;
    let p = init_params(&m, &InitScheme::default())?;
    m.with_params(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma2: f64,
    pub em_max_iters: usize,
    /// Relative improvement in penalized `L_I` below which EM stops.
    pub em_tol: f64,
    pub mstep_max_iters: usize,
    pub mstep_grad_tol: f64,
    pub init: InitScheme,
    pub beam: Beam,
    pub seed: u64,
    pub mode: TrainMode,
    pub inference: InferenceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma2: 10.0,
            em_max_iters: 30,
            em_tol: 1e-5,
            mstep_max_iters: 30,
            mstep_grad_tol: 1e-3,
            init: InitScheme::default(),
            beam: Beam::Unlimited,
            seed: 0,
            mode: TrainMode::Em,
            inference: InferenceMode::ForwardBackward,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid("sigma2 must be a positive number"));
        }
        if !(self.em_tol > 0.0) || !(self.mstep_grad_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }
}

/// One training log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub loglik_pen: f64,
    pub grad_inf: f64,
    pub wall_ms: u128,
}

impl fmt::Display for IterLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} loglik_pen={:.10} grad_inf={:.6e} wall_ms={}",
            self.iter, self.loglik_pen, self.grad_inf, self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParameterVector,
    /// `(iteration, penalized L_I)`; entry 0 is the starting point.
    pub history: Vec<(usize, f64)>,
    pub log: Vec<IterLog>,
    pub converged: bool,
}

/// Pairs with their weight-independent lattice structure.
pub struct Corpus {
    ids: Vec<String>,
    labels: Vec<Label>,
    skeletons: Vec<Skeleton>,
}

impl Corpus {
    pub fn prepare(model: &FsmModel, pairs: &[LabeledPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        let skeletons = pairs
            .par_iter()
            .map(|p| Skeleton::new(model, &p.x, &p.y).map_err(|e| e.in_pair(&p.pair_id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            ids: pairs.iter().map(|p| p.pair_id.clone()).collect(),
            labels: pairs.iter().map(|p| p.z).collect(),
            skeletons,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Per-pair quantities at one weight vector.
struct PairStats {
    /// log-normalizer over all alignments (`log Z`, or the hard analogue)
    log_z: f64,
    /// log-normalizer restricted to the true label's subset
    log_zc: f64,
    all: Vec<f64>,
    clamped: Vec<f64>,
}

fn numerical(pair_id: &str, message: &str) -> Error {
    Error::Numerical {
        pair_id: pair_id.to_string(),
        message: message.to_string(),
    }
}

fn pair_stats(
    model: &FsmModel,
    w: &[f64],
    sk: &Skeleton,
    label: Label,
    beam: Beam,
    mode: InferenceMode,
    clamp: bool,
    pair_id: &str,
) -> Result<PairStats> {
    let s = Scorer::new(model, w);
    let stats = match mode {
        InferenceMode::ForwardBackward => {
            let mut lat = s.forward(sk, beam);
            s.backward(sk, &mut lat);
            let log_z = lat.log_partition().map_err(|e| e.in_pair(pair_id))?;
            if !clamp {
                // only log Z and unconstrained expectations are needed
                let all = s.expected_counts(sk, &lat, Constraint::All).map_err(|e| e.in_pair(pair_id))?;
                PairStats { log_z, log_zc: log_z, all, clamped: Vec::new() }
            } else {
                let log_zc = lat.constrained_log_partition(label).map_err(|e| e.in_pair(pair_id))?;
                let (all, clamped) = s.expected_counts_pair(sk, &lat, label).map_err(|e| e.in_pair(pair_id))?;
                PairStats { log_z, log_zc, all, clamped }
            }
        }
        InferenceMode::Viterbi => {
            let [a0, a1] = s.viterbi_both(sk);
            let (a0, a1) = match (a0, a1) {
                (Some(a0), Some(a1)) => (a0, a1),
                _ => return Err(Error::NoPath(None).in_pair(pair_id)),
            };
            let log_z = log_add_exp(a0.score, a1.score);
            let (p0, p1) = ((a0.score - log_z).exp(), (a1.score - log_z).exp());
            let c0 = s.alignment_counts(sk, &a0)?;
            let c1 = s.alignment_counts(sk, &a1)?;
            let all = c0.iter().zip(&c1).map(|(u, v)| p0 * u + p1 * v).collect();
            let (log_zc, clamped) = match label {
                Label::Match => (a1.score, c1),
                Label::Mismatch => (a0.score, c0),
            };
            PairStats { log_z, log_zc, all, clamped }
        }
    };
    if !stats.log_z.is_finite() || !stats.log_zc.is_finite() {
        return Err(numerical(pair_id, "non-finite log-partition"));
    }
    if stats.all.iter().chain(&stats.clamped).any(|v| !v.is_finite()) {
        return Err(numerical(pair_id, "non-finite expected counts"));
    }
    Ok(stats)
}

/// Corpus sums at one weight vector.
#[derive(Debug, Clone)]
struct Totals {
    /// Σ log p(z_j | x_j, y_j)
    loglik: f64,
    /// Σ log Z_j
    log_z: f64,
    all: Vec<f64>,
    clamped: Vec<f64>,
}

fn totals(model: &FsmModel, w: &[f64], corpus: &Corpus, beam: Beam, mode: InferenceMode, clamp: bool) -> Result<Totals> {
    let dim = w.len();
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let partial = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = Totals {
                loglik: 0.0,
                log_z: 0.0,
                all: vec![0.0; dim],
                clamped: vec![0.0; dim],
            };
            for &k in chunk {
                let s = pair_stats(model, w, &corpus.skeletons[k], corpus.labels[k], beam, mode, clamp, &corpus.ids[k])?;
                t.loglik += s.log_zc - s.log_z;
                t.log_z += s.log_z;
                for (a, b) in t.all.iter_mut().zip(&s.all) {
                    *a += b;
                }
                for (a, b) in t.clamped.iter_mut().zip(&s.clamped) {
                    *a += b;
                }
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = partial.into_iter();
    let mut acc = it.next().expect("corpus is non-empty");
    for t in it {
        acc.loglik += t.loglik;
        acc.log_z += t.log_z;
        for (a, b) in acc.all.iter_mut().zip(&t.all) {
            *a += b;
        }
        for (a, b) in acc.clamped.iter_mut().zip(&t.clamped) {
            *a += b;
        }
    }
    Ok(acc)
}

fn penalty(w: &[f64], sigma2: f64) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>() / sigma2
}

/// Penalized `L_I` and its gradient `clamped - expected - 2Λ/σ²`.
fn loglik_and_grad(
    model: &FsmModel,
    w: &[f64],
    corpus: &Corpus,
    sigma2: f64,
    beam: Beam,
    mode: InferenceMode,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let t = totals(model, w, corpus, beam, mode, true)?;
    let grad = (0..w.len()).map(|k| t.clamped[k] - t.all[k] - 2.0 * w[k] / sigma2).collect();
    Ok((t.loglik - penalty(w, sigma2), grad, t.clamped))
}

/// `L_I`, penalized or not, at the model's own weights.
pub fn incomplete_loglik(model: &FsmModel, pairs: &[LabeledPair], sigma2: Option<f64>) -> Result<f64> {
    let corpus = Corpus::prepare(model, pairs)?;
    let w = model.params.as_slice();
    let t = totals(model, w, &corpus, Beam::Unlimited, InferenceMode::ForwardBackward, true)?;
    Ok(match sigma2 {
        Some(s) => t.loglik - penalty(w, s),
        None => t.loglik,
    })
}

/// Aggregate expected counts clamped to each pair's true label.
pub fn e_step(model: &FsmModel, corpus: &Corpus, config: &TrainConfig) -> Result<Vec<f64>> {
    let w = model.params.as_slice();
    Ok(totals(model, w, corpus, config.beam, config.inference, true)?.clamped)
}

/// Maximizes `Q(Λ) = ⟨C, Λ⟩ - Σ_j log Z_Λ(x_j, y_j) - Σ λ²/σ²` from the
/// model's current weights. Never returns a point with lower `Q`.
pub fn m_step(model: &FsmModel, clamped: &[f64], corpus: &Corpus, config: &TrainConfig) -> Result<ParameterVector> {
    if clamped.len() != model.dimension() {
        return Err(Error::invalid("clamped count vector has the wrong dimension"));
    }
    let q = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let t = totals(model, w, corpus, config.beam, config.inference, false)?;
        let value = optim::dot(clamped, w) - t.log_z - penalty(w, config.sigma2);
        let grad = (0..w.len())
            .map(|k| clamped[k] - t.all[k] - 2.0 * w[k] / config.sigma2)
            .collect();
        Ok((value, grad))
    };
    let cfg = LbfgsConfig {
        max_iters: config.mstep_max_iters,
        grad_tol: config.mstep_grad_tol,
        ..LbfgsConfig::default()
    };
    let out = optim::maximize(model.params.0.clone(), cfg, q, |_, _, _| {})?;
    Ok(ParameterVector(out.x))
}

/// Trains from the model's current weights (normally [`init_params`]).
pub fn em_train(model: &FsmModel, pairs: &[LabeledPair], config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let corpus = Corpus::prepare(model, pairs)?;
    let has = |l: Label| pairs.iter().any(|p| p.z == l);
    if !has(Label::Match) || !has(Label::Mismatch) {
        log::warn!("training corpus lacks one of the labels");
    }
    match config.mode {
        TrainMode::Em => em_loop(model, &corpus, config),
        TrainMode::Direct => direct(model, &corpus, config),
    }
}

fn em_loop(model: &FsmModel, corpus: &Corpus, config: &TrainConfig) -> Result<TrainState> {
    let start = Instant::now();
    let mut current = model.clone();
    let mut state = TrainState {
        params: current.params.clone(),
        history: Vec::new(),
        log: Vec::new(),
        converged: false,
    };
    let mut iter = 0;
    loop {
        let (l, grad, clamped) = loglik_and_grad(
            &current,
            current.params.as_slice(),
            corpus,
            config.sigma2,
            config.beam,
            config.inference,
        )?;
        let entry = IterLog {
            iter,
            loglik_pen: l,
            grad_inf: optim::norm_inf(&grad),
            wall_ms: start.elapsed().as_millis(),
        };
        log::info!("{entry}");
        if let Some(&(_, prev)) = state.history.last() {
            let rel = (l - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.em_tol {
                state.converged = true;
            }
        }
        state.history.push((iter, l));
        state.log.push(entry);
        state.params = current.params.clone();
        if state.converged || iter >= config.em_max_iters {
            break;
        }
        let next = m_step(&current, &clamped, corpus, config)?;
        current.params = next;
        iter += 1;
    }
    Ok(state)
}

fn direct(model: &FsmModel, corpus: &Corpus, config: &TrainConfig) -> Result<TrainState> {
    let start = Instant::now();
    let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = loglik_and_grad(model, w, corpus, config.sigma2, config.beam, config.inference)?;
        Ok((l, g))
    };
    let (l0, g0) = f(model.params.as_slice())?;
    let mut log = vec![IterLog {
        iter: 0,
        loglik_pen: l0,
        grad_inf: optim::norm_inf(&g0),
        wall_ms: start.elapsed().as_millis(),
    }];
    log::info!("{}", log[0]);
    let cfg = LbfgsConfig {
        max_iters: config.mstep_max_iters * config.em_max_iters,
        grad_tol: config.mstep_grad_tol,
        ..LbfgsConfig::default()
    };
    let out = optim::maximize(model.params.0.clone(), cfg, f, |iter, value, grad| {
        let entry = IterLog {
            iter,
            loglik_pen: value,
            grad_inf: optim::norm_inf(grad),
            wall_ms: start.elapsed().as_millis(),
        };
        log::info!("{entry}");
        log.push(entry);
    })?;
    Ok(TrainState {
        params: ParameterVector(out.x),
        history: log.iter().map(|e| (e.iter, e.loglik_pen)).collect(),
        log,
        converged: out.converged,
    })
}

/// Posterior match probabilities, in corpus order.
pub fn score_pairs(model: &FsmModel, pairs: &[LabeledPair], beam: Beam, mode: InferenceMode) -> Vec<Result<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let sk = Skeleton::new(model, &p.x, &p.y).map_err(|e| e.in_pair(&p.pair_id))?;
            let s = Scorer::of(model);
            match mode {
                InferenceMode::ForwardBackward => posterior_from(&s.forward(&sk, beam)).map_err(|e| e.in_pair(&p.pair_id)),
                InferenceMode::Viterbi => match s.viterbi_both(&sk) {
                    [Some(a0), Some(a1)] => Ok(1.0 / (1.0 + (a0.score - a1.score).exp())),
                    [None, Some(_)] => Ok(1.0),
                    [Some(_), None] => Ok(0.0),
                    [None, None] => Err(Error::NoPath(None).in_pair(&p.pair_id)),
                },
            }
        })
        .collect()
}

/// Largest relative difference between the analytic gradient of penalized
/// `L_I` and central finite differences with step `h`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &FsmModel, pairs: &[LabeledPair], h: f64, sigma2: f64) -> Result<f64> {
    if pairs.iter().any(|p| p.x.chars().count() > 4 || p.y.chars().count() > 4) {
        return Err(Error::invalid("gradient check is limited to strings of length <= 4"));
    }
    if model.ops().iter().any(|o| o.is_word_level()) {
        return Err(Error::invalid("gradient check does not support word-level edits"));
    }
    let corpus = Corpus::prepare(model, pairs)?;
    let fb = InferenceMode::ForwardBackward;
    let w0 = model.params.0.clone();
    let (_, grad, _) = loglik_and_grad(model, &w0, &corpus, sigma2, Beam::Unlimited, fb)?;
    let mut worst: f64 = 0.0;
    let mut w = w0.clone();
    for k in 0..w0.len() {
        w[k] = w0[k] + h;
        let up = loglik_and_grad(model, &w, &corpus, sigma2, Beam::Unlimited, fb)?.0;
        w[k] = w0[k] - h;
        let down = loglik_and_grad(model, &w, &corpus, sigma2, Beam::Unlimited, fb)?.0;
        w[k] = w0[k];
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Fraction of pairs whose thresholded posterior equals the label.
pub fn training_accuracy(model: &FsmModel, pairs: &[LabeledPair], threshold: f64) -> Result<f64> {
    let scores = score_pairs(model, pairs, Beam::Unlimited, InferenceMode::ForwardBackward);
    let mut right = 0usize;
    for (p, s) in pairs.iter().zip(scores) {
        if (s? > threshold) == (p.z == Label::Match) {
            right += 1;
        }
    }
    Ok(right as f64 / pairs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{enumerate_alignments, expected_feature_counts, Constraint};
    use crate::model::StateId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const IDS: [EditOp; 3] = [EditOp::Insert, EditOp::Delete, EditOp::Substitute];

    fn zero_model() -> FsmModel {
        FsmModel::default_for(&IDS, TyingScheme::FirstOrder, FeatureSet::all(), vec![]).unwrap()
    }

    fn toy() -> Vec<LabeledPair> {
        (0..10)
            .flat_map(|k| {
                [
                    LabeledPair::new(format!("m{k}"), "aa", "aa", Label::Match),
                    LabeledPair::new(format!("n{k}"), "aa", "bb", Label::Mismatch),
                ]
            })
            .collect()
    }

    #[test]
    fn init_shrink() {
        let m = zero_model();
        let scheme = InitScheme::default();
        let p = init_params(&m, &scheme).unwrap();
        for g in 0..m.n_groups() {
            let info = m.group_info(g);
            if info.op == EditOp::Substitute {
                let k = m.feature_id(g, Predicate::Same).unwrap();
                let expect = if info.subset == Subset::Match { 1.0 } else { 0.9 };
                assert!((p.0[k] - expect).abs() < 1e-15);
            }
        }
        let mut tiny = scheme.clone();
        tiny.table.get_mut(&EditOp::Insert).unwrap().insert(Predicate::Bias, -0.05);
        let p = init_params(&m, &tiny).unwrap();
        for g in 0..m.n_groups() {
            let info = m.group_info(g);
            if info.op == EditOp::Insert && info.subset == Subset::Mismatch {
                assert_eq!(p.0[m.feature_id(g, Predicate::Bias).unwrap()], 0.0);
            }
        }
        let mut missing = scheme.clone();
        missing.table.remove(&EditOp::Delete);
        assert!(init_params(&m, &missing).is_err());
    }

    #[test]
    fn zero_shrink_is_symmetric() {
        let m = zero_model();
        let scheme = InitScheme { shrink: 0.0, ..InitScheme::default() };
        let m = m.clone().with_params(init_params(&m, &scheme).unwrap()).unwrap();
        for (x, y) in [("ab", "b"), ("abc", "abd"), ("a", "")] {
            let p = crate::lattice::posterior_match(&m, x, y).unwrap();
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn loglik_at_zero() {
        let m = zero_model();
        let pairs = vec![LabeledPair::new("a", "ab", "b", Label::Match), LabeledPair::new("b", "x", "yz", Label::Mismatch)];
        let l = incomplete_loglik(&m, &pairs, None).unwrap();
        assert!((l - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(incomplete_loglik(&m, &pairs, Some(10.0)).unwrap(), l);
        let bad = vec![LabeledPair::new("empty", "", "", Label::Match)];
        let err = incomplete_loglik(&m, &bad, None).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn clamped_counts_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = zero_model();
        for w in &mut m.params.0 {
            *w = rng.random_range(-1.0..1.0);
        }
        let pair = LabeledPair::new("p", "ab", "ba", Label::Match);
        let corpus = Corpus::prepare(&m, std::slice::from_ref(&pair)).unwrap();
        let agg = e_step(&m, &corpus, &TrainConfig::default()).unwrap();
        // brute force: weight every S1 alignment by its normalized potential
        let all = enumerate_alignments(&m, "ab", "ba").unwrap();
        let s1: Vec<_> = all.iter().filter(|a| a.label(&m) == Some(Label::Match)).collect();
        let lz = crate::lattice::log_sum_exp(&s1.iter().map(|a| a.score).collect::<Vec<_>>());
        let sk = Skeleton::new(&m, "ab", "ba").unwrap();
        let mut oracle = vec![0.0; m.dimension()];
        for a in s1 {
            let c = Scorer::of(&m).alignment_counts(&sk, a).unwrap();
            let p = (a.score - lz).exp();
            for (o, v) in oracle.iter_mut().zip(c) {
                *o += p * v;
            }
        }
        for (a, b) in agg.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        let direct = expected_feature_counts(&m, "ab", "ba", Constraint::Label(Label::Match)).unwrap();
        assert_eq!(agg, direct);
        let _ = StateId::INITIAL;
    }

    #[test]
    fn gradient_at_zero_and_finite_differences() {
        let m = zero_model();
        let pairs = vec![LabeledPair::new("p", "ab", "b", Label::Match)];
        let corpus = Corpus::prepare(&m, &pairs).unwrap();
        let fb = InferenceMode::ForwardBackward;
        let (_, grad, clamped) = loglik_and_grad(&m, &m.params.0, &corpus, 10.0, Beam::Unlimited, fb).unwrap();
        let all = expected_feature_counts(&m, "ab", "b", Constraint::All).unwrap();
        for k in 0..grad.len() {
            assert!((grad[k] - (clamped[k] - all[k])).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = zero_model();
        for w in &mut r.params.0 {
            *w = rng.random_range(-1.0..1.0);
        }
        let pairs = vec![
            LabeledPair::new("1", "ab", "ab", Label::Match),
            LabeledPair::new("2", "a1", "b", Label::Mismatch),
        ];
        assert!(grad_check(&r, &pairs, 1e-5, 10.0).unwrap() <= 1e-4);
    }

    #[test]
    fn em_toy_monotone_and_separates() {
        let m = zero_model();
        let m = m.clone().with_params(init_params(&m, &InitScheme::default()).unwrap()).unwrap();
        let cfg = TrainConfig { em_max_iters: 50, ..TrainConfig::default() };
        let st = em_train(&m, &toy(), &cfg).unwrap();
        for w in st.history.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-6, "{:?}", st.history);
        }
        let trained = m.clone().with_params(st.params.clone()).unwrap();
        assert_eq!(training_accuracy(&trained, &toy(), 0.5).unwrap(), 1.0);
        // zero iterations return the start
        let z = em_train(&m, &toy(), &TrainConfig { em_max_iters: 0, ..cfg.clone() }).unwrap();
        assert_eq!(z.params, m.params);
        assert_eq!(z.history.len(), 1);
        // bit-identical trajectory
        let again = em_train(&m, &toy(), &cfg).unwrap();
        assert_eq!(again.params, st.params);
    }

    #[test]
    fn tiny_variance_pins_weights() {
        let m = zero_model();
        let cfg = TrainConfig { sigma2: 1e-6, em_max_iters: 3, ..TrainConfig::default() };
        let st = em_train(&m, &toy(), &cfg).unwrap();
        assert!(st.params.0.iter().all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn direct_and_viterbi_modes_train() {
        let base = zero_model();
        let m = base.clone().with_params(init_params(&base, &InitScheme::default()).unwrap()).unwrap();
        for (mode, inference) in [(TrainMode::Direct, InferenceMode::ForwardBackward), (TrainMode::Em, InferenceMode::Viterbi)] {
            let cfg = TrainConfig { mode, inference, em_max_iters: 10, ..TrainConfig::default() };
            let st = em_train(&m, &toy(), &cfg).unwrap();
            let t = m.clone().with_params(st.params).unwrap();
            let scores = score_pairs(&t, &toy(), Beam::Unlimited, inference);
            for (p, s) in toy().iter().zip(scores) {
                assert_eq!(s.unwrap() > 0.5, p.z == Label::Match);
            }
        }
    }

    #[test]
    fn log_line_format() {
        let e = IterLog { iter: 3, loglik_pen: -1.5, grad_inf: 0.25, wall_ms: 12 };
        let s = e.to_string();
        assert!(s.starts_with("iter=3 loglik_pen=-1.5"));
        assert!(s.contains("grad_inf=") && s.ends_with("wall_ms=12"));
    }
}
