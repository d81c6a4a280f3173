//! Exact inference over the `(i, j, state)` lattice of one string pair.
//!
//! Nodes are visited in order of the anti-diagonal `i + j`; every edit
//! strictly increases it, so a single sweep in each direction suffices.
//! All quantities are natural-log potentials.

use std::cmp::Ordering;

use crate::edits::{EditOp, Landing, Text};
use crate::error::{Error, Result};
use crate::features::extract_text;
use crate::model::{FsmModel, Label, StateId, Subset};

const NONE: u32 = u32::MAX;

/// Per-anti-diagonal beam over lattice nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Beam {
    #[default]
    Unlimited,
    /// Keep at most this many nodes (by forward score) per anti-diagonal.
    Width(usize),
}

impl Beam {
    pub fn width(w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        Ok(Beam::Width(w))
    }
}

/// Which alignments a quantity is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    All,
    Label(Label),
}

impl Constraint {
    fn admits(self, s: Subset) -> bool {
        match self {
            Constraint::All => s != Subset::Initial,
            Constraint::Label(l) => s == l.subset(),
        }
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Weight-independent structure of one pair: which predicates fire at each
/// cell and where each edit lands. Built once per pair and reused across
/// every parameter vector during training.
#[derive(Debug, Clone)]
pub struct Skeleton {
    m: usize,
    n: usize,
    n_ops: usize,
    slot_start: Vec<u32>,
    slots: Vec<u8>,
    // landing cell per (cell, op), NONE when inapplicable
    land: Vec<u32>,
}

impl Skeleton {
    pub fn new(model: &FsmModel, x: &str, y: &str) -> Result<Self> {
        let (tx, ty) = (Text::new(x), Text::new(y));
        Self::from_text(model, &tx, &ty)
    }

    pub(crate) fn from_text(model: &FsmModel, x: &Text, y: &Text) -> Result<Self> {
        let (m, n) = (x.len(), y.len());
        if m == 0 && n == 0 {
            return Err(Error::DegenerateInput);
        }
        let cols = n + 1;
        let cells = (m + 1) * cols;
        let ops = model.ops();
        let mut slot_start = Vec::with_capacity(cells + 1);
        let mut slots = Vec::new();
        let mut land = vec![NONE; cells * ops.len()];
        for i in 0..=m {
            for j in 0..=n {
                let c = i * cols + j;
                slot_start.push(slots.len() as u32);
                slots.extend(model.features().active_slots(x, y, i, j).map(|s| s as u8));
                for (k, op) in ops.iter().enumerate() {
                    if let Some(l) = op.land(x, y, i, j, model.lexicons()) {
                        land[c * ops.len() + k] = (l.i * cols + l.j) as u32;
                    }
                }
            }
        }
        slot_start.push(slots.len() as u32);
        Ok(Skeleton {
            m,
            n,
            n_ops: ops.len(),
            slot_start,
            slots,
            land,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    fn cols(&self) -> usize {
        self.n + 1
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        i * self.cols() + j
    }

    fn cell_pos(&self, c: usize) -> (usize, usize) {
        (c / self.cols(), c % self.cols())
    }

    fn slots(&self, c: usize) -> &[u8] {
        &self.slots[self.slot_start[c] as usize..self.slot_start[c + 1] as usize]
    }

    fn landing(&self, c: usize, op_idx: usize) -> Option<usize> {
        let l = self.land[c * self.n_ops + op_idx];
        (l != NONE).then_some(l as usize)
    }

    /// Cells on anti-diagonal `d`, in increasing `i`.
    fn diagonal(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        let lo = d.saturating_sub(self.n);
        let hi = d.min(self.m);
        (lo..=hi).map(move |i| self.cell(i, d - i))
    }
}

/// Forward (and optionally backward) tables for one pair.
#[derive(Debug, Clone)]
pub struct Lattice {
    m: usize,
    n: usize,
    n_states: usize,
    n_groups: usize,
    subsets: Vec<Subset>,
    alpha: Vec<f64>,
    beta: Option<Vec<f64>>,
    // potential per (cell, group); only read where the group's op applies
    pots: Vec<f64>,
    approximate: bool,
}

impl Lattice {
    fn node(&self, i: usize, j: usize, q: usize) -> usize {
        (i * (self.n + 1) + j) * self.n_states + q
    }

    pub fn alpha(&self, i: usize, j: usize, q: StateId) -> f64 {
        self.alpha[self.node(i, j, q.0)]
    }

    pub fn beta(&self, i: usize, j: usize, q: StateId) -> Option<f64> {
        self.beta.as_ref().map(|b| b[self.node(i, j, q.0)])
    }

    pub fn alpha_table(&self) -> &[f64] {
        &self.alpha
    }

    /// True when beam pruning discarded any node.
    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    fn accepting(&self, c: Constraint) -> f64 {
        let terms: Vec<f64> = (0..self.n_states)
            .filter(|&q| c.admits(self.subsets[q]))
            .map(|q| self.alpha[self.node(self.m, self.n, q)])
            .collect();
        log_sum_exp(&terms)
    }

    /// `log Z`: log-sum over all complete alignments.
    pub fn log_partition(&self) -> Result<f64> {
        let z = self.accepting(Constraint::All);
        if z == f64::NEG_INFINITY {
            return Err(Error::NoPath(None));
        }
        Ok(z)
    }

    /// Log-sum over complete alignments whose states lie in the subset of `label`.
    pub fn constrained_log_partition(&self, label: Label) -> Result<f64> {
        let z = self.accepting(Constraint::Label(label));
        if z == f64::NEG_INFINITY {
            return Err(Error::NoPath(Some(label)));
        }
        Ok(z)
    }

    fn log_norm(&self, c: Constraint) -> Result<f64> {
        match c {
            Constraint::All => self.log_partition(),
            Constraint::Label(l) => self.constrained_log_partition(l),
        }
    }
}

/// Weights bound to a model's structure.
#[derive(Clone)]
pub struct Scorer<'a> {
    model: &'a FsmModel,
    weights: &'a [f64],
    width: usize,
    group_op: Vec<usize>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a FsmModel, weights: &'a [f64]) -> Self {
        debug_assert_eq!(weights.len(), model.dimension());
        let ops = model.ops();
        let group_op = (0..model.n_groups())
            .map(|g| ops.iter().position(|&o| o == model.group_info(g).op).expect("group op is a model op"))
            .collect();
        Scorer {
            model,
            weights,
            width: model.features().len(),
            group_op,
        }
    }

    pub fn of(model: &'a FsmModel) -> Self {
        Scorer::new(model, model.params.as_slice())
    }

    #[inline]
    fn potential(&self, group: usize, slots: &[u8]) -> f64 {
        let w = &self.weights[group * self.width..(group + 1) * self.width];
        slots.iter().map(|&s| w[s as usize]).sum()
    }

    fn potentials(&self, sk: &Skeleton) -> Vec<f64> {
        let ng = self.group_op.len();
        let cells = (sk.m + 1) * sk.cols();
        let mut pots = vec![0.0; cells * ng];
        for c in 0..cells {
            let slots = sk.slots(c);
            for (g, &op) in self.group_op.iter().enumerate() {
                if sk.landing(c, op).is_some() {
                    pots[c * ng + g] = self.potential(g, slots);
                }
            }
        }
        pots
    }

    pub fn forward(&self, sk: &Skeleton, beam: Beam) -> Lattice {
        let ns = self.model.n_states();
        let ng = self.group_op.len();
        let pots = self.potentials(sk);
        let cells = (sk.m + 1) * sk.cols();
        // running log-sum-exp per node: value = top + ln(acc)
        let mut top = vec![f64::NEG_INFINITY; cells * ns];
        let mut acc = vec![0.0f64; cells * ns];
        let mut alpha = vec![f64::NEG_INFINITY; cells * ns];
        top[0] = 0.0;
        acc[0] = 1.0;
        let mut approximate = false;
        let mut live: Vec<(usize, f64)> = Vec::new();
        for d in 0..=sk.m + sk.n {
            for c in sk.diagonal(d) {
                for node in c * ns..(c + 1) * ns {
                    if top[node] > f64::NEG_INFINITY {
                        alpha[node] = top[node] + acc[node].ln();
                    }
                }
            }
            if let Beam::Width(w) = beam {
                live.clear();
                for c in sk.diagonal(d) {
                    for node in c * ns..(c + 1) * ns {
                        if alpha[node] > f64::NEG_INFINITY {
                            live.push((node, alpha[node]));
                        }
                    }
                }
                if live.len() > w {
                    live.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    for &(node, _) in &live[w..] {
                        alpha[node] = f64::NEG_INFINITY;
                    }
                    approximate = true;
                }
            }
            for c in sk.diagonal(d) {
                for q in 0..ns {
                    let a = alpha[c * ns + q];
                    if a == f64::NEG_INFINITY {
                        continue;
                    }
                    for arc in self.model.arcs(q) {
                        if let Some(to_cell) = sk.landing(c, arc.op_idx) {
                            let dst = to_cell * ns + arc.to;
                            let t = a + pots[c * ng + arc.group];
                            if t > top[dst] {
                                acc[dst] = acc[dst] * (top[dst] - t).exp() + 1.0;
                                top[dst] = t;
                            } else {
                                acc[dst] += (t - top[dst]).exp();
                            }
                        }
                    }
                }
            }
        }
        Lattice {
            m: sk.m,
            n: sk.n,
            n_states: ns,
            n_groups: ng,
            subsets: (0..ns).map(|q| self.model.state_subset(q)).collect(),
            alpha,
            beta: None,
            pots,
            approximate,
        }
    }

    /// Fills `beta` over the nodes that survived the forward pass.
    pub fn backward(&self, sk: &Skeleton, lat: &mut Lattice) {
        let (ns, ng) = (lat.n_states, lat.n_groups);
        let mut beta = vec![f64::NEG_INFINITY; lat.alpha.len()];
        let last = sk.cell(sk.m, sk.n);
        for q in 0..ns {
            let node = last * ns + q;
            if lat.subsets[q] != Subset::Initial && lat.alpha[node] > f64::NEG_INFINITY {
                beta[node] = 0.0;
            }
        }
        let mut terms = Vec::new();
        for d in (0..sk.m + sk.n).rev() {
            for c in sk.diagonal(d) {
                for q in 0..ns {
                    if lat.alpha[c * ns + q] == f64::NEG_INFINITY {
                        continue;
                    }
                    terms.clear();
                    for arc in self.model.arcs(q) {
                        if let Some(to_cell) = sk.landing(c, arc.op_idx) {
                            let dst = to_cell * ns + arc.to;
                            if lat.alpha[dst] > f64::NEG_INFINITY && beta[dst] > f64::NEG_INFINITY {
                                terms.push(lat.pots[c * ng + arc.group] + beta[dst]);
                            }
                        }
                    }
                    beta[c * ns + q] = log_sum_exp(&terms);
                }
            }
        }
        lat.beta = Some(beta);
    }

    /// Visits every surviving edge whose source lies on a diagonal in
    /// `diags`, with `alpha(src) + potential + beta(dst)`.
    fn for_each_edge(
        &self,
        sk: &Skeleton,
        lat: &Lattice,
        diags: std::ops::Range<usize>,
        mut f: impl FnMut(usize, usize, Subset, &[u8], f64),
    ) {
        let beta = lat.beta.as_ref().expect("backward pass required");
        let (ns, ng) = (lat.n_states, lat.n_groups);
        for d in diags {
            for c in sk.diagonal(d) {
                let slots = sk.slots(c);
                for q in 0..ns {
                    let a = lat.alpha[c * ns + q];
                    if a == f64::NEG_INFINITY {
                        continue;
                    }
                    for arc in self.model.arcs(q) {
                        if let Some(to_cell) = sk.landing(c, arc.op_idx) {
                            let dst = to_cell * ns + arc.to;
                            let b = beta[dst];
                            if lat.alpha[dst] == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                                continue;
                            }
                            let score = a + lat.pots[c * ng + arc.group] + b;
                            f(arc.group, to_cell, lat.subsets[arc.to], slots, score);
                        }
                    }
                }
            }
        }
    }

    /// Expected feature counts under `constraint`. Needs a backward pass.
    pub fn expected_counts(&self, sk: &Skeleton, lat: &Lattice, constraint: Constraint) -> Result<Vec<f64>> {
        let log_z = lat.log_norm(constraint)?;
        let mut counts = vec![0.0; self.weights.len()];
        self.for_each_edge(sk, lat, 0..sk.m + sk.n, |g, _, subset, slots, score| {
            if constraint.admits(subset) {
                let p = (score - log_z).exp();
                let base = g * self.width;
                for &s in slots {
                    counts[base + s as usize] += p;
                }
            }
        });
        Ok(counts)
    }

    /// Unconstrained and label-clamped expectations from one sweep.
    pub fn expected_counts_pair(&self, sk: &Skeleton, lat: &Lattice, label: Label) -> Result<(Vec<f64>, Vec<f64>)> {
        let log_z = lat.log_partition()?;
        let log_zc = lat.constrained_log_partition(label)?;
        let mut all = vec![0.0; self.weights.len()];
        let mut clamped = vec![0.0; self.weights.len()];
        let target = label.subset();
        self.for_each_edge(sk, lat, 0..sk.m + sk.n, |g, _, subset, slots, score| {
            let base = g * self.width;
            let p = (score - log_z).exp();
            for &s in slots {
                all[base + s as usize] += p;
            }
            if subset == target {
                let pc = (score - log_zc).exp();
                for &s in slots {
                    clamped[base + s as usize] += pc;
                }
            }
        });
        Ok((all, clamped))
    }

    /// Log-mass crossing anti-diagonal `d`: nodes on `d` plus edges jumping
    /// over it. Equals `log Z` for every `d` when the tables are consistent.
    pub fn cut_log_mass(&self, sk: &Skeleton, lat: &Lattice, d: usize) -> f64 {
        let beta = lat.beta.as_ref().expect("backward pass required");
        let mut terms: Vec<f64> = sk
            .diagonal(d)
            .flat_map(|c| (0..lat.n_states).map(move |q| c * lat.n_states + q))
            .map(|node| lat.alpha[node] + beta[node])
            .filter(|v| *v > f64::NEG_INFINITY)
            .collect();
        self.for_each_edge(sk, lat, 0..d, |_, to_cell, _, _, score| {
            let (ti, tj) = sk.cell_pos(to_cell);
            if ti + tj > d {
                terms.push(score);
            }
        });
        log_sum_exp(&terms)
    }

    /// Best complete alignment under `constraint`.
    ///
    /// Ties are broken by shorter alignment, then lexicographic op-name
    /// sequence, then state-id sequence.
    pub fn viterbi(&self, sk: &Skeleton, constraint: Constraint) -> Result<Alignment> {
        let dp = self.viterbi_table(sk);
        dp.best(self.model, sk, constraint).ok_or(Error::NoPath(match constraint {
            Constraint::All => None,
            Constraint::Label(l) => Some(l),
        }))
    }

    /// Best alignment in each subset, indexed by label.
    pub fn viterbi_both(&self, sk: &Skeleton) -> [Option<Alignment>; 2] {
        let dp = self.viterbi_table(sk);
        [
            dp.best(self.model, sk, Constraint::Label(Label::Mismatch)),
            dp.best(self.model, sk, Constraint::Label(Label::Match)),
        ]
    }

    fn viterbi_table(&self, sk: &Skeleton) -> ViterbiTable {
        let ns = self.model.n_states();
        let cells = (sk.m + 1) * sk.cols();
        let mut t = ViterbiTable {
            ns,
            score: vec![f64::NEG_INFINITY; cells * ns],
            len: vec![0; cells * ns],
            back: vec![(NONE, 0); cells * ns],
        };
        t.score[0] = 0.0;
        for d in 0..sk.m + sk.n {
            for c in sk.diagonal(d) {
                let slots = sk.slots(c);
                for q in 0..ns {
                    let node = c * ns + q;
                    let s = t.score[node];
                    if s == f64::NEG_INFINITY {
                        continue;
                    }
                    for arc in self.model.arcs(q) {
                        if let Some(to_cell) = sk.landing(c, arc.op_idx) {
                            let dst = to_cell * ns + arc.to;
                            let cand = s + self.potential(arc.group, slots);
                            let cand_len = t.len[node] + 1;
                            let replace = match cand.total_cmp(&t.score[dst]) {
                                Ordering::Greater => true,
                                Ordering::Less => false,
                                Ordering::Equal => match cand_len.cmp(&t.len[dst]) {
                                    Ordering::Less => true,
                                    Ordering::Greater => false,
                                    Ordering::Equal => {
                                        let ops = self.model.ops();
                                        let mut a = t.path(node, ops);
                                        a.push((ops[arc.op_idx], arc.to));
                                        let b = t.path(dst, ops);
                                        compare_paths(&a, &b) == Ordering::Less
                                    }
                                },
                            };
                            if replace {
                                t.score[dst] = cand;
                                t.len[dst] = cand_len;
                                t.back[dst] = (node as u32, arc.op_idx as u16);
                            }
                        }
                    }
                }
            }
        }
        t
    }

    /// Feature counts along one alignment.
    pub fn alignment_counts(&self, sk: &Skeleton, a: &Alignment) -> Result<Vec<f64>> {
        let mut counts = vec![0.0; self.weights.len()];
        let (mut i, mut j, mut from) = (0, 0, StateId::INITIAL);
        for p in 0..a.len() {
            let t = self
                .model
                .transition_index(from, a.edits[p], a.states[p])
                .ok_or_else(|| Error::invalid("alignment step is not a model transition"))?;
            let base = self.model.group_of(t) * self.width;
            for &s in sk.slots(sk.cell(i, j)) {
                counts[base + s as usize] += 1.0;
            }
            (i, j, from) = (a.ix[p], a.iy[p], a.states[p]);
        }
        Ok(counts)
    }
}

fn compare_paths(a: &[(EditOp, usize)], b: &[(EditOp, usize)]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(|s| s.0.name()).cmp(b.iter().map(|s| s.0.name())))
        .then_with(|| a.iter().map(|s| s.1).cmp(b.iter().map(|s| s.1)))
}

struct ViterbiTable {
    ns: usize,
    score: Vec<f64>,
    len: Vec<u32>,
    back: Vec<(u32, u16)>,
}

impl ViterbiTable {
    /// Steps `(op, destination state)` from the start node to `node`.
    fn path(&self, mut node: usize, ops: &[EditOp]) -> Vec<(EditOp, usize)> {
        let mut steps = Vec::with_capacity(self.len[node] as usize);
        while self.back[node].0 != NONE {
            let (prev, op) = self.back[node];
            steps.push((ops[op as usize], node % self.ns));
            node = prev as usize;
        }
        steps.reverse();
        steps
    }

    fn best(&self, model: &FsmModel, sk: &Skeleton, c: Constraint) -> Option<Alignment> {
        let last = sk.cell(sk.m, sk.n);
        let ops = model.ops();
        let mut best: Option<usize> = None;
        for q in 0..self.ns {
            let node = last * self.ns + q;
            if !c.admits(model.state_subset(q)) || self.score[node] == f64::NEG_INFINITY {
                continue;
            }
            best = match best {
                None => Some(node),
                Some(b) => {
                    let better = match self.score[node].total_cmp(&self.score[b]) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => {
                            compare_paths(&self.path(node, ops), &self.path(b, ops)) == Ordering::Less
                        }
                    };
                    Some(if better { node } else { b })
                }
            };
        }
        let end = best?;
        let mut a = Alignment::default();
        let mut node = end;
        while self.back[node].0 != NONE {
            let (prev, op) = self.back[node];
            let (i, j) = sk.cell_pos(node / self.ns);
            a.edits.push(ops[op as usize]);
            a.ix.push(i);
            a.iy.push(j);
            a.states.push(StateId(node % self.ns));
            node = prev as usize;
        }
        a.edits.reverse();
        a.ix.reverse();
        a.iy.reverse();
        a.states.reverse();
        a.score = self.score[end];
        Some(a)
    }
}

/// An alignment: edits, the positions reached after each edit, and the
/// destination state of each edit, plus its log-potential sum.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Alignment {
    pub edits: Vec<EditOp>,
    pub ix: Vec<usize>,
    pub iy: Vec<usize>,
    pub states: Vec<StateId>,
    pub score: f64,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn label(&self, model: &FsmModel) -> Option<Label> {
        self.states
            .first()
            .and_then(|s| model.topology().subset_of(*s))
            .and_then(Subset::label)
    }
}

// ---- string-level entry points ----

/// Forward pass for `(x, y)` with the model's own weights.
pub fn forward(model: &FsmModel, x: &str, y: &str, beam: Beam) -> Result<Lattice> {
    let sk = Skeleton::new(model, x, y)?;
    Ok(Scorer::of(model).forward(&sk, beam))
}

/// Forward and backward passes (exact).
pub fn backward(model: &FsmModel, x: &str, y: &str) -> Result<Lattice> {
    let sk = Skeleton::new(model, x, y)?;
    let s = Scorer::of(model);
    let mut lat = s.forward(&sk, Beam::Unlimited);
    s.backward(&sk, &mut lat);
    Ok(lat)
}

/// `p(z = 1 | x, y)`.
pub fn posterior_match(model: &FsmModel, x: &str, y: &str) -> Result<f64> {
    let lat = forward(model, x, y, Beam::Unlimited)?;
    posterior_from(&lat)
}

pub(crate) fn posterior_from(lat: &Lattice) -> Result<f64> {
    let z = lat.log_partition()?;
    Ok((lat.accepting(Constraint::Label(Label::Match)) - z).exp())
}

pub fn expected_feature_counts(model: &FsmModel, x: &str, y: &str, c: Constraint) -> Result<Vec<f64>> {
    let sk = Skeleton::new(model, x, y)?;
    let s = Scorer::of(model);
    let mut lat = s.forward(&sk, Beam::Unlimited);
    s.backward(&sk, &mut lat);
    s.expected_counts(&sk, &lat, c)
}

pub fn viterbi(model: &FsmModel, x: &str, y: &str, c: Constraint) -> Result<Alignment> {
    let sk = Skeleton::new(model, x, y)?;
    Scorer::of(model).viterbi(&sk, c)
}

/// `Λ · f` for one edit step.
#[allow(clippy::too_many_arguments)]
pub fn log_potential(
    model: &FsmModel,
    x: &str,
    y: &str,
    i: usize,
    j: usize,
    landing: Landing,
    from: StateId,
    op: EditOp,
    to: StateId,
) -> Result<f64> {
    let f = crate::features::extract(model, x, y, i, j, landing, from, op, to)?;
    Ok(f.dot(model.params.as_slice()))
}

/// Every complete alignment of a tiny pair with its score. A brute-force
/// reference for the dynamic programs; refuses strings longer than 4
/// characters and word-level edits.
pub fn enumerate_alignments(model: &FsmModel, x: &str, y: &str) -> Result<Vec<Alignment>> {
    let (tx, ty) = (Text::new(x), Text::new(y));
    if tx.len() > 4 || ty.len() > 4 {
        return Err(Error::invalid("enumeration is limited to strings of length <= 4"));
    }
    if model.ops().iter().any(|o| o.is_word_level()) {
        return Err(Error::invalid("enumeration does not support word-level edits"));
    }
    if tx.is_empty() && ty.is_empty() {
        return Err(Error::DegenerateInput);
    }
    let mut out = Vec::new();
    let mut cur = Alignment::default();
    enumerate_from(model, &tx, &ty, 0, 0, StateId::INITIAL, &mut cur, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_from(
    model: &FsmModel,
    x: &Text,
    y: &Text,
    i: usize,
    j: usize,
    q: StateId,
    cur: &mut Alignment,
    out: &mut Vec<Alignment>,
) -> Result<()> {
    if i == x.len() && j == y.len() && q != StateId::INITIAL {
        out.push(cur.clone());
        return Ok(());
    }
    for t in &model.topology().transitions {
        if t.from != q {
            continue;
        }
        if let Some(l) = t.op.land(x, y, i, j, model.lexicons()) {
            let f = extract_text(model, x, y, i, j, l, t.from, t.op, t.to)?;
            let step = f.dot(model.params.as_slice());
            cur.edits.push(t.op);
            cur.ix.push(l.i);
            cur.iy.push(l.j);
            cur.states.push(t.to);
            cur.score += step;
            enumerate_from(model, x, y, l.i, l.j, t.to, cur, out)?;
            cur.score -= step;
            cur.edits.pop();
            cur.ix.pop();
            cur.iy.pop();
            cur.states.pop();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureSet, Predicate};
    use crate::model::TyingScheme;

    const IDS: [EditOp; 3] = [EditOp::Insert, EditOp::Delete, EditOp::Substitute];

    fn zero_model() -> FsmModel {
        FsmModel::default_for(&IDS, TyingScheme::FirstOrder, FeatureSet::all(), vec![]).unwrap()
    }

    /// Weight 1 on `same` for substitutions into the match subset.
    fn same_sub_model() -> FsmModel {
        let mut m = zero_model();
        for g in 0..m.n_groups() {
            let info = m.group_info(g);
            if info.subset == Subset::Match && info.op == EditOp::Substitute {
                let k = m.feature_id(g, Predicate::Same).unwrap();
                m.params.0[k] = 1.0;
            }
        }
        m
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn zero_weights_a_b() {
        let m = zero_model();
        let lat = forward(&m, "a", "b", Beam::Unlimited).unwrap();
        assert!(close(lat.log_partition().unwrap(), 6f64.ln(), 1e-12));
        for l in [Label::Match, Label::Mismatch] {
            assert!(close(lat.constrained_log_partition(l).unwrap(), 3f64.ln(), 1e-12));
        }
        assert!(close(posterior_match(&m, "a", "b").unwrap(), 0.5, 1e-12));
        assert_eq!(enumerate_alignments(&m, "a", "b").unwrap().len(), 6);
    }

    #[test]
    fn same_substitute_weight() {
        let m = same_sub_model();
        let e = std::f64::consts::E;
        let lat = forward(&m, "a", "a", Beam::Unlimited).unwrap();
        assert!(close(lat.log_partition().unwrap(), (e + 5.0).ln(), 1e-12));
        let p = posterior_match(&m, "a", "a").unwrap();
        assert!(close(p, (e + 2.0) / (e + 5.0), 1e-12));
        assert!((p - 0.6113).abs() < 1e-4);
        let best = viterbi(&m, "a", "a", Constraint::All).unwrap();
        assert_eq!(best.edits, vec![EditOp::Substitute]);
        assert_eq!(best.label(&m), Some(Label::Match));
        assert!(close(best.score, 1.0, 1e-12));
    }

    #[test]
    fn degenerate_and_one_sided() {
        let m = zero_model();
        assert!(matches!(forward(&m, "", "", Beam::Unlimited), Err(Error::DegenerateInput)));
        assert_eq!(enumerate_alignments(&m, "a", "").unwrap().len(), 2);
        assert_eq!(enumerate_alignments(&m, "ab", "").unwrap().len(), 2);
        assert!(close(forward(&m, "ab", "", Beam::Unlimited).unwrap().log_partition().unwrap(), 2f64.ln(), 1e-12));
    }

    #[test]
    fn enumeration_guard() {
        let m = zero_model();
        assert!(enumerate_alignments(&m, "abcde", "a").is_err());
        let w = FsmModel::default_for(&[EditOp::Insert, EditOp::SkipAnyWordX], TyingScheme::FirstOrder, FeatureSet::all(), vec![]).unwrap();
        assert!(enumerate_alignments(&w, "a", "b").is_err());
    }

    #[test]
    fn backward_boundaries() {
        let m = zero_model();
        let lat = backward(&m, "a", "b").unwrap();
        let lz = lat.log_partition().unwrap();
        assert!(close(lat.beta(0, 0, StateId::INITIAL).unwrap(), 6f64.ln(), 1e-12));
        assert!(close(lat.alpha(0, 0, StateId::INITIAL) + lat.beta(0, 0, StateId::INITIAL).unwrap(), lz, 1e-12));
        for s in m.topology().match_states().into_iter().chain(m.topology().mismatch_states()) {
            assert_eq!(lat.beta(1, 1, s), Some(0.0));
        }
    }

    #[test]
    fn viterbi_zero_weight_tie_break() {
        let m = zero_model();
        let a = viterbi(&m, "a", "b", Constraint::All).unwrap();
        assert_eq!(a.edits, vec![EditOp::Substitute]);
        assert_eq!(a.score, 0.0);
        // two-step ties: delete then insert beats insert then delete
        let mut m2 = zero_model();
        for g in 0..m2.n_groups() {
            if m2.group_info(g).op == EditOp::Substitute {
                let k = m2.feature_id(g, Predicate::Bias).unwrap();
                m2.params.0[k] = -5.0;
            }
        }
        let a = viterbi(&m2, "a", "b", Constraint::Label(Label::Match)).unwrap();
        assert_eq!(a.edits, vec![EditOp::Delete, EditOp::Insert]);
    }

    #[test]
    fn log_potential_dot() {
        let mut m = zero_model();
        let s1 = m.topology().match_states()[0];
        let q0 = StateId::INITIAL;
        let l = Landing::new(1, 1);
        assert_eq!(log_potential(&m, "a", "b", 0, 0, l, q0, EditOp::Substitute, s1).unwrap(), 0.0);
        let t = m.transition_index(q0, EditOp::Substitute, s1).unwrap();
        let g = m.group_of(t);
        let k = m.feature_id(g, Predicate::Bias).unwrap();
        m.params.0[k] = 0.5;
        assert_eq!(log_potential(&m, "a", "b", 0, 0, l, q0, EditOp::Substitute, s1).unwrap(), 0.5);
        // linearity: shifting every weight by c adds c * nnz
        let f = crate::features::extract(&m, "a", "b", 0, 0, l, q0, EditOp::Substitute, s1).unwrap();
        let before = log_potential(&m, "a", "b", 0, 0, l, q0, EditOp::Substitute, s1).unwrap();
        for w in &mut m.params.0 {
            *w += 0.25;
        }
        let after = log_potential(&m, "a", "b", 0, 0, l, q0, EditOp::Substitute, s1).unwrap();
        assert!(close(after - before, 0.25 * f.nnz() as f64, 1e-12));
    }

    #[test]
    fn beam_identity_and_bound() {
        let m = same_sub_model();
        let sk = Skeleton::new(&m, "ab", "ba").unwrap();
        let s = Scorer::of(&m);
        let exact = s.forward(&sk, Beam::Unlimited);
        let wide = s.forward(&sk, Beam::width(exact.alpha_table().len()).unwrap());
        assert_eq!(exact.alpha_table(), wide.alpha_table());
        assert!(!wide.is_approximate());
        let narrow = s.forward(&sk, Beam::width(1).unwrap());
        assert!(narrow.is_approximate());
        for l in [Label::Match, Label::Mismatch] {
            let e = exact.constrained_log_partition(l).unwrap();
            let n = narrow.constrained_log_partition(l).unwrap_or(f64::NEG_INFINITY);
            assert!(n <= e);
        }
        assert!(Beam::width(0).is_err());
    }

    #[test]
    fn symmetric_counts_mirror() {
        let m = zero_model();
        let c1 = expected_feature_counts(&m, "ab", "b", Constraint::Label(Label::Match)).unwrap();
        let c0 = expected_feature_counts(&m, "ab", "b", Constraint::Label(Label::Mismatch)).unwrap();
        let w = m.features().len();
        for g in 0..m.n_groups() {
            let info = m.group_info(g);
            let mirror = (0..m.n_groups())
                .find(|&h| {
                    let o = m.group_info(h);
                    o.op == info.op && o.from_initial == info.from_initial && o.subset != info.subset
                })
                .unwrap();
            for s in 0..w {
                assert!(close(c1[g * w + s], c0[mirror * w + s], 1e-12));
            }
        }
        // number predicates never fire on letters
        let k = m.feature_id(0, Predicate::SameNumeric).unwrap();
        assert_eq!(c1[k], 0.0);
    }

    #[test]
    fn cut_consistency() {
        let m = same_sub_model();
        let sk = Skeleton::new(&m, "abc", "ac").unwrap();
        let s = Scorer::of(&m);
        let mut lat = s.forward(&sk, Beam::Unlimited);
        s.backward(&sk, &mut lat);
        let lz = lat.log_partition().unwrap();
        for d in 0..=5 {
            assert!(close(s.cut_log_mass(&sk, &lat, d), lz, 1e-9), "cut {d}");
        }
    }

    proptest::proptest! {
        #[test]
        fn dp_agrees_with_enumeration(
            x in "[ab1 ]{0,3}",
            y in "[ab1 ]{0,3}",
            w in proptest::collection::vec(-2.0f64..2.0, 180),
        ) {
            proptest::prop_assume!(!(x.is_empty() && y.is_empty()));
            let mut m = zero_model();
            m.params.0 = w;
            let all = enumerate_alignments(&m, &x, &y).unwrap();
            let lz = log_sum_exp(&all.iter().map(|a| a.score).collect::<Vec<_>>());
            let lat = backward(&m, &x, &y).unwrap();
            proptest::prop_assert!(close(lat.log_partition().unwrap(), lz, 1e-9));
            let p1 = posterior_match(&m, &x, &y).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&p1));
            let best = all.iter().map(|a| a.score).fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(close(viterbi(&m, &x, &y, Constraint::All).unwrap().score, best, 1e-9));
            let sk = Skeleton::new(&m, &x, &y).unwrap();
            let narrow = Scorer::of(&m).forward(&sk, Beam::Width(2));
            if let Ok(z) = narrow.log_partition() {
                proptest::prop_assert!(z <= lat.log_partition().unwrap());
            }
        }
    }
}
