//! Finite-state machine over edit operations, parameter tying and model files.
//!
//! The machine has a single initial state `q0` and two disjoint sets of
//! non-initial states: the mismatch subset and the match subset. A complete
//! alignment lives entirely inside one of them, which is how the model votes
//! for a label.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::edits::{EditOp, REGISTRY};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, LexiconSet, Predicate};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl StateId {
    pub const INITIAL: StateId = StateId(0);
}

/// Binary output label `z`: 1 for a match, 0 for a mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Mismatch,
    Match,
}

impl Label {
    pub fn from_z(z: u8) -> Result<Self> {
        match z {
            0 => Ok(Label::Mismatch),
            1 => Ok(Label::Match),
            other => Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn z(self) -> u8 {
        match self {
            Label::Mismatch => 0,
            Label::Match => 1,
        }
    }

    pub fn index(self) -> usize {
        self.z() as usize
    }

    pub fn subset(self) -> Subset {
        match self {
            Label::Mismatch => Subset::Mismatch,
            Label::Match => Subset::Match,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Mismatch => "mismatch",
            Label::Match => "match",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    Initial,
    Mismatch,
    Match,
}

impl Subset {
    pub fn label(self) -> Option<Label> {
        match self {
            Subset::Initial => None,
            Subset::Mismatch => Some(Label::Mismatch),
            Subset::Match => Some(Label::Match),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub subset: Subset,
    /// Last edit remembered by the state (second-order topologies).
    pub context: Option<EditOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub from: StateId,
    pub op: EditOp,
    pub to: StateId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsmTopology {
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
}

impl FsmTopology {
    pub fn subset_of(&self, s: StateId) -> Option<Subset> {
        self.states.get(s.0).map(|st| st.subset)
    }

    fn states_in(&self, subset: Subset) -> Vec<StateId> {
        (0..self.states.len())
            .filter(|&k| self.states[k].subset == subset)
            .map(StateId)
            .collect()
    }

    pub fn match_states(&self) -> Vec<StateId> {
        self.states_in(Subset::Match)
    }

    pub fn mismatch_states(&self) -> Vec<StateId> {
        self.states_in(Subset::Mismatch)
    }

    /// Edit operations labeling at least one transition, in registry order.
    pub fn ops(&self) -> Vec<EditOp> {
        let used: BTreeSet<EditOp> = self.transitions.iter().map(|t| t.op).collect();
        used.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TyingScheme {
    /// Transitions entering a state with the same edit share parameters.
    FirstOrder,
    /// Every `(from, op, to)` transition has its own parameters.
    SecondOrder,
}

impl FromStr for TyingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "first-order" => Ok(TyingScheme::FirstOrder),
            "2" | "second-order" => Ok(TyingScheme::SecondOrder),
            _ => Err(Error::invalid(format!("unknown order `{s}` (expected 1 or 2)"))),
        }
    }
}

impl fmt::Display for TyingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TyingScheme::FirstOrder => "first-order",
            TyingScheme::SecondOrder => "second-order",
        })
    }
}

/// One state per subset (first order) or one state per last edit per subset
/// (second order). Both subsets are entered from `q0` by every edit.
pub fn build_default_topology(ops: &[EditOp], order: TyingScheme) -> Result<FsmTopology> {
    if ops.is_empty() {
        return Err(Error::invalid("edit operation list is empty"));
    }
    let mut uniq: Vec<EditOp> = Vec::new();
    for op in ops {
        if !uniq.contains(op) {
            uniq.push(*op);
        }
    }
    let mut states = vec![State {
        subset: Subset::Initial,
        context: None,
    }];
    let mut transitions = Vec::new();
    for subset in [Subset::Mismatch, Subset::Match] {
        match order {
            TyingScheme::FirstOrder => {
                let s = StateId(states.len());
                states.push(State { subset, context: None });
                for &op in &uniq {
                    transitions.push(Transition { from: StateId::INITIAL, op, to: s });
                }
                for &op in &uniq {
                    transitions.push(Transition { from: s, op, to: s });
                }
            }
            TyingScheme::SecondOrder => {
                let first = states.len();
                for &op in &uniq {
                    states.push(State { subset, context: Some(op) });
                }
                let target = |k: usize| StateId(first + k);
                for (k, &op) in uniq.iter().enumerate() {
                    transitions.push(Transition { from: StateId::INITIAL, op, to: target(k) });
                }
                for from in 0..uniq.len() {
                    for (k, &op) in uniq.iter().enumerate() {
                        transitions.push(Transition { from: target(from), op, to: target(k) });
                    }
                }
            }
        }
    }
    Ok(FsmTopology { states, transitions })
}

/// Dense weight vector indexed by feature id. Equality is bitwise.
#[derive(Debug, Clone, Default)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        ParameterVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl PartialEq for ParameterVector {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// What a parameter group is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupInfo {
    pub subset: Subset,
    pub op: EditOp,
    pub from_initial: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Arc {
    pub op_idx: usize,
    pub to: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownState { transition: usize },
    IntoInitial { transition: usize },
    SubsetCrossing { from: StateId, to: StateId },
    MisplacedInitial,
    EmptySubset(Subset),
    NoEntry(Subset),
    Unreachable(StateId),
    DanglingParameterGroup { needed: usize, present: usize },
    NonFiniteWeight(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownState { transition } => {
                write!(f, "transition {transition} references an unknown state")
            }
            Violation::IntoInitial { transition } => {
                write!(f, "transition {transition} enters the initial state")
            }
            Violation::SubsetCrossing { from, to } => {
                write!(f, "subset crossing: {} -> {}", from.0, to.0)
            }
            Violation::MisplacedInitial => write!(f, "state 0 must be the only initial state"),
            Violation::EmptySubset(s) => write!(f, "empty subset {s:?}"),
            Violation::NoEntry(s) => write!(f, "no transition from q0 into subset {s:?}"),
            Violation::Unreachable(s) => write!(f, "unreachable state {}", s.0),
            Violation::DanglingParameterGroup { needed, present } => write!(
                f,
                "dangling parameter group: {needed} weights needed, {present} present"
            ),
            Violation::NonFiniteWeight(k) => write!(f, "weight {k} is not finite"),
        }
    }
}

/// A complete model: topology, tying, feature templates, lexicons, weights.
///
/// Immutable after construction apart from `params`; training produces new
/// parameter vectors rather than mutating shared models.
#[derive(Debug, Clone)]
pub struct FsmModel {
    topology: FsmTopology,
    tying: TyingScheme,
    features: FeatureSet,
    lexicons: Vec<LexiconSet>,
    pub params: ParameterVector,
    ops: Vec<EditOp>,
    group_of: Vec<usize>,
    groups: Vec<GroupInfo>,
    lookup: HashMap<(usize, EditOp, usize), usize>,
    arcs: Vec<Vec<Arc>>,
}

impl FsmModel {
    /// Builds a model with all-zero weights of the right dimension.
    pub fn new(
        topology: FsmTopology,
        tying: TyingScheme,
        features: FeatureSet,
        lexicons: Vec<LexiconSet>,
    ) -> Self {
        let ops = topology.ops();
        let n_states = topology.states.len();
        let mut keys: HashMap<(bool, usize, usize, EditOp), usize> = HashMap::new();
        let mut group_of = Vec::with_capacity(topology.transitions.len());
        let mut groups = Vec::new();
        let mut lookup = HashMap::new();
        let mut arcs = vec![Vec::new(); n_states];
        for (k, t) in topology.transitions.iter().enumerate() {
            let from_initial = t.from == StateId::INITIAL;
            let key = match tying {
                TyingScheme::FirstOrder => (from_initial, usize::MAX, t.to.0, t.op),
                TyingScheme::SecondOrder => (from_initial, t.from.0, t.to.0, t.op),
            };
            let next = groups.len();
            let g = *keys.entry(key).or_insert(next);
            if g == next {
                groups.push(GroupInfo {
                    subset: topology.subset_of(t.to).unwrap_or(Subset::Initial),
                    op: t.op,
                    from_initial,
                });
            }
            group_of.push(g);
            lookup.entry((t.from.0, t.op, t.to.0)).or_insert(k);
            if t.from.0 < n_states && t.to.0 < n_states {
                let op_idx = ops.iter().position(|o| *o == t.op).unwrap_or(0);
                arcs[t.from.0].push(Arc { op_idx, to: t.to.0, group: g });
            }
        }
        for a in &mut arcs {
            a.sort_by_key(|arc| arc.op_idx);
        }
        let dim = groups.len() * features.len();
        FsmModel {
            topology,
            tying,
            features,
            lexicons,
            params: ParameterVector::zeros(dim),
            ops,
            group_of,
            groups,
            lookup,
            arcs,
        }
    }

    /// The default model for `ops` and `order`, with zero weights.
    pub fn default_for(
        ops: &[EditOp],
        order: TyingScheme,
        features: FeatureSet,
        lexicons: Vec<LexiconSet>,
    ) -> Result<Self> {
        let topo = build_default_topology(ops, order)?;
        Ok(FsmModel::new(topo, order, features, lexicons))
    }

    pub fn with_params(mut self, params: ParameterVector) -> Result<Self> {
        if params.len() != self.dimension() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.dimension()
            )));
        }
        self.params = params;
        Ok(self)
    }

    pub fn topology(&self) -> &FsmTopology {
        &self.topology
    }

    pub fn tying(&self) -> TyingScheme {
        self.tying
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn lexicons(&self) -> &[LexiconSet] {
        &self.lexicons
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.ops
    }

    pub fn n_states(&self) -> usize {
        self.topology.states.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_info(&self, g: usize) -> GroupInfo {
        self.groups[g]
    }

    pub fn group_of(&self, transition: usize) -> usize {
        self.group_of[transition]
    }

    /// Number of weights the topology, tying and feature set call for.
    pub fn dimension(&self) -> usize {
        self.groups.len() * self.features.len()
    }

    pub fn transition_index(&self, from: StateId, op: EditOp, to: StateId) -> Option<usize> {
        self.lookup.get(&(from.0, op, to.0)).copied()
    }

    pub fn feature_id(&self, group: usize, p: Predicate) -> Option<usize> {
        self.features.slot(p).map(|s| group * self.features.len() + s)
    }

    /// Human-readable name of feature id `k`.
    pub fn feature_name(&self, k: usize) -> String {
        let p = self.features.len();
        let (g, slot) = (k / p, k % p);
        let info = self.groups[g];
        format!(
            "{}{}:{}:{}",
            match info.subset {
                Subset::Match => "match",
                Subset::Mismatch => "mismatch",
                Subset::Initial => "initial",
            },
            if info.from_initial { "/entry" } else { "" },
            info.op,
            self.features.predicates()[slot]
        )
    }

    pub(crate) fn arcs(&self, state: usize) -> &[Arc] {
        &self.arcs[state]
    }

    pub(crate) fn state_subset(&self, state: usize) -> Subset {
        self.topology.states[state].subset
    }

    /// All violated invariants; empty when the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

impl PartialEq for FsmModel {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology
            && self.tying == other.tying
            && self.features == other.features
            && self.lexicons == other.lexicons
            && self.params == other.params
    }
}

pub fn validate(model: &FsmModel) -> Vec<Violation> {
    let topo = &model.topology;
    let n = topo.states.len();
    let mut out = Vec::new();
    if n == 0 || topo.states[0].subset != Subset::Initial {
        out.push(Violation::MisplacedInitial);
        return out;
    }
    if topo.states[1..].iter().any(|s| s.subset == Subset::Initial) {
        out.push(Violation::MisplacedInitial);
    }
    for subset in [Subset::Mismatch, Subset::Match] {
        if !topo.states.iter().any(|s| s.subset == subset) {
            out.push(Violation::EmptySubset(subset));
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (k, t) in topo.transitions.iter().enumerate() {
        if t.from.0 >= n || t.to.0 >= n {
            out.push(Violation::UnknownState { transition: k });
            continue;
        }
        if t.to == StateId::INITIAL {
            out.push(Violation::IntoInitial { transition: k });
        }
        let (a, b) = (topo.states[t.from.0].subset, topo.states[t.to.0].subset);
        if a != Subset::Initial && b != Subset::Initial && a != b {
            out.push(Violation::SubsetCrossing { from: t.from, to: t.to });
        }
        adj[t.from.0].push(t.to.0);
    }
    for subset in [Subset::Mismatch, Subset::Match] {
        let entered = topo.transitions.iter().any(|t| {
            t.from == StateId::INITIAL && t.to.0 < n && topo.states[t.to.0].subset == subset
        });
        if !entered && topo.states.iter().any(|s| s.subset == subset) {
            out.push(Violation::NoEntry(subset));
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(s) = queue.pop_front() {
        for &t in &adj[s] {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    for (k, reached) in seen.iter().enumerate() {
        if !reached {
            out.push(Violation::Unreachable(StateId(k)));
        }
    }
    if model.params.len() != model.dimension() {
        out.push(Violation::DanglingParameterGroup {
            needed: model.dimension(),
            present: model.params.len(),
        });
    }
    for (k, w) in model.params.0.iter().enumerate() {
        if !w.is_finite() {
            out.push(Violation::NonFiniteWeight(k));
        }
    }
    out
}

// ---- persistence ----

#[derive(Serialize, Deserialize)]
struct StateDoc {
    subset: Subset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TransitionDoc {
    from: usize,
    op: String,
    to: usize,
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    states: Vec<StateDoc>,
    transitions: Vec<TransitionDoc>,
}

#[derive(Serialize)]
struct ModelDocOut<'a> {
    format_version: u64,
    tying: TyingScheme,
    ops: Vec<&'static str>,
    features: Vec<&'static str>,
    topology: TopologyDoc,
    lexicons: &'a [LexiconSet],
    weights: Box<RawValue>,
}

#[derive(Deserialize)]
struct ModelDocIn {
    #[allow(dead_code)]
    format_version: u64,
    tying: TyingScheme,
    ops: Vec<String>,
    features: Vec<String>,
    topology: TopologyDoc,
    #[serde(default)]
    lexicons: Vec<LexiconSet>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

fn weights_json(w: &[f64]) -> Result<Box<RawValue>> {
    let body: Vec<String> = w.iter().map(|v| format!("{v:.16e}")).collect();
    Ok(RawValue::from_string(format!("[{}]", body.join(", ")))?)
}

/// Serialize `model` as a JSON document. Returns bytes written.
pub fn save_model<W: Write>(model: &FsmModel, mut dest: W) -> Result<usize> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(join_violations(&violations)));
    }
    let topo = &model.topology;
    let doc = ModelDocOut {
        format_version: FORMAT_VERSION,
        tying: model.tying,
        ops: model.ops.iter().map(|o| o.name()).collect(),
        features: model.features.predicates().iter().map(|p| p.name()).collect(),
        topology: TopologyDoc {
            states: topo
                .states
                .iter()
                .map(|s| StateDoc {
                    subset: s.subset,
                    context: s.context.map(|o| o.name().to_string()),
                })
                .collect(),
            transitions: topo
                .transitions
                .iter()
                .map(|t| TransitionDoc {
                    from: t.from.0,
                    op: t.op.name().to_string(),
                    to: t.to.0,
                })
                .collect(),
        },
        lexicons: &model.lexicons,
        weights: weights_json(model.params.as_slice())?,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    dest.write_all(text.as_bytes())?;
    Ok(text.len())
}

pub fn load_model<R: Read>(mut source: R) -> Result<FsmModel> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let probe: VersionProbe = serde_json::from_str(&text)?;
    if let Some(v) = probe.format_version {
        if v != FORMAT_VERSION {
            return Err(Error::Version {
                found: v,
                expected: FORMAT_VERSION,
            });
        }
    }
    let doc: ModelDocIn = serde_json::from_str(&text)?;
    let states = doc
        .topology
        .states
        .into_iter()
        .map(|s| {
            Ok(State {
                subset: s.subset,
                context: s.context.map(|c| c.parse()).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let transitions = doc
        .topology
        .transitions
        .into_iter()
        .map(|t| {
            Ok(Transition {
                from: StateId(t.from),
                op: t.op.parse()?,
                to: StateId(t.to),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let listed = doc
        .ops
        .iter()
        .map(|s| s.parse::<EditOp>())
        .collect::<Result<Vec<_>>>()?;
    let preds = doc
        .features
        .iter()
        .map(|s| s.parse::<Predicate>())
        .collect::<Result<Vec<_>>>()?;
    let features = FeatureSet::new(preds);
    if features.len() != doc.features.len() {
        return Err(Error::InvalidModel(
            "feature list must be canonical: bias first, no duplicates".into(),
        ));
    }
    let topology = FsmTopology { states, transitions };
    let mut model = FsmModel::new(topology, doc.tying, features, doc.lexicons);
    if listed != model.ops {
        return Err(Error::InvalidModel(format!(
            "ops list {:?} does not match the ops on transitions {:?}",
            doc.ops,
            model.ops.iter().map(|o| o.name()).collect::<Vec<_>>()
        )));
    }
    model.params = ParameterVector(doc.weights);
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(join_violations(&violations)));
    }
    Ok(model)
}

pub fn save_model_file(model: &FsmModel, path: &Path) -> Result<usize> {
    let f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    save_model(model, std::io::BufWriter::new(f))
}

pub fn load_model_file(path: &Path) -> Result<FsmModel> {
    let f = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_model(std::io::BufReader::new(f))
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Registry position, used to report ops in a stable order.
pub fn registry_position(op: EditOp) -> usize {
    REGISTRY.iter().position(|o| *o == op).unwrap_or(usize::MAX)
}
