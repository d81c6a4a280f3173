//! Input predicates, sparse feature vectors and lexicons.
//!
//! A feature is the conjunction of a transition parameter group with one
//! input predicate evaluated at the source cell `(i, j)` of an edit step.
//! Feature ids are `group * feature_set.len() + slot`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::edits::{is_separator, tokenize, EditOp, Landing, Text};
use crate::error::{Error, Result};
use crate::model::{FsmModel, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    Bias,
    Same,
    Different,
    SameAlphabetic,
    DifferentAlphabetic,
    SameNumeric,
    DifferentNumeric,
    PunctuationX,
    PunctuationY,
    AlphabetMismatch,
    NumberMismatch,
    EndOfX,
    EndOfY,
    SameNextCharacter,
    DifferentNextCharacter,
}

pub const PREDICATES: [Predicate; 15] = [
    Predicate::Bias,
    Predicate::Same,
    Predicate::Different,
    Predicate::SameAlphabetic,
    Predicate::DifferentAlphabetic,
    Predicate::SameNumeric,
    Predicate::DifferentNumeric,
    Predicate::PunctuationX,
    Predicate::PunctuationY,
    Predicate::AlphabetMismatch,
    Predicate::NumberMismatch,
    Predicate::EndOfX,
    Predicate::EndOfY,
    Predicate::SameNextCharacter,
    Predicate::DifferentNextCharacter,
];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

impl Predicate {
    pub fn name(self) -> &'static str {
        match self {
            Predicate::Bias => "bias",
            Predicate::Same => "same",
            Predicate::Different => "different",
            Predicate::SameAlphabetic => "same-alphabetic",
            Predicate::DifferentAlphabetic => "different-alphabetic",
            Predicate::SameNumeric => "same-numeric",
            Predicate::DifferentNumeric => "different-numeric",
            Predicate::PunctuationX => "punctuation-x",
            Predicate::PunctuationY => "punctuation-y",
            Predicate::AlphabetMismatch => "alphabet-mismatch",
            Predicate::NumberMismatch => "number-mismatch",
            Predicate::EndOfX => "end-of-x",
            Predicate::EndOfY => "end-of-y",
            Predicate::SameNextCharacter => "same-next-character",
            Predicate::DifferentNextCharacter => "different-next-character",
        }
    }

    /// Truth value at cell `(i, j)`. Predicates comparing characters are
    /// false when either string is exhausted.
    pub(crate) fn holds(self, x: &Text, y: &Text, i: usize, j: usize) -> bool {
        let (m, n) = (x.len(), y.len());
        let pair = (i < m && j < n).then(|| (x.chars[i], y.chars[j], x.folded[i] == y.folded[j]));
        match self {
            Predicate::Bias => true,
            Predicate::Same => matches!(pair, Some((_, _, true))),
            Predicate::Different => matches!(pair, Some((_, _, false))),
            Predicate::SameAlphabetic => {
                matches!(pair, Some((a, b, true)) if a.is_alphabetic() && b.is_alphabetic())
            }
            Predicate::DifferentAlphabetic => {
                matches!(pair, Some((a, b, false)) if a.is_alphabetic() && b.is_alphabetic())
            }
            Predicate::SameNumeric => {
                matches!(pair, Some((a, b, true)) if a.is_numeric() && b.is_numeric())
            }
            Predicate::DifferentNumeric => {
                matches!(pair, Some((a, b, false)) if a.is_numeric() && b.is_numeric())
            }
            Predicate::PunctuationX => i < m && is_punct(x.chars[i]),
            Predicate::PunctuationY => j < n && is_punct(y.chars[j]),
            Predicate::AlphabetMismatch => {
                matches!(pair, Some((a, b, _)) if a.is_alphabetic() != b.is_alphabetic())
            }
            Predicate::NumberMismatch => {
                matches!(pair, Some((a, b, _)) if a.is_numeric() != b.is_numeric())
            }
            Predicate::EndOfX => i == m,
            Predicate::EndOfY => j == n,
            Predicate::SameNextCharacter => {
                i + 1 < m && j + 1 < n && x.folded[i + 1] == y.folded[j + 1]
            }
            Predicate::DifferentNextCharacter => {
                i + 1 < m && j + 1 < n && x.folded[i + 1] != y.folded[j + 1]
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predicate {
    type Err = Error;

    /// Accepts full names and the short forms `s`, `d`, `salp`, `dalp`,
    /// `snum`, `dnum`.
    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "s" => Some(Predicate::Same),
            "d" => Some(Predicate::Different),
            "salp" => Some(Predicate::SameAlphabetic),
            "dalp" => Some(Predicate::DifferentAlphabetic),
            "snum" => Some(Predicate::SameNumeric),
            "dnum" => Some(Predicate::DifferentNumeric),
            _ => None,
        };
        alias
            .or_else(|| PREDICATES.iter().copied().find(|p| p.name() == s))
            .ok_or_else(|| Error::UnknownPredicate(s.to_string()))
    }
}

/// Evaluate one input predicate at `(i, j)`.
pub fn eval_predicate(p: Predicate, x: &str, y: &str, i: usize, j: usize) -> Result<bool> {
    let (x, y) = (Text::new(x), Text::new(y));
    if i > x.len() || j > y.len() {
        return Err(Error::invalid(format!("position ({i}, {j}) out of range")));
    }
    Ok(p.holds(&x, &y, i, j))
}

/// The enabled input predicates, in canonical order with `bias` in slot 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    predicates: Vec<Predicate>,
}

impl FeatureSet {
    pub fn new(preds: impl IntoIterator<Item = Predicate>) -> Self {
        let mut set: BTreeSet<Predicate> = preds.into_iter().collect();
        set.insert(Predicate::Bias);
        FeatureSet {
            predicates: set.into_iter().collect(),
        }
    }

    /// Every predicate.
    pub fn all() -> Self {
        FeatureSet::new(PREDICATES)
    }

    /// Parse a comma separated predicate list (`s,d` or `salp,dalp,snum,dnum`).
    pub fn parse_list(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(FeatureSet::all());
        }
        let preds = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet::new(preds))
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn slot(&self, p: Predicate) -> Option<usize> {
        self.predicates.iter().position(|q| *q == p)
    }

    /// Slots of the predicates active at `(i, j)`; slot 0 (bias) is always first.
    pub(crate) fn active_slots<'a>(
        &'a self,
        x: &'a Text,
        y: &'a Text,
        i: usize,
        j: usize,
    ) -> impl Iterator<Item = usize> + 'a {
        self.predicates
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.holds(x, y, i, j))
            .map(|(s, _)| s)
    }
}

/// Sparse feature vector: feature id to value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector(pub BTreeMap<usize, f64>);

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().map(|(&k, &v)| weights[k] * v).sum()
    }
}

/// Features of the edit step `from --op--> to` taken at `(i, j)` and landing
/// at `landing`.
#[allow(clippy::too_many_arguments)]
pub fn extract(
    model: &FsmModel,
    x: &str,
    y: &str,
    i: usize,
    j: usize,
    landing: Landing,
    from: StateId,
    op: EditOp,
    to: StateId,
) -> Result<FeatureVector> {
    let (tx, ty) = (Text::new(x), Text::new(y));
    extract_text(model, &tx, &ty, i, j, landing, from, op, to)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn extract_text(
    model: &FsmModel,
    x: &Text,
    y: &Text,
    i: usize,
    j: usize,
    landing: Landing,
    from: StateId,
    op: EditOp,
    to: StateId,
) -> Result<FeatureVector> {
    let t = model.transition_index(from, op, to).ok_or_else(|| {
        Error::invalid(format!("({}, {op}, {}) is not a model transition", from.0, to.0))
    })?;
    if i > x.len() || j > y.len() {
        return Err(Error::invalid(format!("position ({i}, {j}) out of range")));
    }
    if op.land(x, y, i, j, model.lexicons()) != Some(landing) {
        return Err(Error::invalid(format!(
            "({}, {}) is not a landing of {op} from ({i}, {j})",
            landing.i, landing.j
        )));
    }
    let base = model.group_of(t) * model.features().len();
    let mut v = FeatureVector::default();
    for (slot, p) in model.features().predicates().iter().enumerate() {
        if p.holds(x, y, i, j) {
            v.0.insert(base + slot, 1.0);
        }
    }
    Ok(v)
}

/// A named set of lowercase tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconSet {
    pub name: String,
    pub words: BTreeSet<String>,
}

impl LexiconSet {
    pub fn new<S: AsRef<str>>(name: &str, words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if w.is_empty() || w.chars().any(is_separator) {
                return Err(Error::invalid(format!("lexicon token `{w}` is empty or contains a separator")));
            }
            set.insert(w);
        }
        Ok(LexiconSet {
            name: name.to_string(),
            words: set,
        })
    }

    /// One word per line; blank lines ignored.
    pub fn from_word_list(name: &str, text: &str) -> Result<Self> {
        LexiconSet::new(name, text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// The `top_k` most frequent case-folded tokens of `texts`, excluding
/// `stoplist`. Ties are broken lexicographically.
pub fn build_lexicon<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    top_k: usize,
    stoplist: &BTreeSet<String>,
) -> Result<LexiconSet> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, _)| !stoplist.contains(w))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    LexiconSet::new("frequent", ranked.into_iter().take(top_k).map(|(w, _)| w))
}
