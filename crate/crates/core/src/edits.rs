//! Edit operations and the lattice moves they permit.
//!
//! Every operation maps a position pair `(i, j)` (characters of `x` and `y`
//! consumed so far) to the landings it can reach. Each landing consumes at
//! least one character, so the lattice of positions is a DAG ordered by
//! `i + j`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::LexiconSet;

/// Characters that delimit words for the word-level operations. Periods are
/// deliberately absent so that abbreviations such as `Proc.` stay one token.
pub fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | ';' | ':' | '(' | ')' | '"')
}

pub(crate) fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// A string prepared for edit and feature evaluation: characters, their case
/// folded forms, and the folded word tokens it contains.
#[derive(Debug, Clone)]
pub struct Text {
    pub chars: Vec<char>,
    pub folded: Vec<char>,
    tokens: BTreeSet<String>,
}

impl Text {
    pub fn new(s: &str) -> Self {
        let chars: Vec<char> = s.chars().collect();
        let folded: Vec<char> = chars.iter().copied().map(fold).collect();
        let tokens = tokenize(s).into_iter().collect();
        Text {
            chars,
            folded,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    fn word_span(&self, p: usize) -> Option<(usize, usize)> {
        span_in(&self.chars, p)
    }

    fn folded_slice(&self, start: usize, end: usize) -> String {
        self.folded[start..end].iter().collect()
    }

    /// End of a skipped span plus at most one trailing separator.
    fn skip_end(&self, end: usize) -> usize {
        if end < self.len() && is_separator(self.chars[end]) {
            end + 1
        } else {
            end
        }
    }
}

/// Case-folded word tokens of `s`, in order of appearance.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(is_separator)
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().map(fold).collect())
        .collect()
}

fn span_in(chars: &[char], p: usize) -> Option<(usize, usize)> {
    if p >= chars.len() || is_separator(chars[p]) {
        return None;
    }
    if p > 0 && !is_separator(chars[p - 1]) {
        return None;
    }
    let len = chars[p..].iter().take_while(|c| !is_separator(**c)).count();
    Some((p, p + len))
}

/// The word beginning at character position `p` of `s`, as a half-open
/// character range. `None` when `p` is not at a word start.
pub fn word_span(s: &str, p: usize) -> Option<(usize, usize)> {
    let chars: Vec<char> = s.chars().collect();
    span_in(&chars, p)
}

/// Position pair reached after an edit: characters of `x` and `y` consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Landing {
    pub i: usize,
    pub j: usize,
}

impl Landing {
    pub fn new(i: usize, j: usize) -> Self {
        Landing { i, j }
    }
}

/// The registered edit operations, in registry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditOp {
    Insert,
    Delete,
    Substitute,
    SwapTwoCharacters,
    SkipAnyWordX,
    SkipAnyWordY,
    SkipWordInLexiconX,
    SkipWordInLexiconY,
    SkipWordIfPresentX,
    SkipWordIfPresentY,
    SkipParenthesizedX,
    SkipParenthesizedY,
    DeleteUntilEndOfWordX,
    AbbreviationExpand,
}

pub const REGISTRY: [EditOp; 14] = [
    EditOp::Insert,
    EditOp::Delete,
    EditOp::Substitute,
    EditOp::SwapTwoCharacters,
    EditOp::SkipAnyWordX,
    EditOp::SkipAnyWordY,
    EditOp::SkipWordInLexiconX,
    EditOp::SkipWordInLexiconY,
    EditOp::SkipWordIfPresentX,
    EditOp::SkipWordIfPresentY,
    EditOp::SkipParenthesizedX,
    EditOp::SkipParenthesizedY,
    EditOp::DeleteUntilEndOfWordX,
    EditOp::AbbreviationExpand,
];

/// All registered operations.
pub fn registry() -> Vec<EditOp> {
    REGISTRY.to_vec()
}

impl EditOp {
    pub fn name(self) -> &'static str {
        match self {
            EditOp::Insert => "insert",
            EditOp::Delete => "delete",
            EditOp::Substitute => "substitute",
            EditOp::SwapTwoCharacters => "swap-two-characters",
            EditOp::SkipAnyWordX => "skip-any-word-x",
            EditOp::SkipAnyWordY => "skip-any-word-y",
            EditOp::SkipWordInLexiconX => "skip-word-in-lexicon-x",
            EditOp::SkipWordInLexiconY => "skip-word-in-lexicon-y",
            EditOp::SkipWordIfPresentX => "skip-word-if-present-in-other-string-x",
            EditOp::SkipWordIfPresentY => "skip-word-if-present-in-other-string-y",
            EditOp::SkipParenthesizedX => "skip-parenthesized-x",
            EditOp::SkipParenthesizedY => "skip-parenthesized-y",
            EditOp::DeleteUntilEndOfWordX => "delete-until-end-of-word-x",
            EditOp::AbbreviationExpand => "abbreviation-expand",
        }
    }

    /// One-letter code used in rendered alignment grids.
    pub fn code(self) -> char {
        match self {
            EditOp::Insert => 'i',
            EditOp::Delete => 'd',
            EditOp::Substitute => 's',
            EditOp::SwapTwoCharacters => 'w',
            EditOp::SkipAnyWordX | EditOp::SkipAnyWordY => 'k',
            EditOp::SkipWordInLexiconX | EditOp::SkipWordInLexiconY => 'l',
            EditOp::SkipWordIfPresentX | EditOp::SkipWordIfPresentY => 'r',
            EditOp::SkipParenthesizedX | EditOp::SkipParenthesizedY => 'p',
            EditOp::DeleteUntilEndOfWordX => 'e',
            EditOp::AbbreviationExpand => 'a',
        }
    }

    /// Operations that move over whole words rather than single characters.
    pub fn is_word_level(self) -> bool {
        !matches!(
            self,
            EditOp::Insert | EditOp::Delete | EditOp::Substitute | EditOp::SwapTwoCharacters
        )
    }

    pub fn uses_lexicon(self) -> bool {
        matches!(self, EditOp::SkipWordInLexiconX | EditOp::SkipWordInLexiconY)
    }

    /// The landing of this operation from `(i, j)`, if it applies. Every
    /// registered operation is deterministic, so there is at most one.
    pub(crate) fn land(
        self,
        x: &Text,
        y: &Text,
        i: usize,
        j: usize,
        lexicons: &[LexiconSet],
    ) -> Option<Landing> {
        let (m, n) = (x.len(), y.len());
        match self {
            EditOp::Insert => (j < n).then(|| Landing::new(i, j + 1)),
            EditOp::Delete => (i < m).then(|| Landing::new(i + 1, j)),
            EditOp::Substitute => (i < m && j < n).then(|| Landing::new(i + 1, j + 1)),
            EditOp::SwapTwoCharacters => {
                if i + 1 < m && j + 1 < n {
                    let (a, b) = (x.folded[i], x.folded[i + 1]);
                    if a != b && a == y.folded[j + 1] && b == y.folded[j] {
                        return Some(Landing::new(i + 2, j + 2));
                    }
                }
                None
            }
            EditOp::SkipAnyWordX => x.word_span(i).map(|(_, e)| Landing::new(x.skip_end(e), j)),
            EditOp::SkipAnyWordY => y.word_span(j).map(|(_, e)| Landing::new(i, y.skip_end(e))),
            EditOp::SkipWordInLexiconX => {
                let (s, e) = x.word_span(i)?;
                let w = x.folded_slice(s, e);
                in_lexicon(lexicons, &w).then(|| Landing::new(x.skip_end(e), j))
            }
            EditOp::SkipWordInLexiconY => {
                let (s, e) = y.word_span(j)?;
                let w = y.folded_slice(s, e);
                in_lexicon(lexicons, &w).then(|| Landing::new(i, y.skip_end(e)))
            }
            EditOp::SkipWordIfPresentX => {
                let (s, e) = x.word_span(i)?;
                y.contains_token(&x.folded_slice(s, e))
                    .then(|| Landing::new(x.skip_end(e), j))
            }
            EditOp::SkipWordIfPresentY => {
                let (s, e) = y.word_span(j)?;
                x.contains_token(&y.folded_slice(s, e))
                    .then(|| Landing::new(i, y.skip_end(e)))
            }
            EditOp::SkipParenthesizedX => {
                paren_end(&x.chars, i).map(|e| Landing::new(x.skip_end(e), j))
            }
            EditOp::SkipParenthesizedY => {
                paren_end(&y.chars, j).map(|e| Landing::new(i, y.skip_end(e)))
            }
            EditOp::DeleteUntilEndOfWordX => {
                if i < m && !is_separator(x.chars[i]) {
                    let run = x.chars[i..].iter().take_while(|c| !is_separator(**c)).count();
                    Some(Landing::new(i + run, j))
                } else {
                    None
                }
            }
            EditOp::AbbreviationExpand => {
                let (xs, xe) = x.word_span(i)?;
                let (ys, ye) = y.word_span(j)?;
                abbreviates(&x.chars[xs..xe], &y.chars[ys..ye])
                    .then(|| Landing::new(x.skip_end(xe), y.skip_end(ye)))
            }
        }
    }
}

fn in_lexicon(lexicons: &[LexiconSet], word: &str) -> bool {
    lexicons.iter().any(|l| l.contains(word))
}

/// End (exclusive) of the parenthesized group opening at `p`; end of string
/// when the group is unbalanced.
fn paren_end(chars: &[char], p: usize) -> Option<usize> {
    if chars.get(p) != Some(&'(') {
        return None;
    }
    let mut depth = 0usize;
    for (k, &c) in chars.iter().enumerate().skip(p) {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(k + 1);
                }
            }
            _ => {}
        }
    }
    Some(chars.len())
}

/// `short` abbreviates `long` either as a prefix terminated by a period
/// (`Proc.` / `Proceedings`) or as an all-caps token whose letters form a
/// subsequence of `long` starting at its first letter (`MGR` / `Manager`).
fn abbreviates(short: &[char], long: &[char]) -> bool {
    let long_f: Vec<char> = long.iter().copied().map(fold).collect();
    if let Some((&'.', stem)) = short.split_last() {
        return !stem.is_empty()
            && stem.len() < long.len()
            && stem.iter().all(|c| c.is_alphabetic())
            && stem.iter().map(|c| fold(*c)).eq(long_f[..stem.len()].iter().copied());
    }
    if short.len() < 2
        || short.len() >= long.len()
        || !short.iter().all(|c| c.is_alphabetic() && c.is_uppercase())
    {
        return false;
    }
    let short_f: Vec<char> = short.iter().copied().map(fold).collect();
    if short_f[0] != long_f[0] {
        return false;
    }
    let mut rest = long_f[1..].iter();
    short_f[1..].iter().all(|c| rest.any(|d| d == c))
}

/// Landings of `op` from `(i, j)`; empty when the operation does not apply.
pub fn apply_edit(
    op: EditOp,
    x: &str,
    y: &str,
    i: usize,
    j: usize,
    lexicons: &[LexiconSet],
) -> Result<Vec<Landing>> {
    let (x, y) = (Text::new(x), Text::new(y));
    if i > x.len() || j > y.len() {
        return Err(Error::invalid(format!(
            "position ({i}, {j}) outside ({}, {})",
            x.len(),
            y.len()
        )));
    }
    Ok(op.land(&x, &y, i, j, lexicons).into_iter().collect())
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        REGISTRY
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

impl Serialize for EditOp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EditOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
