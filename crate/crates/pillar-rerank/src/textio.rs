//! Plain-text formats: `key=value` files, ground-truth pairs, index lists
//! and ranking lists.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pillar_rerank_core::{EntityId, GroundTruth, Modality, RankingList};

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

/// Ordered `key=value` pairs. Blank lines and lines starting with `#` are
/// skipped; a repeated key is an error.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut out = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(n + 1, format!("expected key=value, got {line:?}")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(err(n + 1, "empty key"));
            }
            if out.get(k).is_some() {
                return Err(err(n + 1, format!("duplicate key {k:?}")));
            }
            out.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Appends or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let i = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(i).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of `other` override or extend these.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.iter() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

impl FromIterator<(String, String)> for KeyValues {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut kv = KeyValues::new();
        for (k, v) in iter {
            kv.set(k, v);
        }
        kv
    }
}

fn parse_tagged(tok: &[&str], line: usize, want: Modality) -> Result<usize, ParseError> {
    match tok {
        [tag, idx] if *tag == want.tag() => idx
            .parse()
            .map_err(|_| err(line, format!("bad {} index {idx:?}", want.tag()))),
        _ => Err(err(line, format!("expected \"{} <index>\"", want.tag()))),
    }
}

/// Ground-truth pairs, one `img <i> txt <j>` per line.
pub fn parse_truth(text: &str) -> Result<Vec<(usize, usize)>, ParseError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(err(n + 1, format!("expected \"img <i> txt <j>\", got {line:?}")));
        }
        let i = parse_tagged(&tok[..2], n + 1, Modality::Image)?;
        let j = parse_tagged(&tok[2..], n + 1, Modality::Text)?;
        pairs.push((i, j));
    }
    Ok(pairs)
}

pub fn render_truth(truth: &GroundTruth) -> String {
    let mut s = String::new();
    for (i, j) in truth.pairs() {
        let _ = writeln!(s, "img {i} txt {j}");
    }
    s
}

/// One non-negative index per line.
pub fn parse_indices(text: &str) -> Result<Vec<usize>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse()
                .map_err(|_| err(n + 1, format!("bad index {:?}", l.trim())))
        })
        .collect()
}

pub fn render_indices(ix: &[usize]) -> String {
    let mut s = String::new();
    for i in ix {
        let _ = writeln!(s, "{i}");
    }
    s
}

/// One ranking per line: `<tag> <query> <tag> <item>:<score> ...`. Scores
/// are printed in shortest round-trip form.
pub fn render_rankings(lists: &[RankingList]) -> String {
    let mut s = String::new();
    for r in lists {
        let item_tag = r.query.modality.other().tag();
        let _ = write!(s, "{} {} {item_tag}", r.query.modality.tag(), r.query.index);
        for (e, sc) in r.items.iter().zip(&r.scores) {
            let _ = write!(s, " {}:{sc:?}", e.index);
        }
        s.push('\n');
    }
    s
}

pub fn parse_rankings(text: &str) -> Result<Vec<RankingList>, ParseError> {
    let tag = |t: &str, n| match t {
        "img" => Ok(Modality::Image),
        "txt" => Ok(Modality::Text),
        _ => Err(err(n, format!("unknown modality tag {t:?}"))),
    };
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let n = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let (Some(qt), Some(qi), Some(it)) = (tok.next(), tok.next(), tok.next()) else {
            return Err(err(n, "expected \"<tag> <query> <tag> <item>:<score> ...\""));
        };
        let qm = tag(qt, n)?;
        let im = tag(it, n)?;
        if im != qm.other() {
            return Err(err(n, "items must come from the other modality"));
        }
        let qi: usize = qi.parse().map_err(|_| err(n, format!("bad query index {qi:?}")))?;
        let mut items = Vec::new();
        let mut scores = Vec::new();
        for t in tok {
            let (i, s) = t
                .split_once(':')
                .ok_or_else(|| err(n, format!("expected <item>:<score>, got {t:?}")))?;
            items.push(EntityId::new(
                im,
                i.parse().map_err(|_| err(n, format!("bad item index {i:?}")))?,
            ));
            scores.push(s.parse().map_err(|_| err(n, format!("bad score {s:?}")))?);
        }
        out.push(RankingList {
            query: EntityId::new(qm, qi),
            items,
            scores,
        });
    }
    Ok(out)
}

/// Key-value pairs grouped by the part before the first `.`.
pub fn group_by_prefix(kv: &KeyValues) -> BTreeMap<&str, Vec<(&str, &str)>> {
    let mut out: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    for (k, v) in kv.iter() {
        let (head, tail) = k.split_once('.').unwrap_or(("", k));
        out.entry(head).or_default().push((tail, v));
    }
    out
}
