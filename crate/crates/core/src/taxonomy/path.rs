use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{TaxonomyError, MAX_DEPTH, ROOT_NAME};

/// Separator between node names in a canonical path.
pub const SEPARATOR: char = '.';

/// Canonical dotted label path, from a level-1 node downward.
///
/// A `TagPath` is only checked syntactically on construction: 1 to 4 non-empty
/// segments, none of them `TOP`, none containing characters that cannot live
/// inside a node name. Whether the path names a real node is a question for
/// [`Taxonomy::resolve`](super::Taxonomy::resolve).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TagPath(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagPathError {
    #[error("empty label")]
    Empty,
    #[error("label {0:?} has an empty segment")]
    EmptySegment(String),
    #[error("label {0:?} is deeper than {MAX_DEPTH} levels")]
    TooDeep(String),
    #[error("label {0:?} names the root node")]
    Root(String),
    #[error("label {0:?} contains an illegal character")]
    IllegalChar(String),
}

/// True when `name` may be used as a single node name.
pub fn is_legal_name(name: &str) -> bool {
    !name.is_empty()
        && name.trim() == name
        && !name
            .chars()
            .any(|c| c == SEPARATOR || c == '<' || c == '>' || c == '&' || c == '/' || c.is_control())
}

impl TagPath {
    pub fn parse(label: &str) -> Result<Self, TagPathError> {
        if label.is_empty() {
            return Err(TagPathError::Empty);
        }
        let mut depth = 0;
        for segment in label.split(SEPARATOR) {
            depth += 1;
            if segment.is_empty() {
                return Err(TagPathError::EmptySegment(label.to_string()));
            }
            if !is_legal_name(segment) {
                return Err(TagPathError::IllegalChar(label.to_string()));
            }
        }
        if depth > MAX_DEPTH {
            return Err(TagPathError::TooDeep(label.to_string()));
        }
        if label.split(SEPARATOR).next() == Some(ROOT_NAME) {
            return Err(TagPathError::Root(label.to_string()));
        }
        Ok(TagPath(label.to_string()))
    }

    pub fn from_segments<I, S>(segments: I) -> Result<Self, TagPathError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let joined = segments
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect::<Vec<_>>()
            .join(".");
        Self::parse(&joined)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(SEPARATOR)
    }

    pub fn depth(&self) -> usize {
        self.segments().count()
    }

    /// Last segment, i.e. the node's own name.
    pub fn leaf_name(&self) -> &str {
        self.0.rsplit(SEPARATOR).next().unwrap_or(&self.0)
    }

    pub fn parent(&self) -> Option<TagPath> {
        self.0.rfind(SEPARATOR).map(|idx| TagPath(self.0[..idx].to_string()))
    }

    /// Prefix of `depth` segments, or `None` when `depth` is zero or exceeds
    /// this path's depth.
    pub fn prefix(&self, depth: usize) -> Option<TagPath> {
        if depth == 0 || depth > self.depth() {
            return None;
        }
        let end = self
            .0
            .match_indices(SEPARATOR)
            .nth(depth - 1)
            .map(|(i, _)| i)
            .unwrap_or(self.0.len());
        Some(TagPath(self.0[..end].to_string()))
    }

    /// Truncate to `min(level, depth)` segments.
    pub fn coarsen(&self, level: usize) -> Result<TagPath, TaxonomyError> {
        if !(1..=MAX_DEPTH).contains(&level) {
            return Err(TaxonomyError::LevelOutOfRange(level));
        }
        Ok(self.prefix(level.min(self.depth())).expect("level within depth"))
    }

    /// Deepest common prefix; `None` when the first segments differ.
    pub fn lca(&self, other: &TagPath) -> Option<TagPath> {
        let common = self
            .segments()
            .zip(other.segments())
            .take_while(|(a, b)| a == b)
            .count();
        self.prefix(common)
    }

    /// `self` is `other` or one of its ancestors.
    pub fn subsumes(&self, other: &TagPath) -> bool {
        other.0 == self.0
            || (other.0.len() > self.0.len()
                && other.0.starts_with(&self.0)
                && other.0[self.0.len()..].starts_with(SEPARATOR))
    }

    /// `self` is a strict descendant of `ancestor`.
    pub fn is_descendant_of(&self, ancestor: &TagPath) -> bool {
        self != ancestor && ancestor.subsumes(self)
    }
}

impl fmt::Display for TagPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for TagPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TagPath({:?})", self.0)
    }
}

impl std::str::FromStr for TagPath {
    type Err = TagPathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TagPath::parse(s)
    }
}

impl AsRef<str> for TagPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Serialize for TagPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TagPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        TagPath::parse(&raw).map_err(serde::de::Error::custom)
    }
}
