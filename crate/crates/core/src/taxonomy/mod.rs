//! The UNER entity hierarchy.
//!
//! A [`Taxonomy`] is a tree rooted at `TOP` with at most four levels below the
//! root. Nodes are addressed by [`TagPath`], the dot-joined chain of names
//! from a level-1 node downward (`Name.Person.Fictional`). Annotations may
//! carry any node at levels 1 to 4, not only leaves.
//!
//! The taxonomy file is a single JSON tree object:
//!
//! ```json
//! {"name": "TOP", "notes": ["free text"], "children": [
//!     {"name": "Name", "children": [{"name": "Person"}]}
//! ]}
//! ```
//!
//! `children` and `notes` are optional on every node.

mod path;
mod scheme;

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

pub use path::{is_legal_name, TagPath, TagPathError, SEPARATOR};
pub use scheme::{SchemeMapping, SchemeRegistry, IDENTITY_SCHEME};

/// Name of the root node.
pub const ROOT_NAME: &str = "TOP";
/// Deepest level below the root.
pub const MAX_DEPTH: usize = 4;

/// The UNER hierarchy shipped with the crate.
pub const UNER_TAXONOMY_JSON: &str = include_str!("../../data/uner_taxonomy.json");

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("taxonomy root must be named {ROOT_NAME:?}")]
    MissingRoot,
    #[error("duplicate child {name:?} under {parent:?}")]
    DuplicateSibling { parent: String, name: String },
    #[error("node {path:?} is deeper than level {MAX_DEPTH}")]
    DepthExceeded { path: String },
    #[error("illegal node name {name:?}")]
    IllegalName { name: String },
    #[error("unknown path {path:?} (deepest valid prefix: {})", deepest_prefix.as_deref().unwrap_or("none"))]
    UnknownPath {
        path: String,
        deepest_prefix: Option<String>,
    },
    #[error("level {0} out of range 1..=4")]
    LevelOutOfRange(usize),
    #[error("{0}")]
    Label(#[from] TagPathError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("scheme mapping line {line}: {message}")]
    MappingSyntax { line: usize, message: String },
    #[error("scheme {scheme:?} maps {label:?} twice")]
    DuplicateMapping { scheme: String, label: String },
    #[error("scheme {scheme:?} maps {label:?} to unknown path {path:?}")]
    MappingTarget {
        scheme: String,
        label: String,
        path: String,
    },
    #[error("label {label:?} is not mapped by scheme {scheme:?}")]
    UnmappedLabel { scheme: String, label: String },
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
}

#[derive(Deserialize)]
struct RawNode {
    name: Option<String>,
    #[serde(default)]
    children: Vec<RawNode>,
    #[serde(default)]
    #[allow(dead_code)]
    notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
struct Node {
    name: String,
    level: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    path: Option<TagPath>,
}

/// Immutable, indexed UNER tree.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    index: HashMap<TagPath, NodeId>,
}

impl Taxonomy {
    /// Parse and validate a taxonomy file.
    pub fn from_json(source: &str) -> Result<Self, TaxonomyError> {
        let raw: RawNode = serde_json::from_str(source)?;
        if raw.name.as_deref() != Some(ROOT_NAME) {
            return Err(TaxonomyError::MissingRoot);
        }
        let mut taxonomy = Taxonomy {
            nodes: vec![Node {
                name: ROOT_NAME.to_string(),
                level: 0,
                parent: None,
                children: Vec::new(),
                path: None,
            }],
            index: HashMap::new(),
        };
        taxonomy.attach(NodeId(0), &raw.children)?;
        Ok(taxonomy)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The shipped UNER hierarchy.
    pub fn uner() -> Self {
        Self::from_json(UNER_TAXONOMY_JSON).expect("shipped taxonomy is valid")
    }

    fn attach(&mut self, parent: NodeId, children: &[RawNode]) -> Result<(), TaxonomyError> {
        let parent_level = self.nodes[parent.0].level;
        for raw in children {
            let name = raw.name.clone().unwrap_or_default();
            if !is_legal_name(&name) || name == ROOT_NAME {
                return Err(TaxonomyError::IllegalName { name });
            }
            let path = match &self.nodes[parent.0].path {
                Some(p) => format!("{}{}{}", p, SEPARATOR, name),
                None => name.clone(),
            };
            let level = parent_level + 1;
            if level > MAX_DEPTH {
                return Err(TaxonomyError::DepthExceeded { path });
            }
            let tag = TagPath::parse(&path)?;
            if self.index.contains_key(&tag) {
                return Err(TaxonomyError::DuplicateSibling {
                    parent: self.nodes[parent.0]
                        .path
                        .as_ref()
                        .map_or(ROOT_NAME.to_string(), |p| p.to_string()),
                    name,
                });
            }
            let id = NodeId(self.nodes.len());
            self.nodes.push(Node {
                name,
                level,
                parent: Some(parent),
                children: Vec::new(),
                path: Some(tag.clone()),
            });
            self.nodes[parent.0].children.push(id);
            self.index.insert(tag, id);
            self.attach(id, &raw.children)?;
        }
        Ok(())
    }

    /// Number of nodes at each level, root included.
    pub fn level_counts(&self) -> [usize; MAX_DEPTH + 1] {
        let mut counts = [0; MAX_DEPTH + 1];
        for node in &self.nodes {
            counts[node.level] += 1;
        }
        counts
    }

    /// Number of nodes below the root.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, path: &TagPath) -> bool {
        self.index.contains_key(path)
    }

    /// Validate a label string against the tree.
    pub fn resolve(&self, label: &str) -> Result<TagPath, TaxonomyError> {
        let unknown = |deepest_prefix| TaxonomyError::UnknownPath {
            path: label.to_string(),
            deepest_prefix,
        };
        let Ok(path) = TagPath::parse(label) else {
            return Err(unknown(self.deepest_prefix(label.split(SEPARATOR))));
        };
        if self.contains(&path) {
            Ok(path)
        } else {
            Err(unknown(self.deepest_prefix(path.segments())))
        }
    }

    fn deepest_prefix<'a>(&self, segments: impl Iterator<Item = &'a str>) -> Option<String> {
        let mut node = NodeId(0);
        for segment in segments {
            match self.child_named(node, segment) {
                Some(child) => node = child,
                None => break,
            }
        }
        self.nodes[node.0].path.as_ref().map(|p| p.to_string())
    }

    fn child_named(&self, node: NodeId, name: &str) -> Option<NodeId> {
        self.nodes[node.0]
            .children
            .iter()
            .copied()
            .find(|c| self.nodes[c.0].name == name)
    }

    fn id(&self, path: &TagPath) -> Option<NodeId> {
        self.index.get(path).copied()
    }

    /// Every node below the root, in pre-order.
    pub fn paths(&self) -> impl Iterator<Item = &TagPath> {
        self.nodes.iter().filter_map(|n| n.path.as_ref())
    }

    pub fn level_of(&self, path: &TagPath) -> Option<usize> {
        self.id(path).map(|id| self.nodes[id.0].level)
    }

    pub fn children(&self, path: &TagPath) -> Vec<TagPath> {
        self.id(path)
            .map(|id| self.collect_paths(&self.nodes[id.0].children))
            .unwrap_or_default()
    }

    /// Other children of the same parent, in file order.
    pub fn siblings(&self, path: &TagPath) -> Vec<TagPath> {
        let Some(id) = self.id(path) else {
            return Vec::new();
        };
        let parent = self.nodes[id.0].parent.expect("non-root node has parent");
        self.nodes[parent.0]
            .children
            .iter()
            .filter(|c| **c != id)
            .filter_map(|c| self.nodes[c.0].path.clone())
            .collect()
    }

    /// Ancestors from level 1 down to the direct parent.
    pub fn ancestors(&self, path: &TagPath) -> Vec<TagPath> {
        (1..path.depth()).filter_map(|d| path.prefix(d)).collect()
    }

    pub fn is_leaf(&self, path: &TagPath) -> bool {
        self.id(path)
            .map(|id| self.nodes[id.0].children.is_empty())
            .unwrap_or(false)
    }

    fn collect_paths(&self, ids: &[NodeId]) -> Vec<TagPath> {
        ids.iter().filter_map(|c| self.nodes[c.0].path.clone()).collect()
    }
}
