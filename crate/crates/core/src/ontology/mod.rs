//! ChEBI-style ontology: terms, the is_a hierarchy, entity/role
//! classification and surface-form lexicons.

mod lexicon;
mod obo;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{build_lexicon, Lexicon, LexiconEntry, LexiconFile, SurfaceKind};
pub use obo::parse_obo;

pub const DEFAULT_ROLE_ROOT: &str = "CHEBI:50906";
pub const DEFAULT_ENTITY_ROOT: &str = "CHEBI:24431";

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    MalformedStanza { line: usize, message: String },
    #[error("is_a cycle: {}", .0.join(" -> "))]
    CyclicIsA(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("lexicon file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot compile lexicon matcher: {0}")]
    Matcher(String),
}

/// The two annotation types carried through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Chemical,
    Role,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Chemical => "chemical",
            EntityKind::Role => "role",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    Chemical,
    Role,
    Neither,
    Conflict,
}

impl TermKind {
    pub fn entity_kind(self) -> Option<EntityKind> {
        match self {
            TermKind::Chemical => Some(EntityKind::Chemical),
            TermKind::Role => Some(EntityKind::Role),
            TermKind::Neither | TermKind::Conflict => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologyTerm {
    pub id: String,
    pub label: String,
    pub synonyms: Vec<String>,
    pub parents: Vec<String>,
    pub obsolete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Diagnostic {
    DanglingParent { term: String, parent: String },
    AmbiguousSurfaceForm { key: String, ids: Vec<String> },
    ConflictExcluded { term: String },
}

impl Diagnostic {
    /// The term id diagnostics are ordered by.
    pub fn term_id(&self) -> &str {
        match self {
            Diagnostic::DanglingParent { term, .. } | Diagnostic::ConflictExcluded { term } => term,
            Diagnostic::AmbiguousSurfaceForm { ids, .. } => ids.first().map(String::as_str).unwrap_or(""),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DanglingParent { term, parent } => write!(f, "{term}: is_a target {parent} not defined"),
            Diagnostic::AmbiguousSurfaceForm { key, ids } => {
                write!(f, "surface form {key:?} shared by {}; excluded", ids.join(", "))
            }
            Diagnostic::ConflictExcluded { term } => {
                write!(f, "{term}: classified as both chemical entity and role; excluded")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ontology {
    pub terms: BTreeMap<String, OntologyTerm>,
    pub role_root: String,
    pub entity_root: String,
    /// Parse-time findings, sorted by term id.
    pub diagnostics: Vec<Diagnostic>,
}

impl Ontology {
    pub fn from_path(path: &Path) -> Result<Self, OntologyError> {
        parse_obo(BufReader::new(File::open(path)?))
    }

    pub fn term(&self, id: &str) -> Option<&OntologyTerm> {
        self.terms.get(id)
    }

    /// Resolved is_a parents of `id`.
    fn resolved_parents<'a>(&'a self, id: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.terms
            .get(id)
            .into_iter()
            .flat_map(|t| t.parents.iter())
            .filter(|p| self.terms.contains_key(p.as_str()))
            .map(String::as_str)
    }

    /// Ids along one cycle of resolved is_a edges, if any.
    pub(crate) fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let ids: Vec<&str> = self.terms.keys().map(String::as_str).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut mark = vec![Mark::New; ids.len()];
        for root in 0..ids.len() {
            if mark[root] != Mark::New {
                continue;
            }
            // (node, parents, next parent to visit)
            let mut stack: Vec<(usize, Vec<usize>, usize)> = Vec::new();
            let parents_of = |n: usize| self.resolved_parents(ids[n]).map(|p| index[p]).collect::<Vec<_>>();
            mark[root] = Mark::Active;
            stack.push((root, parents_of(root), 0));
            while let Some((node, parents, next)) = stack.last_mut() {
                if let Some(&p) = parents.get(*next) {
                    *next += 1;
                    match mark[p] {
                        Mark::New => {
                            mark[p] = Mark::Active;
                            let ps = parents_of(p);
                            stack.push((p, ps, 0));
                        }
                        Mark::Active => {
                            let from = stack.iter().position(|(n, _, _)| *n == p).unwrap_or(0);
                            return Some(stack[from..].iter().map(|(n, _, _)| ids[*n].to_string()).collect());
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[*node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Classifies every term by reflexive-transitive is_a reachability of
    /// the role and entity roots. Obsolete terms are `Neither`.
    pub fn classify(&self) -> BTreeMap<String, TermKind> {
        // reach[i] = (reaches role root, reaches entity root)
        let ids: Vec<&str> = self.terms.keys().map(String::as_str).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut reach: Vec<Option<(bool, bool)>> = vec![None; ids.len()];

        for start in 0..ids.len() {
            if reach[start].is_some() {
                continue;
            }
            let mut stack = vec![(start, false)];
            while let Some((node, expanded)) = stack.pop() {
                if reach[node].is_some() {
                    continue;
                }
                let parents: Vec<usize> = self.resolved_parents(ids[node]).map(|p| index[p]).collect();
                if expanded {
                    let mut role = ids[node] == self.role_root;
                    let mut entity = ids[node] == self.entity_root;
                    for p in parents {
                        let (r, e) = reach[p].expect("parents resolved before children");
                        role |= r;
                        entity |= e;
                    }
                    reach[node] = Some((role, entity));
                } else {
                    stack.push((node, true));
                    stack.extend(parents.into_iter().filter(|&p| reach[p].is_none()).map(|p| (p, false)));
                }
            }
        }

        ids.iter()
            .zip(reach)
            .map(|(id, r)| {
                let (role, entity) = r.expect("every term visited");
                let kind = if self.terms[*id].obsolete {
                    TermKind::Neither
                } else {
                    match (role, entity) {
                        (true, true) => TermKind::Conflict,
                        (true, false) => TermKind::Role,
                        (false, true) => TermKind::Chemical,
                        (false, false) => TermKind::Neither,
                    }
                };
                (id.to_string(), kind)
            })
            .collect()
    }
}
