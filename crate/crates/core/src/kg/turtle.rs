//! Turtle and RDF-star serialization. One triple per line, subject repeated.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{EntityRef, KnowledgeGraph, RefId, Relation};
use crate::ontology::EntityKind;

pub const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const RDFS_NS: &str = "http://www.w3.org/2000/01/rdf-schema#";
pub const OBO_NS: &str = "http://purl.obolibrary.org/obo/";
pub const CEAR_NS: &str = "https://wwwiti.cs.uni-magdeburg.de/iti_dke/cear/";

const CHEMICAL_CLASS: &str = "obo:CHEBI_24431";
const ROLE_CLASS: &str = "obo:CHEBI_50906";
const HAS_ROLE: &str = "obo:RO_0000087";

fn prefixes() -> String {
    format!(
        "@prefix rdf: <{RDF_NS}> .\n@prefix rdfs: <{RDFS_NS}> .\n@prefix obo: <{OBO_NS}> .\n@prefix cear: <{CEAR_NS}> .\n"
    )
}

/// Escapes a literal body per the Turtle string grammar.
pub(crate) fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn safe_local(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_alphanumeric())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn full_iri(ns: &str, local: &str) -> String {
    let mut out = format!("<{ns}");
    for b in local.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out.push('>');
    out
}

/// `obo:CHEBI_<n>` for ChEBI ids, `cear:<local>` for CEAR terms. Local
/// names that are not plain alphanumerics fall back to a full IRI.
pub(crate) fn node_term(r: &EntityRef) -> String {
    let (prefix, ns, local) = match &r.id {
        RefId::Chebi { id } => ("obo", OBO_NS, id.replacen(':', "_", 1)),
        RefId::Cear { local_name, .. } => ("cear", CEAR_NS, local_name.clone()),
    };
    if safe_local(&local) {
        format!("{prefix}:{local}")
    } else {
        full_iri(ns, &local)
    }
}

fn class_term(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Chemical => CHEMICAL_CLASS,
        EntityKind::Role => ROLE_CLASS,
    }
}

fn relation_triple(r: &Relation) -> String {
    format!("{} {HAS_ROLE} {}", node_term(&r.entity), node_term(&r.role))
}

/// Relations grouped under their subject node, each group sorted by role.
fn by_subject(kg: &KnowledgeGraph) -> BTreeMap<&EntityRef, Vec<&Relation>> {
    let mut map: BTreeMap<&EntityRef, Vec<&Relation>> = BTreeMap::new();
    for r in &kg.relations {
        map.entry(&r.entity).or_default().push(r);
    }
    for rels in map.values_mut() {
        rels.sort_by(|a, b| a.role.cmp(&b.role));
    }
    map
}

fn write_graph(kg: &KnowledgeGraph, annotate: bool) -> String {
    let mut out = prefixes();
    let subjects = by_subject(kg);
    for node in kg.nodes() {
        let term = node_term(node);
        out.push('\n');
        let _ = writeln!(out, "{term} rdf:type {} .", class_term(node.kind));
        let _ = writeln!(out, "{term} rdfs:label \"{}\" .", escape_literal(&node.display_label));
        for r in subjects.get(node).into_iter().flatten() {
            let triple = relation_triple(r);
            let _ = writeln!(out, "{triple} .");
            if annotate {
                for loc in &r.locations {
                    let _ = writeln!(
                        out,
                        "<< {triple} >> cear:source [ cear:doc \"{}\" ; cear:page {} ; cear:offset {} ] .",
                        loc.doc_checksum, loc.page, loc.offset
                    );
                }
            }
        }
    }
    out
}

/// The graph as Turtle: prefixes, then per node its type, label and
/// outgoing `has role` triples.
pub fn emit_turtle(kg: &KnowledgeGraph) -> String {
    write_graph(kg, false)
}

/// Turtle plus an RDF-star `cear:source` annotation for every supporting
/// text location of every relation.
pub fn emit_rdf_star(kg: &KnowledgeGraph) -> String {
    write_graph(kg, true)
}
