//! OBO 1.2 flat-file reader. Only `[Term]` stanzas and the `id`, `name`,
//! `synonym`, `is_a` and `is_obsolete` tags are interpreted.

use std::collections::BTreeMap;
use std::io::BufRead;

use super::{Diagnostic, Ontology, OntologyError, OntologyTerm, DEFAULT_ENTITY_ROOT, DEFAULT_ROLE_ROOT};

#[derive(Default)]
struct Stanza {
    line: usize,
    id: Option<String>,
    name: Option<String>,
    synonyms: Vec<String>,
    parents: Vec<String>,
    obsolete: bool,
}

pub fn parse_obo(reader: impl BufRead) -> Result<Ontology, OntologyError> {
    let mut terms: BTreeMap<String, OntologyTerm> = BTreeMap::new();
    let mut current: Option<Stanza> = None;
    let mut in_other_stanza = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(OntologyError::Io)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('!') {
            continue;
        }
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            if let Some(stanza) = current.take() {
                finish(stanza, &mut terms)?;
            }
            if trimmed == "[Term]" {
                current = Some(Stanza { line: line_no, ..Stanza::default() });
                in_other_stanza = false;
            } else {
                in_other_stanza = true;
            }
            continue;
        }
        let Some(stanza) = current.as_mut() else {
            // header lines and non-Term stanzas
            if in_other_stanza || trimmed.contains(':') {
                continue;
            }
            return Err(malformed(line_no, "expected `tag: value`"));
        };
        let Some((tag, value)) = trimmed.split_once(':') else {
            return Err(malformed(line_no, "expected `tag: value`"));
        };
        let value = value.trim();
        match tag.trim() {
            "id" => stanza.id = Some(first_token(value).to_string()),
            "name" => stanza.name = Some(strip_comment(value).to_string()),
            "synonym" => stanza.synonyms.push(
                parse_quoted(value)
                    .ok_or_else(|| malformed(line_no, "synonym value must start with a quoted string"))?,
            ),
            "is_a" => {
                let target = first_token(value);
                if target.is_empty() {
                    return Err(malformed(line_no, "is_a without a target"));
                }
                stanza.parents.push(target.to_string());
            }
            "is_obsolete" => stanza.obsolete = first_token(value) == "true",
            _ => {}
        }
    }
    if let Some(stanza) = current.take() {
        finish(stanza, &mut terms)?;
    }

    let mut diagnostics = Vec::new();
    for term in terms.values() {
        for parent in &term.parents {
            if !terms.contains_key(parent) {
                diagnostics.push(Diagnostic::DanglingParent { term: term.id.clone(), parent: parent.clone() });
            }
        }
    }
    let ontology = Ontology {
        terms,
        role_root: DEFAULT_ROLE_ROOT.to_string(),
        entity_root: DEFAULT_ENTITY_ROOT.to_string(),
        diagnostics,
    };
    if let Some(cycle) = ontology.find_cycle() {
        return Err(OntologyError::CyclicIsA(cycle));
    }
    Ok(ontology)
}

fn malformed(line: usize, message: &str) -> OntologyError {
    OntologyError::MalformedStanza { line, message: message.to_string() }
}

fn finish(stanza: Stanza, terms: &mut BTreeMap<String, OntologyTerm>) -> Result<(), OntologyError> {
    let id =
        stanza.id.filter(|id| !id.is_empty()).ok_or_else(|| malformed(stanza.line, "[Term] stanza without an id"))?;
    let label = stanza.name.unwrap_or_default();
    if label.is_empty() && !stanza.obsolete {
        return Err(malformed(stanza.line, &format!("term {id} has no name")));
    }
    if terms.contains_key(&id) {
        return Err(malformed(stanza.line, &format!("duplicate term id {id}")));
    }
    terms.insert(
        id.clone(),
        OntologyTerm { id, label, synonyms: stanza.synonyms, parents: stanza.parents, obsolete: stanza.obsolete },
    );
    Ok(())
}

fn strip_comment(value: &str) -> &str {
    match value.find(" !") {
        Some(i) => value[..i].trim_end(),
        None => value,
    }
}

fn first_token(value: &str) -> &str {
    value.split_whitespace().next().unwrap_or("")
}

/// Reads the leading OBO quoted string, handling backslash escapes.
fn parse_quoted(value: &str) -> Option<String> {
    let mut chars = value.strip_prefix('"')?.chars();
    let mut out = String::new();
    while let Some(c) = chars.next() {
        match c {
            '"' => return Some(out),
            '\\' => match chars.next()? {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                other => out.push(other),
            },
            other => out.push(other),
        }
    }
    None
}
