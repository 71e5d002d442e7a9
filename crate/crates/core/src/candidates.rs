//! Sentences that mention at least one chemical entity and one role, and the
//! (chemical, role) pairs they give rise to.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotatedDocument, Mention};
use crate::corpus::{DocumentStore, Segmenter, Sentence, TextLocation};
use crate::exec::Parallelism;
use crate::normalize::normalize_surface;
use crate::ontology::EntityKind;

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSentence {
    pub sentence: Sentence,
    pub chemicals: Vec<Mention>,
    pub roles: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub location: TextLocation,
    pub sentence_text: String,
    pub chemical_surface: String,
    pub role_surface: String,
}

/// One candidate per qualifying sentence, in document order. A mention
/// belongs to the sentence whose span contains its start.
pub fn extract_candidates(
    doc: &AnnotatedDocument,
    store: &DocumentStore,
    segmenter: &Segmenter,
) -> Result<Vec<CandidateSentence>, CandidateError> {
    let stored =
        store.get(&doc.doc_checksum).ok_or_else(|| CandidateError::UnknownDocument(doc.doc_checksum.to_string()))?;
    let mut out = Vec::new();
    let mut mentions = doc.mentions.iter().peekable();
    for page in &stored.pages {
        for sentence in segmenter.segment(page, &stored.checksum) {
            let (start, end) = (sentence.location.offset, sentence.end());
            let mut chemicals = Vec::new();
            let mut roles = Vec::new();
            while let Some(m) = mentions.peek() {
                let key = (m.location.page, m.start());
                if key >= (page.number, end) {
                    break;
                }
                if key >= (page.number, start) {
                    match m.kind {
                        EntityKind::Chemical => chemicals.push((*m).clone()),
                        EntityKind::Role => roles.push((*m).clone()),
                    }
                }
                mentions.next();
            }
            if !chemicals.is_empty() && !roles.is_empty() {
                out.push(CandidateSentence { sentence, chemicals, roles });
            }
        }
        // mentions in the trailing gap of a page belong to no sentence
        while mentions.peek().is_some_and(|m| m.location.page <= page.number) {
            mentions.next();
        }
    }
    Ok(out)
}

/// Distinct normalized surfaces in text order, keeping the first verbatim
/// occurrence. Surfaces that do not lie in the sentence text are skipped.
fn distinct_surfaces<'a>(sentence: &str, mentions: &'a [Mention]) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    mentions
        .iter()
        .filter(|m| sentence.contains(m.surface.as_str()))
        .filter(|m| seen.insert(normalize_surface(&m.surface)))
        .map(|m| m.surface.as_str())
        .collect()
}

/// All (chemical, role) combinations of one candidate sentence.
pub fn enumerate_pairs(candidate: &CandidateSentence) -> Vec<CandidatePair> {
    let text = &candidate.sentence.text;
    let chemicals = distinct_surfaces(text, &candidate.chemicals);
    let roles = distinct_surfaces(text, &candidate.roles);
    let mut pairs = Vec::with_capacity(chemicals.len() * roles.len());
    for chemical in &chemicals {
        for role in &roles {
            pairs.push(CandidatePair {
                location: candidate.sentence.location.clone(),
                sentence_text: text.clone(),
                chemical_surface: chemical.to_string(),
                role_surface: role.to_string(),
            });
        }
    }
    pairs
}

/// Candidates and pairs for a whole corpus, in input document order.
pub fn corpus_pairs(
    docs: &[AnnotatedDocument],
    store: &DocumentStore,
    segmenter: &Segmenter,
    parallelism: Parallelism,
) -> Result<(usize, Vec<CandidatePair>), CandidateError> {
    let per_doc = parallelism.map(docs, |d| {
        extract_candidates(d, store, segmenter).map(|cs| {
            let pairs: Vec<CandidatePair> = cs.iter().flat_map(enumerate_pairs).collect();
            (cs.len(), pairs)
        })
    });
    let mut sentences = 0;
    let mut pairs = Vec::new();
    for result in per_doc {
        let (n, p) = result?;
        sentences += n;
        pairs.extend(p);
    }
    Ok((sentences, pairs))
}
