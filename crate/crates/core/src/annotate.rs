//! Typed mentions over documents: dictionary (gazetteer) annotation, the
//! standoff interchange format for external NER output, and merging.

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Checksum, Document, DocumentStore, Segmenter, Sentence, TextLocation};
use crate::exec::Parallelism;
use crate::normalize::{char_len, char_slice, fold_text, is_token_char};
use crate::ontology::{EntityKind, Lexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gazetteer,
    External,
    Gold,
}

impl Provenance {
    /// Overlap tie-break rank; higher wins.
    fn rank(self) -> u8 {
        match self {
            Provenance::Gazetteer => 0,
            Provenance::External => 1,
            Provenance::Gold => 2,
        }
    }
}

/// A typed span on one page. `location.offset` is the start, `end` is
/// exclusive; both count Unicode scalars from the start of the page.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub location: TextLocation,
    pub end: usize,
    pub kind: EntityKind,
    pub surface: String,
    pub provenance: Provenance,
}

impl Mention {
    pub fn start(&self) -> usize {
        self.location.offset
    }

    pub fn len(&self) -> usize {
        self.end - self.location.offset
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sort_key(&self) -> (&Checksum, u32, usize, usize, EntityKind, Provenance) {
        (&self.location.doc_checksum, self.location.page, self.start(), self.end, self.kind, self.provenance)
    }

    #[cfg(test)]
    fn overlaps(&self, other: &Mention) -> bool {
        self.location.doc_checksum == other.location.doc_checksum
            && self.location.page == other.location.page
            && self.start() < other.end
            && other.start() < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub doc_checksum: Checksum,
    /// Sorted by (page, start, end).
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("span {start}..{end} on page {page} is outside the page text")]
    SpanOutOfRange { page: u32, start: usize, end: usize },
    #[error("declared surface {declared:?} differs from page text {actual:?} at page {page} {start}..{end}")]
    SurfaceMismatch { page: u32, start: usize, end: usize, declared: String, actual: String },
    #[error("standoff file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Leftmost-longest, non-overlapping, token-bounded lexicon matches in one
/// sentence. Matching is case-insensitive; offsets refer to the original
/// text.
pub fn gazetteer_annotate(sentence: &Sentence, lexicon: &Lexicon) -> Vec<Mention> {
    let text = &sentence.text;
    let folded = fold_text(text);
    let chars: Vec<char> = text.chars().collect();
    // byte offset in `folded` of each scalar, plus the end
    let mut folded_bytes: Vec<usize> = folded.char_indices().map(|(b, _)| b).collect();
    folded_bytes.push(folded.len());
    let to_char = |byte: usize| folded_bytes.binary_search(&byte).ok();

    let mut found: Vec<(usize, usize, usize)> = lexicon
        .raw_matches(&folded)
        .filter_map(|(entry, bs, be)| {
            let (s, e) = (to_char(bs)?, to_char(be)?);
            let left_ok = s == 0 || !is_token_char(chars[s - 1]);
            let right_ok = e == chars.len() || !is_token_char(chars[e]);
            (left_ok && right_ok && e > s).then_some((s, e, entry))
        })
        .collect();
    select_leftmost_longest(&mut found);

    let mut byte_of: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    byte_of.push(text.len());
    found
        .into_iter()
        .map(|(s, e, entry)| Mention {
            location: TextLocation {
                doc_checksum: sentence.location.doc_checksum.clone(),
                page: sentence.location.page,
                offset: sentence.location.offset + s,
            },
            end: sentence.location.offset + e,
            kind: lexicon.entry(entry).kind,
            surface: text[byte_of[s]..byte_of[e]].to_string(),
            provenance: Provenance::Gazetteer,
        })
        .collect()
}

/// Greedy leftmost-longest selection over `(start, end, payload)` spans.
/// Ties on an identical span keep the smallest payload.
pub(crate) fn select_leftmost_longest(spans: &mut Vec<(usize, usize, usize)>) {
    spans.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut last_end = 0;
    let mut first = true;
    spans.retain(|&(s, e, _)| {
        if first || s >= last_end {
            first = false;
            last_end = e;
            true
        } else {
            false
        }
    });
}

/// Union of two mention lists with overlaps resolved: the longer span wins,
/// then the stronger provenance (gold, external, gazetteer), then the
/// earlier start. The result is non-overlapping and sorted.
pub fn merge_annotations(a: &[Mention], b: &[Mention]) -> Vec<Mention> {
    let mut all: Vec<&Mention> = a.iter().chain(b.iter()).collect();
    all.sort_by(|x, y| {
        (&x.location.doc_checksum, x.location.page)
            .cmp(&(&y.location.doc_checksum, y.location.page))
            .then(y.len().cmp(&x.len()))
            .then(y.provenance.rank().cmp(&x.provenance.rank()))
            .then(x.start().cmp(&y.start()))
            .then(x.kind.cmp(&y.kind))
            .then(x.surface.cmp(&y.surface))
    });
    // per (doc, page): selected spans keyed by start
    let mut kept: Vec<Mention> = Vec::new();
    let mut taken: BTreeMap<(&Checksum, u32), BTreeMap<usize, usize>> = BTreeMap::new();
    for m in all {
        let spans = taken.entry((&m.location.doc_checksum, m.location.page)).or_default();
        let before = spans.range(..m.end).next_back();
        let blocked = before.is_some_and(|(_, &end)| end > m.start());
        if !blocked && !m.is_empty() {
            spans.insert(m.start(), m.end);
            kept.push(m.clone());
        }
    }
    kept.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));
    kept
}

/// Gazetteer-annotates every sentence of a document with each lexicon and
/// merges the results.
pub fn annotate_document(doc: &Document, lexicons: &[&Lexicon], segmenter: &Segmenter) -> AnnotatedDocument {
    let mut per_lexicon: Vec<Vec<Mention>> = vec![Vec::new(); lexicons.len()];
    for page in &doc.pages {
        for sentence in segmenter.segment(page, &doc.checksum) {
            for (found, lexicon) in per_lexicon.iter_mut().zip(lexicons) {
                found.extend(gazetteer_annotate(&sentence, lexicon));
            }
        }
    }
    let mut lists = per_lexicon.into_iter();
    let first = lists.next().unwrap_or_default();
    let mentions = lists.fold(first, |acc, next| merge_annotations(&acc, &next));
    AnnotatedDocument { doc_checksum: doc.checksum.clone(), mentions }
}

pub fn annotate_corpus(
    docs: &[Arc<Document>],
    lexicons: &[&Lexicon],
    segmenter: &Segmenter,
    parallelism: Parallelism,
) -> Vec<AnnotatedDocument> {
    parallelism.map(docs, |d| annotate_document(d, lexicons, segmenter))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandoffMention {
    pub page: u32,
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub surface: String,
    /// Overrides the file-level provenance when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandoffFile {
    pub doc_checksum: String,
    pub provenance: Provenance,
    pub mentions: Vec<StandoffMention>,
}

impl StandoffFile {
    pub fn from_annotated(doc: &AnnotatedDocument, provenance: Provenance) -> Self {
        StandoffFile {
            doc_checksum: doc.doc_checksum.to_string(),
            provenance,
            mentions: doc
                .mentions
                .iter()
                .map(|m| StandoffMention {
                    page: m.location.page,
                    start: m.start(),
                    end: m.end,
                    kind: m.kind,
                    surface: m.surface.clone(),
                    provenance: (m.provenance != provenance).then_some(m.provenance),
                })
                .collect(),
        }
    }
}

/// Validates a standoff file against the stored document text.
pub fn resolve_standoff(file: StandoffFile, store: &DocumentStore) -> Result<AnnotatedDocument, AnnotateError> {
    let checksum =
        Checksum::parse(&file.doc_checksum).map_err(|_| AnnotateError::UnknownDocument(file.doc_checksum.clone()))?;
    let doc = store.get(&checksum).ok_or_else(|| AnnotateError::UnknownDocument(file.doc_checksum.clone()))?;
    let mut mentions = Vec::with_capacity(file.mentions.len());
    for m in file.mentions {
        let out_of_range = || AnnotateError::SpanOutOfRange { page: m.page, start: m.start, end: m.end };
        let page = doc.page(m.page).ok_or_else(out_of_range)?;
        if m.start >= m.end {
            return Err(out_of_range());
        }
        let actual = char_slice(&page.text, m.start, m.end).ok_or_else(out_of_range)?;
        if actual != m.surface {
            return Err(AnnotateError::SurfaceMismatch {
                page: m.page,
                start: m.start,
                end: m.end,
                declared: m.surface,
                actual: actual.to_string(),
            });
        }
        mentions.push(Mention {
            location: TextLocation { doc_checksum: checksum.clone(), page: m.page, offset: m.start },
            end: m.end,
            kind: m.kind,
            surface: m.surface,
            provenance: m.provenance.unwrap_or(file.provenance),
        });
    }
    mentions.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));
    Ok(AnnotatedDocument { doc_checksum: checksum, mentions })
}

/// Converts a standoff file without checking it against document text.
/// Only the checksum syntax and span ordering are verified.
pub fn standoff_mentions(file: StandoffFile) -> Result<AnnotatedDocument, AnnotateError> {
    let checksum =
        Checksum::parse(&file.doc_checksum).map_err(|_| AnnotateError::UnknownDocument(file.doc_checksum.clone()))?;
    let mut mentions = Vec::with_capacity(file.mentions.len());
    for m in file.mentions {
        if m.start >= m.end {
            return Err(AnnotateError::SpanOutOfRange { page: m.page, start: m.start, end: m.end });
        }
        mentions.push(Mention {
            location: TextLocation { doc_checksum: checksum.clone(), page: m.page, offset: m.start },
            end: m.end,
            kind: m.kind,
            surface: m.surface,
            provenance: m.provenance.unwrap_or(file.provenance),
        });
    }
    mentions.sort_by(|x, y| x.sort_key().cmp(&y.sort_key()));
    Ok(AnnotatedDocument { doc_checksum: checksum, mentions })
}

pub fn load_standoff(reader: impl Read, store: &DocumentStore) -> Result<AnnotatedDocument, AnnotateError> {
    let file: StandoffFile = serde_json::from_reader(reader)?;
    resolve_standoff(file, store)
}

/// True when `surface` matches the page slice each mention points to.
pub fn surfaces_match(doc: &Document, mentions: &[Mention]) -> bool {
    mentions.iter().all(|m| {
        doc.page(m.location.page)
            .and_then(|p| char_slice(&p.text, m.start(), m.end))
            .is_some_and(|s| s == m.surface && char_len(s) == m.len())
    })
}
