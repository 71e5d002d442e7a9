//! Page-wise paper text: content identities, the on-disk document store and
//! sentence segmentation with character-exact locations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Parallelism;
use crate::normalize::is_token_char;

/// SHA-256 digest rendered as 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Checksum(String);

impl Checksum {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(s: &str) -> Result<Self, IngestError> {
        let valid = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if valid {
            Ok(Checksum(s.to_string()))
        } else {
            Err(IngestError::InvalidChecksum(s.to_string()))
        }
    }
}

impl TryFrom<String> for Checksum {
    type Error = IngestError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Checksum::parse(&s)
    }
}

impl From<Checksum> for String {
    fn from(c: Checksum) -> String {
        c.0
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn compute_checksum(bytes: &[u8]) -> Checksum {
    Checksum(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document has no pages or only empty pages")]
    EmptyDocument,
    #[error("page numbers must start at 1 and strictly increase (got {previous} then {next})")]
    NonMonotonicPages { previous: u32, next: u32 },
    #[error("page {0} contains a NUL character")]
    NulCharacter(u32),
    #[error("declared checksum {declared} does not match computed {computed}")]
    VerificationFailed { declared: Checksum, computed: Checksum },
    #[error("not a 64-character lowercase hex digest: {0:?}")]
    InvalidChecksum(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}: source text is not valid UTF-8")]
    NotUtf8(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub number: u32,
    pub text: String,
}

/// What the document checksum was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChecksumBasis {
    /// UTF-8 page texts joined with a form feed.
    #[default]
    Pages,
    /// Raw bytes of the original source file.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub checksum: Checksum,
    pub source_name: String,
    #[serde(default)]
    pub checksum_basis: ChecksumBasis,
    pub pages: Vec<Page>,
}

impl Document {
    pub fn page(&self, number: u32) -> Option<&Page> {
        self.pages.binary_search_by_key(&number, |p| p.number).ok().map(|i| &self.pages[i])
    }
}

/// On-disk document file. A missing checksum is computed on ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentFile {
    pub checksum: Option<String>,
    pub source_name: String,
    #[serde(default)]
    pub checksum_basis: ChecksumBasis,
    pub pages: Vec<Page>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TextLocation {
    pub doc_checksum: Checksum,
    pub page: u32,
    /// Offset in Unicode scalar values from the start of the page text.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub location: TextLocation,
    pub text: String,
}

impl Sentence {
    /// Exclusive end offset on the page.
    pub fn end(&self) -> usize {
        self.location.offset + self.text.chars().count()
    }
}

#[derive(Debug, Clone)]
pub enum IngestResult {
    Added(Arc<Document>),
    Duplicate(Checksum),
}

impl IngestResult {
    pub fn checksum(&self) -> &Checksum {
        match self {
            IngestResult::Added(doc) => &doc.checksum,
            IngestResult::Duplicate(c) => c,
        }
    }
}

/// Bytes the checksum covers when pages arrive already extracted.
pub fn canonical_bytes(pages: &[Page]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, page) in pages.iter().enumerate() {
        if i > 0 {
            out.push(0x0c);
        }
        out.extend_from_slice(page.text.as_bytes());
    }
    out
}

fn validate_pages(pages: &[Page]) -> Result<(), IngestError> {
    if pages.is_empty() || pages.iter().all(|p| p.text.is_empty()) {
        return Err(IngestError::EmptyDocument);
    }
    let mut previous = 0;
    for page in pages {
        if page.number <= previous {
            return Err(IngestError::NonMonotonicPages { previous, next: page.number });
        }
        if page.text.contains('\0') {
            return Err(IngestError::NulCharacter(page.number));
        }
        previous = page.number;
    }
    Ok(())
}

/// A validated document that has not been inserted anywhere yet.
#[derive(Debug, Clone)]
pub struct PreparedDocument(Document);

impl PreparedDocument {
    /// Pages already extracted; the checksum covers [`canonical_bytes`].
    pub fn from_pages(pages: Vec<Page>, source_name: impl Into<String>) -> Result<Self, IngestError> {
        validate_pages(&pages)?;
        let checksum = compute_checksum(&canonical_bytes(&pages));
        Ok(PreparedDocument(Document {
            checksum,
            source_name: source_name.into(),
            checksum_basis: ChecksumBasis::Pages,
            pages,
        }))
    }

    /// Raw extractor output: pages separated by form feeds, identity over
    /// the raw bytes.
    pub fn from_raw(bytes: &[u8], source_name: impl Into<String>) -> Result<Self, IngestError> {
        let source_name = source_name.into();
        let text = std::str::from_utf8(bytes).map_err(|_| IngestError::NotUtf8(PathBuf::from(&source_name)))?;
        let mut parts: Vec<&str> = text.split('\x0c').collect();
        if parts.len() > 1 && parts.last() == Some(&"") {
            parts.pop();
        }
        let pages: Vec<Page> =
            parts.into_iter().enumerate().map(|(i, t)| Page { number: i as u32 + 1, text: t.to_string() }).collect();
        validate_pages(&pages)?;
        Ok(PreparedDocument(Document {
            checksum: compute_checksum(bytes),
            source_name,
            checksum_basis: ChecksumBasis::Raw,
            pages,
        }))
    }

    /// A document file; a declared checksum over pages is verified, one over
    /// raw source bytes is taken as given.
    pub fn from_file(file: DocumentFile) -> Result<Self, IngestError> {
        let DocumentFile { checksum, source_name, checksum_basis, pages } = file;
        let mut prepared = PreparedDocument::from_pages(pages, source_name)?;
        match (checksum, checksum_basis) {
            (None, _) => {}
            (Some(declared), ChecksumBasis::Pages) => {
                let declared = Checksum::parse(&declared)?;
                if declared != prepared.0.checksum {
                    return Err(IngestError::VerificationFailed { declared, computed: prepared.0.checksum });
                }
            }
            (Some(declared), ChecksumBasis::Raw) => {
                prepared.0.checksum = Checksum::parse(&declared)?;
                prepared.0.checksum_basis = ChecksumBasis::Raw;
            }
        }
        Ok(prepared)
    }

    /// Reads a `.json` document file, or any other file as raw extractor text.
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let bytes = fs::read(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let file: DocumentFile = serde_json::from_slice(&bytes)
                .map_err(|source| IngestError::Json { path: path.to_path_buf(), source })?;
            PreparedDocument::from_file(file)
        } else {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            PreparedDocument::from_raw(&bytes, name)
        }
    }

    pub fn checksum(&self) -> &Checksum {
        &self.0.checksum
    }

    pub fn into_document(self) -> Document {
        self.0
    }
}

/// Checksum-keyed set of documents, optionally backed by a directory of
/// `<checksum>.json` files. The duplicate check and the insert happen under
/// one lock.
#[derive(Debug, Default)]
pub struct DocumentStore {
    dir: Option<PathBuf>,
    docs: Mutex<BTreeMap<Checksum, Arc<Document>>>,
}

impl DocumentStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory. The directory listing
    /// is authoritative; every `*.json` file in it is loaded.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| IngestError::Io { path: dir.clone(), source })?;
        let mut docs = BTreeMap::new();
        for path in list_files(&dir, &["json"])? {
            let bytes = fs::read(&path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
            let doc: Document =
                serde_json::from_slice(&bytes).map_err(|source| IngestError::Json { path: path.clone(), source })?;
            docs.insert(doc.checksum.clone(), Arc::new(doc));
        }
        Ok(DocumentStore { dir: Some(dir), docs: Mutex::new(docs) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn insert(&self, prepared: PreparedDocument) -> Result<IngestResult, IngestError> {
        let mut docs = self.docs.lock().unwrap_or_else(|e| e.into_inner());
        let doc = prepared.into_document();
        if docs.contains_key(&doc.checksum) {
            return Ok(IngestResult::Duplicate(doc.checksum));
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.json", doc.checksum));
            let tmp = dir.join(format!(".{}.json.tmp", doc.checksum));
            let json = serde_json::to_vec(&doc).expect("documents always serialize");
            fs::write(&tmp, json).map_err(|source| IngestError::Io { path: tmp.clone(), source })?;
            fs::rename(&tmp, &path).map_err(|source| IngestError::Io { path, source })?;
        }
        let doc = Arc::new(doc);
        docs.insert(doc.checksum.clone(), Arc::clone(&doc));
        Ok(IngestResult::Added(doc))
    }

    pub fn ingest_document(
        &self,
        pages: Vec<Page>,
        source_name: impl Into<String>,
    ) -> Result<IngestResult, IngestError> {
        self.insert(PreparedDocument::from_pages(pages, source_name)?)
    }

    pub fn get(&self, checksum: &Checksum) -> Option<Arc<Document>> {
        self.docs.lock().unwrap_or_else(|e| e.into_inner()).get(checksum).cloned()
    }

    pub fn contains(&self, checksum: &Checksum) -> bool {
        self.docs.lock().unwrap_or_else(|e| e.into_inner()).contains_key(checksum)
    }

    pub fn len(&self) -> usize {
        self.docs.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All documents ordered by checksum.
    pub fn documents(&self) -> Vec<Arc<Document>> {
        self.docs.lock().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    /// Reads `paths` in parallel, then inserts sequentially in the given
    /// order so Added/Duplicate outcomes are reproducible.
    pub fn ingest_paths(
        &self,
        paths: &[PathBuf],
        parallelism: Parallelism,
    ) -> Vec<(PathBuf, Result<IngestResult, IngestError>)> {
        let prepared = parallelism.map(paths, |p| PreparedDocument::from_path(p));
        paths
            .iter()
            .cloned()
            .zip(prepared)
            .map(|(path, prepared)| {
                let outcome = prepared.and_then(|p| self.insert(p));
                (path, outcome)
            })
            .collect()
    }
}

/// Regular files in `dir` whose extension is in `exts` (all files when
/// `exts` is empty), sorted by path. Hidden files are skipped.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, IngestError> {
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if hidden || !path.is_file() {
            continue;
        }
        let ext_ok =
            exts.is_empty() || path.extension().is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)));
        if ext_ok {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &["approx.", "e.g.", "i.e.", "et al.", "Fig.", "vs."];

/// Rule-based sentence splitter.
///
/// A boundary follows `.`, `!` or `?` when at least one whitespace character
/// and then an uppercase letter or digit come next, unless the terminator
/// closes a guarded abbreviation. Two or more newlines (blank lines, possibly
/// with horizontal whitespace in between) always end a sentence.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: Vec<Vec<char>>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Segmenter {
    pub fn new<'a>(abbreviations: impl IntoIterator<Item = &'a str>) -> Self {
        Segmenter { abbreviations: abbreviations.into_iter().map(|a| a.chars().collect()).collect() }
    }

    /// Sentence spans as `(char offset, text)`.
    pub fn split<'t>(&self, text: &'t str) -> Vec<(usize, &'t str)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let n = chars.len();
        let byte_at = |i: usize| if i < n { chars[i].0 } else { text.len() };
        let mut out = Vec::new();
        let emit = |start: usize, end: usize, out: &mut Vec<(usize, &'t str)>| {
            let mut s = start;
            let mut e = end;
            while s < e && chars[s].1.is_whitespace() {
                s += 1;
            }
            while e > s && chars[e - 1].1.is_whitespace() {
                e -= 1;
            }
            if s < e {
                out.push((s, &text[byte_at(s)..byte_at(e)]));
            }
        };

        let mut start = 0;
        let mut i = 0;
        while i < n {
            let c = chars[i].1;
            if c == '\n' {
                let mut j = i + 1;
                while j < n && chars[j].1 != '\n' && chars[j].1.is_whitespace() {
                    j += 1;
                }
                if j < n && chars[j].1 == '\n' {
                    emit(start, i, &mut out);
                    while j < n && chars[j].1.is_whitespace() {
                        j += 1;
                    }
                    start = j;
                    i = j;
                    continue;
                }
            } else if matches!(c, '.' | '!' | '?') {
                let mut j = i + 1;
                while j < n && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let has_gap = j > i + 1;
                let next_starts = j < n && (chars[j].1.is_uppercase() || chars[j].1.is_ascii_digit());
                if has_gap && next_starts && !self.guarded(&chars, i) {
                    emit(start, i + 1, &mut out);
                    start = i + 1;
                }
            }
            i += 1;
        }
        emit(start, n, &mut out);
        out
    }

    fn guarded(&self, chars: &[(usize, char)], terminator: usize) -> bool {
        self.abbreviations.iter().any(|abbr| {
            let len = abbr.len();
            if len == 0 || len > terminator + 1 {
                return false;
            }
            let from = terminator + 1 - len;
            let same = chars[from..=terminator].iter().map(|&(_, c)| c).eq(abbr.iter().copied());
            same && (from == 0 || !is_token_char(chars[from - 1].1))
        })
    }

    pub fn segment(&self, page: &Page, doc_checksum: &Checksum) -> Vec<Sentence> {
        self.split(&page.text)
            .into_iter()
            .map(|(offset, text)| Sentence {
                location: TextLocation { doc_checksum: doc_checksum.clone(), page: page.number, offset },
                text: text.to_string(),
            })
            .collect()
    }
}

/// Segments a page with the default abbreviation guards.
pub fn segment_sentences(page: &Page, doc_checksum: &Checksum) -> Vec<Sentence> {
    Segmenter::default().segment(page, doc_checksum)
}

/// All sentences of a document in page order.
pub fn document_sentences(doc: &Document, segmenter: &Segmenter) -> Vec<Sentence> {
    doc.pages.iter().flat_map(|p| segmenter.segment(p, &doc.checksum)).collect()
}
