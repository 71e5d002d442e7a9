//! Synthetic fixtures shared by the acceptance suite and the benches.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use cear_core::annotate::{Provenance, StandoffFile, StandoffMention};
use cear_core::candidates::CandidatePair;
use cear_core::corpus::{compute_checksum, Document, Page, PreparedDocument, TextLocation};
use cear_core::normalize::normalize_surface;
use cear_core::ontology::{EntityKind, Lexicon, LexiconEntry, SurfaceKind};
use cear_core::validate::{PromptTemplate, Verdict, VerdictRecord, STUB_ID};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ROLE_ROOT: &str = "CHEBI:50906";
pub const ENTITY_ROOT: &str = "CHEBI:24431";

/// (label, id, synonyms)
pub const CHEBI_CHEMICALS: &[(&str, &str, &[&str])] = &[
    ("water", "CHEBI:15377", &["H2O"]),
    ("ethanol", "CHEBI:16236", &[]),
    ("acetone", "CHEBI:15347", &[]),
    ("sodium chloride", "CHEBI:26710", &["NaCl"]),
    ("toluene", "CHEBI:17578", &[]),
    ("glycerol", "CHEBI:17754", &[]),
];

pub const CHEBI_ROLES: &[(&str, &str)] = &[
    ("solvent", "CHEBI:46787"),
    ("buffer", "CHEBI:35225"),
    ("catalyst", "CHEBI:35223"),
    ("cofactor", "CHEBI:23357"),
    ("reagent", "CHEBI:33893"),
];

pub const CEAR_CHEMICALS: &[&str] = &["PBS", "DMSO-d6", "Tris-HCl"];
pub const CEAR_ROLES: &[&str] = &["additive", "buffers"];
const NOISE: &[&str] = &["sample", "mixture", "flask", "residue", "suspension", "filtrate"];

/// Ontology with both roots, the chemicals and the roles above.
pub fn synthetic_obo() -> String {
    let mut obo =
        format!("[Term]\nid: {ROLE_ROOT}\nname: role\n\n[Term]\nid: {ENTITY_ROOT}\nname: chemical entity\n\n");
    for (label, id, synonyms) in CHEBI_CHEMICALS {
        let _ = write!(obo, "[Term]\nid: {id}\nname: {label}\n");
        for s in *synonyms {
            let _ = writeln!(obo, "synonym: \"{s}\" EXACT []");
        }
        let _ = write!(obo, "is_a: {ENTITY_ROOT}\n\n");
    }
    for (label, id) in CHEBI_ROLES {
        let _ = write!(obo, "[Term]\nid: {id}\nname: {label}\nis_a: {ROLE_ROOT}\n\n");
    }
    obo
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Hand-derivable facts about a generated corpus.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Truth {
    pub documents: usize,
    pub duplicates: usize,
    pub mentions_chemical: usize,
    pub mentions_role: usize,
    pub candidate_sentences: usize,
    pub pairs: usize,
    pub confirmed: usize,
    pub rejected: usize,
    /// (chemical key, role key) -> distinct supporting locations
    pub relations: BTreeMap<(String, String), usize>,
}

impl Truth {
    pub fn mentions(&self) -> usize {
        self.mentions_chemical + self.mentions_role
    }

    pub fn relations_at(&self, min_ref: usize) -> usize {
        self.relations.values().filter(|&&c| c >= min_ref).count()
    }
}

struct PageBuilder {
    text: String,
    chars: usize,
    external: Vec<StandoffMention>,
}

impl PageBuilder {
    fn sentence(&mut self, parts: &[(&str, Option<EntityKind>)], page: u32) -> usize {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        for (part, external) in parts {
            let len = part.chars().count();
            if let Some(kind) = external {
                self.external.push(StandoffMention {
                    page,
                    start: self.chars,
                    end: self.chars + len,
                    kind: *kind,
                    surface: part.to_string(),
                    provenance: None,
                });
            }
            self.text.push_str(part);
            self.chars += len;
        }
        start
    }
}

/// Writes `n_docs` raw text documents (plus one duplicate), external
/// standoff files and the ontology under `dir`; returns the expected counts.
///
/// Layout: `dir/papers/*.txt`, `dir/external/*.json`, `dir/chebi.obo`.
pub fn synthetic_corpus(dir: &Path, n_docs: usize, rng: &mut ChaCha8Rng) -> Truth {
    fs::create_dir_all(dir.join("papers")).unwrap();
    fs::create_dir_all(dir.join("external")).unwrap();
    fs::write(dir.join("chebi.obo"), synthetic_obo()).unwrap();
    let mut truth = Truth::default();
    let mut first_doc = Vec::new();

    for d in 0..n_docs {
        let n_pages = rng.gen_range(1..=3);
        let mut pages = Vec::new();
        let mut external = Vec::new();
        // (page, offset, chemical key, role key)
        let mut confirmed_at: Vec<(u32, usize, String, String)> = Vec::new();
        for p in 1..=n_pages {
            let mut b = PageBuilder { text: String::new(), chars: 0, external: Vec::new() };
            for _ in 0..rng.gen_range(2..=8) {
                let chem = CHEBI_CHEMICALS.choose(rng).unwrap();
                let role = CHEBI_ROLES.choose(rng).unwrap();
                let noise = NOISE.choose(rng).unwrap();
                match rng.gen_range(0..7) {
                    0 => {
                        let c = capitalize(chem.0);
                        let off = b.sentence(
                            &[
                                (&c, None),
                                (" was used as ", None),
                                (role.0, None),
                                (" in the ", None),
                                (noise, None),
                                (".", None),
                            ],
                            p,
                        );
                        truth.mentions_chemical += 1;
                        truth.mentions_role += 1;
                        truth.candidate_sentences += 1;
                        truth.pairs += 1;
                        truth.confirmed += 1;
                        confirmed_at.push((p, off, chem.0.to_string(), role.0.to_string()));
                    }
                    1 => {
                        let other = CHEBI_CHEMICALS.iter().filter(|c| c.0 != chem.0).collect::<Vec<_>>();
                        let chem2 = other.choose(rng).unwrap();
                        let c = capitalize(chem.0);
                        b.sentence(
                            &[
                                (&c, None),
                                (" and ", None),
                                (chem2.0, None),
                                (" were mixed with the ", None),
                                (role.0, None),
                                (" ", None),
                                (noise, None),
                                (".", None),
                            ],
                            p,
                        );
                        truth.mentions_chemical += 2;
                        truth.mentions_role += 1;
                        truth.candidate_sentences += 1;
                        truth.pairs += 2;
                        truth.rejected += 2;
                    }
                    2 => {
                        let cear = CEAR_CHEMICALS.choose(rng).unwrap();
                        let off = b.sentence(
                            &[
                                (cear, Some(EntityKind::Chemical)),
                                (" is a ", None),
                                (role.0, None),
                                (" for the ", None),
                                (noise, None),
                                (".", None),
                            ],
                            p,
                        );
                        truth.mentions_chemical += 1;
                        truth.mentions_role += 1;
                        truth.candidate_sentences += 1;
                        truth.pairs += 1;
                        truth.confirmed += 1;
                        confirmed_at.push((p, off, normalize_surface(cear), role.0.to_string()));
                    }
                    3 => {
                        let cear = CEAR_ROLES.choose(rng).unwrap();
                        let c = capitalize(chem.0);
                        let off = b.sentence(
                            &[
                                (&c, None),
                                (" is used as ", None),
                                (cear, Some(EntityKind::Role)),
                                (" overnight.", None),
                            ],
                            p,
                        );
                        truth.mentions_chemical += 1;
                        truth.mentions_role += 1;
                        truth.candidate_sentences += 1;
                        truth.pairs += 1;
                        truth.confirmed += 1;
                        confirmed_at.push((p, off, chem.0.to_string(), normalize_surface(cear)));
                    }
                    4 => {
                        b.sentence(&[("The ", None), (noise, None), (" was dried overnight.", None)], p);
                    }
                    5 => {
                        let c = capitalize(chem.0);
                        b.sentence(&[(&c, None), (" was stirred under nitrogen.", None)], p);
                        truth.mentions_chemical += 1;
                    }
                    _ => {
                        b.sentence(&[("The ", None), (role.0, None), (" was filtered.", None)], p);
                        truth.mentions_role += 1;
                    }
                }
            }
            external.extend(b.external);
            pages.push(b.text);
        }
        let raw = pages.join("\x0c");
        let checksum = compute_checksum(raw.as_bytes());
        fs::write(dir.join(format!("papers/doc{d:03}.txt")), &raw).unwrap();
        if !external.is_empty() {
            let file = StandoffFile {
                doc_checksum: checksum.to_string(),
                provenance: Provenance::External,
                mentions: external,
            };
            fs::write(dir.join(format!("external/doc{d:03}.json")), serde_json::to_vec(&file).unwrap()).unwrap();
        }
        for (_p, _off, chem, role) in confirmed_at {
            *truth.relations.entry((chem, role)).or_default() += 1;
        }
        if d == 0 {
            first_doc = raw.into_bytes();
        }
        truth.documents += 1;
    }
    if n_docs > 0 {
        fs::write(dir.join("papers/zz_copy.txt"), first_doc).unwrap();
        truth.duplicates = 1;
    }
    truth
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "ta", "zo", "bi", "fe", "gu", "ho", "ja", "ki", "mu", "no", "pe", "qui", "sa", "te",
    "vo", "xy", "ze", "dra", "plo", "stri",
];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: std::ops::Range<usize>) -> String {
    let n = rng.gen_range(syllables);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// `n` distinct one- or two-word keys, alternating kinds.
pub fn large_lexicon(n: usize, rng: &mut ChaCha8Rng) -> Lexicon {
    let mut keys = std::collections::BTreeSet::new();
    while keys.len() < n {
        let words = if rng.gen_bool(0.3) { 2 } else { 1 };
        let key: Vec<String> = (0..words).map(|_| pseudo_word(rng, 2..5)).collect();
        keys.insert(key.join(" "));
    }
    let entries = keys
        .into_iter()
        .enumerate()
        .map(|(i, key)| LexiconEntry {
            key,
            id: format!("SYN:{i}"),
            kind: if i % 2 == 0 { EntityKind::Chemical } else { EntityKind::Role },
            surface_kind: SurfaceKind::Label,
        })
        .collect();
    Lexicon::from_entries(4, entries, vec![]).unwrap()
}

/// Documents totalling roughly `total_bytes` of sentence text in which
/// about one word in six is a lexicon key.
pub fn large_corpus(
    total_bytes: usize,
    doc_bytes: usize,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Vec<Arc<Document>> {
    let keys: Vec<&str> = lexicon.entries().iter().map(|e| e.key.as_str()).collect();
    let mut docs = Vec::new();
    let mut produced = 0;
    while produced < total_bytes {
        let mut pages = Vec::new();
        let mut doc_len = 0;
        while doc_len < doc_bytes {
            let mut page = String::with_capacity(4200);
            while page.len() < 4000 {
                let words = rng.gen_range(8..20);
                for w in 0..words {
                    let word = if rng.gen_ratio(1, 6) {
                        keys.choose(rng).unwrap().to_string()
                    } else {
                        pseudo_word(rng, 1..4)
                    };
                    if w == 0 {
                        page.push_str(&capitalize(&word));
                    } else {
                        page.push(' ');
                        page.push_str(&word);
                    }
                }
                page.push_str(". ");
            }
            doc_len += page.len();
            pages.push(Page { number: pages.len() as u32 + 1, text: page });
        }
        produced += doc_len;
        let n = docs.len();
        docs.push(Arc::new(PreparedDocument::from_pages(pages, format!("big{n}")).unwrap().into_document()));
    }
    docs
}

/// A confirmed stub-style verdict for one pair at one location.
pub fn confirmed_record(doc: &str, page: u32, offset: usize, chemical: &str, role: &str) -> VerdictRecord {
    VerdictRecord {
        pair: CandidatePair {
            location: TextLocation { doc_checksum: compute_checksum(doc.as_bytes()), page, offset },
            sentence_text: format!("{chemical} is used as {role}."),
            chemical_surface: chemical.to_string(),
            role_surface: role.to_string(),
        },
        verdict: Verdict::Confirmed,
        raw_answer: "yes".into(),
        validator_id: STUB_ID.into(),
        template_hash: PromptTemplate::default().hash(),
    }
}
