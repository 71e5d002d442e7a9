use std::collections::{BTreeMap, BTreeSet, HashMap};

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

use super::{Diagnostic, EntityKind, Ontology, OntologyError, TermKind};
use crate::normalize::{char_len, normalize_surface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Label,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub key: String,
    pub id: String,
    pub kind: EntityKind,
    #[serde(default = "default_surface_kind")]
    pub surface_kind: SurfaceKind,
}

fn default_surface_kind() -> SurfaceKind {
    SurfaceKind::Synonym
}

/// Serialized form of a [`Lexicon`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub min_length: usize,
    pub entries: Vec<LexiconEntry>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

/// Normalized surface forms mapped to unique term ids, with a compiled
/// multi-pattern matcher over exactly those keys.
#[derive(Debug, Clone)]
pub struct Lexicon {
    min_length: usize,
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
    matcher: AhoCorasick,
    diagnostics: Vec<Diagnostic>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.min_length == other.min_length && self.entries == other.entries && self.diagnostics == other.diagnostics
    }
}

impl Lexicon {
    /// Entries must already be normalized; they are sorted by key and the
    /// matcher is compiled over them.
    pub fn from_entries(
        min_length: usize,
        mut entries: Vec<LexiconEntry>,
        diagnostics: Vec<Diagnostic>,
    ) -> Result<Self, OntologyError> {
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        entries.dedup_by(|a, b| a.key == b.key);
        let matcher = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(entries.iter().map(|e| e.key.as_str()))
            .map_err(|e| OntologyError::Matcher(e.to_string()))?;
        let index = entries.iter().enumerate().map(|(i, e)| (e.key.clone(), i)).collect();
        Ok(Lexicon { min_length, entries, index, matcher, diagnostics })
    }

    pub fn from_file(file: LexiconFile) -> Result<Self, OntologyError> {
        let entries = file.entries.into_iter().map(|e| LexiconEntry { key: normalize_surface(&e.key), ..e }).collect();
        Lexicon::from_entries(file.min_length, entries, file.diagnostics)
    }

    pub fn to_file(&self) -> LexiconFile {
        LexiconFile {
            min_length: self.min_length,
            entries: self.entries.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self, OntologyError> {
        let file: LexiconFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Lexicon::from_file(file)
    }

    pub fn min_length(&self) -> usize {
        self.min_length
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Looks up an already-normalized key.
    pub fn lookup(&self, key: &str) -> Option<&LexiconEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    pub fn entry(&self, pattern: usize) -> &LexiconEntry {
        &self.entries[pattern]
    }

    /// All (possibly overlapping) key occurrences in folded text as
    /// `(entry index, byte start, byte end)`.
    pub fn raw_matches<'h>(&'h self, folded: &'h str) -> impl Iterator<Item = (usize, usize, usize)> + 'h {
        self.matcher.find_overlapping_iter(folded).map(|m| (m.pattern().as_usize(), m.start(), m.end()))
    }
}

/// Builds a lexicon from every included, non-obsolete term's label and
/// synonyms. Strings shorter than `min_length` scalars are skipped; keys
/// claimed by more than one term are dropped and reported.
pub fn build_lexicon(
    ontology: &Ontology,
    kinds: &BTreeMap<String, TermKind>,
    include: &[EntityKind],
    min_length: usize,
) -> Result<Lexicon, OntologyError> {
    let min_length = min_length.max(1);
    let include: BTreeSet<EntityKind> = include.iter().copied().collect();
    let mut claims: BTreeMap<String, BTreeMap<&str, (EntityKind, SurfaceKind)>> = BTreeMap::new();
    let mut diagnostics = Vec::new();

    for term in ontology.terms.values().filter(|t| !t.obsolete) {
        let kind = kinds.get(&term.id).copied().unwrap_or(TermKind::Neither);
        if kind == TermKind::Conflict {
            diagnostics.push(Diagnostic::ConflictExcluded { term: term.id.clone() });
            continue;
        }
        let Some(kind) = kind.entity_kind().filter(|k| include.contains(k)) else {
            continue;
        };
        let surfaces = std::iter::once((term.label.as_str(), SurfaceKind::Label))
            .chain(term.synonyms.iter().map(|s| (s.as_str(), SurfaceKind::Synonym)));
        for (raw, surface_kind) in surfaces {
            if char_len(raw) < min_length {
                continue;
            }
            let key = normalize_surface(raw);
            if char_len(&key) < min_length {
                continue;
            }
            let slot = claims.entry(key).or_default().entry(term.id.as_str()).or_insert((kind, surface_kind));
            slot.1 = slot.1.min(surface_kind);
        }
    }

    let mut entries = Vec::with_capacity(claims.len());
    for (key, owners) in claims {
        if owners.len() > 1 {
            let ids = owners.keys().map(|id| id.to_string()).collect();
            diagnostics.push(Diagnostic::AmbiguousSurfaceForm { key, ids });
            continue;
        }
        let (id, (kind, surface_kind)) = owners.into_iter().next().expect("non-empty claim");
        entries.push(LexiconEntry { key, id: id.to_string(), kind, surface_kind });
    }
    diagnostics.sort_by(|a, b| a.term_id().cmp(b.term_id()).then_with(|| a.cmp(b)));
    Lexicon::from_entries(min_length, entries, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_obo;
    use proptest::prelude::*;

    fn onto(src: &str) -> Ontology {
        parse_obo(src.as_bytes()).unwrap()
    }

    const ROLES: &str = "[Term]\nid: CHEBI:50906\nname: role\n\
        [Term]\nid: CHEBI:35225\nname: buffer\nsynonym: \"Buffer\" EXACT []\nis_a: CHEBI:50906\n\
        [Term]\nid: CHEBI:75232\nname: dye\nis_a: CHEBI:50906\n\
        [Term]\nid: CHEBI:24431\nname: chemical entity\n\
        [Term]\nid: CHEBI:15377\nname: water\nsynonym: \"H2O\" EXACT []\nis_a: CHEBI:24431\n";

    #[test]
    fn role_lexicon_threshold() {
        let o = onto(ROLES);
        let lex = build_lexicon(&o, &o.classify(), &[EntityKind::Role], 4).unwrap();
        let buffer = lex.lookup("buffer").unwrap();
        assert_eq!(buffer.id, "CHEBI:35225");
        assert_eq!(buffer.surface_kind, SurfaceKind::Label);
        assert!(lex.lookup("dye").is_none());
        assert!(lex.lookup("water").is_none());
        assert!(lex.entries().iter().all(|e| e.key.chars().count() >= 4));
    }

    #[test]
    fn short_forms_kept_at_two() {
        let o =
            onto(&format!("{ROLES}[Term]\nid: CHEBI:5\nname: lithium\nsynonym: \"Li\" EXACT []\nis_a: CHEBI:24431\n"));
        let lex = build_lexicon(&o, &o.classify(), &[EntityKind::Chemical], 2).unwrap();
        assert_eq!(lex.lookup("li").unwrap().id, "CHEBI:5");
        assert_eq!(lex.lookup("h2o").unwrap().id, "CHEBI:15377");
    }

    #[test]
    fn collisions_are_excluded() {
        let o = onto(
            "[Term]\nid: CHEBI:24431\nname: chemical entity\n\
             [Term]\nid: CHEBI:9754\nname: tris\nis_a: CHEBI:24431\n\
             [Term]\nid: CHEBI:9755\nname: tromethamine\nsynonym: \"Tris\" RELATED []\nis_a: CHEBI:24431\n",
        );
        let lex = build_lexicon(&o, &o.classify(), &[EntityKind::Chemical], 2).unwrap();
        assert!(lex.lookup("tris").is_none());
        assert_eq!(
            lex.diagnostics(),
            &[Diagnostic::AmbiguousSurfaceForm {
                key: "tris".into(),
                ids: vec!["CHEBI:9754".into(), "CHEBI:9755".into()]
            }]
        );
    }

    #[test]
    fn conflicts_excluded_and_reported() {
        let o = crate::ontology::tests::fixture();
        let lex = build_lexicon(&o, &o.classify(), &[EntityKind::Chemical, EntityKind::Role], 2).unwrap();
        assert!(lex.lookup("confused").is_none());
        assert!(lex.diagnostics().contains(&Diagnostic::ConflictExcluded { term: "CHEBI:99999".into() }));
        assert!(lex.lookup("old buffer").is_none());
        assert_eq!(lex.lookup("egta").unwrap().kind, EntityKind::Chemical);
    }

    #[test]
    fn json_round_trip() {
        let o = onto(ROLES);
        let lex = build_lexicon(&o, &o.classify(), &[EntityKind::Role, EntityKind::Chemical], 2).unwrap();
        let json = serde_json::to_string(&lex.to_file()).unwrap();
        let back = Lexicon::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(lex, back);
    }

    #[test]
    fn empty_lexicon_matches_nothing() {
        let lex = Lexicon::from_entries(4, vec![], vec![]).unwrap();
        assert_eq!(lex.raw_matches("anything at all").count(), 0);
    }

    fn random_ontology() -> impl Strategy<Value = String> {
        let names = prop::collection::vec("[a-c]{1,6}( [a-c]{1,3})?", 1..25);
        names.prop_map(|names| {
            let mut src =
                String::from("[Term]\nid: CHEBI:50906\nname: role\n[Term]\nid: CHEBI:24431\nname: chemical entity\n");
            for (i, n) in names.iter().enumerate() {
                let root = if i % 2 == 0 { "CHEBI:50906" } else { "CHEBI:24431" };
                src.push_str(&format!("[Term]\nid: T:{i}\nname: {n}\nsynonym: \"{n}x\" EXACT []\nis_a: {root}\n"));
            }
            src
        })
    }

    proptest! {
        #[test]
        fn lexicon_is_monotone_in_min_length(src in random_ontology(), k in 1usize..6) {
            let o = onto(&src);
            let kinds = o.classify();
            let both = [EntityKind::Chemical, EntityKind::Role];
            let at_k = build_lexicon(&o, &kinds, &both, k).unwrap();
            let at_k1 = build_lexicon(&o, &kinds, &both, k + 1).unwrap();
            for e in at_k1.entries() {
                prop_assert_eq!(at_k.lookup(&e.key), Some(e));
            }
            prop_assert!(at_k.entries().iter().all(|e| e.key.chars().count() >= k));
        }

        #[test]
        fn building_is_deterministic(src in random_ontology()) {
            let a = onto(&src);
            let b = onto(&src);
            let la = build_lexicon(&a, &a.classify(), &[EntityKind::Role, EntityKind::Chemical], 2).unwrap();
            let lb = build_lexicon(&b, &b.classify(), &[EntityKind::Role, EntityKind::Chemical], 2).unwrap();
            prop_assert_eq!(la, lb);
        }
    }
}
