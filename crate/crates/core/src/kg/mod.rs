//! Knowledge-graph construction from confirmed (chemical, role) verdicts:
//! normalization against ontology labels and synonyms, CEAR identifiers for
//! unknown terms, frequency aggregation, `minRef` filtering, statistics and
//! serializers.

mod html;
mod stats;
mod turtle;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TextLocation;
use crate::exec::Parallelism;
use crate::normalize::{char_len, normalize_surface};
use crate::ontology::{build_lexicon, EntityKind, Lexicon, Ontology, OntologyError};
use crate::validate::{Verdict, VerdictRecord};

pub use html::emit_html;
pub use stats::{rank_relations, stats, RankRow, RankTable, StatsColumn, StatsTable, DEFAULT_STATS_MIN_REFS};
pub use turtle::{emit_rdf_star, emit_turtle, CEAR_NS, OBO_NS, RDFS_NS, RDF_NS};

/// Default shortest surface (after normalization) allowed into the graph.
pub const DEFAULT_NORM_MIN_LENGTH: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("surface {surface:?} is shorter than {min_length} characters")]
    TooShort { surface: String, min_length: usize },
}

/// Where a normalized surface landed before CEAR numbering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermRef {
    Chebi(String),
    Cear(String),
}

/// Maps a surface to a ChEBI id when it is a lexicon key of the requested
/// kind, otherwise to its CEAR grouping key. Surfaces shorter than the
/// lexicon's minimum length are rejected.
pub fn normalize_term(surface: &str, lexicon: &Lexicon, kind: EntityKind) -> Result<TermRef, KgError> {
    let key = normalize_surface(surface);
    if char_len(&key) < lexicon.min_length() {
        return Err(KgError::TooShort { surface: surface.to_string(), min_length: lexicon.min_length() });
    }
    match lexicon.lookup(&key) {
        Some(entry) if entry.kind == kind => Ok(TermRef::Chebi(entry.id.clone())),
        _ => Ok(TermRef::Cear(key)),
    }
}

/// Sorted keys numbered from 1 as `chem_<n>` / `role_<n>`.
pub fn assign_cear_ids<'a>(keys: impl IntoIterator<Item = &'a str>, kind: EntityKind) -> BTreeMap<String, String> {
    let prefix = match kind {
        EntityKind::Chemical => "chem",
        EntityKind::Role => "role",
    };
    let sorted: BTreeSet<&str> = keys.into_iter().collect();
    sorted.into_iter().enumerate().map(|(i, k)| (k.to_string(), format!("{prefix}_{}", i + 1))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum RefId {
    Chebi { id: String },
    Cear { key: String, local_name: String },
}

/// A graph node: a ChEBI term or a CEAR term, with its kind and label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityRef {
    pub kind: EntityKind,
    #[serde(flatten)]
    pub id: RefId,
    pub display_label: String,
}

impl EntityRef {
    pub fn is_chebi(&self) -> bool {
        matches!(self.id, RefId::Chebi { .. })
    }

    pub fn source_name(&self) -> &'static str {
        if self.is_chebi() {
            "ChEBI"
        } else {
            "CEAR"
        }
    }

    /// ChEBI before CEAR; ChEBI ids numerically within a prefix, CEAR local
    /// names by kind then number.
    fn order_key(&self) -> (u8, String, u64, String) {
        match &self.id {
            RefId::Chebi { id } => {
                let (prefix, local) = id.split_once(':').unwrap_or(("", id));
                (0, prefix.to_string(), local.parse().unwrap_or(u64::MAX), id.clone())
            }
            RefId::Cear { local_name, .. } => {
                let (prefix, n) = local_name.rsplit_once('_').unwrap_or((local_name, ""));
                (1, prefix.to_string(), n.parse().unwrap_or(u64::MAX), local_name.clone())
            }
        }
    }
}

impl Ord for EntityRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order_key().cmp(&other.order_key()).then(self.kind.cmp(&other.kind))
    }
}

impl PartialOrd for EntityRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            RefId::Chebi { id } => write!(f, "{} ({id})", self.display_label),
            RefId::Cear { local_name, .. } => write!(f, "{} (cear:{local_name})", self.display_label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub entity: EntityRef,
    pub role: EntityRef,
    /// Distinct supporting sentence locations, sorted.
    pub locations: Vec<TextLocation>,
    pub count: usize,
}

/// Relation order: count descending, then entity label, then role label.
fn relation_order(a: &Relation, b: &Relation) -> Ordering {
    b.count
        .cmp(&a.count)
        .then_with(|| a.entity.display_label.cmp(&b.entity.display_label))
        .then_with(|| a.role.display_label.cmp(&b.role.display_label))
        .then_with(|| a.entity.cmp(&b.entity))
        .then_with(|| a.role.cmp(&b.role))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub min_ref: usize,
    pub relations: Vec<Relation>,
}

impl KnowledgeGraph {
    /// Every node referenced by a relation, in serialization order.
    pub fn nodes(&self) -> Vec<&EntityRef> {
        let set: BTreeSet<&EntityRef> = self.relations.iter().flat_map(|r| [&r.entity, &r.role]).collect();
        set.into_iter().collect()
    }
}

/// Per-kind normalization lexicons plus the ontology labels used for
/// display.
#[derive(Debug, Clone)]
pub struct Normalizer {
    chemicals: Lexicon,
    roles: Lexicon,
    labels: HashMap<String, String>,
}

impl Normalizer {
    pub fn from_ontology(ontology: &Ontology, min_length: usize) -> Result<Self, OntologyError> {
        let kinds = ontology.classify();
        Ok(Normalizer {
            chemicals: build_lexicon(ontology, &kinds, &[EntityKind::Chemical], min_length)?,
            roles: build_lexicon(ontology, &kinds, &[EntityKind::Role], min_length)?,
            labels: ontology.terms.values().map(|t| (t.id.clone(), t.label.clone())).collect(),
        })
    }

    pub fn lexicon(&self, kind: EntityKind) -> &Lexicon {
        match kind {
            EntityKind::Chemical => &self.chemicals,
            EntityKind::Role => &self.roles,
        }
    }

    pub fn normalize(&self, surface: &str, kind: EntityKind) -> Result<TermRef, KgError> {
        normalize_term(surface, self.lexicon(kind), kind)
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }
}

#[derive(Debug, Default)]
struct Partial {
    relations: BTreeMap<(TermRef, TermRef), BTreeSet<TextLocation>>,
    /// (kind, CEAR key) -> earliest (location, original surface)
    cear_surfaces: BTreeMap<(EntityKind, String), (TextLocation, String)>,
    dropped: usize,
}

impl Partial {
    fn note_surface(&mut self, kind: EntityKind, term: &TermRef, loc: &TextLocation, surface: &str) {
        if let TermRef::Cear(key) = term {
            let candidate = (loc.clone(), surface.to_string());
            self.cear_surfaces
                .entry((kind, key.clone()))
                .and_modify(|cur| {
                    if candidate < *cur {
                        *cur = candidate.clone();
                    }
                })
                .or_insert(candidate);
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        for (k, locs) in other.relations {
            self.relations.entry(k).or_default().extend(locs);
        }
        for (k, v) in other.cear_surfaces {
            self.cear_surfaces
                .entry(k)
                .and_modify(|cur| {
                    if v < *cur {
                        *cur = v.clone();
                    }
                })
                .or_insert(v);
        }
        self.dropped += other.dropped;
        self
    }
}

fn partial_of(records: &[VerdictRecord], normalizer: &Normalizer) -> Partial {
    let mut p = Partial::default();
    for r in records.iter().filter(|r| r.verdict == Verdict::Confirmed) {
        let chem = normalizer.normalize(&r.pair.chemical_surface, EntityKind::Chemical);
        let role = normalizer.normalize(&r.pair.role_surface, EntityKind::Role);
        let (Ok(chem), Ok(role)) = (chem, role) else {
            p.dropped += 1;
            continue;
        };
        let loc = &r.pair.location;
        p.note_surface(EntityKind::Chemical, &chem, loc, &r.pair.chemical_surface);
        p.note_surface(EntityKind::Role, &role, loc, &r.pair.role_surface);
        p.relations.entry((chem, role)).or_default().insert(loc.clone());
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregation {
    pub relations: Vec<Relation>,
    /// Confirmed records skipped because a surface was too short.
    pub dropped_short: usize,
}

const CHUNK: usize = 4096;

/// Groups confirmed records into relations. Partial maps are built per
/// chunk (in parallel when enabled) and merged; the result does not depend
/// on chunking or scheduling.
pub fn aggregate(records: &[VerdictRecord], normalizer: &Normalizer, parallelism: Parallelism) -> Aggregation {
    let chunks: Vec<&[VerdictRecord]> = records.chunks(CHUNK).collect();
    let partial =
        parallelism.map(&chunks, |c| partial_of(c, normalizer)).into_iter().fold(Partial::default(), Partial::merge);

    let mut cear_keys: BTreeMap<EntityKind, Vec<&str>> = BTreeMap::new();
    for (kind, key) in partial.cear_surfaces.keys() {
        cear_keys.entry(*kind).or_default().push(key);
    }
    let local_names: BTreeMap<EntityKind, BTreeMap<String, String>> =
        cear_keys.into_iter().map(|(kind, keys)| (kind, assign_cear_ids(keys, kind))).collect();

    let resolve = |term: &TermRef, kind: EntityKind| -> EntityRef {
        match term {
            TermRef::Chebi(id) => EntityRef {
                kind,
                id: RefId::Chebi { id: id.clone() },
                display_label: normalizer.label(id).unwrap_or(id).to_string(),
            },
            TermRef::Cear(key) => EntityRef {
                kind,
                id: RefId::Cear { key: key.clone(), local_name: local_names[&kind][key].clone() },
                display_label: partial.cear_surfaces[&(kind, key.clone())].1.clone(),
            },
        }
    };

    let mut relations: Vec<Relation> = partial
        .relations
        .iter()
        .map(|((chem, role), locs)| Relation {
            entity: resolve(chem, EntityKind::Chemical),
            role: resolve(role, EntityKind::Role),
            locations: locs.iter().cloned().collect(),
            count: locs.len(),
        })
        .collect();
    relations.sort_by(relation_order);
    Aggregation { relations, dropped_short: partial.dropped }
}

/// Keeps relations with at least `min_ref` supporting locations.
pub fn apply_min_ref(relations: &[Relation], min_ref: usize) -> KnowledgeGraph {
    let min_ref = min_ref.max(1);
    KnowledgeGraph { min_ref, relations: relations.iter().filter(|r| r.count >= min_ref).cloned().collect() }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::candidates::CandidatePair;
    use crate::corpus::compute_checksum;
    use crate::ontology::parse_obo;
    use crate::validate::PromptTemplate;

    pub(crate) const MINI_OBO: &str = "[Term]\nid: CHEBI:50906\nname: role\n\
        [Term]\nid: CHEBI:24431\nname: chemical entity\n\
        [Term]\nid: CHEBI:35225\nname: buffer\nis_a: CHEBI:50906\n\
        [Term]\nid: CHEBI:30741\nname: ethylene glycol bis(2-aminoethyl)tetraacetate\nsynonym: \"EGTA\" RELATED []\nis_a: CHEBI:24431\n\
        [Term]\nid: CHEBI:15377\nname: water\nsynonym: \"H2O\" EXACT []\nis_a: CHEBI:24431\n\
        [Term]\nid: CHEBI:46787\nname: solvent\nis_a: CHEBI:50906\n";

    pub(crate) fn normalizer() -> Normalizer {
        Normalizer::from_ontology(&parse_obo(MINI_OBO.as_bytes()).unwrap(), DEFAULT_NORM_MIN_LENGTH).unwrap()
    }

    pub(crate) fn confirmed(doc: &str, offset: usize, chem: &str, role: &str) -> VerdictRecord {
        VerdictRecord {
            pair: CandidatePair {
                location: TextLocation { doc_checksum: compute_checksum(doc.as_bytes()), page: 1, offset },
                sentence_text: format!("{chem} is used as {role}."),
                chemical_surface: chem.to_string(),
                role_surface: role.to_string(),
            },
            verdict: Verdict::Confirmed,
            raw_answer: "yes".into(),
            validator_id: "stub".into(),
            template_hash: PromptTemplate::default().hash(),
        }
    }

    #[test]
    fn normalization() {
        let n = normalizer();
        assert_eq!(n.normalize("buffer", EntityKind::Role), Ok(TermRef::Chebi("CHEBI:35225".into())));
        assert_eq!(n.normalize("PBS", EntityKind::Chemical), Ok(TermRef::Cear("pbs".into())));
        assert_eq!(n.normalize("buffers", EntityKind::Role), Ok(TermRef::Cear("buffers".into())));
        // right key, wrong kind
        assert_eq!(n.normalize("buffer", EntityKind::Chemical), Ok(TermRef::Cear("buffer".into())));
        assert_eq!(
            n.normalize(" x ", EntityKind::Chemical),
            Err(KgError::TooShort { surface: " x ".into(), min_length: 2 })
        );
    }

    #[test]
    fn cear_numbering() {
        assert_eq!(assign_cear_ids(["pbs"], EntityKind::Chemical)["pbs"], "chem_1");
        let a = assign_cear_ids(["acn", "pbs"], EntityKind::Chemical);
        assert_eq!((a["acn"].as_str(), a["pbs"].as_str()), ("chem_1", "chem_2"));
        assert_eq!(a, assign_cear_ids(["pbs", "acn"], EntityKind::Chemical));
        assert_eq!(assign_cear_ids(["x"], EntityKind::Role)["x"], "role_1");
    }

    #[test]
    fn grouping_and_dedup() {
        let n = normalizer();
        let records = vec![
            confirmed("a", 0, "water", "solvent"),
            confirmed("a", 10, "H2O", "solvent"),
            confirmed("b", 0, "Water", "solvent"),
            confirmed("b", 0, "water", "solvent"),
            confirmed("b", 5, "PBS", "buffer"),
        ];
        let agg = aggregate(&records, &n, Parallelism::Sequential);
        assert_eq!(agg.relations.len(), 2);
        let water = &agg.relations[0];
        assert_eq!(water.count, 3);
        assert_eq!(water.entity.display_label, "water");
        assert_eq!(water.role.display_label, "solvent");
        assert_eq!(water.locations.len(), 3);
        let pbs = &agg.relations[1];
        assert_eq!(pbs.entity.id, RefId::Cear { key: "pbs".into(), local_name: "chem_1".into() });
        assert_eq!(pbs.entity.display_label, "PBS");
    }

    #[test]
    fn only_confirmed_records_count() {
        let mut r = confirmed("a", 0, "water", "solvent");
        r.verdict = Verdict::Rejected;
        assert!(aggregate(&[r], &normalizer(), Parallelism::Sequential).relations.is_empty());
    }

    #[test]
    fn cear_label_is_earliest_surface() {
        let n = normalizer();
        let records = vec![confirmed("a", 50, "pbs", "buffer"), confirmed("a", 5, "PBS", "buffer")];
        let agg = aggregate(&records, &n, Parallelism::Sequential);
        assert_eq!(agg.relations[0].entity.display_label, "PBS");
    }

    #[test]
    fn min_ref_filter() {
        let n = normalizer();
        let mut records = Vec::new();
        for (chem, count) in [("water", 5), ("PBS", 2), ("ACN", 1)] {
            for i in 0..count {
                records.push(confirmed("d", i * 100, chem, "solvent"));
            }
        }
        let rels = aggregate(&records, &n, Parallelism::Sequential).relations;
        assert_eq!(apply_min_ref(&rels, 1).relations, rels);
        assert_eq!(apply_min_ref(&rels, 2).relations.len(), 2);
        let high = apply_min_ref(&rels, 10);
        assert!(high.relations.is_empty());
        assert!(high.relations.iter().all(|r| apply_min_ref(&rels, 2).relations.contains(r)));
    }

    #[test]
    fn kind_conflicts_give_two_refs() {
        let n = normalizer();
        let records = vec![confirmed("a", 0, "foo", "bar"), confirmed("a", 9, "bar", "foo")];
        let agg = aggregate(&records, &n, Parallelism::Sequential);
        let nodes = apply_min_ref(&agg.relations, 1);
        assert_eq!(nodes.nodes().len(), 4);
    }

    #[test]
    fn parallel_equals_sequential() {
        let n = normalizer();
        let records: Vec<VerdictRecord> = (0..10_000)
            .map(|i| confirmed(&format!("d{}", i % 37), i % 101, &format!("c{}", i % 53), &format!("r{}", i % 7)))
            .collect();
        let seq = aggregate(&records, &n, Parallelism::Sequential);
        let par = crate::exec::with_jobs(Some(8), || aggregate(&records, &n, Parallelism::Rayon));
        assert_eq!(seq, par);
        for r in &seq.relations {
            assert_eq!(r.count, r.locations.len());
            assert!(r.locations.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
