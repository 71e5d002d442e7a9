//! `minRef` sweep statistics and frequency rankings.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EntityRef, Relation};
use crate::ontology::EntityKind;

pub const DEFAULT_STATS_MIN_REFS: [usize; 6] = [1, 2, 5, 10, 20, 50];

/// Graph statistics for one `minRef` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsColumn {
    pub min_ref: usize,
    pub relations: usize,
    pub text_positions: usize,
    pub chemicals_chebi: usize,
    pub chemicals_cear: usize,
    pub roles_chebi: usize,
    pub roles_cear: usize,
}

impl StatsColumn {
    /// The six row values in table order.
    pub fn values(&self) -> [usize; 6] {
        [
            self.relations,
            self.text_positions,
            self.chemicals_chebi,
            self.chemicals_cear,
            self.roles_chebi,
            self.roles_cear,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsTable {
    pub columns: Vec<StatsColumn>,
}

const ROW_NAMES: [&str; 6] = [
    "relations",
    "relevant text positions",
    "chemical entities (ChEBI)",
    "chemical entities (CEAR)",
    "roles (ChEBI)",
    "roles (CEAR)",
];

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<27}", "minRef")?;
        for c in &self.columns {
            write!(f, " {:>9}", c.min_ref)?;
        }
        writeln!(f)?;
        for (i, name) in ROW_NAMES.iter().enumerate() {
            write!(f, "{name:<27}")?;
            for c in &self.columns {
                write!(f, " {:>9}", c.values()[i])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn column(relations: &[Relation], min_ref: usize) -> StatsColumn {
    let kept: Vec<&Relation> = relations.iter().filter(|r| r.count >= min_ref.max(1)).collect();
    let nodes: BTreeSet<&EntityRef> = kept.iter().flat_map(|r| [&r.entity, &r.role]).collect();
    let count =
        |kind: EntityKind, chebi: bool| nodes.iter().filter(|n| n.kind == kind && n.is_chebi() == chebi).count();
    StatsColumn {
        min_ref,
        relations: kept.len(),
        text_positions: kept.iter().map(|r| r.count).sum(),
        chemicals_chebi: count(EntityKind::Chemical, true),
        chemicals_cear: count(EntityKind::Chemical, false),
        roles_chebi: count(EntityKind::Role, true),
        roles_cear: count(EntityKind::Role, false),
    }
}

/// One column per `min_ref` value, in the given order.
pub fn stats(relations: &[Relation], min_refs: &[usize]) -> StatsTable {
    StatsTable { columns: min_refs.iter().map(|&m| column(relations, m)).collect() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow {
    pub entity: String,
    pub entity_source: String,
    pub role: String,
    pub role_source: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankTable {
    pub most: Vec<RankRow>,
    pub least: Vec<RankRow>,
}

impl fmt::Display for RankTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (title, rows) in [("most frequent", &self.most), ("least frequent", &self.least)] {
            writeln!(f, "{title}")?;
            writeln!(f, "{:<40} {:<6} {:<30} {:<6} {:>8}", "chemical entity", "source", "role", "source", "count")?;
            for r in rows {
                writeln!(
                    f,
                    "{:<40} {:<6} {:<30} {:<6} {:>8}",
                    r.entity, r.entity_source, r.role, r.role_source, r.count
                )?;
            }
        }
        Ok(())
    }
}

fn row(r: &Relation) -> RankRow {
    RankRow {
        entity: r.entity.display_label.clone(),
        entity_source: r.entity.source_name().into(),
        role: r.role.display_label.clone(),
        role_source: r.role.source_name().into(),
        count: r.count,
    }
}

/// The `k` most and `k` least frequent relations. Input must be in
/// aggregation order; the least-frequent list runs from the bottom up.
pub fn rank_relations(relations: &[Relation], k: usize) -> RankTable {
    RankTable {
        most: relations.iter().take(k).map(row).collect(),
        least: relations.iter().rev().take(k).map(row).collect(),
    }
}
