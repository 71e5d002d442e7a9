//! Self-contained HTML rendering of the graph: inline data, inline script,
//! no network access needed.

use std::collections::BTreeMap;

use serde::Serialize;

use super::turtle::node_term;
use super::{EntityRef, KnowledgeGraph};
use crate::ontology::EntityKind;

pub(crate) const CHEBI_CHEMICAL: &str = "#8B0000";
pub(crate) const CEAR_CHEMICAL: &str = "#F08080";
pub(crate) const CHEBI_ROLE: &str = "#00008B";
pub(crate) const CEAR_ROLE: &str = "#ADD8E6";

/// Gray level of the weakest edge; the strongest is black.
const LIGHTEST_GRAY: f64 = 200.0;

pub(crate) fn node_color(r: &EntityRef) -> &'static str {
    match (r.kind, r.is_chebi()) {
        (EntityKind::Chemical, true) => CHEBI_CHEMICAL,
        (EntityKind::Chemical, false) => CEAR_CHEMICAL,
        (EntityKind::Role, true) => CHEBI_ROLE,
        (EntityKind::Role, false) => CEAR_ROLE,
    }
}

/// Linear interpolation from light gray at `min` to black at `max`.
pub(crate) fn edge_color(count: usize, min: usize, max: usize) -> String {
    let t = if max > min { (count - min) as f64 / (max - min) as f64 } else { 1.0 };
    let level = (LIGHTEST_GRAY * (1.0 - t)).round() as u8;
    format!("#{level:02X}{level:02X}{level:02X}")
}

#[derive(Serialize)]
struct Node<'a> {
    id: String,
    label: &'a str,
    source: &'static str,
    kind: EntityKind,
    color: &'static str,
}

#[derive(Serialize)]
struct Edge {
    source: usize,
    target: usize,
    count: usize,
    color: String,
}

#[derive(Serialize)]
struct GraphData<'a> {
    nodes: Vec<Node<'a>>,
    edges: Vec<Edge>,
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const SCRIPT: &str = r##"
(function () {
  const data = JSON.parse(document.getElementById("graph-data").textContent);
  const svg = document.getElementById("graph");
  const W = 1200, H = 900, N = data.nodes.length;
  const pos = data.nodes.map((_, i) => {
    const a = 2 * Math.PI * i / Math.max(N, 1);
    return { x: W / 2 + 0.4 * W * Math.cos(a), y: H / 2 + 0.4 * H * Math.sin(a), dx: 0, dy: 0 };
  });
  const k = Math.sqrt(W * H / Math.max(N, 1));
  for (let it = 0, temp = W / 10; it < 300; it++, temp *= 0.98) {
    for (const p of pos) { p.dx = 0; p.dy = 0; }
    for (let i = 0; i < N; i++) for (let j = i + 1; j < N; j++) {
      const dx = pos[i].x - pos[j].x, dy = pos[i].y - pos[j].y;
      const d = Math.max(Math.hypot(dx, dy), 0.01), f = k * k / d;
      pos[i].dx += dx / d * f; pos[i].dy += dy / d * f;
      pos[j].dx -= dx / d * f; pos[j].dy -= dy / d * f;
    }
    for (const e of data.edges) {
      const a = pos[e.source], b = pos[e.target];
      const dx = a.x - b.x, dy = a.y - b.y;
      const d = Math.max(Math.hypot(dx, dy), 0.01), f = d * d / k;
      a.dx -= dx / d * f; a.dy -= dy / d * f;
      b.dx += dx / d * f; b.dy += dy / d * f;
    }
    for (const p of pos) {
      const d = Math.max(Math.hypot(p.dx, p.dy), 0.01), s = Math.min(d, temp) / d;
      p.x = Math.min(W - 20, Math.max(20, p.x + p.dx * s));
      p.y = Math.min(H - 20, Math.max(20, p.y + p.dy * s));
    }
  }
  const NS = "http://www.w3.org/2000/svg";
  const el = (name, attrs, text) => {
    const e = document.createElementNS(NS, name);
    for (const [key, v] of Object.entries(attrs)) e.setAttribute(key, v);
    if (text !== undefined) e.textContent = text;
    svg.appendChild(e);
    return e;
  };
  for (const e of data.edges) {
    const a = pos[e.source], b = pos[e.target];
    el("line", { x1: a.x, y1: a.y, x2: b.x, y2: b.y, stroke: e.color, "stroke-width": 1.5 });
    el("text", { x: (a.x + b.x) / 2, y: (a.y + b.y) / 2, "font-size": 9, fill: "#555" }, String(e.count));
  }
  data.nodes.forEach((n, i) => {
    const c = el("circle", { cx: pos[i].x, cy: pos[i].y, r: 7, fill: n.color });
    c.appendChild(document.createElementNS(NS, "title")).textContent = n.label + " (" + n.id + ")";
    el("text", { x: pos[i].x + 9, y: pos[i].y + 3, "font-size": 11 }, n.label);
  });
})();
"##;

/// Renders the graph as a standalone HTML page with an SVG force layout.
/// Output is a pure function of the graph.
pub fn emit_html(kg: &KnowledgeGraph) -> String {
    let nodes = kg.nodes();
    let index: BTreeMap<&EntityRef, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let min = kg.relations.iter().map(|r| r.count).min().unwrap_or(0);
    let max = kg.relations.iter().map(|r| r.count).max().unwrap_or(0);
    let data = GraphData {
        nodes: nodes
            .iter()
            .map(|n| Node {
                id: node_term(n),
                label: &n.display_label,
                source: n.source_name(),
                kind: n.kind,
                color: node_color(n),
            })
            .collect(),
        edges: kg
            .relations
            .iter()
            .map(|r| Edge {
                source: index[&r.entity],
                target: index[&r.role],
                count: r.count,
                color: edge_color(r.count, min, max),
            })
            .collect(),
    };
    let json = serde_json::to_string(&data).expect("graph data serializes").replace("</", "<\\/");
    let legend = [
        (CHEBI_CHEMICAL, "chemical entity (ChEBI)"),
        (CEAR_CHEMICAL, "chemical entity (CEAR)"),
        (CHEBI_ROLE, "role (ChEBI)"),
        (CEAR_ROLE, "role (CEAR)"),
    ]
    .iter()
    .map(|(c, l)| format!("<span style=\"color:{c}\">&#9679;</span> {} ", html_escape(l)))
    .collect::<String>();
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>CEAR knowledge graph (minRef {min_ref})</title>\n\
         <style>body{{font-family:sans-serif;margin:0}}#legend{{padding:6px}}svg{{border-top:1px solid #ccc}}</style>\n\
         </head>\n<body>\n<div id=\"legend\">{legend}| {n} nodes, {e} relations</div>\n\
         <svg id=\"graph\" xmlns=\"http://www.w3.org/2000/svg\" width=\"1200\" height=\"900\"></svg>\n\
         <script type=\"application/json\" id=\"graph-data\">{json}</script>\n<script>{SCRIPT}</script>\n</body>\n</html>\n",
        min_ref = kg.min_ref,
        n = nodes.len(),
        e = kg.relations.len(),
    )
}
