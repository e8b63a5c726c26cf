//! Qubit interaction graphs and their brickwall edge partitions.
//!
//! Two families are supported: open-boundary square grids and heavy-hex
//! coupling maps. Sites are numbered `0..n_sites`; edges are unordered pairs
//! stored as `(a, b)` with `a < b` and kept in lexicographic order, so an edge
//! index is stable across runs. Each lattice carries a proper edge coloring
//! (`brickwall_groups`): one circuit layer applies one gate per edge, group by
//! group.
//!
//! Heavy-hex presets are cut from an Eagle-style layout: seven rows of
//! qubits (14, 15, 15, 15, 15, 15, 14 wide) joined by groups of four bridge
//! qubits, rows and bridges numbered row-major (row 0, bridges 0, row 1, ...).
//! Bridges below even rows sit at columns 0/4/8/12, below odd rows at
//! 2/6/10/14; the first and last rows cover columns 0..=13 and 1..=14. The 127
//! preset is the full layout; smaller presets keep the first N qubits of that
//! numbering, which is always a connected subgraph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of qubits for the supported heavy-hex presets.
pub const HEAVYHEX_PRESETS: [usize; 4] = [28, 53, 75, 127];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatticeKind {
    SquareGrid { rows: usize, cols: usize },
    HeavyHex { preset: usize },
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeKind::SquareGrid { rows, cols } => write!(f, "square:{rows}x{cols}"),
            LatticeKind::HeavyHex { preset } => write!(f, "heavyhex:{preset}"),
        }
    }
}

impl FromStr for LatticeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid lattice spec '{s}' (expected square:RxC or heavyhex:N)"));
        let (family, rest) = s.split_once(':').ok_or_else(bad)?;
        match family {
            "square" => {
                let (r, c) = rest.split_once(['x', 'X']).ok_or_else(bad)?;
                let rows: usize = r.trim().parse().map_err(|_| bad())?;
                let cols: usize = c.trim().parse().map_err(|_| bad())?;
                if rows == 0 || cols == 0 {
                    return Err(bad());
                }
                Ok(LatticeKind::SquareGrid { rows, cols })
            }
            "heavyhex" => {
                let preset: usize = rest.trim().parse().map_err(|_| bad())?;
                if !HEAVYHEX_PRESETS.contains(&preset) {
                    return Err(Error::Config(format!(
                        "unsupported heavyhex preset {preset}; choose one of {HEAVYHEX_PRESETS:?}"
                    )));
                }
                Ok(LatticeKind::HeavyHex { preset })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for LatticeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LatticeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An undirected interaction graph with a brickwall edge partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    kind: LatticeKind,
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    coordination: Vec<usize>,
    max_degree: usize,
    groups: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
}

/// Serialized form: `{kind, n_sites, edges, groups}`.
#[derive(Serialize, Deserialize)]
struct LatticeDoc {
    kind: LatticeKind,
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    groups: Vec<Vec<usize>>,
}

impl Serialize for Lattice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LatticeDoc {
            kind: self.kind,
            n_sites: self.n_sites,
            edges: self.edges.clone(),
            groups: self.groups.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Lattice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = LatticeDoc::deserialize(d)?;
        let lat = Lattice::from_parts(doc.kind, doc.n_sites, doc.edges, doc.groups);
        let violations = lat.validate();
        if !violations.is_empty() {
            return Err(serde::de::Error::custom(format!(
                "invalid lattice document: {}",
                violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
            )));
        }
        Ok(lat)
    }
}

/// A single invariant violation reported by [`Lattice::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SiteOutOfRange { edge: usize },
    SelfLoop { edge: usize },
    EdgeMultiplicity { a: usize, b: usize, count: usize },
    UnorderedEdge { edge: usize },
    GroupEdgeOutOfRange { group: usize, edge: usize },
    GroupNotMatching { group: usize, site: usize },
    EdgeCoverage { edge: usize, count: usize },
    DegreeBound { site: usize, degree: usize, bound: usize },
    CountMismatch { what: &'static str, expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SiteOutOfRange { edge } => write!(f, "site out of range on edge {edge}"),
            Violation::SelfLoop { edge } => write!(f, "self loop on edge {edge}"),
            Violation::EdgeMultiplicity { a, b, count } => {
                write!(f, "edge multiplicity: ({a}, {b}) appears {count} times")
            }
            Violation::UnorderedEdge { edge } => write!(f, "edge {edge} not stored as (low, high)"),
            Violation::GroupEdgeOutOfRange { group, edge } => {
                write!(f, "group {group} references unknown edge {edge}")
            }
            Violation::GroupNotMatching { group, site } => {
                write!(f, "group not a matching: group {group} touches site {site} twice")
            }
            Violation::EdgeCoverage { edge, count } => {
                write!(f, "edge coverage: edge {edge} in {count} groups (expected 1)")
            }
            Violation::DegreeBound { site, degree, bound } => {
                write!(f, "degree bound: site {site} has degree {degree} > {bound}")
            }
            Violation::CountMismatch { what, expected, found } => {
                write!(f, "{what} count mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl Lattice {
    /// Open-boundary `rows x cols` grid. Brickwall groups are horizontal-even,
    /// horizontal-odd, vertical-even, vertical-odd (empty groups dropped).
    pub fn square(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("square lattice needs rows, cols >= 1 (got {rows}x{cols})")));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        edges.sort_unstable();
        let mut groups = vec![Vec::new(); 4];
        for (k, &(a, b)) in edges.iter().enumerate() {
            let (r, c) = (a / cols, a % cols);
            let g = if b / cols == r { c % 2 } else { 2 + r % 2 };
            groups[g].push(k);
        }
        groups.retain(|g| !g.is_empty());
        Ok(Self::from_parts(LatticeKind::SquareGrid { rows, cols }, rows * cols, edges, groups))
    }

    /// Heavy-hex coupling map with `preset` qubits (28, 53, 75 or 127).
    pub fn heavyhex(preset: usize) -> Result<Self> {
        if !HEAVYHEX_PRESETS.contains(&preset) {
            return Err(Error::Config(format!(
                "unsupported heavyhex preset {preset}; choose one of {HEAVYHEX_PRESETS:?}"
            )));
        }
        let full = eagle_edges();
        let mut edges: Vec<(usize, usize)> =
            full.into_iter().filter(|&(a, b)| a < preset && b < preset).collect();
        edges.sort_unstable();
        let groups = greedy_edge_coloring(preset, &edges);
        Ok(Self::from_parts(LatticeKind::HeavyHex { preset }, preset, edges, groups))
    }

    pub fn from_kind(kind: LatticeKind) -> Result<Self> {
        match kind {
            LatticeKind::SquareGrid { rows, cols } => Self::square(rows, cols),
            LatticeKind::HeavyHex { preset } => Self::heavyhex(preset),
        }
    }

    /// Assembles a lattice without checking invariants; see [`Lattice::validate`].
    pub fn from_parts(
        kind: LatticeKind,
        n_sites: usize,
        edges: Vec<(usize, usize)>,
        groups: Vec<Vec<usize>>,
    ) -> Self {
        let mut coordination = vec![0usize; n_sites];
        let mut incident = vec![Vec::new(); n_sites];
        for (k, &(a, b)) in edges.iter().enumerate() {
            for s in [a, b] {
                if s < n_sites {
                    coordination[s] += 1;
                    incident[s].push(k);
                }
            }
        }
        let max_degree = coordination.iter().copied().max().unwrap_or(0);
        Self { kind, n_sites, edges, coordination, max_degree, groups, incident }
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn coordination(&self) -> &[usize] {
        &self.coordination
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn brickwall_groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Edge indices incident to `site`, ascending. This is also the order of
    /// the virtual axes on the site's PEPS tensor.
    pub fn incident(&self, site: usize) -> &[usize] {
        &self.incident[site]
    }

    /// Index of the edge joining `a` and `b`, if any.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).ok().filter(|&k| self.edges[k] == key)
    }

    pub fn is_square(&self) -> bool {
        matches!(self.kind, LatticeKind::SquareGrid { .. })
    }

    /// `(rows, cols)` for square grids.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        match self.kind {
            LatticeKind::SquareGrid { rows, cols } => Some((rows, cols)),
            LatticeKind::HeavyHex { .. } => None,
        }
    }

    /// True when the graph has no cycles (chains and other trees).
    pub fn is_tree(&self) -> bool {
        self.n_sites > 0 && self.edges.len() + 1 == self.n_sites && self.is_connected()
    }

    pub fn is_connected(&self) -> bool {
        if self.n_sites == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_sites];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for &e in &self.incident[s] {
                let (a, b) = self.edges[e];
                let t = if a == s { b } else { a };
                if t < self.n_sites && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }

    /// Checks every structural invariant and returns the violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut counts = std::collections::BTreeMap::new();
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a >= self.n_sites || b >= self.n_sites {
                out.push(Violation::SiteOutOfRange { edge: k });
            }
            if a == b {
                out.push(Violation::SelfLoop { edge: k });
            }
            if a > b {
                out.push(Violation::UnorderedEdge { edge: k });
            }
            *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
        for (&(a, b), &count) in &counts {
            if count > 1 {
                out.push(Violation::EdgeMultiplicity { a, b, count });
            }
        }
        let mut coverage = vec![0usize; self.edges.len()];
        for (g, group) in self.groups.iter().enumerate() {
            let mut touched = std::collections::BTreeSet::new();
            for &e in group {
                let Some(&(a, b)) = self.edges.get(e) else {
                    out.push(Violation::GroupEdgeOutOfRange { group: g, edge: e });
                    continue;
                };
                coverage[e] += 1;
                for s in [a, b] {
                    if !touched.insert(s) {
                        out.push(Violation::GroupNotMatching { group: g, site: s });
                    }
                }
            }
        }
        for (e, &count) in coverage.iter().enumerate() {
            if count != 1 {
                out.push(Violation::EdgeCoverage { edge: e, count });
            }
        }
        let bound = match self.kind {
            LatticeKind::SquareGrid { rows, cols } => {
                let expected_sites = rows * cols;
                if self.n_sites != expected_sites {
                    out.push(Violation::CountMismatch {
                        what: "site",
                        expected: expected_sites,
                        found: self.n_sites,
                    });
                }
                let expected_edges = rows * (cols - 1) + cols * (rows - 1);
                if self.edges.len() != expected_edges {
                    out.push(Violation::CountMismatch {
                        what: "edge",
                        expected: expected_edges,
                        found: self.edges.len(),
                    });
                }
                4
            }
            LatticeKind::HeavyHex { preset } => {
                if self.n_sites != preset {
                    out.push(Violation::CountMismatch { what: "site", expected: preset, found: self.n_sites });
                }
                3
            }
        };
        for (s, &deg) in self.coordination.iter().enumerate() {
            if deg > bound {
                out.push(Violation::DegreeBound { site: s, degree: deg, bound });
            }
        }
        out
    }
}

/// Edge list of the full 127-qubit Eagle-style heavy-hex layout.
fn eagle_edges() -> Vec<(usize, usize)> {
    const ROWS: usize = 7;
    // (first column, last column) of each qubit row.
    let row_span = |r: usize| match r {
        0 => (0usize, 13usize),
        r if r == ROWS - 1 => (1, 14),
        _ => (0, 14),
    };
    let bridge_cols = |r: usize| if r % 2 == 0 { [0usize, 4, 8, 12] } else { [2, 6, 10, 14] };

    let mut next = 0usize;
    let mut row_start = Vec::with_capacity(ROWS);
    let mut bridge_start = Vec::with_capacity(ROWS - 1);
    for r in 0..ROWS {
        let (lo, hi) = row_span(r);
        row_start.push(next);
        next += hi - lo + 1;
        if r + 1 < ROWS {
            bridge_start.push(next);
            next += 4;
        }
    }
    debug_assert_eq!(next, 127);
    let qubit = |r: usize, col: usize| {
        let (lo, _) = row_span(r);
        row_start[r] + col - lo
    };

    let mut edges = Vec::new();
    for r in 0..ROWS {
        let (lo, hi) = row_span(r);
        for c in lo..hi {
            edges.push((qubit(r, c), qubit(r, c + 1)));
        }
        if r + 1 < ROWS {
            for (k, &c) in bridge_cols(r).iter().enumerate() {
                let b = bridge_start[r] + k;
                edges.push((qubit(r, c).min(b), qubit(r, c).max(b)));
                edges.push((b.min(qubit(r + 1, c)), b.max(qubit(r + 1, c))));
            }
        }
    }
    edges
}

/// Greedy proper edge coloring, visiting edges in the given (lexicographic)
/// order and assigning the lowest color free at both endpoints.
fn greedy_edge_coloring(n_sites: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut used: Vec<Vec<usize>> = vec![Vec::new(); n_sites];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &(a, b)) in edges.iter().enumerate() {
        let color = (0..).find(|c| !used[a].contains(c) && !used[b].contains(c)).unwrap();
        if color == groups.len() {
            groups.push(Vec::new());
        }
        groups[color].push(k);
        used[a].push(color);
        used[b].push(color);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_2x2_counts() {
        let l = Lattice::square(2, 2).unwrap();
        assert_eq!(l.n_sites(), 4);
        assert_eq!(l.n_edges(), 4);
        assert_eq!(l.brickwall_groups().len(), 2);
        for g in l.brickwall_groups() {
            assert_eq!(g.len(), 2);
        }
        assert!(l.validate().is_empty());
    }

    #[test]
    fn square_5x5_counts() {
        let l = Lattice::square(5, 5).unwrap();
        assert_eq!(l.n_sites(), 25);
        assert_eq!(l.n_edges(), 40);
        assert_eq!(l.max_degree(), 4);
    }

    #[test]
    fn chain_is_degenerate_grid() {
        let l = Lattice::square(1, 4).unwrap();
        assert_eq!(l.n_sites(), 4);
        assert_eq!(l.n_edges(), 3);
        assert_eq!(l.brickwall_groups().len(), 2);
        assert!(l.is_tree());
    }

    #[test]
    fn square_edge_formula() {
        for r in 1..=10 {
            for c in 1..=10 {
                let l = Lattice::square(r, c).unwrap();
                assert_eq!(l.n_edges(), r * (c - 1) + c * (r - 1));
                assert!(l.validate().is_empty(), "{r}x{c}: {:?}", l.validate());
            }
        }
    }

    #[test]
    fn heavyhex_presets() {
        for &n in &HEAVYHEX_PRESETS {
            let l = Lattice::heavyhex(n).unwrap();
            assert_eq!(l.n_sites(), n);
            assert!(l.max_degree() <= 3);
            assert!(l.is_connected(), "heavyhex-{n} disconnected");
            assert!(l.brickwall_groups().len() <= 3, "heavyhex-{n}: {} groups", l.brickwall_groups().len());
            assert!(l.validate().is_empty(), "heavyhex-{n}: {:?}", l.validate());
        }
        let full = Lattice::heavyhex(127).unwrap();
        assert_eq!(full.n_edges(), 144);
        assert_eq!(full.max_degree(), 3);
    }

    #[test]
    fn rejects_unknown_preset() {
        assert!(Lattice::heavyhex(30).is_err());
        assert!(Lattice::square(0, 3).is_err());
    }

    #[test]
    fn validate_reports_duplicate_edge() {
        let l = Lattice::from_parts(
            LatticeKind::SquareGrid { rows: 1, cols: 3 },
            3,
            vec![(0, 1), (0, 1), (1, 2)],
            vec![vec![0], vec![1], vec![2]],
        );
        let v = l.validate();
        assert!(v.iter().any(|v| v.to_string().contains("edge multiplicity")), "{v:?}");
    }

    #[test]
    fn validate_reports_non_matching_group() {
        let l = Lattice::from_parts(
            LatticeKind::SquareGrid { rows: 1, cols: 3 },
            3,
            vec![(0, 1), (1, 2)],
            vec![vec![0, 1]],
        );
        let v = l.validate();
        assert!(v.iter().any(|v| v.to_string().contains("group not a matching")), "{v:?}");
    }

    #[test]
    fn groups_are_deterministic() {
        assert_eq!(Lattice::heavyhex(53).unwrap(), Lattice::heavyhex(53).unwrap());
        assert_eq!(Lattice::square(4, 3).unwrap(), Lattice::square(4, 3).unwrap());
    }

    #[test]
    fn spec_round_trip() {
        for s in ["square:3x4", "heavyhex:28"] {
            let k: LatticeKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("square:3".parse::<LatticeKind>().is_err());
        assert!("hex:28".parse::<LatticeKind>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let l = Lattice::heavyhex(28).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        let back: Lattice = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
    }
}
