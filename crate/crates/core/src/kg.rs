//! Typed music-style knowledge graph and the knowledge correlation matrix.
//!
//! Graph files are UTF-8 text with two blocks:
//!
//! ```text
//! # comment
//! styles:
//! rock
//! punk
//! edges:
//! punk rock super_subordinate
//! ```
//!
//! The `styles:` block fixes label order. Edges name two declared styles
//! and one of `super_subordinate`, `coordinate`, `fusion`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{KrfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    /// Subgenre (ISA) link; the first style of the edge is the parent.
    SuperSubordinate,
    Coordinate,
    Fusion,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::SuperSubordinate, Relation::Coordinate, Relation::Fusion];

    pub fn keyword(self) -> &'static str {
        match self {
            Relation::SuperSubordinate => "super_subordinate",
            Relation::Coordinate => "coordinate",
            Relation::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.keyword() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

/// Constant score per relation type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationScores {
    pub fusion: f64,
    pub super_subordinate: f64,
    pub coordinate: f64,
}

impl Default for RelationScores {
    fn default() -> Self {
        RelationScores {
            fusion: 1.0,
            super_subordinate: 2.0,
            coordinate: 3.0,
        }
    }
}

impl RelationScores {
    pub fn new(fusion: f64, super_subordinate: f64, coordinate: f64) -> Result<Self> {
        let s = RelationScores {
            fusion,
            super_subordinate,
            coordinate,
        };
        if [fusion, super_subordinate, coordinate].iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(KrfError::Config(format!("relation scores must be positive: {s:?}")));
        }
        Ok(s)
    }

    pub fn score(&self, r: Relation) -> f64 {
        match r {
            Relation::Fusion => self.fusion,
            Relation::SuperSubordinate => self.super_subordinate,
            Relation::Coordinate => self.coordinate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StyleEdge {
    /// Index of the first style as declared (the parent for ISA edges).
    pub from: usize,
    pub to: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleGraph {
    styles: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<StyleEdge>,
}

impl StyleGraph {
    pub fn new(styles: Vec<String>, edges: Vec<(String, String, Relation)>) -> Result<Self> {
        let mut text = String::from("styles:\n");
        for s in &styles {
            text.push_str(s);
            text.push('\n');
        }
        text.push_str("edges:\n");
        for (a, b, r) in &edges {
            text.push_str(&format!("{a} {b} {r}\n"));
        }
        Self::parse_str(&text, "<memory>")
    }

    pub fn parse_str(text: &str, source: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Block {
            None,
            Styles,
            Edges,
        }
        let err = |line: usize, msg: String| KrfError::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut block = Block::None;
        let mut styles = Vec::new();
        let mut index = HashMap::new();
        let mut edges = Vec::new();
        let mut pairs = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "styles:" => {
                    if block != Block::None {
                        return Err(err(line_no, "`styles:` must be the first block".into()));
                    }
                    block = Block::Styles;
                    continue;
                }
                "edges:" => {
                    if block != Block::Styles {
                        return Err(err(line_no, "`edges:` must follow the `styles:` block".into()));
                    }
                    block = Block::Edges;
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match block {
                Block::None => return Err(err(line_no, format!("content before `styles:`: `{line}`"))),
                Block::Styles => {
                    if fields.len() != 1 {
                        return Err(err(line_no, format!("style names cannot contain spaces: `{line}`")));
                    }
                    if index.insert(line.to_string(), styles.len()).is_some() {
                        return Err(err(line_no, format!("style `{line}` declared twice")));
                    }
                    styles.push(line.to_string());
                }
                Block::Edges => {
                    let [a, b, rel] = fields[..] else {
                        return Err(err(line_no, format!("expected `<style_a> <style_b> <relation>`, got `{line}`")));
                    };
                    let relation: Relation = rel.parse().map_err(|m| err(line_no, m))?;
                    let from = *index
                        .get(a)
                        .ok_or_else(|| err(line_no, format!("unknown style `{a}`")))?;
                    let to = *index
                        .get(b)
                        .ok_or_else(|| err(line_no, format!("unknown style `{b}`")))?;
                    if from == to {
                        return Err(err(line_no, format!("self-edge on `{a}`")));
                    }
                    if !pairs.insert((from.min(to), from.max(to))) {
                        return Err(err(line_no, format!("pair `{a}`/`{b}` already has a relation")));
                    }
                    edges.push(StyleEdge { from, to, relation });
                }
            }
        }
        if styles.is_empty() {
            return Err(err(text.lines().count().max(1), "no styles declared".into()));
        }
        Ok(StyleGraph { styles, index, edges })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KrfError::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("styles:\n");
        for s in &self.styles {
            out.push_str(s);
            out.push('\n');
        }
        out.push_str("edges:\n");
        for e in &self.edges {
            out.push_str(&format!("{} {} {}\n", self.styles[e.from], self.styles[e.to], e.relation));
        }
        out
    }

    pub fn styles(&self) -> &[String] {
        &self.styles
    }

    pub fn num_styles(&self) -> usize {
        self.styles.len()
    }

    pub fn edges(&self) -> &[StyleEdge] {
        &self.edges
    }

    pub fn style_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Relation between two labels regardless of declared direction.
    pub fn relation(&self, a: usize, b: usize) -> Option<Relation> {
        self.edges
            .iter()
            .find(|e| (e.from == a && e.to == b) || (e.from == b && e.to == a))
            .map(|e| e.relation)
    }

    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|e| match (e.from == a, e.to == a) {
                (true, _) => Some(e.to),
                (_, true) => Some(e.from),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// `A[i][j] = s_r` when labels i and j share relation r, else 0.
    /// Symmetric with a zero diagonal.
    pub fn knowledge_matrix(&self, scores: &RelationScores) -> Tensor {
        let n = self.styles.len();
        let mut a = Tensor::zeros(&[n, n]);
        for e in &self.edges {
            let s = scores.score(e.relation);
            a.set2(e.from, e.to, s);
            a.set2(e.to, e.from, s);
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOLK_ROCK: &str = "styles:\nrock\nfolk\nfolk_rock\nedges:\nfolk_rock rock fusion\nfolk_rock folk fusion\n";

    #[test]
    fn fixture_graph() {
        let g = StyleGraph::parse_str(FOLK_ROCK, "fixture").unwrap();
        assert_eq!(g.num_styles(), 3);
        assert_eq!(g.edges().len(), 2);
        let a = g.knowledge_matrix(&RelationScores::default());
        let nonzero: Vec<f64> = a.data().iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0; 4]);
        for i in 0..3 {
            assert_eq!(a.get2(i, i), 0.0);
        }
    }

    #[test]
    fn accepts_declared_edge_and_comments() {
        let g = StyleGraph::parse_str("# kg\nstyles:\npunk\nrock # parent\nedges:\npunk rock super_subordinate\n", "t").unwrap();
        assert_eq!(g.relation(1, 0), Some(Relation::SuperSubordinate));
        assert_eq!(g.edges()[0].from, 0);
    }

    #[test]
    fn coordinate_scores_three() {
        let g = StyleGraph::parse_str("styles:\nrock\npop\njazz\nedges:\nrock pop coordinate\n", "t").unwrap();
        let a = g.knowledge_matrix(&RelationScores::default());
        assert_eq!(a.get2(0, 1), 3.0);
        assert_eq!(a.get2(1, 0), 3.0);
        assert_eq!(a.get2(0, 2), 0.0);
    }

    fn parse_err_line(text: &str) -> usize {
        match StyleGraph::parse_str(text, "t") {
            Err(KrfError::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(parse_err_line("styles:\npunk\nrock\nedges:\npunk rock super_subordinate\nska rock fusion\n"), 6);
        assert_eq!(parse_err_line("styles:\npunk\nrock\nedges:\npunk rock cousin\n"), 5);
        assert_eq!(parse_err_line("styles:\npunk\nrock\nedges:\npunk rock fusion\nrock punk coordinate\n"), 6);
        assert_eq!(parse_err_line("styles:\npunk\nedges:\npunk punk fusion\n"), 4);
        assert_eq!(parse_err_line("styles:\npunk\npunk\n"), 3);
        assert_eq!(parse_err_line("edges:\n"), 1);
    }

    #[test]
    fn scores_must_be_positive() {
        assert!(RelationScores::new(1.0, 0.0, 3.0).is_err());
        assert!(RelationScores::new(1.0, 2.0, 3.0).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let g = StyleGraph::parse_str(FOLK_ROCK, "t").unwrap();
        assert_eq!(StyleGraph::parse_str(&g.to_text(), "t").unwrap(), g);
    }
}
