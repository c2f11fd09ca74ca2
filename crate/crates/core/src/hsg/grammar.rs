use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::data::SemanticType;
use crate::error::{Error, Result};

const FULL: &str = include_str!("../../grammars/full.grammar");
const ARGOVERSE: &str = include_str!("../../grammars/argoverse.grammar");

/// Undirected set of semantic type pairs that may be linked in a scene graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrammarBasis {
    pairs: BTreeSet<(SemanticType, SemanticType)>,
}

fn ordered(a: SemanticType, b: SemanticType) -> (SemanticType, SemanticType) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl GrammarBasis {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grammar for maps with sidewalks, zebras, stop lines and car parks.
    pub fn full() -> Self {
        Self::parse(FULL).expect("built-in grammar parses")
    }

    /// Road-structure-only grammar.
    pub fn argoverse() -> Self {
        Self::parse(ARGOVERSE).expect("built-in grammar parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "argoverse" => Some(Self::argoverse()),
            _ => None,
        }
    }

    pub fn insert(&mut self, a: SemanticType, b: SemanticType) -> bool {
        self.pairs.insert(ordered(a, b))
    }

    pub fn contains(&self, a: SemanticType, b: SemanticType) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (SemanticType, SemanticType)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Parses `edge|type_a|type_b` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            g.parse_edge_line(line, i + 1)?;
        }
        Ok(g)
    }

    pub(crate) fn parse_edge_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 3 || fields[0] != "edge" {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected `edge|type_a|type_b`, got `{line}`"),
            });
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<SemanticType>()
                .map_err(|message| Error::Parse { line: lineno, message })
        };
        let (a, b) = (parse(fields[1])?, parse(fields[2])?);
        self.insert(a, b);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.pairs {
            let _ = writeln!(out, "edge|{a}|{b}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AgentCategory, SemanticRegionType};

    #[test]
    fn builtin_grammars_parse() {
        let full = GrammarBasis::full();
        assert!(full.contains(
            SemanticType::Region(SemanticRegionType::DrivableArea),
            SemanticType::Region(SemanticRegionType::RoadSegment)
        ));
        assert!(full.contains(
            SemanticType::Region(SemanticRegionType::Sidewalk),
            SemanticType::Agent(AgentCategory::Pedestrian)
        ));
        assert!(!full.contains(
            SemanticType::Agent(AgentCategory::Pedestrian),
            SemanticType::Region(SemanticRegionType::DrivableArea)
        ));
        let argo = GrammarBasis::argoverse();
        assert!(argo.len() < full.len());
        assert!(argo.pairs().all(|(a, b)| full.contains(a, b)));
    }

    #[test]
    fn text_round_trip() {
        let g = GrammarBasis::full();
        assert_eq!(GrammarBasis::parse(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn unknown_type_names_line() {
        let err = GrammarBasis::parse("# c\nedge|car|road_segment\nedge|car|moon\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
