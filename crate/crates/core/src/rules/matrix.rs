use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::RuleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compatibility {
    Compatible,
    Incompatible,
}

/// Symmetric compatibility relation over chemical symbols.
///
/// Symbols are opaque identifiers. A symbol is known once it is declared or
/// appears in any pair; pairs that were never listed are compatible, and a
/// symbol is always compatible with itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatibilityMatrix {
    symbols: BTreeSet<String>,
    // key is the ordered pair (min, max)
    pairs: BTreeMap<(String, String), Compatibility>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl CompatibilityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, symbol: &str) {
        if !self.symbols.contains(symbol) {
            self.symbols.insert(symbol.to_owned());
        }
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.symbols.contains(symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(String::as_str)
    }

    pub fn set(&mut self, a: &str, b: &str, c: Compatibility) {
        self.declare(a);
        self.declare(b);
        if a == b {
            return;
        }
        self.pairs.insert(key(a, b), c);
    }

    pub fn lookup(&self, a: &str, b: &str) -> Result<Compatibility, RuleError> {
        for s in [a, b] {
            if !self.symbols.contains(s) {
                return Err(RuleError::UnknownSymbol(s.to_owned()));
            }
        }
        if a == b {
            return Ok(Compatibility::Compatible);
        }
        Ok(self.pairs.get(&key(a, b)).copied().unwrap_or(Compatibility::Compatible))
    }

    /// Symbols listed as incompatible with `symbol`.
    pub fn incompatible_with(&self, symbol: &str) -> Vec<String> {
        self.pairs
            .iter()
            .filter(|(_, c)| **c == Compatibility::Incompatible)
            .filter_map(|((a, b), _)| {
                if a == symbol {
                    Some(b.clone())
                } else if b == symbol {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }
}

impl FromStr for CompatibilityMatrix {
    type Err = RuleError;

    /// One pair per line: `SYMBOL_A SYMBOL_B incompatible|compatible`.
    /// Blank lines and `#` comments are ignored.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut m = CompatibilityMatrix::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [a, b, rel] = fields.as_slice() else {
                return Err(RuleError::Parse {
                    line: idx + 1,
                    msg: format!("expected `SYMBOL_A SYMBOL_B incompatible|compatible`, got `{line}`"),
                });
            };
            let c = match rel.to_ascii_lowercase().as_str() {
                "incompatible" => Compatibility::Incompatible,
                "compatible" => Compatibility::Compatible,
                other => {
                    return Err(RuleError::Parse {
                        line: idx + 1,
                        msg: format!("unknown relation `{other}`"),
                    })
                }
            };
            if a == b && c == Compatibility::Incompatible {
                return Err(RuleError::Parse {
                    line: idx + 1,
                    msg: format!("`{a}` cannot be incompatible with itself"),
                });
            }
            m.set(a, b, c);
        }
        Ok(m)
    }
}

impl fmt::Display for CompatibilityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((a, b), c) in &self.pairs {
            let rel = match c {
                Compatibility::Compatible => "compatible",
                Compatibility::Incompatible => "incompatible",
            };
            writeln!(f, "{a} {b} {rel}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults_to_compatible() {
        let m: CompatibilityMatrix =
            "# warehouse\nH2SO4 HF incompatible\n\nHF NaOH compatible # fine\nH2O NaOH compatible\n"
                .parse()
                .unwrap();
        assert_eq!(m.lookup("HF", "H2SO4"), Ok(Compatibility::Incompatible));
        assert_eq!(m.lookup("H2SO4", "H2O"), Ok(Compatibility::Compatible));
        assert_eq!(m.lookup("HF", "HF"), Ok(Compatibility::Compatible));
        assert!(m.lookup("HF", "KCN").is_err());
        assert_eq!(m.incompatible_with("HF"), vec!["H2SO4".to_string()]);
    }

    #[test]
    fn rejects_malformed_lines_with_line_number() {
        let err = "A B incompatible\nA B maybe\n".parse::<CompatibilityMatrix>().unwrap_err();
        assert_eq!(err, RuleError::Parse { line: 2, msg: "unknown relation `maybe`".into() });
        let err = "A B\n".parse::<CompatibilityMatrix>().unwrap_err();
        assert!(matches!(err, RuleError::Parse { line: 1, .. }));
    }

    #[test]
    fn display_round_trips() {
        let m: CompatibilityMatrix = "B A incompatible\nC A compatible\n".parse().unwrap();
        let back: CompatibilityMatrix = m.to_string().parse().unwrap();
        assert_eq!(m, back);
    }
}
