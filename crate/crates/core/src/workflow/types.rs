//! Semantic payload types carried by channels and ports.
//!
//! Grammar: `Name`, `[T]` (list of T), `(T, U, ...)` (tuple, arity >= 2).

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseType {
    ScenarioSet,
    ScenarioTree,
    BatteryConfig,
    WindFarmSite,
    HistoricalRecord,
    DesignResult,
    FileRef,
    Scalar,
}

impl BaseType {
    pub const ALL: [BaseType; 8] = [
        BaseType::ScenarioSet,
        BaseType::ScenarioTree,
        BaseType::BatteryConfig,
        BaseType::WindFarmSite,
        BaseType::HistoricalRecord,
        BaseType::DesignResult,
        BaseType::FileRef,
        BaseType::Scalar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseType::ScenarioSet => "ScenarioSet",
            BaseType::ScenarioTree => "ScenarioTree",
            BaseType::BatteryConfig => "BatteryConfig",
            BaseType::WindFarmSite => "WindFarmSite",
            BaseType::HistoricalRecord => "HistoricalRecord",
            BaseType::DesignResult => "DesignResult",
            BaseType::FileRef => "FileRef",
            BaseType::Scalar => "Scalar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeExpr {
    Base(BaseType),
    List(Box<TypeExpr>),
    Tuple(Vec<TypeExpr>),
}

impl TypeExpr {
    pub fn base(b: BaseType) -> Self {
        TypeExpr::Base(b)
    }

    pub fn list(inner: TypeExpr) -> Self {
        TypeExpr::List(Box::new(inner))
    }

    /// Element type when this is a list.
    pub fn element(&self) -> Option<&TypeExpr> {
        match self {
            TypeExpr::List(inner) => Some(inner),
            _ => None,
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Base(b) => f.write_str(b.name()),
            TypeExpr::List(inner) => write!(f, "[{inner}]"),
            TypeExpr::Tuple(items) => {
                f.write_str("(")?;
                for (i, t) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid type expression `{text}`: {reason}")]
pub struct TypeParseError {
    pub text: String,
    pub reason: String,
}

impl FromStr for TypeExpr {
    type Err = TypeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| TypeParseError { text: s.to_string(), reason };
        let mut p = Parser { chars: s.chars().collect(), pos: 0 };
        let t = p.parse().map_err(err)?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(err(format!("unexpected trailing input at offset {}", p.pos)));
        }
        Ok(t)
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.chars.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse(&mut self) -> Result<TypeExpr, String> {
        if self.eat('[') {
            let inner = self.parse()?;
            if !self.eat(']') {
                return Err("missing `]`".into());
            }
            return Ok(TypeExpr::list(inner));
        }
        if self.eat('(') {
            let mut items = vec![self.parse()?];
            while self.eat(',') {
                items.push(self.parse()?);
            }
            if !self.eat(')') {
                return Err("missing `)`".into());
            }
            if items.len() < 2 {
                return Err("tuples need at least two members".into());
            }
            return Ok(TypeExpr::Tuple(items));
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        if name.is_empty() {
            return Err("expected a type name".into());
        }
        BaseType::ALL
            .iter()
            .find(|b| b.name() == name)
            .map(|b| TypeExpr::Base(*b))
            .ok_or_else(|| format!("unknown type `{name}`"))
    }
}

impl Serialize for TypeExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypeExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested() {
        let t: TypeExpr = "[(ScenarioSet, BatteryConfig)]".parse().unwrap();
        assert_eq!(
            t,
            TypeExpr::list(TypeExpr::Tuple(vec![
                TypeExpr::Base(BaseType::ScenarioSet),
                TypeExpr::Base(BaseType::BatteryConfig)
            ]))
        );
        assert_eq!(t.to_string(), "[(ScenarioSet, BatteryConfig)]");
    }

    #[test]
    fn unknown_name_rejected() {
        let e = "Widget".parse::<TypeExpr>().unwrap_err();
        assert!(e.reason.contains("unknown type"));
        assert!("(Scalar)".parse::<TypeExpr>().is_err());
        assert!("[Scalar".parse::<TypeExpr>().is_err());
        assert!("Scalar x".parse::<TypeExpr>().is_err());
    }
}
