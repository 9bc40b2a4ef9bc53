//! Lenient version comparison for matching exploits to service banners.
//!
//! Real banners carry things like "2.3.4", "1.3.0d", "9.11.3-1ubuntu1"; the
//! comparator keys on the numeric prefix of each dot-separated component and
//! ignores the rest, which is the right bias for "is this build in the
//! affected range" questions.

use std::cmp::Ordering;
use std::str::FromStr;

#[derive(Debug, Clone)]
pub struct Version {
    parts: Vec<u64>,
}

/// Equality pads with zeros, matching the ordering: 1.2 == 1.2.0.
impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_parts(other) == Ordering::Equal
    }
}

impl Eq for Version {}

impl Version {
    pub fn parts(&self) -> &[u64] {
        &self.parts
    }

    fn cmp_parts(&self, other: &Version) -> Ordering {
        let n = self.parts.len().max(other.parts.len());
        for i in 0..n {
            let a = self.parts.get(i).copied().unwrap_or(0);
            let b = other.parts.get(i).copied().unwrap_or(0);
            match a.cmp(&b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }

    /// True when `self` starts with every component of `prefix`.
    fn has_prefix(&self, prefix: &Version) -> bool {
        prefix
            .parts
            .iter()
            .enumerate()
            .all(|(i, p)| self.parts.get(i).copied().unwrap_or(0) == *p)
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_parts(other)
    }
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_start_matches(['v', 'V']);
        if s.is_empty() {
            return Err("empty version".to_string());
        }
        let mut parts = Vec::new();
        for comp in s.split('.') {
            let digits: String = comp.chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.is_empty() {
                break;
            }
            parts.push(digits.parse::<u64>().map_err(|e| e.to_string())?);
            // a non-digit suffix ("0d", "3-1ubuntu1") ends the comparable prefix
            if digits.len() != comp.len() {
                break;
            }
        }
        if parts.is_empty() {
            return Err(format!("no numeric components in {s:?}"));
        }
        Ok(Version { parts })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Constraint {
    Any,
    Prefix(Version),
    Exact(Version),
    Ge(Version),
    Gt(Version),
    Le(Version),
    Lt(Version),
}

impl Constraint {
    fn matches(&self, v: &Version) -> bool {
        match self {
            Constraint::Any => true,
            Constraint::Prefix(p) => v.has_prefix(p),
            Constraint::Exact(e) => v.cmp_parts(e) == Ordering::Equal,
            Constraint::Ge(b) => v.cmp_parts(b) != Ordering::Less,
            Constraint::Gt(b) => v.cmp_parts(b) == Ordering::Greater,
            Constraint::Le(b) => v.cmp_parts(b) != Ordering::Greater,
            Constraint::Lt(b) => v.cmp_parts(b) == Ordering::Less,
        }
    }
}

/// Comma-separated conjunction of constraints.
///
/// Grammar: `*` or empty matches anything; `1.2.x` and bare `1.2` match by
/// prefix; `=1.2.3` exactly; `>=`, `>`, `<=`, `<` compare numerically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionRange {
    constraints: Vec<Constraint>,
    source: String,
}

impl VersionRange {
    pub fn any() -> VersionRange {
        VersionRange {
            constraints: vec![Constraint::Any],
            source: "*".to_string(),
        }
    }

    pub fn matches(&self, version: &Version) -> bool {
        self.constraints.iter().all(|c| c.matches(version))
    }

    pub fn matches_str(&self, version: &str) -> bool {
        match version.parse::<Version>() {
            Ok(v) => self.matches(&v),
            Err(_) => false,
        }
    }
}

impl FromStr for VersionRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let source = s.trim().to_string();
        if source.is_empty() || source == "*" {
            return Ok(VersionRange::any());
        }
        let mut constraints = Vec::new();
        for raw in source.split(',') {
            let term = raw.trim();
            if term.is_empty() {
                continue;
            }
            let c = if let Some(rest) = term.strip_prefix(">=") {
                Constraint::Ge(rest.trim().parse()?)
            } else if let Some(rest) = term.strip_prefix("<=") {
                Constraint::Le(rest.trim().parse()?)
            } else if let Some(rest) = term.strip_prefix('>') {
                Constraint::Gt(rest.trim().parse()?)
            } else if let Some(rest) = term.strip_prefix('<') {
                Constraint::Lt(rest.trim().parse()?)
            } else if let Some(rest) = term.strip_prefix('=') {
                Constraint::Exact(rest.trim().parse()?)
            } else if term == "*" {
                Constraint::Any
            } else {
                // "1.2.x" / "1.2.*" / bare "1.2" are prefix matches
                let trimmed = term
                    .trim_end_matches(['x', 'X', '*'])
                    .trim_end_matches('.');
                Constraint::Prefix(trimmed.parse()?)
            };
            constraints.push(c);
        }
        if constraints.is_empty() {
            return Ok(VersionRange::any());
        }
        Ok(VersionRange {
            constraints,
            source,
        })
    }
}

impl std::fmt::Display for VersionRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.source)
    }
}

impl serde::Serialize for VersionRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> serde::Deserialize<'de> for VersionRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
