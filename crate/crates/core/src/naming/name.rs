use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NameError {
    #[error("name must start with '/'")]
    MissingLeadingSlash,
    #[error("name has no components")]
    Empty,
    #[error("empty component at index {0}")]
    EmptyComponent(usize),
    #[error("component contains '/': {0:?}")]
    SlashInComponent(String),
}

/// Hierarchical name: an ordered, non-empty list of non-empty UTF-8
/// components. Canonical text form is `('/' segment)+`.
///
/// Components are shared behind an `Arc`, so cloning a name is a refcount
/// bump; names are cloned on every forwarding hop.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name(Arc<[String]>);

impl Name {
    pub fn from_components<I, S>(components: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = components.into_iter().map(Into::into).collect();
        if components.is_empty() {
            return Err(NameError::Empty);
        }
        for (i, c) in components.iter().enumerate() {
            if c.is_empty() {
                return Err(NameError::EmptyComponent(i));
            }
            if c.contains('/') {
                return Err(NameError::SlashInComponent(c.clone()));
            }
        }
        Ok(Name(components.into()))
    }

    pub fn parse(s: &str) -> Result<Self, NameError> {
        let rest = s.strip_prefix('/').ok_or(NameError::MissingLeadingSlash)?;
        if rest.is_empty() {
            return Err(NameError::Empty);
        }
        Name::from_components(rest.split('/'))
    }

    pub fn components(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &str {
        &self.0[0]
    }

    pub fn last(&self) -> &str {
        &self.0[self.0.len() - 1]
    }

    pub fn is_prefix_of(&self, other: &Name) -> bool {
        self.len() <= other.len() && other.0[..self.len()] == self.0[..]
    }

    /// Number of leading components shared with `other`.
    pub fn common_prefix_len(&self, other: &Name) -> usize {
        self.0
            .iter()
            .zip(other.0.iter())
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Name of the first `n` components; `None` when `n` is 0 or exceeds the length.
    pub fn prefix(&self, n: usize) -> Option<Name> {
        if n == 0 || n > self.len() {
            return None;
        }
        Some(Name(self.0[..n].to_vec().into()))
    }

    pub fn append(&self, component: impl Into<String>) -> Result<Name, NameError> {
        let mut v = self.0.to_vec();
        v.push(component.into());
        Name::from_components(v)
    }
}

impl std::borrow::Borrow<[String]> for Name {
    fn borrow(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0.iter() {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Name({self})")
    }
}

impl FromStr for Name {
    type Err = NameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Name::parse(s)
    }
}

impl Serialize for Name {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Name {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Name::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Returns the candidate sharing the most leading components with `name`,
/// provided that candidate is a prefix of `name`.
pub fn longest_prefix_match<'a>(name: &Name, candidates: &'a BTreeSet<Name>) -> Option<&'a Name> {
    (1..=name.len()).rev().find_map(|n| {
        let prefix = name.prefix(n)?;
        candidates.get(&prefix)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn parse_and_print() {
        let name = n("/node/nodeA/sensor/gps");
        assert_eq!(name.len(), 4);
        assert_eq!(name.to_string(), "/node/nodeA/sensor/gps");
    }

    #[test]
    fn rejects_bad_names() {
        assert_eq!(Name::parse(""), Err(NameError::MissingLeadingSlash));
        assert_eq!(Name::parse("/"), Err(NameError::Empty));
        assert_eq!(Name::parse("/a//b"), Err(NameError::EmptyComponent(1)));
        assert_eq!(Name::parse("a/b"), Err(NameError::MissingLeadingSlash));
        assert!(Name::from_components(["a/b"]).is_err());
    }

    #[test]
    fn query_text_is_a_legal_component() {
        let name = n("/GPS_S1/FILTER(WINDOW(GPS_S1,4s),'latitude'<50)");
        assert_eq!(name.last(), "FILTER(WINDOW(GPS_S1,4s),'latitude'<50)");
    }

    #[test]
    fn lpm_examples() {
        let set: BTreeSet<Name> = [n("/a"), n("/a/b")].into_iter().collect();
        assert_eq!(longest_prefix_match(&n("/a/b/c"), &set), Some(&n("/a/b")));

        let set: BTreeSet<Name> = [n("/x")].into_iter().collect();
        assert_eq!(longest_prefix_match(&n("/a"), &set), None);

        let set: BTreeSet<Name> = [n("/a/b")].into_iter().collect();
        assert_eq!(longest_prefix_match(&n("/a/b"), &set), Some(&n("/a/b")));
    }

    #[test]
    fn lpm_ignores_longer_candidates() {
        let set: BTreeSet<Name> = [n("/a/b/c/d")].into_iter().collect();
        assert_eq!(longest_prefix_match(&n("/a/b"), &set), None);
    }
}
