use std::collections::BTreeMap;
use std::fmt;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

/// Counters for one rewritten document.
///
/// Keys are `(element, attribute)`; stylesheet rewrites use the pseudo
/// element `css` with attribute `url` or `@import`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteReport {
    counts: BTreeMap<(String, String), u64>,
    pub skipped_nonhttp: u64,
    pub unparsable: u64,
}

impl RewriteReport {
    pub fn record(&mut self, element: &str, attribute: &str) {
        *self.counts.entry((element.to_owned(), attribute.to_owned())).or_default() += 1;
    }

    pub fn count(&self, element: &str, attribute: &str) -> u64 {
        self.counts.get(&(element.to_owned(), attribute.to_owned())).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.counts.iter().map(|((e, a), n)| (e.as_str(), a.as_str(), *n))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn merge(&mut self, other: &RewriteReport) {
        for ((e, a), n) in &other.counts {
            *self.counts.entry((e.clone(), a.clone())).or_default() += n;
        }
        self.skipped_nonhttp += other.skipped_nonhttp;
        self.unparsable += other.unparsable;
    }
}

impl fmt::Display for RewriteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rewritten={}", self.total())?;
        for ((e, a), n) in &self.counts {
            write!(f, " {e}[{a}]={n}")?;
        }
        write!(f, " nonhttp={} unparsable={}", self.skipped_nonhttp, self.unparsable)
    }
}

impl Serialize for RewriteReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        struct Counts<'a>(&'a BTreeMap<(String, String), u64>);
        impl Serialize for Counts<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for ((e, a), n) in self.0 {
                    map.serialize_entry(&format!("{e}[{a}]"), n)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("counts", &Counts(&self.counts))?;
        map.serialize_entry("skipped_nonhttp", &self.skipped_nonhttp)?;
        map.serialize_entry("unparsable", &self.unparsable)?;
        map.end()
    }
}
