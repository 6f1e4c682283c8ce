//! Decides, from the tracker's own log, whether it could link a user's
//! visits or tell which site they came from.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::tracker::{TrackerObservation, UID_COOKIE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinkageVerdict {
    /// A request carried an identifier the tracker had issued earlier.
    pub user_recognized: bool,
    /// A request revealed the embedding site.
    pub website_identified: bool,
    /// Ids of the observations that support either flag.
    pub evidence: Vec<u64>,
}

impl LinkageVerdict {
    /// Linking a visit needs both capabilities; removing either one
    /// is enough.
    pub fn tracking_possible(&self) -> bool {
        self.user_recognized && self.website_identified
    }

    /// `site_markers` are the origins under which the site is reachable
    /// (directly and through the gateway).
    pub fn from_observations(observations: &[TrackerObservation], site_markers: &[String]) -> Self {
        let mut issued = BTreeSet::new();
        let mut verdict = LinkageVerdict { user_recognized: false, website_identified: false, evidence: Vec::new() };
        for obs in observations {
            let cookie = obs.cookies.get(UID_COOKIE).map(String::as_str);
            let etag = obs.if_none_match.as_deref().map(|v| v.trim().trim_matches('"'));
            let recognized = [cookie, etag].into_iter().flatten().any(|id| issued.contains(id));

            let names_site = |value: &str| site_markers.iter().any(|m| value == m || value.contains(&format!("{m}/")));
            let identified = obs.referer.as_deref().is_some_and(names_site)
                || obs.origin.as_deref().is_some_and(names_site)
                || obs.query.iter().any(|(_, v)| names_site(v));

            verdict.user_recognized |= recognized;
            verdict.website_identified |= identified;
            if recognized || identified {
                verdict.evidence.push(obs.id);
            }
            issued.insert(obs.issued_uid.as_str());
        }
        verdict
    }
}
