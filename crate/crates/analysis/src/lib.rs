//! Static heap-safety classification passes.

use std::collections::{BTreeMap, BTreeSet};

use uriah_hir::{InstrRef, SiteId};

pub mod alias;
pub mod interval;
pub mod numeric;
pub mod shared;
pub mod spatial;

/// Causes for unsafe classifications: site → reason label → the check
/// sites that raised it. A verdict lifts only if every one of those
/// checks is unreachable.
pub type Reasons = BTreeMap<SiteId, BTreeMap<String, BTreeSet<InstrRef>>>;

pub(crate) fn push_reason(rs: &mut Reasons, site: SiteId, what: impl Into<String>, at: InstrRef) {
    rs.entry(site).or_default().entry(what.into()).or_default().insert(at);
}
