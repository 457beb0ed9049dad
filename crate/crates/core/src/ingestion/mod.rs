//! Raw event parsing, country resolution and per-user noise filtering.

mod events;
mod filter;
mod registry;

pub use events::{
    parse_events, read_events, write_events, CountryEvent, GeoEvent, GeoPoint, InputFormat, Location, RejectReason,
    RejectStats,
};
pub use filter::{filter_users, DroppedUserStats, FilterPolicy, FilterRule};
pub use registry::{resolve_events, CentroidTable, CountryRegistry};
