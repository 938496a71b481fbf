use alloc::string::String;

use crate::state::LinkId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("capacity violation on link {0}")]
    CapacityViolation(LinkId),
    #[error("bad call: {0}")]
    BadCall(String),
    #[error("unknown call id {0}")]
    UnknownCall(u64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("domination violated on link {link} at time {time}")]
    DominationViolation { link: LinkId, time: f64 },
    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),
}
