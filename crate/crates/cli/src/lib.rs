//! Command-line tools and the HTTP session service.

pub mod cli;
pub mod external;
pub mod service;
pub mod session;
