pub mod coarse;
pub mod config;
pub mod decomposition;
pub mod error;
pub mod path;
pub mod planner;
pub mod poly;
pub mod qp;
pub mod report;
pub mod scenario;
pub mod speed;
pub mod svg;

pub use config::Config;
pub use error::{Error, Result};
pub use scenario::{load_scenario, parse_scenario, Scenario};
