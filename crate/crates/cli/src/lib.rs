//! Declarative scenario runner for the parametrix library.

pub mod report;
pub mod run;
pub mod scenario;

pub use report::Summary;
pub use run::{run_scenario, RunError};
pub use scenario::{Scenario, SchemaError};
