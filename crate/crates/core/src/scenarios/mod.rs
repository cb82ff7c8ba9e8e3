//! Synthetic scenarios, experiment runners and result output.

pub mod generators;
pub mod io;
pub mod runners;

pub use generators::{ExpFamKind, ExpFamScenario, LinRegScenario, LogRegScenario, RegressionKind, Split};
pub use io::{read_rows, write_rows, Format};
pub use runners::{run_clt_check, run_contour, run_linreg_error_curves, run_table, GridSpec, Mode, RunSpec, ScenarioSpec, TableRow};
