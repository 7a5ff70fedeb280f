//! Scenario files, the Monte Carlo harness and CSV results.

mod half_bits;
mod output;
mod scenario;
mod sim;

pub use half_bits::{
    half_bits_distribution, half_bits_receptions, half_bits_scheme_step, HalfBitsTable, Reception,
};
pub use output::{
    emit_results, format_sig, parse_float, parse_results, result_rows, write_results, write_rows,
    CsvRow, CSV_HEADER,
};
pub use scenario::{
    MatrixSpec, ModelSpec, PowerMode, PreparedScenario, Scenario, Scheme, SensorEntry,
    StabilitySettings, VectorSpec,
};
pub use sim::{run_scenario, GridResult, IterationStats, RunResult};
