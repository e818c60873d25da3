//! Sweep from a JSON config, emitted as CSV on standard output.
//!
//! cargo run --release --example parameter_sweep -- [config.json]

use evanescent::sweep::{parse_config, SweepTable};

const DEFAULT: &str = r#"{
    "axis": "delta_over_hJ0",
    "values": {"start": -500, "stop": -1.25, "count": 12, "spacing": "geometric"}
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT.to_string(),
    };
    let table = SweepTable::run(parse_config(&text)?)?;
    table.write_csv(std::io::stdout().lock())?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!("{} rows, {} with errors", table.rows.len(), failed);
    Ok(())
}
