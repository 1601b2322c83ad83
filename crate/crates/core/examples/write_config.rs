//! Print the default run configuration as TOML, a starting point for
//! custom runs.
//!
//! cargo run --example write_config > my_run.toml

fn main() -> trajforge::Result<()> {
    print!("{}", trajforge::eval::RunConfig::default().to_toml()?);
    Ok(())
}
