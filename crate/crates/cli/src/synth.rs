//! `synth`: writes a synthetic panel as `demand.csv` plus `statics.csv`.

use std::path::{Path, PathBuf};

use retrainbench_core::panel::{generate_synthetic, write_demand_csv, write_statics_csv, SyntheticSpec};

use crate::CliError;

pub const DEMAND: &str = "demand.csv";
pub const STATICS: &str = "statics.csv";

/// Reads a generator spec from TOML.
pub fn load_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let spec: SyntheticSpec =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e.message())))?;
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(spec)
}

/// Generates the panel and writes it under `out_dir`.
pub fn write_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let panel = generate_synthetic(spec).map_err(CliError::runtime)?;
    std::fs::create_dir_all(out_dir).map_err(CliError::runtime)?;
    let demand = out_dir.join(DEMAND);
    let statics = out_dir.join(STATICS);
    write_demand_csv(&panel, &demand).map_err(CliError::runtime)?;
    write_statics_csv(&panel, &statics).map_err(CliError::runtime)?;
    Ok(vec![demand, statics])
}
