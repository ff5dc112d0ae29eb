//! The JSON configuration file.

use std::path::Path;

use darnwalk::geometry::{Configuration, Defaults, Orientation, Shell};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSpec {
    pub component: i64,
    pub dim: usize,
    pub center: Vec<f64>,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub orientation: Orientation,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub shells: Vec<ShellSpec>,
    #[serde(default)]
    pub defaults: Defaults,
}

impl ConfigFile {
    pub fn build(&self) -> Result<Configuration, Failure> {
        let shells = self
            .shells
            .iter()
            .map(|s| Shell {
                component: s.component,
                dim: s.dim,
                center: s.center.clone(),
                inner_radius: s.inner_radius,
                outer_radius: s.outer_radius,
                orientation: s.orientation,
            })
            .collect();
        let weights = self.shells.iter().map(|s| s.weight).collect();
        Ok(Configuration::new(shells, weights, self.defaults.clone())?)
    }
}

/// A loaded configuration with the SHA-256 of its file bytes.
pub struct Loaded {
    pub config: Configuration,
    pub digest: String,
}

pub fn load(path: &Path) -> Result<Loaded, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::parse(format!("cannot read {}: {e}", path.display())))?;
    let file: ConfigFile = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    let config = file.build()?;
    Ok(Loaded {
        config,
        digest: crate::output::sha256_hex(&bytes),
    })
}
