use std::path::Path;

use ringd_core::ring::RingConfig;

use crate::error::{Error, Result};

pub const DEFAULT_BUS_ADDR: &str = "127.0.0.1:5064";
pub const BUS_ADDR_ENV: &str = "RINGD_BUS_ADDR";

/// Reads a ring configuration from TOML. Missing keys keep their defaults,
/// unknown keys are rejected.
pub fn load_ring_config(path: impl AsRef<Path>) -> Result<RingConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ring_config(&text)
}

pub fn parse_ring_config(text: &str) -> Result<RingConfig> {
    let cfg: RingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `--bus` beats `RINGD_BUS_ADDR` beats the default.
pub fn resolve_bus_addr(flag: Option<&str>) -> String {
    flag.map(str::to_owned)
        .or_else(|| std::env::var(BUS_ADDR_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_BUS_ADDR.to_owned())
}
