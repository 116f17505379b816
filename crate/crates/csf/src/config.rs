//! TOML experiment configs.

use std::fs;
use std::path::Path;

use csf_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

/// Name of the frozen config written into every run directory.
pub const RESOLVED_NAME: &str = "config.resolved";

/// Parse and validate a config. Missing sections and keys take defaults;
/// unknown keys are rejected by name.
pub fn parse_config(text: &str, origin: &str) -> CliResult<TrainConfig> {
    let cfg: TrainConfig =
        toml::from_str(text).map_err(|e| CliError::usage(format!("{origin}: {}", e.message().trim())))?;
    cfg.validate().map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn to_toml(cfg: &TrainConfig) -> String {
    toml::to_string_pretty(cfg).expect("train configs are plain data")
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> CliResult<()> {
    fs::write(path, to_toml(cfg)).map_err(|e| CliError::io(path, e))
}

/// Recursively overlay `patch` onto `base`; tables merge, everything else
/// replaces.
pub fn merge_toml(base: &mut toml::Value, patch: &toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use csf_core::repr::RewardMode;

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.reward.mode = RewardMode::MiOnly;
        cfg.optim.max_grad_norm = 0.0;
        cfg.repr.hidden = vec![32, 16];
        let back = parse_config(&to_toml(&cfg), "mem").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(parse_config(&to_toml(&TrainConfig::default()), "mem").unwrap(), TrainConfig::default());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = parse_config("seed = 4\n[sf]\ngamma = 0.9\n", "mem").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.sf.gamma, 0.9);
        assert_eq!(cfg.sf.tau, TrainConfig::default().sf.tau);
    }

    #[test]
    fn bad_keys_are_named() {
        let err = parse_config("[repr]\nxii = 3.0\n", "mem").unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("xii"), "{}", err.message);
        let err = parse_config("[sf]\ngamma = 1.5\n", "mem").unwrap_err();
        assert!(err.message.contains("sf.gamma"), "{}", err.message);
        let err = parse_config("[reward]\nmode = \"bogus\"\n", "mem").unwrap_err();
        assert!(err.message.contains("bogus"), "{}", err.message);
    }

    #[test]
    fn overlay_merges_tables() {
        let mut base: toml::Value = toml::from_str("[repr]\nxi = 5.0\nnegatives = 8\n").unwrap();
        let patch: toml::Value = toml::from_str("seed = 2\n[repr]\nxi = 1.0\n").unwrap();
        merge_toml(&mut base, &patch);
        let cfg = parse_config(&toml::to_string(&base).unwrap(), "mem").unwrap();
        assert_eq!((cfg.seed, cfg.repr.xi, cfg.repr.negatives), (2, 1.0, 8));
    }
}
