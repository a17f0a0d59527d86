//! JSON system configuration.
//!
//! A configuration names a base system, either a builtin or a full explicit
//! description, plus the perturbation records applied on top of it and the
//! master seed. The effective system is the base with every record applied
//! in order.
//!
//! ```json
//! { "schema_version": 1, "builtin": "S2", "seed": 7 }
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builtin::builtin_system;
use crate::perturb::{apply_records, PerturbationRecord};
use crate::system::ImpulsiveSystem;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<ImpulsiveSystem>,
    #[serde(default)]
    pub records: Vec<PerturbationRecord>,
    #[serde(default)]
    pub seed: u64,
}

impl SystemConfig {
    pub fn builtin(name: &str, seed: u64) -> Self {
        SystemConfig {
            schema_version: SCHEMA_VERSION,
            builtin: Some(name.to_string()),
            system: None,
            records: Vec::new(),
            seed,
        }
    }

    /// Explicit configuration of `base` with `records` applied on top.
    pub fn explicit(base: &ImpulsiveSystem, records: Vec<PerturbationRecord>, seed: u64) -> Self {
        SystemConfig {
            schema_version: SCHEMA_VERSION,
            builtin: None,
            system: Some(base.clone()),
            records,
            seed,
        }
    }

    pub fn base_system(&self) -> Result<ImpulsiveSystem> {
        match (&self.builtin, &self.system) {
            (Some(name), None) => builtin_system(name),
            (None, Some(sys)) => Ok(sys.clone()),
            _ => Err(Error::Config("exactly one of `builtin` and `system` must be given".into())),
        }
    }

    /// The base system with all records applied.
    pub fn build(&self) -> Result<ImpulsiveSystem> {
        Ok(apply_records(&self.base_system()?, &self.records))
    }

    /// Hex SHA-256 of the canonical emitted text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(emit_config(self).as_bytes()))
    }
}

/// Parses configuration text. Errors carry serde's line and column, and the
/// offending key for unknown fields.
pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let cfg: SystemConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version {} unsupported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    cfg.base_system()?;
    Ok(cfg)
}

/// Pretty-printed JSON. Field order is fixed by the type definitions and
/// floats are written in shortest round-trip form, so the text is
/// byte-stable and re-parses to an identical configuration.
pub fn emit_config(cfg: &SystemConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("configuration serializes");
    s.push('\n');
    s
}

/// Loads a configuration from a file path, or a builtin when `arg` names one.
pub fn load(arg: &str, seed: Option<u64>) -> Result<SystemConfig> {
    let mut cfg = if crate::builtin::NAMES.contains(&arg) {
        SystemConfig::builtin(arg, 0)
    } else {
        let text = std::fs::read_to_string(arg).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
        parse_config(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{arg}: {m}")),
            other => other,
        })?
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::NAMES;
    use crate::perturb::{closing_impulse, ClosingOptions};
    use crate::Point;

    #[test]
    fn explicit_round_trip_for_every_builtin() {
        for name in NAMES {
            let sys = builtin_system(name).unwrap();
            let cfg = SystemConfig::explicit(&sys, vec![], 3);
            let text = emit_config(&cfg);
            let back = parse_config(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.build().unwrap(), sys);
            assert_eq!(emit_config(&back), text);
        }
    }

    #[test]
    fn builtin_shorthand() {
        let cfg = parse_config(r#"{"schema_version": 1, "builtin": "S1a", "seed": 5}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.build().unwrap(), builtin_system("S1a").unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = parse_config("{\n  \"schema_version\": 1,\n  \"builtin\": \"S2\",\n  \"colour\": 3\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("colour") && msg.contains("line 4"), "{msg}");
        let sys = builtin_system("S2").unwrap();
        let mut v = serde_json::to_value(SystemConfig::explicit(&sys, vec![], 0)).unwrap();
        v["system"]["d"]["extra"] = serde_json::json!(1);
        assert!(parse_config(&v.to_string()).is_err());
    }

    #[test]
    fn base_must_be_unique() {
        assert!(parse_config(r#"{"schema_version": 1}"#).is_err());
        let sys = builtin_system("S2").unwrap();
        let mut cfg = SystemConfig::explicit(&sys, vec![], 0);
        cfg.builtin = Some("S2".into());
        assert!(parse_config(&emit_config(&cfg)).is_err());
        assert!(parse_config(r#"{"schema_version": 9, "builtin": "S2"}"#).is_err());
    }

    #[test]
    fn perturbed_system_round_trips_with_records() {
        let sys = builtin_system("S2").unwrap();
        let c = closing_impulse(&sys, &sys.d_hat_point(&[0.25, 0.25].into()), &ClosingOptions::new(0.05, 400)).unwrap();
        let mut rec = c.record.clone();
        rec.seed = Some(11);
        let cfg = SystemConfig::explicit(&sys, vec![rec], 11);
        let text = emit_config(&cfg);
        assert!(text.contains("\"seed\": 11"));
        assert!(text.contains("translate") || text.contains("contract"));
        let back = parse_config(&text).unwrap();
        assert_eq!(back.build().unwrap(), c.system);
        assert_eq!(back.hash(), cfg.hash());
        let p = Point::new(0.5, 0.2, 0.3);
        assert_eq!(back.build().unwrap().field.eval(&sys.space, &p), sys.field.eval(&sys.space, &p));
    }
}
