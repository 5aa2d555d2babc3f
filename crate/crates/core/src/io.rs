//! Configuration and artifact formats.
//!
//! System instances and policies are TOML documents whose keys mirror the
//! struct fields. Policies are also exchanged as flat CSV with columns
//! `state,su,level,probability` where `state` is `e` (idle) or `b` (busy).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmDuals;
use crate::error::{CoopError, Result};
use crate::model::{JointPolicy, SystemParams};

fn parse_toml<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| CoopError::Parse(format!("{what}: {e}")))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| CoopError::Parse(e.to_string()))
}

pub fn params_from_str(text: &str) -> Result<SystemParams> {
    parse_toml(text, "system parameters")
}

/// Reads and validates a system configuration file.
pub fn read_params(path: &Path) -> Result<SystemParams> {
    let p = params_from_str(&fs::read_to_string(path)?)?;
    Ok(p)
}

pub fn params_to_string(params: &SystemParams) -> Result<String> {
    to_toml(params)
}

/// A stored policy, optionally with the ADMM duals it was computed with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub idle: Vec<Vec<f64>>,
    pub busy: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duals: Option<AdmmDuals>,
}

impl PolicyFile {
    pub fn new(policy: &JointPolicy, duals: Option<AdmmDuals>) -> Self {
        Self {
            idle: policy.idle.clone(),
            busy: policy.busy.clone(),
            duals,
        }
    }

    pub fn policy(&self) -> JointPolicy {
        JointPolicy::from_raw(self.idle.clone(), self.busy.clone())
    }
}

pub fn read_policy_file(path: &Path) -> Result<PolicyFile> {
    parse_toml(&fs::read_to_string(path)?, "policy file")
}

pub fn policy_file_to_string(file: &PolicyFile) -> Result<String> {
    to_toml(file)
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyRow {
    state: char,
    su: usize,
    level: usize,
    probability: f64,
}

pub fn write_policy_csv<W: Write>(policy: &JointPolicy, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (state, table) in [('e', &policy.idle), ('b', &policy.busy)] {
        for (su, row) in table.iter().enumerate() {
            for (level, &probability) in row.iter().enumerate() {
                w.serialize(PolicyRow {
                    state,
                    su,
                    level,
                    probability,
                })
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a joint policy from CSV rows; missing entries are zero.
pub fn read_policy_csv<R: Read>(input: R) -> Result<JointPolicy> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(input).deserialize::<PolicyRow>() {
        rows.push(rec.map_err(csv_err)?);
    }
    let sus = rows.iter().map(|r| r.su + 1).max().unwrap_or(0);
    let mut levels = vec![0usize; sus];
    for r in &rows {
        levels[r.su] = levels[r.su].max(r.level + 1);
    }
    let empty: Vec<Vec<f64>> = levels.iter().map(|&l| vec![0.0; l]).collect();
    let mut joint = JointPolicy::from_raw(empty.clone(), empty);
    for r in rows {
        let table = match r.state {
            'e' => &mut joint.idle,
            'b' => &mut joint.busy,
            other => return Err(CoopError::Parse(format!("unknown state '{other}'"))),
        };
        table[r.su][r.level] = r.probability;
    }
    Ok(joint)
}

fn csv_err(e: csv::Error) -> CoopError {
    CoopError::Parse(e.to_string())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CoopError::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn params_round_trip() {
        let p = reference::fig3_params();
        let text = params_to_string(&p).unwrap();
        assert_eq!(params_from_str(&text).unwrap(), p);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = params_to_string(&reference::fig2_params(1)).unwrap();
        text.insert_str(0, "bogus = 1\n");
        assert!(matches!(params_from_str(&text), Err(CoopError::Parse(_))));
    }

    #[test]
    fn policy_csv_round_trip() {
        let p = reference::fig2_params(2);
        let mut j = JointPolicy::zeros_like(&p);
        j.idle[1][3] = 0.25;
        j.busy[0][4] = 0.75;
        let mut buf = Vec::new();
        write_policy_csv(&j, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("state,su,level,probability\ne,0,0,0.0\n"));
        assert_eq!(read_policy_csv(buf.as_slice()).unwrap(), j);
    }

    #[test]
    fn policy_file_round_trip() {
        let p = reference::fig2_params(1);
        let mut j = JointPolicy::zeros_like(&p);
        j.idle[0][2] = 1.0;
        let f = PolicyFile::new(
            &j,
            Some(AdmmDuals {
                nu: 0.5,
                xi: -0.1,
                mu: vec![0.2],
            }),
        );
        let text = policy_file_to_string(&f).unwrap();
        assert_eq!(parse_toml::<PolicyFile>(&text, "t").unwrap(), f);
    }
}
