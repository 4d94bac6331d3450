//! Verdict documents: one contract per acceptance criterion that a run
//! touches, each made of the measured parts that decide it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const VERDICT_VERSION: u32 = 1;

pub fn criterion_title(criterion: u8) -> &'static str {
    match criterion {
        1 => "kernel properties",
        2 => "noise sampler covariance",
        3 => "additive point variance",
        4 => "variance scaling exponent",
        5 => "limiting covariance",
        6 => "distance to normality",
        7 => "functional CLT covariance",
        8 => "tightness kernel",
        9 => "limit constants",
        10 => "inequality witnesses",
        11 => "truncation and time-step control",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub pass: bool,
    pub measured: Value,
    pub target: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
}

impl Part {
    pub fn new(name: impl Into<String>, pass: bool, measured: Value, target: Value) -> Self {
        Self {
            name: name.into(),
            pass,
            measured,
            target,
            ci: None,
        }
    }

    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci = Some([lo, hi]);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub criterion: u8,
    pub title: String,
    pub pass: bool,
    pub parts: Vec<Part>,
}

/// Everything in here is a function of the config and the seed, so reruns
/// reproduce it byte for byte; timing lives in `run_info.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub verdict_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub kind: String,
    pub seed: u64,
    pub workers: usize,
    pub tolerance_overrides: BTreeMap<String, f64>,
    pub contracts: Vec<Contract>,
    pub complete: bool,
    pub pass: bool,
}

/// Collects parts and folds them into contracts, one per criterion.
#[derive(Debug, Default)]
pub struct Ledger {
    parts: BTreeMap<u8, Vec<Part>>,
}

impl Ledger {
    pub fn add(&mut self, criterion: u8, part: Part) {
        self.parts.entry(criterion).or_default().push(part);
    }

    pub fn contracts(&self) -> Vec<Contract> {
        self.parts
            .iter()
            .map(|(&criterion, parts)| Contract {
                criterion,
                title: criterion_title(criterion).into(),
                pass: parts.iter().all(|p| p.pass),
                parts: parts.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn one_contract_per_criterion() {
        let mut l = Ledger::default();
        l.add(9, Part::new("a", true, json!(1), json!(1)));
        l.add(4, Part::new("b", true, json!(1), json!(1)));
        l.add(9, Part::new("c", false, json!(1), json!(1)));
        let c = l.contracts();
        assert_eq!(c.iter().map(|c| c.criterion).collect::<Vec<_>>(), vec![4, 9]);
        assert!(c[0].pass && !c[1].pass);
        assert_eq!(c[1].parts.len(), 2);
    }
}
