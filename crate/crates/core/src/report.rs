//! Experiment reports: named measurements plus pass flags, one per job.

use serde::{Deserialize, Serialize};

use crate::exponents::ExtReal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub key: String,
    pub value: f64,
    /// Empty, `pass`, `fail`, `skipped`, `inf` or a free-form marker.
    pub flag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub digest: String,
    pub d: usize,
    pub p: Option<ExtReal>,
    pub q: Option<ExtReal>,
    pub n: usize,
    pub length: f64,
    pub seed: Option<u64>,
    pub measurements: Vec<Measurement>,
    /// Seconds; never written to CSV.
    #[serde(skip)]
    pub wall_time: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, digest: &str, d: usize, n: usize, length: f64) -> Self {
        Self {
            experiment: experiment.into(),
            digest: digest.into(),
            d,
            p: None,
            q: None,
            n,
            length,
            seed: None,
            measurements: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn with_exponents(mut self, p: ExtReal, q: ExtReal) -> Self {
        self.p = Some(p);
        self.q = Some(q);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Adds a value; non-finite values are flagged `inf` / `nan`.
    pub fn push(&mut self, key: &str, value: f64) {
        let flag = if value.is_nan() {
            "nan"
        } else if value.is_infinite() {
            "inf"
        } else {
            ""
        };
        self.push_flagged(key, value, flag);
    }

    pub fn push_flagged(&mut self, key: &str, value: f64, flag: &str) {
        self.measurements.push(Measurement { key: key.into(), value, flag: flag.into() });
    }

    pub fn push_ext(&mut self, key: &str, value: ExtReal) {
        self.push(key, value.to_f64());
    }

    pub fn push_check(&mut self, key: &str, value: f64, pass: bool) {
        self.push_flagged(key, value, if pass { "pass" } else { "fail" });
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measurements.iter().find(|m| m.key == key).map(|m| m.value)
    }

    pub fn failed(&self) -> bool {
        self.measurements.iter().any(|m| m.flag == "fail" || m.flag == "error")
    }
}
