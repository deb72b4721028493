//! Worker panel: one observation per worker per period.
//!
//! Each observation records the market choice `gamma` (0 denotes the outside
//! option, non-employment), earnings when employed, and the separation flag
//! `c`. Every worker separates and rematches in the first period, so `c = 1`
//! at `t = 1`. Optional label columns (occupation, sector, job id) attach
//! observable classifications for benchmarking.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columnar worker panel, sorted by `(worker, period)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkerPanel {
    pub worker: Vec<u32>,
    /// Period `t`, 1-based.
    pub period: Vec<u32>,
    /// Worker type of the observation's worker.
    pub iota: Vec<u32>,
    /// Market choice; 0 is the outside option.
    pub gamma: Vec<u32>,
    /// Earnings; `NaN` when non-employed.
    pub omega: Vec<f64>,
    /// Separation flag.
    pub c: Vec<bool>,
    /// Optional label columns; empty string marks a missing value.
    pub labels: BTreeMap<String, Vec<String>>,
}

impl WorkerPanel {
    pub fn len(&self) -> usize {
        self.worker.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worker.is_empty()
    }

    pub fn n_workers(&self) -> usize {
        self.worker.iter().map(|&w| w as usize + 1).max().unwrap_or(0)
    }

    pub fn n_periods(&self) -> u32 {
        self.period.iter().copied().max().unwrap_or(0)
    }

    /// Largest market index present (markets are `1..=n_markets`).
    pub fn n_markets(&self) -> u32 {
        self.gamma.iter().copied().max().unwrap_or(0)
    }

    pub fn n_worker_types(&self) -> u32 {
        self.iota.iter().map(|&i| i + 1).max().unwrap_or(0)
    }

    pub fn is_employed(&self, idx: usize) -> bool {
        self.gamma[idx] > 0
    }

    /// Checks structural invariants: sortedness, uniqueness of `(i, t)`,
    /// `c = 1` at `t = 1`, and earnings present iff employed.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for col in [self.period.len(), self.iota.len(), self.gamma.len()] {
            if col != n {
                return Err(Error::DimensionMismatch("ragged panel columns".into()));
            }
        }
        if self.omega.len() != n || self.c.len() != n {
            return Err(Error::DimensionMismatch("ragged panel columns".into()));
        }
        for (name, col) in &self.labels {
            if col.len() != n {
                return Err(Error::MissingLabel {
                    label: name.clone(),
                    index: col.len(),
                });
            }
        }
        for idx in 0..n {
            if idx > 0 {
                let prev = (self.worker[idx - 1], self.period[idx - 1]);
                let cur = (self.worker[idx], self.period[idx]);
                if cur <= prev {
                    return Err(Error::InvalidParameter(format!(
                        "panel not sorted or duplicate (worker, t) at row {idx}"
                    )));
                }
            }
            if self.period[idx] == 1 && !self.c[idx] {
                return Err(Error::InvalidParameter(format!(
                    "worker {} has c = 0 at t = 1",
                    self.worker[idx]
                )));
            }
            let employed = self.gamma[idx] > 0;
            if employed && !(self.omega[idx].is_finite() && self.omega[idx] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "employed observation {idx} lacks positive earnings"
                )));
            }
            if !employed && !self.omega[idx].is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "non-employed observation {idx} carries earnings"
                )));
            }
        }
        Ok(())
    }

    /// Writes the panel as `worker_id,t,iota,gamma,omega,c[,labels...]`.
    /// Non-employed rows leave `omega` empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let label_names: Vec<&String> = self.labels.keys().collect();
        write!(out, "worker_id,t,iota,gamma,omega,c")?;
        for name in &label_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for idx in 0..self.len() {
            let omega = if self.gamma[idx] > 0 {
                format!("{:.17e}", self.omega[idx])
            } else {
                String::new()
            };
            write!(
                out,
                "{},{},{},{},{},{}",
                self.worker[idx],
                self.period[idx],
                self.iota[idx],
                self.gamma[idx],
                omega,
                u8::from(self.c[idx])
            )?;
            for name in &label_names {
                write!(out, ",{}", self.labels[*name][idx])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads a panel written by [`WorkerPanel::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let fixed = ["worker_id", "t", "iota", "gamma", "omega", "c"];
        for (k, want) in fixed.iter().enumerate() {
            if headers.get(k) != Some(want) {
                return Err(Error::MalformedRow {
                    line: 1,
                    msg: format!("expected column {k} to be `{want}`"),
                });
            }
        }
        let label_names: Vec<String> = headers.iter().skip(fixed.len()).map(String::from).collect();
        let mut panel = WorkerPanel::default();
        for name in &label_names {
            panel.labels.insert(name.clone(), Vec::new());
        }
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |k: usize| -> Result<&str> {
                record.get(k).ok_or_else(|| Error::MalformedRow {
                    line,
                    msg: format!("missing field {k}"),
                })
            };
            let parse_u32 = |k: usize| -> Result<u32> {
                field(k)?.trim().parse().map_err(|e| Error::MalformedRow {
                    line,
                    msg: format!("field {k}: {e}"),
                })
            };
            let gamma = parse_u32(3)?;
            let omega_raw = field(4)?.trim();
            let omega = if gamma == 0 {
                if !omega_raw.is_empty() {
                    return Err(Error::MalformedRow {
                        line,
                        msg: "non-employed row carries omega".into(),
                    });
                }
                f64::NAN
            } else {
                if omega_raw.is_empty() {
                    return Err(Error::MalformedRow {
                        line,
                        msg: "employed row missing omega".into(),
                    });
                }
                omega_raw.parse().map_err(|e| Error::MalformedRow {
                    line,
                    msg: format!("omega: {e}"),
                })?
            };
            panel.worker.push(parse_u32(0)?);
            panel.period.push(parse_u32(1)?);
            panel.iota.push(parse_u32(2)?);
            panel.gamma.push(gamma);
            panel.omega.push(omega);
            panel.c.push(match field(5)?.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::MalformedRow {
                        line,
                        msg: format!("bad c flag `{other}`"),
                    })
                }
            });
            for (name, col) in panel.labels.iter_mut() {
                let k = fixed.len() + label_names.iter().position(|n| n == name).unwrap();
                col.push(record.get(k).unwrap_or("").to_string());
            }
        }
        panel.validate()?;
        Ok(panel)
    }
}

/// One labeling's change rate over job-change events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRate {
    pub labeling: String,
    /// Number of qualifying job-change events.
    pub events: usize,
    /// Events where the label differs from the prior period.
    pub changed: usize,
    /// `changed / events`; `None` when there are no events.
    pub rate: Option<f64>,
}

/// Restriction on the set of job-change events considered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventCondition<'a> {
    All,
    /// Only events where the named label also changed.
    LabelChanged(&'a str),
    /// Only events where the named label did not change.
    LabelUnchanged(&'a str),
}

/// Fraction of job changes that also change each label.
///
/// A job-change event is an observation with `c = 1` at `t > 1` where the
/// worker is employed in both `t` and `t - 1` (labels attach to jobs, so
/// moves through non-employment carry no prior label).
pub fn transition_change_rates(
    panel: &WorkerPanel,
    labelings: &[&str],
    condition: EventCondition<'_>,
) -> Result<Vec<ChangeRate>> {
    for name in labelings {
        if !panel.labels.contains_key(*name) {
            return Err(Error::MissingLabel {
                label: (*name).to_string(),
                index: 0,
            });
        }
    }
    if let EventCondition::LabelChanged(name) | EventCondition::LabelUnchanged(name) = condition {
        if !panel.labels.contains_key(name) {
            return Err(Error::MissingLabel {
                label: name.to_string(),
                index: 0,
            });
        }
    }
    let mut out: Vec<ChangeRate> = labelings
        .iter()
        .map(|name| ChangeRate {
            labeling: (*name).to_string(),
            events: 0,
            changed: 0,
            rate: None,
        })
        .collect();
    for idx in 1..panel.len() {
        let same_worker = panel.worker[idx] == panel.worker[idx - 1]
            && panel.period[idx] == panel.period[idx - 1] + 1;
        if !same_worker || !panel.c[idx] || panel.period[idx] == 1 {
            continue;
        }
        if !(panel.is_employed(idx) && panel.is_employed(idx - 1)) {
            continue;
        }
        let label_changed = |name: &str| -> Result<bool> {
            let col = &panel.labels[name];
            if col[idx].is_empty() || col[idx - 1].is_empty() {
                return Err(Error::MissingLabel {
                    label: name.to_string(),
                    index: idx,
                });
            }
            Ok(col[idx] != col[idx - 1])
        };
        match condition {
            EventCondition::All => {}
            EventCondition::LabelChanged(name) => {
                if !label_changed(name)? {
                    continue;
                }
            }
            EventCondition::LabelUnchanged(name) => {
                if label_changed(name)? {
                    continue;
                }
            }
        }
        for (slot, name) in out.iter_mut().zip(labelings) {
            slot.events += 1;
            if label_changed(name)? {
                slot.changed += 1;
            }
        }
    }
    for slot in &mut out {
        if slot.events > 0 {
            slot.rate = Some(slot.changed as f64 / slot.events as f64);
        }
    }
    Ok(out)
}
