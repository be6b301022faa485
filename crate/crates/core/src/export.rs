//! Plot-ready file outputs: CSV tables with stable column order and a JSON
//! manifest carrying the config hash and seeds so any output directory can
//! be reproduced byte for byte.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{
    BoxRow, BullwhipMetrics, CheckReport, DecompositionResult, EnsembleRecord, ExcludedRun,
    SigmaTable, Trajectory,
};
use crate::grpo::{EvalReport, TrainLogRow};
use crate::linear::BoundReport;

/// Provenance record written next to every output set. Deliberately carries
/// no timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    #[serde(default)]
    pub excluded_runs: Vec<ExcludedRun>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &str, master_seed: u64) -> Self {
        Manifest {
            artifact: "echelon".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            master_seed,
            excluded_runs: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

fn writer(path: &Path) -> io::Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// `run,tier,period,order,cost`; tier 0 rows carry the demand path with
/// zero cost.
pub fn write_ensemble_csv(record: &EnsembleRecord, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run", "tier", "period", "order", "cost"])?;
    for (r, run) in record.orders.iter().enumerate() {
        for (k, row) in run.iter().enumerate() {
            for (t, order) in row.iter().enumerate() {
                let cost = if k == 0 { 0.0 } else { record.costs[r][k - 1][t] };
                w.write_record([
                    r.to_string(),
                    k.to_string(),
                    t.to_string(),
                    format!("{order}"),
                    format!("{cost}"),
                ])?;
            }
        }
    }
    w.flush()
}

/// `period,tier,order,shipment,receipt,on_hand,backlog,outstanding,cost`.
pub fn write_trajectory_csv(trajectory: &Trajectory, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "period",
        "tier",
        "order",
        "shipment",
        "receipt",
        "on_hand",
        "backlog",
        "outstanding",
        "cost",
    ])?;
    for (t, out) in trajectory.outcomes.iter().enumerate() {
        for k in 0..out.orders.len() {
            let (on_hand, backlog, outstanding) = trajectory.balances[t][k];
            w.write_record([
                t.to_string(),
                (k + 1).to_string(),
                format!("{}", out.orders[k]),
                format!("{}", out.shipments[k]),
                format!("{}", out.receipts[k]),
                format!("{on_hand}"),
                format!("{backlog}"),
                format!("{outstanding}"),
                format!("{}", out.costs[k]),
            ])?;
        }
    }
    w.flush()
}

/// `tier,period,variance`.
pub fn write_sigma_csv(sigma: &SigmaTable, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["tier", "period", "variance"])?;
    for (k, row) in sigma.values.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            w.write_record([k.to_string(), t.to_string(), format!("{v}")])?;
        }
    }
    w.flush()
}

/// `metric,tier,period,value,defined` for the adjacent-tier, within-tier,
/// and cumulative ratios, then `classical,run,tier,value,defined` rows.
pub fn write_metrics_csv(metrics: &BullwhipMetrics, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["metric", "index_a", "index_b", "value", "defined"])?;
    let mut emit = |name: &str, table: &Vec<Vec<Option<f64>>>, offset: usize| -> io::Result<()> {
        for (i, row) in table.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    (i + offset).to_string(),
                    j.to_string(),
                    cell.map(|v| format!("{v}")).unwrap_or_default(),
                    cell.is_some().to_string(),
                ])?;
            }
        }
        Ok(())
    };
    emit("psi", &metrics.psi, 1)?;
    emit("phi", &metrics.phi, 1)?;
    emit("cumulative", &metrics.cumulative, 1)?;
    emit("classical", &metrics.classical, 0)?;
    w.flush()
}

/// `tier,period,min,q1,median,q3,max,whisker_lo,whisker_hi,outliers` with
/// outliers joined by `|`.
pub fn write_boxplot_csv(rows: &[BoxRow], path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "tier",
        "period",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "whisker_lo",
        "whisker_hi",
        "outliers",
    ])?;
    for row in rows {
        let s = &row.summary;
        let outliers =
            s.outliers.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("|");
        w.write_record([
            row.tier.to_string(),
            row.period.to_string(),
            format!("{}", s.min),
            format!("{}", s.q1),
            format!("{}", s.median),
            format!("{}", s.q3),
            format!("{}", s.max),
            format!("{}", s.whisker_lo),
            format!("{}", s.whisker_hi),
            outliers,
        ])?;
    }
    w.flush()
}

/// `tier,period,total,se_total,v_demand,se_demand,v_decision,se_decision`;
/// demand columns stay empty when only one demand path was sampled.
pub fn write_decomposition_csv(d: &DecompositionResult, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "tier",
        "period",
        "total",
        "se_total",
        "v_demand",
        "se_demand",
        "v_decision",
        "se_decision",
    ])?;
    for k in 0..=d.tier_count {
        for t in 0..d.horizon {
            let (vd, sed) = match (&d.v_demand, &d.se_demand) {
                (Some(v), Some(s)) => (format!("{}", v[k][t]), format!("{}", s[k][t])),
                _ => (String::new(), String::new()),
            };
            w.write_record([
                k.to_string(),
                t.to_string(),
                format!("{}", d.total[k][t]),
                format!("{}", d.se_total[k][t]),
                vd,
                sed,
                format!("{}", d.v_decision[k][t]),
                format!("{}", d.se_decision[k][t]),
            ])?;
        }
    }
    w.flush()
}

/// `k,gamma,demand_bound,decision_bound,uniform_demand_bound,uniform_decision_bound`.
pub fn write_gain_table_csv(bounds: &[BoundReport], path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "k",
        "gamma",
        "demand_bound",
        "decision_bound",
        "uniform_demand_bound",
        "uniform_decision_bound",
    ])?;
    for b in bounds {
        w.write_record([
            b.tier.to_string(),
            format!("{}", b.gamma),
            format!("{}", b.demand_bound),
            format!("{}", b.decision_bound),
            format!("{}", b.uniform_demand_bound),
            format!("{}", b.uniform_decision_bound),
        ])?;
    }
    w.flush()
}

/// `tier,component,estimate,se,bound,pass`.
pub fn write_bounds_csv(report: &CheckReport, path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["tier", "component", "estimate", "se", "bound", "pass"])?;
    for row in &report.rows {
        w.write_record([
            row.tier.to_string(),
            row.component.to_string(),
            format!("{}", row.estimate),
            format!("{}", row.se),
            format!("{}", row.bound),
            row.pass.to_string(),
        ])?;
    }
    w.flush()
}

/// `step,mean_episode_cost,kl,grad_norm,surrogate_shift`.
pub fn write_training_log_csv(log: &[TrainLogRow], path: &Path) -> io::Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "mean_episode_cost", "kl", "grad_norm", "surrogate_shift"])?;
    for row in log {
        w.write_record([
            row.step.to_string(),
            format!("{}", row.mean_episode_cost),
            format!("{}", row.kl),
            format!("{}", row.grad_norm),
            format!("{}", row.surrogate_shift),
        ])?;
    }
    w.flush()
}

/// Scalar evaluation summary as JSON plus per-tier mean costs.
pub fn write_eval_report(report: &EvalReport, path: &Path) -> io::Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        runs: usize,
        mean_total_cost: f64,
        std_total_cost: f64,
        max_total_cost: f64,
        cv: f64,
        per_tier_mean_cost: &'a [f64],
        demand_path: &'a [f64],
        excluded_runs: &'a [ExcludedRun],
    }
    let summary = Summary {
        runs: report.runs,
        mean_total_cost: report.mean_total_cost,
        std_total_cost: report.std_total_cost,
        max_total_cost: report.max_total_cost,
        cv: report.cv,
        per_tier_mean_cost: &report.per_tier_mean_cost,
        demand_path: &report.demand_path,
        excluded_runs: &report.record.excluded,
    };
    std::fs::write(path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
}
