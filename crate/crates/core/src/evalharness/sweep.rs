use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::EpsModel;
use crate::diffusion::sampler::SamplerSpec;
use crate::error::{LabError, Result};
use crate::evalharness::paired::{metric_name, score_items, EvalItem, SamplerConfig};
use crate::evalharness::report::EvalReport;
use crate::preference::reward::RewardModel;
use crate::weightalg::ParamSet;

pub const CSV_HEADER: [&str; 10] = [
    "alpha", "beta", "gamma", "omega", "metric", "n", "win_ratio", "mean_a", "mean_b", "p_value",
];

/// Grid values per axis. An empty axis is absent: absent `alpha`/`beta`
/// contribute zero to the negative branch and absent `omega` falls back to
/// the sampler's own. `gamma` selects the merge slice and cannot be combined
/// with `alpha` or `beta`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SweepAxes {
    /// `alpha, beta in {0, 0.2, ..., 1}`.
    pub fn default_grid() -> Self {
        let grid: Vec<f64> = (0..=5).map(|i| i as f64 / 5.0).collect();
        Self {
            alpha: grid.clone(),
            beta: grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: &[f64]| -> Result<()> {
            match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                Some(x) => Err(LabError::config(format!("sweep {name} value {x} outside [0, 1]"))),
                None => Ok(()),
            }
        };
        unit("alpha", &self.alpha)?;
        unit("beta", &self.beta)?;
        unit("gamma", &self.gamma)?;
        if let Some(w) = self.omega.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(LabError::config(format!("sweep omega value {w} must be finite and >= 0")));
        }
        if !self.gamma.is_empty() && !(self.alpha.is_empty() && self.beta.is_empty()) {
            return Err(LabError::config(
                "the gamma slice cannot be combined with alpha or beta axes",
            ));
        }
        if self.gamma.is_empty() && self.alpha.is_empty() && self.beta.is_empty() {
            return Err(LabError::config("sweep needs at least one of alpha, beta, gamma"));
        }
        Ok(())
    }

    /// Number of cells: the product of the present axis lengths.
    pub fn cell_count(&self) -> usize {
        [&self.alpha, &self.beta, &self.gamma, &self.omega]
            .iter()
            .map(|a| a.len().max(1))
            .product()
    }

    fn cells(&self, default_omega: f64) -> Vec<CellKey> {
        let opt = |v: &[f64]| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let omegas = if self.omega.is_empty() {
            vec![default_omega]
        } else {
            self.omega.clone()
        };
        let mut out = Vec::with_capacity(self.cell_count());
        for &alpha in &opt(&self.alpha) {
            for &beta in &opt(&self.beta) {
                for &gamma in &opt(&self.gamma) {
                    for &omega in &omegas {
                        out.push(CellKey {
                            alpha,
                            beta,
                            gamma,
                            omega,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CellKey {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub omega: f64,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric: String,
    pub axes: SweepAxes,
    pub cells: Vec<SweepCell>,
}

/// Everything a sweep evaluates against.
pub struct SweepSetup<'a> {
    /// Architecture and schedule shared by all parameter sets.
    pub template: &'a EpsModel<f64>,
    pub theta: &'a ParamSet<f64>,
    pub eta: &'a ParamSet<f64>,
    pub delta: &'a ParamSet<f64>,
    pub sampler: SamplerSpec,
    pub items: &'a [EvalItem],
    pub scorer: &'a RewardModel,
}

impl SweepSetup<'_> {
    fn cell_config(&self, key: &CellKey) -> Result<SamplerConfig> {
        let sampler = self.sampler.with_omega(key.omega);
        match key.gamma {
            Some(g) => SamplerConfig::merged(self.theta, self.eta, g, sampler),
            None => SamplerConfig::composed(
                self.theta,
                self.eta,
                self.delta,
                key.alpha.unwrap_or(0.0),
                key.beta.unwrap_or(0.0),
                sampler,
            ),
        }
    }

    fn baseline(&self, omega: f64) -> Result<SamplerConfig> {
        Ok(SamplerConfig::classical(
            self.theta.add(self.eta)?,
            self.sampler.with_omega(omega),
        ))
    }
}

/// Evaluates every grid cell against classical guidance on `theta + eta` at
/// the cell's `omega`. Cells run on the current rayon pool; the report is
/// independent of scheduling.
pub fn sweep(setup: &SweepSetup<'_>, axes: &SweepAxes) -> Result<SweepReport> {
    axes.validate()?;
    setup.sampler.validate()?;
    if setup.items.is_empty() {
        return Err(LabError::config("sweep needs at least one evaluation item"));
    }
    let keys = axes.cells(setup.sampler.omega);
    let mut omegas: Vec<f64> = keys.iter().map(|k| k.omega).collect();
    omegas.sort_by(f64::total_cmp);
    omegas.dedup();
    let baselines: Vec<(f64, Vec<f64>)> = omegas
        .par_iter()
        .map(|&w| {
            let cfg = setup.baseline(w)?;
            Ok((w, score_items(setup.template, &cfg, setup.items, setup.scorer)?))
        })
        .collect::<Result<_>>()?;
    let cells = keys
        .par_iter()
        .map(|key| {
            let cfg = setup.cell_config(key)?;
            let scores = score_items(setup.template, &cfg, setup.items, setup.scorer)?;
            let base = &baselines
                .iter()
                .find(|(w, _)| *w == key.omega)
                .expect("every omega has a baseline")
                .1;
            Ok(SweepCell {
                alpha: key.alpha,
                beta: key.beta,
                gamma: key.gamma,
                omega: key.omega,
                report: EvalReport::from_scores(&scores, base)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        metric: metric_name(setup.scorer),
        axes: axes.clone(),
        cells,
    })
}

/// Runs [`sweep`] on a dedicated pool of `threads` workers.
pub fn sweep_with_threads(
    setup: &SweepSetup<'_>,
    axes: &SweepAxes,
    threads: usize,
) -> Result<SweepReport> {
    if threads == 0 {
        return Err(LabError::config("threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| sweep(setup, axes))
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LabError::data(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for c in &self.cells {
            w.write_record([
                opt_field(c.alpha),
                opt_field(c.beta),
                opt_field(c.gamma),
                c.omega.to_string(),
                self.metric.clone(),
                c.report.n.to_string(),
                c.report.win_ratio.to_string(),
                c.report.mean_a.to_string(),
                c.report.mean_b.to_string(),
                c.report.p_value.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::data(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        for (ext, body) in [("csv", self.to_csv()?), ("json", self.to_json()?)] {
            let path = dir.join(format!("{stem}.{ext}"));
            let mut f = std::fs::File::create(&path).map_err(|e| LabError::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| LabError::io(&path, e))?;
        }
        Ok(())
    }

    /// The cell with the highest win ratio (first on ties).
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.cells.iter().fold(None, |best: Option<&SweepCell>, c| match best {
            Some(b) if b.report.win_ratio >= c.report.win_ratio => Some(b),
            _ => Some(c),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts() {
        let axes = SweepAxes {
            alpha: vec![0.0, 0.5, 1.0],
            beta: vec![0.0, 0.5, 1.0],
            ..Default::default()
        };
        assert_eq!(axes.cell_count(), 9);
        assert_eq!(axes.cells(7.5).len(), 9);
        let g = SweepAxes {
            gamma: vec![0.4, 0.6, 0.8],
            omega: vec![3.0, 7.5],
            ..Default::default()
        };
        assert_eq!(g.cells(1.0).len(), 6);
        assert_eq!(SweepAxes::default_grid().cell_count(), 36);
    }

    #[test]
    fn axis_validation() {
        let mixed = SweepAxes {
            alpha: vec![0.5],
            gamma: vec![0.6],
            ..Default::default()
        };
        assert!(mixed.validate().unwrap_err().is_config());
        assert!(SweepAxes::default().validate().is_err());
        let out = SweepAxes {
            beta: vec![1.5],
            ..Default::default()
        };
        assert!(out.validate().is_err());
        let neg_omega = SweepAxes {
            omega: vec![-1.0],
            ..SweepAxes::default_grid()
        };
        assert!(neg_omega.validate().is_err());
    }
}
