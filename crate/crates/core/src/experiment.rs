//! Grid experiments on the synthetic benchmark: generate scenes, corrupt
//! their boxes, train one detector per cell and score it on held-out scenes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_scenes, LayoutSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsRecord};
use crate::noise::{perturb_dataset, NoiseSpec};
use crate::trainer::{train, Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub modes: Vec<Mode>,
    pub r_levels: Vec<f64>,
    /// Cells use seeds `0..seeds` for layout, noise and training alike.
    pub seeds: u64,
    pub scenes: usize,
    pub layout: LayoutSpec,
    /// Template for every cell; `mode` and `seed` are overwritten.
    pub train: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.r_levels.is_empty() || self.seeds == 0 {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for &r in &self.r_levels {
            NoiseSpec::new(r, 0)?;
        }
        self.layout.validate()?;
        self.train.validate()
    }

    /// Grid cells in output order: by mode name, then r, then seed.
    pub fn cells(&self) -> Vec<(Mode, f64, u64)> {
        let mut modes = self.modes.clone();
        modes.sort_by_key(|m| m.as_str());
        modes.dedup();
        let mut rs = self.r_levels.clone();
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        let mut cells = Vec::new();
        for &m in &modes {
            for &r in &rs {
                for s in 0..self.seeds {
                    cells.push((m, r, s));
                }
            }
        }
        cells
    }
}

pub fn run_id(mode: Mode, r: f64, seed: u64) -> String {
    format!("{mode}_r{r}_s{seed}")
}

/// Train and evaluate a single cell on its validation split.
pub fn run_cell(spec: &SweepSpec, mode: Mode, r: f64, seed: u64) -> Result<MetricsRecord> {
    let clean = generate_scenes(spec.scenes, &spec.layout, seed)?;
    let noisy = perturb_dataset(&clean, &NoiseSpec::new(r, seed)?)?;
    let cfg = TrainConfig {
        mode,
        seed,
        ..spec.train.clone()
    };
    let (det, log) = train(&noisy, &cfg)?;
    let report = evaluate(&det, &noisy, Some(&log.val_indices), &cfg.eval)?;
    log::info!("{}: mAP {:.4}", run_id(mode, r, seed), report.map50);
    Ok(MetricsRecord {
        run_id: run_id(mode, r, seed),
        mode: mode.as_str().to_string(),
        noise_r: r,
        seed,
        map50: report.map50,
        cls_acc: report.diagnostic.cls_acc,
        loc_prec: report.diagnostic.loc_prec,
    })
}

/// Run every cell in parallel; rows come back in [`SweepSpec::cells`] order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<MetricsRecord>> {
    spec.validate()?;
    spec.cells()
        .into_par_iter()
        .map(|(m, r, s)| run_cell(spec, m, r, s))
        .collect()
}

/// Mean of `field` over the rows matching `mode` and `r`.
pub fn cell_mean(rows: &[MetricsRecord], mode: Mode, r: f64, field: impl Fn(&MetricsRecord) -> f64) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|x| x.mode == mode.as_str() && x.noise_r == r)
        .map(field)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepSpec {
        SweepSpec {
            modes: vec![Mode::OaIe, Mode::Naive],
            r_levels: vec![0.2, 0.0],
            seeds: 2,
            scenes: 10,
            layout: LayoutSpec::default(),
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn cells_are_sorted_and_deduplicated() {
        let mut spec = tiny();
        spec.modes.push(Mode::Naive);
        let cells = spec.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0], (Mode::OaIe, 0.0, 0));
        assert_eq!(cells[3], (Mode::OaIe, 0.2, 1));
        assert_eq!(cells[4], (Mode::Naive, 0.0, 0));
    }

    #[test]
    fn sweep_is_deterministic() {
        let spec = tiny();
        let a = sweep(&spec).unwrap();
        let b = sweep(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].run_id, "+oa-ie_r0_s0");
        assert!(a.iter().all(|x| (0.0..=1.0).contains(&x.map50)));
        let m = cell_mean(&a, Mode::Naive, 0.2, |x| x.map50).unwrap();
        assert!((m - (a[6].map50 + a[7].map50) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_rejected() {
        let spec = SweepSpec { seeds: 0, ..tiny() };
        assert!(matches!(sweep(&spec), Err(Error::Config(_))));
        let spec = SweepSpec { r_levels: vec![0.6], ..tiny() };
        assert!(matches!(sweep(&spec), Err(Error::InvalidNoiseLevel(_))));
    }
}
