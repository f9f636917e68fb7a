use std::fs;
use std::path::Path;

use crate::fusion::FusionMode;
use crate::{Error, Result};

use super::{evaluate, ExperimentConfig, Pipeline, ResultTable};

/// Reference full-scale CER% at 0 dB, kept in the report so desk-scale
/// trends can be read against the established ordering
/// grf < concat < enhanced_only.
pub const REFERENCE_ZERO_DB: [(FusionMode, f64); 3] = [
    (FusionMode::Grf, 21.98),
    (FusionMode::Concat, 23.65),
    (FusionMode::EnhancedOnly, 25.17),
];

/// One trained-and-evaluated (mode, seed) cell of a comparison.
#[derive(Debug, Clone)]
pub struct ModeSeedOutcome {
    pub mode: FusionMode,
    pub seed: u64,
    pub zero_db: Option<f64>,
    pub avg: Option<f64>,
    pub table: ResultTable,
}

/// Aggregated multi-seed comparison across fusion modes.
#[derive(Debug, Clone)]
pub struct TrendReport {
    pub modes: Vec<FusionMode>,
    pub seeds: Vec<u64>,
    pub outcomes: Vec<ModeSeedOutcome>,
    pub text: String,
}

impl TrendReport {
    pub fn from_outcomes(
        modes: &[FusionMode],
        seeds: &[u64],
        outcomes: Vec<ModeSeedOutcome>,
    ) -> Result<Self> {
        if outcomes.len() != modes.len() * seeds.len() {
            return Err(Error::Data(format!(
                "{} outcomes for {} modes x {} seeds",
                outcomes.len(),
                modes.len(),
                seeds.len()
            )));
        }
        let mut report = Self {
            modes: modes.to_vec(),
            seeds: seeds.to_vec(),
            outcomes,
            text: String::new(),
        };
        report.text = report.render();
        Ok(report)
    }

    fn cell(&self, mode: FusionMode, seed: u64) -> Option<&ModeSeedOutcome> {
        self.outcomes.iter().find(|o| o.mode == mode && o.seed == seed)
    }

    fn mean_of(&self, mode: FusionMode, pick: impl Fn(&ModeSeedOutcome) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self
            .outcomes
            .iter()
            .filter(|o| o.mode == mode)
            .filter_map(pick)
            .collect();
        (values.len() == self.seeds.len())
            .then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean CER at the 0 dB condition across seeds.
    pub fn mean_zero_db(&self, mode: FusionMode) -> Option<f64> {
        self.mean_of(mode, |o| o.zero_db)
    }

    /// Mean of the per-table AVG rows across seeds.
    pub fn mean_avg(&self, mode: FusionMode) -> Option<f64> {
        self.mean_of(mode, |o| o.avg)
    }

    /// Whether mean 0 dB CER satisfies grf <= concat and
    /// grf <= enhanced_only (only comparing modes actually present).
    pub fn ordering_holds(&self) -> Option<bool> {
        let grf = self.mean_zero_db(FusionMode::Grf)?;
        let mut checked = false;
        for other in [FusionMode::Concat, FusionMode::EnhancedOnly] {
            if let Some(v) = self.mean_zero_db(other) {
                checked = true;
                if grf > v {
                    return Some(false);
                }
            }
        }
        checked.then_some(true)
    }

    /// Per-seed 0 dB comparison of grf against another mode:
    /// (wins, ties, losses) counted from grf's side.
    pub fn grf_record_against(&self, other: FusionMode) -> Option<(usize, usize, usize)> {
        let (mut wins, mut ties, mut losses) = (0, 0, 0);
        for &seed in &self.seeds {
            let g = self.cell(FusionMode::Grf, seed)?.zero_db?;
            let o = self.cell(other, seed)?.zero_db?;
            if g < o {
                wins += 1;
            } else if g == o {
                ties += 1;
            } else {
                losses += 1;
            }
        }
        Some((wins, ties, losses))
    }

    fn render(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.2}"),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "fusion mode comparison over seeds {:?}\n\n",
            self.seeds
        ));
        out.push_str("per-seed CER% at 0 dB:\n");
        for &seed in &self.seeds {
            let cells: Vec<String> = self
                .modes
                .iter()
                .map(|&m| {
                    format!("{m} {}", fmt_opt(self.cell(m, seed).and_then(|o| o.zero_db)))
                })
                .collect();
            out.push_str(&format!("  seed {seed}: {}\n", cells.join(", ")));
        }
        out.push_str("\nmean CER% at 0 dB: ");
        let means: Vec<String> = self
            .modes
            .iter()
            .map(|&m| format!("{m} {}", fmt_opt(self.mean_zero_db(m))))
            .collect();
        out.push_str(&means.join(", "));
        out.push_str("\nmean CER% AVG row: ");
        let avgs: Vec<String> = self
            .modes
            .iter()
            .map(|&m| format!("{m} {}", fmt_opt(self.mean_avg(m))))
            .collect();
        out.push_str(&avgs.join(", "));
        out.push_str("\n\npairwise mean 0 dB differences:\n");
        for (i, &a) in self.modes.iter().enumerate() {
            for &b in &self.modes[i + 1..] {
                if let (Some(ma), Some(mb)) = (self.mean_zero_db(a), self.mean_zero_db(b)) {
                    let diff = ma - mb;
                    let verdict = if diff < 0.0 {
                        format!("{a} better")
                    } else if diff > 0.0 {
                        format!("{b} better")
                    } else {
                        "tie".to_string()
                    };
                    out.push_str(&format!("  {a} - {b} = {diff:+.2} ({verdict})\n"));
                }
            }
        }
        if let Some(grf) = self.mean_zero_db(FusionMode::Grf) {
            out.push_str("\nordering check at 0 dB (mean over seeds):\n");
            for other in [FusionMode::Concat, FusionMode::EnhancedOnly] {
                if let Some(v) = self.mean_zero_db(other) {
                    let ok = grf <= v;
                    out.push_str(&format!(
                        "  grf <= {other}: {} ({grf:.2} vs {v:.2})\n",
                        if ok { "OK" } else { "VIOLATION" }
                    ));
                }
            }
            if let Some((w, t, l)) = self.grf_record_against(FusionMode::EnhancedOnly) {
                out.push_str(&format!(
                    "  grf vs enhanced_only per seed at 0 dB: {w} wins, {t} ties, {l} losses\n"
                ));
            }
        }
        out.push_str("\nfull-scale reference CER% at 0 dB for context: ");
        let reference: Vec<String> = REFERENCE_ZERO_DB
            .iter()
            .map(|(m, v)| format!("{m} {v}"))
            .collect();
        out.push_str(&reference.join(" < "));
        out.push('\n');
        out
    }

    /// Per-cell CSV: one row for every (mode, seed) plus mean rows.
    pub fn csv(&self) -> String {
        let mut out = String::from("mode,seed,zero_db,avg\n");
        let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for o in &self.outcomes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                o.mode,
                o.seed,
                fmt_opt(o.zero_db),
                fmt_opt(o.avg)
            ));
        }
        for &m in &self.modes {
            out.push_str(&format!(
                "{m},mean,{},{}\n",
                fmt_opt(self.mean_zero_db(m)),
                fmt_opt(self.mean_avg(m))
            ));
        }
        out
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Train and evaluate every (mode, seed) pair under identical data:
/// pretraining runs once per seed, each mode's joint phase warm starts
/// from those checkpoints, and the per-cell tables plus the trend report
/// are written under the configured output directory as they complete.
pub fn compare_modes(
    cfg: &ExperimentConfig,
    modes: &[FusionMode],
    seeds: &[u64],
) -> Result<TrendReport> {
    if modes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("compare-modes needs at least one mode and one seed".into()));
    }
    let base = cfg.out_dir.clone();
    let mut outcomes = Vec::new();
    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        seed_cfg.out_dir = base.join(format!("seed{seed}"));
        let pipe = Pipeline::load(seed_cfg.clone())?;
        if !seed_cfg.from_scratch {
            if modes.iter().any(|&m| m != FusionMode::NoisyOnly) {
                pipe.pretrain_enh()?;
            }
            pipe.pretrain_asr()?;
        }
        for &mode in modes {
            let mut mode_cfg = seed_cfg.clone();
            mode_cfg.mode = mode;
            let pipe = Pipeline::load(mode_cfg)?;
            let ckpt = pipe.train_joint()?;
            let (model, params) = pipe.load_model(&ckpt)?;
            let tag = format!("{mode}_seed{seed}");
            let (table, _) = evaluate(&pipe, &model, &params, &tag)?;
            write_text(
                &base.join("compare").join(format!("seed{seed}_{mode}.txt")),
                &table.text(),
            )?;
            write_text(
                &base.join("compare").join(format!("seed{seed}_{mode}.csv")),
                &table.csv(),
            )?;
            outcomes.push(ModeSeedOutcome {
                mode,
                seed,
                zero_db: table.get("0"),
                avg: table.get("AVG"),
                table,
            });
        }
    }
    let report = TrendReport::from_outcomes(modes, seeds, outcomes)?;
    write_text(&base.join("compare_report.txt"), &report.text)?;
    write_text(&base.join("compare_summary.csv"), &report.csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(mode: FusionMode, seed: u64, zero: f64, avg: f64) -> ModeSeedOutcome {
        ModeSeedOutcome {
            mode,
            seed,
            zero_db: Some(zero),
            avg: Some(avg),
            table: ResultTable {
                tag: format!("{mode}_seed{seed}"),
                rows: vec![("0".into(), zero), ("AVG".into(), avg)],
            },
        }
    }

    fn sample(grf: [f64; 3], concat: [f64; 3], enh: [f64; 3]) -> TrendReport {
        let modes = [FusionMode::Grf, FusionMode::Concat, FusionMode::EnhancedOnly];
        let seeds = [1, 2, 3];
        let mut outcomes = Vec::new();
        for (m, vals) in modes.iter().zip([grf, concat, enh]) {
            for (s, v) in seeds.iter().zip(vals) {
                outcomes.push(outcome(*m, *s, v, v + 1.0));
            }
        }
        TrendReport::from_outcomes(&modes, &seeds, outcomes).unwrap()
    }

    #[test]
    fn means_and_records() {
        let r = sample([10.0, 12.0, 11.0], [12.0, 12.0, 13.0], [14.0, 12.0, 15.0]);
        assert!((r.mean_zero_db(FusionMode::Grf).unwrap() - 11.0).abs() < 1e-12);
        assert!((r.mean_avg(FusionMode::Grf).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(r.ordering_holds(), Some(true));
        assert_eq!(r.grf_record_against(FusionMode::EnhancedOnly), Some((2, 1, 0)));
    }

    #[test]
    fn violations_are_spelled_out() {
        let r = sample([20.0, 20.0, 20.0], [12.0, 12.0, 12.0], [14.0, 14.0, 14.0]);
        assert_eq!(r.ordering_holds(), Some(false));
        assert!(r.text.contains("VIOLATION"), "{}", r.text);
        assert_eq!(r.grf_record_against(FusionMode::EnhancedOnly), Some((0, 0, 3)));
    }

    #[test]
    fn report_text_carries_the_reference_ordering_and_per_seed_lines() {
        let r = sample([1.0, 2.0, 3.0], [2.0, 3.0, 4.0], [3.0, 4.0, 5.0]);
        assert!(r.text.contains("21.98"), "{}", r.text);
        assert!(r.text.contains("23.65"));
        assert!(r.text.contains("25.17"));
        assert!(r.text.contains("seed 2"));
        assert!(r.text.contains("grf <= concat: OK"));
        assert!(r.text.contains("wins"));
    }

    #[test]
    fn csv_lists_cells_and_means() {
        let r = sample([1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]);
        let csv = r.csv();
        assert!(csv.starts_with("mode,seed,zero_db,avg\n"));
        assert!(csv.contains("grf,1,1,2\n"));
        assert!(csv.contains("grf,mean,1,2\n"));
        assert!(csv.contains("enhanced_only,mean,3,4\n"));
    }

    #[test]
    fn outcome_count_must_cover_the_grid() {
        let err = TrendReport::from_outcomes(
            &[FusionMode::Grf],
            &[1, 2],
            vec![outcome(FusionMode::Grf, 1, 1.0, 1.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("1 outcomes"));
    }
}
