use std::fmt::Write as _;

use super::{build_vqvae, load_split, Layout};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::vqvae::train_vqvae;

/// The three rows of the raydrop-loss / geometric-preservation ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// No raydrop head; the decoder regresses the noisy composite, thresholded for the mask.
    Baseline,
    RaydropLoss,
    RaydropLossGp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::RaydropLoss, Variant::RaydropLossGp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RaydropLoss => "rl",
            Variant::RaydropLossGp => "rl_gp",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::RaydropLoss => (true, false),
            Variant::RaydropLossGp => (true, true),
        }
    }

    fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        let (rl, gp) = self.flags();
        c.vqvae.raydrop_head = rl;
        c.vqvae.gp.enabled = gp;
        c
    }
}

/// One trained variant: test-set reconstructions scored against the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub mask_iou: f64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

/// Columns shared by `ablation.csv` (seed means) and `runs.csv` (one row per seed).
pub const ABLATION_CSV_HEADER: &str = "variant,rl,gp,seed,swd_x100,mmd_bev,jsd_bev,jsd_points,fpd_star,md_chamfer,mask_iou";

const METRIC_COLUMNS: [&str; 6] = ["swd_x100", "mmd_bev", "jsd_bev", "jsd_points", "fpd_star", "md_chamfer"];

impl AblationTable {
    pub fn run(&self, variant: Variant, seed: u64) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    fn row(variant: Variant, seed: &str, values: &[Option<f64>], iou: f64) -> String {
        let (rl, gp) = variant.flags();
        let mut line = format!("{},{rl},{gp},{seed}", variant.name());
        for v in values {
            match v {
                Some(v) => write!(line, ",{v}").unwrap(),
                None => line.push(','),
            }
        }
        write!(line, ",{iou}").unwrap();
        line
    }

    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{ABLATION_CSV_HEADER}\n");
        for r in &self.runs {
            let vals: Vec<Option<f64>> = METRIC_COLUMNS.iter().map(|k| r.report.get(k)).collect();
            out.push_str(&Self::row(r.variant, &r.seed.to_string(), &vals, r.mask_iou));
            out.push('\n');
        }
        out
    }

    /// Three rows, each the mean over seeds; the seed column reads `mean`.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("{ABLATION_CSV_HEADER}\n");
        for v in Variant::ALL {
            let runs: Vec<&AblationRun> = self.runs.iter().filter(|r| r.variant == v).collect();
            if runs.is_empty() {
                continue;
            }
            let n = runs.len() as f64;
            let vals: Vec<Option<f64>> = METRIC_COLUMNS
                .iter()
                .map(|k| {
                    let xs: Option<Vec<f64>> = runs.iter().map(|r| r.report.get(k)).collect();
                    xs.map(|xs| xs.iter().sum::<f64>() / n)
                })
                .collect();
            let iou = runs.iter().map(|r| r.mask_iou).sum::<f64>() / n;
            out.push_str(&Self::row(v, "mean", &vals, iou));
            out.push('\n');
        }
        out
    }
}

/// Trains every variant once per seed on the train split and scores test-set
/// reconstructions. Writes `ablation.csv` and `runs.csv`.
pub fn ablate(cfg: &RunConfig, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let l = Layout::new(cfg);
    let train = load_split(&l.train, cfg)?;
    let test = load_split(&l.test, cfg)?;
    let mut table = AblationTable::default();
    for &seed in seeds {
        for variant in Variant::ALL {
            let c = variant.apply(cfg);
            let mut model = build_vqvae(&c, seed)?;
            let dir = l.ablate.join(format!("{}_seed{seed}", variant.name()));
            c.echo(&dir)?;
            train_vqvae(&mut model, &train, &c.training.vqvae, &c.codebook, seed, Some(&dir))?;
            let recon = model
                .reconstruct(&test)?
                .iter()
                .map(|d| d.to_scan(&c.projection, c.vqvae.baseline_threshold))
                .collect::<Result<Vec<_>>>()?;
            let mut iou = 0.0;
            for (r, t) in recon.iter().zip(&test) {
                iou += r.mask.iou(&t.mask)?;
            }
            let report = evaluate(&recon, &test, &c.metrics)?;
            report.write(&dir)?;
            table.runs.push(AblationRun {
                variant,
                seed,
                mask_iou: iou / test.len() as f64,
                report,
            });
        }
    }
    let write = |name: &str, text: String| -> Result<()> {
        let p = l.ablate.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("ablation.csv", table.summary_csv())?;
    write("runs.csv", table.runs_csv())?;
    cfg.echo(&l.ablate)?;
    Ok(table)
}
