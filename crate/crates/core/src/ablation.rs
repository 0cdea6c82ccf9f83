//! Variant grid for removing one component of the method at a time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::solve_guide_space;
use crate::synthdata::{generate, GenSpec};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoGuide,
    NoDecouple,
    NoPull,
    NoPush,
    NoAdbm,
    Ce2,
    CeMulti,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoGuide,
        Variant::NoDecouple,
        Variant::NoPull,
        Variant::NoPush,
        Variant::NoAdbm,
        Variant::Ce2,
        Variant::CeMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGuide => "no-guide",
            Variant::NoDecouple => "no-decouple",
            Variant::NoPull => "no-pull",
            Variant::NoPush => "no-push",
            Variant::NoAdbm => "no-adbm",
            Variant::Ce2 => "ce-2",
            Variant::CeMulti => "ce-(1+N)",
        }
    }

    /// The base config with this variant's component removed.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoGuide => cfg.gamma1 = 0.0,
            Variant::NoDecouple => {
                cfg.gamma3 = 0.0;
                cfg.gamma4 = 0.0;
            }
            Variant::NoPull => cfg.gamma3 = 0.0,
            Variant::NoPush => cfg.gamma4 = 0.0,
            Variant::NoAdbm => cfg.adbm = false,
            Variant::Ce2 | Variant::CeMulti => {
                cfg.set_gamma([0.0, 1.0, 0.0, 0.0]);
                cfg.adbm = false;
                cfg.multiclass = self == Variant::CeMulti;
            }
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Final-epoch metrics of one variant and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub in_domain_auc: f64,
    pub heldout_auc: f64,
}

/// Trains one variant for one seed. The seed drives the data, the
/// guide-space and the training run.
pub fn run_variant(variant: Variant, base: &TrainConfig, spec: &GenSpec, seed: u64) -> Result<AblationRow> {
    let ds = generate(&GenSpec { seed, ..spec.clone() })?;
    let cfg = TrainConfig { seed, ..variant.apply(base) };
    let (gs, _) = solve_guide_space(cfg.d, spec.num_train_forgery, cfg.theta0, seed)?;
    let out = train(&ds, &cfg, &gs)?;
    let last = out
        .metrics
        .last()
        .ok_or_else(|| Error::Config("ablation needs at least one epoch".into()))?;
    Ok(AblationRow { variant, seed, in_domain_auc: last.in_domain_auc, heldout_auc: last.heldout_auc })
}

/// Runs every variant in `variants` for every seed.
pub fn run_grid(variants: &[Variant], base: &TrainConfig, spec: &GenSpec, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &v in variants {
        for &s in seeds {
            rows.push(run_variant(v, base, spec, s)?);
        }
    }
    Ok(rows)
}

/// Mean held-out and in-domain AUC per variant, in `variants` order.
pub fn summarize(rows: &[AblationRow], variants: &[Variant]) -> Vec<(Variant, f64, f64)> {
    variants
        .iter()
        .filter_map(|&v| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            (!sel.is_empty()).then(|| {
                let n = sel.len() as f64;
                (
                    v,
                    sel.iter().map(|r| r.heldout_auc).sum::<f64>() / n,
                    sel.iter().map(|r| r.in_domain_auc).sum::<f64>() / n,
                )
            })
        })
        .collect()
}

/// Writes `variant,seed,in_domain_auc,heldout_auc` rows.
pub fn write_rows_csv<W: std::io::Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "seed", "in_domain_auc", "heldout_auc"])?;
    for r in rows {
        w.write_record([r.variant.name().to_string(), r.seed.to_string(), r.in_domain_auc.to_string(), r.heldout_auc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
