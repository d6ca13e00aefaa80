//! Summary tables: average losses, relative-accuracy indexes, pairwise
//! Diebold-Mariano outcomes and Model Confidence Sets per block, plus the
//! pooled across-model confidence set for real-data runs.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use super::store::ResultStore;
use super::{Approach, FittedModel, HarnessError};
use crate::eval::{avg_rel, dm_test, mcs, EvalError, LossKind, LossPanel};

pub const MCS_CONFIDENCE_LEVELS: [f64; 6] = [0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
pub const MCS_BOOTSTRAP: usize = 1000;
pub const MCS_BLOCK_LENGTH: usize = 12;

/// What the J x J DM matrix holds: Bonferroni p-values for single runs,
/// the share of replications with significant outperformance otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmSummaryKind {
    PValues,
    RejectShare,
}

impl DmSummaryKind {
    pub fn label(&self) -> &'static str {
        match self {
            DmSummaryKind::PValues => "pvalue",
            DmSummaryKind::RejectShare => "reject_share",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SummaryBlock {
    pub model: FittedModel,
    pub delta: f64,
    pub horizon: usize,
    pub loss_kind: LossKind,
    pub approaches: Vec<Approach>,
    /// Average loss per approach across replications and dates.
    pub ind: Vec<f64>,
    pub avg_rel_base: Option<Vec<f64>>,
    pub avg_rel_bu: Option<Vec<f64>>,
    /// `dm[i][j]`: evidence that approach `i` outperforms approach `j`
    /// (None on the diagonal and for degenerate comparisons).
    pub dm: Vec<Vec<Option<f64>>>,
    pub dm_kind: DmSummaryKind,
    pub mcs_pvalues: Vec<f64>,
    pub q_replications: usize,
    /// Zero-loss replications floored inside the geometric means.
    pub floored: usize,
}

#[derive(Debug, Clone)]
pub struct PooledMcsEntry {
    pub horizon: usize,
    pub loss_kind: LossKind,
    pub labels: Vec<String>,
    pub pvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub blocks: Vec<SummaryBlock>,
    /// Across-model confidence sets (real-data runs).
    pub pooled_mcs: Vec<PooledMcsEntry>,
}

type BlockKey = (FittedModel, u64, usize, LossKind);

fn approach_order(present: &[Approach]) -> Vec<Approach> {
    Approach::all().iter().cloned().filter(|a| present.contains(a)).collect()
}

/// Builds the full summary from persisted records; every number here is a
/// pure function of `store.records` plus the manifest seed.
pub fn summarize(store: &ResultStore) -> Result<StudySummary, HarnessError> {
    // (model, delta, horizon, kind) -> approach -> replication -> series
    let mut groups: BTreeMap<BlockKey, BTreeMap<Approach, BTreeMap<usize, Vec<f64>>>> =
        BTreeMap::new();
    for r in &store.records {
        groups
            .entry((r.model, r.delta.to_bits(), r.horizon, r.loss_kind))
            .or_default()
            .entry(r.approach)
            .or_default()
            .entry(r.replication)
            .or_default()
            .push(r.value);
    }

    let mut blocks = Vec::new();
    for ((model, delta_bits, horizon, loss_kind), by_approach) in &groups {
        let approaches = approach_order(&by_approach.keys().cloned().collect::<Vec<_>>());
        let j = approaches.len();
        let replications: Vec<usize> = by_approach
            .values()
            .next()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let q = replications.len();
        if q == 0 {
            continue;
        }

        // per-replication average loss, Q x J
        let mut ind_panel = DMatrix::zeros(q, j);
        for (col, a) in approaches.iter().enumerate() {
            let series_by_rep = &by_approach[a];
            if series_by_rep.len() != q {
                return Err(EvalError::InvalidInput(format!(
                    "approach {} has {} replications, expected {q}",
                    a.label(),
                    series_by_rep.len()
                ))
                .into());
            }
            for (row, rep) in replications.iter().enumerate() {
                let series = &series_by_rep[rep];
                ind_panel[(row, col)] = series.iter().sum::<f64>() / series.len() as f64;
            }
        }
        let ind: Vec<f64> = (0..j).map(|c| ind_panel.column(c).sum() / q as f64).collect();

        let mut floored = 0usize;
        let mut rel = |reference: Approach| -> Result<Option<Vec<f64>>, HarnessError> {
            match approaches.iter().position(|&a| a == reference) {
                Some(pos) => {
                    let out = avg_rel(&ind_panel, pos)?;
                    floored += out.floored;
                    Ok(Some(out.values))
                }
                None => Ok(None),
            }
        };
        let avg_rel_base = rel(Approach::Base)?;
        let avg_rel_bu = rel(Approach::Bu)?;

        // pairwise DM outcomes
        let hac_lags = horizon.saturating_sub(1);
        let n_comparisons = j * (j - 1) / 2;
        let mut dm = vec![vec![None; j]; j];
        let dm_kind = if q == 1 { DmSummaryKind::PValues } else { DmSummaryKind::RejectShare };
        for (ai, a) in approaches.iter().enumerate() {
            for (bi, b) in approaches.iter().enumerate() {
                if ai == bi {
                    continue;
                }
                if q == 1 {
                    let rep = replications[0];
                    let la = &by_approach[a][&rep];
                    let lb = &by_approach[b][&rep];
                    dm[ai][bi] = match dm_test(la, lb, hac_lags, n_comparisons.max(1)) {
                        Ok(res) => Some(res.pvalue_bonferroni),
                        Err(EvalError::DegenerateVariance(_) | EvalError::InvalidInput(_)) => None,
                    };
                } else {
                    let mut rejections = 0usize;
                    for rep in &replications {
                        let la = &by_approach[a][rep];
                        let lb = &by_approach[b][rep];
                        match dm_test(la, lb, hac_lags, n_comparisons.max(1)) {
                            Ok(res) => {
                                let mean_diff: f64 = la
                                    .iter()
                                    .zip(lb)
                                    .map(|(&x, &y)| x - y)
                                    .sum::<f64>();
                                if res.pvalue_bonferroni < 0.05 && mean_diff < 0.0 {
                                    rejections += 1;
                                }
                            }
                            Err(EvalError::DegenerateVariance(_) | EvalError::InvalidInput(_)) => {}
                        }
                    }
                    dm[ai][bi] = Some(rejections as f64 / q as f64);
                }
            }
        }

        // pooled MCS over replications x dates
        let total_rows: usize = replications
            .iter()
            .map(|rep| by_approach[&approaches[0]][rep].len())
            .sum();
        let mut pooled = DMatrix::zeros(total_rows, j);
        for (col, a) in approaches.iter().enumerate() {
            let mut row = 0usize;
            for rep in &replications {
                for &v in &by_approach[a][rep] {
                    pooled[(row, col)] = v;
                    row += 1;
                }
            }
        }
        let names = approaches.iter().map(|a| a.label().to_string()).collect();
        let mcs_pvalues = if total_rows >= 30 && j >= 2 {
            let panel = LossPanel::new(pooled, names, *loss_kind)?;
            mcs(
                &panel,
                &MCS_CONFIDENCE_LEVELS,
                MCS_BOOTSTRAP,
                MCS_BLOCK_LENGTH,
                store.manifest.master_seed,
            )?
            .pvalues
        } else {
            vec![f64::NAN; j]
        };

        blocks.push(SummaryBlock {
            model: *model,
            delta: f64::from_bits(*delta_bits),
            horizon: *horizon,
            loss_kind: *loss_kind,
            approaches,
            ind,
            avg_rel_base,
            avg_rel_bu,
            dm,
            dm_kind,
            mcs_pvalues,
            q_replications: q,
            floored,
        });
    }

    // pooled across-model confidence set for real-data runs: one base
    // column plus one column per (model, non-base approach)
    let mut pooled_mcs = Vec::new();
    if store.manifest.kind == "realdata" {
        let mut by_horizon_kind: BTreeMap<(usize, LossKind), Vec<(String, Vec<f64>)>> =
            BTreeMap::new();
        for ((model, delta_bits, horizon, kind), by_approach) in &groups {
            if *delta_bits != 0.0f64.to_bits() {
                continue;
            }
            let columns = by_horizon_kind.entry((*horizon, *kind)).or_default();
            for (a, series_by_rep) in by_approach {
                let series: Vec<f64> =
                    series_by_rep.values().flat_map(|s| s.iter().cloned()).collect();
                let label = if *a == Approach::Base {
                    "garch:base".to_string()
                } else {
                    format!("{}:{}", model.label(), a.label())
                };
                if *a == Approach::Base && columns.iter().any(|(l, _)| l == "garch:base") {
                    continue; // the univariate baseline is shared across models
                }
                columns.push((label, series));
            }
        }
        for ((horizon, kind), columns) in by_horizon_kind {
            if columns.len() < 2 {
                continue;
            }
            let m = columns[0].1.len();
            if columns.iter().any(|(_, s)| s.len() != m) || m < 30 {
                continue;
            }
            let mut losses = DMatrix::zeros(m, columns.len());
            for (c, (_, s)) in columns.iter().enumerate() {
                for (t, &v) in s.iter().enumerate() {
                    losses[(t, c)] = v;
                }
            }
            let labels: Vec<String> = columns.iter().map(|(l, _)| l.clone()).collect();
            let panel = LossPanel::new(losses, labels.clone(), kind)?;
            let out = mcs(
                &panel,
                &MCS_CONFIDENCE_LEVELS,
                MCS_BOOTSTRAP,
                MCS_BLOCK_LENGTH,
                store.manifest.master_seed,
            )?;
            pooled_mcs.push(PooledMcsEntry { horizon, loss_kind: kind, labels, pvalues: out.pvalues });
        }
    }

    Ok(StudySummary { blocks, pooled_mcs })
}

/// Indices of the best and second-best approach by the given criterion
/// (lower is better).
fn best_two(values: &[f64]) -> (Option<usize>, Option<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    (order.first().cloned(), order.get(1).cloned())
}

impl StudySummary {
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| HarnessError::config("output", e.to_string()))?;
        let mut header = vec![
            "model".to_string(),
            "delta".into(),
            "horizon".into(),
            "loss_kind".into(),
            "approach".into(),
            "ind".into(),
            "avg_rel_base".into(),
            "avg_rel_bu".into(),
            "mcs_pvalue".into(),
            "rank".into(),
            "dm_kind".into(),
            "q_replications".into(),
        ];
        for a in Approach::all() {
            header.push(format!("dm_vs_{}", a.label()));
        }
        w.write_record(&header).map_err(|e| HarnessError::config("output", e.to_string()))?;

        for block in &self.blocks {
            let ranking = block.avg_rel_base.as_ref().unwrap_or(&block.ind);
            let (best, second) = best_two(ranking);
            for (i, a) in block.approaches.iter().enumerate() {
                let mut row = vec![
                    block.model.label().to_string(),
                    block.delta.to_string(),
                    block.horizon.to_string(),
                    block.loss_kind.label().to_string(),
                    a.label().to_string(),
                    block.ind[i].to_string(),
                    block
                        .avg_rel_base
                        .as_ref()
                        .map(|v| v[i].to_string())
                        .unwrap_or_default(),
                    block.avg_rel_bu.as_ref().map(|v| v[i].to_string()).unwrap_or_default(),
                    if block.mcs_pvalues[i].is_finite() {
                        block.mcs_pvalues[i].to_string()
                    } else {
                        String::new()
                    },
                    if best == Some(i) {
                        "1".into()
                    } else if second == Some(i) {
                        "2".into()
                    } else {
                        String::new()
                    },
                    block.dm_kind.label().to_string(),
                    block.q_replications.to_string(),
                ];
                for target in Approach::all() {
                    let cell = block
                        .approaches
                        .iter()
                        .position(|&b| b == target)
                        .and_then(|jj| block.dm[i][jj])
                        .map(|v| v.to_string())
                        .unwrap_or_default();
                    row.push(cell);
                }
                w.write_record(&row)
                    .map_err(|e| HarnessError::config("output", e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_pooled_mcs_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| HarnessError::config("output", e.to_string()))?;
        w.write_record(["horizon", "loss_kind", "column", "mcs_pvalue"])
            .map_err(|e| HarnessError::config("output", e.to_string()))?;
        for entry in &self.pooled_mcs {
            for (label, p) in entry.labels.iter().zip(&entry.pvalues) {
                w.write_record([
                    entry.horizon.to_string(),
                    entry.loss_kind.label().to_string(),
                    label.clone(),
                    p.to_string(),
                ])
                .map_err(|e| HarnessError::config("output", e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::store::{LossRecord, RunManifest};

    fn record(
        rep: usize,
        approach: Approach,
        date: usize,
        value: f64,
        kind: LossKind,
    ) -> LossRecord {
        LossRecord {
            replication: rep,
            delta: 0.0,
            approach,
            model: FittedModel::SBekk,
            date: date.to_string(),
            loss_kind: kind,
            value,
            horizon: 1,
        }
    }

    #[test]
    fn two_replication_toy_store_matches_spreadsheet() {
        // two replications, two approaches, two dates, MSE only
        let mut records = Vec::new();
        // base: rep0 (1, 3), rep1 (2, 2); bu: rep0 (1, 1), rep1 (4, 0)
        for (rep, a, d, v) in [
            (0, Approach::Base, 0, 1.0),
            (0, Approach::Base, 1, 3.0),
            (1, Approach::Base, 0, 2.0),
            (1, Approach::Base, 1, 2.0),
            (0, Approach::Bu, 0, 1.0),
            (0, Approach::Bu, 1, 1.0),
            (1, Approach::Bu, 0, 4.0),
            (1, Approach::Bu, 1, 0.0),
        ] {
            records.push(record(rep, a, d, v, LossKind::Mse));
        }
        let store = ResultStore {
            records,
            manifest: RunManifest::new("study", serde_json::json!({}), 1),
        };
        let summary = summarize(&store).unwrap();
        assert_eq!(summary.blocks.len(), 1);
        let b = &summary.blocks[0];
        // IND_base = mean(2, 2) = 2; IND_bu = mean(1, 2) = 1.5
        assert_eq!(b.ind, vec![2.0, 1.5]);
        // AvgRel_bu vs base = sqrt((1/2) * (2/2)) = sqrt(0.5)
        let rel = b.avg_rel_base.as_ref().unwrap();
        assert!((rel[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rel[0], 1.0);
        // reference column of avg_rel_bu equals 1
        assert_eq!(b.avg_rel_bu.as_ref().unwrap()[1], 1.0);
        assert_eq!(b.q_replications, 2);
    }

    #[test]
    fn q1_relatives_are_plain_ratios() {
        let mut records = Vec::new();
        for d in 0..40 {
            records.push(record(0, Approach::Base, d, 2.0 + (d % 3) as f64, LossKind::Mae));
            records.push(record(0, Approach::Bu, d, 1.0 + (d % 3) as f64, LossKind::Mae));
        }
        let store = ResultStore {
            records,
            manifest: RunManifest::new("study", serde_json::json!({}), 3),
        };
        let summary = summarize(&store).unwrap();
        let b = &summary.blocks[0];
        assert_eq!(b.dm_kind, DmSummaryKind::PValues);
        let rel = b.avg_rel_base.as_ref().unwrap();
        assert!((rel[1] - b.ind[1] / b.ind[0]).abs() < 1e-12);
    }
}
