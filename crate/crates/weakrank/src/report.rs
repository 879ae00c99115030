//! Deterministic table rendering: losses as columns, (dataset, noise) rows,
//! best mean per row in bold, ties bolding every winner.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::Result;
use crate::eval::{aggregate, AggregateRow, MetricRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMetric {
    Recall,
    Mrr,
}

impl TableMetric {
    fn label(&self, k_eval: usize) -> String {
        match self {
            TableMetric::Recall => format!("recall@{k_eval}"),
            TableMetric::Mrr => "mrr".to_string(),
        }
    }

    fn mean(&self, row: &AggregateRow) -> f64 {
        match self {
            TableMetric::Recall => row.recall_mean,
            TableMetric::Mrr => row.mrr_mean,
        }
    }
}

fn column_order(rows: &[AggregateRow], preferred: &[String]) -> Vec<String> {
    let present: BTreeSet<&str> = rows.iter().map(|r| r.loss.as_str()).collect();
    let mut out: Vec<String> = preferred
        .iter()
        .filter(|l| present.contains(l.as_str()))
        .cloned()
        .collect();
    for l in present {
        if !out.iter().any(|o| o == l) {
            out.push(l.to_string());
        }
    }
    out
}

/// One Markdown table for the chosen metric. `loss_order` fixes column
/// order; losses absent from it are appended alphabetically.
pub fn render_markdown(rows: &[AggregateRow], metric: TableMetric, loss_order: &[String]) -> String {
    let losses = column_order(rows, loss_order);
    let k_eval = rows.first().map(|r| r.k_eval).unwrap_or(10);
    let mut out = String::new();
    writeln!(out, "### {}", metric.label(k_eval)).unwrap();
    writeln!(out).unwrap();
    write!(out, "| dataset | noise |").unwrap();
    for l in &losses {
        write!(out, " {} |", l.to_uppercase()).unwrap();
    }
    writeln!(out).unwrap();
    write!(out, "|---|---|").unwrap();
    for _ in &losses {
        write!(out, "---|").unwrap();
    }
    writeln!(out).unwrap();

    // Group keys in row order (already sorted by aggregate()).
    let mut groups: Vec<(&str, f64)> = Vec::new();
    for r in rows {
        if !groups
            .iter()
            .any(|(d, n)| *d == r.dataset.as_str() && *n == r.noise)
        {
            groups.push((r.dataset.as_str(), r.noise));
        }
    }
    for (dataset, noise) in groups {
        let cells: Vec<Option<&AggregateRow>> = losses
            .iter()
            .map(|l| {
                rows.iter()
                    .find(|r| r.dataset == dataset && r.noise == noise && &r.loss == l)
            })
            .collect();
        let best = cells
            .iter()
            .flatten()
            .map(|r| metric.mean(r))
            .fold(f64::NEG_INFINITY, f64::max);
        write!(out, "| {dataset} | {noise} |").unwrap();
        for cell in cells {
            match cell {
                None => write!(out, " — |").unwrap(),
                Some(r) => {
                    let v = metric.mean(r);
                    if v == best {
                        write!(out, " **{v:.3}** |").unwrap();
                    } else {
                        write!(out, " {v:.3} |").unwrap();
                    }
                }
            }
        }
        writeln!(out).unwrap();
    }
    out
}

/// Aggregate rows as CSV with means and sample standard deviations.
pub fn render_aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("dataset,noise,loss,recall_mean,recall_std,mrr_mean,mrr_std,n_runs,k_eval\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.dataset,
            r.noise,
            r.loss,
            r.recall_mean,
            r.recall_std,
            r.mrr_mean,
            r.mrr_std,
            r.n_runs,
            r.k_eval
        )
        .unwrap();
    }
    out
}

/// Full report: recall and MRR tables plus the aggregate CSV.
pub fn render_report(records: &[MetricRecord], loss_order: &[String]) -> Result<(String, String)> {
    let rows = aggregate(records)?;
    let k = rows.first().map(|r| r.k_eval).unwrap_or(10);
    let mut md = String::new();
    writeln!(md, "# Sweep report").unwrap();
    writeln!(md).unwrap();
    writeln!(
        md,
        "Mean over {} record(s); MRR cutoff matches recall@{k}.",
        records.len()
    )
    .unwrap();
    writeln!(md).unwrap();
    md.push_str(&render_markdown(&rows, TableMetric::Recall, loss_order));
    writeln!(md).unwrap();
    md.push_str(&render_markdown(&rows, TableMetric::Mrr, loss_order));
    Ok((md, render_aggregate_csv(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(noise: f64, loss: &str, seed: u64, recall: f64) -> MetricRecord {
        MetricRecord {
            dataset: "syn".into(),
            noise,
            loss: loss.into(),
            seed,
            recall_at_k: recall,
            mrr: recall / 2.0,
            k_eval: 10,
        }
    }

    #[test]
    fn best_loss_is_bolded() {
        let records = vec![record(0.1, "ce", 0, 0.5), record(0.1, "lw", 0, 0.7)];
        let (md, _) = render_report(&records, &["ce".into(), "lw".into()]).unwrap();
        assert!(md.contains("**0.700**"), "{md}");
        assert!(md.contains(" 0.500 "), "{md}");
    }

    #[test]
    fn ties_bold_both() {
        let records = vec![record(0.0, "ce", 0, 0.6), record(0.0, "lw", 0, 0.6)];
        let rows = aggregate(&records).unwrap();
        let md = render_markdown(&rows, TableMetric::Recall, &[]);
        assert_eq!(md.matches("**0.600**").count(), 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let records = vec![
            record(0.0, "ce", 0, 0.61),
            record(0.0, "ce", 1, 0.63),
            record(0.2, "lw", 0, 0.55),
        ];
        let a = render_report(&records, &[]).unwrap();
        let b = render_report(&records, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_group_renders_single_row() {
        let records = vec![record(0.3, "ce", 0, 0.4)];
        let rows = aggregate(&records).unwrap();
        let md = render_markdown(&rows, TableMetric::Recall, &[]);
        let data_rows: Vec<&str> = md
            .lines()
            .filter(|l| l.starts_with("| syn"))
            .collect();
        assert_eq!(data_rows.len(), 1);
    }

    #[test]
    fn column_order_follows_config_order() {
        let records = vec![
            record(0.0, "lw", 0, 0.5),
            record(0.0, "ce", 0, 0.5),
            record(0.0, "gce", 0, 0.5),
        ];
        let rows = aggregate(&records).unwrap();
        let md = render_markdown(&rows, TableMetric::Recall, &["lw".into(), "ce".into()]);
        let header = md.lines().nth(2).unwrap();
        let lw_pos = header.find("LW").unwrap();
        let ce_pos = header.find("CE").unwrap();
        let gce_pos = header.find("GCE").unwrap();
        assert!(lw_pos < ce_pos, "{header}");
        assert!(ce_pos < gce_pos, "{header}");
    }
}
