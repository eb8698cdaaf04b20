//! Classification metrics, multi-run aggregation and significance flags.
//!
//! Predictions at exactly the threshold count as positive. A class with no
//! predicted and no actual members has F1 = 0.

use std::fmt::Write as _;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Significance level for the `*` flag.
pub const ALPHA: f64 = 0.05;

fn check_aligned(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores but {} labels", probs.len(), labels.len())));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    Ok(())
}

pub fn accuracy(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_aligned(probs, labels)?;
    let hits = probs.iter().zip(labels).filter(|(&p, &y)| (p >= threshold) == y).count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Rank-based AUROC with midranks for ties.
pub fn auroc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the group spans ranks i+1..=j+1.
        let midrank = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: precision at each distinct score threshold, weighted by
/// the recall gained there.
pub fn aupr(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::Metric("AUPR needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        let gained = order[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += gained;
        seen += j - i + 1;
        ap += gained as f64 * tp as f64 / seen as f64;
        i = j + 1;
    }
    Ok(ap / n_pos as f64)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Confusion counts `(tp, fp, fn, tn)` for the positive class.
fn confusion(probs: &[f64], labels: &[bool], threshold: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// Unweighted mean of the positive- and negative-class F1.
pub fn macro_f1(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_aligned(probs, labels)?;
    let (tp, fp, fn_, tn) = confusion(probs, labels, threshold);
    Ok((f1(tp, fp, fn_) + f1(tn, fn_, fp)) / 2.0)
}

/// F1 of the positive class.
pub fn positive_f1(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_aligned(probs, labels)?;
    let (tp, fp, fn_, _) = confusion(probs, labels, threshold);
    Ok(f1(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when no label has both classes.
    pub auroc: Option<f64>,
    /// `None` when no label has a positive.
    pub aupr: Option<f64>,
    pub macro_f1: f64,
    /// Labels left out of AUROC because they have a single class.
    pub skipped_labels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Accuracy,
    Auroc,
    Aupr,
    MacroF1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Accuracy, MetricKind::Auroc, MetricKind::Aupr, MetricKind::MacroF1];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "ACC",
            MetricKind::Auroc => "AUROC",
            MetricKind::Aupr => "AUPR",
            MetricKind::MacroF1 => "F1",
        }
    }
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Accuracy => Some(self.accuracy),
            MetricKind::Auroc => self.auroc,
            MetricKind::Aupr => self.aupr,
            MetricKind::MacroF1 => Some(self.macro_f1),
        }
    }
}

fn column(m: ArrayView1<f64>) -> Vec<f64> {
    m.to_vec()
}

fn bool_column(m: ArrayView1<f64>) -> Vec<bool> {
    m.iter().map(|&y| y >= 0.5).collect()
}

/// All four metrics for a `visits × labels` probability matrix against 0/1
/// labels. One column uses binary macro-F1; several columns average the
/// positive-class F1 and the AUROC/AUPR of labels where they are defined.
pub fn compute_metrics(probs: ArrayView2<f64>, labels: ArrayView2<f64>, threshold: f64) -> Result<Metrics> {
    if probs.dim() != labels.dim() {
        return Err(Error::Metric(format!("probabilities {:?} vs labels {:?}", probs.dim(), labels.dim())));
    }
    if probs.is_empty() {
        return Err(Error::Metric("empty input".into()));
    }
    let flat_p: Vec<f64> = probs.iter().copied().collect();
    let flat_y: Vec<bool> = labels.iter().map(|&y| y >= 0.5).collect();
    let acc = accuracy(&flat_p, &flat_y, threshold)?;
    let k = probs.ncols();
    let (mut aurocs, mut auprs, mut f1s) = (Vec::new(), Vec::new(), Vec::new());
    for (p, y) in probs.axis_iter(Axis(1)).zip(labels.axis_iter(Axis(1))) {
        let (p, y) = (column(p), bool_column(y));
        if let Ok(a) = auroc(&p, &y) {
            aurocs.push(a);
        }
        if let Ok(a) = aupr(&p, &y) {
            auprs.push(a);
        }
        f1s.push(if k == 1 { macro_f1(&p, &y, threshold)? } else { positive_f1(&p, &y, threshold)? });
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let skipped = k - aurocs.len();
    if skipped > 0 {
        log::debug!("{skipped} of {k} labels have a single class; left out of AUROC");
    }
    Ok(Metrics {
        accuracy: acc,
        auroc: mean(&aurocs),
        aupr: mean(&auprs),
        macro_f1: mean(&f1s).unwrap_or(0.0),
        skipped_labels: skipped,
    })
}

/// Two-sided Welch t-test p-value. Two zero-variance samples give `p = 0`
/// when their means differ and `p = 1` otherwise.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Metric("Welch test needs at least two values per sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Metric(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Mean and sample variance, summed in sorted order so the result does not
/// depend on input order.
fn mean_var(x: &[f64]) -> (f64, f64) {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = v.iter().map(|y| (y - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    let var = if v.len() > 1 { sq.iter().sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    Significant,
    NotSignificant,
    /// Reference row, too few runs, or mismatched run counts.
    Untested,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Significant => "*",
            Flag::NotSignificant => "ns",
            Flag::Untested => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub metric: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub p_value: Option<f64>,
    pub flag: Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub n_runs: usize,
    pub stats: Vec<MetricStat>,
}

impl VariantRow {
    pub fn stat(&self, metric: MetricKind) -> Option<&MetricStat> {
        self.stats.iter().find(|s| s.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reference: String,
    pub rows: Vec<VariantRow>,
}

/// Mean ± sample std per variant and metric, with Welch flags comparing each
/// variant against `reference`. Rows keep the order of `runs`.
pub fn aggregate(runs: &[(String, Vec<Metrics>)], reference: &str) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Metric("nothing to aggregate".into()));
    }
    let values = |ms: &[Metrics], k: MetricKind| -> Vec<f64> { ms.iter().filter_map(|m| m.get(k)).collect() };
    let reference_runs = runs.iter().find(|(v, _)| v == reference).map(|(_, m)| m.as_slice());
    if reference_runs.is_none() {
        log::warn!("reference variant '{reference}' missing; no significance flags");
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (variant, ms) in runs {
        if ms.is_empty() {
            return Err(Error::Metric(format!("variant '{variant}' has no runs")));
        }
        let mut stats = Vec::new();
        for k in MetricKind::ALL {
            let v = values(ms, k);
            if v.is_empty() {
                continue;
            }
            let (mean, var) = mean_var(&v);
            let mut stat = MetricStat { metric: k, mean, std: var.sqrt(), n: v.len(), p_value: None, flag: Flag::Untested };
            if let Some(refs) = reference_runs.filter(|_| variant != reference) {
                let r = values(refs, k);
                if r.len() != v.len() {
                    log::warn!("{variant} {}: {} runs vs {} reference runs; flag omitted", k.as_str(), v.len(), r.len());
                } else if v.len() >= 2 {
                    let p = welch_p_value(&r, &v)?;
                    stat.p_value = Some(p);
                    stat.flag = if p < ALPHA { Flag::Significant } else { Flag::NotSignificant };
                }
            }
            stats.push(stat);
        }
        rows.push(VariantRow { variant: variant.clone(), n_runs: ms.len(), stats });
    }
    Ok(MetricsReport { reference: reference.to_string(), rows })
}

impl MetricsReport {
    pub fn row(&self, variant: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Aligned text table; `*` marks p < 0.05 against the reference.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# mean ± sample std over runs; * = Welch p < {ALPHA} vs '{}'; threshold {DEFAULT_THRESHOLD} (ties positive); \
             multi-label ACC/F1 are macro over labels",
            self.reference
        );
        let mut cells: Vec<Vec<String>> = vec![["variant", "runs", "ACC", "AUROC", "AUPR", "F1"]
            .iter()
            .map(|s| s.to_string())
            .collect()];
        for row in &self.rows {
            let mut line = vec![row.variant.clone(), row.n_runs.to_string()];
            for k in MetricKind::ALL {
                line.push(match row.stat(k) {
                    Some(s) => format!(
                        "{:.4} ± {:.4}{}",
                        s.mean,
                        s.std,
                        if s.flag == Flag::Significant { "*" } else { "" }
                    ),
                    None => "n/a".into(),
                });
            }
            cells.push(line);
        }
        let widths: Vec<usize> =
            (0..cells[0].len()).map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        for r in &cells {
            let padded: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        }
        out
    }

    /// One line per variant and metric: `variant\tmetric\tmean\tstd\tflag`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tmetric\tmean\tstd\tflag\n");
        for row in &self.rows {
            for s in &row.stats {
                let _ =
                    writeln!(out, "{}\t{}\t{}\t{}\t{}", row.variant, s.metric.as_str(), s.mean, s.std, s.flag.as_str());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.2], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.2], &[false, true], 0.5).unwrap(), 0.0);
        assert_eq!(accuracy(&[0.5], &[true], 0.5).unwrap(), 1.0);
        assert!(accuracy(&[], &[], 0.5).is_err());
        assert!(accuracy(&[0.1], &[true, false], 0.5).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3, 0.3], &[true, false]).unwrap(), 0.5);
        assert!(auroc(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap(), 0.25);
        assert!(aupr(&[0.9], &[false]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(positive_f1(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap(), 0.0);
        // Negative class: tn = 1, fn = 2 → 2/(2+2) = 0.5; positive class 0.
        assert_eq!(macro_f1(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap(), 0.25);
        assert!(macro_f1(&[], &[], 0.5).is_err());
    }

    #[test]
    fn multilabel_skips_single_class_labels() {
        let p = array![[0.9, 0.2], [0.1, 0.7], [0.6, 0.4]];
        let y = array![[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let m = compute_metrics(p.view(), y.view(), 0.5).unwrap();
        assert_eq!(m.auroc, Some(1.0));
        assert_eq!(m.aupr, Some(1.0));
        assert_eq!(m.skipped_labels, 1);
        assert_eq!(m.accuracy, 5.0 / 6.0);
        assert_eq!(m.macro_f1, 0.5);
    }

    fn metrics(auroc: f64) -> Metrics {
        Metrics { accuracy: 0.7, auroc: Some(auroc), aupr: Some(0.5), macro_f1: 0.6, skipped_labels: 0 }
    }

    #[test]
    fn identical_runs_have_zero_std() {
        let r = aggregate(&[("full".into(), vec![metrics(0.8); 5])], "full").unwrap();
        let s = r.rows[0].stat(MetricKind::Auroc).unwrap();
        assert_eq!((s.mean, s.std, s.flag), (0.8, 0.0, Flag::Untested));
    }

    #[test]
    fn disjoint_ranges_are_flagged() {
        let full: Vec<Metrics> = [0.80, 0.802, 0.805, 0.807, 0.81].map(metrics).to_vec();
        let abl: Vec<Metrics> = [0.60, 0.603, 0.605, 0.608, 0.61].map(metrics).to_vec();
        let r = aggregate(&[("full".into(), full), ("w/o-note".into(), abl)], "full").unwrap();
        let s = r.row("w/o-note").unwrap().stat(MetricKind::Auroc).unwrap();
        assert_eq!(s.flag, Flag::Significant);
        assert!(s.p_value.unwrap() < 1e-6);
        // Equal ACC values on both sides: zero variance, equal means.
        assert_eq!(r.row("w/o-note").unwrap().stat(MetricKind::Accuracy).unwrap().flag, Flag::NotSignificant);
    }

    #[test]
    fn single_run_and_mismatched_counts_are_untested() {
        let r = aggregate(&[("full".into(), vec![metrics(0.8)]), ("b".into(), vec![metrics(0.7)])], "full").unwrap();
        assert!(r.rows.iter().flat_map(|row| &row.stats).all(|s| s.flag == Flag::Untested));
        let r = aggregate(&[("full".into(), vec![metrics(0.8); 3]), ("b".into(), vec![metrics(0.7); 2])], "full")
            .unwrap();
        assert!(r.row("b").unwrap().stats.iter().all(|s| s.flag == Flag::Untested));
    }

    #[test]
    fn welch_matches_textbook_value() {
        // t = -1.5, df = 8 for these samples; two-sided p ≈ 0.17203.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.5, 3.5, 4.5, 5.5, 6.5];
        let p = welch_p_value(&a, &b).unwrap();
        assert!((p - 0.172_03).abs() < 1e-4, "{p}");
        assert_eq!(welch_p_value(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn report_formats() {
        let full: Vec<Metrics> = [0.80, 0.81].map(metrics).to_vec();
        let r = aggregate(&[("full".into(), full.clone()), ("backbone".into(), full)], "full").unwrap();
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 1 + 2 * 4);
        assert!(tsv.lines().nth(1).unwrap().starts_with("full\tACC\t"));
        let table = r.to_table();
        assert!(table.lines().nth(1).unwrap().starts_with("variant"));
        assert_eq!(table.lines().count(), 4);
    }
}
