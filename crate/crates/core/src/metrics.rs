//! Per-region overlap metrics and predicted-to-truth label matching.
//!
//! For a region `r`, `A` is the truth region and `B` the predicted one;
//! `NFP = |B \ A|` and `NFN = |A \ B|`.

use crate::error::{Error, Result};
use crate::imagegrid::LabelMap;

/// Largest phase count matched by exhaustive permutation search.
pub const EXHAUSTIVE_LIMIT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionCounts {
    pub truth: usize,
    pub predicted: usize,
    pub intersection: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub total: usize,
}

fn check_grids(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if pred.dims() != truth.dims() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

pub fn region_counts(pred: &LabelMap, truth: &LabelMap, region: usize) -> Result<RegionCounts> {
    check_grids(pred, truth)?;
    if region == 0 || region > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("region index {region} out of range")));
    }
    let r = region as u8;
    let mut c = RegionCounts {
        total: pred.len(),
        ..Default::default()
    };
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p == r, t == r) {
            (true, true) => c.intersection += 1,
            (true, false) => c.false_positive += 1,
            (false, true) => c.false_negative += 1,
            (false, false) => {}
        }
    }
    c.truth = c.intersection + c.false_negative;
    c.predicted = c.intersection + c.false_positive;
    Ok(c)
}

impl RegionCounts {
    pub fn fpr(&self) -> Result<f64> {
        let negatives = self.total - self.truth;
        if negatives == 0 {
            return Err(Error::InvalidArgument("truth region covers the whole image".into()));
        }
        Ok(self.false_positive as f64 / negatives as f64)
    }

    pub fn fnr(&self) -> Result<f64> {
        if self.truth == 0 {
            return Err(Error::InvalidArgument("truth region is empty".into()));
        }
        Ok(self.false_negative as f64 / self.truth as f64)
    }

    pub fn dsc(&self) -> Result<f64> {
        let denom = self.truth + self.predicted;
        if denom == 0 {
            return Err(Error::InvalidArgument("both regions are empty".into()));
        }
        Ok(2.0 * self.intersection as f64 / denom as f64)
    }
}

pub fn fpr(pred: &LabelMap, truth: &LabelMap, region: usize) -> Result<f64> {
    region_counts(pred, truth, region)?.fpr()
}

pub fn fnr(pred: &LabelMap, truth: &LabelMap, region: usize) -> Result<f64> {
    region_counts(pred, truth, region)?.fnr()
}

pub fn dsc(pred: &LabelMap, truth: &LabelMap, region: usize) -> Result<f64> {
    region_counts(pred, truth, region)?.dsc()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub region: usize,
    pub counts: RegionCounts,
    /// `None` when the truth region is the whole image.
    pub fpr: Option<f64>,
    pub fnr: f64,
    pub dsc: f64,
}

/// Reports for every region whose truth is nonempty.
pub fn evaluate(pred: &LabelMap, truth: &LabelMap) -> Result<Vec<RegionReport>> {
    check_grids(pred, truth)?;
    let n = pred.phases().max(truth.phases());
    let mut out = Vec::new();
    for region in 1..=n {
        let counts = region_counts(pred, truth, region)?;
        if counts.truth == 0 {
            continue;
        }
        out.push(RegionReport {
            region,
            counts,
            fpr: counts.fpr().ok(),
            fnr: counts.fnr()?,
            dsc: counts.dsc()?,
        });
    }
    Ok(out)
}

pub fn report_csv(reports: &[RegionReport]) -> String {
    let mut out = String::from("region,A,B,NFP,NFN,FPR,FNR,DSC\n");
    for r in reports {
        let fpr = r.fpr.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.region, r.counts.truth, r.counts.predicted, r.counts.false_positive, r.counts.false_negative, fpr, r.fnr, r.dsc
        ));
    }
    out
}

/// `table[p][t]`: DSC of predicted label `p + 1` against truth label `t + 1`.
fn dsc_table(pred: &LabelMap, truth: &LabelMap, n: usize) -> Vec<Vec<f64>> {
    let mut joint = vec![vec![0usize; n]; n];
    let mut pc = vec![0usize; n];
    let mut tc = vec![0usize; n];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        let (p, t) = (p as usize - 1, t as usize - 1);
        if p < n && t < n {
            joint[p][t] += 1;
        }
        if p < n {
            pc[p] += 1;
        }
        if t < n {
            tc[t] += 1;
        }
    }
    (0..n)
        .map(|p| {
            (0..n)
                .map(|t| match pc[p] + tc[t] {
                    0 => 0.0,
                    d => 2.0 * joint[p][t] as f64 / d as f64,
                })
                .collect()
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Permutation `perm` with `perm[p - 1]` the truth label assigned to
/// predicted label `p`; apply it with [`LabelMap::relabel`].
///
/// Exhaustive search for up to four phases, greedy assignment beyond.
/// Ties go to the lower label index.
pub fn match_labels(pred: &LabelMap, truth: &LabelMap, n: usize) -> Result<Vec<usize>> {
    check_grids(pred, truth)?;
    if n == 0 {
        return Err(Error::InvalidArgument("phase count must be positive".into()));
    }
    let table = dsc_table(pred, truth, n);
    let assignment = if n <= EXHAUSTIVE_LIMIT {
        let score = |p: &[usize]| p.iter().enumerate().map(|(i, &t)| table[i][t]).sum::<f64>();
        let mut best = (0..n).collect::<Vec<_>>();
        let mut best_score = score(&best);
        for p in permutations(n) {
            let s = score(&p);
            if s > best_score {
                best = p;
                best_score = s;
            }
        }
        best
    } else {
        greedy_assignment(&table)
    };
    Ok(assignment.into_iter().map(|t| t + 1).collect())
}

fn greedy_assignment(table: &[Vec<f64>]) -> Vec<usize> {
    let n = table.len();
    let mut assigned = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for _ in 0..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for p in (0..n).filter(|&p| assigned[p] == usize::MAX) {
            for t in (0..n).filter(|&t| !taken[t]) {
                if best.is_none_or(|(_, _, s)| table[p][t] > s) {
                    best = Some((p, t, table[p][t]));
                }
            }
        }
        let (p, t, _) = best.expect("an open pair remains");
        assigned[p] = t;
        taken[t] = true;
    }
    assigned
}
