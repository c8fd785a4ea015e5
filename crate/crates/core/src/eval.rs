//! Dice overlap, the Wilcoxon signed-rank test, Bonferroni correction and
//! mean (std) report tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Volume;
use crate::error::{Error, Result};

/// `2|a & b| / (|a| + |b|)` of two binary masks (values > 0.5 count as
/// foreground); 1 when both are empty.
pub fn dice(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() || a.spacing() != b.spacing() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "masks differ: {:?} @ {:?} mm vs {:?} @ {:?} mm",
            a.dims(),
            a.spacing(),
            b.dims(),
            b.spacing()
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WilcoxonMode {
    Exact,
    Approx,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of nonzero differences.
    pub n: usize,
    /// Every difference was zero; `p_value` is 1.
    pub degenerate: bool,
}

pub const MAX_EXACT_N: usize = 20;

/// Midranks (1-based) of `v`.
fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired test of `x - y`. Zero differences are dropped.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], mode: WilcoxonMode) -> Result<WilcoxonResult> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "paired samples need equal nonzero lengths (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    let p = match mode {
        WilcoxonMode::Exact => {
            if n > MAX_EXACT_N {
                return Err(Error::InvalidArgument(format!(
                    "exact test supports at most {MAX_EXACT_N} nonzero differences, got {n}"
                )));
            }
            // midranks are multiples of 1/2, so doubled ranks are integers
            let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
            let max: usize = doubled.iter().sum();
            let mut counts = vec![0.0f64; max + 1];
            counts[0] = 1.0;
            for &r in &doubled {
                for s in (r..=max).rev() {
                    counts[s] += counts[s - r];
                }
            }
            let w2 = (2.0 * w).round() as usize;
            let below: f64 = counts[..=w2].iter().sum();
            (2.0 * below / 2f64.powi(n as i32)).min(1.0)
        }
        WilcoxonMode::Approx => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let mut ties = 0.0;
            let mut sorted = abs.clone();
            sorted.sort_by(f64::total_cmp);
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && sorted[j + 1] == sorted[i] {
                    j += 1;
                }
                let t = (j - i + 1) as f64;
                ties += t * t * t - t;
                i = j + 1;
            }
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
            if var <= 0.0 {
                1.0
            } else {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
                let normal = Normal::standard();
                (2.0 * (1.0 - normal.cdf(z))).min(1.0)
            }
        }
    };
    Ok(WilcoxonResult {
        statistic: w,
        p_value: p,
        n,
        degenerate: false,
    })
}

/// `min(1, p m)` with `m = p_values.len()`, and whether each adjusted value
/// is below `alpha`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p_values.len() as f64;
    let adj: Vec<f64> = p_values.iter().map(|p| (p * m).min(1.0)).collect();
    let reject = adj.iter().map(|p| *p < alpha).collect();
    (adj, reject)
}

/// One Dice score of one model on one case of one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseScore {
    pub model: String,
    pub column: String,
    pub case: String,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub model: String,
    pub column: String,
    pub mean: f64,
    /// Sample standard deviation (0 for a single case).
    pub std: f64,
    pub n: usize,
    pub best: bool,
    /// Best in its column and significantly better than every other model
    /// after Bonferroni correction.
    pub star: bool,
    /// Largest corrected p-value of the best model against the others.
    pub max_adjusted_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub models: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[model][column]`.
    pub cells: Vec<Vec<Cell>>,
    /// Number of comparisons the correction used.
    pub comparisons: usize,
    pub alpha: f64,
}

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

pub fn report(scores: &[CaseScore], alpha: f64) -> Result<Report> {
    let models = first_seen(scores.iter().map(|s| s.model.clone()));
    let columns = first_seen(scores.iter().map(|s| s.column.clone()));
    let comparisons = (models.len().saturating_sub(1) * columns.len()).max(1);
    let mut cells: Vec<Vec<Cell>> = vec![Vec::new(); models.len()];
    for col in &columns {
        // per model: scores sorted by case id
        let mut per_model: Vec<Vec<(&str, f64)>> = Vec::new();
        for m in &models {
            let mut v: Vec<(&str, f64)> = scores
                .iter()
                .filter(|s| &s.model == m && &s.column == col)
                .map(|s| (s.case.as_str(), s.dice))
                .collect();
            v.sort_by(|a, b| a.0.cmp(b.0));
            per_model.push(v);
        }
        let ids = |v: &[(&str, f64)]| v.iter().map(|c| c.0.to_string()).collect::<Vec<_>>();
        for (m, v) in models.iter().zip(&per_model) {
            if ids(v) != ids(&per_model[0]) || v.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "model '{m}' was scored on a different case set for '{col}' than '{}'",
                    models[0]
                )));
            }
        }
        let stats: Vec<(f64, f64)> = per_model
            .iter()
            .map(|v| {
                let n = v.len() as f64;
                let mean = v.iter().map(|c| c.1).sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|c| (c.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mean, var.sqrt())
            })
            .collect();
        let best = (0..models.len())
            .max_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0).then(b.cmp(&a)))
            .expect("at least one model");
        let mut star = false;
        let mut max_adj = None;
        if models.len() > 1 {
            let mut worst = 0.0f64;
            let mut all = true;
            for other in (0..models.len()).filter(|&o| o != best) {
                let x: Vec<f64> = per_model[best].iter().map(|c| c.1).collect();
                let y: Vec<f64> = per_model[other].iter().map(|c| c.1).collect();
                let nz = x.iter().zip(&y).filter(|(a, b)| a != b).count();
                let mode = if nz <= MAX_EXACT_N {
                    WilcoxonMode::Exact
                } else {
                    WilcoxonMode::Approx
                };
                let r = wilcoxon_signed_rank(&x, &y, mode)?;
                let adj = (r.p_value * comparisons as f64).min(1.0);
                worst = worst.max(adj);
                all &= !r.degenerate && stats[best].0 > stats[other].0 && adj < alpha;
            }
            star = all;
            max_adj = Some(worst);
        }
        for (i, m) in models.iter().enumerate() {
            cells[i].push(Cell {
                model: m.clone(),
                column: col.clone(),
                mean: stats[i].0,
                std: stats[i].1,
                n: per_model[i].len(),
                best: i == best,
                star: i == best && star,
                max_adjusted_p: if i == best { max_adj } else { None },
            });
        }
    }
    Ok(Report {
        models,
        columns,
        cells,
        comparisons,
        alpha,
    })
}

impl Report {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for cell in self.cells.iter().flatten() {
            out.serialize(cell).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Mean (std) table; `**bold**` marks the column best and a trailing
    /// `*` a significant win.
    pub fn to_text(&self) -> String {
        let cell_text = |c: &Cell| {
            let mut s = format!("{:.3} ({:.3})", c.mean, c.std);
            if c.best {
                s = format!("**{s}**");
            }
            if c.star {
                s.push('*');
            }
            s
        };
        let mw = self.models.iter().map(|m| m.len()).max().unwrap_or(0).max(5);
        let cw: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| self.cells.iter().map(|row| cell_text(&row[j]).len()).max().unwrap_or(0).max(c.len()))
            .collect();
        let mut s = String::new();
        let _ = write!(s, "{:<mw$}", "model");
        for (c, w) in self.columns.iter().zip(&cw) {
            let _ = write!(s, "  {c:<w$}");
        }
        s.push('\n');
        for (m, row) in self.models.iter().zip(&self.cells) {
            let _ = write!(s, "{m:<mw$}");
            for (c, w) in row.iter().zip(&cw) {
                let _ = write!(s, "  {:<w$}", cell_text(c));
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "Wilcoxon signed-rank, Bonferroni m = {} comparisons, alpha = {}",
            self.comparisons, self.alpha
        );
        s
    }
}
