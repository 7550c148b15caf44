use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assignment::Assignment;
use crate::corpus::Corpus;

/// Pearson r between two equal-length columns, two-pass. `None` when either
/// column is constant (or the columns are shorter than two).
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "columns differ in length");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson r of two indicator columns from their 2x2 counts: `n11` rows with
/// both set, `n1x` with x set, `nx1` with y set, out of `n`.
pub fn pearson_binary(n: u64, n1x: u64, nx1: u64, n11: u64) -> Option<f64> {
    let num = n as i128 * n11 as i128 - n1x as i128 * nx1 as i128;
    let vx = n1x as i128 * (n - n1x) as i128;
    let vy = nx1 as i128 * (n - nx1) as i128;
    if vx == 0 || vy == 0 {
        return None;
    }
    Some((num as f64 / ((vx * vy) as f64).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    /// Talking point ids.
    pub rows: Vec<String>,
    /// Label values.
    pub columns: Vec<String>,
    /// `r[row][column]`; constant columns give 0.
    pub r: Vec<Vec<f64>>,
    /// Instances that are both assigned and labeled.
    pub n: usize,
    /// Cells where one indicator was constant.
    pub constant_cells: usize,
}

/// Correlates "assigned to talking point t" with "aux label is l" over the
/// instances that have both an assignment and a label.
pub fn correlation_matrix(assignments: &[Assignment], corpus: &Corpus) -> Result<CorrelationMatrix, AnalysisError> {
    let mut population: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    for a in assignments {
        if let Some(label) = corpus.get(&a.instance_id).and_then(|i| i.aux_label.as_deref()) {
            population.insert(a.instance_id.as_str(), (a.talking_point_id.as_str(), label));
        }
    }
    if population.is_empty() {
        return Err(AnalysisError::NoLabeledInstances);
    }
    let rows: BTreeSet<&str> = population.values().map(|(t, _)| *t).collect();
    let columns: BTreeSet<&str> = population.values().map(|(_, l)| *l).collect();
    let n = population.len() as u64;
    let mut row_count: BTreeMap<&str, u64> = BTreeMap::new();
    let mut col_count: BTreeMap<&str, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for (t, l) in population.values() {
        *row_count.entry(t).or_default() += 1;
        *col_count.entry(l).or_default() += 1;
        *joint.entry((t, l)).or_default() += 1;
    }
    let mut constant_cells = 0;
    let r = rows
        .iter()
        .map(|t| {
            columns
                .iter()
                .map(|l| {
                    let n11 = joint.get(&(*t, *l)).copied().unwrap_or(0);
                    pearson_binary(n, row_count[t], col_count[l], n11).unwrap_or_else(|| {
                        constant_cells += 1;
                        0.0
                    })
                })
                .collect()
        })
        .collect();
    if constant_cells > 0 {
        tracing::warn!(constant_cells, "constant indicator columns; r set to 0 for those cells");
    }
    Ok(CorrelationMatrix {
        rows: rows.into_iter().map(String::from).collect(),
        columns: columns.into_iter().map(String::from).collect(),
        r,
        n: population.len(),
        constant_cells,
    })
}

impl CorrelationMatrix {
    /// Wide form: one row per talking point, one column per label.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["tp_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (row, values) in self.rows.iter().zip(&self.r) {
            let mut rec = vec![row.clone()];
            rec.extend(values.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long form: `tp_id,label,r,n`.
    pub fn write_long_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tp_id", "label", "r", "n"])?;
        for (row, values) in self.rows.iter().zip(&self.r) {
            for (col, v) in self.columns.iter().zip(values) {
                w.write_record([row.as_str(), col.as_str(), &format!("{v:.6}"), &self.n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
