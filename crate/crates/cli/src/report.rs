use std::fmt::Write as _;

use qevo::Metric;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One metric measurement on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
    pub dataset_id: String,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn new(
        metric: Metric,
        value: f64,
        n: usize,
        dataset_id: String,
        seed: Option<u64>,
        wall_time_s: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) || n == 0 {
            return Err(CliError::Core(qevo::Error::Validation(format!(
                "report value {value} over {n} samples is out of range"
            ))));
        }
        Ok(Self {
            metric,
            value,
            n,
            dataset_id,
            seed,
            wall_time_s,
        })
    }

    pub fn table(&self) -> String {
        let seed = self.seed.map_or("-".to_string(), |s| s.to_string());
        table(
            &["metric", "value", "n", "dataset", "seed", "wall_s"],
            &[vec![
                self.metric.to_string(),
                format!("{:.6}", self.value),
                self.n.to_string(),
                self.dataset_id[..12.min(self.dataset_id.len())].to_string(),
                seed,
                format!("{:.3}", self.wall_time_s),
            ]],
        )
    }
}

/// Left-aligned text table with a dashed rule under the header.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut headers.iter().copied());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align() {
        let t = table(&["a", "long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    long\n---  ----\nxyz  1\n");
    }

    #[test]
    fn report_range_checked() {
        assert!(EvalReport::new(Metric::Top1, 1.2, 3, "x".into(), None, 0.0).is_err());
        assert!(EvalReport::new(Metric::Top1, 0.5, 0, "x".into(), None, 0.0).is_err());
        assert!(EvalReport::new(Metric::Top1, 0.5, 3, "x".into(), Some(1), 0.0).is_ok());
    }
}
