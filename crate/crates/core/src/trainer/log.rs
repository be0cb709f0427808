use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_HEADER: &str =
    "iter,epoch,r,l1,dssim,entropy,total,mean_list_len,t_project_ms,t_forward_ms,t_backward_ms,t_step_ms";

/// One training iteration. `entropy` is empty on epochs where the entropy
/// term is off; sorting time is folded into `t_forward_ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub epoch: usize,
    pub r: u32,
    pub l1: f64,
    pub dssim: f64,
    pub entropy: Option<f64>,
    pub total: f64,
    pub mean_list_len: f64,
    pub t_project_ms: f64,
    pub t_forward_ms: f64,
    pub t_backward_ms: f64,
    pub t_step_ms: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let entropy = self.entropy.map(|h| h.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            self.iter,
            self.epoch,
            self.r,
            self.l1,
            self.dssim,
            entropy,
            self.total,
            self.mean_list_len,
            self.t_project_ms,
            self.t_forward_ms,
            self.t_backward_ms,
            self.t_step_ms
        )
    }
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 120);
    s.push_str(LOG_HEADER);
    s.push('\n');
    for row in rows {
        let _ = writeln!(s, "{}", row.to_csv());
    }
    s
}

pub fn write_log(rows: &[LogRow], path: &Path) -> Result<()> {
    std::fs::write(path, format_log(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_match_header() {
        let row = LogRow {
            iter: 3,
            epoch: 0,
            r: 2,
            l1: 0.1,
            dssim: 0.2,
            entropy: None,
            total: 0.3,
            mean_list_len: 4.5,
            t_project_ms: 1.0,
            t_forward_ms: 2.0,
            t_backward_ms: 3.0,
            t_step_ms: 0.25,
        };
        let text = format_log(&[row.clone(), LogRow { entropy: Some(1.5), ..row }]);
        let lines: Vec<&str> = text.lines().collect();
        let n = LOG_HEADER.split(',').count();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines[1].split(',').count(), n);
        assert_eq!(lines[1], "3,0,2,0.1,0.2,,0.3,4.5,1.000,2.000,3.000,0.250");
        assert_eq!(lines[2].split(',').nth(5), Some("1.5"));
    }
}
