use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRIC_COLUMNS: [&str; 7] = ["image", "psnr", "ssim", "rmse", "lpips", "niqe", "loe"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub lpips: f64,
    /// Absent when no NIQE model applies to the image size.
    pub niqe: Option<f64>,
    pub loe: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub lpips: f64,
    pub niqe: Option<f64>,
    pub loe: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub scale: usize,
    pub lpips_calibrated: bool,
    pub rows: Vec<MetricRow>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scale: usize,
    count: usize,
    lpips_calibrated: bool,
    lpips_label: &'a str,
    mean: MetricMeans,
    rows: &'a [MetricRow],
}

impl MetricReport {
    pub fn new(scale: usize, lpips_calibrated: bool) -> Self {
        Self { scale, lpips_calibrated, rows: Vec::new() }
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Column means; NIQE is averaged over rows that have it.
    pub fn aggregate(&self) -> MetricMeans {
        let n = self.rows.len().max(1) as f64;
        let mean = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        let niqe: Vec<f64> = self.rows.iter().filter_map(|r| r.niqe).collect();
        MetricMeans {
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            rmse: mean(|r| r.rmse),
            lpips: mean(|r| r.lpips),
            niqe: (!niqe.is_empty()).then(|| niqe.iter().sum::<f64>() / niqe.len() as f64),
            loe: mean(|r| r.loe),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(METRIC_COLUMNS).map_err(io)?;
        for r in &self.rows {
            let niqe = r.niqe.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.image.clone(), r.psnr.to_string(), r.ssim.to_string(), r.rmse.to_string(), r.lpips.to_string(), niqe, r.loe.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let label = if self.lpips_calibrated { "calibrated" } else { "uncalibrated" };
        serde_json::to_value(Summary {
            scale: self.scale,
            count: self.rows.len(),
            lpips_calibrated: self.lpips_calibrated,
            lpips_label: label,
            mean: self.aggregate(),
            rows: &self.rows,
        })
        .expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, v: f64, niqe: Option<f64>) -> MetricRow {
        MetricRow { image: name.into(), psnr: v, ssim: v / 10.0, rmse: v / 100.0, lpips: v, niqe, loe: 2.0 * v }
    }

    #[test]
    fn aggregate_is_row_mean() {
        let mut r = MetricReport::new(2, false);
        r.push(row("a", 1.0, Some(3.0)));
        r.push(row("b", 2.0, None));
        r.push(row("c", 4.0, Some(5.0)));
        let m = r.aggregate();
        assert!((m.psnr - 7.0 / 3.0).abs() < 1e-12 && (m.loe - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.niqe, Some(4.0));
    }

    #[test]
    fn csv_and_json_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = MetricReport::new(4, false);
        r.push(row("x.png", 1.5, None));
        let (c, j) = (dir.path().join("m.csv"), dir.path().join("m.json"));
        r.write_csv(&c).unwrap();
        r.write_json(&j).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRIC_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "x.png,1.5,0.15,0.015,1.5,,3");
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(v["count"], 1);
        assert_eq!(v["scale"], 4);
        assert_eq!(v["lpips_label"], "uncalibrated");
        assert_eq!(v["mean"]["niqe"], serde_json::Value::Null);
    }
}
