use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Quality of one restored image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute error on the 0–255 scale.
    pub mae: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsSummary {
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

/// Per-image metrics plus the hash of the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub config_hash: String,
    pub images: Vec<ImageMetrics>,
}

pub const CSV_HEADER: &str = "image_id,psnr,ssim,mae";

impl MetricsReport {
    pub fn new(label: impl Into<String>, config_hash: impl Into<String>) -> Self {
        MetricsReport {
            label: label.into(),
            config_hash: config_hash.into(),
            images: Vec::new(),
        }
    }

    /// Arithmetic means over all images.
    pub fn summary(&self) -> MetricsSummary {
        let n = self.images.len();
        let mean = |f: fn(&ImageMetrics) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                self.images.iter().map(f).sum::<f64>() / n as f64
            }
        };
        MetricsSummary {
            count: n,
            psnr: mean(|m| m.psnr),
            ssim: mean(|m| m.ssim),
            mae: mean(|m| m.mae),
        }
    }

    /// Comma-separated table, one row per image, full round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for m in &self.images {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", m.image_id, m.psnr, m.ssim, m.mae);
        }
        s
    }

    pub fn from_csv(label: &str, config_hash: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Data(format!("metrics table must start with `{CSV_HEADER}`")));
        }
        let mut report = MetricsReport::new(label, config_hash);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("metrics line {}: bad number `{s}`", i + 2)))
            };
            if f.len() != 4 {
                return Err(Error::Data(format!("metrics line {}: expected 4 fields", i + 2)));
            }
            report.images.push(ImageMetrics {
                image_id: f[0].to_string(),
                psnr: num(f[1])?,
                ssim: num(f[2])?,
                mae: num(f[3])?,
            });
        }
        Ok(report)
    }

    /// Human-readable report: one line per image and a mean line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} (config {})", self.label, self.config_hash);
        for m in &self.images {
            let _ = writeln!(
                s,
                "{:<12} psnr {:>8.4} dB  ssim {:.5}  mae {:>8.4}",
                m.image_id, m.psnr, m.ssim, m.mae
            );
        }
        let t = self.summary();
        let _ = writeln!(
            s,
            "{:<12} psnr {:>8.4} dB  ssim {:.5}  mae {:>8.4}  ({} images)",
            "mean", t.psnr, t.ssim, t.mae, t.count
        );
        s
    }
}
