//! Evaluation metrics: spectral IQM, Fréchet distance over pluggable
//! features, and index-code mutual information.

mod fft;
mod fid;
mod iqm;
mod linalg;
mod mi;

use std::fmt::Write as _;

pub use fft::{fft2, fftshift, ComplexGrid};
pub use fid::{
    extractor_by_name, fid, frechet_distance, gaussian_stats, image_stats, FeatureExtractor,
    GaussianStats, PixelFeatures, RandomConvFeatures, DEFAULT_EXTRACTOR_SEED, RANDOM_CONV_DIM,
};
pub use iqm::{center_crop_pow2, iqm, iqm_per_image, iqm_plane, luminance, DEFAULT_IQM_DIVISOR};
pub use linalg::{matrix_sqrt_psd, symmetric_eigen};
pub use mi::{index_code_mi, index_code_mi_from_posteriors};

use crate::error::{Error, Result};

/// Spread of a metric over repeated trials.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub trials: usize,
    /// Sample standard deviation (zero for a single trial).
    pub std: f64,
}

/// One named scalar with the context needed to compare it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub name: String,
    /// The metric, or the mean over trials.
    pub value: f64,
    pub n_real: usize,
    pub n_generated: usize,
    /// Feature extractor id, `-` when unused.
    pub extractor: String,
    pub config_hash: String,
    pub trials: Option<TrialSummary>,
}

pub const TSV_HEADER: &str = "metric\tvalue\tn_real\tn_generated\textractor\tconfig_hash\ttrials\tstd";

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n_real: usize, n_generated: usize) -> Self {
        Self {
            name: name.into(),
            value,
            n_real,
            n_generated,
            extractor: "-".into(),
            config_hash: "-".into(),
            trials: None,
        }
    }

    /// Mean and sample standard deviation of per-trial values.
    pub fn from_trials(name: impl Into<String>, values: &[f64], n_real: usize, n_generated: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no trials to summarize".into()));
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut r = Self::new(name, mean, n_real, n_generated);
        r.trials = Some(TrialSummary { trials: values.len(), std });
        Ok(r)
    }

    pub fn with_extractor(mut self, id: impl Into<String>) -> Self {
        self.extractor = id.into();
        self
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = hash.into();
        self
    }

    pub fn check(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite { op: "metric_report" });
        }
        if self.n_real == 0 && self.n_generated == 0 {
            return Err(Error::InvalidArgument(format!("{}: no samples counted", self.name)));
        }
        Ok(())
    }

    /// One tab-separated line matching [`TSV_HEADER`].
    pub fn to_tsv(&self) -> String {
        let (trials, std) = match &self.trials {
            Some(t) => (t.trials.to_string(), format!("{:.10e}", t.std)),
            None => ("1".into(), "-".into()),
        };
        format!(
            "{}\t{:.10e}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.name, self.value, self.n_real, self.n_generated, self.extractor, self.config_hash, trials, std
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("metric line has {} fields, expected 8", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
        let count = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
        let trials = match f[7] {
            "-" => None,
            s => Some(TrialSummary { trials: count(f[6])?, std: num(s)? }),
        };
        Ok(Self {
            name: f[0].into(),
            value: num(f[1])?,
            n_real: count(f[2])?,
            n_generated: count(f[3])?,
            extractor: f[4].into(),
            config_hash: f[5].into(),
            trials,
        })
    }

    /// Human-readable `key: value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[{}]", self.name);
        let _ = writeln!(s, "value: {}", self.value);
        if let Some(t) = &self.trials {
            let _ = writeln!(s, "trials: {}", t.trials);
            let _ = writeln!(s, "std: {}", t.std);
        }
        let _ = writeln!(s, "n_real: {}", self.n_real);
        let _ = writeln!(s, "n_generated: {}", self.n_generated);
        let _ = writeln!(s, "extractor: {}", self.extractor);
        let _ = writeln!(s, "config_hash: {}", self.config_hash);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let r = MetricReport::new("iqm", 0.123456789, 64, 0).with_config_hash("abc");
        assert_eq!(MetricReport::from_tsv(&r.to_tsv()).unwrap(), r);
        let t = MetricReport::from_trials("fid", &[1.0, 2.0, 3.0], 10, 10)
            .unwrap()
            .with_extractor("pixels8x8");
        let back = MetricReport::from_tsv(&t.to_tsv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(TSV_HEADER.split('\t').count(), t.to_tsv().split('\t').count());
    }

    #[test]
    fn trial_mean_and_std() {
        let t = MetricReport::from_trials("x", &[1.0, 3.0], 1, 1).unwrap();
        assert_eq!(t.value, 2.0);
        assert!((t.trials.unwrap().std - 2f64.sqrt()).abs() < 1e-12);
        assert!(MetricReport::from_trials("x", &[], 1, 1).is_err());
    }

    #[test]
    fn check_rejects_nan_and_empty() {
        assert!(MetricReport::new("a", f64::NAN, 1, 1).check().is_err());
        assert!(MetricReport::new("a", 1.0, 0, 0).check().is_err());
        assert!(MetricReport::new("a", 1.0, 3, 0).check().is_ok());
    }

    #[test]
    fn text_report_has_fields() {
        let s = MetricReport::new("mi", 1.5, 100, 0).to_text();
        assert!(s.contains("value: 1.5") && s.contains("n_real: 100"));
    }
}
