//! Machine-readable evaluation and benchmark reports.

use serde::{Deserialize, Serialize};

/// PSNR value that survives JSON (which has no Infinity literal): finite
/// values serialize as numbers, the identical-image sentinel as "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrDb(pub f64);

impl Serialize for PsnrDb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for PsnrDb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(PsnrDb(v)),
            Raw::Str(s) if s == "inf" => Ok(PsnrDb(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad psnr value {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestViewMetrics {
    pub view: usize,
    pub psnr_db: PsnrDb,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewAte {
    pub view: usize,
    pub ate_pos: f64,
    pub ate_rot: f64,
    pub degenerate_alignment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    /// Scene units; stated explicitly because the reference tables leave
    /// units implicit.
    pub units: String,
    /// How each view's curves were discretized before alignment.
    pub sampling: String,
    pub per_view: Vec<ViewAte>,
    /// Root mean square of the per-view ate_pos values.
    pub pooled_pos: f64,
    pub pooled_rot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub checkpoint_iteration: u64,
    pub test_views: Vec<TestViewMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_psnr_db: Option<PsnrDb>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ssim: Option<f64>,
    /// Always "n/a": the perceptual metric needs a pretrained network.
    pub lpips: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate: Option<AteReport>,
}

pub const EVAL_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPoint {
    pub n_subframes: usize,
    pub batch_rays: usize,
    pub model_param_bytes: usize,
    pub peak_transient_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub c0: f64,
    pub c1: f64,
    pub r_squared: f64,
    pub max_relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub points: Vec<BenchmarkPoint>,
    /// Fit of peak transient bytes against batch_rays * n_subframes.
    pub transient_fit: LinearFit,
    /// Transient bytes at doubled batch size over the base, at fixed N.
    pub doubled_batch_ratio: f64,
}
