//! Feature transformation block.
//!
//! Three modes turn a raw `T x D` embedding sequence into the detector input:
//!
//! * `M1`: the raw spatial features, unchanged.
//! * `M2`: temporal regularity `|F - shift(F)|` plus its temporal DCT-II.
//! * `M3`: temporal regularity plus `sigmoid(F)`.
//!
//! All transforms preserve shape.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FtbMode {
    M1,
    M2,
    M3,
}

impl FtbMode {
    pub const ALL: [FtbMode; 3] = [FtbMode::M1, FtbMode::M2, FtbMode::M3];
}

impl fmt::Display for FtbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FtbMode::M1 => "m1",
            FtbMode::M2 => "m2",
            FtbMode::M3 => "m3",
        })
    }
}

impl FromStr for FtbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(FtbMode::M1),
            "m2" => Ok(FtbMode::M2),
            "m3" => Ok(FtbMode::M3),
            _ => Err(Error::Argument(format!("unknown FTB mode {s:?} (m1, m2, m3)"))),
        }
    }
}

/// Experimental knobs; the default reproduces the plain transforms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtbOptions {
    /// M2 only: zero DCT coefficients with index `>= cutoff` before the add.
    pub dct_lowpass: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformedFeature {
    pub data: Matrix,
    pub mode: FtbMode,
}

impl TransformedFeature {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Moves every token one step later in time. Row 0 repeats the first token and
/// the last token falls off the end.
pub fn temporal_shift(features: &Matrix) -> Matrix {
    let (t, d) = features.shape();
    let mut out = Matrix::zeros(t, d);
    if t == 0 {
        return out;
    }
    out.row_mut(0).copy_from_slice(features.row(0));
    for r in 1..t {
        out.row_mut(r).copy_from_slice(features.row(r - 1));
    }
    out
}

/// `|F - temporal_shift(F)|`; row 0 is always zero.
pub fn temporal_regularity(features: &Matrix) -> Matrix {
    features.zip_map(&temporal_shift(features), |a, b| (a - b).abs())
}

/// Orthonormal DCT-II of every column along the temporal axis.
pub fn dct_temporal(features: &Matrix) -> Matrix {
    let (t, d) = features.shape();
    let mut out = Matrix::zeros(t, d);
    if t == 0 {
        return out;
    }
    let dct = Dct2::new(t);
    let mut column = vec![0.0; t];
    for c in 0..d {
        for (r, v) in column.iter_mut().enumerate() {
            *v = features.get(r, c);
        }
        out.set_column(c, &dct.transform(&column));
    }
    out
}

/// Length-`n` orthonormal DCT-II evaluated through one complex FFT of the
/// even/odd reordered input (Makhoul's method).
struct Dct2 {
    n: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    twiddles: Vec<Complex<f64>>,
}

impl Dct2 {
    fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scale0 = (1.0 / n as f64).sqrt();
        let scale = (2.0 / n as f64).sqrt();
        let twiddles = (0..n)
            .map(|k| {
                let theta = -std::f64::consts::PI * k as f64 / (2.0 * n as f64);
                let s = if k == 0 { scale0 } else { scale };
                Complex::from_polar(s, theta)
            })
            .collect();
        Self { n, fft, twiddles }
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for i in 0..n.div_ceil(2) {
            buf[i].re = x[2 * i];
        }
        for i in 0..n / 2 {
            buf[n - 1 - i].re = x[2 * i + 1];
        }
        self.fft.process(&mut buf);
        buf.iter()
            .zip(&self.twiddles)
            .map(|(v, w)| (v * w).re)
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn apply_ftb(features: &FeatureSequence, mode: FtbMode) -> TransformedFeature {
    apply_ftb_with(features, mode, &FtbOptions::default())
}

pub fn apply_ftb_with(
    features: &FeatureSequence,
    mode: FtbMode,
    options: &FtbOptions,
) -> TransformedFeature {
    let raw = features.matrix();
    let data = match mode {
        FtbMode::M1 => raw.clone(),
        FtbMode::M2 => {
            let delta = temporal_regularity(raw);
            let mut coeffs = dct_temporal(&delta);
            if let Some(cutoff) = options.dct_lowpass {
                for r in cutoff.min(coeffs.rows())..coeffs.rows() {
                    coeffs.row_mut(r).fill(0.0);
                }
            }
            delta.zip_map(&coeffs, |a, b| a + b)
        }
        FtbMode::M3 => temporal_regularity(raw).zip_map(raw, |delta, x| delta + sigmoid(x)),
    };
    TransformedFeature { data, mode }
}
