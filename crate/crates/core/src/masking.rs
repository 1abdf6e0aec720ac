//! Random masking strategies for the self-supervised pre-training task.
//!
//! Three mask families over a T×R window (rows = time points, columns =
//! ROIs): mask whole ROI columns, mask whole time rows, or a two-stage
//! random selection of cells. Masked cells are zero-filled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    MaskRoi,
    MaskTime,
    MaskRandom,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 3] =
        [MaskStrategy::MaskRoi, MaskStrategy::MaskTime, MaskStrategy::MaskRandom];

    pub fn token(self) -> &'static str {
        match self {
            MaskStrategy::MaskRoi => "mask_roi",
            MaskStrategy::MaskTime => "mask_time",
            MaskStrategy::MaskRandom => "mask_random",
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask_roi" => Ok(MaskStrategy::MaskRoi),
            "mask_time" => Ok(MaskStrategy::MaskTime),
            "mask_random" => Ok(MaskStrategy::MaskRandom),
            other => Err(Error::Param(format!(
                "unknown mask strategy `{other}` (expected mask_roi | mask_time | mask_random)"
            ))),
        }
    }
}

/// Boolean T×R mask (true = masked) plus the draw that produced it.
#[derive(Debug, Clone)]
pub struct MaskSpec {
    mask: Vec<bool>,
    t: usize,
    r: usize,
    pub ratio: f64,
    pub strategy: MaskStrategy,
}

impl MaskSpec {
    /// Mask covering every cell; the degenerate reference case for
    /// masked-only losses.
    pub fn full(t: usize, r: usize) -> MaskSpec {
        MaskSpec {
            mask: vec![true; t * r],
            t,
            r,
            ratio: 1.0,
            strategy: MaskStrategy::MaskRandom,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn is_masked(&self, time: usize, roi: usize) -> bool {
        self.mask[time * self.r + roi]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Per-cell weights (1 for masked, 0 for unmasked) as flat f64s.
    pub fn weights(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// Number of selections for `ratio` over `n` items; round half up.
pub(crate) fn round_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 0.5).floor() as usize
}

/// Draw a mask. Selections are uniform without replacement.
pub fn make_mask(strategy: MaskStrategy, t: usize, r: usize, ratio: f64, rng: &mut Rng) -> Result<MaskSpec> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Param(format!("mask ratio {ratio} not in [0, 1)")));
    }
    if t == 0 || r == 0 {
        return Err(Error::Param(format!("mask dimensions {t}x{r} must be positive")));
    }
    let mut mask = vec![false; t * r];
    match strategy {
        MaskStrategy::MaskRoi => {
            for roi in rng.sample_indices(r, round_count(ratio, r)) {
                for time in 0..t {
                    mask[time * r + roi] = true;
                }
            }
        }
        MaskStrategy::MaskTime => {
            for time in rng.sample_indices(t, round_count(ratio, t)) {
                mask[time * r..(time + 1) * r].fill(true);
            }
        }
        MaskStrategy::MaskRandom => {
            // Two-stage: pick time points, then ROIs within each picked one.
            let picks = round_count(ratio, r);
            for time in rng.sample_indices(t, round_count(ratio, t)) {
                for roi in rng.sample_indices(r, picks) {
                    mask[time * r + roi] = true;
                }
            }
        }
    }
    Ok(MaskSpec { mask, t, r, ratio, strategy })
}

/// One masking-ratio draw per training sample, uniform over the set.
pub fn sample_ratio(rng: &mut Rng, ratio_set: &[f64]) -> Result<f64> {
    if ratio_set.is_empty() {
        return Err(Error::Param("empty masking ratio set".into()));
    }
    Ok(*rng.choose(ratio_set))
}

/// Zero the masked cells; the input is left untouched.
pub fn apply_mask(x: &Matrix, spec: &MaskSpec) -> Result<Matrix> {
    if x.rows() != spec.t || x.cols() != spec.r {
        return Err(Error::Shape(format!(
            "apply_mask: data {}x{} vs mask {}x{}",
            x.rows(),
            x.cols(),
            spec.t,
            spec.r
        )));
    }
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&spec.mask) {
        if m {
            *v = 0.0;
        }
    }
    Ok(out)
}
