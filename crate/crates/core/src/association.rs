//! Text-only association statistics: cosine similarity, per-word
//! association, differential association of two target sets, and the
//! standardized effect size.
//!
//! All functions are pure and sum in input order, so callers that sort their
//! inputs get bit-identical results across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounding slack tolerated when a cosine lands just outside [-1, 1].
pub const COSINE_CLAMP_TOLERANCE: f64 = 1e-12;

/// Standard deviations below this are treated as zero variance.
pub const DEGENERATE_STDDEV: f64 = 1e-15;

/// Which standard deviation normalizes the effect size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdDevConvention {
    /// Bessel-corrected, divides by n - 1.
    #[default]
    Sample,
    /// Divides by n.
    Population,
}

impl StdDevConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            StdDevConvention::Sample => "sample",
            StdDevConvention::Population => "population",
        }
    }
}

impl std::str::FromStr for StdDevConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(StdDevConvention::Sample),
            "population" => Ok(StdDevConvention::Population),
            _ => Err(Error::InvalidConfig(format!(
                "unknown stddev convention {s:?} (expected sample|population)"
            ))),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = dot / (nu * nv);
    if !c.is_finite() || c.abs() > 1.0 + COSINE_CLAMP_TOLERANCE {
        return Err(Error::InternalConsistency(format!(
            "cosine {c} outside [-1, 1] beyond rounding tolerance"
        )));
    }
    Ok(c.clamp(-1.0, 1.0))
}

fn mean_cosine<V: AsRef<[f64]>>(w: &[f64], set: &[V]) -> Result<f64> {
    let mut total = 0.0;
    for v in set {
        total += cosine(w, v.as_ref())?;
    }
    Ok(total / set.len() as f64)
}

/// Mean cosine of `w` to `a` minus mean cosine of `w` to `b`.
pub fn word_association<V: AsRef<[f64]>>(w: &[f64], a: &[V], b: &[V]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyAttributeSet);
    }
    Ok(mean_cosine(w, a)? - mean_cosine(w, b)?)
}

/// Per-target associations, in input order.
pub fn associations<T: AsRef<[f64]>, V: AsRef<[f64]>>(
    targets: &[T],
    a: &[V],
    b: &[V],
) -> Result<Vec<f64>> {
    targets
        .iter()
        .map(|t| word_association(t.as_ref(), a, b))
        .collect()
}

/// Sum of X associations minus sum of Y associations (sums, not means).
pub fn differential_association<T: AsRef<[f64]>, V: AsRef<[f64]>>(
    x: &[T],
    y: &[T],
    a: &[V],
    b: &[V],
) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let sx: f64 = associations(x, a, b)?.iter().sum();
    let sy: f64 = associations(y, a, b)?.iter().sum();
    Ok(sx - sy)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation of the concatenation `first ++ second`.
pub fn pooled_stddev(first: &[f64], second: &[f64], convention: StdDevConvention) -> Result<f64> {
    let n = first.len() + second.len();
    let denom = match convention {
        StdDevConvention::Sample if n >= 2 => (n - 1) as f64,
        StdDevConvention::Population if n >= 1 => n as f64,
        _ => return Err(Error::EmptyTargetSet),
    };
    let m = (first.iter().sum::<f64>() + second.iter().sum::<f64>()) / n as f64;
    let ss: f64 = first
        .iter()
        .chain(second)
        .map(|v| (v - m) * (v - m))
        .sum();
    Ok((ss / denom).sqrt())
}

/// Standardized mean difference of precomputed associations.
pub fn effect_size_from_associations(
    sx: &[f64],
    sy: &[f64],
    convention: StdDevConvention,
) -> Result<f64> {
    if sx.is_empty() || sy.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let sd = pooled_stddev(sx, sy, convention)?;
    if sd < DEGENERATE_STDDEV {
        return Err(Error::DegenerateVariance { stddev: sd });
    }
    Ok((mean(sx) - mean(sy)) / sd)
}

/// Effect size: difference of mean X and Y associations in units of the
/// standard deviation of all target associations.
pub fn effect_size<T: AsRef<[f64]>, V: AsRef<[f64]>>(
    x: &[T],
    y: &[T],
    a: &[V],
    b: &[V],
    convention: StdDevConvention,
) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let sx = associations(x, a, b)?;
    let sy = associations(y, a, b)?;
    effect_size_from_associations(&sx, &sy, convention)
}
