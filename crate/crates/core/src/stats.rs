//! Numerical harness shared by the hyperbolic and tree experiments.
//!
//! Everything here is a pure function of its inputs. Floating-point
//! aggregation goes through [`ExactSum`], which accumulates every summand
//! exactly in a wide fixed-point integer and rounds once at the end. The
//! result is therefore a function of the multiset of summands only: any
//! split of the input into parallel partitions, merged in any order,
//! produces the same bits.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use num_bigint::{BigInt, Sign};
use num_traits::Zero;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data")]
    InsufficientData,
    #[error("degenerate histogram")]
    DegenerateHistogram,
    #[error("invalid count series: {0}")]
    InvalidSeries(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
}

/// Samples `(parameter, count)` of a counting function.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    points: Vec<(f64, f64)>,
}

impl CountSeries {
    /// Parameters must be strictly increasing and counts finite,
    /// nonnegative and nondecreasing.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, StatsError> {
        for (i, &(t, c)) in points.iter().enumerate() {
            if !t.is_finite() || !c.is_finite() || c < 0.0 {
                return Err(StatsError::InvalidSeries(format!(
                    "point {i} = ({t}, {c}) is not finite and nonnegative"
                )));
            }
            if i > 0 {
                let (tp, cp) = points[i - 1];
                if t <= tp {
                    return Err(StatsError::InvalidSeries(format!(
                        "parameters not strictly increasing at index {i}"
                    )));
                }
                if c < cp {
                    return Err(StatsError::InvalidSeries(format!(
                        "counts decrease at index {i}"
                    )));
                }
            }
        }
        Ok(CountSeries { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Count at the largest parameter not exceeding `t`.
    pub fn count_at(&self, t: f64) -> Option<f64> {
        self.points
            .iter()
            .take_while(|(s, _)| *s <= t)
            .last()
            .map(|&(_, c)| c)
    }
}

/// Least-squares line through `(t, ln count)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log-residuals.
    pub residual: f64,
    pub points_used: usize,
}

/// Fits `ln count = slope * t + intercept` over the points whose parameter
/// lies in `window`. Points with zero count are skipped.
pub fn fit_exponential_rate(
    series: &CountSeries,
    window: RangeInclusive<f64>,
) -> Result<RateFit, StatsError> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|(t, c)| window.contains(t) && *c > 0.0)
        .map(|&(t, c)| (t, c.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(StatsError::InsufficientData);
    }
    let n = pts.len() as f64;
    let mean_t = deterministic_sum(pts.iter().map(|p| p.0)) / n;
    let mean_y = deterministic_sum(pts.iter().map(|p| p.1)) / n;
    let sxx = deterministic_sum(pts.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)));
    let sxy = deterministic_sum(pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)));
    if sxx == 0.0 {
        return Err(StatsError::InsufficientData);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let sq = deterministic_sum(pts.iter().map(|&(t, y)| {
        let r = y - (slope * t + intercept);
        r * r
    }));
    Ok(RateFit {
        slope,
        intercept,
        residual: (sq / n).sqrt(),
        points_used: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub empirical: f64,
    pub target: f64,
}

/// Per-cell empirical and target weights over a common partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistogram {
    cells: Vec<Cell>,
}

impl CellHistogram {
    pub fn new(cells: Vec<Cell>) -> Result<Self, StatsError> {
        for c in &cells {
            for (name, w) in [("empirical", c.empirical), ("target", c.target)] {
                if !w.is_finite() || w < 0.0 {
                    return Err(StatsError::InvalidHistogram(format!(
                        "cell {:?} has {name} weight {w}",
                        c.id
                    )));
                }
            }
        }
        Ok(CellHistogram { cells })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn totals(&self) -> (f64, f64) {
        (
            deterministic_sum(self.cells.iter().map(|c| c.empirical)),
            deterministic_sum(self.cells.iter().map(|c| c.target)),
        )
    }

    /// Both columns rescaled to probability vectors.
    pub fn normalized(&self) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
        let (e, t) = self.totals();
        if e <= 0.0 || t <= 0.0 {
            return Err(StatsError::DegenerateHistogram);
        }
        Ok((
            self.cells.iter().map(|c| c.empirical / e).collect(),
            self.cells.iter().map(|c| c.target / t).collect(),
        ))
    }
}

/// Total variation distance between the normalized columns, in `[0, 1]`.
pub fn total_variation(h: &CellHistogram) -> Result<f64, StatsError> {
    let (e, t) = h.normalized()?;
    let s = deterministic_sum(e.iter().zip(&t).map(|(a, b)| (a - b).abs()));
    Ok((0.5 * s).clamp(0.0, 1.0))
}

/// Exact accumulator for `f64` summands.
///
/// Every finite double is an integer multiple of 2^-1074, so the running
/// total is kept as that integer. Rounding to the nearest double happens
/// once, in [`ExactSum::value`]. Non-finite inputs follow IEEE rules.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    acc: BigInt,
    nan: bool,
    pos_inf: bool,
    neg_inf: bool,
}

const SCALE_BITS: i64 = 1074;

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        if x.is_nan() {
            self.nan = true;
            return;
        }
        if x.is_infinite() {
            if x > 0.0 {
                self.pos_inf = true;
            } else {
                self.neg_inf = true;
            }
            return;
        }
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, shift) = if exp == 0 {
            (frac, 0)
        } else {
            (frac | (1u64 << 52), exp - 1)
        };
        let mut v = BigInt::from(mant) << (shift as usize);
        if x < 0.0 {
            v = -v;
        }
        self.acc += v;
    }

    pub fn merge(&mut self, other: &ExactSum) {
        self.acc += &other.acc;
        self.nan |= other.nan;
        self.pos_inf |= other.pos_inf;
        self.neg_inf |= other.neg_inf;
    }

    /// The exact total rounded to the nearest double (ties to even).
    pub fn value(&self) -> f64 {
        if self.nan || (self.pos_inf && self.neg_inf) {
            return f64::NAN;
        }
        if self.pos_inf {
            return f64::INFINITY;
        }
        if self.neg_inf {
            return f64::NEG_INFINITY;
        }
        if self.acc.is_zero() {
            return 0.0;
        }
        let (sign, mag) = self.acc.clone().into_parts();
        let nbits = mag.bits() as i64;
        let (top, shift) = if nbits <= 64 {
            (mag.iter_u64_digits().next().unwrap_or(0), 0i64)
        } else {
            let shift = nbits - 64;
            let kept = &mag >> (shift as usize);
            let lost = &mag - (&kept << (shift as usize));
            let mut top = kept.iter_u64_digits().next().unwrap_or(0);
            if !lost.is_zero() {
                top |= 1;
            }
            (top, shift)
        };
        // `top` has at most 64 significant bits with a sticky low bit, so the
        // u64 -> f64 conversion rounds the exact value correctly.
        let mag_f = ldexp(top as f64, shift - SCALE_BITS);
        if sign == Sign::Minus {
            -mag_f
        } else {
            mag_f
        }
    }
}

fn ldexp(x: f64, e: i64) -> f64 {
    let mut x = x;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

impl Extend<f64> for ExactSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        s.extend(iter);
        s
    }
}

/// Sum whose bits do not depend on how the input was partitioned.
pub fn deterministic_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<ExactSum>().value()
}

/// Parallel variant of [`deterministic_sum`]; identical output.
pub fn deterministic_par_sum(values: &[f64]) -> f64 {
    values
        .par_chunks(4096)
        .map(|c| c.iter().copied().collect::<ExactSum>())
        .reduce(ExactSum::new, |mut a, b| {
            a.merge(&b);
            a
        })
        .value()
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV field; quoted fields are wrapped in double quotes with inner
/// quotes doubled.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Raw(String),
    Quoted(String),
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Raw(fmt_f64(x))
    }
}

macro_rules! raw_int_field {
    ($($t:ty),*) => {$(
        impl From<$t> for Field {
            fn from(x: $t) -> Self {
                Field::Raw(x.to_string())
            }
        }
    )*};
}
raw_int_field!(i32, i64, u32, u64, u128, usize, bool);

/// Minimal CSV table with a mandatory header row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<Field>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Field>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, f) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match f {
                    Field::Raw(s) => out.push_str(s),
                    Field::Quoted(s) => {
                        let _ = write!(out, "\"{}\"", s.replace('"', "\"\""));
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
