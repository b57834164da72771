//! Divergent geodesics on the modular ray `PGL_2(F_q[Y]) \ T_{q+1}`.
//!
//! A continued fraction expansion `[a_1, ..., a_k]` with digit degrees
//! `d_i` gives a compact core whose footpoints climb the ray to height
//! `d_i` and back, once per digit. Everything here works with those
//! height itineraries and with end codes read from a base vertex of the
//! `(q+1)`-regular tree.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::ffpoly::{CFExpansion, PolyError, PrimeField};
use crate::stats::{deterministic_sum, Cell, CellHistogram, CountSeries, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("empty expansion")]
    EmptyExpansion,
    #[error("invalid height profile: {0}")]
    InvalidProfile(String),
    #[error("invalid end code: {0}")]
    InvalidEndCode(String),
    #[error("identical ends")]
    IdenticalEnds,
    #[error("Claim hypothesis violated")]
    ClaimHypothesisViolated,
    #[error("empty window")]
    EmptyWindow,
    #[error("complexity {0} must be even and at least 2")]
    InvalidComplexity(u32),
    #[error("no tabulated target for q = {q}, h_max = {h_max}")]
    TargetNotTabulated { q: u32, h_max: u32 },
    #[error("count overflow")]
    Overflow,
    #[error("trees over different fields")]
    FieldMismatch,
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Critical exponent `ln q` and the two derived constants of the lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConstants {
    pub q: u32,
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl TreeConstants {
    pub fn new(field: PrimeField) -> Self {
        let q = field.modulus();
        let delta = (q as f64).ln();
        TreeConstants {
            q,
            delta,
            delta1: 1.0 - (-delta).exp(),
            delta2: 1.0 - (-2.0 * delta).exp(),
        }
    }
}

/// Heights `h_0, ..., h_n` of the footpoints of a compact core.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeightProfile {
    heights: Vec<u32>,
}

impl HeightProfile {
    pub fn new(heights: Vec<u32>) -> Result<Self, TreeError> {
        let bad = |m: &str| Err(TreeError::InvalidProfile(m.to_string()));
        if heights.len() < 3 {
            return bad("needs at least three heights");
        }
        if heights[0] != 0 || heights[heights.len() - 1] != 0 {
            return bad("must start and end at height 0");
        }
        let mut rising = true;
        for w in heights.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.abs_diff(b) != 1 {
                return bad("consecutive heights must differ by 1");
            }
            if a == 0 {
                rising = true;
            } else if b < a {
                rising = false;
            } else if !rising {
                return bad("excursions must be unimodal");
            }
        }
        Ok(HeightProfile { heights })
    }

    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    /// `n`, the number of unit steps.
    pub fn len(&self) -> usize {
        self.heights.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Peak heights of the excursions, in order.
    pub fn peaks(&self) -> Vec<u32> {
        let h = &self.heights;
        (1..h.len() - 1)
            .filter(|&t| h[t] > h[t - 1] && h[t] > h[t + 1])
            .map(|t| h[t])
            .collect()
    }
}

impl fmt::Display for HeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.heights.iter().map(|h| h.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for HeightProfile {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, TreeError> {
        let heights = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| TreeError::InvalidProfile(format!("bad height {p:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        HeightProfile::new(heights)
    }
}

fn excursions(peaks: &[usize]) -> Vec<u32> {
    let mut h = vec![0u32];
    for &d in peaks {
        h.extend((1..=d as u32).chain((0..d as u32).rev()));
    }
    h
}

pub fn height_profile(e: &CFExpansion) -> Result<HeightProfile, TreeError> {
    if e.is_empty() {
        return Err(TreeError::EmptyExpansion);
    }
    HeightProfile::new(excursions(&e.shape()))
}

/// Unit atoms `(t, h_t)` for `t = 0..=n`.
pub fn discrete_lebesgue(pr: &HeightProfile) -> Vec<(u32, u32)> {
    pr.heights.iter().enumerate().map(|(t, &h)| (t as u32, h)).collect()
}

pub fn even_time_heights(pr: &HeightProfile) -> Vec<u32> {
    pr.heights.iter().step_by(2).copied().collect()
}

/// `N(n)`: expansions of complexity at most `n`, exactly.
pub fn counting_tree_exact(q: PrimeField, n_grid: &[u32]) -> Result<Vec<(u32, u128)>, TreeError> {
    let q = q.modulus() as u128;
    n_grid
        .iter()
        .map(|&n| {
            if n % 2 != 0 {
                return Err(TreeError::InvalidComplexity(n));
            }
            let mut total = 0u128;
            for s in 1..=n / 2 {
                let term = q
                    .checked_pow(2 * s - 1)
                    .and_then(|p| p.checked_mul(q - 1))
                    .ok_or(TreeError::Overflow)?;
                total = total.checked_add(term).ok_or(TreeError::Overflow)?;
            }
            Ok((n, total))
        })
        .collect()
}

pub fn counting_series_tree(q: PrimeField, n_grid: &[u32]) -> Result<CountSeries, TreeError> {
    let pts = counting_tree_exact(q, n_grid)?
        .into_iter()
        .map(|(n, c)| (n as f64, c as f64))
        .collect();
    Ok(CountSeries::new(pts)?)
}

/// Nonnegative weights on ray heights.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDistribution {
    weights: BTreeMap<u32, f64>,
}

impl RayDistribution {
    pub fn new(weights: BTreeMap<u32, f64>) -> Result<Self, TreeError> {
        if weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TreeError::Stats(StatsError::InvalidHistogram(
                "weights must be finite and nonnegative".into(),
            )));
        }
        if deterministic_sum(weights.values().copied()) <= 0.0 {
            return Err(TreeError::EmptyWindow);
        }
        Ok(RayDistribution { weights })
    }

    pub fn weights(&self) -> &BTreeMap<u32, f64> {
        &self.weights
    }

    pub fn get(&self, h: u32) -> f64 {
        self.weights.get(&h).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        deterministic_sum(self.weights.values().copied())
    }
}

/// Total variation between two distributions on the union of supports.
pub fn ray_total_variation(a: &RayDistribution, b: &RayDistribution) -> Result<f64, TreeError> {
    let mut hs: Vec<u32> = a.weights.keys().chain(b.weights.keys()).copied().collect();
    hs.sort_unstable();
    hs.dedup();
    let cells = hs
        .into_iter()
        .map(|h| Cell {
            id: h.to_string(),
            empirical: a.get(h),
            target: b.get(h),
        })
        .collect();
    Ok(crate::stats::total_variation(&CellHistogram::new(cells)?)?)
}

/// Per-tuple weighting of the empirical accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Every expansion counts once.
    #[default]
    Uniform,
    /// Each expansion counts `shape_count_formula / shape_count` for its
    /// shape, so every shape of complexity `n` totals `(q-1) q^{n/2}`.
    ShapeFormula,
}

/// Even-time sample counts by height, summed over all expansions of
/// complexity at most `n_max`. Exact; `ShapeFormula` counts are scaled by
/// the common factor `(q-1)^{-1}`.
pub fn even_height_counts(
    q: PrimeField,
    n_max: u32,
    weighting: Weighting,
) -> Result<BTreeMap<u32, u128>, TreeError> {
    if n_max < 2 || !n_max.is_multiple_of(2) {
        return Err(TreeError::InvalidComplexity(n_max));
    }
    let s_max = (n_max / 2) as usize;
    let qq = q.modulus() as u128;
    let part = |d: usize| -> Result<u128, TreeError> {
        let p = qq.checked_pow(d as u32).ok_or(TreeError::Overflow)?;
        match weighting {
            Weighting::Uniform => p.checked_mul(qq - 1).ok_or(TreeError::Overflow),
            Weighting::ShapeFormula => Ok(p),
        }
    };
    let mul = |a: u128, b: u128| a.checked_mul(b).ok_or(TreeError::Overflow);
    let add = |a: &mut u128, b: u128| -> Result<(), TreeError> {
        *a = a.checked_add(b).ok_or(TreeError::Overflow)?;
        Ok(())
    };
    // tuples[s]: weighted number of tuples of total degree s;
    // samples[s][h]: their even-time samples at height h
    let mut tuples = vec![0u128; s_max + 1];
    let mut samples: Vec<Vec<u128>> = vec![vec![0u128; s_max + 1]; s_max + 1];
    tuples[0] = 1;
    samples[0][0] = 1;
    for s in 1..=s_max {
        for d in 1..=s {
            let w = part(d)?;
            let rest = tuples[s - d];
            add(&mut tuples[s], mul(w, rest)?)?;
            // first excursion: its starting 0 and its interior even heights
            add(&mut samples[s][0], mul(w, rest)?)?;
            for h in (2..=d).step_by(2) {
                let c = if h < d { 2 } else { 1 };
                add(&mut samples[s][h], mul(mul(w, c)?, rest)?)?;
            }
            for h in 0..=s - d {
                let v = mul(w, samples[s - d][h])?;
                add(&mut samples[s][h], v)?;
            }
        }
    }
    let mut out = BTreeMap::new();
    for row in &samples[1..] {
        for (h, &c) in row.iter().enumerate() {
            if c > 0 {
                add(out.entry(h as u32).or_insert(0), c)?;
            }
        }
    }
    Ok(out)
}

/// Empirical even-time height distribution over all expansions with
/// complexity at most `n_max`, normalized on the window `h <= h_max`.
pub fn empirical_height_distribution(
    q: PrimeField,
    n_max: u32,
    h_max: u32,
) -> Result<RayDistribution, TreeError> {
    empirical_height_distribution_weighted(q, n_max, h_max, Weighting::Uniform)
}

pub fn empirical_height_distribution_weighted(
    q: PrimeField,
    n_max: u32,
    h_max: u32,
    weighting: Weighting,
) -> Result<RayDistribution, TreeError> {
    let counts = even_height_counts(q, n_max, weighting)?;
    let window: Vec<(u32, u128)> = counts.into_iter().filter(|&(h, _)| h <= h_max).collect();
    let total: u128 = window.iter().map(|p| p.1).sum();
    if total == 0 {
        return Err(TreeError::EmptyWindow);
    }
    let weights = window
        .into_iter()
        .map(|(h, c)| (h, ratio_u128(c, total)))
        .collect();
    RayDistribution::new(weights)
}

fn ratio_u128(a: u128, b: u128) -> f64 {
    // the integer part is exact in f64 when both fit in 53 bits; otherwise
    // divide as big integers scaled to keep 64 significant bits
    if a < (1 << 53) && b < (1 << 53) {
        return a as f64 / b as f64;
    }
    let shift = 128 - b.leading_zeros() as i32 - 64;
    let scale = shift.max(0) as u32;
    ((a >> scale) as f64) / ((b >> scale) as f64)
}

const RAY_TARGET_CSV: &str = include_str!("../data/ray_target.csv");

/// Unnormalized limiting weights `(h, w_h)` for `q`, from the checked-in
/// table produced by `scripts/derive_ray_target.py`.
pub fn tabulated_ray_weights(q: PrimeField) -> Vec<(u32, f64)> {
    RAY_TARGET_CSV
        .lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 || f[0].parse::<u32>().ok()? != q.modulus() {
                return None;
            }
            let num: BigUint = f[2].parse().ok()?;
            let den: BigUint = f[3].parse().ok()?;
            Some((f[1].parse().ok()?, big_ratio(&num, &den)))
        })
        .collect()
}

fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    let n = num.to_f64().unwrap_or(f64::INFINITY);
    let d = den.to_f64().unwrap_or(f64::INFINITY);
    n / d
}

/// Limiting even-height distribution normalized on `h <= h_max`. The limit
/// does not depend on `n_max`; it is accepted for symmetry with
/// [`empirical_height_distribution`].
pub fn bm_height_target(q: PrimeField, n_max: u32, h_max: u32) -> Result<RayDistribution, TreeError> {
    if n_max < 2 || !n_max.is_multiple_of(2) {
        return Err(TreeError::InvalidComplexity(n_max));
    }
    let table = tabulated_ray_weights(q);
    let top = table.iter().map(|p| p.0).max();
    if top.is_none_or(|t| t < h_max - h_max % 2) {
        return Err(TreeError::TargetNotTabulated {
            q: q.modulus(),
            h_max,
        });
    }
    let window: Vec<(u32, f64)> = table.into_iter().filter(|p| p.0 <= h_max).collect();
    let total = deterministic_sum(window.iter().map(|p| p.1));
    RayDistribution::new(window.into_iter().map(|(h, w)| (h, w / total)).collect())
}

/// A point at infinity of the tree, as the labels of the non-backtracking
/// path from the base vertex: the first label picks one of `q + 1`
/// neighbours, later labels one of the `q` forward neighbours. The code
/// continues with label 0 forever after the stored labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EndCode {
    q: u32,
    labels: Vec<u32>,
}

impl EndCode {
    pub fn new(q: PrimeField, mut labels: Vec<u32>) -> Result<Self, TreeError> {
        let q = q.modulus();
        for (i, &l) in labels.iter().enumerate() {
            let bound = if i == 0 { q + 1 } else { q };
            if l >= bound {
                return Err(TreeError::InvalidEndCode(format!(
                    "label {l} at position {i} must be below {bound}"
                )));
            }
        }
        while labels.last() == Some(&0) {
            labels.pop();
        }
        Ok(EndCode { q, labels })
    }

    /// Comma-separated labels; the empty string is the all-zero end.
    pub fn parse(s: &str, q: PrimeField) -> Result<Self, TreeError> {
        let labels = if s.trim().is_empty() {
            Vec::new()
        } else {
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u32>()
                        .map_err(|_| TreeError::InvalidEndCode(format!("bad label {p:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        EndCode::new(q, labels)
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    /// The stored labels, without the implicit zero tail.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels.get(i).copied().unwrap_or(0)
    }

    pub fn prefix(&self, n: usize) -> Vec<u32> {
        (0..n).map(|i| self.label(i)).collect()
    }

    /// Length of the common initial path, `None` for identical ends.
    pub fn common_prefix(&self, other: &EndCode) -> Option<usize> {
        let n = self.labels.len().max(other.labels.len());
        (0..n).find(|&i| self.label(i) != other.label(i))
    }
}

impl fmt::Display for EndCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels.iter().map(|h| h.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

pub fn visual_distance(a: &EndCode, b: &EndCode) -> Result<f64, TreeError> {
    if a.q != b.q {
        return Err(TreeError::FieldMismatch);
    }
    let m = a.common_prefix(b).ok_or(TreeError::IdenticalEnds)?;
    Ok((-(m as f64)).exp())
}

/// Geodesic line from `backward` to `forward`, parametrized so that time
/// `hopf_time` sits at the point of the line closest to the base vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLineSpec {
    backward: EndCode,
    forward: EndCode,
    hopf_time: i64,
    closest: usize,
}

impl TreeLineSpec {
    pub fn new(backward: EndCode, forward: EndCode, hopf_time: i64) -> Result<Self, TreeError> {
        if backward.q != forward.q {
            return Err(TreeError::FieldMismatch);
        }
        let closest = backward
            .common_prefix(&forward)
            .ok_or(TreeError::IdenticalEnds)?;
        Ok(TreeLineSpec {
            backward,
            forward,
            hopf_time,
            closest,
        })
    }

    pub fn backward(&self) -> &EndCode {
        &self.backward
    }

    pub fn forward(&self) -> &EndCode {
        &self.forward
    }

    pub fn hopf_time(&self) -> i64 {
        self.hopf_time
    }

    /// Distance from the base vertex to the line.
    pub fn depth(&self) -> usize {
        self.closest
    }

    /// The vertex at integer time `t`.
    pub fn vertex_at(&self, t: i64) -> Vec<u32> {
        let u = t - self.hopf_time;
        if u >= 0 {
            self.forward.prefix(self.closest + u as usize)
        } else {
            self.backward.prefix(self.closest + u.unsigned_abs() as usize)
        }
    }

    fn horizon(&self) -> i64 {
        let code = self.backward.labels.len().max(self.forward.labels.len()) as i64;
        self.hopf_time.abs() + self.closest as i64 + code
    }
}

/// A line followed on `[start, end]` and frozen at its endpoints outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneralizedGeodesic {
    pub line: TreeLineSpec,
    pub start: Option<i64>,
    pub end: Option<i64>,
}

impl GeneralizedGeodesic {
    pub fn new(line: TreeLineSpec, start: Option<i64>, end: Option<i64>) -> Result<Self, TreeError> {
        if let (Some(a), Some(b)) = (start, end) {
            if a > b {
                return Err(TreeError::InvalidEndCode(format!("interval [{a}, {b}] is empty")));
            }
        }
        Ok(GeneralizedGeodesic { line, start, end })
    }

    pub fn full(line: TreeLineSpec) -> Self {
        GeneralizedGeodesic {
            line,
            start: None,
            end: None,
        }
    }

    /// Position at time `j / 2` as the endpoints of the edge containing it
    /// (equal endpoints for a vertex).
    fn position_half(&self, j: i64) -> (Vec<u32>, Vec<u32>) {
        let mut j = j;
        if let Some(a) = self.start {
            j = j.max(2 * a);
        }
        if let Some(b) = self.end {
            j = j.min(2 * b);
        }
        if j % 2 == 0 {
            let v = self.line.vertex_at(j / 2);
            (v.clone(), v)
        } else {
            let lo = (j - 1) / 2;
            (self.line.vertex_at(lo), self.line.vertex_at(lo + 1))
        }
    }

    fn horizon(&self) -> i64 {
        let clamp = self.start.map_or(0, i64::abs).max(self.end.map_or(0, i64::abs));
        self.line.horizon().max(clamp)
    }
}

fn vertex_distance(a: &[u32], b: &[u32]) -> i64 {
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    (a.len() + b.len() - 2 * common) as i64
}

/// Four times the distance between two points given as edges (or vertices).
fn quad_distance(p: &(Vec<u32>, Vec<u32>), r: &(Vec<u32>, Vec<u32>)) -> i64 {
    let same_edge = (p.0 == r.0 && p.1 == r.1) || (p.0 == r.1 && p.1 == r.0);
    if same_edge {
        return 0;
    }
    // the distance from an edge midpoint to any point off that open edge is
    // the mean of the distances from the two endpoints
    vertex_distance(&p.0, &r.0)
        + vertex_distance(&p.0, &r.1)
        + vertex_distance(&p.1, &r.0)
        + vertex_distance(&p.1, &r.1)
}

/// `∫ f e^{-2t}` over `[a, b]`, `0 <= a < b`, for `f` affine with
/// `f(a) = fa`, `f(b) = fb`.
fn affine_against_decay(a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    let slope = (fb - fa) / (b - a);
    (-2.0 * a).exp() * (fa / 2.0 + slope / 4.0) - (-2.0 * b).exp() * (fb / 2.0 + slope / 4.0)
}

/// `∫ d(l1(t), l2(t)) e^{-2|t|} dt` over the real line, exactly: the
/// integrand is affine between consecutive half-integers and affine on
/// both tails beyond the horizon.
pub fn bl_distance(l1: &GeneralizedGeodesic, l2: &GeneralizedGeodesic) -> Result<f64, TreeError> {
    if l1.line.forward.q != l2.line.forward.q {
        return Err(TreeError::FieldMismatch);
    }
    let h = l1.horizon().max(l2.horizon()) + 2;
    let dist = |j: i64| quad_distance(&l1.position_half(j), &l2.position_half(j)) as f64 / 4.0;
    let values: Vec<f64> = (-2 * h - 2..=2 * h + 2).map(dist).collect();
    let at = |j: i64| values[(j + 2 * h + 2) as usize];
    let mut terms = Vec::with_capacity(4 * h as usize + 2);
    for j in 0..2 * h {
        let (a, b) = (j as f64 / 2.0, (j + 1) as f64 / 2.0);
        terms.push(affine_against_decay(a, b, at(j), at(j + 1)));
        terms.push(affine_against_decay(a, b, at(-j), at(-j - 1)));
    }
    let hf = h as f64;
    for sign in [1, -1] {
        let (f_h, f_next) = (at(sign * 2 * h), at(sign * (2 * h + 2)));
        let slope = f_next - f_h;
        terms.push((-2.0 * hf).exp() * (f_h / 2.0 + slope / 4.0));
    }
    Ok(deterministic_sum(terms))
}

/// Both sides of the identity `d(l, l') = d_{x0}(eta, eta')^2 / 2` for the
/// lines `(eta, xi, 0)` and `(eta', xi, 0)` through the base vertex.
pub fn step3_identity_check(
    eta: &EndCode,
    eta2: &EndCode,
    xi: &EndCode,
) -> Result<(f64, f64), TreeError> {
    let sep = eta.common_prefix(eta2).ok_or(TreeError::IdenticalEnds)?;
    let through_base = |e: &EndCode| e.common_prefix(xi) == Some(0);
    if sep == 0 || !through_base(eta) || !through_base(eta2) {
        return Err(TreeError::ClaimHypothesisViolated);
    }
    let l1 = GeneralizedGeodesic::full(TreeLineSpec::new(eta.clone(), xi.clone(), 0)?);
    let l2 = GeneralizedGeodesic::full(TreeLineSpec::new(eta2.clone(), xi.clone(), 0)?);
    let lhs = bl_distance(&l1, &l2)?;
    let rhs = 0.5 * visual_distance(eta, eta2)?.powi(2);
    Ok((lhs, rhs))
}

/// Distance between a geodesic ray frozen after time 0 and the same ray
/// also frozen before time `-depth`.
pub fn ray_extension_distance(line: &TreeLineSpec, depth: i64) -> Result<f64, TreeError> {
    let ray = GeneralizedGeodesic::new(line.clone(), None, Some(0))?;
    let core = GeneralizedGeodesic::new(line.clone(), Some(-depth), Some(0))?;
    bl_distance(&ray, &core)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeGap {
    pub full: f64,
    pub core: f64,
}

/// Sums of `f` over the core atoms and over the core plus the two cusp
/// tails of length `depth`. `f[h]` is the value at height `h`; heights
/// beyond the slice are outside the support.
pub fn lemma31_gap_tree(pr: &HeightProfile, depth: u32, f: &[f64]) -> TreeGap {
    let val = |h: u32| {
        if h <= depth {
            f.get(h as usize).copied().unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let core_terms: Vec<f64> = pr.heights.iter().map(|&h| val(h)).collect();
    let tails = (1..=depth).flat_map(|h| [val(h), val(h)]);
    TreeGap {
        full: deterministic_sum(core_terms.iter().copied().chain(tails)),
        core: deterministic_sum(core_terms),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffpoly::{for_each_expansion, RationalFunction};
    use proptest::prelude::*;

    fn f(q: u32) -> PrimeField {
        PrimeField::new(q).unwrap()
    }

    fn end(q: u32, labels: &[u32]) -> EndCode {
        EndCode::new(f(q), labels.to_vec()).unwrap()
    }

    fn prof(s: &str) -> HeightProfile {
        s.parse().unwrap()
    }

    // Heights along the geodesic from infinity to xi, read off balls of the
    // Bruhat-Tits tree of F_q((1/Y)): the vertex B(a, q^k) is reduced by
    // polynomial translations and inversion until it is B(0, q^j).
    fn ball_height(a: &RationalFunction, k: i64) -> i64 {
        let mut a = a.fractional_part();
        let mut k = k;
        loop {
            if k >= 0 {
                return k;
            }
            let num = a.numerator();
            if num.is_zero() {
                return -k;
            }
            let abs = num.degree().finite().unwrap() as i64
                - a.denominator().degree().finite().unwrap() as i64;
            if abs <= k {
                return -k;
            }
            // |a| = q^abs with k < abs < 0
            let inv = RationalFunction::new(a.denominator().clone(), num.clone()).unwrap();
            k -= 2 * abs;
            a = inv.fractional_part();
        }
    }

    fn lattice_heights(e: &CFExpansion, steps: usize) -> Vec<i64> {
        let xi = crate::ffpoly::cf_eval(e);
        (0..steps as i64).map(|t| ball_height(&xi, -t)).collect()
    }

    #[test]
    fn profile_examples_match_lattice_model() {
        let q = f(2);
        for (s, want) in [("1,1", "0,1,0"), ("1,1;1,1", "0,1,0,1,0"), ("1,1,1", "0,1,2,1,0")] {
            let e = CFExpansion::parse(s, q).unwrap();
            assert_eq!(height_profile(&e).unwrap(), prof(want));
        }
        assert_eq!(
            height_profile(&CFExpansion::new(q, vec![]).unwrap()).unwrap_err(),
            TreeError::EmptyExpansion
        );
    }

    #[test]
    fn lattice_model_agrees_exhaustively() {
        for qv in [2, 3] {
            let q = f(qv);
            let s_max = if qv == 2 { 5 } else { 3 };
            for_each_expansion(q, s_max, |digits| {
                let e = CFExpansion::new(q, digits.to_vec()).unwrap();
                let pr = height_profile(&e).unwrap();
                let n = pr.len();
                let lat = lattice_heights(&e, n + 4);
                let want: Vec<i64> = pr.heights().iter().map(|&h| h as i64).collect();
                assert_eq!(&lat[..=n], &want[..], "{e}");
                // past the core the geodesic climbs into the cusp
                assert!(lat[n..].windows(2).all(|w| w[1] == w[0] + 1), "{e}");
            });
        }
    }

    #[test]
    fn profile_invariants() {
        let q = f(2);
        for_each_expansion(q, 6, |digits| {
            let e = CFExpansion::new(q, digits.to_vec()).unwrap();
            let pr = height_profile(&e).unwrap();
            assert_eq!(pr.len() as u32, e.complexity().unwrap());
            let peaks: Vec<u32> = e.shape().iter().map(|&d| d as u32).collect();
            assert_eq!(pr.peaks(), peaks);
            assert_eq!(pr.heights().iter().max(), peaks.iter().max());
            assert!(HeightProfile::new(pr.heights().to_vec()).is_ok());
        });
    }

    #[test]
    fn profile_validation() {
        for bad in ["0", "0,1", "1,0,1", "0,2,0", "0,1,2,1,2,1,0", "0,1,1,0", "0,x,0"] {
            assert!(bad.parse::<HeightProfile>().is_err(), "{bad}");
        }
        assert_eq!(prof("0,1,2,1,0,1,0").to_string(), "0,1,2,1,0,1,0");
    }

    #[test]
    fn lebesgue_and_even_times() {
        assert_eq!(discrete_lebesgue(&prof("0,1,0")).len(), 3);
        let mut hs: Vec<u32> = discrete_lebesgue(&prof("0,1,2,1,0")).iter().map(|a| a.1).collect();
        hs.sort_unstable();
        assert_eq!(hs, vec![0, 0, 1, 1, 2]);
        assert_eq!(even_time_heights(&prof("0,1,0")), vec![0, 0]);
        assert_eq!(even_time_heights(&prof("0,1,2,1,0")), vec![0, 2, 0]);
        let q = f(2);
        for_each_expansion(q, 5, |digits| {
            let e = CFExpansion::new(q, digits.to_vec()).unwrap();
            let pr = height_profile(&e).unwrap();
            assert_eq!(discrete_lebesgue(&pr).len() - 1, pr.len());
            assert!(even_time_heights(&pr).iter().all(|h| h % 2 == 0));
        });
    }

    #[test]
    fn constants() {
        let c = TreeConstants::new(f(3));
        assert!((c.delta - 3f64.ln()).abs() < 1e-15);
        assert!((c.delta2 - (1.0 - (1.0 - c.delta1).powi(2))).abs() < 1e-15);
    }

    #[test]
    fn tree_counting_examples() {
        let c = counting_tree_exact(f(2), &[2, 4]).unwrap();
        assert_eq!(c, vec![(2, 2), (4, 10)]);
        assert!(counting_tree_exact(f(2), &[3]).is_err());
        for qv in [2, 3] {
            let q = f(qv);
            let mut by_n = BTreeMap::new();
            for_each_expansion(q, 5, |digits| {
                let n: usize = digits.iter().map(|p| 2 * p.degree().finite().unwrap()).sum();
                *by_n.entry(n as u32).or_insert(0u128) += 1;
            });
            let mut cum = 0;
            for n in (2..=10).step_by(2) {
                cum += by_n[&n];
                assert_eq!(counting_tree_exact(q, &[n]).unwrap()[0].1, cum);
            }
        }
        let c = counting_tree_exact(f(2), &[24, 26]).unwrap();
        assert!((c[1].1 as f64 / c[0].1 as f64 - 4.0).abs() < 1e-6);
    }

    fn brute_force_counts(q: PrimeField, n_max: u32) -> BTreeMap<u32, u128> {
        let mut out = BTreeMap::new();
        for_each_expansion(q, (n_max / 2) as usize, |digits| {
            let e = CFExpansion::new(q, digits.to_vec()).unwrap();
            for h in even_time_heights(&height_profile(&e).unwrap()) {
                *out.entry(h).or_insert(0u128) += 1;
            }
        });
        out
    }

    #[test]
    fn height_counts_match_enumeration() {
        for (qv, n) in [(2, 2), (2, 4), (2, 12), (3, 8), (5, 6)] {
            let q = f(qv);
            assert_eq!(
                even_height_counts(q, n, Weighting::Uniform).unwrap(),
                brute_force_counts(q, n),
                "q={qv} n={n}"
            );
        }
    }

    #[test]
    fn shape_weighting_matches_enumeration() {
        let q = f(3);
        let mut want = BTreeMap::new();
        for_each_expansion(q, 4, |digits| {
            let e = CFExpansion::new(q, digits.to_vec()).unwrap();
            // weight (q-1)^{1-k}, scaled by (q-1)^{-1}: 2^{-k} at q = 3,
            // tracked as an integer multiple of 2^{-4}
            let w = 1u128 << (4 - e.digits().len());
            for h in even_time_heights(&height_profile(&e).unwrap()) {
                *want.entry(h).or_insert(0u128) += w;
            }
        });
        let got = even_height_counts(q, 8, Weighting::ShapeFormula).unwrap();
        assert_eq!(got.len(), want.len());
        for (h, c) in got {
            assert_eq!(c * 16, want[&h], "h={h}");
        }
    }

    #[test]
    fn empirical_examples() {
        let d = empirical_height_distribution(f(2), 2, 4).unwrap();
        assert_eq!(d.weights().len(), 1);
        assert_eq!(d.get(0), 1.0);
        let d = empirical_height_distribution(f(2), 4, 2).unwrap();
        assert!((d.get(0) - 24.0 / 28.0).abs() < 1e-15);
        assert!((d.get(2) - 4.0 / 28.0).abs() < 1e-15);
        let d = empirical_height_distribution(f(3), 12, 20).unwrap();
        assert!(d.weights().keys().all(|h| h % 2 == 0));
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!(empirical_height_distribution(f(2), 3, 4).is_err());
    }

    #[test]
    fn target_examples() {
        let t = bm_height_target(f(2), 24, 8).unwrap();
        assert!(t.get(0) > t.get(2) && t.get(2) > t.get(4));
        assert!((t.total() - 1.0).abs() < 1e-15);
        for qv in [2u32, 3, 5] {
            let w = tabulated_ray_weights(f(qv));
            for p in w.windows(2).skip(1) {
                let r = p[1].1 / p[0].1;
                assert!((r * (qv * qv) as f64 - 1.0).abs() < 1e-12);
            }
        }
        assert!(bm_height_target(f(2), 24, 200).is_err());
        assert!(bm_height_target(f(37), 24, 8).is_err());
    }

    // Shares of the empirical distribution approach the tabulated target
    // like 1/N; a floating DP carried to large N with one Richardson step
    // gives an independent check of the table.
    fn float_shares(q: u32, s_max: usize, h_max: usize) -> Vec<f64> {
        let qf = q as f64;
        // counts scaled by q^{-2s}
        let w: Vec<f64> = (0..=s_max).map(|d| (qf - 1.0) * qf.powi(-(d as i32))).collect();
        let mut tuples = vec![0.0; s_max + 1];
        let mut samples = vec![vec![0.0; h_max + 1]; s_max + 1];
        tuples[0] = 1.0;
        samples[0][0] = 1.0;
        for s in 1..=s_max {
            for d in 1..=s {
                let scale = w[d];
                tuples[s] += scale * tuples[s - d];
                samples[s][0] += scale * tuples[s - d];
                for h in (2..=d.min(h_max)).step_by(2) {
                    samples[s][h] += scale * if h < d { 2.0 } else { 1.0 } * tuples[s - d];
                }
                for h in 0..=h_max {
                    samples[s][h] += scale * samples[s - d][h];
                }
            }
        }
        let mut tot = vec![0.0; h_max + 1];
        for (s, row) in samples.iter().enumerate().skip(1) {
            for h in 0..=h_max {
                tot[h] += row[h] * qf.powi(2 * (s as i32 - s_max as i32));
            }
        }
        let z: f64 = tot.iter().sum();
        tot.iter().map(|x| x / z).collect()
    }

    #[test]
    fn empirical_converges_to_tabulated_target() {
        for q in [2u32, 3] {
            let a = float_shares(q, 300, 8);
            let b = float_shares(q, 600, 8);
            let t = bm_height_target(f(q), 2, 8).unwrap();
            for h in (0..=8).step_by(2) {
                let r = 2.0 * b[h] - a[h];
                assert!((r - t.get(h as u32)).abs() < 1e-4, "q={q} h={h} {r} {}", t.get(h as u32));
            }
        }
        // the exact DP agrees with the float one where both apply
        let exact = empirical_height_distribution(f(2), 24, 8).unwrap();
        let float = float_shares(2, 12, 8);
        for h in (0..=8).step_by(2) {
            assert!((exact.get(h as u32) - float[h]).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_decreases_with_complexity() {
        let t = bm_height_target(f(2), 24, 8).unwrap();
        let tv = |n| ray_total_variation(&empirical_height_distribution(f(2), n, 8).unwrap(), &t).unwrap();
        assert!(tv(24) < tv(12));
    }

    #[test]
    fn end_codes() {
        assert!(EndCode::new(f(2), vec![3]).is_err());
        assert!(EndCode::new(f(2), vec![2, 2]).is_err());
        assert_eq!(end(2, &[1, 0, 0]), end(2, &[1]));
        assert_eq!(EndCode::parse("", f(2)).unwrap(), end(2, &[]));
        assert_eq!(EndCode::parse("2,1,0", f(2)).unwrap().to_string(), "2,1");
        assert!(EndCode::parse("1,,2", f(2)).is_err());
    }

    #[test]
    fn visual_distance_examples() {
        let (a, b) = (end(2, &[0, 1]), end(2, &[1, 1]));
        assert_eq!(visual_distance(&a, &b).unwrap(), 1.0);
        let (a, b) = (end(2, &[1, 0, 1, 1]), end(2, &[1, 0, 1, 0, 1]));
        assert_eq!(visual_distance(&a, &b).unwrap(), (-3f64).exp());
        assert_eq!(visual_distance(&b, &a).unwrap(), visual_distance(&a, &b).unwrap());
        assert_eq!(visual_distance(&a, &a).unwrap_err(), TreeError::IdenticalEnds);
    }

    #[test]
    fn line_parametrization() {
        let l = TreeLineSpec::new(end(2, &[1, 0, 1]), end(2, &[1, 1]), 5).unwrap();
        assert_eq!(l.depth(), 1);
        assert_eq!(l.vertex_at(5), vec![1]);
        assert_eq!(l.vertex_at(7), vec![1, 1, 0]);
        assert_eq!(l.vertex_at(3), vec![1, 0, 1]);
        assert!(TreeLineSpec::new(end(2, &[1]), end(2, &[1, 0]), 0).is_err());
    }

    fn sample_lines(q: u32) -> Vec<GeneralizedGeodesic> {
        let codes = [&[0u32, 1][..], &[1, 1, 0, 1], &[2], &[0, 0, 1], &[1, 0, 1], &[2, 1, 1]];
        let mut out = Vec::new();
        for (i, a) in codes.iter().enumerate() {
            for b in &codes[i + 1..] {
                for s in [-2, 0, 3] {
                    let line = TreeLineSpec::new(end(q, a), end(q, b), s).unwrap();
                    out.push(GeneralizedGeodesic::full(line.clone()));
                    out.push(GeneralizedGeodesic::new(line, Some(-1), Some(2)).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn bl_distance_is_a_metric() {
        let ls = sample_lines(2);
        let d: Vec<Vec<f64>> = ls
            .iter()
            .map(|a| ls.iter().map(|b| bl_distance(a, b).unwrap()).collect())
            .collect();
        for i in 0..ls.len() {
            assert_eq!(d[i][i], 0.0);
            for j in 0..ls.len() {
                assert!((d[i][j] - d[j][i]).abs() < 1e-15);
                for k in (0..ls.len()).step_by(5) {
                    assert!(d[i][j] <= d[i][k] + d[k][j] + 1e-12);
                }
            }
        }
    }

    // midpoint rule on a fine grid, with the tails out to |t| = 40
    fn quadrature(l1: &GeneralizedGeodesic, l2: &GeneralizedGeodesic) -> f64 {
        let pos = |g: &GeneralizedGeodesic, t: f64| {
            let t = g.start.map_or(t, |a| t.max(a as f64));
            let t = g.end.map_or(t, |b| t.min(b as f64));
            let k = t.floor();
            (g.line.vertex_at(k as i64), g.line.vertex_at(k as i64 + 1), t - k)
        };
        // distance between points at fraction u, v along edges from a to b
        let dist = |p: (Vec<u32>, Vec<u32>, f64), r: (Vec<u32>, Vec<u32>, f64)| {
            let cands = [
                vertex_distance(&p.0, &r.0) as f64 + p.2 + r.2,
                vertex_distance(&p.0, &r.1) as f64 + p.2 + (1.0 - r.2),
                vertex_distance(&p.1, &r.0) as f64 + (1.0 - p.2) + r.2,
                vertex_distance(&p.1, &r.1) as f64 + (1.0 - p.2) + (1.0 - r.2),
            ];
            let same = p.0 == r.0 && p.1 == r.1;
            if same {
                (p.2 - r.2).abs()
            } else if p.0 == r.1 && p.1 == r.0 {
                (p.2 - (1.0 - r.2)).abs()
            } else {
                cands.iter().copied().fold(f64::INFINITY, f64::min)
            }
        };
        let n = 400_000;
        let hstep = 80.0 / n as f64;
        deterministic_sum((0..n).map(|i| {
            let t = -40.0 + (i as f64 + 0.5) * hstep;
            dist(pos(l1, t), pos(l2, t)) * (-2.0 * t.abs()).exp() * hstep
        }))
    }

    #[test]
    fn bl_distance_matches_quadrature() {
        let ls = sample_lines(3);
        for (i, j) in [(0, 7), (3, 12), (5, 30), (9, 41), (20, 21), (33, 2)] {
            let exact = bl_distance(&ls[i], &ls[j]).unwrap();
            let num = quadrature(&ls[i], &ls[j]);
            assert!((exact - num).abs() < 1e-6 * (1.0 + exact), "{i} {j}: {exact} vs {num}");
        }
    }

    #[test]
    fn base_vertex_identity_examples() {
        let xi = end(2, &[2]);
        for t in 1..=8usize {
            let mut a = vec![0; t];
            let mut b = vec![0; t];
            a.push(1);
            b.push(0);
            b.push(1);
            let (lhs, rhs) = step3_identity_check(&end(2, &a), &end(2, &b), &xi).unwrap();
            let want = 0.5 * (-2.0 * t as f64).exp();
            assert!((lhs - want).abs() < 1e-15 && (rhs - want).abs() < 1e-15, "{t}");
        }
        let err = step3_identity_check(&end(2, &[0]), &end(2, &[1]), &xi).unwrap_err();
        assert_eq!(err.to_string(), "Claim hypothesis violated");
        let err = step3_identity_check(&end(2, &[2, 1]), &end(2, &[2, 0, 1]), &xi).unwrap_err();
        assert_eq!(err, TreeError::ClaimHypothesisViolated);
    }

    #[test]
    fn ray_extension_rate_is_exact() {
        let line = TreeLineSpec::new(end(2, &[0, 1, 1]), end(2, &[1]), 0).unwrap();
        for d in 0..=6 {
            let v = ray_extension_distance(&line, d).unwrap();
            let c = v * (2.0 * d as f64).exp();
            assert!((c - 0.25).abs() < 1e-12, "d={d} C={c}");
        }
    }

    #[test]
    fn tree_gap_examples() {
        let pr = prof("0,1,2,1,0,1,0");
        let g = lemma31_gap_tree(&pr, 0, &[1.0]);
        assert_eq!(g.full, g.core);
        for a in 0..6u32 {
            let g = lemma31_gap_tree(&pr, a, &vec![1.0; a as usize + 1]);
            assert_eq!(g.full - g.core, 2.0 * a as f64);
        }
    }

    proptest! {
        #[test]
        fn tree_gap_bound(
            peaks in proptest::collection::vec(1usize..6, 1..5),
            a in 0u32..8,
            vals in proptest::collection::vec(-3.0f64..3.0, 8),
        ) {
            let pr = HeightProfile::new(excursions(&peaks)).unwrap();
            let f = &vals[..=a as usize];
            let g = lemma31_gap_tree(&pr, a, f);
            let sup = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!((g.full - g.core).abs() <= 2.0 * a as f64 * sup + 1e-12);
        }

        #[test]
        fn profile_text_roundtrip(peaks in proptest::collection::vec(1usize..8, 1..6)) {
            let pr = HeightProfile::new(excursions(&peaks)).unwrap();
            prop_assert_eq!(pr.to_string().parse::<HeightProfile>().unwrap(), pr.clone());
            let want: Vec<u32> = peaks.iter().map(|&d| d as u32).collect();
            prop_assert_eq!(pr.peaks(), want);
        }
    }
}
