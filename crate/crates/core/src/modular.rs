//! Divergent geodesics on the modular surface `PSL_2(Z) \ H^2`.
//!
//! The cusp neighbourhood is the orbit of the horoball `Im z >= 1`. A
//! divergent geodesic of positive complexity lifts to the vertical line
//! from `infinity` down to a rational `p/q` with `q >= 2`; it leaves the
//! horoball at infinity at height 1 and enters the horoball at `p/q`
//! (diameter `1/q^2`) at height `1/q^2`, so its complexity is `2 ln q`.
//! Classes are indexed by `p mod q` with `gcd(p, q) = 1`.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;
use num_integer::Integer;
use num_rational::Rational64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::stats::{deterministic_sum, Cell, CellHistogram, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("complexity zero class")]
    ComplexityZero,
    #[error("reduction did not converge")]
    ReductionDidNotConverge,
    #[error("cell not inside chart")]
    CellOutsideChart,
    #[error("no mass in window")]
    NoMassInWindow,
    #[error("support violation")]
    SupportViolation,
    #[error("invalid step {0}")]
    InvalidStep(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Reduced fraction `p/q`, canonical with `0 <= p < q`, or `0/1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalCusp {
    p: i64,
    q: i64,
}

impl RationalCusp {
    /// Canonical representative of the class of `p/q` under `z -> z + 1`.
    pub fn new(p: i64, q: i64) -> Result<Self, SurfaceError> {
        if q <= 0 {
            return Err(SurfaceError::Invalid(format!("denominator {q} must be positive")));
        }
        let g = p.gcd(&q);
        let (p, q) = (p / g, q / g);
        Ok(RationalCusp {
            p: p.rem_euclid(q),
            q,
        })
    }

    pub fn p(self) -> i64 {
        self.p
    }

    pub fn q(self) -> i64 {
        self.q
    }

    pub fn value(self) -> f64 {
        self.p as f64 / self.q as f64
    }

    /// Some `g` in `SL_2(Z)` with `g(infinity) = p/q`.
    pub fn carrier(self) -> MoebiusInt {
        // p*d - b*q = 1
        let e = self.p.extended_gcd(&self.q);
        debug_assert_eq!(e.gcd, 1);
        MoebiusInt::new(self.p, -e.y, self.q, e.x).expect("determinant one by construction")
    }
}

/// `+-(a b; c d)` in `PSL_2(Z)`.
#[derive(Debug, Clone, Copy, Eq)]
pub struct MoebiusInt {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl MoebiusInt {
    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self, SurfaceError> {
        if a as i128 * d as i128 - b as i128 * c as i128 != 1 {
            return Err(SurfaceError::Invalid(format!(
                "({a} {b}; {c} {d}) does not have determinant 1"
            )));
        }
        Ok(MoebiusInt { a, b, c, d })
    }

    pub const IDENTITY: MoebiusInt = MoebiusInt { a: 1, b: 0, c: 0, d: 1 };
    /// `z -> -1/z`.
    pub const S: MoebiusInt = MoebiusInt { a: 0, b: -1, c: 1, d: 0 };

    /// `z -> z + n`.
    pub fn translation(n: i64) -> Self {
        MoebiusInt { a: 1, b: n, c: 0, d: 1 }
    }

    pub fn inverse(self) -> Self {
        MoebiusInt {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn is_identity(self) -> bool {
        self == Self::IDENTITY
    }

    pub fn apply_point(self, z: Complex64) -> Complex64 {
        let (a, b, c, d) = (self.a as f64, self.b as f64, self.c as f64, self.d as f64);
        (z * a + b) / (z * c + d)
    }
}

impl PartialEq for MoebiusInt {
    fn eq(&self, o: &Self) -> bool {
        (self.a, self.b, self.c, self.d) == (o.a, o.b, o.c, o.d)
            || (self.a, self.b, self.c, self.d) == (-o.a, -o.b, -o.c, -o.d)
    }
}

impl std::hash::Hash for MoebiusInt {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        // hash the representative with a positive first nonzero entry
        let sign = if self.a < 0 || (self.a == 0 && self.b < 0) { -1 } else { 1 };
        (sign * self.a, sign * self.b, sign * self.c, sign * self.d).hash(state);
    }
}

impl Mul for MoebiusInt {
    type Output = MoebiusInt;

    /// `(self * rhs)(z) = self(rhs(z))`.
    fn mul(self, r: MoebiusInt) -> MoebiusInt {
        MoebiusInt {
            a: self.a * r.a + self.b * r.c,
            b: self.a * r.b + self.b * r.d,
            c: self.c * r.a + self.d * r.c,
            d: self.c * r.b + self.d * r.d,
        }
    }
}

/// Unit tangent vector at `x + iy`, direction angle `theta` in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTangentH {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub fn canonical_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    // rem_euclid lands in [0, 2pi); fold (pi, 2pi) down and keep pi itself
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

impl UnitTangentH {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self, SurfaceError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) || y <= 0.0 {
            return Err(SurfaceError::Invalid(format!(
                "({x}, {y}, {theta}) is not a unit tangent vector of H^2"
            )));
        }
        Ok(UnitTangentH {
            x,
            y,
            theta: canonical_angle(theta),
        })
    }

    pub fn point(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    /// Closed standard fundamental domain `|x| <= 1/2`, `|z| >= 1`.
    pub fn in_fundamental_domain(&self, tol: f64) -> bool {
        self.x >= -0.5 - tol && self.x <= 0.5 + tol && self.x * self.x + self.y * self.y >= 1.0 - tol
    }
}

/// Fixed constants of the modular surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceConstants {
    /// Entropy of the geodesic flow.
    pub h_m: f64,
    pub vol_m: f64,
    /// Liouville mass of the unit tangent bundle, `2 pi vol_m`.
    pub liouville_total: f64,
    /// Length of the horocycle bounding the cusp neighbourhood.
    pub horocycle_length: f64,
}

pub const SURFACE: SurfaceConstants = SurfaceConstants {
    h_m: 1.0,
    vol_m: PI / 3.0,
    liouville_total: 2.0 * PI * PI / 3.0,
    horocycle_length: 1.0,
};

/// A divergent geodesic class with its complexity and multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergentClassH {
    pub cusp: RationalCusp,
    pub tau: f64,
    pub multiplicity: Rational64,
}

impl DivergentClassH {
    pub fn new(cusp: RationalCusp) -> Result<Self, SurfaceError> {
        let (_, tau) = exit_entry_times(cusp)?;
        Ok(DivergentClassH {
            cusp,
            tau,
            multiplicity: multiplicity(cusp),
        })
    }
}

/// Horoball of the cusp family tangent to the real axis at `p/q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horoball {
    pub tangency: Rational64,
    pub diameter: Rational64,
}

pub fn horoball_at(cusp: RationalCusp) -> Horoball {
    Horoball {
        tangency: Rational64::new(cusp.p, cusp.q),
        diameter: Rational64::new(1, cusp.q * cusp.q),
    }
}

fn tau_of(q: i64) -> f64 {
    2.0 * (q as f64).ln()
}

/// Exit time from `Im z >= 1` and entry time into the horoball at `p/q` of
/// the vertical line parametrized with footpoint `(p/q, e^-t)`.
pub fn exit_entry_times(cusp: RationalCusp) -> Result<(f64, f64), SurfaceError> {
    if cusp.q < 2 {
        return Err(SurfaceError::ComplexityZero);
    }
    Ok((0.0, tau_of(cusp.q)))
}

/// `1/2` when the line `infinity <-> p/q` is swapped by the involution
/// `+-(p, -(p^2+1)/q; q, -p)`, which exists iff `q | p^2 + 1`; else `1`.
pub fn multiplicity(cusp: RationalCusp) -> Rational64 {
    let (p, q) = (cusp.p as i128, cusp.q as i128);
    if (p * p + 1) % q == 0 {
        Rational64::new(1, 2)
    } else {
        Rational64::from_integer(1)
    }
}

/// The orientation-reversing involution `p -> -p^-1 mod q` on classes.
pub fn reverse_orientation(cusp: RationalCusp) -> RationalCusp {
    if cusp.q == 1 {
        return cusp;
    }
    let e = cusp.p.extended_gcd(&cusp.q);
    RationalCusp {
        p: (-e.x).rem_euclid(cusp.q),
        q: cusp.q,
    }
}

/// Largest `q` with `2 ln q <= t`, computed with the same expression as
/// the stored complexities.
pub fn max_denominator(t: f64) -> i64 {
    if t.is_nan() || t < 0.0 {
        return 1;
    }
    let mut q = ((t / 2.0).exp().floor() as i64).max(1);
    while tau_of(q + 1) <= t {
        q += 1;
    }
    while q > 1 && tau_of(q) > t {
        q -= 1;
    }
    q
}

/// All classes of complexity at most `t`, ordered by `(q, p)`.
pub fn enumerate_classes(t: f64) -> Vec<DivergentClassH> {
    let qmax = max_denominator(t);
    (2..=qmax)
        .into_par_iter()
        .flat_map_iter(|q| {
            let tau = tau_of(q);
            (0..q).filter(move |p| p.gcd(&q) == 1).map(move |p| {
                let cusp = RationalCusp { p, q };
                DivergentClassH {
                    cusp,
                    tau,
                    multiplicity: multiplicity(cusp),
                }
            })
        })
        .collect()
}

/// Euler phi and `r(q) = #{p mod q : p^2 = -1 mod q}` for `q <= n`.
fn arithmetic_tables(n: usize) -> (Vec<i64>, Vec<i64>) {
    let mut spf = vec![0usize; n + 1];
    for i in 2..=n {
        if spf[i] == 0 {
            let mut j = i;
            while j <= n {
                if spf[j] == 0 {
                    spf[j] = i;
                }
                j += i;
            }
        }
    }
    let mut phi = vec![0i64; n + 1];
    let mut roots = vec![0i64; n + 1];
    if n >= 1 {
        phi[1] = 1;
        roots[1] = 1;
    }
    for m in 2..=n {
        let p = spf[m];
        let mut k = m;
        let mut e = 0;
        while k % p == 0 {
            k /= p;
            e += 1;
        }
        let pe = (m / k) as i64;
        let phi_pe = pe - pe / p as i64;
        // square roots of -1 modulo a prime power
        let r_pe = match (p, e) {
            (2, 1) => 1,
            (2, _) => 0,
            (p, _) if p % 4 == 1 => 2,
            _ => 0,
        };
        phi[m] = phi[k] * phi_pe;
        roots[m] = roots[k] * r_pe;
    }
    (phi, roots)
}

/// Exact multiplicity-weighted counts `N(T)` for every `T` in the grid.
pub fn counting_series_exact(t_grid: &[f64]) -> Vec<(f64, Rational64)> {
    let qmax = t_grid
        .iter()
        .copied()
        .map(max_denominator)
        .max()
        .unwrap_or(1)
        .max(1) as usize;
    let (phi, roots) = arithmetic_tables(qmax);
    // twice the cumulative count, so half multiplicities stay integral
    let mut twice = vec![0i64; qmax + 1];
    for q in 2..=qmax {
        twice[q] = twice[q - 1] + 2 * phi[q] - roots[q];
    }
    t_grid
        .iter()
        .map(|&t| {
            let q = max_denominator(t) as usize;
            (t, Rational64::new(twice[q], 2))
        })
        .collect()
}

pub fn counting_series(t_grid: &[f64]) -> Result<crate::stats::CountSeries, SurfaceError> {
    let pts = counting_series_exact(t_grid)
        .into_iter()
        .map(|(t, n)| (t, *n.numer() as f64 / *n.denom() as f64))
        .collect();
    Ok(crate::stats::CountSeries::new(pts)?)
}

pub fn moebius_apply(g: MoebiusInt, v: UnitTangentH) -> UnitTangentH {
    let (a, b, c, d) = (g.a as f64, g.b as f64, g.c as f64, g.d as f64);
    // fused forms keep cz + d accurate when c x is close to -d
    let w = Complex64::new(c.mul_add(v.x, d), c * v.y);
    let num = Complex64::new(a.mul_add(v.x, b), a * v.y);
    let n2 = w.norm_sqr();
    UnitTangentH {
        x: (num * w.conj()).re / n2,
        y: v.y / n2,
        theta: canonical_angle(v.theta - 2.0 * w.arg()),
    }
}

pub const MAX_REDUCTION_STEPS: usize = 10_000;

const CIRCLE_TIE: f64 = 1e-13;

/// Moves `v` into the standard fundamental domain: `x` in `[-1/2, 1/2)`,
/// `|z| >= 1`, and `x <= 0` on the unit circle. Returns the reduced vector
/// and the element `g` with `g v = v'`.
pub fn reduce_to_fundamental_domain(
    v: UnitTangentH,
) -> Result<(UnitTangentH, MoebiusInt), SurfaceError> {
    let g = reduction_element(v)?;
    let mut r = moebius_apply(g, v);
    if r.x >= 0.5 {
        r.x -= 1.0;
        return Ok((r, MoebiusInt::translation(-1) * g));
    }
    Ok((r, g))
}

/// The steps are tracked on a running copy; the final image is recomputed
/// from `v` in one application so rounding does not accumulate.
fn reduction_element(v: UnitTangentH) -> Result<MoebiusInt, SurfaceError> {
    let mut cur = v;
    let mut g = MoebiusInt::IDENTITY;
    for _ in 0..MAX_REDUCTION_STEPS {
        let n = (cur.x + 0.5).floor();
        if n != 0.0 {
            let t = MoebiusInt::translation(-(n as i64));
            cur = UnitTangentH {
                x: cur.x - n,
                ..cur
            };
            // guard the half-open interval against rounding
            if cur.x >= 0.5 {
                cur.x -= 1.0;
                g = MoebiusInt::translation(-1) * t * g;
            } else {
                g = t * g;
            }
        }
        let r2 = cur.x * cur.x + cur.y * cur.y;
        if r2 < 1.0 - CIRCLE_TIE || ((r2 - 1.0).abs() <= CIRCLE_TIE && cur.x > 0.0) {
            cur = moebius_apply(MoebiusInt::S, cur);
            g = MoebiusInt::S * g;
            continue;
        }
        return Ok(g);
    }
    Err(SurfaceError::ReductionDidNotConverge)
}

/// Point of the core of `cls` at time `t` (footpoint `(p/q, e^-t)`,
/// pointing down), before reduction.
pub fn core_vector(cls: &DivergentClassH, t: f64) -> UnitTangentH {
    UnitTangentH {
        x: cls.cusp.value(),
        y: (-t).exp(),
        theta: -PI / 2.0,
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn sample_count(tau: f64, dt: f64) -> usize {
    (tau / dt).floor() as usize + 1
}

/// Samples the compact core at `t = 0, dt, 2dt, ... <= tau`, each reduced
/// into the fundamental domain.
pub fn sample_core(cls: &DivergentClassH, dt: f64) -> Result<Vec<UnitTangentH>, SurfaceError> {
    if !positive_finite(dt) {
        return Err(SurfaceError::InvalidStep(dt));
    }
    if dt > cls.tau {
        return Err(SurfaceError::InvalidStep(dt));
    }
    (0..sample_count(cls.tau, dt))
        .map(|k| reduce_to_fundamental_domain(core_vector(cls, k as f64 * dt)).map(|r| r.0))
        .collect()
}

/// Box `[x1,x2] x [y1,y2] x [th1,th2]` in the `(x, y, theta)` chart; `y2`
/// may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub theta: (f64, f64),
}

/// Liouville mass `dx dy / y^2 dtheta` of the box intersected with the
/// closed fundamental domain (the part below the unit circle is clipped).
pub fn liouville_cell_mass(cell: &ChartBox) -> Result<f64, SurfaceError> {
    let (x1, x2) = cell.x;
    let (y1, y2) = cell.y;
    let (t1, t2) = cell.theta;
    let ok = x1.is_finite()
        && x2.is_finite()
        && (-0.5..=0.5).contains(&x1)
        && (-0.5..=0.5).contains(&x2)
        && x1 <= x2
        && y1.is_finite()
        && y1 > 0.0
        && y1 <= y2
        && t1.is_finite()
        && t2.is_finite()
        && t1 <= t2
        && t2 - t1 <= 2.0 * PI + 1e-12;
    if !ok {
        return Err(SurfaceError::CellOutsideChart);
    }
    let inv_y2 = if y2.is_infinite() { 0.0 } else { 1.0 / y2 };
    // breakpoints where the unit circle crosses y = y1 or y = y2
    let mut cuts = vec![x1, x2];
    for c in [y1, y2] {
        if c < 1.0 {
            let w = (1.0 - c * c).sqrt();
            for s in [-w, w] {
                if s > x1 && s < x2 {
                    cuts.push(s);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pieces = cuts.windows(2).map(|w| {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            return 0.0;
        }
        let m = 0.5 * (u + v);
        let circle = (1.0 - m * m).sqrt();
        if circle >= y2 {
            0.0
        } else if circle <= y1 {
            (1.0 / y1 - inv_y2) * (v - u)
        } else {
            (v.asin() - u.asin()) - inv_y2 * (v - u)
        }
    });
    Ok(deterministic_sum(pieces) * (t2 - t1))
}

/// Regular box grid over the window `{ y <= y_max }` of the fundamental
/// domain; `y` runs from `sqrt(3)/2`, the lowest point of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquiGrid {
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
    pub y_max: f64,
}

pub const Y_FLOOR: f64 = 0.866_025_403_784_438_6;

impl Default for EquiGrid {
    fn default() -> Self {
        EquiGrid {
            nx: 8,
            ny: 4,
            ntheta: 8,
            y_max: 2.0,
        }
    }
}

impl EquiGrid {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        if self.nx == 0 || self.ny == 0 || self.ntheta == 0 {
            return Err(SurfaceError::Invalid("grid dimensions must be positive".into()));
        }
        if !(self.y_max.is_finite() && self.y_max > Y_FLOOR) {
            return Err(SurfaceError::Invalid(format!(
                "y_max must exceed sqrt(3)/2, got {}",
                self.y_max
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (ix * self.ny + iy) * self.ntheta + it
    }

    pub fn cell_box(&self, ix: usize, iy: usize, it: usize) -> ChartBox {
        let xs = |i: usize| -0.5 + i as f64 / self.nx as f64;
        let ys = |i: usize| Y_FLOOR + (self.y_max - Y_FLOOR) * i as f64 / self.ny as f64;
        let ts = |i: usize| -PI + 2.0 * PI * i as f64 / self.ntheta as f64;
        ChartBox {
            x: (xs(ix), xs(ix + 1)),
            y: (ys(iy), ys(iy + 1)),
            theta: (ts(it), ts(it + 1)),
        }
    }

    pub fn cell_id(ix: usize, iy: usize, it: usize) -> String {
        format!("{ix}:{iy}:{it}")
    }

    /// Cell of a reduced vector, or `None` above the window.
    pub fn locate(&self, v: &UnitTangentH) -> Option<usize> {
        if v.y > self.y_max {
            return None;
        }
        let bin = |u: f64, n: usize| ((u * n as f64).floor().max(0.0) as usize).min(n - 1);
        let ix = bin(v.x + 0.5, self.nx);
        let iy = bin((v.y - Y_FLOOR) / (self.y_max - Y_FLOOR), self.ny);
        let it = bin((v.theta + PI) / (2.0 * PI), self.ntheta);
        Some(self.index(ix, iy, it))
    }

    /// Image of a cell under the reflection `x -> -x`, `theta -> pi - theta`.
    pub fn mirror(&self, ix: usize, iy: usize, it: usize) -> (usize, usize, usize) {
        let b = self.cell_box(ix, iy, it);
        let mid = canonical_angle(PI - 0.5 * (b.theta.0 + b.theta.1));
        let jt = ((((mid + PI) / (2.0 * PI)) * self.ntheta as f64).floor() as usize)
            .min(self.ntheta - 1);
        (self.nx - 1 - ix, iy, jt)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.nx).flat_map(move |ix| {
            (0..self.ny).flat_map(move |iy| (0..self.ntheta).map(move |it| (ix, iy, it)))
        })
    }
}

/// Per-cell sample counts weighted by twice the multiplicity, so that the
/// accumulation stays in exact integers.
pub fn core_sample_counts(t: f64, dt: f64, grid: &EquiGrid) -> Result<Vec<u64>, SurfaceError> {
    grid.validate()?;
    if !positive_finite(dt) {
        return Err(SurfaceError::InvalidStep(dt));
    }
    let classes = enumerate_classes(t);
    classes
        .par_chunks(64)
        .map(|chunk| -> Result<Vec<u64>, SurfaceError> {
            let mut counts = vec![0u64; grid.len()];
            for cls in chunk {
                let w = (2 * *cls.multiplicity.numer() / *cls.multiplicity.denom()) as u64;
                for k in 0..sample_count(cls.tau, dt) {
                    let (v, _) = reduce_to_fundamental_domain(core_vector(cls, k as f64 * dt))?;
                    if let Some(i) = grid.locate(&v) {
                        counts[i] += w;
                    }
                }
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )
}

/// Empirical core mass (multiplicity x dt x samples) against Liouville
/// mass, cell by cell, over the window of `grid`.
pub fn equidistribution_histogram(
    t: f64,
    dt: f64,
    grid: &EquiGrid,
) -> Result<CellHistogram, SurfaceError> {
    let counts = core_sample_counts(t, dt, grid)?;
    if counts.iter().all(|&c| c == 0) {
        return Err(SurfaceError::NoMassInWindow);
    }
    let cells = grid
        .cells()
        .map(|(ix, iy, it)| {
            let i = grid.index(ix, iy, it);
            Ok(Cell {
                id: EquiGrid::cell_id(ix, iy, it),
                empirical: 0.5 * dt * counts[i] as f64,
                target: liouville_cell_mass(&grid.cell_box(ix, iy, it))?,
            })
        })
        .collect::<Result<Vec<_>, SurfaceError>>()?;
    Ok(CellHistogram::new(cells)?)
}

/// A test function on the unit tangent bundle, evaluated on reduced vectors.
pub trait TangentFunction: Sync {
    fn eval(&self, v: &UnitTangentH) -> f64;
    /// An upper bound for `|f|`.
    fn sup_norm(&self) -> f64;
}

/// `1` on the A-thick part `{ y <= e^A }`, `0` above it.
#[derive(Debug, Clone, Copy)]
pub struct ThickCutoff {
    pub depth: f64,
}

impl TangentFunction for ThickCutoff {
    fn eval(&self, v: &UnitTangentH) -> f64 {
        if v.y.ln() <= self.depth {
            1.0
        } else {
            0.0
        }
    }

    fn sup_norm(&self) -> f64 {
        1.0
    }
}

/// Quadratic bump in `(x, ln y, theta)`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub center: UnitTangentH,
    pub radii: (f64, f64, f64),
    pub amplitude: f64,
}

impl Bump {
    /// Highest cusp depth `ln y` reached by the support.
    pub fn top_depth(&self) -> f64 {
        self.center.y.ln() + self.radii.1
    }
}

impl TangentFunction for Bump {
    fn eval(&self, v: &UnitTangentH) -> f64 {
        let dx = (v.x - self.center.x) / self.radii.0;
        let dy = (v.y.ln() - self.center.y.ln()) / self.radii.1;
        let dth = canonical_angle(v.theta - self.center.theta) / self.radii.2;
        let s = 1.0 - dx * dx - dy * dy - dth * dth;
        if s > 0.0 {
            self.amplitude * s
        } else {
            0.0
        }
    }

    fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }
}

pub struct ZeroFunction;

impl TangentFunction for ZeroFunction {
    fn eval(&self, _: &UnitTangentH) -> f64 {
        0.0
    }

    fn sup_norm(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreGap {
    pub full: f64,
    pub core: f64,
    pub bound: f64,
    /// Allowance for the Riemann sums, `2 dt sup|f|`.
    pub tolerance: f64,
}

impl CoreGap {
    pub fn holds(&self) -> bool {
        (self.full - self.core).abs() <= self.bound + self.tolerance
    }
}

const SUPPORT_PROBE: f64 = 4.0;

/// Compares the integral of `f` along the whole geodesic (only
/// `[-A, tau + A]` can meet the support) with its integral along the core
/// `[0, tau]`, both as Riemann sums on the grid `dt Z`.
pub fn lemma31_gap(
    cls: &DivergentClassH,
    f: &dyn TangentFunction,
    depth: f64,
    dt: f64,
) -> Result<CoreGap, SurfaceError> {
    if !positive_finite(dt) {
        return Err(SurfaceError::InvalidStep(dt));
    }
    if !(depth.is_finite() && depth >= 0.0) {
        return Err(SurfaceError::Invalid(format!("depth {depth} must be >= 0")));
    }
    let k_lo = -((depth / dt).floor() as i64);
    let k_hi = ((cls.tau + depth) / dt).floor() as i64;
    let core_hi = (cls.tau / dt).floor() as i64;
    // the probe also climbs SUPPORT_PROBE further up each cusp end
    let probe = (SUPPORT_PROBE / dt).ceil() as i64;
    let mut full = Vec::with_capacity((k_hi - k_lo + 1) as usize);
    let mut core = Vec::with_capacity((core_hi + 1) as usize);
    for k in k_lo - probe..=k_hi + probe {
        let (v, _) = reduce_to_fundamental_domain(core_vector(cls, k as f64 * dt))?;
        let val = f.eval(&v);
        if val != 0.0 && v.y.ln() > depth + 1e-9 {
            return Err(SurfaceError::SupportViolation);
        }
        if (k_lo..=k_hi).contains(&k) {
            full.push(val * dt);
        }
        if (0..=core_hi).contains(&k) {
            core.push(val * dt);
        }
    }
    let sup = f.sup_norm();
    Ok(CoreGap {
        full: deterministic_sum(full),
        core: deterministic_sum(core),
        bound: 2.0 * depth * sup,
        tolerance: 2.0 * dt * sup,
    })
}

/// One randomized instance of the compact-core comparison.
#[derive(Debug, Clone, Copy)]
pub struct CoreTrial {
    pub class: DivergentClassH,
    pub depth: f64,
    pub bump: Bump,
}

/// Reproducible random instances: a class with `q <= max_q`, a depth in
/// `[0, 3]` and a bump supported in the thick part of that depth.
pub fn core_gap_trials(seed: u64, count: usize, max_q: i64) -> Vec<CoreTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = rng.gen_range(2..=max_q.max(2));
            let p = loop {
                let p = rng.gen_range(0..q);
                if p.gcd(&q) == 1 {
                    break p;
                }
            };
            let class = DivergentClassH::new(RationalCusp { p, q }).expect("q >= 2");
            let depth: f64 = rng.gen_range(0.0..=3.0);
            let ry: f64 = rng.gen_range(0.05..0.6);
            let lo = Y_FLOOR.ln() - 0.1;
            let top = depth - ry;
            let log_yc = if top > lo { rng.gen_range(lo..=top) } else { top };
            let bump = Bump {
                center: UnitTangentH {
                    x: rng.gen_range(-0.5..0.5),
                    y: log_yc.exp(),
                    theta: rng.gen_range(-PI..PI),
                },
                radii: (
                    rng.gen_range(0.05..0.5),
                    ry,
                    rng.gen_range(0.3..PI),
                ),
                amplitude: rng.gen_range(0.5..2.0),
            };
            CoreTrial { class, depth, bump }
        })
        .collect()
}

/// Whether some `g != +-I` in `SL_2(Z)` with entries bounded by `bound`
/// maps the unordered pair of projective points `{u, v}` to itself.
pub fn brute_force_pair_stabilizer(u: (i64, i64), v: (i64, i64), bound: i64) -> Option<MoebiusInt> {
    let same = |a: (i64, i64), b: (i64, i64)| a.0 as i128 * b.1 as i128 == a.1 as i128 * b.0 as i128;
    let act = |g: &MoebiusInt, w: (i64, i64)| (g.a * w.0 + g.b * w.1, g.c * w.0 + g.d * w.1);
    for a in -bound..=bound {
        for b in -bound..=bound {
            for c in -bound..=bound {
                let ds: Vec<i64> = if a != 0 {
                    let num = 1 + b * c;
                    if num % a != 0 {
                        continue;
                    }
                    vec![num / a]
                } else if b * c == -1 {
                    (-bound..=bound).collect()
                } else {
                    continue;
                };
                for d in ds {
                    if d.abs() > bound {
                        continue;
                    }
                    let g = MoebiusInt { a, b, c, d };
                    if g.is_identity() {
                        continue;
                    }
                    let (gu, gv) = (act(&g, u), act(&g, v));
                    if (same(gu, u) && same(gv, v)) || (same(gu, v) && same(gv, u)) {
                        return Some(g);
                    }
                }
            }
        }
    }
    None
}

/// Searches for an orientation-reversing symmetry of the geodesic
/// `infinity <-> p/q` with entries bounded by `bound`, on the translates of
/// the line that pass through the fundamental domain at the nine points
/// `t = k tau / 8` of the core. Returns the translate's matrix `g` and the
/// symmetry found for `g(line)`.
pub fn swap_search_on_lifts(
    cusp: RationalCusp,
    bound: i64,
) -> Result<Option<(MoebiusInt, MoebiusInt)>, SurfaceError> {
    let cls = DivergentClassH::new(cusp)?;
    for k in 0..=8 {
        let t = cls.tau * k as f64 / 8.0;
        let (_, g) = reduce_to_fundamental_domain(core_vector(&cls, t))?;
        let top = (g.a, g.c);
        let foot = (g.a * cusp.p + g.b * cusp.q, g.c * cusp.p + g.d * cusp.q);
        if let Some(s) = brute_force_pair_stabilizer(top, foot, bound) {
            return Ok(Some((g, s)));
        }
    }
    Ok(None)
}
