//! Polynomials over a prime field F_q and continued fractions of rational
//! functions in F_q(Y).
//!
//! A rational function `P/Q` with `deg P < deg Q` has a finite expansion
//! `P/Q = 1/(a_1 + 1/(a_2 + ... + 1/a_k))` with every partial quotient of
//! degree at least one. Each such tuple is the combinatorial code of a
//! divergent geodesic on the modular ray, of complexity `2 * sum(deg a_i)`.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolyError {
    #[error("modulus {0} is not a prime")]
    NotPrime(u32),
    #[error("division by zero polynomial")]
    DivisionByZero,
    #[error("mismatched fields: F_{0} vs F_{1}")]
    FieldMismatch(u32, u32),
    #[error("complexity zero")]
    ComplexityZero,
    #[error("partial quotient {0} has degree < 1")]
    DigitDegree(usize),
    #[error("count overflows u128")]
    Overflow,
    #[error("parse error: {0}")]
    Parse(String),
}

/// The prime field F_q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeField {
    q: u32,
}

impl PrimeField {
    pub fn new(q: u32) -> Result<Self, PolyError> {
        if is_prime(q) {
            Ok(PrimeField { q })
        } else {
            Err(PolyError::NotPrime(q))
        }
    }

    pub fn modulus(self) -> u32 {
        self.q
    }

    pub fn elem(self, v: u64) -> FieldElem {
        FieldElem {
            value: (v % self.q as u64) as u32,
            field: self,
        }
    }

    fn add(self, a: u32, b: u32) -> u32 {
        ((a as u64 + b as u64) % self.q as u64) as u32
    }

    fn sub(self, a: u32, b: u32) -> u32 {
        ((a as u64 + self.q as u64 - b as u64) % self.q as u64) as u32
    }

    fn mul(self, a: u32, b: u32) -> u32 {
        ((a as u64 * b as u64) % self.q as u64) as u32
    }

    fn inv(self, a: u32) -> u32 {
        debug_assert!(a != 0);
        // Fermat: a^(q-2)
        let mut base = a as u64;
        let mut e = self.q - 2;
        let mut acc = 1u64;
        let m = self.q as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            e >>= 1;
        }
        acc as u32
    }
}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= n as u64 {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Residue class in F_q, stored as its representative in `0..q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElem {
    value: u32,
    field: PrimeField,
}

impl FieldElem {
    pub fn value(self) -> u32 {
        self.value
    }

    pub fn field(self) -> PrimeField {
        self.field
    }
}

/// Degree of a polynomial; the zero polynomial sits below every integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Degree {
    NegInfinity,
    Finite(usize),
}

impl Degree {
    pub fn finite(self) -> Option<usize> {
        match self {
            Degree::NegInfinity => None,
            Degree::Finite(d) => Some(d),
        }
    }
}

/// Polynomial over F_q, coefficients low to high, no trailing zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    field: PrimeField,
    coeffs: Vec<u32>,
}

impl Polynomial {
    pub fn zero(field: PrimeField) -> Self {
        Polynomial {
            field,
            coeffs: Vec::new(),
        }
    }

    pub fn one(field: PrimeField) -> Self {
        Polynomial {
            field,
            coeffs: vec![1],
        }
    }

    /// `Y`.
    pub fn y(field: PrimeField) -> Self {
        Polynomial {
            field,
            coeffs: vec![0, 1],
        }
    }

    /// Coefficients are reduced mod q and trailing zeros dropped.
    pub fn from_coeffs(field: PrimeField, coeffs: &[u64]) -> Self {
        let mut p = Polynomial {
            field,
            coeffs: coeffs.iter().map(|&c| field.elem(c).value).collect(),
        };
        p.trim();
        p
    }

    /// The polynomial whose coefficients, read high to low, are the base-q
    /// digits of `n`.
    pub fn from_index(field: PrimeField, mut n: u64) -> Self {
        let q = field.q as u64;
        let mut coeffs = Vec::new();
        while n > 0 {
            coeffs.push((n % q) as u32);
            n /= q;
        }
        Polynomial { field, coeffs }
    }

    /// Inverse of [`Polynomial::from_index`].
    pub fn index(&self) -> u64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0u64, |acc, &c| acc * self.field.q as u64 + c as u64)
    }

    fn trim(&mut self) {
        while self.coeffs.last() == Some(&0) {
            self.coeffs.pop();
        }
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> FieldElem {
        self.field.elem(self.coeffs.get(i).copied().unwrap_or(0) as u64)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Degree {
        match self.coeffs.len() {
            0 => Degree::NegInfinity,
            n => Degree::Finite(n - 1),
        }
    }

    pub fn leading(&self) -> Option<FieldElem> {
        self.coeffs.last().map(|&c| self.field.elem(c as u64))
    }

    pub fn is_monic(&self) -> bool {
        self.coeffs.last() == Some(&1)
    }

    fn check_field(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.field == other.field {
            Ok(())
        } else {
            Err(PolyError::FieldMismatch(self.field.q, other.field.q))
        }
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.field, other.field, "field mismatch");
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.coeffs.get(i).copied().unwrap_or(0);
            let b = other.coeffs.get(i).copied().unwrap_or(0);
            coeffs.push(self.field.add(a, b));
        }
        let mut p = Polynomial {
            field: self.field,
            coeffs,
        };
        p.trim();
        p
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            field: self.field,
            coeffs: self.coeffs.iter().map(|&c| self.field.sub(0, c)).collect(),
        }
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.field, other.field, "field mismatch");
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero(self.field);
        }
        let f = self.field;
        let mut coeffs = vec![0u32; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] = f.add(coeffs[i + j], f.mul(a, b));
            }
        }
        let mut p = Polynomial { field: f, coeffs };
        p.trim();
        p
    }

    pub fn scale(&self, c: u32) -> Polynomial {
        let f = self.field;
        let mut p = Polynomial {
            field: f,
            coeffs: self.coeffs.iter().map(|&a| f.mul(a, c % f.q)).collect(),
        };
        p.trim();
        p
    }

    /// Scales to leading coefficient one; zero stays zero.
    pub fn monic(&self) -> Polynomial {
        match self.coeffs.last() {
            None => self.clone(),
            Some(&lc) => self.scale(self.field.inv(lc)),
        }
    }

    /// Euclidean division: `self = quotient * divisor + remainder` with
    /// `deg remainder < deg divisor`.
    pub fn divmod(&self, divisor: &Polynomial) -> Result<(Polynomial, Polynomial), PolyError> {
        self.check_field(divisor)?;
        if divisor.is_zero() {
            return Err(PolyError::DivisionByZero);
        }
        let f = self.field;
        let db = divisor.coeffs.len() - 1;
        let inv_lead = f.inv(*divisor.coeffs.last().unwrap());
        let mut rem = self.coeffs.clone();
        if rem.len() <= db {
            return Ok((Polynomial::zero(f), self.clone()));
        }
        let mut quot = vec![0u32; rem.len() - db];
        for k in (0..quot.len()).rev() {
            let c = f.mul(rem[k + db], inv_lead);
            quot[k] = c;
            if c != 0 {
                for (j, &b) in divisor.coeffs.iter().enumerate() {
                    rem[k + j] = f.sub(rem[k + j], f.mul(c, b));
                }
            }
        }
        rem.truncate(db);
        let mut q = Polynomial {
            field: f,
            coeffs: quot,
        };
        let mut r = Polynomial {
            field: f,
            coeffs: rem,
        };
        q.trim();
        r.trim();
        Ok((q, r))
    }

    /// Monic gcd by the Euclidean chain; `gcd(0, 0) = 0`.
    pub fn gcd(&self, other: &Polynomial) -> Polynomial {
        let mut a = self.clone();
        let mut b = other.clone();
        while !b.is_zero() {
            let (_, r) = a.divmod(&b).expect("nonzero divisor");
            a = b;
            b = r;
        }
        a.monic()
    }

    /// Parses the text format `c0,c1,...,ck` (coefficients low to high,
    /// each in `0..q`). `"0"` is the zero polynomial; trailing zeros are
    /// rejected so that every polynomial has exactly one spelling.
    pub fn parse(s: &str, field: PrimeField) -> Result<Polynomial, PolyError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(PolyError::Parse("empty polynomial".into()));
        }
        let mut coeffs = Vec::new();
        for tok in s.split(',') {
            let c: u32 = tok
                .trim()
                .parse()
                .map_err(|_| PolyError::Parse(format!("bad coefficient {tok:?}")))?;
            if c >= field.q {
                return Err(PolyError::Parse(format!(
                    "coefficient {c} out of range for F_{}",
                    field.q
                )));
            }
            coeffs.push(c);
        }
        if coeffs == [0] {
            return Ok(Polynomial::zero(field));
        }
        if coeffs.last() == Some(&0) {
            return Err(PolyError::Parse("trailing zero coefficient".into()));
        }
        Ok(Polynomial { field, coeffs })
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        for (i, c) in self.coeffs.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// `P/Q` in lowest terms with `Q` monic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RationalFunction {
    num: Polynomial,
    den: Polynomial,
}

impl RationalFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, PolyError> {
        num.check_field(&den)?;
        if den.is_zero() {
            return Err(PolyError::DivisionByZero);
        }
        let g = num.gcd(&den);
        let (mut num, _) = num.divmod(&g)?;
        let (mut den, _) = den.divmod(&g)?;
        let lc = *den.coeffs.last().unwrap();
        if lc != 1 {
            let inv = den.field.inv(lc);
            num = num.scale(inv);
            den = den.scale(inv);
        }
        Ok(RationalFunction { num, den })
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.num
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.den
    }

    pub fn field(&self) -> PrimeField {
        self.num.field
    }

    /// `P/Q mod F_q[Y]`.
    pub fn fractional_part(&self) -> RationalFunction {
        let (_, r) = self.num.divmod(&self.den).expect("nonzero denominator");
        RationalFunction {
            num: r,
            den: self.den.clone(),
        }
    }
}

impl fmt::Display for RationalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})/({})", self.num, self.den)
    }
}

/// Partial quotients `a_1, ..., a_k`, each of degree at least one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CFExpansion {
    field: PrimeField,
    digits: Vec<Polynomial>,
}

impl CFExpansion {
    pub fn new(field: PrimeField, digits: Vec<Polynomial>) -> Result<Self, PolyError> {
        for (i, d) in digits.iter().enumerate() {
            if d.field != field {
                return Err(PolyError::FieldMismatch(field.q, d.field.q));
            }
            if d.degree() < Degree::Finite(1) {
                return Err(PolyError::DigitDegree(i));
            }
        }
        Ok(CFExpansion { field, digits })
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn digits(&self) -> &[Polynomial] {
        &self.digits
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// `(deg a_1, ..., deg a_k)`.
    pub fn shape(&self) -> Vec<usize> {
        self.digits
            .iter()
            .map(|d| d.degree().finite().expect("digits are nonzero"))
            .collect()
    }

    /// `2 * sum(deg a_i)`.
    pub fn complexity(&self) -> Result<u32, PolyError> {
        if self.digits.is_empty() {
            return Err(PolyError::ComplexityZero);
        }
        Ok(2 * self.shape().iter().sum::<usize>() as u32)
    }

    /// Parses semicolon-separated polynomials, e.g. `"0,1;1,1"`. The empty
    /// string is the empty expansion.
    pub fn parse(s: &str, field: PrimeField) -> Result<Self, PolyError> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(CFExpansion {
                field,
                digits: Vec::new(),
            });
        }
        let digits = s
            .split(';')
            .map(|p| Polynomial::parse(p, field))
            .collect::<Result<Vec<_>, _>>()?;
        CFExpansion::new(field, digits)
    }
}

impl fmt::Display for CFExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.digits.iter().enumerate() {
            if i > 0 {
                write!(f, ";")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Expands the fractional part of `r`.
pub fn cf_expand(r: &RationalFunction) -> CFExpansion {
    let field = r.field();
    let mut num = r.fractional_part().num;
    let mut den = r.den.clone();
    let mut digits = Vec::new();
    // Q/P = a + R/P with deg R < deg P; the degree of P strictly drops.
    while !num.is_zero() {
        let (a, rem) = den.divmod(&num).expect("nonzero numerator");
        debug_assert!(a.degree() >= Degree::Finite(1));
        digits.push(a);
        den = num;
        num = rem;
    }
    CFExpansion { field, digits }
}

/// Evaluates `1/(a_1 + 1/(... + 1/a_k))`; the empty expansion is `0/1`.
pub fn cf_eval(e: &CFExpansion) -> RationalFunction {
    let field = e.field;
    let mut num = Polynomial::zero(field);
    let mut den = Polynomial::one(field);
    for a in e.digits.iter().rev() {
        // 1/(a + num/den) = den/(a*den + num)
        let next_den = a.mul(&den).add(&num);
        num = den;
        den = next_den;
    }
    RationalFunction::new(num, den).expect("denominator of a continued fraction is nonzero")
}

/// `2 * sum(deg a_i)`.
pub fn complexity(e: &CFExpansion) -> Result<u32, PolyError> {
    e.complexity()
}

/// All compositions of `s` into positive parts, in lexicographic order.
pub fn compositions(s: usize) -> Vec<Vec<usize>> {
    fn rec(s: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if s == 0 {
            out.push(prefix.clone());
            return;
        }
        for d in 1..=s {
            prefix.push(d);
            rec(s - d, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if s > 0 {
        rec(s, &mut Vec::new(), &mut out);
    }
    out
}

/// Visits every digit tuple with `sum(deg) <= s_max`.
///
/// Digits of degree `d` are the polynomials with base-q index in
/// `[q^d, q^(d+1))`, so ordering digits by (degree, coefficients read high
/// to low) is ordering by index. Tuples come in length-lexicographic order:
/// by number of digits, then lexicographically by digit.
pub fn for_each_expansion<F: FnMut(&[Polynomial])>(q: PrimeField, s_max: usize, mut visit: F) {
    fn rec<F: FnMut(&[Polynomial])>(
        q: PrimeField,
        remaining_len: usize,
        budget: usize,
        prefix: &mut Vec<Polynomial>,
        visit: &mut F,
    ) {
        if remaining_len == 0 {
            visit(prefix);
            return;
        }
        // leave at least one degree for every digit still to place
        let max_deg = budget - (remaining_len - 1);
        let qq = q.q as u64;
        let hi = qq.pow(max_deg as u32 + 1);
        for idx in qq..hi {
            let p = Polynomial::from_index(q, idx);
            let d = p.coeffs.len() - 1;
            prefix.push(p);
            rec(q, remaining_len - 1, budget - d, prefix, visit);
            prefix.pop();
        }
    }
    for k in 1..=s_max {
        rec(q, k, s_max, &mut Vec::with_capacity(k), &mut visit);
    }
}

/// Every expansion of complexity at most `2 * s_max`, in the order of
/// [`for_each_expansion`].
pub fn enumerate_expansions(q: PrimeField, s_max: usize) -> Vec<CFExpansion> {
    let mut out = Vec::new();
    for_each_expansion(q, s_max, |digits| {
        out.push(CFExpansion {
            field: q,
            digits: digits.to_vec(),
        })
    });
    out
}

fn checked_pow(base: u128, exp: u32) -> Result<u128, PolyError> {
    base.checked_pow(exp).ok_or(PolyError::Overflow)
}

/// Number of digit tuples with `sum(deg) = s`: `(q-1) q^(2s-1)`.
pub fn count_closed_form(q: PrimeField, s: usize) -> Result<u128, PolyError> {
    if s == 0 {
        return Ok(1);
    }
    let qq = q.q as u128;
    (qq - 1)
        .checked_mul(checked_pow(qq, 2 * s as u32 - 1)?)
        .ok_or(PolyError::Overflow)
}

/// Number of digit tuples with the given degree sequence:
/// `prod (q-1) q^(d_i)`.
pub fn shape_count(q: PrimeField, shape: &[usize]) -> Result<u128, PolyError> {
    let qq = q.q as u128;
    shape.iter().try_fold(1u128, |acc, &d| {
        if d == 0 {
            return Err(PolyError::DigitDegree(0));
        }
        acc.checked_mul(qq - 1)
            .and_then(|x| x.checked_mul(qq.checked_pow(d as u32)?))
            .ok_or(PolyError::Overflow)
    })
}

/// The per-shape figure `(q-1) q^(n/2)` for complexity `n`. It agrees with
/// [`shape_count`] exactly when `q = 2`; for larger q the tuple count is
/// `(q-1)^k q^(n/2)`.
pub fn shape_count_formula(q: PrimeField, n: u32) -> Result<u128, PolyError> {
    let qq = q.q as u128;
    (qq - 1)
        .checked_mul(checked_pow(qq, n / 2)?)
        .ok_or(PolyError::Overflow)
}

impl PartialOrd for Polynomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Orders by (degree, coefficients high to low).
impl Ord for Polynomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.coeffs
            .len()
            .cmp(&other.coeffs.len())
            .then_with(|| self.coeffs.iter().rev().cmp(other.coeffs.iter().rev()))
    }
}
