//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_integer::Integer;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use divgeo::ffpoly::{
    cf_eval, cf_expand, compositions, count_closed_form, for_each_expansion, shape_count,
    shape_count_formula, CFExpansion, Polynomial, PrimeField, RationalFunction,
};
use divgeo::modular::{
    counting_series, equidistribution_histogram, lemma31_gap, core_gap_trials, multiplicity,
    reverse_orientation, swap_search_on_lifts, EquiGrid, RationalCusp,
};
use divgeo::stats::{fit_exponential_rate, total_variation};
use divgeo::tree::{
    bm_height_target, counting_tree_exact, empirical_height_distribution, lemma31_gap_tree,
    ray_extension_distance, ray_total_variation, step3_identity_check, EndCode, HeightProfile,
    TreeLineSpec,
};
use num_rational::Rational64;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn field(q: u32) -> PrimeField {
    PrimeField::new(q).unwrap()
}

fn hyperbolic_counting() -> Verdict {
    let start = Instant::now();
    let ts: Vec<f64> = (0..=32).map(|k| 8.0 + 0.25 * k as f64).collect();
    let series = counting_series(&ts).unwrap();
    let fit = fit_exponential_rate(&series, 8.0..=16.0).unwrap();
    let constant = series.count_at(16.0).unwrap() * (-16f64).exp();
    let expected = 3.0 / (PI * PI);
    let rel = (constant - expected).abs() / expected;
    let elapsed = start.elapsed();
    verdict(
        (fit.slope - 1.0).abs() <= 0.02 && rel <= 0.03 && elapsed <= Duration::from_secs(10),
        format!(
            "slope {:.5}, N(16)e^-16 = {constant:.5} vs 3/pi^2 = {expected:.5} ({:+.3}%), {:.2?}",
            fit.slope,
            100.0 * (constant - expected) / expected,
            elapsed
        ),
    )
}

fn hyperbolic_equidistribution() -> Verdict {
    let start = Instant::now();
    let g = EquiGrid::default();
    let tv = |t| total_variation(&equidistribution_histogram(t, 0.05, &g).unwrap()).unwrap();
    let (tv8, tv12) = (tv(8.0), tv(12.0));
    let elapsed = start.elapsed();
    verdict(
        tv12 <= 0.15 && tv12 < tv8 && elapsed <= Duration::from_secs(300),
        format!("TV(8) = {tv8:.5}, TV(12) = {tv12:.5} (<= 0.15), {elapsed:.2?}"),
    )
}

fn compact_core_bound() -> Verdict {
    let dt = 0.05;
    let trials = core_gap_trials(42, 100, 60);
    let failures = trials
        .iter()
        .filter(|t| !lemma31_gap(&t.class, &t.bump, t.depth, dt).unwrap().holds())
        .count();
    let mut tree_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let peaks: Vec<u32> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..7)).collect();
        let mut h = vec![0u32];
        for &d in &peaks {
            h.extend((1..=d).chain((0..d).rev()));
        }
        let pr = HeightProfile::new(h).unwrap();
        let a: u32 = rng.gen_range(0..8);
        let ones = vec![1.0; a as usize + 1];
        let g = lemma31_gap_tree(&pr, a, &ones);
        tree_ok &= g.full - g.core == 2.0 * a as f64;
        let f: Vec<f64> = (0..=a).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sup = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let g = lemma31_gap_tree(&pr, a, &f);
        tree_ok &= (g.full - g.core).abs() <= 2.0 * a as f64 * sup + 1e-12;
    }
    verdict(
        failures == 0 && tree_ok,
        format!("{failures} of 100 surface instances fail; tree gap exact: {tree_ok}"),
    )
}

fn exact_tree_counts() -> Verdict {
    let mut ok = true;
    let mut checked = 0;
    for (q, s_max) in [(2u32, 7usize), (3, 4), (5, 4)] {
        let f = field(q);
        let mut by_s = vec![0u128; s_max + 1];
        for_each_expansion(f, s_max, |digits| {
            let s: usize = digits.iter().map(|p| p.degree().finite().unwrap()).sum();
            by_s[s] += 1;
        });
        for (s, &n) in by_s.iter().enumerate().skip(1) {
            let closed = count_closed_form(f, s).unwrap();
            let shapes: u128 = compositions(s).iter().map(|c| shape_count(f, c).unwrap()).sum();
            ok &= n == closed && shapes == closed;
            checked += 1;
        }
    }
    let c = counting_tree_exact(field(2), &[24, 26]).unwrap();
    let ratio = c[1].1 as f64 / c[0].1 as f64;
    ok &= (ratio - 4.0).abs() <= 1e-6;
    verdict(ok, format!("{checked} (q, s) totals exact; N(26)/N(24) = {ratio:.9}"))
}

fn random_fraction(rng: &mut ChaCha8Rng, f: PrimeField) -> RationalFunction {
    let q = f.modulus() as u64;
    loop {
        let deg = rng.gen_range(1..=8usize);
        let mut den: Vec<u64> = (0..deg).map(|_| rng.gen_range(0..q)).collect();
        den.push(1);
        let num: Vec<u64> = (0..deg).map(|_| rng.gen_range(0..q)).collect();
        let (n, d) = (Polynomial::from_coeffs(f, &num), Polynomial::from_coeffs(f, &den));
        if n.is_zero() {
            continue;
        }
        return RationalFunction::new(n, d).unwrap();
    }
}

fn roundtrip_ok(r: &RationalFunction) -> bool {
    let e = cf_expand(r);
    let digits_ok = e
        .digits()
        .iter()
        .all(|p| p.degree().finite().is_some_and(|d| d >= 1));
    digits_ok && cf_eval(&e) == *r
}

fn continued_fraction_roundtrip() -> Verdict {
    let f2 = field(2);
    let mut exhaustive = 0usize;
    let mut ok = true;
    for deg in 1..=6u32 {
        for idx in 0..(1u64 << deg) {
            // monic denominators of degree `deg`
            let den = Polynomial::from_index(f2, (1u64 << deg) | idx);
            for nidx in 0..(1u64 << deg) {
                let num = Polynomial::from_index(f2, nidx);
                if num.is_zero() || num.gcd(&den).degree().finite() != Some(0) {
                    continue;
                }
                let r = RationalFunction::new(num, den.clone()).unwrap();
                ok &= roundtrip_ok(&r);
                exhaustive += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut random = 0;
    for q in [3, 5] {
        for _ in 0..10_000 {
            ok &= roundtrip_ok(&random_fraction(&mut rng, field(q)));
            random += 1;
        }
    }
    verdict(
        ok,
        format!("{exhaustive} reduced fractions over F2 with deg Q <= 6, {random} random over F3/F5"),
    )
}

fn per_shape_counts() -> Verdict {
    let f = field(2);
    let mut ok = true;
    let mut shapes = 0;
    for s in 1..=6usize {
        let formula = shape_count_formula(f, 2 * s as u32).unwrap();
        for c in compositions(s) {
            ok &= shape_count(f, &c).unwrap() == formula;
            shapes += 1;
        }
    }
    let mut expansions = 0;
    for_each_expansion(f, 6, |digits| {
        let e = CFExpansion::new(f, digits.to_vec()).unwrap();
        let sum: usize = digits.iter().map(|p| p.degree().finite().unwrap()).sum();
        ok &= e.complexity().unwrap() as usize == 2 * sum;
        expansions += 1;
    });
    verdict(
        ok,
        format!("{shapes} shapes match (q-1)q^(n/2); complexity = 2 sum deg on {expansions} expansions"),
    )
}

fn tree_equidistribution() -> Verdict {
    let start = Instant::now();
    let q = field(2);
    let target = bm_height_target(q, 24, 8).unwrap();
    let tv = |n| ray_total_variation(&empirical_height_distribution(q, n, 8).unwrap(), &target).unwrap();
    let (tv12, tv24) = (tv(12), tv(24));
    let elapsed = start.elapsed();
    verdict(
        tv24 < tv12 && tv24 <= 0.05 && elapsed <= Duration::from_secs(120),
        format!(
            "TV(12) = {tv12:.5}, TV(24) = {tv24:.5}; trend {}, TV(24) <= 0.05 {}, {elapsed:.2?}",
            if tv24 < tv12 { "holds" } else { "fails" },
            if tv24 <= 0.05 { "holds" } else { "fails" },
        ),
    )
}

fn metric_identities() -> Verdict {
    let f = field(2);
    let end = |v: Vec<u32>| EndCode::new(f, v).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=8usize {
        let mut a = vec![0; t];
        a.push(1);
        let mut b = vec![0; t];
        b.extend([0, 1]);
        let (lhs, rhs) = step3_identity_check(&end(a), &end(b), &end(vec![2])).unwrap();
        let closed = 0.5 * (-2.0 * t as f64).exp();
        worst = worst.max((lhs - rhs).abs()).max((lhs - closed).abs());
    }
    let line = TreeLineSpec::new(end(vec![0, 1, 1]), end(vec![1]), 0).unwrap();
    let cs: Vec<f64> = (0..=6)
        .map(|d| ray_extension_distance(&line, d).unwrap() * (2.0 * d as f64).exp())
        .collect();
    let spread = cs.iter().fold(0.0f64, |m, c| m.max((c - cs[0]).abs()));
    verdict(
        worst <= 1e-12 && spread <= 1e-12,
        format!(
            "base-vertex identity max error {worst:.2e}; ray-extension constant C = {} (spread {spread:.1e}), reference 1/2",
            cs[0]
        ),
    )
}

fn multiplicity_coherence() -> Verdict {
    let mut ok = true;
    let mut classes = 0;
    for q in 2..=200i64 {
        for p in (0..q).filter(|p| p.gcd(&q) == 1) {
            let c = RationalCusp::new(p, q).unwrap();
            let half = multiplicity(c) == Rational64::new(1, 2);
            ok &= (reverse_orientation(c) == c) == half && half == ((p * p + 1) % q == 0);
            classes += 1;
        }
    }
    let mut searched = 0;
    for q in 2..=50i64 {
        for p in (0..q).filter(|p| p.gcd(&q) == 1) {
            let c = RationalCusp::new(p, q).unwrap();
            let found = swap_search_on_lifts(c, 20).unwrap().is_some();
            ok &= found == (multiplicity(c) == Rational64::new(1, 2));
            searched += 1;
        }
    }
    verdict(ok, format!("{classes} classes q <= 200 coherent; {searched} matrix searches q <= 50 agree"))
}

fn run_cli(dir: &Path, threads: usize, args: &[&str]) -> (i32, Vec<u8>, BTreeMap<String, Vec<u8>>) {
    let out = Command::new(env!("CARGO_BIN_EXE_divgeo"))
        .arg("--out")
        .arg(dir)
        .args(["--json", "--threads", &threads.to_string()])
        .args(args)
        .output()
        .expect("binary runs");
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    (out.status.code().unwrap_or(-1), out.stdout, files)
}

fn determinism() -> Verdict {
    let commands: [&[&str]; 7] = [
        &["hyp", "count", "--tmax", "12", "--step", "0.25"],
        &["hyp", "equi", "--tmin", "6", "--tmax", "8", "--tstep", "2"],
        &["hyp", "lemma31", "--trials", "40"],
        &["tree", "count", "--q", "3", "--nmax", "12"],
        &["tree", "equi", "--q", "2", "--nmax", "24", "--hmax", "8"],
        &["tree", "shapes", "--q", "3", "--n", "10"],
        &["tree", "dist-checks"],
    ];
    let mut differing = Vec::new();
    for args in commands {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_cli(a.path(), 1, args);
        let rb = run_cli(b.path(), 4, args);
        if ra != rb || ra.2.is_empty() || ra.0 != 0 {
            differing.push(args.join(" "));
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            "7 subcommands byte-identical with 1 and 4 threads".to_string()
        } else {
            format!("outputs differ or runs failed: {}", differing.join("; "))
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("hyperbolic counting rate", hyperbolic_counting),
        ("hyperbolic equidistribution", hyperbolic_equidistribution),
        ("compact-core bound", compact_core_bound),
        ("exact tree counts", exact_tree_counts),
        ("continued fraction roundtrip", continued_fraction_roundtrip),
        ("per-shape counts at q = 2", per_shape_counts),
        ("tree equidistribution", tree_equidistribution),
        ("metric identities", metric_identities),
        ("multiplicity and involution", multiplicity_coherence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += !v.pass as usize;
        println!(
            "criterion {:>2} {} {name}: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
