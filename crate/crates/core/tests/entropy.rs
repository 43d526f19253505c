use proptest::prelude::*;
use wecodec::entropy::{
    add_uniform_noise, estimate_rate, quantize, range_decode, range_encode, table_for, PmfTable, SIGMA_MIN, TOTAL,
};
use wecodec::{Error, SeededRng, Tensor3};

/// Independent erf: Maclaurin series for small arguments, continued
/// fraction for the complement otherwise.
fn erf_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_oracle(-x);
    }
    if x < 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // Lentz evaluation of erfc continued fraction.
        let mut f = x;
        let (mut c, mut d) = (x, 0.0);
        for k in 1..200 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = 1.0 / d;
            c = x + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
    }
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf_oracle(x / std::f64::consts::SQRT_2))
}

#[test]
fn erf_oracle_sanity() {
    assert!((erf_oracle(0.5) - 0.520_499_877_813_046_5).abs() < 1e-15);
    assert!((erf_oracle(3.5) - 0.999_999_256_901_628).abs() < 1e-14);
}

#[test]
fn unit_scale_centre_frequency() {
    let p = phi(0.5) - phi(-0.5);
    assert!((p - 0.38292).abs() < 1e-5);
    let t = PmfTable::for_scale(1.0);
    let f = t.freqs()[t.index_of(0).unwrap()] as f64;
    assert!((f - (p * TOTAL as f64).round()).abs() <= 1.0, "{f}");
}

#[test]
fn minimum_scale_is_peaked() {
    let p = phi(0.5 / SIGMA_MIN) - phi(-0.5 / SIGMA_MIN);
    assert!(p > 0.97);
    assert!(PmfTable::for_scale(SIGMA_MIN).prob(0).unwrap() > 0.97);
}

#[test]
fn tables_have_unit_total_and_positive_entries() {
    let mut rng = SeededRng::new(1);
    for _ in 0..200 {
        let s = (rng.uniform(-3.0, 6.0)).exp();
        let t = PmfTable::for_scale(s);
        assert_eq!(t.freqs().iter().map(|&f| f as u64).sum::<u64>(), TOTAL as u64);
        assert!(t.freqs().iter().all(|&f| f >= 1));
    }
}

fn gaussian_sample(rng: &mut SeededRng, sigma: f64) -> i32 {
    (rng.normal() * sigma).round() as i32
}

#[test]
fn rate_matches_discrete_entropy() {
    let mut h = 0.0;
    for k in -40..=40 {
        let p = phi(k as f64 + 0.5) - phi(k as f64 - 0.5);
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    assert!((h - 2.1).abs() < 0.05, "{h}");
    let mut rng = SeededRng::new(2);
    let n = 100_000;
    let syms: Vec<i32> = (0..n).map(|_| gaussian_sample(&mut rng, 1.0)).collect();
    let t = PmfTable::for_scale(1.0);
    let bits = estimate_rate(&syms, &vec![&t; n]).unwrap();
    assert!((bits / n as f64 - h).abs() < 0.05, "{} vs {h}", bits / n as f64);
}

#[test]
fn uniform_four_symbol_length() {
    let t = PmfTable::from_freqs(0, vec![TOTAL / 4; 4], false).unwrap();
    let mut rng = SeededRng::new(3);
    let syms: Vec<i32> = (0..1000).map(|_| rng.below(4) as i32).collect();
    let tables = vec![&t; 1000];
    let bytes = range_encode(&syms, &tables).unwrap();
    let bits = bytes.len() as f64 * 8.0;
    assert!((2000.0..=2128.0).contains(&bits), "{bits}");
    assert_eq!(range_decode(&bytes, &tables).unwrap(), syms);
}

#[test]
fn million_symbol_round_trip_and_rate_gap() {
    let mut rng = SeededRng::new(4);
    let n = 1_000_000;
    let mut syms = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    for _ in 0..n {
        let s = rng.uniform(-2.2, 5.0).exp();
        tables.push(table_for(s));
        syms.push(gaussian_sample(&mut rng, s));
    }
    let bytes = range_encode(&syms, &tables).unwrap();
    assert_eq!(range_decode(&bytes, &tables).unwrap(), syms);
    let ideal = estimate_rate(&syms, &tables).unwrap();
    let actual = bytes.len() as f64 * 8.0;
    assert!(actual >= ideal && actual <= ideal * 1.01 + 128.0, "{actual} vs {ideal}");
}

#[test]
fn low_entropy_rate_gap() {
    let mut rng = SeededRng::new(5);
    let n = 200_000;
    let t = table_for(SIGMA_MIN);
    let syms: Vec<i32> = (0..n).map(|_| gaussian_sample(&mut rng, SIGMA_MIN)).collect();
    let tables = vec![t; n];
    let bytes = range_encode(&syms, &tables).unwrap();
    let ideal = estimate_rate(&syms, &tables).unwrap();
    let actual = bytes.len() as f64 * 8.0;
    assert!(actual >= ideal && actual <= ideal * 1.01 + 128.0, "{actual} vs {ideal}");
}

#[test]
fn truncated_stream_fails() {
    let mut rng = SeededRng::new(6);
    let t = table_for(4.0);
    let syms: Vec<i32> = (0..5000).map(|_| gaussian_sample(&mut rng, 4.0)).collect();
    let tables = vec![t; syms.len()];
    let bytes = range_encode(&syms, &tables).unwrap();
    let r = range_decode(&bytes[..bytes.len() / 2], &tables);
    assert!(matches!(r, Err(Error::Decode(_))));
}

#[test]
fn wrong_table_gives_wrong_symbols() {
    let mut rng = SeededRng::new(7);
    let syms: Vec<i32> = (0..2000).map(|_| gaussian_sample(&mut rng, 3.0)).collect();
    let enc = vec![table_for(3.0); syms.len()];
    let dec = vec![table_for(1.0); syms.len()];
    let bytes = range_encode(&syms, &enc).unwrap();
    match range_decode(&bytes, &dec) {
        Ok(out) => assert_ne!(out, syms),
        Err(e) => assert!(matches!(e, Error::Decode(_))),
    }
}

#[test]
fn quantizer_bound_and_noise_bound() {
    let mut rng = SeededRng::new(8);
    let y = Tensor3::from_fn(4, 16, 16, |_, _, _| rng.uniform(-20.0, 20.0));
    let mu = Tensor3::from_fn(4, 16, 16, |_, _, _| rng.uniform(-3.0, 3.0));
    let (_, dq) = quantize(&y, &mu).unwrap();
    assert!(dq.max_abs_diff(&y) <= 0.5);
    let big = Tensor3::zeros(1, 1000, 1000);
    let noisy = add_uniform_noise(&big, &mut rng).unwrap();
    assert!(noisy.data().iter().all(|v| v.abs() < 0.5));
    assert!(matches!(quantize(&y, &Tensor3::zeros(1, 2, 2)), Err(Error::Shape(_))));
}

const VECTORS: &str = include_str!("../testdata/range_coder_vectors.txt");

fn parse_vectors() -> Vec<(String, Vec<f64>, Vec<i32>, String)> {
    let mut out = Vec::new();
    let mut lines = VECTORS.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    while let Some(name) = lines.next() {
        let sigmas = lines.next().unwrap().split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
        let syms = lines.next().unwrap().split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
        let hex = lines.next().unwrap().split_whitespace().nth(1).unwrap_or("").to_string();
        out.push((name.trim_start_matches("vector ").to_string(), sigmas, syms, hex));
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn conformance_vectors() {
    let vectors = parse_vectors();
    assert!(vectors.len() >= 3);
    for (name, sigmas, syms, expected) in vectors {
        let tables: Vec<&PmfTable> = sigmas.iter().map(|&s| table_for(s)).collect();
        let bytes = range_encode(&syms, &tables).unwrap();
        assert_eq!(hex(&bytes), expected, "vector {name}");
        assert_eq!(range_decode(&bytes, &tables).unwrap(), syms, "vector {name}");
    }
}

proptest! {
    #[test]
    fn random_round_trip(seed in any::<u64>(), n in 0usize..400) {
        let mut rng = SeededRng::new(seed);
        let mut syms = Vec::new();
        let mut tables = Vec::new();
        for _ in 0..n {
            let s = rng.uniform(-2.5, 5.6).exp();
            tables.push(table_for(s));
            let v = if rng.below(50) == 0 { rng.uniform(-1e5, 1e5) as i32 } else { gaussian_sample(&mut rng, s) };
            syms.push(v);
        }
        let bytes = range_encode(&syms, &tables).unwrap();
        prop_assert_eq!(range_decode(&bytes, &tables).unwrap(), syms);
    }
}

/// Prints the coded bytes of every vector; used to (re)fill the testdata file.
#[test]
#[ignore]
fn print_vector_bytes() {
    for (name, sigmas, syms, _) in parse_vectors() {
        let tables: Vec<&PmfTable> = sigmas.iter().map(|&s| table_for(s)).collect();
        println!("{name} {}", hex(&range_encode(&syms, &tables).unwrap()));
    }
}
