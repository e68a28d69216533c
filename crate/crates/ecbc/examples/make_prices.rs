//! Regenerates the bundled sample price dataset at data/prices10.csv:
//! 502 trading days of synthetic prices for 10 correlated assets, i.e. 501
//! daily log-returns. Dependence comes from a t copula (df 4, pairwise 0.55)
//! with lognormal price paths, which puts the largest covariance eigenvalue
//! of the returns near 2e-3.
//!
//!     cargo run --release -p ecbc --example make_prices

use ecbc::numeric::std_normal_inv_cdf;
use ecbc::reference::{sample_reference, CopulaSpec};
use std::fmt::Write as _;

const TICKERS: [&str; 10] = [
    "A01", "A02", "A03", "A04", "A05", "A06", "A07", "A08", "A09", "A10",
];
const DAYS: usize = 502;
const SEED: u64 = 20180101;

fn next_date(y: &mut u32, m: &mut u32, d: &mut u32) {
    let len = match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            if *y % 4 == 0 {
                29
            } else {
                28
            }
        }
    };
    *d += 1;
    if *d > len {
        *d = 1;
        *m += 1;
        if *m > 12 {
            *m = 1;
            *y += 1;
        }
    }
}

fn main() {
    let d = TICKERS.len();
    let corr: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.55 }).collect())
        .collect();
    let spec = CopulaSpec::student_t(corr, 4.0);
    let uniforms = sample_reference(&spec, DAYS - 1, SEED).expect("sampling");

    // per-asset daily drift and volatility
    let sigma: Vec<f64> = (0..d).map(|j| 0.015 + 0.0012 * j as f64).collect();
    let mu: Vec<f64> = (0..d).map(|j| 2e-4 + 3e-5 * j as f64).collect();
    let start: Vec<f64> = (0..d).map(|j| 40.0 + 35.0 * j as f64).collect();

    let mut prices = start.clone();
    let (mut y, mut m, mut day) = (2018u32, 1u32, 2u32);
    let mut out = String::from("date,");
    out.push_str(&TICKERS.join(","));
    out.push('\n');
    for t in 0..DAYS {
        let _ = write!(out, "{y:04}-{m:02}-{day:02}");
        for p in &prices {
            let _ = write!(out, ",{p:.4}");
        }
        out.push('\n');
        if t + 1 < DAYS {
            for j in 0..d {
                let z = std_normal_inv_cdf(uniforms[[t, j]]);
                prices[j] *= (mu[j] + sigma[j] * z).exp();
            }
            next_date(&mut y, &mut m, &mut day);
        }
    }
    std::fs::create_dir_all("data").expect("data dir");
    std::fs::write("data/prices10.csv", out).expect("write csv");
    println!("wrote data/prices10.csv ({DAYS} rows, {d} tickers)");
}
