//! Monte Carlo comparison of copula estimators: replicate generation,
//! integrated squared bias / variance / MSE, and the comparator estimators
//! (empirical beta copula, pointwise-degree empirical Bernstein copula).

use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use std::collections::BTreeMap;
use std::io::Write;

use crate::bayes::{fit_model, McmcConfig, PriorSpec};
use crate::ecbc::for_each_cell;
use crate::error::{Error, Result};
use crate::numeric::binom_pmf_vec;
use crate::ranks::{compute_ranks, empirical_copula, Dataset, RankMatrix, TiePolicy};
use crate::reference::{cdf_reference, sample_reference, CachedCdf, CopulaSpec};
use crate::seed::split_seed;

/// Estimators entering the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    EcbcFlexible,
    EcbcEqual,
    Beta,
    BernsteinJanssen,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::EcbcFlexible => "ecbc_flexible",
            EstimatorKind::EcbcEqual => "ecbc_equal",
            EstimatorKind::Beta => "beta",
            EstimatorKind::BernsteinJanssen => "bernstein_janssen",
        }
    }
}

/// The three global performance measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerformanceTriple {
    pub isb: f64,
    pub iv: f64,
    pub imse: f64,
}

/// Monte Carlo study configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub spec: CopulaSpec,
    pub n: usize,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub eval_points: usize,
    pub seed: u64,
    pub mcmc: McmcConfig,
}

impl BenchmarkConfig {
    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n < 2 || self.replicates < 2 || self.eval_points < 100 {
            return Err(Error::InvalidInput(
                "benchmark needs n >= 2, replicates >= 2, eval_points >= 100".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators selected".into()));
        }
        Ok(())
    }
}

/// Empirical beta copula: (1/n) sum_i prod_j BetaCDF(u_j; R_ij, n+1-R_ij).
pub fn beta_copula_cdf(ranks: &RankMatrix, u: &[f64]) -> Result<f64> {
    if u.len() != ranks.d() {
        return Err(Error::DimensionMismatch {
            expected: ranks.d(),
            got: u.len(),
        });
    }
    let n = ranks.n();
    // one distribution per rank value, reused across observations
    let dists: Vec<BetaDist> = (1..=n)
        .map(|r| BetaDist::new(r as f64, (n + 1 - r) as f64).expect("valid shapes"))
        .collect();
    let mut acc = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for (j, &uj) in u.iter().enumerate() {
            prod *= dists[ranks.rank(i, j) as usize - 1].cdf(uj);
            if prod == 0.0 {
                break;
            }
        }
        acc += prod;
    }
    Ok(acc / n as f64)
}

/// Empirical Bernstein copula with a single degree in both coordinates and
/// coefficients from the rank-based empirical copula; not necessarily a
/// genuine copula.
pub fn empirical_bernstein_cdf(ranks: &RankMatrix, m: usize, u: &[f64]) -> Result<f64> {
    if u.len() != ranks.d() {
        return Err(Error::DimensionMismatch {
            expected: ranks.d(),
            got: u.len(),
        });
    }
    let n = ranks.n();
    let d = ranks.d();
    // per-dimension binomial tail sums
    let suffix: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let pmf = binom_pmf_vec(m, u[j]);
            let mut s = vec![0.0; m + 2];
            for k in (0..=m).rev() {
                s[k] = s[k + 1] + pmf[k];
            }
            s
        })
        .collect();
    let scale = (n + 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for (j, sfx) in suffix.iter().enumerate() {
            // indicator R/(n+1) <= k/m kicks in at k = ceil(m R / (n+1))
            let kmin = (m as f64 * ranks.rank(i, j) as f64 / scale).ceil() as usize;
            prod *= sfx[kmin.min(m + 1)];
            if prod == 0.0 {
                break;
            }
        }
        acc += prod;
    }
    Ok(acc / n as f64)
}

/// Literal tensor evaluation of the empirical Bernstein copula; oracle for
/// [`empirical_bernstein_cdf`].
pub fn empirical_bernstein_cdf_naive(ranks: &RankMatrix, m: usize, u: &[f64]) -> Result<f64> {
    let d = ranks.d();
    if (m as u128 + 1).pow(d as u32) > 10_000_000 {
        return Err(Error::SizeGuard("bernstein tensor too large".into()));
    }
    let pmf: Vec<Vec<f64>> = (0..d).map(|j| binom_pmf_vec(m, u[j])).collect();
    let dims = vec![m + 1; d];
    let mut acc = 0.0;
    for_each_cell(&dims, |cell| {
        let grid: Vec<f64> = cell.iter().map(|&k| k as f64 / m as f64).collect();
        let mut w = empirical_copula(ranks, &grid).expect("grid point in cube");
        if w > 0.0 {
            for j in 0..d {
                w *= pmf[j][cell[j]];
            }
            acc += w;
        }
    });
    Ok(acc)
}

/// Pointwise MSE-optimal equal degree for the bivariate empirical Bernstein
/// copula: floor((4 b^2 / V)^(2/3) n^(2/3)), with the copula partials taken
/// by central differences on the reference CDF. Undefined where the second
/// partials vanish (e.g. everywhere for independence).
pub fn janssen_m0(spec: &CopulaSpec, u: &[f64], n: usize) -> Result<usize> {
    if spec.dim() != 2 || u.len() != 2 {
        return Err(Error::InvalidInput(
            "the pointwise degree rule is bivariate".into(),
        ));
    }
    let h = 1e-5;
    // finite differences need room around u
    let u1 = u[0].clamp(3.0 * h, 1.0 - 3.0 * h);
    let u2 = u[1].clamp(3.0 * h, 1.0 - 3.0 * h);
    let c = |a: f64, b: f64| cdf_reference(spec, &[a, b]);
    let c00 = c(u1, u2)?;
    let cp1 = c(u1 + h, u2)?;
    let cm1 = c(u1 - h, u2)?;
    let cp2 = c(u1, u2 + h)?;
    let cm2 = c(u1, u2 - h)?;
    let d1 = (cp1 - cm1) / (2.0 * h);
    let d2 = (cp2 - cm2) / (2.0 * h);
    let dd1 = (cp1 - 2.0 * c00 + cm1) / (h * h);
    let dd2 = (cp2 - 2.0 * c00 + cm2) / (h * h);
    let b2 = 0.5 * (u1 * (1.0 - u1) * dd1 + u2 * (1.0 - u2) * dd2);
    let v = d1 * (1.0 - d1) * (u1 * (1.0 - u1) / std::f64::consts::PI).sqrt()
        + d2 * (1.0 - d2) * (u2 * (1.0 - u2) / std::f64::consts::PI).sqrt();
    // central differences on an exact CDF carry O(eps/h^2) ~ 1e-6 noise, so
    // a vanishing curvature shows up at that scale, not at 1e-12
    if b2.abs() < 1e-5 {
        return Err(Error::Domain(
            "optimal degree undefined: second partials vanish".into(),
        ));
    }
    let m0 = (4.0 * b2 / v).abs().powf(2.0 / 3.0) * (n as f64).powf(2.0 / 3.0);
    Ok((m0.floor() as usize).max(1))
}

/// Empirical Bernstein copula with the pointwise degree of [`janssen_m0`].
pub fn bernstein_janssen_cdf(ranks: &RankMatrix, spec: &CopulaSpec, u: &[f64]) -> Result<f64> {
    let m0 = janssen_m0(spec, u, ranks.n())?;
    empirical_bernstein_cdf(ranks, m0, u)
}

/// ISB/IV/IMSE of an estimate matrix (replicates x points) against truth,
/// with 1/N averaging so IMSE = ISB + IV exactly.
pub fn performance_triple(estimates: ArrayView2<'_, f64>, truth: &[f64]) -> PerformanceTriple {
    let (n_rep, n_pts) = estimates.dim();
    assert_eq!(n_pts, truth.len());
    let mut isb = 0.0;
    let mut iv = 0.0;
    let mut imse = 0.0;
    for q in 0..n_pts {
        let col = estimates.column(q);
        let mean = col.sum() / n_rep as f64;
        isb += (mean - truth[q]).powi(2);
        iv += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_rep as f64;
        imse += col.iter().map(|x| (x - truth[q]).powi(2)).sum::<f64>() / n_rep as f64;
    }
    let qf = n_pts as f64;
    PerformanceTriple {
        isb: isb / qf,
        iv: iv / qf,
        imse: imse / qf,
    }
}

/// Run the replicate study. Estimators that do not apply to the configured
/// copula (the pointwise-degree Bernstein outside d = 2 or where its degree
/// is undefined) come back as `None`, mirroring empty table cells.
pub fn run_benchmark(
    config: &BenchmarkConfig,
) -> Result<BTreeMap<EstimatorKind, Option<PerformanceTriple>>> {
    config.validate()?;
    let d = config.spec.dim();
    let q = config.eval_points;
    // common evaluation points and cached truth
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, 0xe7a1));
    let points: Vec<Vec<f64>> = (0..q)
        .map(|_| (0..d).map(|_| rng.gen_range(1e-9..1.0)).collect())
        .collect();
    let cache = CachedCdf::new(config.spec.clone());
    let truth: Vec<f64> = points
        .iter()
        .map(|u| cache.eval(u))
        .collect::<Result<_>>()?;
    // pointwise degrees are replicate-independent
    let janssen_wanted = config.estimators.contains(&EstimatorKind::BernsteinJanssen);
    let janssen_degrees: Option<Vec<Option<usize>>> = if janssen_wanted && d == 2 {
        Some(
            points
                .iter()
                .map(|u| janssen_m0(&config.spec, u, config.n).ok())
                .collect(),
        )
    } else {
        None
    };
    let janssen_feasible = janssen_degrees
        .as_ref()
        .map(|v| v.iter().any(|x| x.is_some()))
        .unwrap_or(false);

    struct ReplicateOut {
        per_estimator: BTreeMap<EstimatorKind, Vec<f64>>,
    }
    let replicates: Vec<Result<ReplicateOut>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let data_seed = split_seed(config.seed, 0x0da7a + r as u64);
            let draws = sample_reference(&config.spec, config.n, data_seed)?;
            let data = Dataset::new(draws)?;
            let ranks = compute_ranks(&data, TiePolicy::RandomSeeded, data_seed);
            let mut out = BTreeMap::new();
            for &kind in &config.estimators {
                let values: Option<Vec<f64>> = match kind {
                    EstimatorKind::EcbcFlexible | EstimatorKind::EcbcEqual => {
                        let prior = if kind == EstimatorKind::EcbcFlexible {
                            PriorSpec::flexible()
                        } else {
                            PriorSpec::equal()
                        };
                        let mcmc = McmcConfig {
                            seed: split_seed(config.seed, 0xfee1 + r as u64),
                            ..config.mcmc.clone()
                        };
                        let (model, _, _) = fit_model(&ranks, &prior, &mcmc)?;
                        Some(
                            points
                                .iter()
                                .map(|u| model.cdf(u))
                                .collect::<Result<_>>()?,
                        )
                    }
                    EstimatorKind::Beta => Some(
                        points
                            .iter()
                            .map(|u| beta_copula_cdf(&ranks, u))
                            .collect::<Result<_>>()?,
                    ),
                    EstimatorKind::BernsteinJanssen => match &janssen_degrees {
                        Some(degrees) if janssen_feasible => {
                            let mut vals = Vec::with_capacity(points.len());
                            for (u, m0) in points.iter().zip(degrees) {
                                vals.push(match m0 {
                                    Some(m) => empirical_bernstein_cdf(&ranks, *m, u)?,
                                    None => f64::NAN,
                                });
                            }
                            Some(vals)
                        }
                        _ => None,
                    },
                };
                if let Some(v) = values {
                    out.insert(kind, v);
                }
            }
            Ok(ReplicateOut { per_estimator: out })
        })
        .collect();
    let mut per_estimator: BTreeMap<EstimatorKind, Vec<Vec<f64>>> = BTreeMap::new();
    for rep in replicates {
        let rep = rep?;
        for (kind, vals) in rep.per_estimator {
            per_estimator.entry(kind).or_default().push(vals);
        }
    }
    let mut results = BTreeMap::new();
    for &kind in &config.estimators {
        let triple = per_estimator.get(&kind).map(|rows| {
            // drop points that any replicate could not evaluate
            let keep: Vec<usize> = (0..q)
                .filter(|&col| rows.iter().all(|r| r[col].is_finite()))
                .collect();
            let mat = Array2::from_shape_fn((rows.len(), keep.len()), |(r, c)| {
                rows[r][keep[c]]
            });
            let t: Vec<f64> = keep.iter().map(|&c| truth[c]).collect();
            performance_triple(mat.view(), &t)
        });
        results.insert(kind, triple);
    }
    Ok(results)
}

/// Write benchmark results as CSV rows
/// (copula, estimator, n, isb_x1e4, iv_x1e4, imse_x1e4), `NA` when absent.
pub fn write_benchmark_csv<W: Write>(
    out: W,
    copula_label: &str,
    n: usize,
    results: &BTreeMap<EstimatorKind, Option<PerformanceTriple>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["copula", "estimator", "n", "isb_x1e4", "iv_x1e4", "imse_x1e4"])?;
    for (kind, triple) in results {
        let record = match triple {
            Some(t) => vec![
                copula_label.to_string(),
                kind.label().to_string(),
                n.to_string(),
                format!("{:.6}", t.isb * 1e4),
                format!("{:.6}", t.iv * 1e4),
                format!("{:.6}", t.imse * 1e4),
            ],
            None => vec![
                copula_label.to_string(),
                kind.label().to_string(),
                n.to_string(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
            ],
        };
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
