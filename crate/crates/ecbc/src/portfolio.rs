//! Scenario-based mean-CVaR portfolio optimization driven by samples from a
//! fitted copula: price ingestion, Monte Carlo sizing from the law of the
//! iterated logarithm, the optimizer, and the end-to-end pipeline with
//! uncertainty quantification.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::bayes::{fit_model, DegreeEstimate, McmcConfig, PriorSpec};
use crate::ecbc::DegreeVector;
use crate::error::{Error, Result};
use crate::lp::{min_cvar, var_cvar_from_losses};
use crate::ranks::{compute_ranks, Dataset, TiePolicy};
use crate::sampling::sample_ecbc;
use crate::seed::split_seed;

/// Raw price table as read from CSV.
#[derive(Debug, Clone)]
pub struct PriceTable {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub prices: Array2<f64>,
}

/// Log-returns with their calendar dates (carried, not modeled).
#[derive(Debug, Clone)]
pub struct ReturnSeries {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub returns: Array2<f64>,
}

impl ReturnSeries {
    pub fn t(&self) -> usize {
        self.returns.nrows()
    }

    pub fn d(&self) -> usize {
        self.returns.ncols()
    }
}

/// Where a scenario matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Ecbc,
    Historical,
}

/// Simulated or historical return scenarios.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub x: Array2<f64>,
    pub source: ScenarioSource,
}

/// Optimal weights and the two risk measures at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub weights: Vec<f64>,
    pub var: f64,
    pub cvar: f64,
    pub level: f64,
}

/// Inputs of one CVaR optimization.
#[derive(Debug, Clone)]
pub struct CvarLp {
    pub scenarios: ScenarioSet,
    pub level: f64,
    pub weight_floor: f64,
}

fn valid_iso_date(s: &str) -> bool {
    let bytes = s.as_bytes();
    bytes.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && bytes
            .iter()
            .enumerate()
            .all(|(i, &b)| i == 4 || i == 7 || b.is_ascii_digit())
}

/// Read a price CSV with header `date,ticker1,...,tickerd`, ISO dates in
/// strictly increasing order, all prices positive.
pub fn load_prices_csv(path: &Path) -> Result<PriceTable> {
    let file = std::fs::File::open(path)?;
    read_prices(file)
}

/// Same as [`load_prices_csv`] over any reader.
pub fn read_prices<R: Read>(reader: R) -> Result<PriceTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::InvalidInput(
            "price CSV needs a leading 'date' column and at least one ticker".into(),
        ));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let d = tickers.len();
    let mut dates = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::InvalidInput(format!(
                "row {}: expected {} fields, found {}",
                line + 2,
                d + 1,
                record.len()
            )));
        }
        let date = record.get(0).unwrap().trim().to_string();
        if !valid_iso_date(&date) {
            return Err(Error::InvalidInput(format!(
                "row {}: unparseable date {date:?}",
                line + 2
            )));
        }
        if let Some(prev) = dates.last() {
            if &date <= prev {
                return Err(Error::InvalidInput(format!(
                    "row {}: dates must be strictly increasing",
                    line + 2
                )));
            }
        }
        for (col, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "row {}, column {}: unparseable price {field:?}",
                    line + 2,
                    col + 2
                ))
            })?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "row {}, column {}: price must be positive",
                    line + 2,
                    col + 2
                )));
            }
            rows.push(value);
        }
        dates.push(date);
    }
    let t = dates.len();
    if t < 2 {
        return Err(Error::InvalidInput("need at least two price rows".into()));
    }
    let prices = Array2::from_shape_vec((t, d), rows)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(PriceTable {
        dates,
        tickers,
        prices,
    })
}

/// Log-returns X_tj = ln(P_tj / P_(t-1)j); one fewer row than prices.
pub fn to_log_returns(prices: &PriceTable) -> ReturnSeries {
    let t = prices.prices.nrows() - 1;
    let d = prices.prices.ncols();
    let returns = Array2::from_shape_fn((t, d), |(i, j)| {
        (prices.prices[[i + 1, j]] / prices.prices[[i, j]]).ln()
    });
    ReturnSeries {
        dates: prices.dates[1..].to_vec(),
        tickers: prices.tickers.clone(),
        returns,
    }
}

/// Smallest integer M >= 16 with M / ln ln M >= 2 lambda_max / epsilon^2,
/// found by bisection on the eventually monotone left side.
pub fn lil_sample_size(epsilon: f64, lambda_max: f64) -> usize {
    assert!(epsilon > 0.0 && lambda_max > 0.0);
    let target = 2.0 * lambda_max / (epsilon * epsilon);
    let f = |m: usize| m as f64 / (m as f64).ln().ln();
    if f(16) >= target {
        return 16;
    }
    let mut lo = 16usize;
    let mut hi = 32usize;
    while f(hi) < target {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest eigenvalue of the sample covariance of the returns, by power
/// iteration to relative tolerance 1e-10. Needs T > d.
pub fn max_cov_eigenvalue(returns: &ReturnSeries) -> Result<f64> {
    let t = returns.t();
    let d = returns.d();
    if t <= d {
        return Err(Error::InvalidInput(format!(
            "covariance needs more observations than assets (T={t}, d={d}); \
             sparse estimators are out of scope"
        )));
    }
    let means: Vec<f64> = (0..d)
        .map(|j| returns.returns.column(j).sum() / t as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for (i, row) in cov.iter_mut().enumerate() {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..t {
                acc += (returns.returns[[k, i]] - means[i]) * (returns.returns[[k, j]] - means[j]);
            }
            let c = acc / (t as f64 - 1.0);
            row[j] = c;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            cov[i][j] = cov[j][i];
        }
    }
    // power iteration with a deterministic, non-symmetric start
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + (j as f64 + 1.0) * 1e-3).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                w[i] += cov[i][j] * v[j];
            }
        }
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm == 0.0 {
            return Ok(0.0);
        }
        let next = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        w.iter_mut().for_each(|x| *x /= wnorm);
        let done = (next - lambda).abs() <= 1e-10 * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        v = w;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// Solve one scenario CVaR program.
pub fn optimize_cvar(lp: &CvarLp) -> Result<PortfolioSolution> {
    let opt = min_cvar(lp.scenarios.x.view(), lp.level, lp.weight_floor)?;
    Ok(PortfolioSolution {
        weights: opt.weights,
        var: opt.var,
        cvar: opt.cvar,
        level: lp.level,
    })
}

/// VaR/CVaR of a fixed-weight portfolio on historical returns; consistent
/// with [`optimize_cvar`] at pinned weights.
pub fn empirical_var_cvar(returns: &ReturnSeries, weights: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if weights.len() != returns.d() {
        return Err(Error::DimensionMismatch {
            expected: returns.d(),
            got: weights.len(),
        });
    }
    let losses: Vec<f64> = returns
        .returns
        .rows()
        .into_iter()
        .map(|row| -row.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>())
        .collect();
    Ok(var_cvar_from_losses(&losses, alpha))
}

/// Empirical quantile transform: maps u in (0,1) to the order statistic
/// X_(ceil(u (T+1)) clamped to T), the inverse of the 1/(T+1)-scaled
/// empirical CDF. Outputs are always observed sample values.
pub fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let t = sorted.len();
    let idx = ((u * (t as f64 + 1.0)).ceil() as usize).clamp(1, t);
    sorted[idx - 1]
}

/// One level's outcomes across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: f64,
    pub solutions: Vec<PortfolioSolution>,
    pub historical: PortfolioSolution,
}

/// Full pipeline output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    pub tickers: Vec<String>,
    pub degrees: DegreeVector,
    pub degree_estimate: DegreeEstimate,
    pub lambda_max: f64,
    pub scenarios_per_replicate: usize,
    pub levels: Vec<LevelReport>,
}

/// The end-to-end pipeline: fit the copula on return ranks by posterior-mode
/// degrees, then repeatedly (1) draw `m_scenarios` pseudo-observations from
/// the fit, (2) push them through the per-asset empirical quantile
/// transform, (3) optimize CVaR at every level. Historical solutions on the
/// raw returns sit alongside the replicate distributions.
pub fn portfolio_pipeline(
    returns: &ReturnSeries,
    levels: &[f64],
    v_min: f64,
    m_scenarios: usize,
    n_replicates: usize,
    mcmc: &McmcConfig,
    seed: u64,
) -> Result<PipelineResult> {
    if returns.t() <= returns.d() {
        return Err(Error::InvalidInput(
            "pipeline needs more return rows than assets".into(),
        ));
    }
    if levels.is_empty() || n_replicates < 1 {
        return Err(Error::InvalidInput("need at least one level and replicate".into()));
    }
    let data = Dataset::new(returns.returns.clone())?;
    let ranks = compute_ranks(&data, TiePolicy::RandomSeeded, seed);
    let (model, estimate, _trace) = fit_model(&ranks, &PriorSpec::flexible(), mcmc)?;
    let lambda_max = max_cov_eigenvalue(returns)?;
    // per-asset sorted samples for the quantile transform
    let d = returns.d();
    let t = returns.t();
    let sorted_cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = returns.returns.column(j).to_vec();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            col
        })
        .collect();
    let mut levels_out = Vec::with_capacity(levels.len());
    let mut replicate_solutions: Vec<Vec<PortfolioSolution>> =
        vec![Vec::with_capacity(n_replicates); levels.len()];
    for r in 0..n_replicates {
        let draws = sample_ecbc(&model, m_scenarios, split_seed(seed, 1_000 + r as u64))?;
        let mut x = Array2::<f64>::zeros((m_scenarios, d));
        for k in 0..m_scenarios {
            for j in 0..d {
                x[[k, j]] = empirical_quantile(&sorted_cols[j], draws[[k, j]]);
            }
        }
        let scenarios = ScenarioSet {
            x,
            source: ScenarioSource::Ecbc,
        };
        for (li, &level) in levels.iter().enumerate() {
            let lp = CvarLp {
                scenarios: scenarios.clone(),
                level,
                weight_floor: v_min,
            };
            replicate_solutions[li].push(optimize_cvar(&lp)?);
        }
    }
    let _ = t;
    for (li, &level) in levels.iter().enumerate() {
        let lp = CvarLp {
            scenarios: ScenarioSet {
                x: returns.returns.clone(),
                source: ScenarioSource::Historical,
            },
            level,
            weight_floor: v_min,
        };
        let historical = optimize_cvar(&lp)?;
        levels_out.push(LevelReport {
            level,
            solutions: std::mem::take(&mut replicate_solutions[li]),
            historical,
        });
    }
    Ok(PipelineResult {
        tickers: returns.tickers.clone(),
        degrees: model.degrees().clone(),
        degree_estimate: estimate,
        lambda_max,
        scenarios_per_replicate: m_scenarios,
        levels: levels_out,
    })
}

/// Covariance helper exposed for tests and the CLI manifest: the sample
/// covariance matrix itself.
pub fn sample_covariance(returns: &ReturnSeries) -> Array2<f64> {
    let t = returns.t();
    let d = returns.d();
    let means: Vec<f64> = (0..d)
        .map(|j| returns.returns.column(j).sum() / t as f64)
        .collect();
    Array2::from_shape_fn((d, d), |(i, j)| {
        let mut acc = 0.0;
        for k in 0..t {
            acc += (returns.returns[[k, i]] - means[i]) * (returns.returns[[k, j]] - means[j]);
        }
        acc / (t as f64 - 1.0)
    })
}

pub use crate::lp::CvarOptimum;

/// Convenience view used by callers that already hold a scenario matrix.
pub fn optimize_cvar_matrix(
    scenarios: ArrayView2<'_, f64>,
    level: f64,
    weight_floor: f64,
) -> Result<PortfolioSolution> {
    let opt = min_cvar(scenarios, level, weight_floor)?;
    Ok(PortfolioSolution {
        weights: opt.weights,
        var: opt.var,
        cvar: opt.cvar,
        level,
    })
}
