//! Empirical-Bayes selection of the Bernstein degrees.
//!
//! The hierarchical model treats each pseudo-observation coordinate as
//! Beta(L+1, m_j - L) with L = floor(m_j V), where V is drawn from the
//! checkerboard copula through a latent observation assignment and a
//! uniform jitter. The jitter is marginalized analytically into an
//! interval-overlap mixture (see [`obs_dim_loglik`]), the assignments stay
//! latent and are Gibbs-updated, and the degrees and their hyperparameters
//! move by Metropolis steps under shifted-Poisson priors
//! m_j - 1 | alpha_j ~ Poisson(n^alpha_j), alpha_j ~ Uniform(1/3, 2/3).

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use crate::ecbc::{DegreeVector, EcbcModel};
use crate::error::{Error, Result};
use crate::numeric::{beta_pdf_single, beta_pdf_vec, poisson_logpmf};
use crate::ranks::RankMatrix;
use crate::seed::split_seed;

/// Whether degrees vary per coordinate or are tied to a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Flexible,
    Equal,
}

/// Prior on (m, alpha).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

impl PriorSpec {
    pub fn flexible() -> Self {
        Self {
            kind: PriorKind::Flexible,
            alpha_lo: 1.0 / 3.0,
            alpha_hi: 2.0 / 3.0,
        }
    }

    pub fn equal() -> Self {
        Self {
            kind: PriorKind::Equal,
            ..Self::flexible()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_lo && self.alpha_lo < self.alpha_hi && self.alpha_hi < 1.0) {
            return Err(Error::InvalidInput(
                "prior needs 0 < alpha_lo < alpha_hi < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sampler configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    pub samples_per_chain: usize,
    pub seed: u64,
    pub m_proposal_halfwidth: u32,
    /// Test hook: drop the likelihood so the chain targets the prior.
    #[serde(default)]
    pub prior_only: bool,
    /// Test hook: record every degree move for offline replay.
    #[serde(default)]
    pub record_moves: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            burn_in: 2000,
            samples_per_chain: 2500,
            seed: 0,
            m_proposal_halfwidth: 3,
            prior_only: false,
            record_moves: false,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.chains < 1 || self.samples_per_chain < 1 || self.m_proposal_halfwidth < 1 {
            return Err(Error::InvalidInput(
                "need chains >= 1, samples_per_chain >= 1, halfwidth >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded degree move (only kept when `record_moves` is set).
#[derive(Debug, Clone)]
pub struct MoveRecord {
    pub chain: usize,
    pub sweep: usize,
    pub dim: usize,
    pub m_from: u32,
    pub m_to: i64,
    pub alpha: f64,
    pub log_u: f64,
    pub accepted: bool,
    pub assignment: Vec<u32>,
}

/// Post-burn-in samples of (m, alpha) across chains.
#[derive(Debug, Clone)]
pub struct McmcTrace {
    pub m_samples: Array2<u32>,
    pub alpha_samples: Array2<f64>,
    pub chain_ids: Vec<u32>,
    pub samples_per_chain: usize,
    pub moves: Vec<MoveRecord>,
}

impl McmcTrace {
    pub fn len(&self) -> usize {
        self.m_samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.m_samples.ncols()
    }

    /// Fraction of samples in which all coordinates share one degree.
    pub fn fraction_equal_degrees(&self) -> f64 {
        let hits = self
            .m_samples
            .rows()
            .into_iter()
            .filter(|r| r.iter().all(|&m| m == r[0]))
            .count();
        hits as f64 / self.len() as f64
    }

    /// Write the trace as CSV: chain, iteration, m_1..m_d, alpha_1..alpha_d.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.d();
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend((1..=d).map(|j| format!("m_{j}")));
        header.extend((1..=d).map(|j| format!("alpha_{j}")));
        w.write_record(&header)?;
        for (row, &chain) in self.chain_ids.iter().enumerate() {
            let iter = row % self.samples_per_chain;
            let mut rec = vec![chain.to_string(), iter.to_string()];
            rec.extend((0..d).map(|j| self.m_samples[[row, j]].to_string()));
            rec.extend((0..d).map(|j| format!("{}", self.alpha_samples[[row, j]])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior-mode degrees with per-dimension frequency tables and split
/// R-hat diagnostics (reported, not enforced).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeEstimate {
    pub modes: DegreeVector,
    pub frequency_tables: Vec<BTreeMap<u32, u32>>,
    pub rhat: Vec<f64>,
}

/// Log prior pmf of a degree: m - 1 ~ Poisson(n^alpha); zero mass below 1.
pub fn log_shifted_poisson_prior(m: i64, alpha: f64, n: usize) -> f64 {
    if m < 1 {
        return f64::NEG_INFINITY;
    }
    let lambda = (n as f64).powf(alpha);
    poisson_logpmf((m - 1) as u64, lambda)
}

/// Cells of the degree-m partition hit by rank's checkerboard interval
/// [(rank-1)/n, rank/n), with overlap masses as exact integer numerators
/// over m. The numerators always sum to m.
pub fn overlap_numerators(rank: u32, m: usize, n: usize) -> (usize, Vec<u64>) {
    let (r, m64, n64) = (rank as u64, m as u64, n as u64);
    let k_lo = m64 * (r - 1) / n64;
    let k_hi = (m64 * r - 1) / n64;
    let nums = (k_lo..=k_hi)
        .map(|k| ((k + 1) * n64).min(r * m64) - (k * n64).max((r - 1) * m64))
        .collect();
    (k_lo as usize, nums)
}

/// Log-likelihood of one pseudo-observation coordinate under degree m with
/// the uniform jitter marginalized:
/// log sum_k p_k Beta(u; k+1, m-k) over the cells overlapping the rank's
/// checkerboard interval, p_k = n * overlap length.
pub fn obs_dim_loglik(u: f64, rank: u32, m: usize, n: usize) -> Result<f64> {
    if !(0.0 < u && u < 1.0) {
        return Err(Error::Domain("pseudo-observation must lie in (0,1)".into()));
    }
    if rank < 1 || rank as usize > n || m < 1 {
        return Err(Error::InvalidInput(format!(
            "need 1 <= rank <= n and m >= 1, got rank={rank} m={m} n={n}"
        )));
    }
    let (k_lo, nums) = overlap_numerators(rank, m, n);
    let mut acc = 0.0;
    for (t, &num) in nums.iter().enumerate() {
        acc += num as f64 * beta_pdf_single(u, k_lo + t, m);
    }
    Ok((acc / m as f64).ln())
}

// Mixture likelihood values for every (observation rank, assignment rank)
// pair at a fixed degree; entry (r, s) at index (r-1)*n + (s-1).
struct MixTable {
    values: Vec<f64>,
    built_for_m: u32,
}

fn build_mix_table(n: usize, m: usize) -> Vec<f64> {
    let cells: Vec<(usize, Vec<u64>)> =
        (1..=n as u32).map(|s| overlap_numerators(s, m, n)).collect();
    let mut table = vec![0.0; n * n];
    let mf = m as f64;
    for r in 1..=n {
        let u = r as f64 / (n as f64 + 1.0);
        let beta = beta_pdf_vec(m, u);
        let row = &mut table[(r - 1) * n..r * n];
        for (s, (k_lo, nums)) in cells.iter().enumerate() {
            let mut acc = 0.0;
            for (t, &num) in nums.iter().enumerate() {
                acc += num as f64 * beta[k_lo + t];
            }
            row[s] = acc / mf;
        }
    }
    table
}

struct Chain<'a> {
    ranks: &'a RankMatrix,
    prior: &'a PriorSpec,
    cfg: &'a McmcConfig,
    chain_idx: usize,
    rng: ChaCha8Rng,
    n: usize,
    d: usize,
    pseudo: Array2<f64>,
    m: Vec<u32>,
    alpha: Vec<f64>,
    assignment: Vec<usize>,
    tables: Vec<MixTable>,
    // scratch: per-candidate Gibbs weights and 0-based rank indices
    weights: Vec<f64>,
    rank_idx: Vec<Vec<usize>>,
}

impl<'a> Chain<'a> {
    fn new(
        ranks: &'a RankMatrix,
        prior: &'a PriorSpec,
        cfg: &'a McmcConfig,
        chain_idx: usize,
    ) -> Self {
        let n = ranks.n();
        let d = ranks.d();
        let scale = 1.0 / (n as f64 + 1.0);
        let pseudo = Array2::from_shape_fn((n, d), |(i, j)| ranks.rank(i, j) as f64 * scale);
        let m0 = ((n as f64).sqrt().round() as u32).max(2);
        let rank_idx = (0..d)
            .map(|j| (0..n).map(|i| ranks.rank(i, j) as usize - 1).collect())
            .collect();
        Self {
            ranks,
            prior,
            cfg,
            chain_idx,
            rng: ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, chain_idx as u64)),
            n,
            d,
            pseudo,
            m: vec![m0; d],
            alpha: vec![0.5; d],
            assignment: (0..n).collect(),
            tables: Vec::new(),
            weights: vec![0.0; n],
            rank_idx,
        }
    }

    fn refresh_tables(&mut self) {
        if self.cfg.prior_only {
            return;
        }
        let wanted = match self.prior.kind {
            PriorKind::Flexible => self.d,
            PriorKind::Equal => 1,
        };
        if self.tables.is_empty() {
            for j in 0..wanted {
                self.tables.push(MixTable {
                    values: build_mix_table(self.n, self.m[j] as usize),
                    built_for_m: self.m[j],
                });
            }
            return;
        }
        for (j, table) in self.tables.iter_mut().enumerate() {
            let m = self.m[j];
            if table.built_for_m != m {
                table.values = build_mix_table(self.n, m as usize);
                table.built_for_m = m;
            }
        }
    }

    fn table_for_dim(&self, j: usize) -> &MixTable {
        match self.prior.kind {
            PriorKind::Flexible => &self.tables[j],
            PriorKind::Equal => &self.tables[0],
        }
    }

    fn gibbs_assignments(&mut self) {
        for i in 0..self.n {
            let mut total = 0.0;
            for p in 0..self.n {
                let mut w = 1.0;
                for j in 0..self.d {
                    let table = self.table_for_dim(j);
                    let r = self.rank_idx[j][i];
                    let s = self.rank_idx[j][p];
                    w *= table.values[r * self.n + s];
                }
                self.weights[p] = w;
                total += w;
            }
            if total <= 0.0 {
                continue;
            }
            let t: f64 = self.rng.gen::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = self.n - 1;
            for (p, &w) in self.weights.iter().enumerate() {
                cum += w;
                if t < cum {
                    pick = p;
                    break;
                }
            }
            self.assignment[i] = pick;
        }
    }

    /// Direct log-likelihood of dimension j under degree m at the current
    /// assignments; the replayable counterpart of the table values.
    fn dim_loglik(&self, j: usize, m: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let rank = self.ranks.rank(self.assignment[i], j);
            acc += obs_dim_loglik(self.pseudo[[i, j]], rank, m, self.n)
                .expect("interior pseudo-observation");
        }
        acc
    }

    fn propose_step(&mut self) -> i64 {
        let w = self.cfg.m_proposal_halfwidth as i64;
        let k = self.rng.gen_range(0..2 * w);
        if k < w {
            k - w
        } else {
            k - w + 1
        }
    }

    fn update_degree(&mut self, dims: &[usize], sweep: usize, moves: &mut Vec<MoveRecord>) {
        let j0 = dims[0];
        let m_cur = self.m[j0];
        let step = self.propose_step();
        let m_prop = m_cur as i64 + step;
        let log_u: f64 = self.rng.gen::<f64>().ln();
        let mut log_ratio = f64::NEG_INFINITY;
        if m_prop >= 1 {
            let mut cur = log_shifted_poisson_prior(m_cur as i64, self.alpha[j0], self.n);
            let mut prop = log_shifted_poisson_prior(m_prop, self.alpha[j0], self.n);
            if !self.cfg.prior_only {
                for &j in dims {
                    cur += self.dim_loglik(j, m_cur as usize);
                    prop += self.dim_loglik(j, m_prop as usize);
                }
            }
            log_ratio = prop - cur;
        }
        let accepted = log_u < log_ratio;
        if self.cfg.record_moves {
            moves.push(MoveRecord {
                chain: self.chain_idx,
                sweep,
                dim: j0,
                m_from: m_cur,
                m_to: m_prop,
                alpha: self.alpha[j0],
                log_u,
                accepted,
                assignment: self.assignment.iter().map(|&p| p as u32).collect(),
            });
        }
        if accepted {
            for &j in dims {
                self.m[j] = m_prop as u32;
            }
        }
    }

    fn update_alpha(&mut self, dims: &[usize]) {
        let j0 = dims[0];
        let prop: f64 = self.rng.gen_range(self.prior.alpha_lo..self.prior.alpha_hi);
        let cur_lp = log_shifted_poisson_prior(self.m[j0] as i64, self.alpha[j0], self.n);
        let prop_lp = log_shifted_poisson_prior(self.m[j0] as i64, prop, self.n);
        let log_u: f64 = self.rng.gen::<f64>().ln();
        if log_u < prop_lp - cur_lp {
            for &j in dims {
                self.alpha[j] = prop;
            }
        }
    }

    fn sweep(&mut self, sweep: usize, moves: &mut Vec<MoveRecord>) {
        self.refresh_tables();
        if !self.cfg.prior_only {
            self.gibbs_assignments();
        }
        match self.prior.kind {
            PriorKind::Flexible => {
                for j in 0..self.d {
                    self.update_degree(&[j], sweep, moves);
                    self.update_alpha(&[j]);
                }
            }
            PriorKind::Equal => {
                let dims: Vec<usize> = (0..self.d).collect();
                self.update_degree(&dims, sweep, moves);
                self.update_alpha(&dims);
            }
        }
    }

    fn run(mut self) -> (Array2<u32>, Array2<f64>, Vec<MoveRecord>) {
        let keep = self.cfg.samples_per_chain;
        let mut m_out = Array2::<u32>::zeros((keep, self.d));
        let mut a_out = Array2::<f64>::zeros((keep, self.d));
        let mut moves = Vec::new();
        for sweep in 0..(self.cfg.burn_in + keep) {
            self.sweep(sweep, &mut moves);
            if sweep >= self.cfg.burn_in {
                let row = sweep - self.cfg.burn_in;
                for j in 0..self.d {
                    m_out[[row, j]] = self.m[j];
                    a_out[[row, j]] = self.alpha[j];
                }
            }
        }
        (m_out, a_out, moves)
    }
}

/// Run the degree sampler. Chains execute independently (in parallel when a
/// thread pool is available) with seeds derived per chain, so the trace is
/// identical for a fixed seed regardless of scheduling.
pub fn mcmc_run(ranks: &RankMatrix, prior: &PriorSpec, config: &McmcConfig) -> Result<McmcTrace> {
    prior.validate()?;
    config.validate()?;
    if ranks.n() < 2 {
        return Err(Error::InvalidInput("degree selection needs n >= 2".into()));
    }
    let results: Vec<_> = (0..config.chains)
        .into_par_iter()
        .map(|c| Chain::new(ranks, prior, config, c).run())
        .collect();
    let d = ranks.d();
    let keep = config.samples_per_chain;
    let total = keep * config.chains;
    let mut m_samples = Array2::<u32>::zeros((total, d));
    let mut alpha_samples = Array2::<f64>::zeros((total, d));
    let mut chain_ids = Vec::with_capacity(total);
    let mut moves = Vec::new();
    for (c, (m_c, a_c, mv)) in results.into_iter().enumerate() {
        for row in 0..keep {
            let out = c * keep + row;
            for j in 0..d {
                m_samples[[out, j]] = m_c[[row, j]];
                alpha_samples[[out, j]] = a_c[[row, j]];
            }
            chain_ids.push(c as u32);
        }
        moves.extend(mv);
    }
    Ok(McmcTrace {
        m_samples,
        alpha_samples,
        chain_ids,
        samples_per_chain: keep,
        moves,
    })
}

/// Split R-hat on one parameter's per-chain sequences.
fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let half = c.len() / 2;
        if half == 0 {
            return f64::NAN;
        }
        halves.push(&c[..half]);
        halves.push(&c[c.len() - half..]);
    }
    let l = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / l).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let b = if means.len() > 1 {
        l * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0)
    } else {
        0.0
    };
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (l - 1.0).max(1.0))
        .sum::<f64>()
        / halves.len() as f64;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((l - 1.0) / l * w + b / l) / w).sqrt()
}

/// Per-dimension posterior mode of the degrees; ties resolve to the smallest
/// tied value. Frequency tables and split R-hat (on m as a real) attached.
pub fn posterior_mode(trace: &McmcTrace) -> Result<DegreeEstimate> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("empty trace".into()));
    }
    let d = trace.d();
    let mut modes = Vec::with_capacity(d);
    let mut tables = Vec::with_capacity(d);
    let mut rhats = Vec::with_capacity(d);
    let n_chains = trace.chain_ids.last().map(|&c| c as usize + 1).unwrap_or(1);
    for j in 0..d {
        let mut freq: BTreeMap<u32, u32> = BTreeMap::new();
        for &m in trace.m_samples.column(j) {
            *freq.entry(m).or_insert(0) += 1;
        }
        // strict improvement over ascending keys leaves the smallest tie
        let mut mode = 0u32;
        let mut best = 0u32;
        for (&m, &count) in &freq {
            if count > best {
                best = count;
                mode = m;
            }
        }
        let mut chains: Vec<Vec<f64>> = vec![Vec::new(); n_chains];
        for (row, &c) in trace.chain_ids.iter().enumerate() {
            chains[c as usize].push(trace.m_samples[[row, j]] as f64);
        }
        rhats.push(split_rhat(&chains));
        modes.push(mode);
        tables.push(freq);
    }
    Ok(DegreeEstimate {
        modes: DegreeVector::new(modes)?,
        frequency_tables: tables,
        rhat: rhats,
    })
}

/// Fit a model end to end: run the sampler, take posterior-mode degrees.
pub fn fit_model(
    ranks: &RankMatrix,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<(EcbcModel, DegreeEstimate, McmcTrace)> {
    let trace = mcmc_run(ranks, prior, config)?;
    let estimate = posterior_mode(&trace)?;
    let model = EcbcModel::new(ranks.clone(), estimate.modes.clone())?;
    Ok((model, estimate, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranks::{compute_ranks, Dataset, TiePolicy};
    use ndarray::Array2;

    fn small_ranks(n: usize, d: usize, seed: u64) -> RankMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((n, d), |_| rng.gen::<f64>());
        compute_ranks(&Dataset::new(values).unwrap(), TiePolicy::InputOrder, 0)
    }

    #[test]
    fn shifted_poisson_prior_values() {
        // m = 1 carries the whole e^-lambda atom
        let lp = log_shifted_poisson_prior(1, 0.5, 100);
        assert!((lp + 10.0).abs() < 1e-12);
        // Poisson(10) at 10
        let lp11 = log_shifted_poisson_prior(11, 0.5, 100);
        assert!((lp11.exp() - 0.12511).abs() < 1e-5);
        assert_eq!(log_shifted_poisson_prior(0, 0.5, 100), f64::NEG_INFINITY);
        // normalization over the support
        let total: f64 = (1..=10_000)
            .map(|m| log_shifted_poisson_prior(m, 0.66, 1000).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn overlap_numerators_bookkeeping() {
        // interval [0, 1/2) against thirds: 2/3 and 1/3
        let (k_lo, nums) = overlap_numerators(1, 3, 2);
        assert_eq!(k_lo, 0);
        assert_eq!(nums, vec![2, 1]);
        // exact containment when m = n
        let (k_lo, nums) = overlap_numerators(4, 7, 7);
        assert_eq!((k_lo, nums), (3, vec![7]));
        // masses always total m
        for &(rank, m, n) in &[(1u32, 13usize, 5usize), (5, 9999, 977), (977, 10_000, 977)] {
            let (_, nums) = overlap_numerators(rank, m, n);
            assert_eq!(nums.iter().sum::<u64>(), m as u64);
        }
    }

    #[test]
    fn obs_dim_loglik_hand_values() {
        // m = 1: uniform density
        assert_eq!(obs_dim_loglik(0.37, 2, 1, 3).unwrap(), 0.0);
        // n=2, m=3, rank=1: (2/3) Beta(u;1,3) + (1/3) Beta(u;2,2)
        let u = 0.21;
        let expect =
            (2.0 / 3.0 * beta_pdf_single(u, 0, 3) + 1.0 / 3.0 * beta_pdf_single(u, 1, 3)).ln();
        assert!((obs_dim_loglik(u, 1, 3, 2).unwrap() - expect).abs() < 1e-14);
        // m = n pins a single aligned cell
        let v = 5.0 / 8.0;
        let expect = beta_pdf_single(v, 4, 7).ln();
        assert!((obs_dim_loglik(v, 5, 7, 7).unwrap() - expect).abs() < 1e-14);
        assert!(obs_dim_loglik(0.0, 1, 3, 2).is_err());
    }

    #[test]
    fn obs_dim_loglik_matches_jitter_monte_carlo() {
        // brute-force the jitter: L = floor(m (rank - 1 + lambda) / n)
        let (rank, m, n) = (3u32, 7usize, 4usize);
        let u = 0.55;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..draws {
            let lambda: f64 = rng.gen();
            let v = (rank as f64 - 1.0 + lambda) / n as f64;
            let l = ((m as f64 * v).floor() as usize).min(m - 1);
            let x = beta_pdf_single(u, l, m);
            acc += x;
            acc2 += x * x;
        }
        let mean = acc / draws as f64;
        let se = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        let exact = obs_dim_loglik(u, rank, m, n).unwrap().exp();
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "mc={mean} exact={exact} se={se}"
        );
    }

    #[test]
    fn sampler_is_deterministic_and_in_support() {
        let ranks = small_ranks(6, 2, 1);
        let cfg = McmcConfig {
            chains: 2,
            burn_in: 20,
            samples_per_chain: 60,
            seed: 9,
            ..Default::default()
        };
        let a = mcmc_run(&ranks, &PriorSpec::flexible(), &cfg).unwrap();
        let b = mcmc_run(&ranks, &PriorSpec::flexible(), &cfg).unwrap();
        assert_eq!(a.m_samples, b.m_samples);
        assert_eq!(a.alpha_samples, b.alpha_samples);
        assert!(a.m_samples.iter().all(|&m| m >= 1));
        assert!(a
            .alpha_samples
            .iter()
            .all(|&x| (1.0 / 3.0..2.0 / 3.0).contains(&x)));
    }

    #[test]
    fn degenerate_two_point_dataset_runs() {
        let ranks = small_ranks(2, 2, 3);
        let cfg = McmcConfig {
            chains: 1,
            burn_in: 10,
            samples_per_chain: 100,
            seed: 4,
            ..Default::default()
        };
        let trace = mcmc_run(&ranks, &PriorSpec::flexible(), &cfg).unwrap();
        assert_eq!(trace.len(), 100);
        assert!(trace.m_samples.iter().all(|&m| m >= 1));
    }

    #[test]
    fn equal_prior_ties_all_dimensions() {
        let ranks = small_ranks(8, 3, 5);
        let cfg = McmcConfig {
            chains: 1,
            burn_in: 30,
            samples_per_chain: 80,
            seed: 6,
            ..Default::default()
        };
        let trace = mcmc_run(&ranks, &PriorSpec::equal(), &cfg).unwrap();
        assert_eq!(trace.fraction_equal_degrees(), 1.0);
    }

    #[test]
    fn rejects_single_observation() {
        let ranks = RankMatrix::new(Array2::from_elem((1, 2), 1u32)).unwrap();
        assert!(mcmc_run(&ranks, &PriorSpec::flexible(), &McmcConfig::default()).is_err());
    }

    #[test]
    fn posterior_mode_counts_and_ties() {
        let m = ndarray::array![[1u32, 4], [2, 4], [2, 7], [3, 7]];
        let a = Array2::from_elem((4, 2), 0.5);
        let trace = McmcTrace {
            m_samples: m,
            alpha_samples: a,
            chain_ids: vec![0, 0, 1, 1],
            samples_per_chain: 2,
            moves: Vec::new(),
        };
        let est = posterior_mode(&trace).unwrap();
        assert_eq!(est.modes.as_slice(), &[2, 4]);
        assert_eq!(est.frequency_tables[0][&2], 2);
        assert_eq!(est.rhat.len(), 2);
        let empty = McmcTrace {
            m_samples: Array2::zeros((0, 2)),
            alpha_samples: Array2::zeros((0, 2)),
            chain_ids: vec![],
            samples_per_chain: 0,
            moves: Vec::new(),
        };
        assert!(posterior_mode(&empty).is_err());
    }

    #[test]
    fn recorded_moves_replay_exactly() {
        let ranks = small_ranks(5, 2, 8);
        let cfg = McmcConfig {
            chains: 1,
            burn_in: 0,
            samples_per_chain: 300,
            seed: 12,
            record_moves: true,
            ..Default::default()
        };
        let trace = mcmc_run(&ranks, &PriorSpec::flexible(), &cfg).unwrap();
        assert!(!trace.moves.is_empty());
        let n = ranks.n();
        let scale = 1.0 / (n as f64 + 1.0);
        let mut accepted = 0;
        for mv in &trace.moves {
            let replayed = if mv.m_to < 1 {
                false
            } else {
                let mut cur = log_shifted_poisson_prior(mv.m_from as i64, mv.alpha, n);
                let mut prop = log_shifted_poisson_prior(mv.m_to, mv.alpha, n);
                for i in 0..n {
                    let u = ranks.rank(i, mv.dim) as f64 * scale;
                    let s = ranks.rank(mv.assignment[i] as usize, mv.dim);
                    cur += obs_dim_loglik(u, s, mv.m_from as usize, n).unwrap();
                    prop += obs_dim_loglik(u, s, mv.m_to as usize, n).unwrap();
                }
                mv.log_u < prop - cur
            };
            assert_eq!(replayed, mv.accepted, "move {mv:?}");
            accepted += usize::from(mv.accepted);
        }
        assert!(accepted > 0);
    }

    #[test]
    fn trace_csv_has_expected_shape() {
        let ranks = small_ranks(5, 2, 2);
        let cfg = McmcConfig {
            chains: 2,
            burn_in: 5,
            samples_per_chain: 10,
            seed: 3,
            ..Default::default()
        };
        let trace = mcmc_run(&ranks, &PriorSpec::flexible(), &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "chain,iteration,m_1,m_2,alpha_1,alpha_2"
        );
        assert_eq!(lines.count(), 20);
    }
}
