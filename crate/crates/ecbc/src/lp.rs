//! Linear programming: a dense bounded-variable simplex with Bland's rule,
//! and the scenario CVaR optimizer built on it.
//!
//! The CVaR program min gamma + (1/(alpha M)) sum_k z_k over (v, gamma, z)
//! has M auxiliary variables, one per scenario. Rather than carrying an
//! (M+1)-row basis, the solver works in (v, gamma) space by delegated cuts:
//! the objective F(v, gamma) = gamma + (1/(alpha M)) sum_k (-v.x_k - gamma)+
//! is piecewise linear and convex, every active scenario set S yields the
//! supporting plane gamma (1 - q|S|) - q sum_{k in S} v.x_k, and the small
//! master LP over accumulated planes is solved exactly by the simplex. Each
//! round evaluates F exactly, so the returned bound gap is a true
//! primal-dual certificate. Distinct cuts are finite, so the loop terminates.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLo,
    AtHi,
    FreeAtZero,
}

fn bound_value(j: usize, status: &[Status], lo: &[f64], hi: &[f64]) -> f64 {
    match status[j] {
        Status::AtLo => lo[j],
        Status::AtHi => hi[j],
        _ => 0.0,
    }
}

/// Dense LP: min c.x subject to row constraints and variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    costs: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, ConstraintOp, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        assert!(lo <= hi, "variable bounds crossed");
        self.costs.push(cost);
        self.lo.push(lo);
        self.hi.push(hi);
        self.costs.len() - 1
    }

    pub fn add_constraint(&mut self, terms: &[(usize, f64)], op: ConstraintOp, rhs: f64) {
        self.rows.push((terms.to_vec(), op, rhs));
    }

    /// Two-phase bounded-variable simplex with Bland's entering rule and
    /// lowest-index tie-breaks, so degenerate problems terminate and land on
    /// the lexicographically smallest basis.
    pub fn solve(&self) -> Result<LpSolution> {
        let n_struct = self.costs.len();
        let m = self.rows.len();
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        let mut cols: Vec<Vec<f64>> = (0..n_struct).map(|_| vec![0.0; m]).collect();
        let mut b = vec![0.0; m];
        for (i, (terms, _, rhs)) in self.rows.iter().enumerate() {
            b[i] = *rhs;
            for &(j, a) in terms {
                cols[j][i] += a;
            }
        }
        // slacks
        for (i, (_, op, _)) in self.rows.iter().enumerate() {
            let sign = match op {
                ConstraintOp::Le => 1.0,
                ConstraintOp::Ge => -1.0,
                ConstraintOp::Eq => continue,
            };
            let mut col = vec![0.0; m];
            col[i] = sign;
            cols.push(col);
            lo.push(0.0);
            hi.push(f64::INFINITY);
        }
        let n_real = cols.len();
        // nonbasic starting point
        let mut status: Vec<Status> = (0..n_real)
            .map(|j| {
                if lo[j].is_finite() {
                    Status::AtLo
                } else if hi[j].is_finite() {
                    Status::AtHi
                } else {
                    Status::FreeAtZero
                }
            })
            .collect();
        // artificials, one per row, oriented so they start nonnegative
        let mut basis = Vec::with_capacity(m);
        let mut binv = vec![vec![0.0; m]; m];
        {
            for i in 0..m {
                let mut resid = b[i];
                for j in 0..n_real {
                    resid -= cols[j][i] * bound_value(j, &status, &lo, &hi);
                }
                let sign = if resid >= 0.0 { 1.0 } else { -1.0 };
                let mut col = vec![0.0; m];
                col[i] = sign;
                cols.push(col);
                lo.push(0.0);
                hi.push(f64::INFINITY);
                status.push(Status::Basic);
                basis.push(n_real + i);
                binv[i][i] = sign;
            }
        }
        let n_total = cols.len();
        let scale = 1.0 + b.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));

        let max_iter = 2000 + 200 * (m + n_total);
        for phase in 0..2 {
            let costs: Vec<f64> = if phase == 0 {
                let mut c = vec![0.0; n_total];
                for cj in c.iter_mut().skip(n_real) {
                    *cj = 1.0;
                }
                c
            } else {
                let mut c = vec![0.0; n_total];
                c[..n_struct].copy_from_slice(&self.costs);
                c
            };
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::Numerical("simplex iteration limit".into()));
                }
                // x_B = B^-1 (b - N x_N)
                let mut resid = b.clone();
                for j in 0..n_total {
                    if status[j] != Status::Basic {
                        let v = bound_value(j, &status, &lo, &hi);
                        if v != 0.0 {
                            for i in 0..m {
                                resid[i] -= cols[j][i] * v;
                            }
                        }
                    }
                }
                let xb: Vec<f64> = (0..m)
                    .map(|i| (0..m).map(|k| binv[i][k] * resid[k]).sum())
                    .collect();
                // duals y = c_B^T B^-1
                let y: Vec<f64> = (0..m)
                    .map(|k| (0..m).map(|i| costs[basis[i]] * binv[i][k]).sum())
                    .collect();
                // Bland entering rule
                let mut entering = None;
                for j in 0..n_total {
                    if status[j] == Status::Basic || lo[j] >= hi[j] {
                        continue;
                    }
                    let rc = costs[j] - y.iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>();
                    let dir = match status[j] {
                        Status::AtLo if rc < -COST_TOL => 1.0,
                        Status::AtHi if rc > COST_TOL => -1.0,
                        Status::FreeAtZero if rc < -COST_TOL => 1.0,
                        Status::FreeAtZero if rc > COST_TOL => -1.0,
                        _ => continue,
                    };
                    entering = Some((j, dir));
                    break;
                }
                let Some((j_in, dir)) = entering else {
                    break;
                };
                let w: Vec<f64> = (0..m)
                    .map(|i| (0..m).map(|k| binv[i][k] * cols[j_in][k]).sum())
                    .collect();
                // ratio test: entering's own span, then basic bounds
                let own_span = hi[j_in] - lo[j_in];
                let mut best_delta = if own_span.is_finite() {
                    own_span
                } else {
                    f64::INFINITY
                };
                let mut leave: Option<(usize, bool)> = None; // (row, leaves at hi)
                for i in 0..m {
                    let wi = dir * w[i];
                    let bj = basis[i];
                    let (delta, to_hi) = if wi > PIVOT_TOL {
                        if lo[bj].is_finite() {
                            (((xb[i] - lo[bj]) / wi).max(0.0), false)
                        } else {
                            continue;
                        }
                    } else if wi < -PIVOT_TOL {
                        if hi[bj].is_finite() {
                            (((hi[bj] - xb[i]) / (-wi)).max(0.0), true)
                        } else {
                            continue;
                        }
                    } else {
                        continue;
                    };
                    let improves = delta < best_delta - 1e-12
                        || (delta < best_delta + 1e-12
                            && leave.map(|(r, _)| bj < basis[r]).unwrap_or(false));
                    if improves {
                        best_delta = best_delta.min(delta);
                        leave = Some((i, to_hi));
                    }
                }
                if best_delta.is_infinite() {
                    return Err(Error::Numerical("linear program is unbounded".into()));
                }
                match leave {
                    None => {
                        // entering flips to its opposite bound
                        status[j_in] = match status[j_in] {
                            Status::AtLo => Status::AtHi,
                            Status::AtHi => Status::AtLo,
                            other => other,
                        };
                    }
                    Some((row, to_hi)) => {
                        let out = basis[row];
                        status[out] = if to_hi { Status::AtHi } else { Status::AtLo };
                        basis[row] = j_in;
                        status[j_in] = Status::Basic;
                        // eta update of B^-1
                        let pivot = w[row];
                        let prow: Vec<f64> = binv[row].iter().map(|x| x / pivot).collect();
                        for i in 0..m {
                            if i == row {
                                continue;
                            }
                            let f = w[i];
                            if f != 0.0 {
                                for k in 0..m {
                                    binv[i][k] -= f * prow[k];
                                }
                            }
                        }
                        binv[row] = prow;
                    }
                }
            }
            if phase == 0 {
                // artificial mass left means infeasible
                let mut resid = b.clone();
                for j in 0..n_total {
                    if status[j] != Status::Basic {
                        let v = bound_value(j, &status, &lo, &hi);
                        if v != 0.0 {
                            for i in 0..m {
                                resid[i] -= cols[j][i] * v;
                            }
                        }
                    }
                }
                let mut art_mass = 0.0;
                for i in 0..m {
                    let xbi: f64 = (0..m).map(|k| binv[i][k] * resid[k]).sum();
                    if basis[i] >= n_real {
                        art_mass += xbi.abs();
                    }
                }
                for j in n_real..n_total {
                    if status[j] != Status::Basic {
                        art_mass += bound_value(j, &status, &lo, &hi);
                    }
                    hi[j] = 0.0;
                }
                if art_mass > 1e-7 * scale {
                    return Err(Error::Numerical("linear program is infeasible".into()));
                }
            }
        }
        // recover the point
        let mut x = vec![0.0; n_total];
        for j in 0..n_total {
            x[j] = match status[j] {
                Status::AtLo => lo[j],
                Status::AtHi => hi[j],
                _ => 0.0,
            };
        }
        let mut resid = b.clone();
        for (j, xv) in x.iter().enumerate() {
            if *xv != 0.0 && status[j] != Status::Basic {
                for i in 0..m {
                    resid[i] -= cols[j][i] * xv;
                }
            }
        }
        for i in 0..m {
            let xbi: f64 = (0..m).map(|k| binv[i][k] * resid[k]).sum();
            x[basis[i]] = xbi;
        }
        // sanity: rows within tolerance
        for (i, (terms, op, rhs)) in self.rows.iter().enumerate() {
            let lhs: f64 = terms.iter().map(|&(j, a)| a * x[j]).sum();
            let ok = match op {
                ConstraintOp::Le => lhs <= rhs + FEAS_TOL * scale,
                ConstraintOp::Ge => lhs >= rhs - FEAS_TOL * scale,
                ConstraintOp::Eq => (lhs - rhs).abs() <= FEAS_TOL * scale,
            };
            if !ok {
                return Err(Error::Numerical(format!(
                    "solution violates row {i}: lhs={lhs} rhs={rhs}"
                )));
            }
        }
        let objective = self.costs.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
        Ok(LpSolution {
            x: x[..n_struct].to_vec(),
            objective,
        })
    }
}

/// VaR (left endpoint of the optimal-threshold interval) and CVaR of a loss
/// sample at tail level `alpha`, by order statistics.
pub fn var_cvar_from_losses(losses: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!losses.is_empty() && 0.0 < alpha && alpha < 1.0);
    let m = losses.len();
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = alpha * m as f64;
    // smallest gamma with #{loss > gamma} <= k <= #{loss >= gamma}
    let mut var = sorted[m - 1];
    for &gamma in sorted.iter() {
        let gt = m - sorted.partition_point(|&x| x <= gamma);
        let ge = m - sorted.partition_point(|&x| x < gamma);
        if gt as f64 <= k && ge as f64 >= k {
            var = gamma;
            break;
        }
    }
    let excess: f64 = sorted
        .iter()
        .rev()
        .take_while(|&&x| x > var)
        .map(|&x| x - var)
        .sum();
    (var, var + excess / k)
}

/// Result of the scenario CVaR optimization.
#[derive(Debug, Clone)]
pub struct CvarOptimum {
    pub weights: Vec<f64>,
    pub var: f64,
    pub cvar: f64,
    pub bound_gap: f64,
    pub iterations: usize,
}

/// Minimize scenario CVaR at level `alpha` over the floor simplex
/// {v >= v_min, sum v = 1}. Scenario rows are returns; losses are -v.x.
pub fn min_cvar(scenarios: ArrayView2<'_, f64>, alpha: f64, v_min: f64) -> Result<CvarOptimum> {
    let (m_count, d) = scenarios.dim();
    if m_count < 1 || d < 1 {
        return Err(Error::InvalidInput(
            "need at least one scenario and asset".into(),
        ));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
    }
    if !(0.0..=1.0 / d as f64 + 1e-12).contains(&v_min) {
        return Err(Error::Numerical(format!(
            "weight floor {v_min} is infeasible for {d} assets"
        )));
    }
    let q = 1.0 / (alpha * m_count as f64);
    let scale = scenarios.iter().fold(0.0f64, |a, x| a.max(x.abs())) + 1.0;
    let losses = |v: &[f64]| -> Vec<f64> {
        scenarios
            .rows()
            .into_iter()
            .map(|row| -row.iter().zip(v).map(|(x, w)| x * w).sum::<f64>())
            .collect()
    };
    // master in (v, gamma, t)
    let mut master = LinearProgram::new();
    let vars: Vec<usize> = (0..d).map(|_| master.add_var(0.0, v_min, 1.0)).collect();
    let gamma_var = master.add_var(0.0, -scale, scale);
    let t_var = master.add_var(1.0, -scale, f64::INFINITY);
    let simplex_row: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
    master.add_constraint(&simplex_row, ConstraintOp::Eq, 1.0);
    // cut at (v, gamma): t >= gamma (1 - q|S|) - q sum_{k in S} v.x_k
    let mut seen_cuts: std::collections::HashSet<Vec<u64>> = std::collections::HashSet::new();
    let mut add_cut = |master: &mut LinearProgram, v: &[f64], gamma: f64| {
        let l = losses(v);
        let mut cut_count = 0usize;
        let mut coef = vec![0.0; d];
        for (k, &lk) in l.iter().enumerate() {
            if lk > gamma {
                cut_count += 1;
                for (c, x) in coef.iter_mut().zip(scenarios.row(k)) {
                    *c += x;
                }
            }
        }
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(d + 2);
        terms.push((t_var, 1.0));
        terms.push((gamma_var, -(1.0 - q * cut_count as f64)));
        for (j, &c) in coef.iter().enumerate() {
            terms.push((vars[j], q * c));
        }
        let key: Vec<u64> = terms.iter().map(|(_, c)| c.to_bits()).collect();
        if seen_cuts.insert(key) {
            master.add_constraint(&terms, ConstraintOp::Ge, 0.0);
        }
    };
    let uniform = vec![1.0 / d as f64; d];
    let l0 = losses(&uniform);
    let (v0, c0) = var_cvar_from_losses(&l0, alpha);
    let mut best_weights = uniform.clone();
    let mut best_cvar = c0;
    let mut best_var = v0;
    add_cut(&mut master, &uniform, v0);
    let gap_tol = 1e-9 * scale.max(1.0);
    let mut bound_gap = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..1000 {
        iterations = it + 1;
        let sol = master.solve()?;
        let lower = sol.objective;
        let v_new = &sol.x[..d];
        let gamma_new = sol.x[gamma_var];
        let l = losses(v_new);
        let (var_new, cvar_new) = var_cvar_from_losses(&l, alpha);
        if cvar_new < best_cvar {
            best_cvar = cvar_new;
            best_var = var_new;
            best_weights = v_new.to_vec();
        }
        bound_gap = best_cvar - lower;
        if bound_gap <= gap_tol {
            break;
        }
        // master support point plus the tight point for this v
        add_cut(&mut master, v_new, gamma_new);
        add_cut(&mut master, v_new, var_new);
    }
    if bound_gap > 1e-7 * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "cvar optimizer failed to certify: gap {bound_gap}"
        )));
    }
    Ok(CvarOptimum {
        weights: best_weights,
        var: best_var,
        cvar: best_cvar,
        bound_gap,
        iterations,
    })
}
