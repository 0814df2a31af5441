//! Optimal-transport distances and alignment costs.
//!
//! Discrete problems are solved exactly as a transportation linear program
//! (successive shortest augmenting paths with Dijkstra potentials). On the
//! real line the distance is computed from the quantile representation,
//! which is also what the barycenter uses.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{AgentSpec, DiscreteDistribution, Distribution, EmpiricalDistribution1D, Task};

/// Default number of quantile levels used by [`barycenter_1d`].
pub const DEFAULT_GRID: usize = 128;

/// Residual mass below this is treated as transported.
const FLOW_EPS: f64 = 1e-15;

/// Nonnegative ground cost between two finite supports, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("cost matrix must be nonempty".into()));
        }
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} cost matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidInput(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { rows, cols, entries })
    }

    /// The 0-1 cost on an `n`-label simplex.
    pub fn zero_one(n: usize) -> Result<Self> {
        let entries = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { 1.0 })
            .collect();
        Self::new(n, n, entries)
    }

    /// `|x - y|^p` between two sets of real atoms.
    pub fn abs_power(xs: &[f64], ys: &[f64], p: f64) -> Result<Self> {
        let entries = xs
            .iter()
            .flat_map(|x| ys.iter().map(move |y| (x - y).abs().powf(p)))
            .collect();
        Self::new(xs.len(), ys.len(), entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// An optimal coupling and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Row-major `rows x cols` flow matrix.
    pub flow: Vec<f64>,
}

/// Exact optimal transport cost between two discrete distributions.
pub fn wasserstein_discrete(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cost: &CostMatrix,
) -> Result<f64> {
    Ok(optimal_plan(mu.masses(), nu.masses(), cost)?.cost)
}

/// Solves the transportation problem `min <C, P>` over couplings of `supply`
/// and `demand`.
pub fn optimal_plan(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if cost.rows != m || cost.cols != n {
        return Err(Error::Shape(format!(
            "cost is {}x{} but supports have sizes {m} and {n}",
            cost.rows, cost.cols
        )));
    }
    let mut sup = supply.to_vec();
    let mut dem = demand.to_vec();
    let mut flow = vec![0.0; m * n];
    let mut pot_s = vec![0.0; m];
    let mut pot_d = vec![0.0; n];

    let mut dist_s = vec![f64::INFINITY; m];
    let mut dist_d = vec![f64::INFINITY; n];
    let mut done_s = vec![false; m];
    let mut done_d = vec![false; n];
    // pred_d[j] = supply node that reached j; pred_s[i] = demand node that reached i.
    let mut pred_d = vec![usize::MAX; n];
    let mut pred_s = vec![usize::MAX; m];

    loop {
        if !sup.iter().any(|&s| s > FLOW_EPS) || !dem.iter().any(|&d| d > FLOW_EPS) {
            break;
        }
        for i in 0..m {
            dist_s[i] = if sup[i] > FLOW_EPS { 0.0 } else { f64::INFINITY };
            done_s[i] = false;
            pred_s[i] = usize::MAX;
        }
        for j in 0..n {
            dist_d[j] = f64::INFINITY;
            done_d[j] = false;
            pred_d[j] = usize::MAX;
        }

        let mut target = None;
        loop {
            // Dense Dijkstra: pick the closest unsettled node on either side.
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..m {
                if !done_s[i] && dist_s[i] < best {
                    best = dist_s[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..n {
                if !done_d[j] && dist_d[j] < best {
                    best = dist_d[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_supply, k)) = pick else { break };
            if is_supply {
                done_s[k] = true;
                for j in 0..n {
                    if done_d[j] {
                        continue;
                    }
                    let rc = (cost.get(k, j) + pot_s[k] - pot_d[j]).max(0.0);
                    if best + rc < dist_d[j] {
                        dist_d[j] = best + rc;
                        pred_d[j] = k;
                    }
                }
            } else {
                done_d[k] = true;
                if dem[k] > FLOW_EPS {
                    target = Some(k);
                    break;
                }
                for i in 0..m {
                    if done_s[i] || flow[i * n + k] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (pot_d[k] - cost.get(i, k) - pot_s[i]).max(0.0);
                    if best + rc < dist_s[i] {
                        dist_s[i] = best + rc;
                        pred_s[i] = k;
                    }
                }
            }
        }
        let Some(end) = target else { break };
        let reach = dist_d[end];

        // Walk back to the root supply node, recording the bottleneck.
        let mut bottleneck = dem[end];
        let mut j = end;
        let root = loop {
            let i = pred_d[j];
            let back = pred_s[i];
            if back == usize::MAX {
                break i;
            }
            bottleneck = bottleneck.min(flow[i * n + back]);
            j = back;
        };
        bottleneck = bottleneck.min(sup[root]);

        let mut j = end;
        loop {
            let i = pred_d[j];
            flow[i * n + j] += bottleneck;
            let back = pred_s[i];
            if back == usize::MAX {
                break;
            }
            let f = &mut flow[i * n + back];
            *f -= bottleneck;
            if *f <= FLOW_EPS {
                *f = 0.0;
            }
            j = back;
        }
        sup[root] -= bottleneck;
        if sup[root] <= FLOW_EPS {
            sup[root] = 0.0;
        }
        dem[end] -= bottleneck;
        if dem[end] <= FLOW_EPS {
            dem[end] = 0.0;
        }

        for i in 0..m {
            pot_s[i] += dist_s[i].min(reach);
        }
        for j in 0..n {
            pot_d[j] += dist_d[j].min(reach);
        }
    }

    let total = flow
        .iter()
        .enumerate()
        .map(|(k, f)| f * cost.entries[k])
        .sum();
    Ok(TransportPlan { cost: total, flow })
}

/// Total variation distance, `sum max(mu - nu, 0)`.
pub fn total_variation(mu: &[f64], nu: &[f64]) -> f64 {
    mu.iter().zip(nu).map(|(a, b)| (a - b).max(0.0)).sum()
}

/// `W_p` between two empirical measures on the real line, integrating
/// `|F_a^-1(u) - F_b^-1(u)|^p` exactly over the merged quantile breakpoints.
pub fn wasserstein_1d(
    a: &EmpiricalDistribution1D,
    b: &EmpiricalDistribution1D,
    p: u32,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidDistribution("empty empirical measure".into()));
    }
    if p == 0 {
        return Err(Error::InvalidInput("order p must be at least 1".into()));
    }
    let (xa, wa) = (a.samples(), a.weights());
    let (xb, wb) = (b.samples(), b.weights());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cum_a, mut cum_b) = (wa[0], wb[0]);
    let mut prev = 0.0;
    let mut total = 0.0;
    loop {
        let u = cum_a.min(cum_b).min(1.0);
        if u > prev {
            total += (u - prev) * (xa[i] - xb[j]).abs().powi(p as i32);
            prev = u;
        }
        if prev >= 1.0 {
            break;
        }
        if cum_a <= u {
            i += 1;
            if i < xa.len() {
                cum_a += wa[i];
            } else {
                i = xa.len() - 1;
                cum_a = f64::INFINITY;
            }
        }
        if cum_b <= u {
            j += 1;
            if j < xb.len() {
                cum_b += wb[j];
            } else {
                j = xb.len() - 1;
                cum_b = f64::INFINITY;
            }
        }
    }
    Ok(if p == 1 { total } else { total.powf(1.0 / p as f64) })
}

/// Quantiles of `d` at the nondecreasing `levels`.
fn quantiles_at(d: &EmpiricalDistribution1D, levels: &[f64]) -> Vec<f64> {
    let (xs, ws) = (d.samples(), d.weights());
    let mut out = Vec::with_capacity(levels.len());
    let mut k = 0;
    let mut cum = ws[0];
    for &u in levels {
        while cum < u && k + 1 < xs.len() {
            k += 1;
            cum += ws[k];
        }
        out.push(xs[k]);
    }
    out
}

fn check_simplex(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len {
        return Err(Error::InvalidInput(format!(
            "{} weights for {len} distributions",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// `W_2` barycenter on the line: the weighted average of quantile functions
/// sampled at `grid` midpoint levels `(g + 1/2) / grid`.
pub fn barycenter_1d(
    dists: &[EmpiricalDistribution1D],
    weights: &[f64],
    grid: usize,
) -> Result<EmpiricalDistribution1D> {
    if dists.is_empty() {
        return Err(Error::InvalidInput("barycenter of an empty list".into()));
    }
    if grid == 0 {
        return Err(Error::InvalidInput("grid must be positive".into()));
    }
    check_simplex(weights, dists.len())?;
    if let Some(k) = weights.iter().position(|&w| w == 1.0) {
        return Ok(dists[k].clone());
    }
    let levels: Vec<f64> = (0..grid).map(|g| (g as f64 + 0.5) / grid as f64).collect();
    let mut acc = vec![0.0; grid];
    for (d, &w) in dists.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, q) in acc.iter_mut().zip(quantiles_at(d, &levels)) {
            *a += w * q;
        }
    }
    EmpiricalDistribution1D::new(acc, None)
}

/// How a sliding window weighs its references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WindowWeighting {
    Uniform,
    /// Weight `gamma^age`, age 0 being the newest reference.
    Exponential { gamma: f64 },
}

/// Barycenter of the last `window` references, newest last in `history`.
pub fn sliding_reference(
    history: &[EmpiricalDistribution1D],
    window: usize,
    weighting: WindowWeighting,
    grid: usize,
) -> Result<EmpiricalDistribution1D> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be positive".into()));
    }
    if history.is_empty() {
        return Err(Error::InvalidInput("empty reference history".into()));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let raw: Vec<f64> = match weighting {
        WindowWeighting::Uniform => vec![1.0; recent.len()],
        WindowWeighting::Exponential { gamma } => {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::InvalidInput("gamma must lie in (0, 1]".into()));
            }
            (0..recent.len())
                .map(|k| gamma.powi((recent.len() - 1 - k) as i32))
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    if recent.len() == 1 {
        return Ok(recent[0].clone());
    }
    barycenter_1d(recent, &weights, grid)
}

/// One observed alignment cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSample {
    pub clean: f64,
    pub noisy: f64,
    pub sigma: f64,
}

impl AlignmentSample {
    /// Adds `N(0, sigma^2)` noise to a clean cost. One normal draw is consumed
    /// even when `sigma == 0` so noise streams stay aligned across settings.
    pub fn draw<R: Rng + ?Sized>(clean: f64, sigma: f64, rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        let noisy = if sigma == 0.0 { clean } else { clean + sigma * z };
        Self { clean, noisy, sigma }
    }
}

/// Exact distance between an agent's outcome distribution and a task
/// reference: 0-1 ground cost on label simplices, `|x - y|` on the line.
pub fn clean_alignment(output: &Distribution, reference: &Distribution) -> Result<f64> {
    match (reference, output) {
        (Distribution::Discrete(nu), Distribution::Discrete(mu)) => {
            if nu.support_size() != mu.support_size() {
                return Err(Error::Shape(format!(
                    "label supports of size {} and {}",
                    nu.support_size(),
                    mu.support_size()
                )));
            }
            wasserstein_discrete(nu, mu, &CostMatrix::zero_one(nu.support_size())?)
        }
        (Distribution::Empirical(nu), Distribution::Empirical(mu)) => wasserstein_1d(nu, mu, 1),
        _ => Err(Error::Shape(
            "cannot compare a label distribution with a real-line distribution".into(),
        )),
    }
}

/// Noisy alignment cost `W_c(nu_t, mu_i) + eps`, `eps ~ N(0, sigma_i^2)`.
pub fn alignment_cost<R: Rng + ?Sized>(
    agent: &AgentSpec,
    task: &Task,
    rng: &mut R,
) -> Result<AlignmentSample> {
    let clean = clean_alignment(&agent.output_dist, &task.reference)?;
    Ok(AlignmentSample::draw(clean, agent.cost_noise_sigma, rng))
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Misordering probability of two noisy costs separated by `delta`, and its
/// sub-Gaussian upper bound: `(Phi(-delta / (sqrt 2 sigma)), exp(-delta^2 / (4 sigma^2)) / 2)`.
pub fn margin_bound(delta: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput("delta must be nonnegative".into()));
    }
    let tail = std_normal_cdf(-delta / (std::f64::consts::SQRT_2 * sigma));
    let bound = 0.5 * (-delta * delta / (4.0 * sigma * sigma)).exp();
    Ok((tail, bound))
}
