//! Monte Carlo validation of the closed-loop equilibrium.
//!
//! The equilibrium state dynamics form a linear mean-field SDE whose
//! diffusion coefficients are deterministic functions of time, so an
//! Euler–Maruyama scheme is exact in the diffusion part; the only
//! discretisation bias comes from the drift. This module simulates the
//! certified feedback policy, rebuilds both objective values from raw path
//! statistics — profit flows, control costs, contract settlement, and the
//! integrated variance penalty — and runs a common-random-number deviation
//! test of the no-profitable-deviation property.
//!
//! Two conventions keep the estimates trustworthy:
//!
//! - The mean-field inputs `q_bar`, `c_bar` of the feedback law are read from
//!   the deterministic [`MomentTrajectory`], never from the empirical
//!   cross-section. The equilibrium is defined against the true law; feeding
//!   back sample means would change the game being simulated.
//! - Every path owns a generator keyed by `(seed, path index)`, paths are
//!   processed in fixed-size chunks, and partial estimates merge in chunk
//!   order. Results are therefore bit-identical for a given configuration,
//!   regardless of how many threads participate.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::equilibrium::{
    control, FeedbackPolicy, MomentTrajectory, GAIN_OWN_DEV, GAIN_OWN_MEAN, M_CBAR, M_EC2, M_EQ2,
    M_QBAR,
};
use crate::grid::{csv_float, trapezoid, TimeGrid};
use crate::model::{ModelParams, Player, ValidatedParams};

/// Paths per work unit. Chunks are simulated independently (possibly in
/// parallel) and their partial statistics are merged in index order, so the
/// final estimate never depends on the thread count.
const CHUNK_PATHS: u64 = 1024;

/// Failure modes of the Monte Carlo layer. All of them are configuration
/// problems: once the inputs are accepted the simulation itself cannot fail.
#[derive(Debug, Error)]
pub enum McError {
    #[error("sample variances need at least two paths, got {n_paths}")]
    TooFewPaths { n_paths: usize },
    #[error("n_time_steps must be positive")]
    EmptyTimeGrid,
    #[error(
        "the coefficient grid has {coefficient_steps} steps, which is not a whole multiple of \
         the {simulation_steps} requested simulation steps; pick a step count that divides the \
         solver grid so every simulation node lands on a coefficient node"
    )]
    GridMismatch {
        coefficient_steps: usize,
        simulation_steps: usize,
    },
    #[error(
        "policy grid ({policy_steps} steps) and moment grid ({trajectory_steps} steps) disagree; \
         both inputs must come from the same equilibrium solve"
    )]
    MismatchedInputs {
        policy_steps: usize,
        trajectory_steps: usize,
    },
    #[error(
        "simulate_equilibrium runs the certified policy only; use deviation_test for perturbed \
         policies"
    )]
    UnexpectedDeviation,
    #[error("deviation_test needs cfg.deviation to name the perturbed player and coefficient")]
    MissingDeviation,
}

/// Which feedback coefficient a deviation run perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationTarget {
    /// Add epsilon to the gain multiplying the player's own deviation from
    /// its deterministic mean (`own - own_bar`).
    OwnDeviationGain,
    /// Add epsilon to the gain multiplying the player's own deterministic
    /// mean.
    OwnMeanGain,
    /// Shift the volatility control by a constant epsilon, both in the state
    /// diffusion and in the volatility adjustment cost.
    VolShift,
}

impl DeviationTarget {
    pub fn label(self) -> &'static str {
        match self {
            DeviationTarget::OwnDeviationGain => "own-deviation gain",
            DeviationTarget::OwnMeanGain => "own-mean gain",
            DeviationTarget::VolShift => "volatility shift",
        }
    }
}

impl fmt::Display for DeviationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A single-coefficient perturbation of one player's feedback policy.
#[derive(Debug, Clone, Copy)]
pub struct DeviationSpec {
    pub player: Player,
    pub target: DeviationTarget,
    /// Default perturbation size; used when [`deviation_test`] is handed an
    /// empty epsilon grid.
    pub epsilon: f64,
}

/// Simulation request: path count, time resolution, seed, and optionally a
/// policy perturbation for deviation studies.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_time_steps: usize,
    pub seed: u64,
    pub deviation: Option<DeviationSpec>,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_time_steps: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            n_time_steps,
            seed,
            deviation: None,
        }
    }
}

/// One player's estimated objective, split into the terms of the cumulative
/// profit. Signs follow the objective: costs and the variance penalty are
/// stored negative, so `j_hat` is the plain sum of the five terms.
#[derive(Debug, Clone, Copy)]
pub struct PlayerEstimate {
    /// Mean integrated revenue flow (sales income, net of sourcing costs for
    /// the consumer).
    pub profit_integral: f64,
    /// Mean of `-(k/2) ∫ u² dt`.
    pub drift_cost: f64,
    /// `-(l/2) ∫ (vol − sigma)² dt`; deterministic because the equilibrium
    /// volatility control is.
    pub vol_cost: f64,
    /// Mean forward settlement leg (`F − λ S_T` for the producer, its
    /// negative for the consumer).
    pub contract: f64,
    /// `-η λ² ∫ V̂[S] dt` with the unbiased cross-sectional sample variance.
    pub variance_penalty: f64,
    /// Estimated objective: the sum of the five terms above.
    pub j_hat: f64,
    /// Standard error of the mean cumulative profit.
    pub se: f64,
}

/// Cross-sectional statistics at one simulation node.
#[derive(Debug, Clone, Copy)]
pub struct NodeStats {
    pub t: f64,
    pub mean_q: f64,
    pub mean_c: f64,
    /// Standard errors of the two means.
    pub se_q: f64,
    pub se_c: f64,
    /// Empirical raw second moments and their standard errors.
    pub e_q2: f64,
    pub e_c2: f64,
    pub se_q2: f64,
    pub se_c2: f64,
    pub var_q: f64,
    pub var_c: f64,
    pub cov_qc: f64,
    pub var_s: f64,
}

/// Full Monte Carlo estimate of both objectives plus the per-node moment
/// diagnostics needed to audit the run.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub n_paths: usize,
    pub n_time_steps: usize,
    pub seed: u64,
    pub producer: PlayerEstimate,
    pub consumer: PlayerEstimate,
    /// Composite-trapezoid value of `∫ V̂[S_t] dt`.
    pub var_s_integral: f64,
    /// Relative gap between `∫ V̂[S] dt` computed directly from spot samples
    /// and reassembled from the (q, c) variance/covariance integrals. Pure
    /// floating-point accumulation error; should sit near machine precision.
    pub variance_identity_gap: f64,
    pub node_stats: Vec<NodeStats>,
}

/// One line of a moment-band audit: an empirical moment against its
/// deterministic ODE value, with the standard error of the estimate.
#[derive(Debug, Clone, Copy)]
pub struct MomentBand {
    pub t: f64,
    pub quantity: &'static str,
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
    pub within: bool,
}

impl McEstimate {
    /// Compares empirical first and second moments of (q, c) at the requested
    /// times against the deterministic trajectory, flagging every entry whose
    /// distance exceeds `band_width` standard errors.
    pub fn moment_bands(
        &self,
        traj: &MomentTrajectory,
        times: &[f64],
        band_width: f64,
    ) -> Vec<MomentBand> {
        let n = self.node_stats.len() - 1;
        let horizon = self.node_stats[n].t;
        let mut out = Vec::with_capacity(4 * times.len());
        for &t in times {
            let i = (((t / horizon) * n as f64).round()).clamp(0.0, n as f64) as usize;
            let row = &self.node_stats[i];
            let target = traj.core.eval(row.t);
            let mut push = |quantity, estimate: f64, target: f64, se: f64| {
                out.push(MomentBand {
                    t: row.t,
                    quantity,
                    estimate,
                    target,
                    se,
                    within: (estimate - target).abs() <= band_width * se,
                });
            };
            push("E[q]", row.mean_q, target[M_QBAR], row.se_q);
            push("E[c]", row.mean_c, target[M_CBAR], row.se_c);
            push("E[q^2]", row.e_q2, target[M_EQ2], row.se_q2);
            push("E[c^2]", row.e_c2, target[M_EC2], row.se_c2);
        }
        out
    }

    /// Term-by-term CSV table (one row per objective component, one column
    /// per player), followed by the two run-level diagnostics.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "term,producer,consumer")?;
        let rows: [(&str, f64, f64); 7] = [
            (
                "profit_integral",
                self.producer.profit_integral,
                self.consumer.profit_integral,
            ),
            ("drift_control_cost", self.producer.drift_cost, self.consumer.drift_cost),
            (
                "volatility_control_cost",
                self.producer.vol_cost,
                self.consumer.vol_cost,
            ),
            ("contract_payoff", self.producer.contract, self.consumer.contract),
            (
                "variance_penalty",
                self.producer.variance_penalty,
                self.consumer.variance_penalty,
            ),
            ("j_hat", self.producer.j_hat, self.consumer.j_hat),
            ("standard_error", self.producer.se, self.consumer.se),
        ];
        for (name, p, c) in rows {
            writeln!(out, "{name},{},{}", csv_float(p), csv_float(c))?;
        }
        writeln!(
            out,
            "integrated_variance_of_spot,{v},{v}",
            v = csv_float(self.var_s_integral)
        )?;
        writeln!(
            out,
            "variance_identity_gap,{v},{v}",
            v = csv_float(self.variance_identity_gap)
        )?;
        Ok(())
    }
}

impl fmt::Display for McEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Monte Carlo estimate  (n_paths={}, n_time_steps={}, seed={})",
            self.n_paths, self.n_time_steps, self.seed
        )?;
        writeln!(f, "  {:<26}{:>20}{:>20}", "term", "producer", "consumer")?;
        let rows: [(&str, f64, f64); 7] = [
            (
                "profit integral",
                self.producer.profit_integral,
                self.consumer.profit_integral,
            ),
            ("drift control cost", self.producer.drift_cost, self.consumer.drift_cost),
            (
                "volatility control cost",
                self.producer.vol_cost,
                self.consumer.vol_cost,
            ),
            ("contract payoff", self.producer.contract, self.consumer.contract),
            (
                "variance penalty",
                self.producer.variance_penalty,
                self.consumer.variance_penalty,
            ),
            ("J_hat", self.producer.j_hat, self.consumer.j_hat),
            ("standard error", self.producer.se, self.consumer.se),
        ];
        for (name, p, c) in rows {
            writeln!(f, "  {name:<26}{p:>20.8}{c:>20.8}")?;
        }
        write!(
            f,
            "  integrated Var[S] = {:.8e}, variance identity gap = {:.3e}",
            self.var_s_integral, self.variance_identity_gap
        )
    }
}

/// One epsilon arm of a deviation study.
#[derive(Debug, Clone, Copy)]
pub struct DeviationRow {
    pub epsilon: f64,
    /// Estimated objective change of the deviating player relative to the
    /// equilibrium arm, including the variance-penalty difference.
    pub delta_j: f64,
    /// Standard error of the mean per-path profit difference under common
    /// random numbers.
    pub se: f64,
    /// The arm's estimated objective for the deviating player.
    pub j_arm: f64,
}

/// Outcome of a common-random-number deviation study for one player and one
/// perturbed coefficient.
#[derive(Debug, Clone)]
pub struct DeviationTable {
    pub player: Player,
    pub target: DeviationTarget,
    pub n_paths: usize,
    /// Estimated equilibrium objective of the deviating player.
    pub j_equilibrium: f64,
    pub rows: Vec<DeviationRow>,
}

impl DeviationTable {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "epsilon,delta_j,se,j_arm")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                csv_float(row.epsilon),
                csv_float(row.delta_j),
                csv_float(row.se),
                csv_float(row.j_arm)
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for DeviationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Deviation test: {} {}, n_paths={}, J_eq={:.8}",
            self.player, self.target, self.n_paths, self.j_equilibrium
        )?;
        writeln!(f, "  {:>12}{:>18}{:>14}{:>18}", "epsilon", "delta_J", "se", "J_arm")?;
        for row in &self.rows {
            writeln!(
                f,
                "  {:>12.4e}{:>18.8}{:>14.4e}{:>18.8}",
                row.epsilon, row.delta_j, row.se, row.j_arm
            )?;
        }
        Ok(())
    }
}

/// Generator for one path: a stream cipher keyed by the run seed and the
/// path index, so path i's noise never depends on how work was scheduled.
fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(b"mkv-game");
    ChaCha8Rng::from_seed(key)
}

/// Streaming mean/variance accumulator with an exact two-sample merge rule,
/// so chunk partials can be combined in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Welford) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            0.0
        }
    }

    fn se_of_mean(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

/// Streaming covariance accumulator, merge-compatible with [`Welford`].
#[derive(Debug, Clone, Copy, Default)]
struct WelfordCov {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    c: f64,
}

impl WelfordCov {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        self.mean_y += (y - self.mean_y) / self.n;
        self.c += dx * (y - self.mean_y);
    }

    fn merge(&mut self, o: &WelfordCov) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let dx = o.mean_x - self.mean_x;
        let dy = o.mean_y - self.mean_y;
        self.c += o.c + dx * dy * self.n * o.n / n;
        self.mean_x += dx * o.n / n;
        self.mean_y += dy * o.n / n;
        self.n = n;
    }

    /// Unbiased sample covariance.
    fn covariance(&self) -> f64 {
        if self.n > 1.0 {
            self.c / (self.n - 1.0)
        } else {
            0.0
        }
    }
}

/// Policy and trajectory data at one simulation node. Extracted once so the
/// inner path loop reads a flat slice instead of chasing grid functions.
#[derive(Debug, Clone, Copy)]
struct StepCoeffs {
    g_p: [f64; 5],
    g_c: [f64; 5],
    z_p: f64,
    z_c: f64,
    q_bar: f64,
    c_bar: f64,
}

/// Validates a configuration against the solved policy/trajectory pair and
/// extracts the per-node coefficient table on the simulation grid.
fn validate_inputs(
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
    cfg: &SimConfig,
) -> Result<(TimeGrid, Vec<StepCoeffs>), McError> {
    if cfg.n_paths < 2 {
        return Err(McError::TooFewPaths { n_paths: cfg.n_paths });
    }
    if cfg.n_time_steps == 0 {
        return Err(McError::EmptyTimeGrid);
    }
    let ric = policy.producer.gains.grid();
    if ric.n_steps() != traj.grid().n_steps() {
        return Err(McError::MismatchedInputs {
            policy_steps: ric.n_steps(),
            trajectory_steps: traj.grid().n_steps(),
        });
    }
    if ric.n_steps() % cfg.n_time_steps != 0 {
        return Err(McError::GridMismatch {
            coefficient_steps: ric.n_steps(),
            simulation_steps: cfg.n_time_steps,
        });
    }
    let stride = ric.n_steps() / cfg.n_time_steps;
    let sim = TimeGrid::new(ric.horizon(), cfg.n_time_steps);
    let coeffs = (0..=cfg.n_time_steps)
        .map(|i| {
            let j = i * stride;
            StepCoeffs {
                g_p: *policy.producer.gains.value(j),
                g_c: *policy.consumer.gains.value(j),
                z_p: policy.producer.vol.value(j)[0],
                z_c: policy.consumer.vol.value(j)[0],
                q_bar: traj.core.value(j)[M_QBAR],
                c_bar: traj.core.value(j)[M_CBAR],
            }
        })
        .collect();
    Ok((sim, coeffs))
}

/// Instantaneous revenue flow before control costs: the producer sells its
/// output at spot; the consumer sells transformed units at the retail price
/// and sources the input at spot plus the transformation cost.
fn revenue_flow(player: Player, own: f64, s: f64, p: &ModelParams) -> f64 {
    match player {
        Player::Producer => own * s,
        Player::Consumer => own * (p.p0 + p.p1 * s) - p.gamma * own * (s + p.delta),
    }
}

/// Deterministic volatility-adjustment cost `(l/2) ∫ (vol − sigma)² dt` on
/// the simulation grid.
fn integrated_vol_cost(sim: &TimeGrid, vols: impl Iterator<Item = f64>, l: f64, sigma: f64) -> f64 {
    let samples: Vec<f64> = vols.map(|z| 0.5 * l * (z - sigma) * (z - sigma)).collect();
    trapezoid(sim, &samples)
}

/// Cross-sectional accumulators at one node. All samples are centered at the
/// deterministic means before accumulation; that keeps the running sums small
/// and the variance identity tight without changing any estimator.
#[derive(Debug, Clone, Default)]
struct NodeAccum {
    dq: Welford,
    dc: Welford,
    ds: Welford,
    yq: Welford,
    yc: Welford,
    qc: WelfordCov,
}

impl NodeAccum {
    fn push(&mut self, dq: f64, dc: f64, ds: f64, yq: f64, yc: f64) {
        self.dq.push(dq);
        self.dc.push(dc);
        self.ds.push(ds);
        self.yq.push(yq);
        self.yc.push(yc);
        self.qc.push(dq, dc);
    }

    fn merge(&mut self, o: &NodeAccum) {
        self.dq.merge(&o.dq);
        self.dc.merge(&o.dc);
        self.ds.merge(&o.ds);
        self.yq.merge(&o.yq);
        self.yc.merge(&o.yc);
        self.qc.merge(&o.qc);
    }
}

/// Partial statistics of one equilibrium-run chunk.
struct EqAccum {
    rev: [Welford; 2],
    cost: [Welford; 2],
    contract: [Welford; 2],
    profit: [Welford; 2],
    nodes: Vec<NodeAccum>,
}

impl EqAccum {
    fn new(n_nodes: usize) -> Self {
        EqAccum {
            rev: [Welford::default(); 2],
            cost: [Welford::default(); 2],
            contract: [Welford::default(); 2],
            profit: [Welford::default(); 2],
            nodes: vec![NodeAccum::default(); n_nodes],
        }
    }

    fn merge(&mut self, o: &EqAccum) {
        for k in 0..2 {
            self.rev[k].merge(&o.rev[k]);
            self.cost[k].merge(&o.cost[k]);
            self.contract[k].merge(&o.contract[k]);
            self.profit[k].merge(&o.profit[k]);
        }
        for (a, b) in self.nodes.iter_mut().zip(&o.nodes) {
            a.merge(b);
        }
    }
}

/// Shared read-only context for equilibrium chunks.
struct EqContext<'a> {
    p: &'a ModelParams,
    coeffs: &'a [StepCoeffs],
    n_steps: usize,
    dt: f64,
    sqrt_dt: f64,
    a_c: f64,
    /// Positive magnitudes of the two deterministic volatility costs.
    vol_cost: [f64; 2],
    seed: u64,
}

impl EqContext<'_> {
    fn run_chunk(&self, start: u64, end: u64) -> EqAccum {
        let p = self.p;
        let mut acc = EqAccum::new(self.n_steps + 1);
        for path in start..end {
            let mut rng = path_rng(self.seed, path);
            let mut q = p.q0;
            let mut c = p.c0;
            let mut rev = [0.0f64; 2];
            let mut cost = [0.0f64; 2];
            let mut s_terminal = 0.0;
            for i in 0..=self.n_steps {
                let co = &self.coeffs[i];
                let s = p.s0 - p.rho_p * q + self.a_c * c;
                let u = control(&co.g_p, q, c, co.q_bar, co.c_bar);
                let v = control(&co.g_c, c, q, co.c_bar, co.q_bar);
                let w = if i == 0 || i == self.n_steps {
                    0.5 * self.dt
                } else {
                    self.dt
                };
                rev[0] += w * revenue_flow(Player::Producer, q, s, p);
                rev[1] += w * revenue_flow(Player::Consumer, c, s, p);
                cost[0] += w * 0.5 * p.k_p * u * u;
                cost[1] += w * 0.5 * p.k_c * v * v;
                let dq = q - co.q_bar;
                let dc = c - co.c_bar;
                let ds = self.a_c * dc - p.rho_p * dq;
                acc.nodes[i].push(dq, dc, ds, dq * (dq + 2.0 * co.q_bar), dc * (dc + 2.0 * co.c_bar));
                if i < self.n_steps {
                    let dw = self.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    let db = self.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    q += u * self.dt + co.z_p * dw;
                    c += v * self.dt + co.z_c * db;
                } else {
                    s_terminal = s;
                }
            }
            let settle = p.f - p.lambda * s_terminal;
            let contracts = [settle, -settle];
            for k in 0..2 {
                acc.rev[k].push(rev[k]);
                acc.cost[k].push(cost[k]);
                acc.contract[k].push(contracts[k]);
                acc.profit[k].push(rev[k] - cost[k] - self.vol_cost[k] + contracts[k]);
            }
        }
        acc
    }
}

fn chunk_ranges(n_paths: usize) -> Vec<(u64, u64)> {
    let n = n_paths as u64;
    let mut out = Vec::with_capacity((n_paths + CHUNK_PATHS as usize - 1) / CHUNK_PATHS as usize);
    let mut start = 0u64;
    while start < n {
        let end = (start + CHUNK_PATHS).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

/// Simulates the certified equilibrium policy and estimates both objectives.
///
/// Path work is chunked, chunks may run in parallel, and partials are merged
/// in chunk order: the result is bit-reproducible for a fixed configuration.
pub fn simulate_equilibrium(
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
    p: &ValidatedParams,
    cfg: &SimConfig,
) -> Result<McEstimate, McError> {
    if cfg.deviation.is_some() {
        return Err(McError::UnexpectedDeviation);
    }
    let (sim, coeffs) = validate_inputs(policy, traj, cfg)?;
    let a_c = p.gamma * p.rho_c;
    let vol_cost = [
        integrated_vol_cost(&sim, coeffs.iter().map(|co| co.z_p), p.l_p, p.sigma_p),
        integrated_vol_cost(&sim, coeffs.iter().map(|co| co.z_c), p.l_c, p.sigma_c),
    ];
    let ctx = EqContext {
        p,
        coeffs: &coeffs,
        n_steps: cfg.n_time_steps,
        dt: sim.dt(),
        sqrt_dt: sim.dt().sqrt(),
        a_c,
        vol_cost,
        seed: cfg.seed,
    };
    let partials: Vec<EqAccum> = chunk_ranges(cfg.n_paths)
        .into_par_iter()
        .map(|(s, e)| ctx.run_chunk(s, e))
        .collect();
    let mut it = partials.into_iter();
    let mut acc = it.next().expect("n_paths >= 2 yields at least one chunk");
    for part in it {
        acc.merge(&part);
    }

    let node_stats: Vec<NodeStats> = (0..=cfg.n_time_steps)
        .map(|i| {
            let na = &acc.nodes[i];
            let co = &coeffs[i];
            NodeStats {
                t: sim.node(i),
                mean_q: co.q_bar + na.dq.mean(),
                mean_c: co.c_bar + na.dc.mean(),
                se_q: na.dq.se_of_mean(),
                se_c: na.dc.se_of_mean(),
                e_q2: co.q_bar * co.q_bar + na.yq.mean(),
                e_c2: co.c_bar * co.c_bar + na.yc.mean(),
                se_q2: na.yq.se_of_mean(),
                se_c2: na.yc.se_of_mean(),
                var_q: na.dq.variance(),
                var_c: na.dc.variance(),
                cov_qc: na.qc.covariance(),
                var_s: na.ds.variance(),
            }
        })
        .collect();

    let collect_integral = |f: &dyn Fn(&NodeStats) -> f64| {
        let samples: Vec<f64> = node_stats.iter().map(f).collect();
        trapezoid(&sim, &samples)
    };
    let var_s_integral = collect_integral(&|r| r.var_s);
    let decomposed = p.rho_p * p.rho_p * collect_integral(&|r| r.var_q)
        + a_c * a_c * collect_integral(&|r| r.var_c)
        - 2.0 * p.rho_p * a_c * collect_integral(&|r| r.cov_qc);
    let variance_identity_gap = if var_s_integral == 0.0 && decomposed == 0.0 {
        0.0
    } else {
        (var_s_integral - decomposed).abs() / var_s_integral.abs().max(decomposed.abs())
    };

    let lambda_sq = p.lambda * p.lambda;
    let build = |k: usize, eta: f64| {
        let profit_integral = acc.rev[k].mean();
        let drift_cost = -acc.cost[k].mean();
        let vol = -vol_cost[k];
        let contract = acc.contract[k].mean();
        let variance_penalty = -(eta * lambda_sq * var_s_integral);
        PlayerEstimate {
            profit_integral,
            drift_cost,
            vol_cost: vol,
            contract,
            variance_penalty,
            j_hat: profit_integral + drift_cost + vol + contract + variance_penalty,
            se: acc.profit[k].se_of_mean(),
        }
    };

    Ok(McEstimate {
        n_paths: cfg.n_paths,
        n_time_steps: cfg.n_time_steps,
        seed: cfg.seed,
        producer: build(0, p.eta_p),
        consumer: build(1, p.eta_c),
        var_s_integral,
        variance_identity_gap,
        node_stats,
    })
}

/// One perturbed policy arm, tabulated on the simulation grid.
struct DevArm {
    epsilon: f64,
    gains: Vec<[f64; 5]>,
    vol: Vec<f64>,
    vol_cost: f64,
}

/// Partial statistics of one deviation-run chunk.
struct DevAccum {
    profit_eq: Welford,
    profit_arm: Vec<Welford>,
    diff: Vec<Welford>,
    nodes_eq: Vec<Welford>,
    nodes_arm: Vec<Vec<Welford>>,
}

impl DevAccum {
    fn new(n_nodes: usize, n_arms: usize) -> Self {
        DevAccum {
            profit_eq: Welford::default(),
            profit_arm: vec![Welford::default(); n_arms],
            diff: vec![Welford::default(); n_arms],
            nodes_eq: vec![Welford::default(); n_nodes],
            nodes_arm: vec![vec![Welford::default(); n_nodes]; n_arms],
        }
    }

    fn merge(&mut self, o: &DevAccum) {
        self.profit_eq.merge(&o.profit_eq);
        for (a, b) in self.profit_arm.iter_mut().zip(&o.profit_arm) {
            a.merge(b);
        }
        for (a, b) in self.diff.iter_mut().zip(&o.diff) {
            a.merge(b);
        }
        for (a, b) in self.nodes_eq.iter_mut().zip(&o.nodes_eq) {
            a.merge(b);
        }
        for (arm_a, arm_b) in self.nodes_arm.iter_mut().zip(&o.nodes_arm) {
            for (a, b) in arm_a.iter_mut().zip(arm_b) {
                a.merge(b);
            }
        }
    }
}

/// Shared read-only context for deviation chunks.
struct DevContext<'a> {
    p: &'a ModelParams,
    coeffs: &'a [StepCoeffs],
    arms: &'a [DevArm],
    deviator: Player,
    n_steps: usize,
    dt: f64,
    sqrt_dt: f64,
    a_c: f64,
    /// Deviator parameters: drift-cost weight, contract sign, baseline
    /// deterministic volatility cost.
    k_dev: f64,
    contract_sign: f64,
    vol_cost_eq: f64,
    seed: u64,
}

impl DevContext<'_> {
    fn run_chunk(&self, start: u64, end: u64) -> DevAccum {
        let p = self.p;
        let m = self.arms.len();
        let is_producer = self.deviator == Player::Producer;
        let mut acc = DevAccum::new(self.n_steps + 1, m);
        let mut xs = vec![0.0f64; m];
        let mut us = vec![0.0f64; m];
        let mut rev_a = vec![0.0f64; m];
        let mut cost_a = vec![0.0f64; m];
        let mut s_t_a = vec![0.0f64; m];
        for path in start..end {
            let mut rng = path_rng(self.seed, path);
            let mut qe = p.q0;
            let mut ce = p.c0;
            let own0 = if is_producer { p.q0 } else { p.c0 };
            xs.fill(own0);
            rev_a.fill(0.0);
            cost_a.fill(0.0);
            let mut rev_e = 0.0;
            let mut cost_e = 0.0;
            let mut s_t_e = 0.0;
            for i in 0..=self.n_steps {
                let co = &self.coeffs[i];
                let s_e = p.s0 - p.rho_p * qe + self.a_c * ce;
                let u_e = control(&co.g_p, qe, ce, co.q_bar, co.c_bar);
                let v_e = control(&co.g_c, ce, qe, co.c_bar, co.q_bar);
                let w = if i == 0 || i == self.n_steps {
                    0.5 * self.dt
                } else {
                    self.dt
                };
                let dq_e = qe - co.q_bar;
                let dc_e = ce - co.c_bar;
                let (own_e, ctrl_e) = if is_producer { (qe, u_e) } else { (ce, v_e) };
                rev_e += w * revenue_flow(self.deviator, own_e, s_e, p);
                cost_e += w * 0.5 * self.k_dev * ctrl_e * ctrl_e;
                acc.nodes_eq[i].push(self.a_c * dc_e - p.rho_p * dq_e);
                for (j, arm) in self.arms.iter().enumerate() {
                    let x = xs[j];
                    let (s_a, other_e, own_bar, other_bar, ds_a) = if is_producer {
                        let dx = x - co.q_bar;
                        (
                            p.s0 - p.rho_p * x + self.a_c * ce,
                            ce,
                            co.q_bar,
                            co.c_bar,
                            self.a_c * dc_e - p.rho_p * dx,
                        )
                    } else {
                        let dx = x - co.c_bar;
                        (
                            p.s0 - p.rho_p * qe + self.a_c * x,
                            qe,
                            co.c_bar,
                            co.q_bar,
                            self.a_c * dx - p.rho_p * dq_e,
                        )
                    };
                    let u_a = control(&arm.gains[i], x, other_e, own_bar, other_bar);
                    rev_a[j] += w * revenue_flow(self.deviator, x, s_a, p);
                    cost_a[j] += w * 0.5 * self.k_dev * u_a * u_a;
                    acc.nodes_arm[j][i].push(ds_a);
                    us[j] = u_a;
                    if i == self.n_steps {
                        s_t_a[j] = s_a;
                    }
                }
                if i < self.n_steps {
                    let dw = self.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    let db = self.sqrt_dt * rng.sample::<f64, _>(StandardNormal);
                    let d_own = if is_producer { dw } else { db };
                    for (j, arm) in self.arms.iter().enumerate() {
                        xs[j] += us[j] * self.dt + arm.vol[i] * d_own;
                    }
                    qe += u_e * self.dt + co.z_p * dw;
                    ce += v_e * self.dt + co.z_c * db;
                } else {
                    s_t_e = s_e;
                }
            }
            let settle_e = self.contract_sign * (p.f - p.lambda * s_t_e);
            let p_eq = rev_e - cost_e - self.vol_cost_eq + settle_e;
            acc.profit_eq.push(p_eq);
            for j in 0..m {
                let settle_a = self.contract_sign * (p.f - p.lambda * s_t_a[j]);
                let p_arm = rev_a[j] - cost_a[j] - self.arms[j].vol_cost + settle_a;
                acc.profit_arm[j].push(p_arm);
                acc.diff[j].push(p_arm - p_eq);
            }
        }
        acc
    }
}

/// Runs the no-profitable-deviation study named by `cfg.deviation`.
///
/// For each epsilon, one feedback coefficient of the deviating player is
/// perturbed and the game is re-simulated against the *unperturbed* opponent
/// under common random numbers: every arm reuses the per-path noise of the
/// equilibrium arm, and the opponent's realised control process is the
/// equilibrium one (its path is identical across arms). The deterministic
/// mean-field inputs of the feedback law stay at their equilibrium values —
/// the perturbed strategy is still an admissible response to the equilibrium
/// law. Each row reports the deviating player's objective change with the
/// standard error of the per-path profit difference.
///
/// An empty `epsilons` grid falls back to the single epsilon carried by the
/// deviation spec.
pub fn deviation_test(
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
    p: &ValidatedParams,
    cfg: &SimConfig,
    epsilons: &[f64],
) -> Result<DeviationTable, McError> {
    let spec = cfg.deviation.ok_or(McError::MissingDeviation)?;
    let (sim, coeffs) = validate_inputs(policy, traj, cfg)?;
    let grid: Vec<f64> = if epsilons.is_empty() {
        vec![spec.epsilon]
    } else {
        epsilons.to_vec()
    };
    let is_producer = spec.player == Player::Producer;
    let (k_dev, l_dev, sigma_dev) = if is_producer {
        (p.k_p, p.l_p, p.sigma_p)
    } else {
        (p.k_c, p.l_c, p.sigma_c)
    };
    let base_gains = |co: &StepCoeffs| if is_producer { co.g_p } else { co.g_c };
    let base_vol = |co: &StepCoeffs| if is_producer { co.z_p } else { co.z_c };
    let arms: Vec<DevArm> = grid
        .iter()
        .map(|&epsilon| {
            let mut gains: Vec<[f64; 5]> = coeffs.iter().map(&base_gains).collect();
            let mut vol: Vec<f64> = coeffs.iter().map(&base_vol).collect();
            match spec.target {
                DeviationTarget::OwnDeviationGain => {
                    for g in &mut gains {
                        g[GAIN_OWN_DEV] += epsilon;
                    }
                }
                DeviationTarget::OwnMeanGain => {
                    for g in &mut gains {
                        g[GAIN_OWN_MEAN] += epsilon;
                    }
                }
                DeviationTarget::VolShift => {
                    for z in &mut vol {
                        *z += epsilon;
                    }
                }
            }
            let vol_cost = integrated_vol_cost(&sim, vol.iter().copied(), l_dev, sigma_dev);
            DevArm {
                epsilon,
                gains,
                vol,
                vol_cost,
            }
        })
        .collect();
    let ctx = DevContext {
        p,
        coeffs: &coeffs,
        arms: &arms,
        deviator: spec.player,
        n_steps: cfg.n_time_steps,
        dt: sim.dt(),
        sqrt_dt: sim.dt().sqrt(),
        a_c: p.gamma * p.rho_c,
        k_dev,
        contract_sign: if is_producer { 1.0 } else { -1.0 },
        vol_cost_eq: integrated_vol_cost(&sim, coeffs.iter().map(&base_vol), l_dev, sigma_dev),
        seed: cfg.seed,
    };
    let partials: Vec<DevAccum> = chunk_ranges(cfg.n_paths)
        .into_par_iter()
        .map(|(s, e)| ctx.run_chunk(s, e))
        .collect();
    let mut it = partials.into_iter();
    let mut acc = it.next().expect("n_paths >= 2 yields at least one chunk");
    for part in it {
        acc.merge(&part);
    }

    let eta_dev = if is_producer { p.eta_p } else { p.eta_c };
    let lambda_sq = p.lambda * p.lambda;
    let penalty = |nodes: &[Welford]| {
        let samples: Vec<f64> = nodes.iter().map(|w| w.variance()).collect();
        eta_dev * lambda_sq * trapezoid(&sim, &samples)
    };
    let pen_eq = penalty(&acc.nodes_eq);
    let rows = arms
        .iter()
        .enumerate()
        .map(|(j, arm)| {
            let pen_arm = penalty(&acc.nodes_arm[j]);
            DeviationRow {
                epsilon: arm.epsilon,
                delta_j: acc.diff[j].mean() - (pen_arm - pen_eq),
                se: acc.diff[j].se_of_mean(),
                j_arm: acc.profit_arm[j].mean() - pen_arm,
            }
        })
        .collect();
    Ok(DeviationTable {
        player: spec.player,
        target: spec.target,
        n_paths: cfg.n_paths,
        j_equilibrium: acc.profit_eq.mean() - pen_eq,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;
    use crate::model::ModelParams;

    fn variant(lambda: f64, f: f64, sigma: f64) -> ValidatedParams {
        let mut p = ModelParams::baseline();
        p.lambda = lambda;
        p.f = f;
        p.sigma_p = sigma;
        p.sigma_c = sigma;
        p.validate().expect("baseline variant is admissible")
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn noise_free_runs_reduce_to_the_deterministic_quadrature() {
        let p = variant(1.0, 30.0, 0.0);
        let eq = solve_equilibrium(&p, 20_000).expect("solvable");
        let cfg = SimConfig::new(2, 10_000, 11);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        assert!(
            rel_err(est.producer.j_hat, eq.report.j_p) <= 1e-6,
            "producer noise-free estimate {} should match the deterministic value {}",
            est.producer.j_hat,
            eq.report.j_p
        );
        assert!(
            rel_err(est.consumer.j_hat, eq.report.j_c) <= 1e-6,
            "consumer noise-free estimate {} should match the deterministic value {}",
            est.consumer.j_hat,
            eq.report.j_c
        );
        assert_eq!(est.producer.se, 0.0, "identical paths leave no sampling error");
        assert_eq!(est.var_s_integral, 0.0, "no noise means no spot variance");
        assert_eq!(est.variance_identity_gap, 0.0);
    }

    #[test]
    fn estimates_are_bit_reproducible() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 200).expect("solvable");
        let cfg = SimConfig::new(4096, 100, 7);
        let a = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        let b = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        assert_eq!(a.producer.j_hat, b.producer.j_hat);
        assert_eq!(a.consumer.j_hat, b.consumer.j_hat);
        assert_eq!(a.producer.se, b.producer.se);
        assert_eq!(a.var_s_integral, b.var_s_integral);
        assert_eq!(a.node_stats[50].var_s, b.node_stats[50].var_s);
        assert_eq!(a.node_stats[100].mean_q, b.node_stats[100].mean_q);
    }

    #[test]
    fn standard_errors_shrink_like_root_n() {
        let p = variant(0.0, 0.0, 10.0);
        let eq = solve_equilibrium(&p, 100).expect("solvable");
        let small = SimConfig::new(2048, 50, 3);
        let large = SimConfig::new(4096, 50, 3);
        let a = simulate_equilibrium(&eq.policy, &eq.moments, &p, &small).expect("simulates");
        let b = simulate_equilibrium(&eq.policy, &eq.moments, &p, &large).expect("simulates");
        assert!(a.producer.se > 0.0 && b.producer.se > 0.0, "noisy runs carry sampling error");
        for (se_small, se_large) in [
            (a.producer.se, b.producer.se),
            (a.consumer.se, b.consumer.se),
        ] {
            let ratio = se_small / se_large;
            assert!(
                (1.15..1.75).contains(&ratio),
                "doubling the paths should shrink the error by about sqrt(2), got ratio {ratio}"
            );
        }
    }

    #[test]
    fn variance_identity_holds_to_accumulation_error() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 400).expect("solvable");
        let cfg = SimConfig::new(20_000, 200, 5);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        assert!(
            est.variance_identity_gap <= 1e-10,
            "spot-variance decomposition should agree to accumulation error, gap {}",
            est.variance_identity_gap
        );
        assert!(est.var_s_integral > 0.0);
    }

    #[test]
    fn empirical_moments_track_the_ode_trajectory() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 400).expect("solvable");
        let cfg = SimConfig::new(20_000, 200, 5);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        let t = p.horizon;
        let bands = est.moment_bands(&eq.moments, &[t / 4.0, t / 2.0, t], 4.0);
        assert_eq!(bands.len(), 12);
        for band in bands {
            assert!(
                band.within,
                "{} at t={} drifted: estimate {} vs trajectory {} (se {})",
                band.quantity, band.t, band.estimate, band.target, band.se
            );
        }
    }

    #[test]
    fn profit_terms_sum_to_the_estimate() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 100).expect("solvable");
        let cfg = SimConfig::new(512, 50, 9);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        for pl in [est.producer, est.consumer] {
            let total =
                pl.profit_integral + pl.drift_cost + pl.vol_cost + pl.contract + pl.variance_penalty;
            assert_eq!(pl.j_hat, total, "the headline estimate is defined as the term sum");
        }
    }

    #[test]
    fn monte_carlo_covers_the_semi_explicit_value() {
        let p = variant(0.0, 0.0, 10.0);
        let eq = solve_equilibrium(&p, 500).expect("solvable");
        let cfg = SimConfig::new(30_000, 250, 13);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        for (hat, star, se, who) in [
            (est.producer.j_hat, eq.report.j_p, est.producer.se, "producer"),
            (est.consumer.j_hat, eq.report.j_c, est.consumer.se, "consumer"),
        ] {
            assert!(
                (hat - star).abs() <= 3.0 * se,
                "{who} estimate {hat} is outside three standard errors ({se}) of {star}"
            );
        }
    }

    #[test]
    fn config_validation_rejects_inconsistent_requests() {
        let p = variant(0.0, 0.0, 10.0);
        let eq = solve_equilibrium(&p, 100).expect("solvable");
        let run = |cfg: &SimConfig| simulate_equilibrium(&eq.policy, &eq.moments, &p, cfg);

        let too_few = SimConfig::new(1, 50, 0);
        assert!(matches!(run(&too_few), Err(McError::TooFewPaths { n_paths: 1 })));

        let empty = SimConfig::new(8, 0, 0);
        assert!(matches!(run(&empty), Err(McError::EmptyTimeGrid)));

        let misaligned = SimConfig::new(8, 33, 0);
        assert!(matches!(
            run(&misaligned),
            Err(McError::GridMismatch {
                coefficient_steps: 100,
                simulation_steps: 33
            })
        ));

        let mut deviating = SimConfig::new(8, 50, 0);
        deviating.deviation = Some(DeviationSpec {
            player: Player::Producer,
            target: DeviationTarget::VolShift,
            epsilon: 0.1,
        });
        assert!(matches!(run(&deviating), Err(McError::UnexpectedDeviation)));
        assert!(matches!(
            deviation_test(&eq.policy, &eq.moments, &p, &SimConfig::new(8, 50, 0), &[0.1]),
            Err(McError::MissingDeviation)
        ));

        let other = solve_equilibrium(&p, 200).expect("solvable");
        assert!(matches!(
            simulate_equilibrium(&eq.policy, &other.moments, &p, &SimConfig::new(8, 50, 0)),
            Err(McError::MismatchedInputs {
                policy_steps: 100,
                trajectory_steps: 200
            })
        ));
    }

    fn deviation_cfg(n_paths: usize, n_steps: usize, spec: DeviationSpec) -> SimConfig {
        let mut cfg = SimConfig::new(n_paths, n_steps, 17);
        cfg.deviation = Some(spec);
        cfg
    }

    #[test]
    fn zero_epsilon_deviation_is_exactly_null() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 200).expect("solvable");
        let cfg = deviation_cfg(
            2048,
            100,
            DeviationSpec {
                player: Player::Producer,
                target: DeviationTarget::OwnMeanGain,
                epsilon: 0.05,
            },
        );
        let table = deviation_test(&eq.policy, &eq.moments, &p, &cfg, &[-0.05, 0.0, 0.05])
            .expect("simulates");
        assert_eq!(table.rows.len(), 3);
        let zero = &table.rows[1];
        assert_eq!(zero.epsilon, 0.0);
        assert_eq!(zero.delta_j, 0.0, "identical streams must cancel bitwise");
        assert_eq!(zero.se, 0.0);
        assert_eq!(zero.j_arm, table.j_equilibrium);
    }

    #[test]
    fn empty_epsilon_grid_falls_back_to_the_spec_value() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 100).expect("solvable");
        let cfg = deviation_cfg(
            512,
            50,
            DeviationSpec {
                player: Player::Consumer,
                target: DeviationTarget::VolShift,
                epsilon: 0.25,
            },
        );
        let table = deviation_test(&eq.policy, &eq.moments, &p, &cfg, &[]).expect("simulates");
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].epsilon, 0.25);
    }

    #[test]
    fn gain_deviations_never_profit_beyond_noise() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 500).expect("solvable");
        for (player, target) in [
            (Player::Producer, DeviationTarget::OwnMeanGain),
            (Player::Producer, DeviationTarget::OwnDeviationGain),
            (Player::Consumer, DeviationTarget::OwnMeanGain),
        ] {
            let cfg = deviation_cfg(
                20_000,
                250,
                DeviationSpec {
                    player,
                    target,
                    epsilon: 0.05,
                },
            );
            let table = deviation_test(&eq.policy, &eq.moments, &p, &cfg, &[-0.05, 0.05])
                .expect("simulates");
            for row in &table.rows {
                assert!(row.se > 0.0);
                assert!(
                    row.delta_j <= 2.0 * row.se,
                    "{player} {target} eps={} should not profit: delta {} vs se {}",
                    row.epsilon,
                    row.delta_j,
                    row.se
                );
            }
        }
    }

    #[test]
    fn volatility_shifts_lose_beyond_noise() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 500).expect("solvable");
        let cfg = deviation_cfg(
            20_000,
            250,
            DeviationSpec {
                player: Player::Producer,
                target: DeviationTarget::VolShift,
                epsilon: 0.2,
            },
        );
        let table =
            deviation_test(&eq.policy, &eq.moments, &p, &cfg, &[-0.2, 0.2]).expect("simulates");
        for row in &table.rows {
            assert!(
                row.delta_j < -2.0 * row.se,
                "a volatility shift of {} must lose strictly: delta {} vs se {}",
                row.epsilon,
                row.delta_j,
                row.se
            );
        }
    }

    #[test]
    fn estimate_tables_have_the_documented_shape() {
        let p = variant(1.0, 48.0, 10.0);
        let eq = solve_equilibrium(&p, 100).expect("solvable");
        let cfg = SimConfig::new(256, 50, 2);
        let est = simulate_equilibrium(&eq.policy, &eq.moments, &p, &cfg).expect("simulates");
        let mut csv = Vec::new();
        est.write_csv(&mut csv).expect("in-memory write");
        let text = String::from_utf8(csv).expect("utf-8");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10, "header, seven terms, two diagnostics");
        assert_eq!(lines[0], "term,producer,consumer");
        assert!(lines.iter().all(|l| l.split(',').count() == 3));
        assert_eq!(est.node_stats.len(), 51);

        let mut dev_cfg = SimConfig::new(256, 50, 2);
        dev_cfg.deviation = Some(DeviationSpec {
            player: Player::Producer,
            target: DeviationTarget::OwnMeanGain,
            epsilon: 0.05,
        });
        let table =
            deviation_test(&eq.policy, &eq.moments, &p, &dev_cfg, &[-0.05, 0.0, 0.05])
                .expect("simulates");
        let mut csv = Vec::new();
        table.write_csv(&mut csv).expect("in-memory write");
        let text = String::from_utf8(csv).expect("utf-8");
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next(), Some("epsilon,delta_j,se,j_arm"));
    }
}
