//! The equilibrium itself: feedback controls, state-moment dynamics, value
//! quadratures, and realized objectives.
//!
//! Once the backward systems are solved, each player's optimal drift control
//! is an affine function of the state `(q, c)` and its mean `(q_bar, c_bar)`,
//! and the optimal volatility is the deterministic curve `sigma l / margin`.
//! Under those controls the mean and second moments of the state follow a
//! closed ODE system integrated forward here, which in turn feeds the
//! quadratures `R_p(0)`, `R_c(0)` and the scalar objectives
//!
//! ```text
//! J_p = Lambda_p(0) q0^2 + 2 Ybar_p(0) q0 + R_p(0) + F - lambda s0 - (l_p sigma_p^2 T) / 2
//! J_c = Lambda_c(0) c0^2 + 2 Ybar_c(0) c0 + R_c(0) - F + lambda s0 - (l_c sigma_c^2 T) / 2
//! ```
//!
//! The adjoint second moments `E[Y^2]` that enter the quadratures come from
//! the affine representation of the adjoints in the state; an independent
//! backward ODE for the same quantities ([`crosscheck_ey2_backward`]) guards
//! the whole chain against formula and integration mistakes.

use crate::grid::{rk4_backward, rk4_forward, simpson, GridFunction, TimeGrid};
use crate::model::{TanhCurve, ValidatedParams};
use crate::riccati::{check_admissibility, solve_riccati, RiccatiSolution, SolveError};
use std::io::{self, Write};

/// Gain ordering inside [`PlayerPolicy::gains`].
pub const GAIN_OWN_DEV: usize = 0;
pub const GAIN_CROSS_DEV: usize = 1;
pub const GAIN_OWN_MEAN: usize = 2;
pub const GAIN_CROSS_MEAN: usize = 3;
pub const GAIN_INTERCEPT: usize = 4;

/// Component ordering inside [`MomentTrajectory::core`].
pub const M_QBAR: usize = 0;
pub const M_CBAR: usize = 1;
pub const M_EQ2: usize = 2;
pub const M_EC2: usize = 3;
pub const M_EQC: usize = 4;

/// One player's equilibrium controls in feedback form.
///
/// The drift control is `gains . (own - own_bar, other - other_bar,
/// own_bar, other_bar, 1)` with "own" the player's own state coordinate
/// (`q` for the producer, `c` for the consumer); [`control`] applies it.
/// `vol` is the optimal volatility, a deterministic function of time.
#[derive(Debug, Clone)]
pub struct PlayerPolicy {
    pub gains: GridFunction<5>,
    pub vol: GridFunction<1>,
}

/// Applies a gain vector to a state/mean configuration.
pub fn control(g: &[f64; 5], own: f64, other: f64, own_bar: f64, other_bar: f64) -> f64 {
    g[GAIN_OWN_DEV] * (own - own_bar)
        + g[GAIN_CROSS_DEV] * (other - other_bar)
        + g[GAIN_OWN_MEAN] * own_bar
        + g[GAIN_CROSS_MEAN] * other_bar
        + g[GAIN_INTERCEPT]
}

/// Both players' feedback policies on a common grid.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub producer: PlayerPolicy,
    pub consumer: PlayerPolicy,
}

/// Assembles the affine feedback gains and volatility curves from the
/// backward solutions. Fails if the volatility margins are not strictly
/// positive everywhere, since the volatility formula divides by them.
pub fn build_policy(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
) -> Result<FeedbackPolicy, SolveError> {
    check_admissibility(sol)?;
    let producer = player_policy(
        2.0 / p.k_p,
        p.sigma_p * p.l_p,
        &sol.coeffs.kp,
        &sol.coeffs.lp,
        sol,
        &sol.margin_p,
        (0, 1, 0),
    );
    let consumer = player_policy(
        2.0 / p.k_c,
        p.sigma_c * p.l_c,
        &sol.coeffs.kc,
        &sol.coeffs.lc,
        sol,
        &sol.margin_c,
        (3, 2, 1),
    );
    Ok(FeedbackPolicy { producer, consumer })
}

fn player_policy(
    two_over_k: f64,
    sigma_l: f64,
    own_curve: &TanhCurve,
    mean_curve: &TanhCurve,
    sol: &RiccatiSolution,
    margin: &GridFunction<1>,
    (own_idx, cross_idx, h_idx): (usize, usize, usize),
) -> PlayerPolicy {
    let grid = sol.pi.grid();
    let n = grid.n_nodes();
    let mut gains = Vec::with_capacity(n);
    let mut d_gains = Vec::with_capacity(n);
    let mut vol = Vec::with_capacity(n);
    let mut d_vol = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.node(i);
        let (pi, d_pi) = (sol.pi.value(i), sol.pi.deriv(i));
        let (ph, d_ph) = (sol.pi_hat.value(i), sol.pi_hat.deriv(i));
        let (h, d_h) = (sol.h.value(i), sol.h.deriv(i));
        gains.push([
            two_over_k * (own_curve.value(t) + pi[own_idx]),
            two_over_k * pi[cross_idx],
            two_over_k * (mean_curve.value(t) + ph[own_idx]),
            two_over_k * ph[cross_idx],
            two_over_k * h[h_idx],
        ]);
        d_gains.push([
            two_over_k * (own_curve.deriv(t) + d_pi[own_idx]),
            two_over_k * d_pi[cross_idx],
            two_over_k * (mean_curve.deriv(t) + d_ph[own_idx]),
            two_over_k * d_ph[cross_idx],
            two_over_k * d_h[h_idx],
        ]);
        let (m, d_m) = (margin.value(i)[0], margin.deriv(i)[0]);
        vol.push([sigma_l / m]);
        d_vol.push([-sigma_l * d_m / (m * m)]);
    }
    PlayerPolicy {
        gains: GridFunction::new(grid.clone(), gains, d_gains),
        vol: GridFunction::new(grid.clone(), vol, d_vol),
    }
}

/// First and second moments of the equilibrium state, plus everything
/// derived from them at the grid nodes: adjoint means `Ybar`, adjoint
/// second moments `E[Y^2]`, state variances/covariance, and the mean spot
/// price `E[S_t] = s0 - rho_p q_bar + gamma rho_c c_bar`.
#[derive(Debug, Clone)]
pub struct MomentTrajectory {
    /// `[q_bar, c_bar, E[q^2], E[c^2], E[qc]]`, integrated forward.
    pub core: GridFunction<5>,
    pub ybar_p: Vec<f64>,
    pub ybar_c: Vec<f64>,
    pub ey2_p: Vec<f64>,
    pub ey2_c: Vec<f64>,
    pub var_q: Vec<f64>,
    pub var_c: Vec<f64>,
    pub cov_qc: Vec<f64>,
    pub mean_spot: Vec<f64>,
}

fn all_finite(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// Integrates the closed moment system under the equilibrium policy.
pub fn integrate_moments(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
    policy: &FeedbackPolicy,
) -> Result<MomentTrajectory, SolveError> {
    let grid = sol.pi.grid();
    let initial = [p.q0, p.c0, p.q0 * p.q0, p.c0 * p.c0, p.q0 * p.c0];
    let rhs = |t: f64, m: &[f64; 5]| {
        let gp = policy.producer.gains.eval(t);
        let gc = policy.consumer.gains.eval(t);
        let z = policy.producer.vol.eval(t)[0];
        let y = policy.consumer.vol.eval(t)[0];
        let (qb, cb) = (m[M_QBAR], m[M_CBAR]);
        let vq = m[M_EQ2] - qb * qb;
        let vc = m[M_EC2] - cb * cb;
        let cqc = m[M_EQC] - qb * cb;
        // Mean parts of each control (the deviation gains average to zero).
        let up = gp[GAIN_OWN_MEAN] * qb + gp[GAIN_CROSS_MEAN] * cb + gp[GAIN_INTERCEPT];
        let vc_mean = gc[GAIN_OWN_MEAN] * cb + gc[GAIN_CROSS_MEAN] * qb + gc[GAIN_INTERCEPT];
        // E[q u], E[c u], E[c v], E[q v] for the affine controls.
        let e_qu = gp[GAIN_OWN_DEV] * vq + gp[GAIN_CROSS_DEV] * cqc + qb * up;
        let e_cu = gp[GAIN_OWN_DEV] * cqc + gp[GAIN_CROSS_DEV] * vc + cb * up;
        let e_cv = gc[GAIN_OWN_DEV] * vc + gc[GAIN_CROSS_DEV] * cqc + cb * vc_mean;
        let e_qv = gc[GAIN_OWN_DEV] * cqc + gc[GAIN_CROSS_DEV] * vq + qb * vc_mean;
        [
            up,
            vc_mean,
            2.0 * e_qu + z * z,
            2.0 * e_cv + y * y,
            e_cu + e_qv,
        ]
    };
    let core = rk4_forward(grid, initial, rhs, |_, y| all_finite(y))
        .map_err(|a| SolveError::BlowUp { system: "state moments", t: a.t, limit: f64::INFINITY })?;

    let n = grid.n_nodes();
    let mut traj = MomentTrajectory {
        core,
        ybar_p: Vec::with_capacity(n),
        ybar_c: Vec::with_capacity(n),
        ey2_p: Vec::with_capacity(n),
        ey2_c: Vec::with_capacity(n),
        var_q: Vec::with_capacity(n),
        var_c: Vec::with_capacity(n),
        cov_qc: Vec::with_capacity(n),
        mean_spot: Vec::with_capacity(n),
    };
    for i in 0..n {
        let m = traj.core.value(i);
        let (qb, cb) = (m[M_QBAR], m[M_CBAR]);
        let vq = m[M_EQ2] - qb * qb;
        let vc = m[M_EC2] - cb * cb;
        let cqc = m[M_EQC] - qb * cb;
        let pi = sol.pi.value(i);
        let ph = sol.pi_hat.value(i);
        let h = sol.h.value(i);
        let ybp = ph[0] * qb + ph[1] * cb + h[0];
        let ybc = ph[2] * qb + ph[3] * cb + h[1];
        traj.ybar_p.push(ybp);
        traj.ybar_c.push(ybc);
        // Adjoints are affine in the state, so their second moments follow
        // from the state moments: Y_p = pi_11 (q - q_bar) + pi_12 (c - c_bar) + Ybar_p.
        traj.ey2_p
            .push(pi[0] * pi[0] * vq + 2.0 * pi[0] * pi[1] * cqc + pi[1] * pi[1] * vc + ybp * ybp);
        traj.ey2_c
            .push(pi[2] * pi[2] * vq + 2.0 * pi[2] * pi[3] * cqc + pi[3] * pi[3] * vc + ybc * ybc);
        traj.var_q.push(vq);
        traj.var_c.push(vc);
        traj.cov_qc.push(cqc);
        traj.mean_spot.push(p.s0 - p.rho_p * qb + sol.coeffs.a_c * cb);
    }
    Ok(traj)
}

impl MomentTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        self.core.grid()
    }

    /// Expected spot price at the end of the horizon, `E[S_T]`.
    pub fn terminal_mean_spot(&self) -> f64 {
        *self.mean_spot.last().expect("grids have at least two nodes")
    }

    /// One row per node: means, raw second moments, central moments,
    /// adjoint means and second moments, and the mean spot price.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        use crate::grid::csv_float;
        let grid = self.grid().clone();
        writeln!(
            out,
            "t,q_bar,c_bar,e_q2,e_c2,e_qc,var_q,var_c,cov_qc,ybar_p,ybar_c,ey2_p,ey2_c,mean_spot"
        )?;
        for i in 0..grid.n_nodes() {
            let m = self.core.value(i);
            let cols = [
                grid.node(i),
                m[M_QBAR],
                m[M_CBAR],
                m[M_EQ2],
                m[M_EC2],
                m[M_EQC],
                self.var_q[i],
                self.var_c[i],
                self.cov_qc[i],
                self.ybar_p[i],
                self.ybar_c[i],
                self.ey2_p[i],
                self.ey2_c[i],
                self.mean_spot[i],
            ];
            let row: Vec<String> = cols.iter().map(|x| csv_float(*x)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrands of the value quadratures, sampled at every node.
pub(crate) fn r_integrands(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
) -> (Vec<f64>, Vec<f64>) {
    let grid = sol.pi.grid();
    let lam2 = p.lambda * p.lambda;
    let a_c = sol.coeffs.a_c;
    let n = grid.n_nodes();
    let mut ip = Vec::with_capacity(n);
    let mut ic = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.node(i);
        let pi = sol.pi.value(i);
        let z = policy.producer.vol.value(i)[0];
        let y = policy.consumer.vol.value(i)[0];
        ip.push(
            (2.0 / p.k_p) * traj.ey2_p[i] - p.eta_p * lam2 * (a_c * a_c) * traj.var_c[i]
                + 2.0 * (pi[0] * z + 0.5 * p.l_p * p.sigma_p).powi(2)
                    / (p.l_p - 2.0 * sol.coeffs.kp.value(t)),
        );
        ic.push(
            (2.0 / p.k_c) * traj.ey2_c[i] - p.eta_c * lam2 * (p.rho_p * p.rho_p) * traj.var_q[i]
                + 2.0 * (pi[3] * y + 0.5 * p.l_c * p.sigma_c).powi(2)
                    / (p.l_c - 2.0 * sol.coeffs.kc.value(t)),
        );
    }
    (ip, ic)
}

/// The value quadratures `(R_p(0), R_c(0))` by composite Simpson over the
/// solution grid, including the terminal settlement terms `-lambda
/// gamma rho_c c_bar(T)` and `-lambda rho_p q_bar(T)`.
pub fn compute_r(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
) -> Result<(f64, f64), SolveError> {
    let grid = sol.pi.grid();
    if grid.n_steps() % 2 != 0 {
        return Err(SolveError::GridParity { n_steps: grid.n_steps() });
    }
    let (ip, ic) = r_integrands(p, sol, policy, traj);
    let last = grid.n_nodes() - 1;
    let qb_t = traj.core.value(last)[M_QBAR];
    let cb_t = traj.core.value(last)[M_CBAR];
    let r_p = simpson(grid, &ip) - p.lambda * sol.coeffs.a_c * cb_t;
    let r_c = simpson(grid, &ic) - p.lambda * p.rho_p * qb_t;
    Ok((r_p, r_c))
}

/// Scalar summary of one equilibrium solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumReport {
    pub lambda: f64,
    pub f: f64,
    /// Producer objective at the equilibrium.
    pub j_p: f64,
    /// Consumer objective at the equilibrium.
    pub j_c: f64,
    pub r_p0: f64,
    pub r_c0: f64,
    pub ybar_p0: f64,
    pub ybar_c0: f64,
    pub expected_spot_terminal: f64,
}

impl std::fmt::Display for EquilibriumReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "contract:        lambda = {}, F = {}", self.lambda, self.f)?;
        writeln!(f, "objectives:      J_p = {}, J_c = {}", self.j_p, self.j_c)?;
        writeln!(f, "quadratures:     R_p(0) = {}, R_c(0) = {}", self.r_p0, self.r_c0)?;
        writeln!(
            f,
            "adjoint means:   Ybar_p(0) = {}, Ybar_c(0) = {}",
            self.ybar_p0, self.ybar_c0
        )?;
        write!(f, "terminal spot:   E[S_T] = {}", self.expected_spot_terminal)
    }
}

/// Assembles both objectives from the solved pieces.
pub fn compute_payoffs(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
    traj: &MomentTrajectory,
    r_p0: f64,
    r_c0: f64,
) -> EquilibriumReport {
    let j_p = sol.coeffs.lp.value(0.0) * p.q0 * p.q0 + 2.0 * traj.ybar_p[0] * p.q0 + r_p0 + p.f
        - p.lambda * p.s0
        - 0.5 * p.l_p * p.sigma_p * p.sigma_p * p.horizon;
    let j_c = sol.coeffs.lc.value(0.0) * p.c0 * p.c0 + 2.0 * traj.ybar_c[0] * p.c0 + r_c0 - p.f
        + p.lambda * p.s0
        - 0.5 * p.l_c * p.sigma_c * p.sigma_c * p.horizon;
    EquilibriumReport {
        lambda: p.lambda,
        f: p.f,
        j_p,
        j_c,
        r_p0,
        r_c0,
        ybar_p0: traj.ybar_p[0],
        ybar_c0: traj.ybar_c[0],
        expected_spot_terminal: traj.terminal_mean_spot(),
    }
}

/// Everything one parameter set produces: backward solutions, feedback
/// policy, state moments, and the scalar report.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub params: ValidatedParams,
    pub riccati: RiccatiSolution,
    pub policy: FeedbackPolicy,
    pub moments: MomentTrajectory,
    pub report: EquilibriumReport,
}

/// Runs the full pipeline on a fresh grid with `n_steps` steps.
pub fn solve_equilibrium(p: &ValidatedParams, n_steps: usize) -> Result<Equilibrium, SolveError> {
    let grid = TimeGrid::new(p.horizon, n_steps);
    let riccati = solve_riccati(p, &grid)?;
    let policy = build_policy(p, &riccati)?;
    let moments = integrate_moments(p, &riccati, &policy)?;
    let (r_p0, r_c0) = compute_r(p, &riccati, &policy, &moments)?;
    let report = compute_payoffs(p, &riccati, &moments, r_p0, r_c0);
    Ok(Equilibrium { params: p.clone(), riccati, policy, moments, report })
}

/// Independently recomputes the adjoint second moments `E[Y_p^2]`,
/// `E[Y_c^2]` by integrating their own backward ODEs (from Ito's formula on
/// the adjoint dynamics) and returns the worst absolute gap to the affine
/// representation stored in `traj`, one entry per player.
///
/// The two routes share nothing except the backward matrix solutions, so
/// agreement pins down the moment system, the affine adjoint
/// representation, and the integrators at once.
pub fn crosscheck_ey2_backward(
    p: &ValidatedParams,
    sol: &RiccatiSolution,
    policy: &FeedbackPolicy,
    traj: &MomentTrajectory,
) -> Result<[f64; 2], SolveError> {
    let grid = sol.pi.grid();
    let lam2 = p.lambda * p.lambda;
    let a_c = sol.coeffs.a_c;
    let rhs = |t: f64, y: &[f64; 2]| {
        let m = traj.core.eval(t);
        let (qb, cb) = (m[M_QBAR], m[M_CBAR]);
        let vq = m[M_EQ2] - qb * qb;
        let vc = m[M_EC2] - cb * cb;
        let cqc = m[M_EQC] - qb * cb;
        let pi = sol.pi.eval(t);
        let ph = sol.pi_hat.eval(t);
        let h = sol.h.eval(t);
        let ybp = ph[0] * qb + ph[1] * cb + h[0];
        let ybc = ph[2] * qb + ph[3] * cb + h[1];
        let z = policy.producer.vol.eval(t)[0];
        let yv = policy.consumer.vol.eval(t)[0];
        // Mixed moments E[Y_p c] and E[Y_c q] via the affine representation.
        let eypc = pi[0] * cqc + pi[1] * vc + ybp * cb;
        let eycq = pi[2] * vq + pi[3] * cqc + ybc * qb;
        let dp = -2.0
            * (-sol.coeffs.psi[0] * ybp
                + 0.5 * a_c * eypc
                + p.rho_p * a_c * p.eta_p * lam2 * (eypc - ybp * cb)
                + (2.0 / p.k_p)
                    * (sol.coeffs.kp.value(t) * (y[0] - ybp * ybp)
                        + sol.coeffs.lp.value(t) * ybp * ybp))
            + pi[0] * pi[0] * z * z
            + pi[1] * pi[1] * yv * yv;
        let dc = -2.0
            * (-sol.coeffs.psi[1] * ybc
                + 0.5 * p.rho_p * (p.gamma - p.p1) * eycq
                + p.rho_p * a_c * p.eta_c * lam2 * (eycq - ybc * qb)
                + (2.0 / p.k_c)
                    * (sol.coeffs.kc.value(t) * (y[1] - ybc * ybc)
                        + sol.coeffs.lc.value(t) * ybc * ybc))
            + pi[2] * pi[2] * z * z
            + pi[3] * pi[3] * yv * yv;
        [dp, dc]
    };
    let terminal = [
        0.25 * lam2 * p.rho_p * p.rho_p,
        0.25 * lam2 * a_c * a_c,
    ];
    let back = rk4_backward(grid, terminal, rhs, |_, y| all_finite(y))
        .map_err(|a| SolveError::BlowUp { system: "adjoint second moments", t: a.t, limit: f64::INFINITY })?;
    let mut worst = [0.0_f64; 2];
    for i in 0..grid.n_nodes() {
        worst[0] = worst[0].max((back.value(i)[0] - traj.ey2_p[i]).abs());
        worst[1] = worst[1].max((back.value(i)[1] - traj.ey2_c[i]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::trapezoid;
    use crate::model::ModelParams;

    fn baseline(lambda: f64) -> ValidatedParams {
        ModelParams::baseline().validate().unwrap().with_contract(lambda, 0.0)
    }

    fn solve(lambda: f64) -> Equilibrium {
        solve_equilibrium(&baseline(lambda), 2000).unwrap()
    }

    #[test]
    fn policy_terminal_values_are_exact() {
        let eq = solve(3.0);
        let last = eq.moments.grid().n_nodes() - 1;
        let gp = eq.policy.producer.gains.value(last);
        assert_eq!(gp[GAIN_OWN_DEV], 0.0, "K_p(T) = 0 and pi(T) = 0");
        assert_eq!(gp[GAIN_CROSS_DEV], 0.0);
        assert_eq!(gp[GAIN_INTERCEPT], (2.0 / 5.0) * (0.5 * 3.0 * 0.5), "h_1(T) = lambda rho_p / 2");
        assert_eq!(eq.policy.producer.vol.value(last)[0], 10.0, "z(T) = sigma_p exactly");
        assert_eq!(eq.policy.consumer.vol.value(last)[0], 10.0);
    }

    #[test]
    fn optimal_volatilities_stay_within_the_baseline_band() {
        for lambda in [0.0, 1.0, 5.0] {
            let eq = solve(lambda);
            for i in 0..eq.moments.grid().n_nodes() {
                let z = eq.policy.producer.vol.value(i)[0];
                let y = eq.policy.consumer.vol.value(i)[0];
                assert!(z > 0.0 && z <= 10.0 + 1e-12, "lambda={lambda} node {i}: z = {z}");
                assert!(y > 0.0 && y <= 10.0 + 1e-12, "lambda={lambda} node {i}: y = {y}");
            }
        }
    }

    #[test]
    fn moments_start_at_the_initial_conditions() {
        let eq = solve(1.0);
        assert_eq!(*eq.moments.core.value(0), [100.0, 100.0, 1e4, 1e4, 1e4]);
        assert_eq!(eq.moments.var_q[0], 0.0);
        assert_eq!(eq.moments.cov_qc[0], 0.0);
    }

    #[test]
    fn variances_are_nonnegative_and_satisfy_cauchy_schwarz() {
        for lambda in [0.0, 2.0] {
            let eq = solve(lambda);
            for i in 0..eq.moments.grid().n_nodes() {
                let (vq, vc, c) = (eq.moments.var_q[i], eq.moments.var_c[i], eq.moments.cov_qc[i]);
                assert!(vq >= -1e-9, "var_q at node {i}: {vq}");
                assert!(vc >= -1e-9, "var_c at node {i}: {vc}");
                assert!(
                    c * c <= vq * vc * (1.0 + 1e-9) + 1e-9,
                    "covariance bound at node {i}: {c}^2 vs {vq}*{vc}"
                );
            }
        }
    }

    #[test]
    fn symmetric_calibration_mirrors_the_two_players() {
        let eq = solve(1.0);
        let n = eq.moments.grid().n_nodes();
        for i in (0..n).step_by(100) {
            let m = eq.moments.core.value(i);
            assert!((m[M_QBAR] - m[M_CBAR]).abs() < 1e-9, "means at node {i}");
            assert!((m[M_EQ2] - m[M_EC2]).abs() < 1e-5, "second moments at node {i}");
            assert!((eq.moments.ybar_p[i] - eq.moments.ybar_c[i]).abs() < 1e-9);
            assert!((eq.moments.ey2_p[i] - eq.moments.ey2_c[i]).abs() < 1e-5);
        }
        assert!(
            (eq.report.r_p0 - eq.report.r_c0).abs() <= 1e-8 * eq.report.r_p0.abs(),
            "R_p(0) = {} vs R_c(0) = {}",
            eq.report.r_p0,
            eq.report.r_c0
        );
    }

    #[test]
    fn symmetric_objectives_coincide_without_a_contract() {
        let eq = solve(0.0);
        assert!(
            (eq.report.j_p - eq.report.j_c).abs() <= 1e-8 * eq.report.j_p.abs(),
            "J_p = {} vs J_c = {}",
            eq.report.j_p,
            eq.report.j_c
        );
    }

    #[test]
    fn mean_spot_stays_at_the_initial_level_under_symmetry() {
        // Equal market impact on both sides means the mean production and
        // consumption changes cancel in the spot price, for any contract.
        for lambda in [0.0, 1.0, 5.0] {
            let eq = solve(lambda);
            for i in 0..eq.moments.grid().n_nodes() {
                assert!(
                    (eq.moments.mean_spot[i] - 50.0).abs() < 1e-9,
                    "lambda={lambda} node {i}: E[S] = {}",
                    eq.moments.mean_spot[i]
                );
            }
        }
    }

    #[test]
    fn zero_market_power_pins_the_producer_volatility_at_sigma() {
        let mut raw = ModelParams::baseline();
        raw.rho_p = 0.0;
        raw.lambda = 1.0;
        let eq = solve_equilibrium(&raw.validate().unwrap(), 2000).unwrap();
        for i in 0..eq.moments.grid().n_nodes() {
            assert_eq!(
                eq.policy.producer.vol.value(i)[0], 10.0,
                "with no price impact the producer has no variance motive, node {i}"
            );
        }
    }

    #[test]
    fn adjoint_second_moments_match_their_backward_ode() {
        for lambda in [0.0, 1.0, 5.0] {
            let eq = solve(lambda);
            let scale = 1.0 + eq.moments.ey2_p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let worst =
                crosscheck_ey2_backward(&eq.params, &eq.riccati, &eq.policy, &eq.moments).unwrap();
            assert!(
                worst[0] <= 1e-6 * scale && worst[1] <= 1e-6 * scale,
                "lambda={lambda}: gaps {worst:?} against scale {scale}"
            );
        }
    }

    #[test]
    fn value_quadrature_matches_an_independent_trapezoid_refinement() {
        let p = baseline(1.0);
        let coarse = solve_equilibrium(&p, 2000).unwrap();
        let fine = solve_equilibrium(&p, 8000).unwrap();
        let (ip, ic) = r_integrands(&p, &fine.riccati, &fine.policy, &fine.moments);
        let grid = fine.moments.grid().clone();
        let last = grid.n_nodes() - 1;
        let r_p_trap = trapezoid(&grid, &ip)
            - p.lambda * fine.riccati.coeffs.a_c * fine.moments.core.value(last)[M_CBAR];
        let r_c_trap = trapezoid(&grid, &ic)
            - p.lambda * p.rho_p * fine.moments.core.value(last)[M_QBAR];
        assert!(
            (coarse.report.r_p0 - r_p_trap).abs() <= 1e-6 * r_p_trap.abs(),
            "R_p: Simpson n=2000 {} vs trapezoid n=8000 {}",
            coarse.report.r_p0,
            r_p_trap
        );
        assert!(
            (coarse.report.r_c0 - r_c_trap).abs() <= 1e-6 * r_c_trap.abs(),
            "R_c: Simpson n=2000 {} vs trapezoid n=8000 {}",
            coarse.report.r_c0,
            r_c_trap
        );
    }

    #[test]
    fn objectives_are_affine_in_the_cash_leg() {
        let base = solve_equilibrium(&baseline(2.0), 2000).unwrap().report;
        let paid = solve_equilibrium(&baseline(2.0).with_contract(2.0, 123.456), 2000)
            .unwrap()
            .report;
        let scale = 1.0 + base.j_p.abs();
        assert!((paid.j_p - base.j_p - 123.456).abs() <= 1e-12 * scale);
        assert!((paid.j_c - base.j_c + 123.456).abs() <= 1e-12 * scale);
        assert_eq!(base.r_p0, paid.r_p0, "the cash leg cannot touch the quadratures");
        assert_eq!(base.ybar_p0, paid.ybar_p0);
    }

    #[test]
    fn odd_grids_are_rejected_by_the_value_quadrature() {
        match solve_equilibrium(&baseline(1.0), 1001) {
            Err(SolveError::GridParity { n_steps: 1001 }) => {}
            other => panic!("expected a grid parity error, got {other:?}"),
        }
    }

    #[test]
    fn report_is_stable_under_grid_refinement() {
        let a = solve_equilibrium(&baseline(1.0), 2000).unwrap().report;
        let b = solve_equilibrium(&baseline(1.0), 4000).unwrap().report;
        assert!((a.j_p - b.j_p).abs() <= 1e-8 * a.j_p.abs(), "J_p: {} vs {}", a.j_p, b.j_p);
        assert!((a.j_c - b.j_c).abs() <= 1e-8 * a.j_c.abs(), "J_c: {} vs {}", a.j_c, b.j_c);
    }

    #[test]
    fn moment_csv_has_one_row_per_node_and_all_columns() {
        let eq = solve_equilibrium(&baseline(1.0), 4).unwrap();
        let mut buf = Vec::new();
        eq.moments.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0].split(',').count(), 14);
        assert!(lines[0].starts_with("t,q_bar,c_bar"));
    }
}
