//! Backward solvers for the coupled Riccati systems of the equilibrium.
//!
//! Three systems, all integrated from a terminal condition at `t = T` down
//! to `t = 0` with fixed-step RK4 on a shared grid:
//!
//! * `pi`:     pi' = Xi + Phi pi + pi Phi + pi R pi,             pi(T) = 0
//! * `pi_hat`: same shape with Xi_hat and Phi_hat,               pi_hat(T) = 0
//! * `h`:      h'  = (pi_hat R + Phi_hat) h + Psi,               h(T) = (lambda/2)(rho_p, gamma rho_c)
//!
//! `pi` captures cross-player feedback on deviations from the mean state,
//! `pi_hat` the feedback on the means themselves, and `h` the constant
//! (state-independent) part of the adjoint processes. The matrix systems
//! can explode in finite time when the horizon is too long for the coupling
//! strength; a guard aborts with [`SolveError::BlowUp`] once any entry
//! exceeds [`BLOWUP_LIMIT`]. Admissibility of the volatility controls
//! additionally requires the margins `l - 2(K + pi_diag)` to stay strictly
//! positive ([`check_admissibility`]).

use crate::grid::{rk4_backward, GridFunction, TimeGrid};
use crate::linalg::{mat2_add, mat2_mul, mat2_vec, Mat2, Vec2, MAT2_ZERO};
use crate::model::{build_coefficients, CoefficientSet, Player, ValidatedParams};
use std::io::{self, Write};
use thiserror::Error;

/// Any Riccati entry beyond this magnitude is treated as finite-time blow-up.
pub const BLOWUP_LIMIT: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("{system} solution blew up at t = {t:.6} (entry beyond {limit:.0e}); the horizon is too long for this coupling strength")]
    BlowUp { system: &'static str, t: f64, limit: f64 },
    #[error("volatility admissibility fails for the {player} at t = {t:.6}: margin {margin:.3e} <= 0 (need l > 2(K + pi) on [0, T])")]
    A2Violation { player: Player, t: f64, margin: f64 },
    #[error("the value quadrature uses Simpson's rule and needs an even number of time steps, got {n_steps}")]
    GridParity { n_steps: usize },
}

fn finite_guard(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_LIMIT)
}

/// Cross-player deviation feedback matrix `pi`.
pub fn solve_pi(cs: &CoefficientSet, grid: &TimeGrid) -> Result<GridFunction<4>, SolveError> {
    let rhs = |t: f64, y: &Mat2| pi_rhs(cs.xi, &cs.phi(t), &cs.r_mat, y);
    rk4_backward(grid, MAT2_ZERO, rhs, |_, y| finite_guard(y))
        .map_err(|a| SolveError::BlowUp { system: "pi", t: a.t, limit: BLOWUP_LIMIT })
}

/// Mean-field feedback matrix `pi_hat`. Depends on neither `lambda` nor the
/// variance aversions.
pub fn solve_pi_hat(cs: &CoefficientSet, grid: &TimeGrid) -> Result<GridFunction<4>, SolveError> {
    let rhs = |t: f64, y: &Mat2| pi_rhs(cs.xi_hat, &cs.phi_hat(t), &cs.r_mat, y);
    rk4_backward(grid, MAT2_ZERO, rhs, |_, y| finite_guard(y))
        .map_err(|a| SolveError::BlowUp { system: "pi_hat", t: a.t, limit: BLOWUP_LIMIT })
}

fn pi_rhs(xi: Mat2, phi: &Mat2, r: &Mat2, y: &Mat2) -> Mat2 {
    let quad = mat2_mul(&mat2_mul(y, r), y);
    mat2_add(&mat2_add(&xi, &mat2_mul(phi, y)), &mat2_add(&mat2_mul(y, phi), &quad))
}

/// Constant part `h` of the adjoint processes. The contract size enters
/// only through the terminal condition.
pub fn solve_h(
    cs: &CoefficientSet,
    pi_hat: &GridFunction<4>,
    grid: &TimeGrid,
) -> Result<GridFunction<2>, SolveError> {
    let terminal = [0.5 * cs.lambda * cs.rho_p, 0.5 * cs.lambda * cs.a_c];
    let rhs = |t: f64, y: &Vec2| {
        let m = mat2_add(&mat2_mul(&pi_hat.eval(t), &cs.r_mat), &cs.phi_hat(t));
        let drift = mat2_vec(&m, y);
        [drift[0] + cs.psi[0], drift[1] + cs.psi[1]]
    };
    rk4_backward(grid, terminal, rhs, |_, y| finite_guard(y))
        .map_err(|a| SolveError::BlowUp { system: "h", t: a.t, limit: BLOWUP_LIMIT })
}

/// Bundle of the three backward solutions plus the admissibility margins
/// `l_p - 2(K_p + pi_11)` and `l_c - 2(K_c + pi_22)`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub coeffs: CoefficientSet,
    pub pi: GridFunction<4>,
    pub pi_hat: GridFunction<4>,
    pub h: GridFunction<2>,
    pub margin_p: GridFunction<1>,
    pub margin_c: GridFunction<1>,
}

/// Solves all three systems and assembles the margins. Does not certify
/// admissibility; call [`check_admissibility`] for that.
pub fn solve_riccati(p: &ValidatedParams, grid: &TimeGrid) -> Result<RiccatiSolution, SolveError> {
    let coeffs = build_coefficients(p);
    let pi = solve_pi(&coeffs, grid)?;
    let pi_hat = solve_pi_hat(&coeffs, grid)?;
    let h = solve_h(&coeffs, &pi_hat, grid)?;
    let margin_p = margin_curve(grid, p.l_p, &coeffs.kp, &pi, 0);
    let margin_c = margin_curve(grid, p.l_c, &coeffs.kc, &pi, 3);
    Ok(RiccatiSolution { coeffs, pi, pi_hat, h, margin_p, margin_c })
}

fn margin_curve(
    grid: &TimeGrid,
    l: f64,
    curve: &crate::model::TanhCurve,
    pi: &GridFunction<4>,
    diag_idx: usize,
) -> GridFunction<1> {
    let n = grid.n_nodes();
    let mut values = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.node(i);
        values.push([l - 2.0 * (curve.value(t) + pi.value(i)[diag_idx])]);
        derivs.push([-2.0 * (curve.deriv(t) + pi.deriv(i)[diag_idx])]);
    }
    GridFunction::new(grid.clone(), values, derivs)
}

/// Certifies that both volatility admissibility margins are strictly
/// positive at every node; reports the first violation otherwise.
pub fn check_admissibility(sol: &RiccatiSolution) -> Result<(), SolveError> {
    let grid = sol.pi.grid();
    for (player, margin) in [
        (Player::Producer, &sol.margin_p),
        (Player::Consumer, &sol.margin_c),
    ] {
        for i in 0..grid.n_nodes() {
            let m = margin.value(i)[0];
            if !(m > 0.0) {
                return Err(SolveError::A2Violation { player, t: grid.node(i), margin: m });
            }
        }
    }
    Ok(())
}

impl RiccatiSolution {
    /// One row per node: every solution entry plus both margins, full
    /// double precision, for plotting or diffing runs.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        use crate::grid::csv_float;
        let grid = self.pi.grid();
        writeln!(
            out,
            "t,pi_11,pi_12,pi_21,pi_22,pi_hat_11,pi_hat_12,pi_hat_21,pi_hat_22,h_1,h_2,margin_p,margin_c"
        )?;
        for i in 0..grid.n_nodes() {
            write!(out, "{}", csv_float(grid.node(i)))?;
            for v in self.pi.value(i) {
                write!(out, ",{}", csv_float(*v))?;
            }
            for v in self.pi_hat.value(i) {
                write!(out, ",{}", csv_float(*v))?;
            }
            for v in self.h.value(i) {
                write!(out, ",{}", csv_float(*v))?;
            }
            write!(out, ",{}", csv_float(self.margin_p.value(i)[0]))?;
            writeln!(out, ",{}", csv_float(self.margin_c.value(i)[0]))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn baseline(lambda: f64) -> ValidatedParams {
        ModelParams::baseline().validate().unwrap().with_contract(lambda, 0.0)
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 2000)
    }

    #[test]
    fn zero_forcing_keeps_pi_identically_zero() {
        let mut cs = build_coefficients(&baseline(1.0));
        cs.xi = MAT2_ZERO;
        let pi = solve_pi(&cs, &grid()).unwrap();
        assert_eq!(pi.max_abs(), 0.0, "pi(T) = 0 and Xi = 0 admit only the zero solution");
    }

    #[test]
    fn no_producer_market_power_leaves_single_coupling_entry() {
        let mut raw = ModelParams::baseline();
        raw.rho_p = 0.0;
        raw.lambda = 1.0;
        let p = raw.validate().unwrap();
        let cs = build_coefficients(&p);
        let pi = solve_pi(&cs, &grid()).unwrap();
        for i in 0..pi.grid().n_nodes() {
            let v = pi.value(i);
            assert_eq!(v[0], 0.0, "pi_11 stays zero when rho_p = 0");
            assert_eq!(v[2], 0.0, "pi_21 stays zero when rho_p = 0");
            assert_eq!(v[3], 0.0, "pi_22 stays zero when rho_p = 0");
        }
        assert!(
            pi.value(0)[1] > 1e-3,
            "consumer price pressure still forces pi_12: {}",
            pi.value(0)[1]
        );
    }

    #[test]
    fn no_contract_collapses_pi_onto_pi_hat() {
        // lambda = 0 makes Xi == Xi_hat and K == Lambda, so both matrix
        // systems run the same arithmetic.
        let sol = solve_riccati(&baseline(0.0), &grid()).unwrap();
        for i in 0..sol.pi.grid().n_nodes() {
            for k in 0..4 {
                assert_eq!(sol.pi.value(i)[k], sol.pi_hat.value(i)[k]);
            }
        }
    }

    #[test]
    fn role_swap_symmetry_at_symmetric_calibration() {
        let sol = solve_riccati(&baseline(2.0), &grid()).unwrap();
        for i in (0..=2000).step_by(50) {
            let pi = sol.pi.value(i);
            assert!((pi[0] - pi[3]).abs() < 1e-10, "pi_11 vs pi_22 at node {i}");
            assert!((pi[1] - pi[2]).abs() < 1e-10, "pi_12 vs pi_21 at node {i}");
            let ph = sol.pi_hat.value(i);
            assert!((ph[0] - ph[3]).abs() < 1e-10);
            assert!((ph[1] - ph[2]).abs() < 1e-10);
            let h = sol.h.value(i);
            assert!((h[0] - h[1]).abs() < 1e-10, "h entries at node {i}: {} vs {}", h[0], h[1]);
        }
    }

    #[test]
    fn pi_hat_ignores_contract_size_and_variance_aversion() {
        let a = solve_riccati(&baseline(0.0), &grid()).unwrap();
        let mut raw = ModelParams::baseline();
        raw.lambda = 3.0;
        raw.eta_p = 0.07;
        raw.eta_c = 0.002;
        let b = solve_riccati(&raw.validate().unwrap(), &grid()).unwrap();
        for i in (0..=2000).step_by(97) {
            for k in 0..4 {
                assert_eq!(a.pi_hat.value(i)[k], b.pi_hat.value(i)[k]);
            }
        }
    }

    #[test]
    fn h_terminal_condition_scales_with_contract_size() {
        let sol = solve_riccati(&baseline(4.0), &grid()).unwrap();
        let h_t = sol.h.value(2000);
        assert_eq!(h_t[0], 0.5 * 4.0 * 0.5);
        assert_eq!(h_t[1], 0.5 * 4.0 * 0.5);
    }

    #[test]
    fn h_is_componentwise_nondecreasing_in_contract_size() {
        let h0 = solve_riccati(&baseline(0.0), &grid()).unwrap().h;
        let h1 = solve_riccati(&baseline(1.0), &grid()).unwrap().h;
        for i in (0..=2000).step_by(40) {
            assert!(h1.value(i)[0] >= h0.value(i)[0] - 1e-12, "h_1 at node {i}");
            assert!(h1.value(i)[1] >= h0.value(i)[1] - 1e-12, "h_2 at node {i}");
        }
        // Zero contract still has a nonzero offset from the price levels.
        assert!(h0.value(0)[0].abs() > 1.0);
    }

    #[test]
    fn interior_nodes_satisfy_the_ode_to_centered_difference_accuracy() {
        let p = baseline(1.0);
        let cs = build_coefficients(&p);
        let g = grid();
        let pi = solve_pi(&cs, &g).unwrap();
        let two_h = 2.0 * g.dt();
        let mut worst = 0.0_f64;
        for i in 1..2000 {
            let rhs = pi_rhs(cs.xi, &cs.phi(g.node(i)), &cs.r_mat, pi.value(i));
            for k in 0..4 {
                let diff = (pi.value(i + 1)[k] - pi.value(i - 1)[k]) / two_h;
                worst = worst.max((diff - rhs[k]).abs());
            }
        }
        assert!(worst < 1e-6, "max interior ODE residual {worst}");
    }

    #[test]
    fn refining_the_grid_no_longer_moves_the_answer() {
        let p = baseline(1.0);
        let coarse = solve_riccati(&p, &TimeGrid::new(1.0, 2000)).unwrap();
        let fine = solve_riccati(&p, &TimeGrid::new(1.0, 4000)).unwrap();
        for k in 0..4 {
            assert!(
                (coarse.pi.value(0)[k] - fine.pi.value(0)[k]).abs() < 1e-8,
                "pi(0) entry {k} moved between n=2000 and n=4000"
            );
        }
        assert!((coarse.h.value(0)[0] - fine.h.value(0)[0]).abs() < 1e-8);
    }

    #[test]
    fn quadratic_escape_trips_the_blowup_guard() {
        // Validated parameter sets keep the damping curves strong enough to
        // dominate the coupling (the variance penalty raises both in step),
        // so real configs have not been observed to explode. The guard still
        // matters: with the damping curves zeroed and a large forcing, the
        // quadratic term escapes in finite time and the solver must say
        // where instead of returning garbage.
        let mut cs = build_coefficients(&baseline(0.0));
        let dead = crate::model::TanhCurve { scale: 0.0, rate: 0.0, horizon: 1.0 };
        cs.kp = dead;
        cs.kc = dead;
        cs.xi = [0.0, -1e3, -1e3, 0.0];
        match solve_pi(&cs, &grid()) {
            Err(SolveError::BlowUp { system: "pi", t, .. }) => {
                assert!(t > 0.0 && t < 1.0, "blow-up time {t} must be interior");
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn admissibility_holds_at_baseline_and_fails_for_free_volatility() {
        let sol = solve_riccati(&baseline(1.0), &grid()).unwrap();
        check_admissibility(&sol).unwrap();
        assert_eq!(sol.margin_p.value(2000)[0], 5.0, "margin at T is exactly l_p");

        let mut raw = ModelParams::baseline();
        raw.l_p = 0.0;
        let free = solve_riccati(&raw.validate().unwrap(), &grid()).unwrap();
        match check_admissibility(&free) {
            Err(SolveError::A2Violation { player: Player::Producer, t, margin }) => {
                assert_eq!(t, 1.0, "the margin -2(K_p + pi_11) vanishes exactly at t = T");
                assert_eq!(margin, 0.0);
            }
            other => panic!("expected producer admissibility violation, got {other:?}"),
        }
    }

    #[test]
    fn csv_dump_has_all_columns_and_rows() {
        let sol = solve_riccati(&baseline(1.0), &TimeGrid::new(1.0, 4)).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0].split(',').count(), 13);
        assert!(lines[0].starts_with("t,pi_11"));
    }
}
