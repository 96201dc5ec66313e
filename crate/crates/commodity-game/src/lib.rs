//! Semi-explicit Nash equilibrium solver for a two-player commodity market game.
//!
//! A producer controls the drift of its production rate `q_t` and a consumer
//! the drift of its consumption rate `c_t`; both pay quadratic adjustment
//! costs and may trade a forward contract on the commodity spot price
//! `S_t = s0 - rho_p q_t + gamma rho_c c_t`. Each player is penalised for the
//! variance of its forward position, which is what generates a risk premium.
//!
//! The equilibrium is computable to ODE accuracy: scalar Riccati equations
//! have closed forms (`model`), the remaining matrix Riccati and linear
//! systems are integrated numerically (`riccati`), first and second moments
//! of the equilibrium state follow linear ODEs (`equilibrium`), and the
//! players' value functions reduce to quadratures. Indifference prices for
//! the forward, the agreement volume `lambda*` where they cross, and the
//! implied risk premium live in `pricing`. An independent Euler-Maruyama
//! simulation of the closed-loop game (`montecarlo`) validates the
//! semi-explicit values and checks that unilateral deviations do not pay.

pub mod cli;
pub mod equilibrium;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod pricing;
pub mod riccati;
