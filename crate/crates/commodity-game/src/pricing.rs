//! Indifference pricing of the forward contract and the agreement point.
//!
//! The producer (short `lambda` units at cash leg `F`) accepts any `F` with
//! `J_p(lambda, F) >= J_p(0, 0)`, i.e. `F >= F_p(lambda) := J_p(0,0) -
//! J_p(lambda, 0)`. The consumer accepts `F <= F_c(lambda) := J_c(lambda, 0)
//! - J_c(0, 0)`. Trade is feasible whenever the price gap `g(lambda) :=
//! F_c - F_p` is nonnegative, and the *agreement quantity* `lambda_star` is
//! the positive root of `g`, at which both players are exactly indifferent:
//! the contract then trades at `F_star = F_p(lambda_star)` and unit price
//! `f_star = F_star / lambda_star`.
//!
//! The sign of the risk premium `f_star - E[S_T]` is the hedging-pressure
//! diagnostic: a producer more variance-averse than the consumer concedes a
//! premium above the expected spot, and vice versa.

use crate::equilibrium::{solve_equilibrium, Equilibrium};
use crate::grid::csv_float;
use crate::model::ValidatedParams;
use crate::riccati::SolveError;
use thiserror::Error;

/// Smallest admissible lower bracket edge; keeps the search away from the
/// trivial root at `lambda = 0`, where both indifference prices vanish.
pub const LAMBDA_FLOOR: f64 = 1e-3;

/// Number of geometric scan points used to bracket sign changes of `g`.
const SCAN_POINTS: usize = 64;

/// Relative tolerance scale for declaring `g(lambda) = 0`.
const PRICE_TOL: f64 = 1e-8;

/// Relative width at which bisection stops.
const BISECT_WIDTH: f64 = 1e-10;

/// Search interval for the agreement quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Bracket, PricingError> {
        if lo >= LAMBDA_FLOOR && lo < hi && hi.is_finite() {
            Ok(Bracket { lo, hi })
        } else {
            Err(PricingError::BadBracket { lo, hi })
        }
    }
}

impl Default for Bracket {
    /// `[1e-3, 200]`: clear of the trivial root at zero, and wide enough for
    /// the volumes that arise at price levels around 50-100 and impact
    /// slopes around 0.5 — cheap volatility control (`l` below 1) pushes the
    /// agreement volume above 90, while Riccati blow-up only threatens three
    /// orders of magnitude higher.
    fn default() -> Bracket {
        Bracket { lo: LAMBDA_FLOOR, hi: 200.0 }
    }
}

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("equilibrium solve failed at lambda = {lambda}: {source}")]
    Solve {
        lambda: f64,
        #[source]
        source: SolveError,
    },
    #[error("bracket [{lo}, {hi}] is invalid: need {LAMBDA_FLOOR} <= lo < hi with hi finite")]
    BadBracket { lo: f64, hi: f64 },
    #[error(
        "the price gap g = F_c - F_p keeps one sign on [{lo}, {hi}]: g({lo}) = {g_lo:.6e}, \
         g({hi}) = {g_hi:.6e}; there is no agreement quantity in this bracket"
    )]
    NoSignChange { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
}

/// How the root search concluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgreementKind {
    /// Exactly one sign change: the normal case.
    UniqueRoot,
    /// `|g|` below tolerance at every scan point: the players agree at any
    /// quantity in the bracket (exact role symmetry); a representative
    /// `lambda` is reported.
    DegenerateAllLambda,
    /// More than one sign change; the result holds the smallest root and
    /// [`AgreementResult::sign_brackets`] lists every candidate interval.
    MultipleCandidates,
}

/// The located agreement point and its diagnostics.
#[derive(Debug, Clone)]
pub struct AgreementResult {
    pub lambda_star: f64,
    /// Cash leg at agreement, evaluated as `F_p(lambda_star)`.
    pub f_star: f64,
    /// `f_star = F_star / lambda_star`, the unit forward price.
    pub unit_price: f64,
    /// `E[S_T]` under the `lambda_star` equilibrium dynamics.
    pub expected_spot_t: f64,
    /// Same expectation under the no-contract dynamics, for comparison.
    pub expected_spot_t_base: f64,
    /// `unit_price - expected_spot_t`.
    pub risk_premium: f64,
    /// `J_p(lambda_star, F_star)`; equals `J_p(0, 0)` by indifference.
    pub j_p_at_agreement: f64,
    /// Signed gap `g(lambda_star) = F_c - F_p` at the returned point.
    pub residual: f64,
    pub bracket_used: (f64, f64),
    pub kind: AgreementKind,
    /// Every scanned interval whose endpoints straddle a root (degenerate
    /// intervals `(a, a)` mark scan points already within tolerance).
    pub sign_brackets: Vec<(f64, f64)>,
}

impl std::fmt::Display for AgreementResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "agreement quantity:   lambda_star = {}", self.lambda_star)?;
        writeln!(f, "cash leg:             F_star = {}", self.f_star)?;
        writeln!(f, "unit price:           f_star = {}", self.unit_price)?;
        writeln!(f, "expected spot at T:   E[S_T] = {}  (no contract: {})", self.expected_spot_t, self.expected_spot_t_base)?;
        writeln!(f, "risk premium:         f_star - E[S_T] = {}", self.risk_premium)?;
        writeln!(f, "producer objective:   J_p at agreement = {}", self.j_p_at_agreement)?;
        writeln!(f, "residual:             g(lambda_star) = {:e}", self.residual)?;
        writeln!(f, "bracket:              [{}, {}]", self.bracket_used.0, self.bracket_used.1)?;
        match self.kind {
            AgreementKind::UniqueRoot => write!(f, "diagnosis:            unique root"),
            AgreementKind::DegenerateAllLambda => write!(
                f,
                "diagnosis:            price agreement for all lambda in the bracket \
                 (symmetric market); representative lambda reported"
            ),
            AgreementKind::MultipleCandidates => write!(
                f,
                "diagnosis:            multiple sign changes {:?}; smallest root reported",
                self.sign_brackets
            ),
        }
    }
}

/// One row of the premium summary emitted by the CLI and sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PremiumRow {
    pub eta_p: f64,
    pub eta_c: f64,
    pub l_p: f64,
    pub l_c: f64,
    pub lambda_star: f64,
    pub f_star: f64,
    pub unit_price: f64,
    pub expected_spot_t: f64,
    pub premium: f64,
}

impl PremiumRow {
    pub fn csv_header() -> &'static str {
        "eta_p,eta_c,l_p,l_c,lambda_star,F_star,unit_price,expected_spot_T,premium"
    }

    pub fn to_csv_row(&self) -> String {
        [
            self.eta_p,
            self.eta_c,
            self.l_p,
            self.l_c,
            self.lambda_star,
            self.f_star,
            self.unit_price,
            self.expected_spot_t,
            self.premium,
        ]
        .iter()
        .map(|x| csv_float(*x))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Flattens an agreement result into its premium summary row.
pub fn risk_premium_report(res: &AgreementResult, p: &ValidatedParams) -> PremiumRow {
    PremiumRow {
        eta_p: p.eta_p,
        eta_c: p.eta_c,
        l_p: p.l_p,
        l_c: p.l_c,
        lambda_star: res.lambda_star,
        f_star: res.f_star,
        unit_price: res.unit_price,
        expected_spot_t: res.expected_spot_t,
        premium: res.risk_premium,
    }
}

/// The contract-dependent part of the two objectives summed: `2 h_1(0) q0 +
/// 2 h_2(0) c0 + R_p(0) + R_c(0)`. The cash legs and settlement transfers
/// cancel between the players, so at an agreement quantity this combination
/// must match its no-contract value — a root condition for `g` expressed
/// directly in solver outputs.
pub fn welfare_contract_part(eq: &Equilibrium) -> f64 {
    2.0 * eq.riccati.h.value(0)[0] * eq.params.q0
        + 2.0 * eq.riccati.h.value(0)[1] * eq.params.c0
        + eq.report.r_p0
        + eq.report.r_c0
}

/// One evaluation of the price gap at a contract size.
struct PricePoint {
    lambda: f64,
    f_p: f64,
    f_c: f64,
    g: f64,
    spot_t: f64,
    j_p_lambda: f64,
}

/// Caches the no-contract solve so the scan pays one pipeline run per point.
struct Scanner<'a> {
    p: &'a ValidatedParams,
    base_j_p: f64,
    base_j_c: f64,
    base_spot_t: f64,
    n_steps: usize,
}

impl Scanner<'_> {
    fn new(p: &ValidatedParams, n_steps: usize) -> Result<Scanner<'_>, PricingError> {
        let base = solve_equilibrium(&p.with_contract(0.0, 0.0), n_steps)
            .map_err(|source| PricingError::Solve { lambda: 0.0, source })?;
        Ok(Scanner {
            p,
            base_j_p: base.report.j_p,
            base_j_c: base.report.j_c,
            base_spot_t: base.report.expected_spot_terminal,
            n_steps,
        })
    }

    fn eval(&self, lambda: f64) -> Result<PricePoint, PricingError> {
        let eq = solve_equilibrium(&self.p.with_contract(lambda, 0.0), self.n_steps)
            .map_err(|source| PricingError::Solve { lambda, source })?;
        let f_p = self.base_j_p - eq.report.j_p;
        let f_c = eq.report.j_c - self.base_j_c;
        Ok(PricePoint {
            lambda,
            f_p,
            f_c,
            g: f_c - f_p,
            spot_t: eq.report.expected_spot_terminal,
            j_p_lambda: eq.report.j_p,
        })
    }
}

fn within_tol(pt: &PricePoint) -> bool {
    pt.g.abs() <= PRICE_TOL * (1.0 + pt.f_c.abs())
}

/// Both indifference prices `(F_p, F_c)` at a given contract size.
pub fn indifference_prices(
    p: &ValidatedParams,
    lambda: f64,
    n_steps: usize,
) -> Result<(f64, f64), PricingError> {
    let scanner = Scanner::new(p, n_steps)?;
    let pt = scanner.eval(lambda)?;
    Ok((pt.f_p, pt.f_c))
}

/// Locates the agreement quantity: a 64-point geometric scan of the bracket
/// for sign changes of `g`, then bisection of the first bracketing interval
/// down to `1e-10` relative width. See [`AgreementKind`] for the degenerate
/// and multiple-root outcomes.
pub fn find_lambda_star(
    p: &ValidatedParams,
    search: Bracket,
    n_steps: usize,
) -> Result<AgreementResult, PricingError> {
    let Bracket { lo, hi } = search;
    let scanner = Scanner::new(p, n_steps)?;

    let ratio = hi / lo;
    let mut points: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| lo * ratio.powf(i as f64 / (SCAN_POINTS - 1) as f64))
        .collect();
    points[SCAN_POINTS - 1] = hi;
    let evals: Vec<PricePoint> =
        points.iter().map(|&l| scanner.eval(l)).collect::<Result<_, _>>()?;

    let finish = |pt: PricePoint, kind: AgreementKind, sign_brackets: Vec<(f64, f64)>| {
        let f_star = pt.f_p;
        let unit_price = f_star / pt.lambda;
        AgreementResult {
            lambda_star: pt.lambda,
            f_star,
            unit_price,
            expected_spot_t: pt.spot_t,
            expected_spot_t_base: scanner.base_spot_t,
            risk_premium: unit_price - pt.spot_t,
            j_p_at_agreement: pt.j_p_lambda + f_star,
            residual: pt.g,
            bracket_used: (lo, hi),
            kind,
            sign_brackets,
        }
    };

    if evals.iter().all(within_tol) {
        let representative = if (lo..=hi).contains(&1.0) { 1.0 } else { (lo * hi).sqrt() };
        let pt = scanner.eval(representative)?;
        return Ok(finish(pt, AgreementKind::DegenerateAllLambda, Vec::new()));
    }

    // Candidate root intervals: scan points already inside tolerance count
    // as zero-width roots; strict sign changes between out-of-tolerance
    // neighbours get bisected.
    let hit: Vec<bool> = evals.iter().map(within_tol).collect();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (i, &h) in hit.iter().enumerate() {
        if h {
            candidates.push((i, i));
        }
    }
    for i in 0..SCAN_POINTS - 1 {
        if !hit[i] && !hit[i + 1] && evals[i].g * evals[i + 1].g < 0.0 {
            candidates.push((i, i + 1));
        }
    }
    candidates.sort_unstable();
    if candidates.is_empty() {
        return Err(PricingError::NoSignChange {
            lo,
            hi,
            g_lo: evals[0].g,
            g_hi: evals[SCAN_POINTS - 1].g,
        });
    }

    let kind = if candidates.len() > 1 {
        AgreementKind::MultipleCandidates
    } else {
        AgreementKind::UniqueRoot
    };
    let sign_brackets: Vec<(f64, f64)> =
        candidates.iter().map(|&(i, j)| (points[i], points[j])).collect();

    let (i, j) = candidates[0];
    let lambda_star = if i == j {
        points[i]
    } else {
        let (mut a, mut b) = (points[i], points[j]);
        let g_a_negative = evals[i].g < 0.0;
        while b - a > BISECT_WIDTH * b {
            let mid = 0.5 * (a + b);
            let g_mid = scanner.eval(mid)?.g;
            if g_mid == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if (g_mid < 0.0) == g_a_negative {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let pt = scanner.eval(lambda_star)?;
    Ok(finish(pt, kind, sign_brackets))
}
