//! Market model parameters, validation, and the coefficient set of the
//! equilibrium ODE systems.
//!
//! The spot price seen by both players is `S_t = s0 - rho_p q_t + gamma
//! rho_c c_t`: producing more depresses the price, consuming more supports
//! it. The producer sells at `S_t`, the consumer buys at the retail price
//! `p0 + p1 S_t` and procures at `gamma (S_t + delta)`, so the consumer's
//! effective exposure to the spot is through the slope `gamma rho_c`.
//! Both players pay quadratic costs `k/2 u^2` for drift adjustments and
//! `l/2 (vol - sigma)^2` for volatility adjustments, and are penalised
//! proportionally (`eta`) to the running variance of a forward position of
//! `lambda` units.
//!
//! Optimal drift aggressiveness decouples into scalar Riccati equations
//! with closed-form solutions: hyperbolic-tangent relaxation curves `K`
//! (own-state feedback) and `Lambda` (mean-field feedback). The remaining
//! coupling between the players is captured by constant matrices `Xi`,
//! `Xi_hat`, `R` and the vector `Psi`, collected in [`CoefficientSet`].

use crate::linalg::{diag, Mat2, Vec2};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Producer,
    Consumer,
}

impl std::fmt::Display for Player {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Player::Producer => write!(f, "producer"),
            Player::Consumer => write!(f, "consumer"),
        }
    }
}

/// Full scalar parameter set of the game. Field names match the config-file
/// keys except for `horizon` (key `T`) and `f` (key `F`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Planning horizon `T`.
    pub horizon: f64,
    /// Producer drift adjustment cost.
    pub k_p: f64,
    /// Consumer drift adjustment cost.
    pub k_c: f64,
    /// Producer volatility adjustment cost.
    pub l_p: f64,
    /// Consumer volatility adjustment cost.
    pub l_c: f64,
    /// Producer baseline volatility.
    pub sigma_p: f64,
    /// Consumer baseline volatility.
    pub sigma_c: f64,
    /// Producer forward-position variance aversion.
    pub eta_p: f64,
    /// Consumer forward-position variance aversion.
    pub eta_c: f64,
    /// Spot price sensitivity to production.
    pub rho_p: f64,
    /// Spot price sensitivity to consumption (scaled by `gamma` in `S`).
    pub rho_c: f64,
    /// Consumer procurement markup factor.
    pub gamma: f64,
    /// Consumer procurement cost spread.
    pub delta: f64,
    /// Retail price intercept.
    pub p0: f64,
    /// Retail price slope on the spot.
    pub p1: f64,
    /// Spot price level at zero activity.
    pub s0: f64,
    /// Initial production rate.
    pub q0: f64,
    /// Initial consumption rate.
    pub c0: f64,
    /// Forward contract size (units of commodity, producer short).
    pub lambda: f64,
    /// Forward contract cash leg paid to the producer (key `F`).
    pub f: f64,
}

/// Config-file keys in canonical order; one per [`ModelParams`] field.
pub const PARAM_KEYS: [&str; 20] = [
    "T", "k_p", "k_c", "l_p", "l_c", "sigma_p", "sigma_c", "eta_p", "eta_c", "rho_p", "rho_c",
    "gamma", "delta", "p0", "p1", "s0", "q0", "c0", "lambda", "F",
];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("missing required config key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("config line {line}: expected `name = value`, got `{text}`")]
    MalformedLine { line: usize, text: String },
    #[error("config key `{key}`: `{text}` is not a number")]
    BadNumber { key: String, text: String },
    #[error("parameter `{name}` = {value} violates: {requirement}")]
    ConstraintViolation {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
}

impl ModelParams {
    /// Benchmark calibration: unit horizon, equal adjustment costs, equal
    /// baseline volatilities, and equal market impact on both sides of the
    /// market (`rho_p == gamma * rho_c` exactly in floating point). This is
    /// the parameter set shipped in `configs/base.cfg`; with `eta_p ==
    /// eta_c` and `l_p == l_c` it is exactly symmetric under swapping the
    /// player roles.
    pub fn baseline() -> Self {
        ModelParams {
            horizon: 1.0,
            k_p: 5.0,
            k_c: 5.0,
            l_p: 5.0,
            l_c: 5.0,
            sigma_p: 10.0,
            sigma_c: 10.0,
            eta_p: 0.01,
            eta_c: 0.01,
            rho_p: 0.5,
            rho_c: 0.5 / 1.2,
            gamma: 1.2,
            delta: 5.0,
            p0: 106.0,
            p1: 0.2,
            s0: 50.0,
            q0: 100.0,
            c0: 100.0,
            lambda: 0.0,
            f: 0.0,
        }
    }

    pub fn get(&self, key: &str) -> Result<f64, ModelError> {
        Ok(match key {
            "T" => self.horizon,
            "k_p" => self.k_p,
            "k_c" => self.k_c,
            "l_p" => self.l_p,
            "l_c" => self.l_c,
            "sigma_p" => self.sigma_p,
            "sigma_c" => self.sigma_c,
            "eta_p" => self.eta_p,
            "eta_c" => self.eta_c,
            "rho_p" => self.rho_p,
            "rho_c" => self.rho_c,
            "gamma" => self.gamma,
            "delta" => self.delta,
            "p0" => self.p0,
            "p1" => self.p1,
            "s0" => self.s0,
            "q0" => self.q0,
            "c0" => self.c0,
            "lambda" => self.lambda,
            "F" => self.f,
            _ => return Err(ModelError::UnknownKey(key.to_string())),
        })
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ModelError> {
        let slot = match key {
            "T" => &mut self.horizon,
            "k_p" => &mut self.k_p,
            "k_c" => &mut self.k_c,
            "l_p" => &mut self.l_p,
            "l_c" => &mut self.l_c,
            "sigma_p" => &mut self.sigma_p,
            "sigma_c" => &mut self.sigma_c,
            "eta_p" => &mut self.eta_p,
            "eta_c" => &mut self.eta_c,
            "rho_p" => &mut self.rho_p,
            "rho_c" => &mut self.rho_c,
            "gamma" => &mut self.gamma,
            "delta" => &mut self.delta,
            "p0" => &mut self.p0,
            "p1" => &mut self.p1,
            "s0" => &mut self.s0,
            "q0" => &mut self.q0,
            "c0" => &mut self.c0,
            "lambda" => &mut self.lambda,
            "F" => &mut self.f,
            _ => return Err(ModelError::UnknownKey(key.to_string())),
        };
        *slot = value;
        Ok(())
    }

    /// Checks every constraint and returns the witness type on success.
    ///
    /// Strict positivity is required for costs, volatilities, variance
    /// aversions, prices and initial rates. The impact slopes `rho_p`,
    /// `rho_c` only need to be nonnegative: a zero slope is the meaningful
    /// limit of a player without market power and everything downstream is
    /// well defined there. `gamma > p1` keeps the consumer's net exposure
    /// to the spot positive. `lambda` and `F` may take any finite value.
    pub fn validate(self) -> Result<ValidatedParams, ModelError> {
        fn check(
            name: &'static str,
            value: f64,
            requirement: &'static str,
            ok: bool,
        ) -> Result<(), ModelError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ModelError::ConstraintViolation { name, value, requirement })
            }
        }
        check("T", self.horizon, "T > 0", self.horizon > 0.0)?;
        check("k_p", self.k_p, "k_p > 0", self.k_p > 0.0)?;
        check("k_c", self.k_c, "k_c > 0", self.k_c > 0.0)?;
        check("l_p", self.l_p, "l_p >= 0", self.l_p >= 0.0)?;
        check("l_c", self.l_c, "l_c >= 0", self.l_c >= 0.0)?;
        // Zero volatility is admitted: the equilibrium volatilities scale as
        // sigma * l / margin, so sigma = 0 simply freezes the state paths and
        // gives the noise-free limit used to cross-check the Monte Carlo
        // estimator against the deterministic value.
        check("sigma_p", self.sigma_p, "sigma_p >= 0", self.sigma_p >= 0.0)?;
        check("sigma_c", self.sigma_c, "sigma_c >= 0", self.sigma_c >= 0.0)?;
        check("eta_p", self.eta_p, "eta_p > 0", self.eta_p > 0.0)?;
        check("eta_c", self.eta_c, "eta_c > 0", self.eta_c > 0.0)?;
        check("rho_p", self.rho_p, "rho_p >= 0", self.rho_p >= 0.0)?;
        check("rho_c", self.rho_c, "rho_c >= 0", self.rho_c >= 0.0)?;
        check("gamma", self.gamma, "gamma > 0", self.gamma > 0.0)?;
        check("delta", self.delta, "delta > 0", self.delta > 0.0)?;
        check("p0", self.p0, "p0 > 0", self.p0 > 0.0)?;
        check("p1", self.p1, "p1 > 0", self.p1 > 0.0)?;
        check("s0", self.s0, "s0 > 0", self.s0 > 0.0)?;
        check("q0", self.q0, "q0 > 0", self.q0 > 0.0)?;
        check("c0", self.c0, "c0 > 0", self.c0 > 0.0)?;
        check("gamma", self.gamma, "gamma > p1", self.gamma > self.p1)?;
        check("lambda", self.lambda, "lambda finite", true)?;
        check("F", self.f, "F finite", true)?;
        Ok(ValidatedParams(self))
    }
}

/// Witness that every [`ModelParams`] constraint has been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams(ModelParams);

impl std::ops::Deref for ValidatedParams {
    type Target = ModelParams;

    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl ValidatedParams {
    /// Same market, different forward contract. `lambda` and `F` are
    /// unconstrained beyond finiteness, so no re-validation is needed.
    pub fn with_contract(&self, lambda: f64, f: f64) -> ValidatedParams {
        assert!(lambda.is_finite() && f.is_finite());
        let mut p = self.0.clone();
        p.lambda = lambda;
        p.f = f;
        ValidatedParams(p)
    }

    pub fn into_inner(self) -> ModelParams {
        self.0
    }
}

/// Parses a flat `name = value` config. `#` starts a comment, blank lines
/// are skipped, every key must be known and appear at most once. All keys
/// are required except `lambda` and `F`, which default to zero (no forward
/// contract).
pub fn parse_config(text: &str) -> Result<ModelParams, ModelError> {
    let mut seen: Vec<(String, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ModelError::MalformedLine { line: idx + 1, text: raw.trim().to_string() });
        };
        let key = key.trim();
        let value = value.trim();
        if !PARAM_KEYS.contains(&key) {
            return Err(ModelError::UnknownKey(key.to_string()));
        }
        if seen.iter().any(|(k, _)| k == key) {
            return Err(ModelError::DuplicateKey(key.to_string()));
        }
        let parsed: f64 = value
            .parse()
            .map_err(|_| ModelError::BadNumber { key: key.to_string(), text: value.to_string() })?;
        seen.push((key.to_string(), parsed));
    }
    let mut params = ModelParams {
        horizon: f64::NAN,
        k_p: f64::NAN,
        k_c: f64::NAN,
        l_p: f64::NAN,
        l_c: f64::NAN,
        sigma_p: f64::NAN,
        sigma_c: f64::NAN,
        eta_p: f64::NAN,
        eta_c: f64::NAN,
        rho_p: f64::NAN,
        rho_c: f64::NAN,
        gamma: f64::NAN,
        delta: f64::NAN,
        p0: f64::NAN,
        p1: f64::NAN,
        s0: f64::NAN,
        q0: f64::NAN,
        c0: f64::NAN,
        lambda: 0.0,
        f: 0.0,
    };
    for (key, value) in &seen {
        params.set(key, *value).expect("key already checked against PARAM_KEYS");
    }
    for key in PARAM_KEYS {
        let optional = key == "lambda" || key == "F";
        if !optional && !seen.iter().any(|(k, _)| k == key) {
            // PARAM_KEYS entries are 'static.
            let name = PARAM_KEYS.iter().find(|k| **k == key).unwrap();
            return Err(ModelError::MissingKey(name));
        }
    }
    Ok(params)
}

/// The relaxation curve `t -> scale * tanh(rate * (T - t))` solving the
/// scalar Riccati equations of the drift feedback. `scale = -(k/2) * rate`,
/// so the curve is zero at `t = T` and most negative at `t = 0`.
#[derive(Debug, Clone, Copy)]
pub struct TanhCurve {
    pub scale: f64,
    pub rate: f64,
    pub horizon: f64,
}

impl TanhCurve {
    fn for_riccati(k: f64, forcing: f64, horizon: f64) -> TanhCurve {
        // forcing is the constant term of K' = -(2/k) K^2 + forcing.
        let rate = (2.0 * forcing / k).sqrt();
        TanhCurve { scale: -(k / 2.0) * rate, rate, horizon }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.scale * (self.rate * (self.horizon - t)).tanh()
    }

    /// Analytic time derivative.
    pub fn deriv(&self, t: f64) -> f64 {
        let c = (self.rate * (self.horizon - t)).cosh();
        -self.scale * self.rate / (c * c)
    }
}

/// Constant matrices and closed-form time curves defining every ODE system
/// of the equilibrium.
///
/// * `kp`/`kc`: own-state drift feedback curves (depend on `lambda` through
///   the variance penalty).
/// * `lp`/`lc`: mean-field drift feedback curves (independent of `lambda`).
/// * `xi`, `r_mat`: forcing and quadratic term of the cross-player Riccati
///   system; `xi_hat` is the forcing of its mean-field counterpart.
/// * `psi`: constant drift of the linear offset system.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub kp: TanhCurve,
    pub lp: TanhCurve,
    pub kc: TanhCurve,
    pub lc: TanhCurve,
    pub xi: Mat2,
    pub xi_hat: Mat2,
    pub r_mat: Mat2,
    pub psi: Vec2,
    pub k_p: f64,
    pub k_c: f64,
    pub horizon: f64,
    /// Producer spot impact slope `rho_p`.
    pub rho_p: f64,
    /// Consumer effective spot impact slope `gamma * rho_c`.
    pub a_c: f64,
    pub lambda: f64,
}

pub fn build_coefficients(p: &ValidatedParams) -> CoefficientSet {
    let lam2 = p.lambda * p.lambda;
    // Consumer's effective spot exposure slope; equals rho_p in the
    // equal-market-power calibration.
    let a_c = p.gamma * p.rho_c;
    let net = p.gamma - p.p1; // positive by validation
    let kp = TanhCurve::for_riccati(
        p.k_p,
        p.rho_p + p.eta_p * lam2 * (p.rho_p * p.rho_p),
        p.horizon,
    );
    let lp = TanhCurve::for_riccati(p.k_p, p.rho_p, p.horizon);
    let kc = TanhCurve::for_riccati(p.k_c, a_c * net + p.eta_c * lam2 * (a_c * a_c), p.horizon);
    let lc = TanhCurve::for_riccati(p.k_c, a_c * net, p.horizon);
    let xi = [
        0.0,
        -(p.rho_p * a_c * p.eta_p * lam2) - a_c * 0.5,
        -(p.rho_p * a_c * p.eta_c * lam2) - p.rho_p * (net * 0.5),
        0.0,
    ];
    let xi_hat = [0.0, -(a_c * 0.5), -(p.rho_p * (net * 0.5)), 0.0];
    let r_mat = diag(-2.0 / p.k_p, -2.0 / p.k_c);
    let psi = [
        -p.s0 / 2.0,
        -(p.p0 + p.p1 * p.s0 - p.gamma * (p.delta + p.s0)) / 2.0,
    ];
    CoefficientSet {
        kp,
        lp,
        kc,
        lc,
        xi,
        xi_hat,
        r_mat,
        psi,
        k_p: p.k_p,
        k_c: p.k_c,
        horizon: p.horizon,
        rho_p: p.rho_p,
        a_c,
        lambda: p.lambda,
    }
}

impl CoefficientSet {
    /// Diagonal drift matrix `Phi(t) = diag(-(2/k_p) K_p, -(2/k_c) K_c)`.
    pub fn phi(&self, t: f64) -> Mat2 {
        diag(-(2.0 / self.k_p) * self.kp.value(t), -(2.0 / self.k_c) * self.kc.value(t))
    }

    /// Mean-field counterpart `Phi_hat(t)` built from the Lambda curves.
    pub fn phi_hat(&self, t: f64) -> Mat2 {
        diag(-(2.0 / self.k_p) * self.lp.value(t), -(2.0 / self.k_c) * self.lc.value(t))
    }
}
