//! Market and agent parameterization, validation, and simulation of the
//! driving processes (theta_t, Z_t) under the physical measure.
//!
//! The market has one risky asset with constant volatility `sigma` and a
//! mean-reverting market price of risk theta following
//!
//!   d theta_t = -lambda_theta (theta_t - theta_bar) dt - sigma_theta dW_t,
//!
//! driven by the same Brownian motion as the stock (perfect negative
//! correlation). The stock drift is derived, mu_t = r + sigma * theta_t.
//! Z_t is the Radon-Nikodym density of the risk-neutral measure:
//!
//!   Z_t = exp(-int_0^t theta dW - 1/2 int_0^t theta^2 ds).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ModelError, Result};

/// Market parameters. Rates are per year, volatilities per sqrt(year).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Risk-free rate.
    pub r: f64,
    /// Stock volatility (> 0).
    pub sigma: f64,
    /// Mean-reversion speed of theta (> 0).
    pub lambda_theta: f64,
    /// Volatility of theta (>= 0).
    pub sigma_theta: f64,
    /// Long-run mean of theta.
    pub theta_bar: f64,
    /// Initial market price of risk.
    pub theta0: f64,
    /// Terminal time in years (> 0).
    pub horizon_t: f64,
}

impl MarketParams {
    /// Stock drift implied by the market price of risk: mu = r + sigma * theta.
    pub fn drift(&self, theta: f64) -> f64 {
        self.r + self.sigma * theta
    }
}

/// What an agent derives utility from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Utility of an intertemporal consumption stream over [0, T].
    Consumer,
    /// Utility of terminal wealth at T.
    Terminal,
}

/// One CRRA agent: utility U(c) = c^gamma / gamma with gamma < 1, gamma != 0,
/// and a constant subjective discount rate rho.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub gamma: f64,
    pub rho: f64,
    pub role: Role,
}

impl AgentSpec {
    pub fn consumer(gamma: f64, rho: f64) -> Self {
        Self {
            gamma,
            rho,
            role: Role::Consumer,
        }
    }

    pub fn terminal(gamma: f64, rho: f64) -> Self {
        Self {
            gamma,
            rho,
            role: Role::Terminal,
        }
    }

    /// Inverse marginal utility I(x) = x^(1/(gamma-1)).
    pub fn inverse_marginal_utility(&self, x: f64) -> f64 {
        x.powf(1.0 / (self.gamma - 1.0))
    }

    /// CRRA utility U(x) = x^gamma / gamma.
    pub fn utility(&self, x: f64) -> f64 {
        x.powf(self.gamma) / self.gamma
    }

    /// Exponent 1/(gamma - 1) (< 0), the power that maps marginal-utility
    /// levels to consumption.
    pub fn kappa(&self) -> f64 {
        1.0 / (self.gamma - 1.0)
    }
}

/// The whole problem: one shared portfolio financing several consumers and
/// one terminal-wealth evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub market: MarketParams,
    /// At least one consumer, in a fixed order.
    pub consumers: Vec<AgentSpec>,
    /// Exactly one terminal-wealth evaluator.
    pub terminal: AgentSpec,
    /// Total initial endowment (>= 0).
    pub total_wealth_x: f64,
}

impl ProblemSpec {
    /// All agents in allocation order: consumers first, terminal last.
    pub fn agents(&self) -> Vec<AgentSpec> {
        let mut v = self.consumers.clone();
        v.push(self.terminal);
        v
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// The spec cannot be used as given.
    Error,
    /// The spec is usable but a numerical hazard exists.
    Warning,
}

/// One failed invariant from [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(message: String) -> Self {
        Self {
            severity: Severity::Error,
            message,
        }
    }

    fn warning(message: String) -> Self {
        Self {
            severity: Severity::Warning,
            message,
        }
    }
}

/// Checks every structural invariant of a [`ProblemSpec`] and returns one
/// record per violation; an empty list means the spec is valid. Total
/// function: never panics or errors.
///
/// Besides the hard parameter constraints this emits a warning per agent
/// whose Riccati discriminant is non-positive, meaning the closed-form A1
/// can blow up inside [0, T] and the numerical branch with singularity
/// detection will be used.
pub fn validate(spec: &ProblemSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = &spec.market;

    for (name, v) in [
        ("r", m.r),
        ("sigma", m.sigma),
        ("lambda_theta", m.lambda_theta),
        ("sigma_theta", m.sigma_theta),
        ("theta_bar", m.theta_bar),
        ("theta0", m.theta0),
        ("horizon_T", m.horizon_t),
    ] {
        if !v.is_finite() {
            out.push(Violation::error(format!("{name} must be finite")));
        }
    }
    if m.sigma <= 0.0 {
        out.push(Violation::error("sigma must be positive".into()));
    }
    if m.lambda_theta <= 0.0 {
        out.push(Violation::error("lambda_theta must be positive".into()));
    }
    if m.sigma_theta < 0.0 {
        out.push(Violation::error("sigma_theta must be nonnegative".into()));
    }
    if m.horizon_t <= 0.0 {
        out.push(Violation::error("horizon_T must be positive".into()));
    }
    if spec.consumers.is_empty() {
        out.push(Violation::error("at least one consumer is required".into()));
    }
    if spec.terminal.role != Role::Terminal {
        out.push(Violation::error(
            "terminal agent must have role Terminal".into(),
        ));
    }
    for (i, a) in spec.consumers.iter().enumerate() {
        if a.role != Role::Consumer {
            out.push(Violation::error(format!(
                "agent {} must have role Consumer",
                i + 1
            )));
        }
    }
    if !spec.total_wealth_x.is_finite() || spec.total_wealth_x < 0.0 {
        out.push(Violation::error(
            "total wealth x must be nonnegative and finite".into(),
        ));
    }

    for (i, a) in spec.agents().iter().enumerate() {
        if !a.gamma.is_finite() || !a.rho.is_finite() {
            out.push(Violation::error(format!(
                "agent {}: gamma and rho must be finite",
                i + 1
            )));
            continue;
        }
        if a.gamma == 0.0 {
            out.push(Violation::error(format!(
                "agent {}: gamma must be nonzero",
                i + 1
            )));
        }
        if a.gamma >= 1.0 {
            out.push(Violation::error(format!(
                "agent {}: gamma must be less than 1",
                i + 1
            )));
        }
        if a.gamma != 0.0 && a.gamma < 1.0 && m.lambda_theta > 0.0 {
            let delta_eff = crate::riccati::delta_effective(a.gamma, m);
            if delta_eff <= 0.0 {
                out.push(Violation::warning(format!(
                    "agent {}: Riccati discriminant is {:.4e} <= 0; closed-form A1 may blow up \
                     inside [0, T]; the numerical branch with singularity detection will be used",
                    i + 1,
                    delta_eff
                )));
            }
        }
    }
    out
}

/// Simulated joint paths of (theta_t, Z_t) on a uniform grid, with
/// discretization metadata. Matrices are stored flat, row-major over paths:
/// entry (p, k) is path p at node k for k in 0..=n_steps.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// Grid instants 0, dt, ..., n_steps * dt.
    pub times: Vec<f64>,
    /// Market price of risk per path and node.
    pub theta: Vec<f64>,
    /// Radon-Nikodym density per path and node; Z(p, 0) = 1, all entries > 0.
    pub z: Vec<f64>,
    /// Base seed; path p draws from an independent counter-derived stream.
    pub seed: u64,
    /// Whether consecutive path pairs (2j, 2j+1) are antithetic mirrors.
    pub antithetic: bool,
}

impl PathEnsemble {
    #[inline]
    pub fn theta_at(&self, path: usize, node: usize) -> f64 {
        self.theta[path * (self.n_steps + 1) + node]
    }

    #[inline]
    pub fn z_at(&self, path: usize, node: usize) -> f64 {
        self.z[path * (self.n_steps + 1) + node]
    }

    /// One path's theta row.
    pub fn theta_row(&self, path: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.theta[path * w..(path + 1) * w]
    }

    /// One path's Z row.
    pub fn z_row(&self, path: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.z[path * w..(path + 1) * w]
    }

    /// Grid index of time `t`, requiring `t` to sit on the grid.
    pub fn node_of_time(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round() as usize;
        if k > self.n_steps || (self.times[k] - t).abs() > 1e-9 * self.dt.max(1.0) {
            return Err(ModelError::OutOfRange {
                context: "checkpoint not on ensemble grid",
            });
        }
        Ok(k)
    }
}

/// Simulates `n_paths` joint paths of (theta, Z) to the market horizon.
///
/// theta uses the exact Ornstein-Uhlenbeck transition: conditional mean
/// theta_bar + (theta_k - theta_bar) e^(-lambda dt) and exact conditional
/// variance sigma_theta^2 (1 - e^(-2 lambda dt)) / (2 lambda). Z accumulates
/// in the log, Z_{k+1} = Z_k exp(-theta_k dW_k - theta_k^2 dt / 2), with the
/// same standard normal driving both updates per step: dW_k is the stock's
/// Brownian increment and the theta shock enters with the opposite sign.
///
/// Deterministic: identical arguments produce a bitwise-identical ensemble.
/// Path p draws from stream p of a counter-based generator, so the result
/// does not depend on evaluation order.
pub fn simulate(
    market: &MarketParams,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_inner(market, n_paths, n_steps, seed, false)
}

/// Same as [`simulate`] but fills consecutive path pairs with antithetic
/// draws: path 2j+1 re-uses the normals of path 2j with flipped signs.
/// `n_paths` must be even. Estimators should reduce over pair averages.
pub fn simulate_antithetic(
    market: &MarketParams,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if n_paths % 2 != 0 {
        return Err(ModelError::OutOfRange {
            context: "antithetic ensemble needs even n_paths",
        });
    }
    simulate_inner(market, n_paths, n_steps, seed, true)
}

fn simulate_inner(
    market: &MarketParams,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathEnsemble> {
    if n_paths < 1 || n_steps < 1 {
        return Err(ModelError::OutOfRange {
            context: "n_paths and n_steps must be >= 1",
        });
    }
    for v in [
        market.r,
        market.sigma,
        market.lambda_theta,
        market.sigma_theta,
        market.theta_bar,
        market.theta0,
        market.horizon_t,
    ] {
        if !v.is_finite() {
            return Err(ModelError::InvalidParameter {
                context: "market parameters must be finite",
            });
        }
    }
    if market.horizon_t <= 0.0 || market.lambda_theta <= 0.0 {
        return Err(ModelError::InvalidParameter {
            context: "horizon_T and lambda_theta must be positive",
        });
    }

    let dt = market.horizon_t / n_steps as f64;
    let width = n_steps + 1;
    let decay = (-market.lambda_theta * dt).exp();
    // Exact OU conditional standard deviation over one step.
    let ou_sd = (market.sigma_theta * market.sigma_theta * (1.0 - decay * decay)
        / (2.0 * market.lambda_theta))
        .sqrt();
    let sqrt_dt = dt.sqrt();

    let times: Vec<f64> = (0..width).map(|k| k as f64 * dt).collect();
    let mut theta = vec![0.0; n_paths * width];
    let mut z = vec![0.0; n_paths * width];

    let mut shocks = vec![0.0; n_steps];
    for p in 0..n_paths {
        let flip = antithetic && p % 2 == 1;
        if !flip {
            let stream = if antithetic { (p / 2) as u64 } else { p as u64 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            for s in shocks.iter_mut() {
                *s = StandardNormal.sample(&mut rng);
            }
        } else {
            for s in shocks.iter_mut() {
                *s = -*s;
            }
        }

        let row = p * width;
        theta[row] = market.theta0;
        z[row] = 1.0;
        let mut th = market.theta0;
        let mut log_z = 0.0;
        for (k, &xi) in shocks.iter().enumerate() {
            let dw = sqrt_dt * xi;
            log_z += -th * dw - 0.5 * th * th * dt;
            th = market.theta_bar + (th - market.theta_bar) * decay - ou_sd * xi;
            theta[row + k + 1] = th;
            z[row + k + 1] = log_z.exp();
        }
    }

    Ok(PathEnsemble {
        n_paths,
        n_steps,
        dt,
        times,
        theta,
        z,
        seed,
        antithetic,
    })
}
