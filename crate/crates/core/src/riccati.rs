//! Exponential-affine coefficients A1, A2, A3 of the conditional-expectation
//! factor
//!
//!   g(s, theta) = E[ exp( a int_0^s theta_u dW_u + (a/2) int_0^s theta_u^2 du ) | theta_0 = theta ]
//!              = exp( A1(s) theta^2 / 2 + A2(s) theta + A3(s) ),   a = gamma / (1 - gamma),
//!
//! which prices power-weighted density payoffs E[Z_s^(1+kappa)] for a CRRA
//! agent. The module solves the coefficient ODE system numerically (the
//! reference path) and in closed form (the cross-check path), and evaluates
//! the derived quantities H(theta, tau), s_i, and the density p_i.
//!
//! Because theta and Z are driven by the same Brownian motion, the
//! exponential weight tilts the theta drift: under the tilted expectation
//! the mean-reversion speed is
//!
//!   lambda_eff = lambda_theta + a * sigma_theta,
//!
//! while the pull level lambda_theta * theta_bar is unchanged. The system is
//!
//!   A1' = sigma_theta^2 A1^2 - 2 lambda_eff A1 + q,          q = gamma / (1 - gamma)^2,
//!   A2' = lambda_theta theta_bar A1 - lambda_eff A2 + sigma_theta^2 A1 A2,
//!   A3' = lambda_theta theta_bar A2 + sigma_theta^2 (A1 + A2^2) / 2,
//!
//! with A1(0) = A2(0) = A3(0) = 0. A1 is autonomous Riccati; its finite-time
//! blow-up is governed by the discriminant lambda_eff^2 - q sigma_theta^2.

use crate::error::{ModelError, Result};
use crate::model::{AgentSpec, MarketParams, Role};
use crate::num::simpson_uniform;

/// Default node count for coefficient grids.
pub const DEFAULT_GRID: usize = 2048;

/// Guard for the numerical integrator: |A1| beyond this is treated as a
/// blow-up in progress.
const BLOWUP_BOUND: f64 = 1e6;

/// Riccati source term q = gamma / (1 - gamma)^2.
pub fn source_term(gamma: f64) -> f64 {
    gamma / ((1.0 - gamma) * (1.0 - gamma))
}

/// Tilted mean-reversion speed lambda_theta + gamma sigma_theta / (1 - gamma).
pub fn effective_reversion(gamma: f64, market: &MarketParams) -> f64 {
    market.lambda_theta + gamma / (1.0 - gamma) * market.sigma_theta
}

/// Nominal discriminant lambda_theta^2 - gamma sigma_theta^2 / (1 - gamma)^2.
///
/// This is the textbook expression stated for the untilted mean reversion;
/// see [`delta_effective`] for the discriminant that actually governs the
/// integrated system. The two coincide when sigma_theta = 0 and keep the
/// same sign everywhere gamma < 0.
pub fn delta(gamma: f64, market: &MarketParams) -> f64 {
    market.lambda_theta * market.lambda_theta
        - source_term(gamma) * market.sigma_theta * market.sigma_theta
}

/// Discriminant of the integrated Riccati equation,
/// lambda_eff^2 - q sigma_theta^2. Positive means A1 stays bounded on
/// [0, infinity); negative means a finite-time pole.
pub fn delta_effective(gamma: f64, market: &MarketParams) -> f64 {
    let le = effective_reversion(gamma, market);
    le * le - source_term(gamma) * market.sigma_theta * market.sigma_theta
}

/// The largest gamma in (0, 1) with a positive nominal discriminant:
/// gamma_lim = 2 / (2 + b + sqrt((2 + b)^2 - 4)) with b = sigma_theta^2 /
/// lambda_theta^2. For gamma < 0 the discriminant is always positive; for
/// gamma in (0, 1), delta(gamma) > 0 iff gamma < gamma_lim. b = 0 is the
/// degenerate volatility-free case where every gamma < 1 qualifies.
pub fn gamma_limit(market: &MarketParams) -> f64 {
    if market.sigma_theta == 0.0 {
        return 1.0;
    }
    let b = market.sigma_theta * market.sigma_theta / (market.lambda_theta * market.lambda_theta);
    2.0 / (2.0 + b + ((2.0 + b) * (2.0 + b) - 4.0).sqrt())
}

/// Exponential decay rate of the deterministic part of H:
/// d = (r gamma - rho) / (1 - gamma). For a consumer, H(theta, tau) =
/// g(tau, theta) e^(d tau) is the time-tau integrand of the budget value
/// at unit marginal-utility level; for the terminal agent the same factor
/// is evaluated once at the horizon.
pub fn h_decay_rate(agent: &AgentSpec, market: &MarketParams) -> f64 {
    (market.r * agent.gamma - agent.rho) / (1.0 - agent.gamma)
}

/// Which route produced a coefficient set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientSource {
    Numerical,
    ClosedForm,
}

/// A1, A2, A3 tabulated on a uniform grid of time offsets s in [0, span].
#[derive(Debug, Clone)]
pub struct AffineCoefficients {
    pub agent_gamma: f64,
    /// Ascending offsets 0 = s_0 < ... < s_n = span.
    pub grid: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    /// Discriminant of the integrated equation ([`delta_effective`]).
    pub delta: f64,
    pub source: CoefficientSource,
}

impl AffineCoefficients {
    pub fn span(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Linear interpolation of (A1, A2, A3) at offset `s`.
    pub fn interpolate(&self, s: f64) -> Result<(f64, f64, f64)> {
        let span = self.span();
        if !(0.0..=span * (1.0 + 1e-12) + 1e-15).contains(&s) {
            return Err(ModelError::OutOfRange {
                context: "offset outside coefficient span",
            });
        }
        let h = self.step();
        let pos = (s / h).min((self.grid.len() - 1) as f64);
        let k = (pos.floor() as usize).min(self.grid.len() - 2);
        let w = (s - self.grid[k]) / h;
        Ok((
            self.a1[k] + w * (self.a1[k + 1] - self.a1[k]),
            self.a2[k] + w * (self.a2[k + 1] - self.a2[k]),
            self.a3[k] + w * (self.a3[k + 1] - self.a3[k]),
        ))
    }
}

fn rhs(gamma: f64, market: &MarketParams, a: [f64; 3]) -> [f64; 3] {
    let q = source_term(gamma);
    let le = effective_reversion(gamma, market);
    let lam_bar = market.lambda_theta * market.theta_bar;
    let s2 = market.sigma_theta * market.sigma_theta;
    [
        s2 * a[0] * a[0] - 2.0 * le * a[0] + q,
        lam_bar * a[0] - le * a[1] + s2 * a[0] * a[1],
        lam_bar * a[1] + 0.5 * s2 * (a[0] + a[1] * a[1]),
    ]
}

/// Integrates the coefficient system forward from the zero initial condition
/// with classical fourth-order Runge-Kutta on a uniform grid of `n_grid`
/// intervals over [0, span_s].
///
/// Fails with [`ModelError::SingularityDetected`] if |A1| crosses the blow-up
/// guard before the span ends (possible when the effective discriminant is
/// non-positive); the error carries the blow-up time estimate.
pub fn solve_system(
    gamma: f64,
    market: &MarketParams,
    span_s: f64,
    n_grid: usize,
) -> Result<AffineCoefficients> {
    let (coeffs, blowup) = solve_system_partial(gamma, market, span_s, n_grid)?;
    match blowup {
        Some(blowup_time) => Err(ModelError::SingularityDetected { gamma, blowup_time }),
        None => Ok(coeffs),
    }
}

/// Like [`solve_system`] but keeps whatever was integrated when the guard
/// trips: returns the coefficients up to the last finite node together with
/// the blow-up time estimate (None if the full span was covered). Used by
/// diagnostics that want the partial grid.
pub fn solve_system_partial(
    gamma: f64,
    market: &MarketParams,
    span_s: f64,
    n_grid: usize,
) -> Result<(AffineCoefficients, Option<f64>)> {
    if span_s <= 0.0 || n_grid < 2 {
        return Err(ModelError::OutOfRange {
            context: "span_s > 0 and n_grid >= 2 required",
        });
    }
    let h = span_s / n_grid as f64;
    let mut grid = Vec::with_capacity(n_grid + 1);
    let mut a1 = Vec::with_capacity(n_grid + 1);
    let mut a2 = Vec::with_capacity(n_grid + 1);
    let mut a3 = Vec::with_capacity(n_grid + 1);

    let mut state = [0.0_f64; 3];
    grid.push(0.0);
    a1.push(0.0);
    a2.push(0.0);
    a3.push(0.0);
    let mut blowup = None;

    for k in 0..n_grid {
        let s = k as f64 * h;
        let k1 = rhs(gamma, market, state);
        let k2 = rhs(gamma, market, step(state, k1, 0.5 * h));
        let k3 = rhs(gamma, market, step(state, k2, 0.5 * h));
        let k4 = rhs(gamma, market, step(state, k3, h));
        for i in 0..3 {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !state[0].is_finite() || state[0].abs() > BLOWUP_BOUND {
            blowup = Some(s + h);
            break;
        }
        grid.push((k + 1) as f64 * h);
        a1.push(state[0]);
        a2.push(state[1]);
        a3.push(state[2]);
    }

    let coeffs = AffineCoefficients {
        agent_gamma: gamma,
        grid,
        a1,
        a2,
        a3,
        delta: delta_effective(gamma, market),
        source: CoefficientSource::Numerical,
    };
    Ok((coeffs, blowup))
}

fn step(a: [f64; 3], d: [f64; 3], h: f64) -> [f64; 3] {
    [a[0] + h * d[0], a[1] + h * d[1], a[2] + h * d[2]]
}

/// Closed-form A1 at offset `s`, branching on the sign of the effective
/// discriminant D = lambda_eff^2 - q sigma_theta^2:
///
///   D > 0:  A1(s) = q (1 - E) / (lambda_eff + sqrt(D) - (lambda_eff - sqrt(D)) E),
///           E = exp(-2 sqrt(D) s);
///   D = 0:  A1(s) = lambda_eff^2 s / (sigma_theta^2 (lambda_eff s + 1));
///   D < 0:  A1(s) = (sqrt(-D) tan(sqrt(-D) s + atan(-lambda_eff / sqrt(-D))) + lambda_eff)
///                   / sigma_theta^2,
///
/// all vanishing at s = 0. This is a cross-check path: downstream consumers
/// read the numerical solution. On the D < 0 branch the tangent argument
/// crossing pi/2 is a pole and yields [`ModelError::SingularityDetected`].
pub fn a1_closed(gamma: f64, market: &MarketParams, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(ModelError::OutOfRange {
            context: "offset s must be nonnegative",
        });
    }
    let q = source_term(gamma);
    let le = effective_reversion(gamma, market);
    let s2 = market.sigma_theta * market.sigma_theta;
    let d = le * le - q * s2;
    let scale = (le * le).max(q.abs() * s2);

    if d.abs() <= 1e-10 * scale.max(1e-300) {
        // Double-root branch; only reachable with sigma_theta > 0.
        return Ok(le * le * s / (s2 * (le * s + 1.0)));
    }
    if d > 0.0 {
        let rd = d.sqrt();
        let e = (-2.0 * rd * s).exp();
        return Ok(q * (1.0 - e) / (le + rd - (le - rd) * e));
    }
    let rd = (-d).sqrt();
    let arg = rd * s + (-le / rd).atan();
    if arg >= std::f64::consts::FRAC_PI_2 {
        let blowup_time = (std::f64::consts::FRAC_PI_2 + (le / rd).atan()) / rd;
        return Err(ModelError::SingularityDetected { gamma, blowup_time });
    }
    Ok((rd * arg.tan() + le) / s2)
}

/// Builds a coefficient set with A1 from the closed form and A2, A3 from
/// their (linear, quadrature) equations given that A1. Cross-check
/// counterpart of [`solve_system`].
pub fn closed_form_system(
    gamma: f64,
    market: &MarketParams,
    span_s: f64,
    n_grid: usize,
) -> Result<AffineCoefficients> {
    if span_s <= 0.0 || n_grid < 2 {
        return Err(ModelError::OutOfRange {
            context: "span_s > 0 and n_grid >= 2 required",
        });
    }
    let h = span_s / n_grid as f64;
    let le = effective_reversion(gamma, market);
    let lam_bar = market.lambda_theta * market.theta_bar;
    let s2 = market.sigma_theta * market.sigma_theta;

    let mut grid = Vec::with_capacity(n_grid + 1);
    let mut a1 = Vec::with_capacity(n_grid + 1);
    let mut a2 = Vec::with_capacity(n_grid + 1);
    let mut a3 = Vec::with_capacity(n_grid + 1);
    grid.push(0.0);
    a1.push(0.0);
    a2.push(0.0);
    a3.push(0.0);

    // RK4 for the (A2, A3) subsystem with A1 supplied analytically.
    let f = |s: f64, v: [f64; 2]| -> Result<[f64; 2]> {
        let x1 = a1_closed(gamma, market, s)?;
        Ok([
            lam_bar * x1 - le * v[0] + s2 * x1 * v[0],
            lam_bar * v[0] + 0.5 * s2 * (x1 + v[0] * v[0]),
        ])
    };
    let mut state = [0.0_f64; 2];
    for k in 0..n_grid {
        let s = k as f64 * h;
        let k1 = f(s, state)?;
        let k2 = f(
            s + 0.5 * h,
            [state[0] + 0.5 * h * k1[0], state[1] + 0.5 * h * k1[1]],
        )?;
        let k3 = f(
            s + 0.5 * h,
            [state[0] + 0.5 * h * k2[0], state[1] + 0.5 * h * k2[1]],
        )?;
        let k4 = f(s + h, [state[0] + h * k3[0], state[1] + h * k3[1]])?;
        state[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        state[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        let s_next = (k + 1) as f64 * h;
        grid.push(s_next);
        a1.push(a1_closed(gamma, market, s_next)?);
        a2.push(state[0]);
        a3.push(state[1]);
    }

    Ok(AffineCoefficients {
        agent_gamma: gamma,
        grid,
        a1,
        a2,
        a3,
        delta: delta_effective(gamma, market),
        source: CoefficientSource::ClosedForm,
    })
}

/// Maximum absolute residual of the three coefficient equations over the
/// interior grid nodes, with centered finite differences for the derivative
/// terms.
pub fn residual(coeffs: &AffineCoefficients, market: &MarketParams) -> f64 {
    let n = coeffs.grid.len();
    debug_assert!(n >= 3, "residual needs at least 3 grid points");
    let h = coeffs.step();
    let gamma = coeffs.agent_gamma;
    let mut worst: f64 = 0.0;
    for k in 1..n - 1 {
        let d1 = (coeffs.a1[k + 1] - coeffs.a1[k - 1]) / (2.0 * h);
        let d2 = (coeffs.a2[k + 1] - coeffs.a2[k - 1]) / (2.0 * h);
        let d3 = (coeffs.a3[k + 1] - coeffs.a3[k - 1]) / (2.0 * h);
        let f = rhs(gamma, market, [coeffs.a1[k], coeffs.a2[k], coeffs.a3[k]]);
        worst = worst
            .max((f[0] - d1).abs())
            .max((f[1] - d2).abs())
            .max((f[2] - d3).abs());
    }
    worst
}

/// Residual of the three equations at a single interior node (centered
/// differences); used by diagnostics dumps.
pub fn residual_at(coeffs: &AffineCoefficients, market: &MarketParams, k: usize) -> Option<f64> {
    let n = coeffs.grid.len();
    if k == 0 || k >= n - 1 {
        return None;
    }
    let h = coeffs.step();
    let d1 = (coeffs.a1[k + 1] - coeffs.a1[k - 1]) / (2.0 * h);
    let d2 = (coeffs.a2[k + 1] - coeffs.a2[k - 1]) / (2.0 * h);
    let d3 = (coeffs.a3[k + 1] - coeffs.a3[k - 1]) / (2.0 * h);
    let f = rhs(
        coeffs.agent_gamma,
        market,
        [coeffs.a1[k], coeffs.a2[k], coeffs.a3[k]],
    );
    Some(
        (f[0] - d1)
            .abs()
            .max((f[1] - d2).abs())
            .max((f[2] - d3).abs()),
    )
}

/// H(theta, tau) = exp(A1(tau) theta^2 / 2 + A2(tau) theta + A3(tau) + d tau)
/// with d = [`h_decay_rate`]. Strictly positive; coefficients are linearly
/// interpolated between grid nodes.
pub fn h_integrand(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
    theta: f64,
    tau: f64,
) -> Result<f64> {
    let (a1, a2, a3) = coeffs.interpolate(tau)?;
    let d = h_decay_rate(agent, market);
    Ok((0.5 * a1 * theta * theta + a2 * theta + a3 + d * tau).exp())
}

/// Integral of H(theta, .) over [0, upper] using composite Simpson on the
/// coefficient grid nodes, plus a two-point Gauss rule on any partial tail
/// cell. `upper` must not exceed the coefficient span.
pub fn h_integral_to(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
    theta: f64,
    upper: f64,
) -> Result<f64> {
    let span = coeffs.span();
    if upper < 0.0 || upper > span * (1.0 + 1e-12) + 1e-15 {
        return Err(ModelError::OutOfRange {
            context: "integration bound outside coefficient span",
        });
    }
    if upper == 0.0 {
        return Ok(0.0);
    }
    let h = coeffs.step();
    let k_max = ((upper / h) + 1e-9).floor() as usize;
    let k_max = k_max.min(coeffs.grid.len() - 1);
    let d = h_decay_rate(agent, market);
    let half_t2 = 0.5 * theta * theta;

    let values: Vec<f64> = (0..=k_max)
        .map(|k| {
            (half_t2 * coeffs.a1[k] + theta * coeffs.a2[k] + coeffs.a3[k] + d * coeffs.grid[k])
                .exp()
        })
        .collect();
    let mut total = simpson_uniform(&values, h);

    let tail_lo = coeffs.grid[k_max];
    let tail = upper - tail_lo;
    if tail > 1e-14 * span {
        // Two-point Gauss-Legendre on [tail_lo, upper].
        let half = 0.5 * tail;
        let off = half / 3.0_f64.sqrt();
        let mid = tail_lo + half;
        total += half
            * (h_integrand(coeffs, agent, market, theta, mid - off)?
                + h_integrand(coeffs, agent, market, theta, mid + off)?);
    }
    Ok(total)
}

/// Like [`h_integral_to`] but over node indices 0..=upper_node with a node
/// stride, trading accuracy for speed in inner Monte-Carlo loops.
/// `upper_node` must be a multiple of `stride`.
pub fn h_integral_strided(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
    theta: f64,
    upper_node: usize,
    stride: usize,
) -> f64 {
    debug_assert!(upper_node % stride == 0 && upper_node < coeffs.grid.len());
    let d = h_decay_rate(agent, market);
    let half_t2 = 0.5 * theta * theta;
    let values: Vec<f64> = (0..=upper_node / stride)
        .map(|j| {
            let k = j * stride;
            (half_t2 * coeffs.a1[k] + theta * coeffs.a2[k] + coeffs.a3[k] + d * coeffs.grid[k])
                .exp()
        })
        .collect();
    simpson_uniform(&values, coeffs.step() * stride as f64)
}

/// Joint pass returning (int H, int H * (A1 theta + A2)) over [0, upper];
/// the second integral is the hedging-weighted bracket used by portfolio
/// formulas and theta-sensitivities.
pub fn h_bracket_integrals(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
    theta: f64,
    upper: f64,
) -> Result<(f64, f64)> {
    let span = coeffs.span();
    if upper < 0.0 || upper > span * (1.0 + 1e-12) + 1e-15 {
        return Err(ModelError::OutOfRange {
            context: "integration bound outside coefficient span",
        });
    }
    let h = coeffs.step();
    let k_max = (((upper / h) + 1e-9).floor() as usize).min(coeffs.grid.len() - 1);
    let d = h_decay_rate(agent, market);
    let half_t2 = 0.5 * theta * theta;

    let mut h_vals = Vec::with_capacity(k_max + 1);
    let mut hb_vals = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let hv =
            (half_t2 * coeffs.a1[k] + theta * coeffs.a2[k] + coeffs.a3[k] + d * coeffs.grid[k])
                .exp();
        h_vals.push(hv);
        hb_vals.push(hv * (coeffs.a1[k] * theta + coeffs.a2[k]));
    }
    let mut ih = simpson_uniform(&h_vals, h);
    let mut ihb = simpson_uniform(&hb_vals, h);

    let tail_lo = coeffs.grid[k_max];
    let tail = upper - tail_lo;
    if tail > 1e-14 * span {
        let half = 0.5 * tail;
        let off = half / 3.0_f64.sqrt();
        for s in [tail_lo + half - off, tail_lo + half + off] {
            let (a1, a2, a3) = coeffs.interpolate(s)?;
            let hv = (half_t2 * a1 + theta * a2 + a3 + d * s).exp();
            ih += half * hv;
            ihb += half * hv * (a1 * theta + a2);
        }
    }
    Ok((ih, ihb))
}

/// The per-agent budget weight s_i at unit marginal-utility level.
/// Consumers integrate H(theta0, .) over [0, T]; the terminal agent is the
/// single evaluation H(theta0, T), the same exponential-affine factor taken
/// at the horizon (no integral).
pub fn s_value(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
) -> Result<f64> {
    let t = market.horizon_t;
    if coeffs.span() < t * (1.0 - 1e-12) {
        return Err(ModelError::OutOfRange {
            context: "coefficient span shorter than horizon",
        });
    }
    match agent.role {
        Role::Consumer => h_integral_to(coeffs, agent, market, market.theta0, t),
        Role::Terminal => h_integrand(coeffs, agent, market, market.theta0, t),
    }
}

/// Density p(theta_t, t, tau) = H(theta_t, tau) / int_0^(T-t) H(theta_t, s) ds
/// on tau in [0, T - t]; nonnegative and integrating to one by construction.
pub fn density_p(
    coeffs: &AffineCoefficients,
    agent: &AgentSpec,
    market: &MarketParams,
    theta_t: f64,
    t: f64,
    tau: f64,
) -> Result<f64> {
    let horizon = market.horizon_t;
    if !(0.0..horizon).contains(&t) {
        return Err(ModelError::OutOfRange {
            context: "t must lie in [0, T)",
        });
    }
    if tau < 0.0 || tau > (horizon - t) * (1.0 + 1e-12) {
        return Err(ModelError::OutOfRange {
            context: "tau must lie in [0, T - t]",
        });
    }
    let numer = h_integrand(coeffs, agent, market, theta_t, tau)?;
    let denom = h_integral_to(coeffs, agent, market, theta_t, horizon - t)?;
    Ok(numer / denom)
}
