//! Time-t optimal controls: consumption rates, wealth levels, and portfolio
//! weights with the intertemporal hedging demand.

use crate::error::{ModelError, Result};
use crate::model::{AgentSpec, MarketParams, Role};
use crate::riccati::{self, AffineCoefficients};

/// Market state consumed by the time-t formulas.
#[derive(Debug, Clone, Copy)]
pub struct PolicyState {
    /// Time in years, 0 <= t < T.
    pub t: f64,
    /// Market price of risk at t.
    pub theta_t: f64,
    /// Inverse state-price level Y_t = (y Z_t)^{-1} e^{r t}.
    pub y_t: f64,
    /// Stock drift mu_t = r + sigma theta_t.
    pub mu_t: f64,
}

impl PolicyState {
    /// Builds the state from the marginal-utility level y and the density
    /// level Z_t.
    pub fn new(market: &MarketParams, t: f64, theta_t: f64, y: f64, z_t: f64) -> Result<Self> {
        if y <= 0.0 || z_t <= 0.0 {
            return Err(ModelError::OutOfRange {
                context: "y and Z_t must be positive",
            });
        }
        Ok(Self {
            t,
            theta_t,
            y_t: (market.r * t).exp() / (y * z_t),
            mu_t: market.drift(theta_t),
        })
    }
}

/// Agent-specific state price zeta_t = Z_t e^{-r t} e^{rho t}.
pub fn zeta(agent: &AgentSpec, market: &MarketParams, t: f64, z_t: f64) -> f64 {
    z_t * ((agent.rho - market.r) * t).exp()
}

/// Optimal consumption rate c_t = I((y) zeta_t) = (y zeta_t)^(1/(gamma-1)).
pub fn consumption(agent: &AgentSpec, y: f64, zeta_t: f64) -> Result<f64> {
    if y <= 0.0 || zeta_t <= 0.0 {
        return Err(ModelError::OutOfRange {
            context: "consumption needs positive y and zeta",
        });
    }
    Ok(agent.inverse_marginal_utility(y * zeta_t))
}

/// Wealth of one agent at the policy state.
///
/// Consumers: X_t = Y_t^(1/(1-gamma)) e^(-rho t / (1-gamma))
///                  int_0^(T-t) H(theta_t, tau) dtau.
/// Terminal agent: X_t = Y_t^(1/(1-gamma)) e^((r(1+kappa) + d) t) H(theta_t, T-t),
/// which degenerates to the inverse marginal utility of y zeta_T at t = T.
/// At t = 0 (Y_0 = 1/y) both reproduce the allocation x_i.
pub fn wealth_t(
    agent: &AgentSpec,
    coeffs: &AffineCoefficients,
    market: &MarketParams,
    state: &PolicyState,
) -> Result<f64> {
    let t = state.t;
    let horizon = market.horizon_t;
    if t < 0.0 || t > horizon {
        return Err(ModelError::OutOfRange {
            context: "t must lie in [0, T]",
        });
    }
    let one_minus = 1.0 - agent.gamma;
    let base = state.y_t.powf(1.0 / one_minus);
    match agent.role {
        Role::Consumer => {
            let integral =
                riccati::h_integral_to(coeffs, agent, market, state.theta_t, horizon - t)?;
            Ok(base * (-agent.rho * t / one_minus).exp() * integral)
        }
        Role::Terminal => {
            let kappa = agent.kappa();
            let d = riccati::h_decay_rate(agent, market);
            let h_val = riccati::h_integrand(coeffs, agent, market, state.theta_t, horizon - t)?;
            Ok(base * ((market.r * (1.0 + kappa) + d) * t).exp() * h_val)
        }
    }
}

/// Monte-Carlo inner-loop variant of [`wealth_t`]: the consumer integral
/// runs over every `stride`-th coefficient node when the remaining horizon
/// aligns with the strided grid, falling back to the exact rule otherwise.
/// Quadrature error stays far below Monte-Carlo noise for strides up to a
/// few dozen nodes.
pub fn wealth_t_strided(
    agent: &AgentSpec,
    coeffs: &AffineCoefficients,
    market: &MarketParams,
    state: &PolicyState,
    stride: usize,
) -> Result<f64> {
    if agent.role == Role::Terminal {
        return wealth_t(agent, coeffs, market, state);
    }
    let left = market.horizon_t - state.t;
    let node_f = left / coeffs.step();
    let node = node_f.round() as usize;
    if (node_f - node as f64).abs() > 1e-6 || node % stride != 0 || node >= coeffs.grid.len() {
        return wealth_t(agent, coeffs, market, state);
    }
    let one_minus = 1.0 - agent.gamma;
    let integral = riccati::h_integral_strided(coeffs, agent, market, state.theta_t, node, stride);
    Ok(state.y_t.powf(1.0 / one_minus) * (-agent.rho * state.t / one_minus).exp() * integral)
}

/// One agent's portfolio weight split into its myopic and hedging parts.
#[derive(Debug, Clone, Copy)]
pub struct PortfolioWeight {
    /// (1/(1-gamma)) (mu - r) / sigma^2.
    pub myopic: f64,
    /// -(sigma_theta / ((1-gamma) sigma)) times the coefficient bracket:
    /// consumers average A1(tau) theta + A2(tau) under the density p; the
    /// terminal agent evaluates it at tau = T - t.
    pub hedging: f64,
    pub total: f64,
}

/// The density-weighted coefficient bracket driving the hedging demand:
/// consumers get int p(theta,t,tau) (A1(tau) theta + A2(tau)) dtau, the
/// terminal agent A1(T-t) theta + A2(T-t).
pub fn hedging_bracket(
    agent: &AgentSpec,
    coeffs: &AffineCoefficients,
    market: &MarketParams,
    state: &PolicyState,
) -> Result<f64> {
    let left = market.horizon_t - state.t;
    match agent.role {
        Role::Consumer => {
            let (ih, ihb) =
                riccati::h_bracket_integrals(coeffs, agent, market, state.theta_t, left)?;
            Ok(ihb / ih)
        }
        Role::Terminal => {
            let (a1, a2, _) = coeffs.interpolate(left)?;
            Ok(a1 * state.theta_t + a2)
        }
    }
}

/// Portfolio weights for every agent plus their sum. `agents` and `coeffs`
/// run in the same order.
pub fn portfolio_weights(
    agents: &[AgentSpec],
    coeffs: &[AffineCoefficients],
    market: &MarketParams,
    state: &PolicyState,
) -> Result<(Vec<PortfolioWeight>, f64)> {
    if state.t >= market.horizon_t {
        return Err(ModelError::OutOfRange {
            context: "portfolio weights need t < T",
        });
    }
    let mut weights = Vec::with_capacity(agents.len());
    let mut total = 0.0;
    for (agent, c) in agents.iter().zip(coeffs) {
        let one_minus = 1.0 - agent.gamma;
        let myopic = (state.mu_t - market.r) / (one_minus * market.sigma * market.sigma);
        let bracket = hedging_bracket(agent, c, market, state)?;
        let hedging = -market.sigma_theta / (one_minus * market.sigma) * bracket;
        let w = PortfolioWeight {
            myopic,
            hedging,
            total: myopic + hedging,
        };
        total += w.total;
        weights.push(w);
    }
    Ok((weights, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{allocate_fixed_y, HFamily};
    use crate::model::{simulate, ProblemSpec};
    use crate::riccati::{solve_system, DEFAULT_GRID};

    fn reference_market() -> MarketParams {
        MarketParams {
            r: 0.048,
            sigma: 0.2,
            lambda_theta: 0.2712,
            sigma_theta: 0.0655,
            theta_bar: 0.9456,
            theta0: 0.9456,
            horizon_t: 1.0,
        }
    }

    fn reference_spec() -> ProblemSpec {
        ProblemSpec {
            market: reference_market(),
            consumers: vec![
                AgentSpec::consumer(-9.0, 0.01),
                AgentSpec::consumer(-3.0, 0.01),
            ],
            terminal: AgentSpec::terminal(-2.0, 0.01),
            total_wealth_x: 1.0,
        }
    }

    #[test]
    fn consumption_power_law_cases() {
        let a = AgentSpec::consumer(-1.0, 0.0);
        assert_eq!(consumption(&a, 1.0, 1.0).unwrap(), 1.0);
        assert!((consumption(&a, 4.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(consumption(&a, 0.0, 1.0).is_err());
    }

    #[test]
    fn wealth_at_time_zero_reproduces_the_allocation() {
        let spec = reference_spec();
        let market = spec.market;
        let y = 3.0;
        let alloc = allocate_fixed_y(&spec, y).unwrap();
        for (i, agent) in spec.agents().iter().enumerate() {
            let coeffs =
                solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
            let state = PolicyState::new(&market, 0.0, market.theta0, y, 1.0).unwrap();
            let w = wealth_t(agent, &coeffs, &market, &state).unwrap();
            let xi = alloc.x_alloc[i];
            assert!(
                (w - xi).abs() <= 1e-10 * xi,
                "agent {i}: wealth {w} vs allocation {xi}"
            );
        }
    }

    #[test]
    fn consumer_wealth_vanishes_at_the_horizon() {
        let spec = reference_spec();
        let market = spec.market;
        let agent = spec.consumers[1];
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
        let t = market.horizon_t - 1e-8;
        let state = PolicyState::new(&market, t, 0.8, 3.0, 1.1).unwrap();
        let w = wealth_t(&agent, &coeffs, &market, &state).unwrap();
        assert!(w <= 1e-6, "residual consumer wealth {w}");
    }

    #[test]
    fn terminal_wealth_at_horizon_is_the_inverse_marginal_utility_pathwise() {
        let spec = reference_spec();
        let market = spec.market;
        let agent = spec.terminal;
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
        let y = 3.0;
        let ens = simulate(&market, 32, 64, 17).unwrap();
        for p in 0..ens.n_paths {
            let z_t = ens.z_at(p, ens.n_steps);
            let th_t = ens.theta_at(p, ens.n_steps);
            let state = PolicyState::new(&market, market.horizon_t, th_t, y, z_t).unwrap();
            let w = wealth_t(&agent, &coeffs, &market, &state).unwrap();
            let direct =
                agent.inverse_marginal_utility(y * zeta(&agent, &market, market.horizon_t, z_t));
            assert!(
                (w - direct).abs() <= 1e-12 * direct,
                "path {p}: {w} vs {direct}"
            );
        }
    }

    #[test]
    fn zero_theta_volatility_kills_the_hedging_demand() {
        let mut market = reference_market();
        market.sigma_theta = 0.0;
        let agents = [
            AgentSpec::consumer(-3.0, 0.01),
            AgentSpec::terminal(-2.0, 0.01),
        ];
        let coeffs: Vec<_> = agents
            .iter()
            .map(|a| solve_system(a.gamma, &market, market.horizon_t, 512).unwrap())
            .collect();
        let state = PolicyState::new(&market, 0.3, market.theta0, 2.0, 1.0).unwrap();
        let (weights, total) = portfolio_weights(&agents, &coeffs, &market, &state).unwrap();
        let mut expected_total = 0.0;
        for (agent, w) in agents.iter().zip(&weights) {
            assert_eq!(w.hedging, 0.0);
            let merton =
                (state.mu_t - market.r) / ((1.0 - agent.gamma) * market.sigma * market.sigma);
            assert!((w.total - merton).abs() < 1e-15);
            expected_total += merton;
        }
        assert!((total - expected_total).abs() < 1e-15);
    }

    #[test]
    fn zero_long_run_mean_zeroes_a2_and_the_bracket_at_theta_zero() {
        let mut market = reference_market();
        market.theta_bar = 0.0;
        let agent = AgentSpec::consumer(-3.0, 0.01);
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, 1024).unwrap();
        assert!(
            coeffs.a2.iter().all(|&v| v == 0.0),
            "A2 must vanish identically"
        );
        let state = PolicyState::new(&market, 0.2, 0.0, 1.0, 1.0).unwrap();
        let bracket = hedging_bracket(&agent, &coeffs, &market, &state).unwrap();
        assert_eq!(bracket, 0.0);
    }

    #[test]
    fn consumer_bracket_sits_between_terminal_bracket_and_zero() {
        // For gamma < 0 and theta > 0 the averaged bracket is squeezed
        // between its most negative endpoint value and zero.
        let market = reference_market();
        let spec = reference_spec();
        for agent in &spec.consumers {
            let coeffs =
                solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
            for (t, theta_t) in [(0.0, 0.9456), (0.25, 0.4), (0.5, 1.3), (0.9, 0.05)] {
                let state = PolicyState::new(&market, t, theta_t, 2.0, 1.0).unwrap();
                let avg = hedging_bracket(agent, &coeffs, &market, &state).unwrap();
                let (a1, a2, _) = coeffs.interpolate(market.horizon_t - t).unwrap();
                let endpoint = a1 * theta_t + a2;
                assert!(
                    endpoint <= avg + 1e-14 && avg <= 0.0,
                    "gamma {}, t {t}: endpoint {endpoint}, avg {avg}",
                    agent.gamma
                );
            }
        }
    }

    #[test]
    fn wealth_levels_scale_with_the_family_slice_at_interior_times() {
        // Sanity: interior wealth is positive and decreasing toward the
        // horizon for consumers.
        let spec = reference_spec();
        let market = spec.market;
        let agent = spec.consumers[0];
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
        let mut prev = f64::INFINITY;
        for &t in &[0.0, 0.25, 0.5, 0.75, 0.99] {
            let state = PolicyState::new(&market, t, market.theta0, 3.0, 1.0).unwrap();
            let w = wealth_t(&agent, &coeffs, &market, &state).unwrap();
            assert!(w > 0.0 && w < prev, "t = {t}: wealth {w}");
            prev = w;
        }
        let _ = HFamily::build(&spec, 256).unwrap();
    }
}
