//! The wealth-allocation layer: per-agent budget functions H_i(y) =
//! y^(1/(gamma_i - 1)) s_i, their strictly decreasing sum H, the inverse
//! Y = H^{-1}, the optimal split x_i = H_i(Y(x)), the consumption
//! satisfaction proportion, the couple's relative risk aversion, and the
//! two-way terminal-wealth split.

use crate::error::{ModelError, Result};
use crate::model::{AgentSpec, ProblemSpec};
use crate::riccati::{self, AffineCoefficients, DEFAULT_GRID};

/// One agent's contribution to the aggregate budget function.
#[derive(Debug, Clone, Copy)]
pub struct HMember {
    pub gamma: f64,
    /// Budget weight at unit marginal-utility level, s = H_agent(1).
    pub s: f64,
}

/// The family of per-agent budget functions, consumers first and the
/// terminal agent last. Immutable after construction.
#[derive(Debug, Clone)]
pub struct HFamily {
    pub members: Vec<HMember>,
}

impl HFamily {
    /// Builds the family for a problem spec by solving the affine
    /// coefficient system per agent and integrating the budget weights.
    pub fn build(spec: &ProblemSpec, n_grid: usize) -> Result<HFamily> {
        let mut members = Vec::with_capacity(spec.consumers.len() + 1);
        for agent in spec.agents() {
            let coeffs =
                riccati::solve_system(agent.gamma, &spec.market, spec.market.horizon_t, n_grid)?;
            let s = riccati::s_value(&coeffs, &agent, &spec.market)?;
            members.push(HMember {
                gamma: agent.gamma,
                s,
            });
        }
        Ok(HFamily { members })
    }

    /// The aggregate budget function H(y) = sum_i y^(1/(gamma_i - 1)) s_i,
    /// strictly decreasing on (0, infinity) with limits infinity at 0+ and
    /// 0 at infinity.
    pub fn h_of_y(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Err(ModelError::OutOfRange {
                context: "y must be positive",
            });
        }
        let mut total = 0.0;
        for m in &self.members {
            total += y.powf(1.0 / (m.gamma - 1.0)) * m.s;
        }
        Ok(total)
    }

    /// Analytic derivative H'(y) = sum_i s_i y^(1/(gamma_i - 1) - 1) / (gamma_i - 1).
    pub fn h_prime(&self, y: f64) -> f64 {
        let mut total = 0.0;
        for m in &self.members {
            let k = 1.0 / (m.gamma - 1.0);
            total += m.s * k * y.powf(k - 1.0);
        }
        total
    }

    /// Inverts the aggregate budget function: returns y with H(y) = x.
    ///
    /// Brackets by doubling/halving from y = 1, bisects to relative width
    /// 1e-12, then polishes with at most five Newton steps on the analytic
    /// derivative. Guarantees |H(y) - x| <= 1e-10 max(1, x).
    pub fn invert_y(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Err(ModelError::OutOfRange {
                context: "x must be positive",
            });
        }
        let mut lo = 1.0;
        let mut hi = 1.0;
        // H is decreasing: grow hi until H(hi) < x, shrink lo until H(lo) > x.
        while self.h_of_y(hi)? >= x {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(ModelError::NonFinite {
                    context: "bracket expansion for invert_y",
                });
            }
        }
        while self.h_of_y(lo)? <= x {
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(ModelError::NonFinite {
                    context: "bracket expansion for invert_y",
                });
            }
        }
        for _ in 0..200 {
            if hi - lo <= 1e-12 * 0.5 * (hi + lo) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.h_of_y(mid)? > x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut y = 0.5 * (lo + hi);
        for _ in 0..5 {
            let f = self.h_of_y(y)? - x;
            let df = self.h_prime(y);
            if df == 0.0 {
                break;
            }
            let next = y - f / df;
            if next > 0.0 && next.is_finite() {
                y = next;
            } else {
                break;
            }
        }
        Ok(y)
    }
}

/// The optimal initial split.
#[derive(Debug, Clone)]
pub struct AllocationResult {
    /// Common marginal value of wealth, y = Y(x); NaN sentinel when x = 0.
    pub y: f64,
    /// Per-agent initial wealths in spec order, terminal agent last.
    pub x_alloc: Vec<f64>,
    /// Fraction of wealth financing consumption, (sum of consumer x_i) / x.
    pub csp: f64,
    /// Budget weights s_i used for the split.
    pub s_values: Vec<f64>,
    /// |sum x_i - x|.
    pub residual: f64,
}

/// Splits the total endowment optimally across agents: y = Y(x) and
/// x_i = y^(1/(gamma_i - 1)) s_i. For x = 0 every allocation is zero and
/// y carries a NaN sentinel (no marginal-utility level exists).
pub fn allocate(spec: &ProblemSpec) -> Result<AllocationResult> {
    let family = HFamily::build(spec, DEFAULT_GRID)?;
    allocate_with_family(spec, &family)
}

/// [`allocate`] against a prebuilt family (the family must come from the
/// same spec).
pub fn allocate_with_family(spec: &ProblemSpec, family: &HFamily) -> Result<AllocationResult> {
    let x = spec.total_wealth_x;
    let s_values: Vec<f64> = family.members.iter().map(|m| m.s).collect();
    if x == 0.0 {
        return Ok(AllocationResult {
            y: f64::NAN,
            x_alloc: vec![0.0; family.members.len()],
            csp: 0.0,
            s_values,
            residual: 0.0,
        });
    }
    let y = family.invert_y(x)?;
    finish_allocation(spec, family, y, x, s_values)
}

/// Splits at a fixed marginal-utility level: x = H(y), then the usual
/// per-agent evaluation. Entry point for workflows that pin y rather than
/// the total endowment.
pub fn allocate_fixed_y(spec: &ProblemSpec, y: f64) -> Result<AllocationResult> {
    if y <= 0.0 {
        return Err(ModelError::OutOfRange {
            context: "fixed y must be positive",
        });
    }
    let family = HFamily::build(spec, DEFAULT_GRID)?;
    let x = family.h_of_y(y)?;
    let s_values: Vec<f64> = family.members.iter().map(|m| m.s).collect();
    finish_allocation(spec, &family, y, x, s_values)
}

fn finish_allocation(
    spec: &ProblemSpec,
    family: &HFamily,
    y: f64,
    x: f64,
    s_values: Vec<f64>,
) -> Result<AllocationResult> {
    let x_alloc: Vec<f64> = family
        .members
        .iter()
        .map(|m| y.powf(1.0 / (m.gamma - 1.0)) * m.s)
        .collect();
    let total: f64 = x_alloc.iter().sum();
    let n_consumers = spec.consumers.len();
    let consumer_total: f64 = x_alloc[..n_consumers].iter().sum();
    Ok(AllocationResult {
        y,
        csp: if x > 0.0 { consumer_total / x } else { 0.0 },
        residual: (total - x).abs(),
        x_alloc,
        s_values,
    })
}

/// Consumption satisfaction proportion of the optimal split.
pub fn csp(spec: &ProblemSpec) -> Result<f64> {
    Ok(allocate(spec)?.csp)
}

/// Relative risk aversion of the couple at total wealth x:
///
///   R(x) = sum_i y^(1/(gamma_i-1)) s_i  /  sum_i y^(1/(gamma_i-1)) s_i / (1 - gamma_i),
///
/// with y = Y(x). Collapses to 1 - gamma for a single agent.
pub fn relative_risk_aversion(family: &HFamily, x: f64) -> Result<f64> {
    let y = family.invert_y(x)?;
    let mut numer = 0.0;
    let mut denom = 0.0;
    for m in &family.members {
        let term = y.powf(1.0 / (m.gamma - 1.0)) * m.s;
        numer += term;
        denom += term / (1.0 - m.gamma);
    }
    Ok(numer / denom)
}

/// CSP across a grid of initial market prices of risk, holding the total
/// endowment fixed. Coefficients are reused across the grid (they do not
/// depend on theta0); only the budget weights are reintegrated.
pub fn csp_theta_sensitivity(spec: &ProblemSpec, theta_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let agents = spec.agents();
    let coeffs: Vec<AffineCoefficients> = agents
        .iter()
        .map(|a| riccati::solve_system(a.gamma, &spec.market, spec.market.horizon_t, DEFAULT_GRID))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(theta_grid.len());
    for &theta0 in theta_grid {
        let mut market = spec.market;
        market.theta0 = theta0;
        let members: Vec<HMember> = agents
            .iter()
            .zip(&coeffs)
            .map(|(a, c)| riccati::s_value(c, a, &market).map(|s| HMember { gamma: a.gamma, s }))
            .collect::<Result<_>>()?;
        let family = HFamily { members };
        let mut point_spec = spec.clone();
        point_spec.market = market;
        let result = allocate_with_family(&point_spec, &family)?;
        rows.push((theta0, result.csp));
    }
    Ok(rows)
}

/// Optimal two-way split of a terminal wealth x_t between CRRA agents with
/// utility weights b4 and b5 (their discount factors at the horizon):
/// maximizes b4 U4(eps x) + b5 U5((1 - eps) x) over eps in [0, 1].
///
/// The first-order condition b4 U4'(eps x) = b5 U5'((1 - eps) x) is strictly
/// monotone in eps (Inada conditions guarantee an interior optimum), so a
/// bisection suffices. Returns (eps, attained value).
pub fn terminal_split(
    u4: &AgentSpec,
    u5: &AgentSpec,
    x_t: f64,
    b4: f64,
    b5: f64,
) -> Result<(f64, f64)> {
    if x_t <= 0.0 || b4 < 0.0 || b5 < 0.0 || b4 + b5 == 0.0 {
        return Err(ModelError::OutOfRange {
            context: "terminal_split inputs",
        });
    }
    if b4 == 0.0 {
        return Ok((0.0, b5 * u5.utility(x_t)));
    }
    if b5 == 0.0 {
        return Ok((1.0, b4 * u4.utility(x_t)));
    }
    // log b4 + (gamma4 - 1) log(eps x) - log b5 - (gamma5 - 1) log((1-eps) x),
    // strictly decreasing in eps from +inf to -inf.
    let foc = |eps: f64| {
        b4.ln() + (u4.gamma - 1.0) * (eps * x_t).ln()
            - b5.ln()
            - (u5.gamma - 1.0) * ((1.0 - eps) * x_t).ln()
    };
    let mut lo = 1e-16;
    let mut hi = 1.0 - 1e-16;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let eps = 0.5 * (lo + hi);
    let value = b4 * u4.utility(eps * x_t) + b5 * u5.utility((1.0 - eps) * x_t);
    Ok((eps, value))
}
