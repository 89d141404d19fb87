//! Independent Monte-Carlo estimates for every closed-form quantity, plus
//! numerical checks of the budget and martingale identities the allocation
//! rests on. All expectations are taken under the physical measure with
//! Z-weighting; estimates reduce with a fixed pairwise order so results are
//! bitwise reproducible for a given seed.

use crate::allocation::AllocationResult;
use crate::error::{ModelError, Result};
use crate::model::{AgentSpec, MarketParams, PathEnsemble, ProblemSpec, Role};
use crate::num::{fmt_g17, mean, sample_variance, trapezoid_uniform};
use crate::policy::{self, PolicyState};
use crate::riccati::{self, AffineCoefficients};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct EstimateWithError {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl EstimateWithError {
    /// Reduces per-path values. Antithetic ensembles average each mirrored
    /// pair first so the standard error reflects independent draws only.
    pub fn from_path_values(values: &[f64], ensemble: &PathEnsemble) -> Self {
        if ensemble.antithetic {
            let pairs: Vec<f64> = values
                .chunks_exact(2)
                .map(|c| 0.5 * (c[0] + c[1]))
                .collect();
            let m = mean(&pairs);
            let se = (sample_variance(&pairs) / pairs.len() as f64).sqrt();
            Self {
                mean: m,
                std_error: se,
                n_paths: values.len(),
            }
        } else {
            let m = mean(values);
            let se = (sample_variance(values) / values.len() as f64).sqrt();
            Self {
                mean: m,
                std_error: se,
                n_paths: values.len(),
            }
        }
    }

    /// Deviation from a reference in standard-error units; zero when the
    /// estimate is deterministic.
    pub fn z_score(&self, reference: f64) -> f64 {
        if self.std_error < 1e-13 {
            0.0
        } else {
            (self.mean - reference) / self.std_error
        }
    }

    /// The acceptance rule: three standard errors for statistical
    /// estimates, absolute tolerance 1e-8 for deterministic ones.
    pub fn consistent_with(&self, reference: f64) -> bool {
        if self.std_error < 1e-13 {
            (self.mean - reference).abs() <= 1e-8
        } else {
            self.z_score(reference).abs() <= 3.0
        }
    }
}

/// Per-path budget integrand values for one agent at marginal-utility
/// level y: consumers integrate Z_u D_u c_u over the grid (trapezoid), the
/// terminal agent takes the single horizon term Z_T D_T I(y zeta_T). Both
/// collapse to y^kappa Z^(1+kappa) e^(d u) with d the H decay rate.
fn budget_path_values(
    agent: &AgentSpec,
    market: &MarketParams,
    y: f64,
    ensemble: &PathEnsemble,
) -> Vec<f64> {
    let kappa = agent.kappa();
    let d = riccati::h_decay_rate(agent, market);
    let y_pow = y.powf(kappa);
    let exponent = 1.0 + kappa;
    let width = ensemble.n_steps + 1;
    let decay: Vec<f64> = ensemble.times.iter().map(|&t| (d * t).exp()).collect();

    let mut out = Vec::with_capacity(ensemble.n_paths);
    match agent.role {
        Role::Consumer => {
            let mut row_vals = vec![0.0; width];
            for p in 0..ensemble.n_paths {
                let z_row = ensemble.z_row(p);
                for k in 0..width {
                    row_vals[k] = z_row[k].powf(exponent) * decay[k];
                }
                out.push(y_pow * trapezoid_uniform(&row_vals, ensemble.dt));
            }
        }
        Role::Terminal => {
            let d_t = decay[width - 1];
            for p in 0..ensemble.n_paths {
                out.push(y_pow * ensemble.z_at(p, width - 1).powf(exponent) * d_t);
            }
        }
    }
    out
}

/// Monte-Carlo estimate of the budget function H_agent(y): the expected
/// Z-weighted discounted optimal spending of the agent at marginal-utility
/// level y. The direct sampling counterpart of [`riccati::s_value`] scaled
/// by y^(1/(gamma-1)).
pub fn estimate_h_mc(
    agent: &AgentSpec,
    market: &MarketParams,
    y: f64,
    ensemble: &PathEnsemble,
) -> Result<EstimateWithError> {
    if y <= 0.0 {
        return Err(ModelError::OutOfRange {
            context: "y must be positive",
        });
    }
    let values = budget_path_values(agent, market, y, ensemble);
    Ok(EstimateWithError::from_path_values(&values, ensemble))
}

/// Per-agent and total budget identities of an allocation: each agent's
/// Z-weighted discounted spending must equal its slice x_i, and the sum
/// must equal the endowment.
#[derive(Debug, Clone)]
pub struct BudgetReport {
    /// One (estimate, reference x_i) per agent, terminal last.
    pub per_agent: Vec<(EstimateWithError, f64)>,
    pub total: (EstimateWithError, f64),
}

/// Checks the budget identity for an allocation produced from the same
/// spec: estimates E[Z * discounted spending] per agent against x_i and in
/// total against x. A zero-wealth allocation yields identically zero
/// estimates.
pub fn budget_check(
    spec: &ProblemSpec,
    allocation: &AllocationResult,
    ensemble: &PathEnsemble,
) -> Result<BudgetReport> {
    let agents = spec.agents();
    if spec.total_wealth_x == 0.0 {
        let zero = EstimateWithError {
            mean: 0.0,
            std_error: 0.0,
            n_paths: ensemble.n_paths,
        };
        return Ok(BudgetReport {
            per_agent: agents.iter().map(|_| (zero, 0.0)).collect(),
            total: (zero, 0.0),
        });
    }
    let y = allocation.y;
    let mut per_agent = Vec::with_capacity(agents.len());
    let mut totals = vec![0.0; ensemble.n_paths];
    for (agent, &x_i) in agents.iter().zip(&allocation.x_alloc) {
        let values = budget_path_values(agent, &spec.market, y, ensemble);
        for (t, v) in totals.iter_mut().zip(&values) {
            *t += v;
        }
        per_agent.push((EstimateWithError::from_path_values(&values, ensemble), x_i));
    }
    let total = (
        EstimateWithError::from_path_values(&totals, ensemble),
        spec.total_wealth_x,
    );
    Ok(BudgetReport { per_agent, total })
}

/// Tower-property deviations of one agent's wealth process.
#[derive(Debug, Clone)]
pub struct MartingaleReport {
    /// (checkpoint time, estimate) rows; the reference is x_i for all.
    pub rows: Vec<(f64, EstimateWithError)>,
    pub reference: f64,
    /// max over checkpoints of |estimate - x_i| in standard-error units.
    pub max_z: f64,
}

/// Estimates E\[Z_t (D_t X_t + int_0^t D_s c_s ds)\] at each checkpoint; for
/// the optimal policy this is constant in t and equal to the agent's slice
/// x_i. Checkpoints must sit on the ensemble grid. This exercises the
/// interior-time wealth formula of [`policy::wealth_t`].
pub fn martingale_check(
    agent: &AgentSpec,
    coeffs: &AffineCoefficients,
    market: &MarketParams,
    y: f64,
    x_i: f64,
    ensemble: &PathEnsemble,
    checkpoints: &[f64],
) -> Result<MartingaleReport> {
    let kappa = agent.kappa();
    let d = riccati::h_decay_rate(agent, market);
    let y_pow = y.powf(kappa);

    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut max_z: f64 = 0.0;
    let mut values = vec![0.0; ensemble.n_paths];
    let mut spend = vec![0.0; ensemble.n_steps + 1];
    for &t in checkpoints {
        let node = ensemble.node_of_time(t)?;
        let disc = (-market.r * t).exp();
        for (p, value) in values.iter_mut().enumerate() {
            let z_row = ensemble.z_row(p);
            let theta_t = ensemble.theta_at(p, node);
            let state = PolicyState::new(market, t, theta_t, y, z_row[node])?;
            let wealth = policy::wealth_t_strided(agent, coeffs, market, &state, 8)?;
            let consumed = match agent.role {
                Role::Consumer => {
                    for k in 0..=node {
                        spend[k] = y_pow * z_row[k].powf(kappa) * (d * ensemble.times[k]).exp();
                    }
                    trapezoid_uniform(&spend[..=node], ensemble.dt)
                }
                Role::Terminal => 0.0,
            };
            *value = z_row[node] * (disc * wealth + consumed);
        }
        let est = EstimateWithError::from_path_values(&values, ensemble);
        max_z = max_z.max(if est.std_error < 1e-13 {
            if (est.mean - x_i).abs() <= 1e-8 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            est.z_score(x_i).abs()
        });
        rows.push((t, est));
    }
    Ok(MartingaleReport {
        rows,
        reference: x_i,
        max_z,
    })
}

/// Estimates E\[Z_t\] at the given checkpoints; each must be 1 (the density
/// is a martingale).
pub fn z_mean_checks(
    ensemble: &PathEnsemble,
    checkpoints: &[f64],
) -> Result<Vec<(f64, EstimateWithError)>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let node = ensemble.node_of_time(t)?;
        let values: Vec<f64> = (0..ensemble.n_paths)
            .map(|p| ensemble.z_at(p, node))
            .collect();
        out.push((t, EstimateWithError::from_path_values(&values, ensemble)));
    }
    Ok(out)
}

/// One line of the verification report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub agent: String,
    pub estimate: f64,
    pub std_error: f64,
    pub reference: f64,
    pub z_score: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(check: &str, agent: String, est: EstimateWithError, reference: f64) -> Self {
        Self {
            check: check.to_string(),
            agent,
            estimate: est.mean,
            std_error: est.std_error,
            reference,
            z_score: est.z_score(reference),
            pass: est.consistent_with(reference),
        }
    }
}

pub const REPORT_HEADER: &str = "check_name,agent,estimate,std_error,reference,z_score,pass";

/// Renders report rows as CSV with 17-significant-digit floats.
pub fn report_to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.check,
            r.agent,
            fmt_g17(r.estimate),
            fmt_g17(r.std_error),
            fmt_g17(r.reference),
            fmt_g17(r.z_score),
            r.pass
        ));
    }
    out
}

/// Runs the full verification suite against one ensemble: density
/// martingale means, budget-function oracle per agent, budget identity per
/// agent and in total, and tower-property checkpoints per agent.
///
/// `fixed_y` pins the marginal-utility level (the endowment is then H(y));
/// otherwise the level is inverted from the spec's endowment.
pub fn verification_report(
    spec: &ProblemSpec,
    fixed_y: Option<f64>,
    ensemble: &PathEnsemble,
    n_grid: usize,
) -> Result<Vec<CheckRow>> {
    let market = &spec.market;
    let t_q = market.horizon_t * 0.25;
    let quarter_points = [t_q, 2.0 * t_q, 3.0 * t_q];
    let mut rows = Vec::new();

    for (t, est) in z_mean_checks(ensemble, &[t_q, 2.0 * t_q, 3.0 * t_q, market.horizon_t])? {
        rows.push(CheckRow::new(
            &format!("z_mean_t{t:.4}"),
            "-".into(),
            est,
            1.0,
        ));
    }

    let agents = spec.agents();
    let mut coeffs = Vec::with_capacity(agents.len());
    for a in &agents {
        coeffs.push(riccati::solve_system(
            a.gamma,
            market,
            market.horizon_t,
            n_grid,
        )?);
    }

    let label = |i: usize| {
        if i + 1 == agents.len() {
            "terminal".to_string()
        } else {
            format!("consumer{}", i + 1)
        }
    };

    for (i, (agent, c)) in agents.iter().zip(&coeffs).enumerate() {
        let s = riccati::s_value(c, agent, market)?;
        let est = estimate_h_mc(agent, market, 1.0, ensemble)?;
        rows.push(CheckRow::new("h_oracle_y1", label(i), est, s));
    }

    let allocation = match fixed_y {
        Some(y) => crate::allocation::allocate_fixed_y(spec, y)?,
        None => crate::allocation::allocate(spec)?,
    };
    let mut spec_at_x = spec.clone();
    spec_at_x.total_wealth_x = allocation.x_alloc.iter().sum();

    let budget = budget_check(&spec_at_x, &allocation, ensemble)?;
    for (i, (est, reference)) in budget.per_agent.iter().enumerate() {
        rows.push(CheckRow::new("budget", label(i), *est, *reference));
    }
    rows.push(CheckRow::new(
        "budget",
        "total".into(),
        budget.total.0,
        budget.total.1,
    ));

    for (i, (agent, c)) in agents.iter().zip(&coeffs).enumerate() {
        let report = martingale_check(
            agent,
            c,
            market,
            allocation.y,
            allocation.x_alloc[i],
            ensemble,
            &quarter_points,
        )?;
        for (t, est) in &report.rows {
            rows.push(CheckRow::new(
                &format!("tower_t{t:.4}"),
                label(i),
                *est,
                report.reference,
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::allocate;
    use crate::model::{simulate, simulate_antithetic};
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

    fn reference_spec(x: f64) -> ProblemSpec {
        ProblemSpec {
            market: reference_market(),
            consumers: vec![
                AgentSpec::consumer(-9.0, 0.01),
                AgentSpec::consumer(-3.0, 0.01),
            ],
            terminal: AgentSpec::terminal(-2.0, 0.01),
            total_wealth_x: x,
        }
    }

    #[test]
    fn deterministic_degenerate_market_integrates_exactly() {
        // sigma_theta = 0, r = rho = 0, theta = 0: Z is identically 1 and
        // the consumer budget function is exactly T, with zero noise.
        let market = MarketParams {
            r: 0.0,
            sigma: 0.2,
            lambda_theta: 0.3,
            sigma_theta: 0.0,
            theta_bar: 0.0,
            theta0: 0.0,
            horizon_t: 1.0,
        };
        let agent = AgentSpec::consumer(-1.0, 0.0);
        let ens = simulate(&market, 200, 64, 1).unwrap();
        let est = estimate_h_mc(&agent, &market, 1.0, &ens).unwrap();
        assert!((est.mean - market.horizon_t).abs() < 1e-12);
        assert!(est.std_error < 1e-15);
        assert!(est.consistent_with(market.horizon_t));
    }

    #[test]
    fn estimates_scale_as_a_power_of_y() {
        let market = reference_market();
        let agent = AgentSpec::consumer(-3.0, 0.01);
        let ens = simulate(&market, 2_000, 32, 2).unwrap();
        let base = estimate_h_mc(&agent, &market, 1.0, &ens).unwrap();
        for y in [0.5, 3.0, 10.0] {
            let est = estimate_h_mc(&agent, &market, y, &ens).unwrap();
            let expected = y.powf(agent.kappa());
            assert!(
                (est.mean / base.mean - expected).abs() < 1e-12,
                "y = {y}: ratio {} vs {expected}",
                est.mean / base.mean
            );
        }
    }

    #[test]
    fn standard_error_shrinks_like_root_n() {
        let market = reference_market();
        let agent = AgentSpec::consumer(-3.0, 0.01);
        let small = simulate(&market, 4_000, 16, 3).unwrap();
        let large = simulate(&market, 16_000, 16, 3).unwrap();
        let se_small = estimate_h_mc(&agent, &market, 1.0, &small)
            .unwrap()
            .std_error;
        let se_large = estimate_h_mc(&agent, &market, 1.0, &large)
            .unwrap()
            .std_error;
        let ratio = se_small / se_large;
        assert!(
            (1.4..=2.6).contains(&ratio),
            "quadrupling paths gave SE ratio {ratio}"
        );
    }

    #[test]
    fn density_mean_is_one_at_every_checkpoint() {
        let market = reference_market();
        let ens = simulate_antithetic(&market, 20_000, 64, 4).unwrap();
        for (t, est) in z_mean_checks(&ens, &[0.25, 0.5, 0.75, 1.0]).unwrap() {
            assert!(
                est.consistent_with(1.0),
                "t = {t}: {} +- {}",
                est.mean,
                est.std_error
            );
        }
    }

    #[test]
    fn budget_oracle_matches_the_affine_weights() {
        // The tilted-drift coefficient solution must agree with direct
        // sampling for all three agents.
        let market = reference_market();
        let ens = simulate_antithetic(&market, 30_000, 128, 5).unwrap();
        for agent in reference_spec(1.0).agents() {
            let coeffs =
                solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
            let s = riccati::s_value(&coeffs, &agent, &market).unwrap();
            let est = estimate_h_mc(&agent, &market, 1.0, &ens).unwrap();
            assert!(
                est.consistent_with(s),
                "gamma = {}: estimate {} +- {} vs {}",
                agent.gamma,
                est.mean,
                est.std_error,
                s
            );
        }
    }

    #[test]
    fn pointwise_h_factor_matches_direct_sampling() {
        // H(theta0, tau) at a single offset is E[Z_tau^(1+kappa)] e^(d tau);
        // check the affine evaluation against the raw sample mean.
        let market = reference_market();
        let agent = AgentSpec::consumer(-3.0, 0.01);
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
        let ens = simulate_antithetic(&market, 30_000, 128, 12).unwrap();
        let tau = 0.5;
        let node = ens.node_of_time(tau).unwrap();
        let expo = 1.0 + agent.kappa();
        let decay = (riccati::h_decay_rate(&agent, &market) * tau).exp();
        let values: Vec<f64> = (0..ens.n_paths)
            .map(|p| ens.z_at(p, node).powf(expo) * decay)
            .collect();
        let est = EstimateWithError::from_path_values(&values, &ens);
        let h_val = riccati::h_integrand(&coeffs, &agent, &market, market.theta0, tau).unwrap();
        assert!(
            est.consistent_with(h_val),
            "H({tau}) = {h_val} vs sampled {} +- {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn budget_identity_holds_for_the_optimal_split() {
        let spec = reference_spec(2.0);
        let allocation = allocate(&spec).unwrap();
        let ens = simulate_antithetic(&spec.market, 20_000, 64, 6).unwrap();
        let report = budget_check(&spec, &allocation, &ens).unwrap();
        for (i, (est, x_i)) in report.per_agent.iter().enumerate() {
            assert!(
                est.consistent_with(*x_i),
                "agent {i}: {} vs {x_i}",
                est.mean
            );
        }
        assert!(report.total.0.consistent_with(report.total.1));
    }

    #[test]
    fn zero_wealth_budget_is_identically_zero() {
        let spec = reference_spec(0.0);
        let allocation = allocate(&spec).unwrap();
        let ens = simulate(&spec.market, 100, 8, 7).unwrap();
        let report = budget_check(&spec, &allocation, &ens).unwrap();
        for (est, x_i) in &report.per_agent {
            assert_eq!(est.mean, 0.0);
            assert_eq!(*x_i, 0.0);
        }
    }

    #[test]
    fn tower_property_holds_at_interior_checkpoints() {
        let spec = reference_spec(2.0);
        let allocation = allocate(&spec).unwrap();
        let market = spec.market;
        let ens = simulate_antithetic(&market, 20_000, 64, 8).unwrap();
        for (agent, x_i) in spec.agents().iter().zip(&allocation.x_alloc) {
            let coeffs =
                solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
            let report = martingale_check(
                agent,
                &coeffs,
                &market,
                allocation.y,
                *x_i,
                &ens,
                &[0.25, 0.5, 0.75],
            )
            .unwrap();
            assert!(
                report.max_z <= 3.0,
                "gamma = {}: max z {}",
                agent.gamma,
                report.max_z
            );
        }
    }

    #[test]
    fn tower_checkpoint_at_zero_is_exact_by_construction() {
        let spec = reference_spec(1.0);
        let allocation = allocate(&spec).unwrap();
        let market = spec.market;
        let ens = simulate(&market, 500, 16, 9).unwrap();
        let agent = spec.consumers[0];
        let coeffs = solve_system(agent.gamma, &market, market.horizon_t, DEFAULT_GRID).unwrap();
        let report = martingale_check(
            &agent,
            &coeffs,
            &market,
            allocation.y,
            allocation.x_alloc[0],
            &ens,
            &[0.0],
        )
        .unwrap();
        let (_, est) = report.rows[0];
        assert!(est.std_error < 1e-13, "t = 0 must be deterministic");
        assert!((est.mean - allocation.x_alloc[0]).abs() < 1e-10);
        assert_eq!(report.max_z, 0.0);
    }

    #[test]
    fn degenerate_market_tower_is_deterministic() {
        let market = MarketParams {
            r: 0.0,
            sigma: 0.2,
            lambda_theta: 0.3,
            sigma_theta: 0.0,
            theta_bar: 0.0,
            theta0: 0.0,
            horizon_t: 1.0,
        };
        let spec = ProblemSpec {
            market,
            consumers: vec![AgentSpec::consumer(-1.0, 0.0)],
            terminal: AgentSpec::terminal(-2.0, 0.0),
            total_wealth_x: 1.0,
        };
        let allocation = allocate(&spec).unwrap();
        let ens = simulate(&market, 64, 64, 10).unwrap();
        for (agent, x_i) in spec.agents().iter().zip(&allocation.x_alloc) {
            let coeffs = solve_system(agent.gamma, &market, market.horizon_t, 2048).unwrap();
            let report = martingale_check(
                agent,
                &coeffs,
                &market,
                allocation.y,
                *x_i,
                &ens,
                &[0.25, 0.5],
            )
            .unwrap();
            for (t, est) in &report.rows {
                assert!(est.std_error < 1e-13);
                // Trapezoid time integration of the consumption leg is the
                // only discretization left.
                assert!(
                    (est.mean - x_i).abs() < 1e-4 * x_i.max(1.0),
                    "t = {t}: {} vs {x_i}",
                    est.mean
                );
            }
        }
    }

    #[test]
    fn report_is_well_formed_csv() {
        let spec = reference_spec(1.0);
        let ens = simulate_antithetic(&spec.market, 2_000, 32, 11).unwrap();
        let rows = verification_report(&spec, Some(3.0), &ens, 512).unwrap();
        assert!(rows.len() > 10);
        let csv = report_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        for line in lines {
            assert_eq!(line.split(',').count(), 7, "bad row: {line}");
        }
    }
}
