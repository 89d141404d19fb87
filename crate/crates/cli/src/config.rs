//! Flat key = value configuration files: '#' comments, UTF-8, indexed agent
//! keys (gamma.1, rho.1, role.1). Unknown keys are rejected.

use std::collections::BTreeMap;

use couple_merton::model::{AgentSpec, MarketParams, ProblemSpec, Role};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub market: MarketParams,
    /// (gamma, rho, role) in index order.
    pub agents: Vec<AgentSpec>,
    pub total_wealth_x: f64,
    /// Pins the marginal value of wealth; x is then derived as H(y).
    pub fixed_y: Option<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

const SCALAR_KEYS: &[&str] = &[
    "r",
    "sigma",
    "lambda_theta",
    "sigma_theta",
    "theta_bar",
    "theta0",
    "T",
    "x",
    "fixed_y",
    "n_paths",
    "n_steps",
    "seed",
];

const AGENT_KEYS: &[&str] = &["gamma", "rho", "role"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let mut scalars: BTreeMap<String, String> = BTreeMap::new();
        let mut agent_fields: BTreeMap<usize, BTreeMap<String, String>> = BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!(
                    "line {}: expected key = value, got `{raw}`",
                    lineno + 1
                ));
            };
            let key = key.trim();
            let value = value.trim().to_string();

            if let Some((base, index)) = key.split_once('.') {
                if !AGENT_KEYS.contains(&base) {
                    return Err(format!("unknown key: {key}"));
                }
                let idx: usize = index
                    .parse()
                    .map_err(|_| format!("bad agent index in key: {key}"))?;
                if idx == 0 {
                    return Err(format!("agent indices start at 1: {key}"));
                }
                let slot = agent_fields.entry(idx).or_default();
                if slot.insert(base.to_string(), value).is_some() {
                    return Err(format!("duplicate key: {key}"));
                }
            } else {
                if !SCALAR_KEYS.contains(&key) {
                    return Err(format!("unknown key: {key}"));
                }
                if scalars.insert(key.to_string(), value).is_some() {
                    return Err(format!("duplicate key: {key}"));
                }
            }
        }

        let num = |key: &str| -> Result<f64, String> {
            scalars
                .get(key)
                .ok_or_else(|| format!("missing required key: {key}"))?
                .parse::<f64>()
                .map_err(|_| format!("key {key}: not a number"))
        };
        let int = |key: &str| -> Result<u64, String> {
            scalars
                .get(key)
                .ok_or_else(|| format!("missing required key: {key}"))?
                .parse::<u64>()
                .map_err(|_| format!("key {key}: not an integer"))
        };

        let market = MarketParams {
            r: num("r")?,
            sigma: num("sigma")?,
            lambda_theta: num("lambda_theta")?,
            sigma_theta: num("sigma_theta")?,
            theta_bar: num("theta_bar")?,
            theta0: num("theta0")?,
            horizon_t: num("T")?,
        };
        let fixed_y = match scalars.get("fixed_y") {
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| "key fixed_y: not a number".to_string())?,
            ),
            None => None,
        };

        if agent_fields.is_empty() {
            return Err("missing required key: gamma.1".into());
        }
        let mut agents = Vec::with_capacity(agent_fields.len());
        for expected in 1..=agent_fields.len() {
            let Some(fields) = agent_fields.get(&expected) else {
                return Err(format!(
                    "agent indices must be contiguous; missing index {expected}"
                ));
            };
            let gamma: f64 = fields
                .get("gamma")
                .ok_or_else(|| format!("missing required key: gamma.{expected}"))?
                .parse()
                .map_err(|_| format!("key gamma.{expected}: not a number"))?;
            let rho: f64 = fields
                .get("rho")
                .ok_or_else(|| format!("missing required key: rho.{expected}"))?
                .parse()
                .map_err(|_| format!("key rho.{expected}: not a number"))?;
            let role = match fields
                .get("role")
                .ok_or_else(|| format!("missing required key: role.{expected}"))?
                .as_str()
            {
                "consumer" => Role::Consumer,
                "terminal" => Role::Terminal,
                other => {
                    return Err(format!(
                        "key role.{expected}: expected consumer or terminal, got {other}"
                    ))
                }
            };
            agents.push(AgentSpec { gamma, rho, role });
        }

        let terminal_count = agents.iter().filter(|a| a.role == Role::Terminal).count();
        if terminal_count != 1 {
            return Err(format!(
                "exactly one terminal agent required, found {terminal_count}"
            ));
        }

        Ok(RunConfig {
            market,
            agents,
            total_wealth_x: num("x")?,
            fixed_y,
            n_paths: int("n_paths")? as usize,
            n_steps: int("n_steps")? as usize,
            seed: int("seed")?,
        })
    }

    /// Splits the agent list into the problem spec's shape (consumers in
    /// index order, the terminal agent separately).
    pub fn to_problem_spec(&self) -> ProblemSpec {
        let consumers: Vec<AgentSpec> = self
            .agents
            .iter()
            .copied()
            .filter(|a| a.role == Role::Consumer)
            .collect();
        let terminal = *self
            .agents
            .iter()
            .find(|a| a.role == Role::Terminal)
            .unwrap();
        ProblemSpec {
            market: self.market,
            consumers,
            terminal,
            total_wealth_x: self.total_wealth_x,
        }
    }
}
