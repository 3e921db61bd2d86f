//! Domain types for the hydrothermal system and construction of the base
//! stage subproblem: demand balance, per-reservoir water balance over the
//! cascade, and the constant-productivity hydro production function.

use crate::lp::{LinearProgram, LpSolution, RowSense};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct HydroPlant {
    pub id: usize,
    pub name: String,
    /// MW cap on hydro power output.
    pub max_generation: f64,
    /// hm^3 of usable storage; zero for run-of-river plants.
    pub useful_volume: f64,
    /// MWmonth per hm^3 of turbined water.
    pub productivity: f64,
    /// hm^3 per month through the turbines.
    pub max_turbined_outflow: f64,
    pub initial_volume: f64,
    /// Plants whose releases arrive here.
    pub upstream_ids: Vec<usize>,
    /// Reference reservoir whose storage drives this plant's outflow rule.
    pub reference_id: usize,
    /// Whether the plant carries environmental outflow constraints.
    pub ec_flag: bool,
}

#[derive(Debug, Clone)]
pub struct ThermalPlant {
    pub id: usize,
    pub name: String,
    pub max_generation: f64,
    /// currency per MWmonth.
    pub unit_cost: f64,
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub hydros: Vec<HydroPlant>,
    pub thermals: Vec<ThermalPlant>,
    /// Demand per stage, MW; length equals `horizon_months`.
    pub demand: Vec<f64>,
    /// currency per MWmonth of unserved load.
    pub deficit_cost: f64,
    /// currency per m^3/s of minimum-outflow slack.
    pub ec_penalty_min: f64,
    /// currency per m^3/s of maximum-outflow slack.
    pub ec_penalty_max: f64,
    /// Whether the piecewise model's restricted-range slack is priced at
    /// `ec_penalty_max` (true) or left free (false).
    pub price_def_res: bool,
    pub horizon_months: usize,
    pub openings_per_stage: Vec<usize>,
    pub period_hours: f64,
    /// Large outflow value, m^3/s, used to deactivate rule rows.
    pub q_sup: f64,
}

impl SystemConfig {
    /// hm^3 carried by 1 m^3/s over one period.
    pub fn flow_conversion(&self) -> f64 {
        self.period_hours * 3600.0 / 1e6
    }

    pub fn period_seconds(&self) -> f64 {
        self.period_hours * 3600.0
    }

    /// The reported half of the doubled horizon.
    pub fn analysis_months(&self) -> usize {
        self.horizon_months / 2
    }

    /// Calendar month (1..=12) of a 1-based stage index.
    pub fn calendar_month(&self, stage: usize) -> usize {
        (stage - 1) % 12 + 1
    }

    pub fn hydro_index(&self, name: &str) -> Option<usize> {
        self.hydros.iter().position(|h| h.name == name)
    }

    /// Default deactivation value when none is configured: ten times the
    /// largest turbine limit, expressed in m^3/s.
    pub fn default_q_sup(hydros: &[HydroPlant], k: f64) -> f64 {
        let max_q = hydros
            .iter()
            .map(|h| h.max_turbined_outflow / k)
            .fold(0.0_f64, f64::max);
        if max_q > 0.0 {
            10.0 * max_q
        } else {
            10_000.0
        }
    }

    /// Downstream plant of `h`, if any. The cascade is a forest, so there is
    /// at most one.
    pub fn downstream_of(&self, h: usize) -> Option<usize> {
        self.hydros
            .iter()
            .position(|p| p.upstream_ids.contains(&h))
    }
}

/// One sampled inflow realization: incremental inflows per plant, m^3/s.
#[derive(Debug, Clone)]
pub struct InflowScenario {
    pub stage: usize,
    pub opening: usize,
    pub inflows: Vec<f64>,
}

/// The full opening grid: `openings[t-1][a]` is the scenario for stage t.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub stages: Vec<Vec<InflowScenario>>,
}

impl ScenarioSet {
    pub fn get(&self, stage: usize, opening: usize) -> &InflowScenario {
        &self.stages[stage - 1][opening]
    }

    pub fn openings(&self, stage: usize) -> usize {
        self.stages[stage - 1].len()
    }

    /// Checks the (stage, opening, plant) grid is complete and consistent
    /// with the configuration.
    pub fn check_complete(&self, config: &SystemConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.stages.len() != config.horizon_months {
            out.push(Violation::new(
                "scenarios",
                format!(
                    "covers {} stages, horizon has {}",
                    self.stages.len(),
                    config.horizon_months
                ),
            ));
            return out;
        }
        for (ti, stage) in self.stages.iter().enumerate() {
            let expect = config.openings_per_stage[ti];
            if stage.len() != expect {
                out.push(Violation::new(
                    "scenarios",
                    format!("stage {} has {} openings, expected {expect}", ti + 1, stage.len()),
                ));
            }
            for (a, sc) in stage.iter().enumerate() {
                if sc.inflows.len() != config.hydros.len() {
                    out.push(Violation::new(
                        "scenarios",
                        format!("stage {} opening {a} misses plant inflows", ti + 1),
                    ));
                } else if sc.inflows.iter().any(|y| *y < 0.0 || !y.is_finite()) {
                    out.push(Violation::new(
                        "scenarios",
                        format!("stage {} opening {a} has a negative inflow", ti + 1),
                    ));
                }
            }
        }
        out
    }
}

/// The primal decision of one stage, read back from a solved subproblem.
#[derive(Debug, Clone)]
pub struct StageDecision {
    pub turbined: Vec<f64>,
    pub spilled: Vec<f64>,
    pub end_volume: Vec<f64>,
    pub hydro_power: Vec<f64>,
    pub thermal_power: Vec<f64>,
    pub deficit: f64,
    pub ec_slack_min: f64,
    pub ec_slack_max: f64,
    pub ec_slack_res: f64,
}

/// Column indices of the structural variables inside a stage subproblem.
#[derive(Debug, Clone, Default)]
pub struct StageVars {
    pub turbined: Vec<usize>,
    pub spilled: Vec<usize>,
    pub volume: Vec<usize>,
    pub hydro_power: Vec<usize>,
    pub thermal_power: Vec<usize>,
    pub deficit: usize,
    pub theta: Option<usize>,
    pub ec_slack_min: Vec<usize>,
    pub ec_slack_max: Vec<usize>,
    pub ec_slack_res: Vec<usize>,
}

/// One stage/opening subproblem: the LP plus the metadata that links row
/// duals back to the incoming-state dimensions.
#[derive(Debug, Clone)]
pub struct StageSubproblem {
    pub lp: LinearProgram,
    /// For each row, the (hydro, coefficient) pairs with which incoming
    /// volumes enter that row's right-hand side.
    pub state_links: Vec<Vec<(usize, f64)>>,
    /// Columns restricted to {0, 1}.
    pub binaries: Vec<usize>,
    pub vars: StageVars,
    pub demand_row: usize,
    pub stage: usize,
}

impl StageSubproblem {
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: RowSense, rhs: f64) -> usize {
        let r = self.lp.add_row(coeffs, sense, rhs);
        self.state_links.push(Vec::new());
        r
    }

    pub fn add_linked_row(
        &mut self,
        coeffs: Vec<(usize, f64)>,
        sense: RowSense,
        rhs: f64,
        links: Vec<(usize, f64)>,
    ) -> usize {
        let r = self.lp.add_row(coeffs, sense, rhs);
        self.state_links.push(links);
        r
    }

    /// d(objective)/d(incoming volume) per hydro, accumulated from row duals
    /// through the recorded state links. This sum ranges over water-balance
    /// and rule-selection rows alike.
    pub fn state_gradient(&self, duals: &[f64], num_hydros: usize) -> Vec<f64> {
        let mut g = vec![0.0; num_hydros];
        for (row, links) in self.state_links.iter().enumerate() {
            for &(h, coef) in links {
                g[h] += duals[row] * coef;
            }
        }
        g
    }

    pub fn extract_decision(&self, sol: &LpSolution) -> StageDecision {
        let v = &self.vars;
        let take = |ids: &[usize]| ids.iter().map(|&j| sol.primal[j]).collect::<Vec<f64>>();
        StageDecision {
            turbined: take(&v.turbined),
            spilled: take(&v.spilled),
            end_volume: take(&v.volume),
            hydro_power: take(&v.hydro_power),
            thermal_power: take(&v.thermal_power),
            deficit: sol.primal[v.deficit],
            ec_slack_min: v.ec_slack_min.iter().map(|&j| sol.primal[j]).sum(),
            ec_slack_max: v.ec_slack_max.iter().map(|&j| sol.primal[j]).sum(),
            ec_slack_res: v.ec_slack_res.iter().map(|&j| sol.primal[j]).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    pub fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation { entity: entity.into(), rule: rule.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
}

/// Checks every type invariant; returns one entry per violated rule.
/// Violations are data, not failures.
pub fn validate_system(config: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let nh = config.hydros.len();

    for h in &config.hydros {
        if h.initial_volume < 0.0 || h.initial_volume > h.useful_volume {
            out.push(Violation::new(
                &h.name,
                format!(
                    "initial volume {} outside [0, {}]",
                    h.initial_volume, h.useful_volume
                ),
            ));
        }
        if h.productivity < 0.0 {
            out.push(Violation::new(&h.name, "negative productivity"));
        }
        if h.max_generation < 0.0 {
            out.push(Violation::new(&h.name, "negative maximum generation"));
        }
        if h.max_turbined_outflow < 0.0 {
            out.push(Violation::new(&h.name, "negative maximum turbined outflow"));
        }
        for &u in &h.upstream_ids {
            if u >= nh {
                out.push(Violation::new(&h.name, format!("unknown upstream id {u}")));
            }
        }
        if h.ec_flag {
            match config.hydros.get(h.reference_id) {
                None => out.push(Violation::new(&h.name, "reference plant does not exist")),
                Some(r) if r.useful_volume <= 0.0 => out.push(Violation::new(
                    &h.name,
                    format!("reference plant {} has no useful volume", r.name),
                )),
                _ => {}
            }
        }
    }

    // The upstream relation must be a forest: acyclic, and no plant feeding
    // two downstream plants.
    let mut downstream_count = vec![0usize; nh];
    for h in &config.hydros {
        for &u in &h.upstream_ids {
            if u < nh {
                downstream_count[u] += 1;
            }
        }
    }
    for (i, &c) in downstream_count.iter().enumerate() {
        if c > 1 {
            out.push(Violation::new(
                &config.hydros[i].name,
                format!("feeds {c} downstream plants; the cascade must be a forest"),
            ));
        }
    }
    for start in 0..nh {
        // Walk downstream from each plant; a revisit is a cycle.
        let mut seen = vec![false; nh];
        let mut cur = start;
        loop {
            if seen[cur] {
                out.push(Violation::new(
                    &config.hydros[start].name,
                    "cycle in the upstream relation",
                ));
                break;
            }
            seen[cur] = true;
            match config.downstream_of(cur) {
                Some(next) => cur = next,
                None => break,
            }
        }
    }
    // Deduplicate cycle reports (every member of a cycle detects it).
    out.dedup();

    for t in &config.thermals {
        if t.max_generation < 0.0 {
            out.push(Violation::new(&t.name, "negative maximum generation"));
        }
        if t.unit_cost < 0.0 {
            out.push(Violation::new(&t.name, "negative unit cost"));
        }
    }

    if config.horizon_months == 0 || config.horizon_months % 2 != 0 {
        out.push(Violation::new(
            "config",
            format!(
                "horizon of {} months cannot be split into analysis and buffer halves",
                config.horizon_months
            ),
        ));
    }
    if config.demand.len() != config.horizon_months {
        out.push(Violation::new(
            "config",
            format!(
                "demand covers {} months, horizon has {}",
                config.demand.len(),
                config.horizon_months
            ),
        ));
    }
    if config.demand.iter().any(|d| *d < 0.0) {
        out.push(Violation::new("config", "negative demand"));
    }
    if config.openings_per_stage.len() != config.horizon_months {
        out.push(Violation::new(
            "config",
            "openings_per_stage length differs from horizon",
        ));
    } else {
        if config.openings_per_stage[0] != 1 {
            out.push(Violation::new("config", "stage 1 must have exactly 1 opening"));
        }
        if config.openings_per_stage.iter().any(|&n| n == 0) {
            out.push(Violation::new("config", "every stage needs at least one opening"));
        }
    }
    if config.deficit_cost < 0.0 {
        out.push(Violation::new("config", "negative deficit cost"));
    }
    if config.ec_penalty_min < 0.0 || config.ec_penalty_max < 0.0 {
        out.push(Violation::new("config", "negative outflow-slack penalty"));
    }
    if config.q_sup <= 0.0 {
        out.push(Violation::new("config", "q_sup must be positive"));
    }

    out
}

/// Builds the base stage subproblem for one (stage, opening): demand row,
/// per-hydro water balance and production rows, variable bounds. The water
/// balance right-hand side carries the incoming volume with coefficient +1,
/// recorded in `state_links` for cut extraction.
pub fn build_base_stage(
    config: &SystemConfig,
    stage: usize,
    inflow: &InflowScenario,
    incoming: &[f64],
) -> Result<StageSubproblem, ModelError> {
    let nh = config.hydros.len();
    if inflow.inflows.len() != nh {
        return Err(ModelError::Config(format!(
            "inflow scenario has {} plants, system has {nh}",
            inflow.inflows.len()
        )));
    }
    if incoming.len() != nh {
        return Err(ModelError::Config(format!(
            "incoming state has {} dimensions, system has {nh} hydros",
            incoming.len()
        )));
    }
    if stage == 0 || stage > config.horizon_months {
        return Err(ModelError::Config(format!("stage {stage} outside horizon")));
    }
    for (h, plant) in config.hydros.iter().enumerate() {
        if incoming[h] < -1e-6 || incoming[h] > plant.useful_volume + 1e-6 {
            return Err(ModelError::Config(format!(
                "incoming volume {} outside [0, {}] for {}",
                incoming[h], plant.useful_volume, plant.name
            )));
        }
    }

    let k = config.flow_conversion();
    let mut lp = LinearProgram::default();
    let mut vars = StageVars::default();

    for plant in &config.hydros {
        vars.turbined
            .push(lp.add_var(0.0, 0.0, plant.max_turbined_outflow / k));
        vars.spilled.push(lp.add_var(0.0, 0.0, f64::INFINITY));
        vars.volume.push(lp.add_var(0.0, 0.0, plant.useful_volume));
        vars.hydro_power.push(lp.add_var(0.0, 0.0, plant.max_generation));
    }
    for t in &config.thermals {
        vars.thermal_power
            .push(lp.add_var(t.unit_cost, 0.0, t.max_generation));
    }
    vars.deficit = lp.add_var(config.deficit_cost, 0.0, f64::INFINITY);

    let mut sub = StageSubproblem {
        lp,
        state_links: Vec::new(),
        binaries: Vec::new(),
        vars,
        demand_row: 0,
        stage,
    };

    // Demand: sum(pt) + sum(ph) + def = D_t.
    let mut demand_coeffs: Vec<(usize, f64)> = Vec::new();
    for &j in &sub.vars.thermal_power {
        demand_coeffs.push((j, 1.0));
    }
    for &j in &sub.vars.hydro_power {
        demand_coeffs.push((j, 1.0));
    }
    demand_coeffs.push((sub.vars.deficit, 1.0));
    sub.demand_row = sub.add_row(demand_coeffs, RowSense::Eq, config.demand[stage - 1]);

    // Water balance per hydro:
    //   v + K(q + s) - K * sum_upstream(q_i + s_i) = v_in + K*Y.
    for (h, plant) in config.hydros.iter().enumerate() {
        let mut coeffs = vec![
            (sub.vars.volume[h], 1.0),
            (sub.vars.turbined[h], k),
            (sub.vars.spilled[h], k),
        ];
        for &u in &plant.upstream_ids {
            coeffs.push((sub.vars.turbined[u], -k));
            coeffs.push((sub.vars.spilled[u], -k));
        }
        let rhs = incoming[h] + k * inflow.inflows[h];
        sub.add_linked_row(coeffs, RowSense::Eq, rhs, vec![(h, 1.0)]);
    }

    // Production: ph = rho * K * q.
    for (h, plant) in config.hydros.iter().enumerate() {
        sub.add_row(
            vec![
                (sub.vars.hydro_power[h], 1.0),
                (sub.vars.turbined[h], -plant.productivity * k),
            ],
            RowSense::Eq,
            0.0,
        );
    }

    Ok(sub)
}

/// System stored energy: each stored hm^3 valued through its own and all
/// downstream productivities, MWmonth.
pub fn stored_energy(config: &SystemConfig, volumes: &[f64]) -> f64 {
    let mut total = 0.0;
    for (h, _) in config.hydros.iter().enumerate() {
        let mut rho = 0.0;
        let mut cur = Some(h);
        while let Some(i) = cur {
            rho += config.hydros[i].productivity;
            cur = config.downstream_of(i);
        }
        total += volumes[h] * rho;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::solve_lp;

    fn toy_config(hydros: Vec<HydroPlant>, thermals: Vec<ThermalPlant>, demand: f64) -> SystemConfig {
        let horizon = 2;
        let k = 730.0 * 3600.0 / 1e6;
        let q_sup = SystemConfig::default_q_sup(&hydros, k);
        SystemConfig {
            hydros,
            thermals,
            demand: vec![demand; horizon],
            deficit_cost: 1000.0,
            ec_penalty_min: 0.0,
            ec_penalty_max: 0.0,
            price_def_res: true,
            horizon_months: horizon,
            openings_per_stage: vec![1, 1],
            period_hours: 730.0,
            q_sup,
        }
    }

    fn hydro(id: usize, name: &str, vmax: f64, rho: f64) -> HydroPlant {
        HydroPlant {
            id,
            name: name.into(),
            max_generation: 500.0,
            useful_volume: vmax,
            productivity: rho,
            max_turbined_outflow: 1000.0,
            initial_volume: vmax / 2.0,
            upstream_ids: vec![],
            reference_id: id,
            ec_flag: false,
        }
    }

    #[test]
    fn flow_conversion_matches_period() {
        let cfg = toy_config(vec![], vec![], 0.0);
        assert!((cfg.flow_conversion() - 2.628).abs() < 1e-12);
        assert!((cfg.period_seconds() - 2_628_000.0).abs() < 1e-9);
    }

    #[test]
    fn validate_flags_initial_volume() {
        let mut h = hydro(0, "TRES MARIAS", 100.0, 0.2);
        h.initial_volume = 101.0;
        let cfg = toy_config(vec![h], vec![], 0.0);
        let v = validate_system(&cfg);
        assert!(v.iter().any(|v| v.entity == "TRES MARIAS" && v.rule.contains("initial volume")));
    }

    #[test]
    fn validate_flags_self_loop() {
        let mut h = hydro(0, "SOBRADINHO", 100.0, 0.2);
        h.upstream_ids = vec![0];
        let cfg = toy_config(vec![h], vec![], 0.0);
        let v = validate_system(&cfg);
        assert!(v.iter().any(|v| v.rule.contains("cycle")));
    }

    #[test]
    fn empty_system_demand_row_only() {
        let cfg = toy_config(
            vec![],
            vec![ThermalPlant { id: 0, name: "T".into(), max_generation: 10.0, unit_cost: 5.0 }],
            0.0,
        );
        let scen = InflowScenario { stage: 1, opening: 0, inflows: vec![] };
        let sub = build_base_stage(&cfg, 1, &scen, &[]).unwrap();
        assert_eq!(sub.lp.rows.len(), 1);
        let sol = solve_lp(&sub.lp).unwrap();
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn dry_single_hydro_forces_deficit() {
        let cfg = toy_config(vec![hydro(0, "H", 100.0, 0.5)], vec![], 50.0);
        let scen = InflowScenario { stage: 1, opening: 0, inflows: vec![0.0] };
        let sub = build_base_stage(&cfg, 1, &scen, &[0.0]).unwrap();
        assert_eq!(sub.lp.rows.len(), 3);
        let sol = solve_lp(&sub.lp).unwrap();
        let d = sub.extract_decision(&sol);
        assert!(d.turbined[0].abs() < 1e-9);
        assert!(d.spilled[0].abs() < 1e-9);
        assert!(d.hydro_power[0].abs() < 1e-9);
        assert!((d.deficit - 50.0).abs() < 1e-7);
    }

    #[test]
    fn water_balance_holds_in_solution() {
        let mut up = hydro(0, "UP", 200.0, 0.3);
        up.initial_volume = 150.0;
        let mut down = hydro(1, "DOWN", 300.0, 0.4);
        down.upstream_ids = vec![0];
        let cfg = toy_config(
            vec![up, down],
            vec![ThermalPlant { id: 0, name: "T".into(), max_generation: 400.0, unit_cost: 10.0 }],
            120.0,
        );
        let k = cfg.flow_conversion();
        let incoming = [150.0, 100.0];
        let inflows = [20.0, 5.0];
        let scen = InflowScenario { stage: 1, opening: 0, inflows: inflows.to_vec() };
        let sub = build_base_stage(&cfg, 1, &scen, &incoming).unwrap();
        let sol = solve_lp(&sub.lp).unwrap();
        let d = sub.extract_decision(&sol);
        // Conservation per plant to 1e-6 hm^3.
        let r0 = d.end_volume[0] + k * (d.turbined[0] + d.spilled[0]) - incoming[0] - k * inflows[0];
        assert!(r0.abs() < 1e-6, "plant 0 residual {r0}");
        let upflow = d.turbined[0] + d.spilled[0];
        let r1 = d.end_volume[1] + k * (d.turbined[1] + d.spilled[1] - upflow)
            - incoming[1]
            - k * inflows[1];
        assert!(r1.abs() < 1e-6, "plant 1 residual {r1}");
    }

    #[test]
    fn stored_energy_zero_and_single() {
        let cfg = toy_config(vec![hydro(0, "H", 100.0, 0.5)], vec![], 0.0);
        assert_eq!(stored_energy(&cfg, &[0.0]), 0.0);
        assert!((stored_energy(&cfg, &[10.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn stored_energy_chains_downstream() {
        let mut up = hydro(0, "UP", 200.0, 0.3);
        let mut down = hydro(1, "DOWN", 300.0, 0.4);
        down.upstream_ids = vec![0];
        up.initial_volume = 0.0;
        down.initial_volume = 0.0;
        let cfg = toy_config(vec![up, down], vec![], 0.0);
        // UP is valued through both plants.
        assert!((stored_energy(&cfg, &[10.0, 0.0]) - 7.0).abs() < 1e-12);
        assert!((stored_energy(&cfg, &[0.0, 10.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_inflow_count_is_config_error() {
        let cfg = toy_config(vec![hydro(0, "H", 100.0, 0.5)], vec![], 0.0);
        let scen = InflowScenario { stage: 1, opening: 0, inflows: vec![1.0, 2.0] };
        assert!(build_base_stage(&cfg, 1, &scen, &[0.0]).is_err());
    }
}
