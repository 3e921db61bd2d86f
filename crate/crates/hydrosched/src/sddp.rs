//! The decomposition engine: policy over monthly stages, forward trajectory
//! sampling, backward cut generation, the Zinf lower bound, binary state
//! expansion, and Monte-Carlo policy simulation.

use crate::ec::{self, EcError, PiecewiseSegments, RuleMap};
use crate::lp::{self, LpError, LpStatus, MilpOptions, MilpStatus};
use crate::model::{
    self, build_base_stage, stored_energy, ModelError, ScenarioSet, StageDecision,
    StageSubproblem, SystemConfig,
};
use crate::lp::RowSense;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

/// Cuts beyond this pool size are activated lazily per solve.
const ACTIVE_CUT_SEED: usize = 64;
/// Violated cuts added per re-solve round.
const CUT_BATCH: usize = 32;
/// Relative tolerance for declaring a cut satisfied.
const CUT_VIOLATION_TOL: f64 = 1e-7;

/// An affine lower bound on a stage's expected cost-to-go.
#[derive(Debug, Clone)]
pub struct Cut {
    pub stage: usize,
    pub intercept: f64,
    /// currency per hm^3, one entry per hydro state dimension.
    pub gradient: Vec<f64>,
    pub iteration: usize,
}

impl Cut {
    pub fn evaluate(&self, state: &[f64]) -> f64 {
        self.intercept
            + self
                .gradient
                .iter()
                .zip(state)
                .map(|(g, x)| g * x)
                .sum::<f64>()
    }
}

/// Per-stage cut pools. `pool_for_stage(t)` approximates the expected cost
/// of stages t..NT as a function of the state entering stage t; the pool
/// past the horizon stays empty, matching a zero terminal value.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pools: Vec<Vec<Cut>>,
    horizon: usize,
}

impl ValueFunction {
    pub fn new(horizon: usize) -> Self {
        ValueFunction {
            pools: vec![Vec::new(); horizon + 2],
            horizon,
        }
    }

    pub fn pool_for_stage(&self, stage: usize) -> &[Cut] {
        &self.pools[stage]
    }

    pub fn push_cut(&mut self, cut: Cut) {
        let stage = cut.stage;
        self.pools[stage].push(cut);
    }

    /// Max over cuts; zero on an empty pool.
    pub fn evaluate(&self, stage: usize, state: &[f64]) -> f64 {
        self.pools[stage]
            .iter()
            .map(|c| c.evaluate(state))
            .fold(0.0_f64, f64::max)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn total_cuts(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Pure linear stages.
    Sddp,
    /// Integral forward decisions, relaxed backward duals.
    Isddp,
    /// Binary-expanded (grid) states with binaries-fixed dual extraction.
    Sddip,
}

#[derive(Debug, Clone)]
pub struct TrainingOptions {
    pub iterations: usize,
    pub mode: SolveMode,
    /// State grid resolution in sddip mode.
    pub expansion_bits: u32,
    pub seed: u64,
    /// Forward trajectories per iteration.
    pub forward_series: usize,
    /// Solve forward stages relaxed even when binaries are present.
    pub relaxed_forward: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            iterations: 400,
            mode: SolveMode::Sddp,
            expansion_bits: 4,
            seed: 0,
            forward_series: 1,
            relaxed_forward: false,
        }
    }
}

/// Maps a discretization step count onto expansion bits.
pub fn steps_to_bits(steps: usize) -> u32 {
    (steps.max(2) as f64).log2().ceil() as u32
}

/// Binary expansion of a volume on the grid with step vmax/(2^bits - 1).
pub fn binary_expand(volume: f64, vmax: f64, bits: u32) -> Result<Vec<u8>, SddpError> {
    if !(0.0..=vmax + 1e-9).contains(&volume) && vmax > 0.0 {
        return Err(SddpError::OutOfRange(volume, vmax));
    }
    let levels = (1u64 << bits) - 1;
    if vmax <= 0.0 || levels == 0 {
        return Ok(vec![0; bits as usize]);
    }
    let step = vmax / levels as f64;
    let k = ((volume / step).round() as u64).min(levels);
    Ok((0..bits).map(|b| ((k >> b) & 1) as u8).collect())
}

/// Inverse of [`binary_expand`]; exact on grid points.
pub fn reconstruct(code: &[u8], vmax: f64) -> f64 {
    let bits = code.len() as u32;
    let levels = (1u64 << bits) - 1;
    if vmax <= 0.0 || levels == 0 {
        return 0.0;
    }
    let step = vmax / levels as f64;
    let k: u64 = code
        .iter()
        .enumerate()
        .map(|(b, &v)| (v as u64) << b)
        .sum();
    k as f64 * step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcVariant {
    None,
    IntervalSelection,
    PiecewiseLinear,
}

#[derive(Debug, Error)]
pub enum SddpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rule(#[from] EcError),
    #[error(transparent)]
    Solver(#[from] LpError),
    #[error("stage {stage} subproblem infeasible; complete recourse is broken")]
    StageInfeasible { stage: usize },
    #[error("stage {stage} subproblem unbounded")]
    StageUnbounded { stage: usize },
    #[error("volume {0} outside [0, {1}]")]
    OutOfRange(f64, f64),
}

/// One solved stage/opening.
#[derive(Debug, Clone)]
pub struct StageSolution {
    /// Immediate cost plus the cost-to-go term.
    pub objective: f64,
    /// Immediate cost only.
    pub stage_cost: f64,
    pub theta: f64,
    pub decision: StageDecision,
    /// d(objective)/d(incoming volume) per hydro.
    pub gradient: Vec<f64>,
    /// Dual of the demand row, currency per MWmonth.
    pub moc: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// states[0] is the initial state; states[t] the end volumes of stage t.
    pub states: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    pub objectives: Vec<f64>,
    pub decisions: Vec<StageDecision>,
    pub mocs: Vec<f64>,
    pub openings: Vec<usize>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub zinf: f64,
}

#[derive(Debug, Clone)]
pub struct SeriesStageRecord {
    pub stage: usize,
    pub cost: f64,
    pub volumes: Vec<f64>,
    pub hydro_mw: f64,
    pub thermal_mw: f64,
    pub deficit_mw: f64,
    pub moc: f64,
    pub sse: f64,
}

#[derive(Debug, Clone)]
pub struct StageSummary {
    pub stage: usize,
    pub moc_mean: f64,
    pub moc_q25: f64,
    pub moc_q50: f64,
    pub moc_q75: f64,
    pub sse_mean: f64,
    pub sse_q25: f64,
    pub sse_q50: f64,
    pub sse_q75: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub series: Vec<Vec<SeriesStageRecord>>,
    /// Aggregates over the analysis window only.
    pub summary: Vec<StageSummary>,
    pub mean_total_cost: f64,
}

/// Builds and solves stage subproblems for one configured system, variant
/// and scenario set. Immutable once constructed; safe to share across
/// worker threads.
pub struct SddpEngine<'a> {
    pub config: &'a SystemConfig,
    pub scenarios: &'a ScenarioSet,
    pub variant: EcVariant,
    rules: Option<&'a RuleMap>,
    /// Fitted envelopes per (plant, calendar month), piecewise variant only.
    segments: BTreeMap<(usize, usize), PiecewiseSegments>,
}

impl<'a> SddpEngine<'a> {
    pub fn new(
        config: &'a SystemConfig,
        scenarios: &'a ScenarioSet,
        variant: EcVariant,
        rules: Option<&'a RuleMap>,
    ) -> Result<Self, SddpError> {
        let mut segments = BTreeMap::new();
        if variant == EcVariant::PiecewiseLinear {
            let rules = rules.expect("piecewise variant needs rule tables");
            let k = config.flow_conversion();
            for (&plant, rule) in rules {
                if !config.hydros[plant].ec_flag {
                    continue;
                }
                let ref_vmax = config.hydros[config.hydros[plant].reference_id].useful_volume;
                let own_vmax = config.hydros[plant].useful_volume;
                for row in &rule.table.rows {
                    let segs = ec::fit_concave_segments(
                        row,
                        &rule.table,
                        &rule.ranges,
                        ref_vmax,
                        own_vmax,
                        k,
                    )?;
                    segments.insert((plant, row.month), segs);
                }
            }
        }
        Ok(SddpEngine {
            config,
            scenarios,
            variant,
            rules,
            segments,
        })
    }

    fn ec_plants(&self) -> Vec<usize> {
        match self.variant {
            EcVariant::None => Vec::new(),
            _ => self
                .config
                .hydros
                .iter()
                .enumerate()
                .filter(|(_, h)| h.ec_flag)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Base rows, rule rows per variant, and the cost-to-go variable.
    fn build_stage(
        &self,
        stage: usize,
        opening: usize,
        incoming: &[f64],
    ) -> Result<StageSubproblem, SddpError> {
        let inflow = self.scenarios.get(stage, opening);
        let mut sub = build_base_stage(self.config, stage, inflow, incoming)?;
        let month = self.config.calendar_month(stage);
        for plant in self.ec_plants() {
            let rule = self
                .rules
                .and_then(|r| r.get(&plant))
                .ok_or_else(|| EcError::BadRule(format!("no rule table for plant {plant}")))?;
            match self.variant {
                EcVariant::IntervalSelection => {
                    ec::add_variant_a(&mut sub, self.config, plant, rule, month, incoming)?;
                }
                EcVariant::PiecewiseLinear => {
                    let segs = &self.segments[&(plant, month)];
                    ec::add_variant_b(&mut sub, self.config, plant, segs, rule, month, incoming)?;
                }
                EcVariant::None => {}
            }
        }
        let theta = sub.lp.add_var(1.0, 0.0, f64::INFINITY);
        sub.vars.theta = Some(theta);
        Ok(sub)
    }

    /// Solves one stage with lazily activated cuts. `integral` enforces the
    /// 0-1 markings; otherwise they are handled as continuous.
    fn solve_stage(
        &self,
        stage: usize,
        opening: usize,
        incoming: &[f64],
        pool: &[Cut],
        integral: bool,
    ) -> Result<StageSolution, SddpError> {
        let mut sub = self.build_stage(stage, opening, incoming)?;
        let theta = sub.vars.theta.unwrap();
        let nh = self.config.hydros.len();

        // Seed the working set with the cuts that dominate at the incoming
        // state; the rest activate on violation.
        let mut active = vec![false; pool.len()];
        if pool.len() <= ACTIVE_CUT_SEED {
            active.iter_mut().for_each(|a| *a = true);
        } else {
            let mut scored: Vec<(usize, f64)> = pool
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.evaluate(incoming)))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (i, _) in scored.into_iter().take(ACTIVE_CUT_SEED) {
                active[i] = true;
            }
        }
        let add_cut_row = |sub: &mut StageSubproblem, cut: &Cut| {
            let mut coeffs = vec![(theta, 1.0)];
            for (h, &g) in cut.gradient.iter().enumerate() {
                coeffs.push((sub.vars.volume[h], -g));
            }
            sub.add_row(coeffs, RowSense::Ge, cut.intercept);
        };
        for (i, cut) in pool.iter().enumerate() {
            if active[i] {
                add_cut_row(&mut sub, cut);
            }
        }

        loop {
            let use_milp = integral && !sub.binaries.is_empty();
            let (primal, duals, objective, status_ok) = if use_milp {
                let sol = lp::solve_milp(&sub.lp, &sub.binaries, &MilpOptions::default())?;
                match sol.status {
                    MilpStatus::Infeasible => (Vec::new(), Vec::new(), 0.0, false),
                    _ => (sol.primal, sol.duals, sol.objective, true),
                }
            } else {
                let sol = lp::solve_lp(&sub.lp)?;
                match sol.status {
                    LpStatus::Infeasible => (Vec::new(), Vec::new(), 0.0, false),
                    LpStatus::Unbounded => return Err(SddpError::StageUnbounded { stage }),
                    LpStatus::Optimal => (sol.primal, sol.duals, sol.objective, true),
                }
            };
            if !status_ok {
                return Err(SddpError::StageInfeasible { stage });
            }

            // Activate any pool cut the trial point violates.
            let end: Vec<f64> = sub.vars.volume.iter().map(|&j| primal[j]).collect();
            let theta_val = primal[theta];
            let mut violated: Vec<(usize, f64)> = pool
                .iter()
                .enumerate()
                .filter(|(i, _)| !active[*i])
                .map(|(i, c)| (i, c.evaluate(&end) - theta_val))
                .filter(|(_, v)| *v > CUT_VIOLATION_TOL * (1.0 + theta_val.abs()))
                .collect();
            if violated.is_empty() {
                let gradient = sub.state_gradient(&duals, nh);
                let decision = {
                    let sol = lp::LpSolution {
                        status: LpStatus::Optimal,
                        primal: primal.clone(),
                        duals: duals.clone(),
                        reduced_costs: Vec::new(),
                        objective,
                        duality_gap: 0.0,
                    };
                    sub.extract_decision(&sol)
                };
                return Ok(StageSolution {
                    objective,
                    stage_cost: objective - theta_val,
                    theta: theta_val,
                    decision,
                    gradient,
                    moc: duals[sub.demand_row],
                });
            }
            violated.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (i, _) in violated.into_iter().take(CUT_BATCH) {
                active[i] = true;
                add_cut_row(&mut sub, &pool[i]);
            }
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        self.config.hydros.iter().map(|h| h.initial_volume).collect()
    }

    /// Snaps a state onto the binary-expansion grid.
    fn snap_state(&self, state: &mut [f64], bits: u32) {
        for (h, plant) in self.config.hydros.iter().enumerate() {
            let code = binary_expand(
                state[h].clamp(0.0, plant.useful_volume),
                plant.useful_volume,
                bits,
            )
            .expect("clamped volume is in range");
            state[h] = reconstruct(&code, plant.useful_volume);
        }
    }

    /// Samples one trajectory under the current pools. Decisions are
    /// integral when the mode asks for it; in grid mode end-of-stage states
    /// are rounded to the expansion grid before flowing on.
    pub fn forward_pass(
        &self,
        vf: &ValueFunction,
        options: &TrainingOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory, SddpError> {
        let nt = self.config.horizon_months;
        let integral = match options.mode {
            SolveMode::Sddp => false,
            SolveMode::Isddp => !options.relaxed_forward,
            SolveMode::Sddip => !options.relaxed_forward,
        };
        let mut traj = Trajectory {
            states: vec![self.initial_state()],
            stage_costs: Vec::with_capacity(nt),
            objectives: Vec::with_capacity(nt),
            decisions: Vec::with_capacity(nt),
            mocs: Vec::with_capacity(nt),
            openings: Vec::with_capacity(nt),
        };
        if options.mode == SolveMode::Sddip {
            let x0 = traj.states.last_mut().unwrap();
            self.snap_state(x0, options.expansion_bits);
        }
        for stage in 1..=nt {
            let n_open = self.scenarios.openings(stage);
            let opening = if n_open == 1 { 0 } else { rng.gen_range(0..n_open) };
            let incoming = traj.states.last().unwrap().clone();
            let sol = self.solve_stage(
                stage,
                opening,
                &incoming,
                vf.pool_for_stage(stage + 1),
                integral,
            )?;
            let mut end = sol.decision.end_volume.clone();
            if options.mode == SolveMode::Sddip {
                self.snap_state(&mut end, options.expansion_bits);
            }
            traj.states.push(end);
            traj.stage_costs.push(sol.stage_cost);
            traj.objectives.push(sol.objective);
            traj.mocs.push(sol.moc);
            traj.decisions.push(sol.decision);
            traj.openings.push(opening);
        }
        Ok(traj)
    }

    /// Sweeps the horizon backwards, averaging the opening solves of each
    /// stage into one new cut for the trajectory's incoming state.
    pub fn backward_pass(
        &self,
        vf: &mut ValueFunction,
        traj: &Trajectory,
        options: &TrainingOptions,
        iteration: usize,
    ) -> Result<(), SddpError> {
        let nt = self.config.horizon_months;
        let integral_duals = options.mode == SolveMode::Sddip;
        for stage in (2..=nt).rev() {
            let x = &traj.states[stage - 1];
            let pool = vf.pool_for_stage(stage + 1).to_vec();
            let n_open = self.scenarios.openings(stage);
            let results: Result<Vec<(f64, Vec<f64>)>, SddpError> = (0..n_open)
                .into_par_iter()
                .map(|a| {
                    let sol = self.solve_stage(stage, a, x, &pool, integral_duals)?;
                    Ok((sol.objective, sol.gradient))
                })
                .collect();
            let results = results?;
            let nh = self.config.hydros.len();
            let inv = 1.0 / n_open as f64;
            let mut phi = 0.0;
            let mut grad = vec![0.0; nh];
            for (obj, g) in &results {
                phi += obj * inv;
                for (h, gh) in g.iter().enumerate() {
                    grad[h] += gh * inv;
                }
            }
            let intercept = phi - grad.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>();
            vf.push_cut(Cut {
                stage,
                intercept,
                gradient: grad,
                iteration,
            });
        }
        Ok(())
    }

    /// First-stage optimal value under the current pools.
    pub fn zinf(&self, vf: &ValueFunction, options: &TrainingOptions) -> Result<f64, SddpError> {
        let integral = options.mode != SolveMode::Sddp && !options.relaxed_forward;
        let x0 = {
            let mut x = self.initial_state();
            if options.mode == SolveMode::Sddip {
                self.snap_state(&mut x, options.expansion_bits);
            }
            x
        };
        let sol = self.solve_stage(1, 0, &x0, vf.pool_for_stage(2), integral)?;
        Ok(sol.objective)
    }

    /// Runs `iterations` forward/backward cycles and logs Zinf after each.
    pub fn train(
        &self,
        options: &TrainingOptions,
    ) -> Result<(ValueFunction, Vec<IterationRecord>), SddpError> {
        let nt = self.config.horizon_months;
        let mut vf = ValueFunction::new(nt);
        let mut log = Vec::with_capacity(options.iterations);
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(1);
        for it in 1..=options.iterations {
            for _ in 0..options.forward_series.max(1) {
                let traj = self.forward_pass(&vf, options, &mut rng)?;
                self.backward_pass(&mut vf, &traj, options, it)?;
            }
            let zinf = self.zinf(&vf, options)?;
            log.push(IterationRecord { iteration: it, zinf });
        }
        Ok((vf, log))
    }

    /// Monte-Carlo policy evaluation under frozen pools.
    pub fn simulate(
        &self,
        vf: &ValueFunction,
        options: &TrainingOptions,
        n_series: usize,
    ) -> Result<SimulationResult, SddpError> {
        let nt = self.config.horizon_months;
        let analysis = self.config.analysis_months();
        let series: Result<Vec<Vec<SeriesStageRecord>>, SddpError> = (0..n_series)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(1000 + i as u64);
                // Simulation evaluates the policy on continuous states even
                // for grid-trained pools.
                let mut sim_opts = options.clone();
                if sim_opts.mode == SolveMode::Sddip {
                    sim_opts.mode = SolveMode::Isddp;
                }
                let traj = self.forward_pass(vf, &sim_opts, &mut rng)?;
                let mut records = Vec::with_capacity(nt);
                for stage in 1..=nt {
                    let volumes = traj.states[stage].clone();
                    let d = &traj.decisions[stage - 1];
                    records.push(SeriesStageRecord {
                        stage,
                        cost: traj.stage_costs[stage - 1],
                        hydro_mw: d.hydro_power.iter().sum(),
                        thermal_mw: d.thermal_power.iter().sum(),
                        deficit_mw: d.deficit,
                        moc: traj.mocs[stage - 1],
                        sse: stored_energy(self.config, &volumes),
                        volumes,
                    });
                }
                Ok(records)
            })
            .collect();
        let series = series?;

        let mut summary = Vec::with_capacity(analysis);
        for stage in 1..=analysis {
            let mut mocs: Vec<f64> = series.iter().map(|s| s[stage - 1].moc).collect();
            let mut sses: Vec<f64> = series.iter().map(|s| s[stage - 1].sse).collect();
            mocs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sses.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            summary.push(StageSummary {
                stage,
                moc_mean: mean(&mocs),
                moc_q25: quantile(&mocs, 0.25),
                moc_q50: quantile(&mocs, 0.5),
                moc_q75: quantile(&mocs, 0.75),
                sse_mean: mean(&sses),
                sse_q25: quantile(&sses, 0.25),
                sse_q50: quantile(&sses, 0.5),
                sse_q75: quantile(&sses, 0.75),
            });
        }
        let mean_total_cost = series
            .iter()
            .map(|s| s.iter().map(|r| r.cost).sum::<f64>())
            .sum::<f64>()
            / n_series.max(1) as f64;
        Ok(SimulationResult {
            series,
            summary,
            mean_total_cost,
        })
    }
}

/// Nearest-rank quantile of presorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64) * q).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

/// System stored energy at full reservoirs, the SSE upper bound.
pub fn max_stored_energy(config: &SystemConfig) -> f64 {
    let full: Vec<f64> = config.hydros.iter().map(|h| h.useful_volume).collect();
    model::stored_energy(config, &full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HydroPlant, InflowScenario, ThermalPlant};

    fn single_hydro_config(horizon: usize, demand: f64) -> SystemConfig {
        let hydros = vec![HydroPlant {
            id: 0,
            name: "H".into(),
            max_generation: 300.0,
            useful_volume: 100.0,
            productivity: 0.5,
            max_turbined_outflow: 500.0,
            initial_volume: 50.0,
            upstream_ids: vec![],
            reference_id: 0,
            ec_flag: false,
        }];
        let k = 730.0 * 3600.0 / 1e6;
        let q_sup = SystemConfig::default_q_sup(&hydros, k);
        SystemConfig {
            hydros,
            thermals: vec![ThermalPlant {
                id: 0,
                name: "T".into(),
                max_generation: 400.0,
                unit_cost: 10.0,
            }],
            demand: vec![demand; horizon],
            deficit_cost: 500.0,
            ec_penalty_min: 0.0,
            ec_penalty_max: 0.0,
            price_def_res: true,
            horizon_months: horizon,
            openings_per_stage: {
                let mut v = vec![2; horizon];
                v[0] = 1;
                v
            },
            period_hours: 730.0,
            q_sup,
        }
    }

    fn scenario_set(config: &SystemConfig, per_stage: Vec<Vec<f64>>) -> ScenarioSet {
        let stages = per_stage
            .into_iter()
            .enumerate()
            .map(|(t, inflows)| {
                inflows
                    .into_iter()
                    .enumerate()
                    .map(|(a, y)| InflowScenario {
                        stage: t + 1,
                        opening: a,
                        inflows: vec![y; config.hydros.len()],
                    })
                    .collect()
            })
            .collect();
        ScenarioSet { stages }
    }

    #[test]
    fn binary_expansion_grid_points() {
        assert_eq!(binary_expand(0.0, 100.0, 5).unwrap(), vec![0; 5]);
        assert_eq!(binary_expand(100.0, 100.0, 5).unwrap(), vec![1; 5]);
        assert!(binary_expand(101.0, 100.0, 5).is_err());
        let step = 100.0 / 31.0;
        let code = binary_expand(3.0 * step, 100.0, 5).unwrap();
        assert!((reconstruct(&code, 100.0) - 3.0 * step).abs() < 1e-12);
    }

    #[test]
    fn binary_expansion_round_trip_error_bound() {
        let vmax = 250.0;
        for bits in [1u32, 4, 7] {
            let half_step = vmax / ((1u64 << (bits + 1)) - 2) as f64;
            for i in 0..1000 {
                let v = vmax * (i as f64 / 999.0);
                let code = binary_expand(v, vmax, bits).unwrap();
                let back = reconstruct(&code, vmax);
                assert!(
                    (back - v).abs() <= half_step + 1e-9,
                    "bits {bits}: {v} -> {back}"
                );
            }
        }
    }

    #[test]
    fn steps_map_to_bits() {
        assert_eq!(steps_to_bits(10), 4);
        assert_eq!(steps_to_bits(50), 6);
        assert_eq!(steps_to_bits(100), 7);
    }

    #[test]
    fn forward_single_stage_matches_direct_solve() {
        let mut config = single_hydro_config(2, 100.0);
        config.horizon_months = 2;
        let scens = scenario_set(&config, vec![vec![30.0], vec![30.0, 10.0]]);
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let vf = ValueFunction::new(2);
        let opts = TrainingOptions { iterations: 1, seed: 7, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let traj = engine.forward_pass(&vf, &opts, &mut rng).unwrap();
        // Empty pools: the stage-1 objective equals the stage-1 solve alone.
        let direct = engine
            .solve_stage(1, 0, &engine.initial_state(), &[], false)
            .unwrap();
        assert!((traj.objectives[0] - direct.objective).abs() < 1e-9);
        assert!(traj.states[1][0] <= 100.0 + 1e-9);
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let config = single_hydro_config(2, 0.0);
        let scens = scenario_set(&config, vec![vec![10.0], vec![10.0, 0.0]]);
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let opts = TrainingOptions { iterations: 3, seed: 1, ..Default::default() };
        let (vf, log) = engine.train(&opts).unwrap();
        assert!(log.last().unwrap().zinf.abs() < 1e-7);
        let sim = engine.simulate(&vf, &opts, 4).unwrap();
        assert!(sim.mean_total_cost.abs() < 1e-7);
        for s in &sim.series {
            for r in s {
                assert!(r.moc.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn terminal_cut_supports_expansion_point() {
        // Single opening at the terminal stage: the cut generated there
        // reproduces that stage's optimum exactly at the expansion state.
        let config = single_hydro_config(2, 100.0);
        let scens = scenario_set(&config, vec![vec![20.0], vec![15.0, 15.0]]);
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let opts = TrainingOptions { iterations: 1, seed: 3, ..Default::default() };
        let mut vf = ValueFunction::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj = engine.forward_pass(&vf, &opts, &mut rng).unwrap();
        engine.backward_pass(&mut vf, &traj, &opts, 1).unwrap();
        let x = &traj.states[1];
        let expected = engine.solve_stage(2, 0, x, &[], false).unwrap().objective;
        let cut_value = vf.evaluate(2, x);
        assert!(
            (cut_value - expected).abs() <= 1e-7 * (1.0 + expected.abs()),
            "cut {cut_value} vs stage optimum {expected}"
        );
    }

    #[test]
    fn zinf_monotone_on_toy() {
        let config = single_hydro_config(4, 120.0);
        let scens = scenario_set(
            &config,
            vec![vec![25.0], vec![40.0, 5.0], vec![40.0, 5.0], vec![40.0, 5.0]],
        );
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let opts = TrainingOptions { iterations: 15, seed: 11, ..Default::default() };
        let (_, log) = engine.train(&opts).unwrap();
        for w in log.windows(2) {
            assert!(
                w[1].zinf >= w[0].zinf - 1e-6 * (1.0 + w[0].zinf.abs()),
                "zinf decreased: {} -> {}",
                w[0].zinf,
                w[1].zinf
            );
        }
    }

    #[test]
    fn deterministic_two_stage_converges_to_exact_value() {
        // One opening everywhere: SDDP must reach the flattened LP optimum.
        let config = single_hydro_config(2, 100.0);
        let mut config = config;
        config.openings_per_stage = vec![1, 1];
        let scens = scenario_set(&config, vec![vec![20.0], vec![5.0]]);
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let opts = TrainingOptions { iterations: 10, seed: 5, ..Default::default() };
        let (_, log) = engine.train(&opts).unwrap();
        // Exact two-stage LP, solved extensively.
        let k = config.flow_conversion();
        let mut lp = crate::lp::LinearProgram::default();
        let q1 = lp.add_var(0.0, 0.0, 500.0 / k);
        let s1 = lp.add_var(0.0, 0.0, f64::INFINITY);
        let v1 = lp.add_var(0.0, 0.0, 100.0);
        let ph1 = lp.add_var(0.0, 0.0, 300.0);
        let pt1 = lp.add_var(10.0, 0.0, 400.0);
        let d1 = lp.add_var(500.0, 0.0, f64::INFINITY);
        let q2 = lp.add_var(0.0, 0.0, 500.0 / k);
        let s2 = lp.add_var(0.0, 0.0, f64::INFINITY);
        let v2 = lp.add_var(0.0, 0.0, 100.0);
        let ph2 = lp.add_var(0.0, 0.0, 300.0);
        let pt2 = lp.add_var(10.0, 0.0, 400.0);
        let d2 = lp.add_var(500.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(pt1, 1.0), (ph1, 1.0), (d1, 1.0)], RowSense::Eq, 100.0);
        lp.add_row(vec![(pt2, 1.0), (ph2, 1.0), (d2, 1.0)], RowSense::Eq, 100.0);
        lp.add_row(
            vec![(v1, 1.0), (q1, k), (s1, k)],
            RowSense::Eq,
            50.0 + k * 20.0,
        );
        lp.add_row(
            vec![(v2, 1.0), (q2, k), (s2, k), (v1, -1.0)],
            RowSense::Eq,
            k * 5.0,
        );
        lp.add_row(vec![(ph1, 1.0), (q1, -0.5 * k)], RowSense::Eq, 0.0);
        lp.add_row(vec![(ph2, 1.0), (q2, -0.5 * k)], RowSense::Eq, 0.0);
        let exact = crate::lp::solve_lp(&lp).unwrap().objective;
        let zinf = log.last().unwrap().zinf;
        assert!(
            (zinf - exact).abs() <= 1e-5 * (1.0 + exact.abs()),
            "zinf {zinf} vs exact {exact}"
        );
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let config = single_hydro_config(2, 80.0);
        let scens = scenario_set(&config, vec![vec![20.0], vec![30.0, 2.0]]);
        let engine = SddpEngine::new(&config, &scens, EcVariant::None, None).unwrap();
        let opts = TrainingOptions { iterations: 5, seed: 9, ..Default::default() };
        let (vf, _) = engine.train(&opts).unwrap();
        let a = engine.simulate(&vf, &opts, 6).unwrap();
        let b = engine.simulate(&vf, &opts, 6).unwrap();
        for (sa, sb) in a.series.iter().zip(&b.series) {
            for (ra, rb) in sa.iter().zip(sb) {
                assert_eq!(ra.cost.to_bits(), rb.cost.to_bits());
                assert_eq!(ra.sse.to_bits(), rb.sse.to_bits());
            }
        }
    }
}
