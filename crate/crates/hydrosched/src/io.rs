//! Comma-separated file ingestion for systems, outflow-rule tables and
//! inflow scenarios, the seeded synthetic scenario sampler, and report
//! serialization. The bundled `data/` directory ships the test system.

use crate::ec::{MaxOutflowRow, MaxOutflowTable, OperationRanges, PlantRule, RuleMap};
use crate::model::{HydroPlant, InflowScenario, ScenarioSet, SystemConfig, ThermalPlant};
use crate::sddp::{IterationRecord, SimulationResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: u64, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_err(file: &Path, line: u64, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Numbers may carry thousands separators; strip them before parsing.
fn parse_num(raw: &str, file: &Path, line: u64, col: &str) -> Result<f64, IoError> {
    let cleaned = raw.trim().replace(',', "");
    cleaned
        .parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("column {col}: cannot parse number '{raw}'")))
}

struct Table {
    path: std::path::PathBuf,
    headers: Vec<String>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, IoError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| IoError::Invalid(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            records,
        })
    }

    fn col(&self, name: &str) -> Result<usize, IoError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(&self.path, 1, format!("missing column '{name}'")))
    }

    fn field<'a>(&self, rec: &'a csv::StringRecord, line: u64, idx: usize) -> Result<&'a str, IoError> {
        rec.get(idx)
            .ok_or_else(|| parse_err(&self.path, line, "short record"))
    }
}

/// Demand column of the load table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadLevel {
    L8000,
    L9000,
    L10000,
}

impl LoadLevel {
    pub fn column(&self) -> &'static str {
        match self {
            LoadLevel::L8000 => "level_8000",
            LoadLevel::L9000 => "level_9000",
            LoadLevel::L10000 => "level_10000",
        }
    }

    pub fn from_mw(level: usize) -> Option<LoadLevel> {
        match level {
            8000 => Some(LoadLevel::L8000),
            9000 => Some(LoadLevel::L9000),
            10000 => Some(LoadLevel::L10000),
            _ => None,
        }
    }
}

fn config_map(dir: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let path = dir.join("config.csv");
    let table = Table::read(&path)?;
    let kc = table.col("key")?;
    let vc = table.col("value")?;
    let mut map = BTreeMap::new();
    for (line, rec) in &table.records {
        let k = table.field(rec, *line, kc)?.to_string();
        let v = table.field(rec, *line, vc)?.to_string();
        if map.insert(k.clone(), v).is_some() {
            return Err(parse_err(&path, *line, format!("duplicate key '{k}'")));
        }
    }
    Ok(map)
}

fn config_num(map: &BTreeMap<String, String>, key: &str) -> Result<f64, IoError> {
    map.get(key)
        .ok_or_else(|| IoError::Invalid(format!("config.csv: missing key '{key}'")))?
        .replace(',', "")
        .parse()
        .map_err(|_| IoError::Invalid(format!("config.csv: key '{key}' is not a number")))
}

/// Loads and validates the full system from a data directory. Thermal and
/// deficit costs arrive per MWh and are converted to per-MWmonth using the
/// configured period length.
pub fn load_system(dir: &Path, level: LoadLevel) -> Result<SystemConfig, IoError> {
    let cfg = config_map(dir)?;
    let period_hours = config_num(&cfg, "period_hours")?;
    let horizon = config_num(&cfg, "horizon_months")? as usize;
    let openings_first = config_num(&cfg, "openings_first_month")? as usize;
    let openings_other = config_num(&cfg, "openings_other_months")? as usize;
    let deficit_cost = config_num(&cfg, "deficit_cost_per_mwh")? * period_hours;
    let ec_penalty_min = config_num(&cfg, "ec_penalty_min")?;
    let ec_penalty_max = config_num(&cfg, "ec_penalty_max")?;
    let price_def_res = cfg
        .get("price_def_res")
        .map_or(true, |v| v.trim() != "0");

    // Hydros. Upstream and reference links resolve by name in a second pass.
    let hpath = dir.join("hydros.csv");
    let table = Table::read(&hpath)?;
    let name_c = table.col("name")?;
    let gen_c = table.col("max_generation_mw")?;
    let vol_c = table.col("useful_volume_hm3")?;
    let rho_c = table.col("productivity_mwmonth_per_hm3")?;
    let qmax_c = table.col("max_turbined_outflow_hm3")?;
    let v0_c = table.col("initial_volume_hm3")?;
    let up_c = table.col("upstream_names")?;
    let ref_c = table.col("reference_name")?;
    let ec_c = table.col("ec_flag")?;
    let mut hydros: Vec<HydroPlant> = Vec::new();
    let mut upstream_names: Vec<(u64, Vec<String>)> = Vec::new();
    let mut reference_names: Vec<(u64, String)> = Vec::new();
    for (line, rec) in &table.records {
        let name = table.field(rec, *line, name_c)?.to_string();
        if hydros.iter().any(|h| h.name == name) {
            return Err(parse_err(&hpath, *line, format!("duplicate plant '{name}'")));
        }
        let ups: Vec<String> = table
            .field(rec, *line, up_c)?
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        upstream_names.push((*line, ups));
        reference_names.push((*line, table.field(rec, *line, ref_c)?.to_string()));
        hydros.push(HydroPlant {
            id: hydros.len(),
            name,
            max_generation: parse_num(table.field(rec, *line, gen_c)?, &hpath, *line, "max_generation_mw")?,
            useful_volume: parse_num(table.field(rec, *line, vol_c)?, &hpath, *line, "useful_volume_hm3")?,
            productivity: parse_num(table.field(rec, *line, rho_c)?, &hpath, *line, "productivity_mwmonth_per_hm3")?,
            max_turbined_outflow: parse_num(table.field(rec, *line, qmax_c)?, &hpath, *line, "max_turbined_outflow_hm3")?,
            initial_volume: parse_num(table.field(rec, *line, v0_c)?, &hpath, *line, "initial_volume_hm3")?,
            upstream_ids: Vec::new(),
            reference_id: hydros.len(),
            ec_flag: table.field(rec, *line, ec_c)?.trim() == "1",
        });
    }
    let names: Vec<String> = hydros.iter().map(|h| h.name.clone()).collect();
    let index_of = |name: &str| names.iter().position(|n| n == name);
    for (i, (line, ups)) in upstream_names.iter().enumerate() {
        let mut ids = Vec::with_capacity(ups.len());
        for u in ups {
            let id = index_of(u)
                .ok_or_else(|| parse_err(&hpath, *line, format!("unknown upstream plant '{u}'")))?;
            ids.push(id);
        }
        hydros[i].upstream_ids = ids;
    }
    for (i, (line, rname)) in reference_names.iter().enumerate() {
        if !rname.trim().is_empty() {
            let id = index_of(rname).ok_or_else(|| {
                parse_err(&hpath, *line, format!("unknown reference plant '{rname}'"))
            })?;
            hydros[i].reference_id = id;
        }
    }

    // Thermals.
    let tpath = dir.join("thermals.csv");
    let table = Table::read(&tpath)?;
    let name_c = table.col("name")?;
    let gen_c = table.col("max_generation_mw")?;
    let cost_c = table.col("unit_cost")?;
    let mut thermals = Vec::new();
    for (line, rec) in &table.records {
        let name = table.field(rec, *line, name_c)?.to_string();
        if thermals.iter().any(|t: &ThermalPlant| t.name == name) {
            return Err(parse_err(&tpath, *line, format!("duplicate plant '{name}'")));
        }
        thermals.push(ThermalPlant {
            id: thermals.len(),
            name,
            max_generation: parse_num(table.field(rec, *line, gen_c)?, &tpath, *line, "max_generation_mw")?,
            unit_cost: parse_num(table.field(rec, *line, cost_c)?, &tpath, *line, "unit_cost")?
                * period_hours,
        });
    }

    // Monthly demand at the requested level, repeated over the horizon.
    let lpath = dir.join("load.csv");
    let table = Table::read(&lpath)?;
    let month_c = table.col("month")?;
    let level_c = table.col(level.column())?;
    let mut monthly = vec![f64::NAN; 12];
    for (line, rec) in &table.records {
        let m = parse_num(table.field(rec, *line, month_c)?, &lpath, *line, "month")? as usize;
        if !(1..=12).contains(&m) {
            return Err(parse_err(&lpath, *line, format!("month {m} outside 1..=12")));
        }
        monthly[m - 1] = parse_num(table.field(rec, *line, level_c)?, &lpath, *line, level.column())?;
    }
    if monthly.iter().any(|d| d.is_nan()) {
        return Err(IoError::Invalid(format!(
            "{}: not all 12 months present",
            lpath.display()
        )));
    }
    let demand: Vec<f64> = (0..horizon).map(|t| monthly[t % 12]).collect();

    let k = period_hours * 3600.0 / 1e6;
    let q_sup = match cfg.get("q_sup") {
        Some(v) => v.parse().map_err(|_| IoError::Invalid("config.csv: bad q_sup".into()))?,
        None => SystemConfig::default_q_sup(&hydros, k),
    };

    let mut openings = vec![openings_other; horizon];
    if horizon > 0 {
        openings[0] = openings_first;
    }

    let config = SystemConfig {
        hydros,
        thermals,
        demand,
        deficit_cost,
        ec_penalty_min,
        ec_penalty_max,
        price_def_res,
        horizon_months: horizon,
        openings_per_stage: openings,
        period_hours,
        q_sup,
    };
    let violations = crate::model::validate_system(&config);
    if !violations.is_empty() {
        return Err(IoError::Invalid(format!(
            "system fails validation: {}",
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(config)
}

/// Loads per-plant operation ranges and monthly maximum-outflow tables.
/// `QSUP` in a limits list marks the unregulated normal range.
pub fn load_rules(dir: &Path, config: &SystemConfig) -> Result<RuleMap, IoError> {
    let rpath = dir.join("ranges.csv");
    let table = Table::read(&rpath)?;
    let plant_c = table.col("plant")?;
    let vres_c = table.col("v_res")?;
    let q1_c = table.col("q_min_restricted")?;
    let q2_c = table.col("q_min_normal")?;
    let mut ranges: BTreeMap<usize, OperationRanges> = BTreeMap::new();
    for (line, rec) in &table.records {
        let name = table.field(rec, *line, plant_c)?;
        let plant = config
            .hydro_index(name)
            .ok_or_else(|| parse_err(&rpath, *line, format!("unknown plant '{name}'")))?;
        let r = OperationRanges {
            v_res: parse_num(table.field(rec, *line, vres_c)?, &rpath, *line, "v_res")?,
            q_min_restricted: parse_num(table.field(rec, *line, q1_c)?, &rpath, *line, "q_min_restricted")?,
            q_min_normal: parse_num(table.field(rec, *line, q2_c)?, &rpath, *line, "q_min_normal")?,
        };
        r.validate()
            .map_err(|e| parse_err(&rpath, *line, e.to_string()))?;
        ranges.insert(plant, r);
    }

    let mpath = dir.join("max_outflow.csv");
    let table = Table::read(&mpath)?;
    let plant_c = table.col("plant")?;
    let month_c = table.col("month")?;
    let bp_c = table.col("breakpoints")?;
    let lim_c = table.col("limits")?;
    let off_c = table.col("reference_offset_m3s")?;
    let mut rows: BTreeMap<usize, Vec<MaxOutflowRow>> = BTreeMap::new();
    for (line, rec) in &table.records {
        let name = table.field(rec, *line, plant_c)?;
        let plant = config
            .hydro_index(name)
            .ok_or_else(|| parse_err(&mpath, *line, format!("unknown plant '{name}'")))?;
        let month = parse_num(table.field(rec, *line, month_c)?, &mpath, *line, "month")? as usize;
        let breakpoints: Result<Vec<f64>, IoError> = table
            .field(rec, *line, bp_c)?
            .split(';')
            .map(|s| parse_num(s, &mpath, *line, "breakpoints"))
            .collect();
        let breakpoints = breakpoints?;
        let mut limits = Vec::new();
        for s in table.field(rec, *line, lim_c)?.split(';') {
            if s.trim().eq_ignore_ascii_case("QSUP") {
                limits.push(None);
            } else {
                limits.push(Some(parse_num(s, &mpath, *line, "limits")?));
            }
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(parse_err(&mpath, *line, "breakpoints not strictly increasing"));
        }
        rows.entry(plant).or_default().push(MaxOutflowRow {
            month,
            breakpoints,
            limits,
            reference_offset: parse_num(table.field(rec, *line, off_c)?, &mpath, *line, "reference_offset_m3s")?,
        });
    }

    let mut out = RuleMap::new();
    for (plant, ranges) in ranges {
        let rows = rows.remove(&plant).unwrap_or_default();
        let table = MaxOutflowTable {
            rows,
            q_sup: config.q_sup,
        };
        table
            .validate()
            .map_err(|e| IoError::Invalid(format!("max_outflow.csv ({}): {e}", config.hydros[plant].name)))?;
        out.insert(plant, PlantRule { ranges, table });
    }
    if let Some((plant, _)) = rows.into_iter().next() {
        return Err(IoError::Invalid(format!(
            "max_outflow.csv: plant '{}' has no ranges.csv row",
            config.hydros[plant].name
        )));
    }
    Ok(out)
}

/// Writes rule tables back out in the layout `load_rules` reads.
pub fn write_rules(dir: &Path, config: &SystemConfig, rules: &RuleMap) -> Result<(), IoError> {
    let mut f = File::create(dir.join("ranges.csv"))?;
    writeln!(f, "plant,v_res,q_min_restricted,q_min_normal")?;
    for (&plant, rule) in rules {
        writeln!(
            f,
            "{},{},{},{}",
            config.hydros[plant].name,
            rule.ranges.v_res,
            rule.ranges.q_min_restricted,
            rule.ranges.q_min_normal
        )?;
    }
    let mut f = File::create(dir.join("max_outflow.csv"))?;
    writeln!(f, "plant,month,breakpoints,limits,reference_offset_m3s")?;
    for (&plant, rule) in rules {
        for row in &rule.table.rows {
            let bps: Vec<String> = row.breakpoints.iter().map(|b| format!("{b}")).collect();
            let lims: Vec<String> = row
                .limits
                .iter()
                .map(|l| l.map_or("QSUP".to_string(), |q| format!("{q}")))
                .collect();
            writeln!(
                f,
                "{},{},{},{},{}",
                config.hydros[plant].name,
                row.month,
                bps.join(";"),
                lims.join(";"),
                row.reference_offset
            )?;
        }
    }
    Ok(())
}

/// Parameters of the synthetic lognormal inflow sampler, read from the
/// configuration file.
#[derive(Debug, Clone)]
pub struct ScenarioGenParams {
    /// Mean incremental inflow per plant, m^3/s.
    pub means: Vec<f64>,
    /// Lognormal shape; the multiplicative noise has unit mean.
    pub sigma: f64,
    /// Multiplicative factor per calendar month.
    pub season: [f64; 12],
}

pub fn load_scenario_params(dir: &Path, config: &SystemConfig) -> Result<ScenarioGenParams, IoError> {
    let cfg = config_map(dir)?;
    let sigma = config_num(&cfg, "inflow_sigma")?;
    let mut means = Vec::with_capacity(config.hydros.len());
    for h in &config.hydros {
        means.push(config_num(&cfg, &format!("inflow_mean.{}", h.name))?);
    }
    let mut season = [1.0; 12];
    for (m, s) in season.iter_mut().enumerate() {
        *s = config_num(&cfg, &format!("season_factor_{}", m + 1))?;
    }
    Ok(ScenarioGenParams { means, sigma, season })
}

/// Seeded synthetic openings: for stage t and plant h the inflow is
/// mean_h * season(month) * exp(sigma z - sigma^2/2) with z standard normal,
/// drawn in a fixed (stage, opening, plant) order so a seed pins the grid.
pub fn generate_scenarios(
    config: &SystemConfig,
    params: &ScenarioGenParams,
    seed: u64,
) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut stages = Vec::with_capacity(config.horizon_months);
    for t in 1..=config.horizon_months {
        let month = config.calendar_month(t);
        let n_open = config.openings_per_stage[t - 1];
        let mut openings = Vec::with_capacity(n_open);
        for a in 0..n_open {
            let mut inflows = Vec::with_capacity(config.hydros.len());
            for h in 0..config.hydros.len() {
                let z: f64 = StandardNormal.sample(&mut rng);
                let noise = (params.sigma * z - 0.5 * params.sigma * params.sigma).exp();
                inflows.push(params.means[h] * params.season[month - 1] * noise);
            }
            openings.push(InflowScenario { stage: t, opening: a, inflows });
        }
        stages.push(openings);
    }
    ScenarioSet { stages }
}

/// Reads an explicit scenario grid from `inflows.csv`.
pub fn load_scenarios(path: &Path, config: &SystemConfig) -> Result<ScenarioSet, IoError> {
    let table = Table::read(path)?;
    let stage_c = table.col("stage")?;
    let open_c = table.col("opening")?;
    let plant_c = table.col("plant_name")?;
    let inflow_c = table.col("inflow_m3s")?;
    let nh = config.hydros.len();
    let mut stages: Vec<Vec<InflowScenario>> = (1..=config.horizon_months)
        .map(|t| {
            (0..config.openings_per_stage[t - 1])
                .map(|a| InflowScenario {
                    stage: t,
                    opening: a,
                    inflows: vec![f64::NAN; nh],
                })
                .collect()
        })
        .collect();
    for (line, rec) in &table.records {
        let t = parse_num(table.field(rec, *line, stage_c)?, path, *line, "stage")? as usize;
        let a = parse_num(table.field(rec, *line, open_c)?, path, *line, "opening")? as usize;
        let name = table.field(rec, *line, plant_c)?;
        let h = config
            .hydro_index(name)
            .ok_or_else(|| parse_err(path, *line, format!("unknown plant '{name}'")))?;
        if t == 0 || t > stages.len() || a >= stages[t - 1].len() {
            return Err(parse_err(path, *line, format!("(stage {t}, opening {a}) outside the grid")));
        }
        let slot = &mut stages[t - 1][a].inflows[h];
        if !slot.is_nan() {
            return Err(parse_err(path, *line, format!("duplicate entry for (stage {t}, opening {a}, {name})")));
        }
        *slot = parse_num(table.field(rec, *line, inflow_c)?, path, *line, "inflow_m3s")?;
    }
    for stage in &stages {
        for sc in stage {
            if let Some(h) = sc.inflows.iter().position(|v| v.is_nan()) {
                return Err(IoError::Invalid(format!(
                    "{}: missing inflow for (stage {}, opening {}, {})",
                    path.display(),
                    sc.stage,
                    sc.opening,
                    config.hydros[h].name
                )));
            }
        }
    }
    Ok(ScenarioSet { stages })
}

pub fn write_scenarios(path: &Path, config: &SystemConfig, set: &ScenarioSet) -> Result<(), IoError> {
    let mut f = File::create(path)?;
    writeln!(f, "stage,opening,plant_name,inflow_m3s")?;
    for stage in &set.stages {
        for sc in stage {
            for (h, y) in sc.inflows.iter().enumerate() {
                writeln!(f, "{},{},{},{:.6}", sc.stage, sc.opening, config.hydros[h].name, y)?;
            }
        }
    }
    Ok(())
}

/// Writes `zinf.csv`, `simulation.csv` and `summary.csv` under `out_dir`.
pub fn write_report(
    out_dir: &Path,
    config: &SystemConfig,
    log: &[IterationRecord],
    sim: &SimulationResult,
) -> Result<(), IoError> {
    std::fs::create_dir_all(out_dir)?;

    let mut f = File::create(out_dir.join("zinf.csv"))?;
    writeln!(f, "iteration,zinf")?;
    for rec in log {
        writeln!(f, "{},{:.6}", rec.iteration, rec.zinf)?;
    }

    let mut f = File::create(out_dir.join("simulation.csv"))?;
    let vol_cols: Vec<String> = config
        .hydros
        .iter()
        .map(|h| format!("vol_{}", h.name.replace(' ', "_")))
        .collect();
    writeln!(
        f,
        "series,stage,cost,moc,sse,hydro_mw,thermal_mw,deficit_mw,{}",
        vol_cols.join(",")
    )?;
    for (i, series) in sim.series.iter().enumerate() {
        for r in series {
            let vols: Vec<String> = r.volumes.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(
                f,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                i + 1,
                r.stage,
                r.cost,
                r.moc,
                r.sse,
                r.hydro_mw,
                r.thermal_mw,
                r.deficit_mw,
                vols.join(",")
            )?;
        }
    }

    let mut f = File::create(out_dir.join("summary.csv"))?;
    writeln!(
        f,
        "stage,moc_mean,moc_q25,moc_q50,moc_q75,sse_mean,sse_q25,sse_q50,sse_q75"
    )?;
    for s in &sim.summary {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.stage, s.moc_mean, s.moc_q25, s.moc_q50, s.moc_q75, s.sse_mean, s.sse_q25, s.sse_q50, s.sse_q75
        )?;
    }
    Ok(())
}

/// Writes the (storage, expected cost, water value) triples of the two-stage
/// study as delimited text.
pub fn write_twostage(
    path: &Path,
    grid: &[f64],
    fcf: &[f64],
    water_values: &[f64],
) -> Result<(), IoError> {
    let mut f = File::create(path)?;
    writeln!(f, "storage,fcf,water_value")?;
    for i in 0..grid.len() {
        writeln!(f, "{:.6},{:.6},{:.6}", grid[i], fcf[i], water_values[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_dir() -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    #[test]
    fn bundled_system_loads_and_validates() {
        let config = load_system(&data_dir(), LoadLevel::L9000).unwrap();
        assert_eq!(config.hydros.len(), 7);
        assert_eq!(config.thermals.len(), 8);
        assert_eq!(config.horizon_months, 24);
        // Month-1 demand at the 9,000 level.
        assert_eq!(config.demand[0], 9237.0);
        // Run-of-river plant.
        let xingo = &config.hydros[config.hydro_index("XINGO").unwrap()];
        assert_eq!(xingo.useful_volume, 0.0);
        // Deficit cost converted to per-MWmonth.
        assert!((config.deficit_cost - 7643.82 * 730.0).abs() < 1e-6);
    }

    #[test]
    fn load_levels_pick_columns() {
        let c8 = load_system(&data_dir(), LoadLevel::L8000).unwrap();
        let c10 = load_system(&data_dir(), LoadLevel::L10000).unwrap();
        assert_eq!(c8.demand[0], 8211.0);
        assert_eq!(c10.demand[0], 10263.0);
    }

    #[test]
    fn bundled_rules_match_printed_vectors() {
        let config = load_system(&data_dir(), LoadLevel::L9000).unwrap();
        let rules = load_rules(&data_dir(), &config).unwrap();
        let tm = config.hydro_index("TRES MARIAS").unwrap();
        let rule = &rules[&tm];
        assert_eq!(rule.ranges.v_res, 0.3);
        assert_eq!(rule.ranges.q_min_restricted, 100.0);
        assert_eq!(rule.ranges.q_min_normal, 150.0);
        let may = rule.table.row(5).unwrap();
        assert_eq!(
            may.breakpoints,
            vec![0.0, 0.3, 0.404, 0.456, 0.508, 0.561, 0.6, 1.0]
        );
        let resolved: Vec<f64> = (0..may.limits.len())
            .map(|z| rule.table.limit(may, z))
            .collect();
        assert_eq!(
            resolved,
            vec![100.0, 150.0, 150.0, 200.0, 250.0, 300.0, config.q_sup]
        );
    }

    #[test]
    fn rules_round_trip_losslessly() {
        let config = load_system(&data_dir(), LoadLevel::L9000).unwrap();
        let rules = load_rules(&data_dir(), &config).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_rules(tmp.path(), &config, &rules).unwrap();
        let back = load_rules(tmp.path(), &config).unwrap();
        assert_eq!(rules.len(), back.len());
        for (plant, rule) in &rules {
            let b = &back[plant];
            assert_eq!(rule.ranges.v_res, b.ranges.v_res);
            for (r1, r2) in rule.table.rows.iter().zip(&b.table.rows) {
                assert_eq!(r1.month, r2.month);
                assert_eq!(r1.breakpoints, r2.breakpoints);
                assert_eq!(r1.limits, r2.limits);
                assert_eq!(r1.reference_offset, r2.reference_offset);
            }
        }
    }

    #[test]
    fn scenarios_generate_and_round_trip() {
        let config = load_system(&data_dir(), LoadLevel::L9000).unwrap();
        let params = load_scenario_params(&data_dir(), &config).unwrap();
        let set = generate_scenarios(&config, &params, 42);
        assert!(set.check_complete(&config).is_empty());
        assert_eq!(set.openings(1), 1);
        assert_eq!(set.openings(2), 4);
        // Same seed, same grid.
        let again = generate_scenarios(&config, &params, 42);
        assert_eq!(
            set.get(5, 2).inflows[0].to_bits(),
            again.get(5, 2).inflows[0].to_bits()
        );
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("inflows.csv");
        write_scenarios(&path, &config, &set).unwrap();
        let back = load_scenarios(&path, &config).unwrap();
        assert!(back.check_complete(&config).is_empty());
        for t in 1..=config.horizon_months {
            for a in 0..set.openings(t) {
                for h in 0..config.hydros.len() {
                    let x = set.get(t, a).inflows[h];
                    let y = back.get(t, a).inflows[h];
                    assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn empty_hydros_file_is_valid_thermal_system() {
        let tmp = tempfile::tempdir().unwrap();
        for name in ["thermals.csv", "load.csv", "config.csv"] {
            std::fs::copy(data_dir().join(name), tmp.path().join(name)).unwrap();
        }
        std::fs::write(
            tmp.path().join("hydros.csv"),
            "name,max_generation_mw,useful_volume_hm3,productivity_mwmonth_per_hm3,max_turbined_outflow_hm3,initial_volume_hm3,upstream_names,reference_name,ec_flag\n",
        )
        .unwrap();
        let config = load_system(tmp.path(), LoadLevel::L9000).unwrap();
        assert!(config.hydros.is_empty());
        assert_eq!(config.thermals.len(), 8);
    }

    #[test]
    fn truncated_hydros_file_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        for name in ["thermals.csv", "load.csv", "config.csv"] {
            std::fs::copy(data_dir().join(name), tmp.path().join(name)).unwrap();
        }
        std::fs::write(
            tmp.path().join("hydros.csv"),
            "name,max_generation_mw\nX,1\n",
        )
        .unwrap();
        let err = load_system(tmp.path(), LoadLevel::L9000).unwrap_err();
        assert!(err.to_string().contains("missing column"));
    }
}
