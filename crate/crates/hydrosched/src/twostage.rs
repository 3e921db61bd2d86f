//! Two-stage illustrative study: the second-stage future cost function and
//! water values over a storage grid, for the base case and the four
//! outflow-rule cases. Storage and hydro generation share one unit here, so
//! release limits are generation limits and no flow conversion applies.

use crate::lp::{solve_lp, LinearProgram, LpStatus, RowSense};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcCase {
    None,
    /// Minimum generation of 300, violation priced at the penalty.
    Min300,
    /// Hard generation cap of 250.
    Max250,
    /// Cap of 250 + 0.3 * initial storage.
    StateDependent,
    /// Cap of 250 up to storage 300, then 10 + 0.8 * initial storage.
    Nonconvex,
}

impl EcCase {
    pub fn parse(name: &str) -> Option<EcCase> {
        match name {
            "none" => Some(EcCase::None),
            "min300" => Some(EcCase::Min300),
            "max250" => Some(EcCase::Max250),
            "statedep" => Some(EcCase::StateDependent),
            "nonconvex" => Some(EcCase::Nonconvex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageSpec {
    pub thermal_costs: Vec<f64>,
    pub thermal_cap: f64,
    pub demand: f64,
    pub storage_cap: f64,
    pub discharge_cap: f64,
    /// Equiprobable second-stage inflows.
    pub inflows: Vec<f64>,
    /// Price of violating an imposed rule, where violation is possible.
    pub penalty: f64,
    pub case: EcCase,
}

impl TwoStageSpec {
    pub fn new(case: EcCase) -> Self {
        TwoStageSpec {
            thermal_costs: vec![100.0, 200.0, 300.0, 400.0],
            thermal_cap: 100.0,
            demand: 400.0,
            storage_cap: 400.0,
            discharge_cap: 400.0,
            inflows: vec![100.0, 0.0],
            penalty: 50.0,
            case,
        }
    }
}

/// 0..=400 step 10, fine enough to localize the slope breaks.
pub fn default_grid() -> Vec<f64> {
    (0..=40).map(|i| (i * 10) as f64).collect()
}

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error("grid value {0} outside [0, {1}]")]
    GridOutOfRange(f64, f64),
    #[error("grid must be sorted with at least 2 distinct points")]
    BadGrid,
    #[error("second-stage subproblem not optimal")]
    NotOptimal,
}

fn second_stage_cost(spec: &TwoStageSpec, v_initial: f64, inflow: f64) -> Result<f64, TwoStageError> {
    let mut lp = LinearProgram::default();
    let pts: Vec<usize> = spec
        .thermal_costs
        .iter()
        .map(|&c| lp.add_var(c, 0.0, spec.thermal_cap))
        .collect();
    let ph = lp.add_var(0.0, 0.0, spec.discharge_cap);
    let v_end = lp.add_var(0.0, 0.0, spec.storage_cap);

    let mut demand: Vec<(usize, f64)> = pts.iter().map(|&j| (j, 1.0)).collect();
    demand.push((ph, 1.0));
    lp.add_row(demand, RowSense::Eq, spec.demand);
    lp.add_row(vec![(v_end, 1.0), (ph, 1.0)], RowSense::Eq, v_initial + inflow);

    match spec.case {
        EcCase::None => {}
        EcCase::Min300 => {
            // Infeasible when little water is available, so the requirement
            // carries a priced slack.
            let slack = lp.add_var(spec.penalty, 0.0, f64::INFINITY);
            lp.add_row(vec![(ph, 1.0), (slack, 1.0)], RowSense::Ge, 300.0);
        }
        EcCase::Max250 => {
            lp.add_row(vec![(ph, 1.0)], RowSense::Le, 250.0);
        }
        EcCase::StateDependent => {
            lp.add_row(vec![(ph, 1.0)], RowSense::Le, 250.0 + 0.3 * v_initial);
        }
        EcCase::Nonconvex => {
            let cap = if v_initial <= 300.0 {
                250.0
            } else {
                10.0 + 0.8 * v_initial
            };
            lp.add_row(vec![(ph, 1.0)], RowSense::Le, cap);
        }
    }

    let sol = solve_lp(&lp).map_err(|_| TwoStageError::NotOptimal)?;
    if sol.status != LpStatus::Optimal {
        return Err(TwoStageError::NotOptimal);
    }
    Ok(sol.objective)
}

/// Expected second-stage cost per grid storage: the equiprobable average of
/// the scenario optima.
pub fn fcf(spec: &TwoStageSpec, v_grid: &[f64]) -> Result<Vec<f64>, TwoStageError> {
    let mut out = Vec::with_capacity(v_grid.len());
    for &v in v_grid {
        if !(0.0..=spec.storage_cap).contains(&v) {
            return Err(TwoStageError::GridOutOfRange(v, spec.storage_cap));
        }
        let mut acc = 0.0;
        for &y in &spec.inflows {
            acc += second_stage_cost(spec, v, y)?;
        }
        out.push(acc / spec.inflows.len() as f64);
    }
    Ok(out)
}

/// Finite-difference derivatives of the FCF: central in the interior,
/// one-sided at the ends.
pub fn water_values(fcf: &[f64], v_grid: &[f64]) -> Result<Vec<f64>, TwoStageError> {
    let n = v_grid.len();
    if n < 2 || fcf.len() != n {
        return Err(TwoStageError::BadGrid);
    }
    if v_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TwoStageError::BadGrid);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            (fcf[1] - fcf[0]) / (v_grid[1] - v_grid[0])
        } else if i == n - 1 {
            (fcf[n - 1] - fcf[n - 2]) / (v_grid[n - 1] - v_grid[n - 2])
        } else {
            (fcf[i + 1] - fcf[i - 1]) / (v_grid[i + 1] - v_grid[i - 1])
        };
        out.push(d);
    }
    Ok(out)
}

/// Second differences f(i-1) - 2 f(i) + f(i+1); nonnegative for convex data.
pub fn second_differences(fcf: &[f64]) -> Vec<f64> {
    fcf.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form dispatch: hydro first, thermals in merit order.
    fn merit_cost(residual: f64) -> f64 {
        let mut left = residual;
        let mut cost = 0.0;
        for c in [100.0, 200.0, 300.0, 400.0] {
            let g = left.min(100.0);
            cost += c * g;
            left -= g;
            if left <= 0.0 {
                break;
            }
        }
        cost
    }

    fn oracle(case: EcCase, v: f64, y: f64) -> f64 {
        let cap = match case {
            EcCase::None | EcCase::Min300 => 400.0,
            EcCase::Max250 => 250.0,
            EcCase::StateDependent => 250.0 + 0.3 * v,
            EcCase::Nonconvex => {
                if v <= 300.0 {
                    250.0
                } else {
                    10.0 + 0.8 * v
                }
            }
        };
        let ph = (v + y).min(400.0).min(cap);
        let mut cost = merit_cost(400.0 - ph);
        if case == EcCase::Min300 && ph < 300.0 {
            cost += 50.0 * (300.0 - ph);
        }
        cost
    }

    fn oracle_fcf(case: EcCase, v: f64) -> f64 {
        (oracle(case, v, 100.0) + oracle(case, v, 0.0)) / 2.0
    }

    #[test]
    fn base_case_full_and_empty() {
        let spec = TwoStageSpec::new(EcCase::None);
        let vals = fcf(&spec, &[0.0, 400.0]).unwrap();
        assert!((vals[0] - 80_000.0).abs() < 1e-6);
        assert!(vals[1].abs() < 1e-6);
    }

    #[test]
    fn all_cases_match_dispatch_oracle() {
        for case in [
            EcCase::None,
            EcCase::Min300,
            EcCase::Max250,
            EcCase::StateDependent,
            EcCase::Nonconvex,
        ] {
            let spec = TwoStageSpec::new(case);
            let grid = default_grid();
            let vals = fcf(&spec, &grid).unwrap();
            for (v, got) in grid.iter().zip(&vals) {
                let want = oracle_fcf(case, *v);
                assert!(
                    (got - want).abs() < 1e-6,
                    "{case:?} at {v}: lp {got} oracle {want}"
                );
            }
        }
    }

    #[test]
    fn max250_constant_above_250() {
        let spec = TwoStageSpec::new(EcCase::Max250);
        let grid: Vec<f64> = vec![250.0, 300.0, 350.0, 400.0];
        let vals = fcf(&spec, &grid).unwrap();
        for v in &vals {
            assert!((v - vals[0]).abs() < 1e-7);
        }
        let wv = water_values(&vals, &grid).unwrap();
        assert!(wv.iter().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn water_values_examples() {
        let grid = vec![0.0, 200.0, 400.0];
        let spec = TwoStageSpec::new(EcCase::None);
        let vals = fcf(&spec, &grid).unwrap();
        assert!((vals[0] - 80_000.0).abs() < 1e-6);
        assert!((vals[1] - 20_000.0).abs() < 1e-6);
        assert!(vals[2].abs() < 1e-6);
        let wv = water_values(&vals, &grid).unwrap();
        assert!(wv[0] < 0.0);
        // Constant input has zero derivative.
        let flat = water_values(&[5.0, 5.0, 5.0], &grid).unwrap();
        assert!(flat.iter().all(|w| w.abs() < 1e-12));
    }

    #[test]
    fn min300_raises_low_storage_water_value() {
        let grid = vec![0.0, 10.0];
        let base = fcf(&TwoStageSpec::new(EcCase::None), &grid).unwrap();
        let min300 = fcf(&TwoStageSpec::new(EcCase::Min300), &grid).unwrap();
        let wv_base = water_values(&base, &grid).unwrap();
        let wv_min = water_values(&min300, &grid).unwrap();
        assert!(wv_min[0].abs() > wv_base[0].abs());
    }

    #[test]
    fn nonconvex_rule_is_continuous_at_300() {
        let spec = TwoStageSpec::new(EcCase::Nonconvex);
        let below = fcf(&spec, &[300.0]).unwrap()[0];
        let above = fcf(&spec, &[300.0 + 1e-6]).unwrap()[0];
        assert!((below - above).abs() < 1e-2);
    }

    #[test]
    fn duplicate_grid_rejected() {
        assert!(water_values(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }
}
