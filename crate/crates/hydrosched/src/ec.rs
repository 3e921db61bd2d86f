//! State-dependent environmental outflow machinery: operation ranges, the
//! monthly maximum-outflow rule table, and the two constraint builders.
//!
//! Variant A selects the storage interval of the rule table with one 0-1
//! variable per interval and bounds total outflow by the selected limit.
//! Variant B replaces the attention-range staircase with its upper concave
//! hull, so a family of affine rows covers the attention and normal ranges
//! and a single 0-1 variable separates the restricted range.

use crate::lp::RowSense;
use crate::model::{StageSubproblem, SystemConfig};
use std::collections::BTreeMap;
use thiserror::Error;

/// Storage bands that select which minimum-outflow value applies.
#[derive(Debug, Clone)]
pub struct OperationRanges {
    /// Fraction of useful volume below which the restricted range is active.
    pub v_res: f64,
    /// m^3/s required inside the restricted range.
    pub q_min_restricted: f64,
    /// m^3/s required in the attention and normal ranges.
    pub q_min_normal: f64,
}

impl OperationRanges {
    pub fn validate(&self) -> Result<(), EcError> {
        if !(self.v_res > 0.0 && self.v_res < 1.0) {
            return Err(EcError::BadRule(format!("v_res {} outside (0,1)", self.v_res)));
        }
        if self.q_min_restricted < 0.0 || self.q_min_restricted > self.q_min_normal {
            return Err(EcError::BadRule(
                "minimum outflows must satisfy 0 <= restricted <= normal".into(),
            ));
        }
        Ok(())
    }
}

/// One month of the maximum-outflow rule: interval breakpoints as fractions
/// (first 0, last 1) and one limit per interval. `None` marks the normal
/// range, which has no regulatory limit and resolves to the configured
/// deactivation value.
#[derive(Debug, Clone)]
pub struct MaxOutflowRow {
    pub month: usize,
    pub breakpoints: Vec<f64>,
    pub limits: Vec<Option<f64>>,
    /// Monthly additive offset for rules chained off a reference reservoir.
    pub reference_offset: f64,
}

#[derive(Debug, Clone)]
pub struct MaxOutflowTable {
    pub rows: Vec<MaxOutflowRow>,
    /// Resolution value for unlimited intervals, m^3/s.
    pub q_sup: f64,
}

impl MaxOutflowTable {
    pub fn row(&self, month: usize) -> Result<&MaxOutflowRow, EcError> {
        self.rows
            .iter()
            .find(|r| r.month == month)
            .ok_or(EcError::MissingMonth(month))
    }

    /// Limit of interval z with the monthly offset applied; unlimited
    /// intervals resolve to q_sup.
    pub fn limit(&self, row: &MaxOutflowRow, z: usize) -> f64 {
        match row.limits[z] {
            Some(q) => q + row.reference_offset,
            None => self.q_sup,
        }
    }

    pub fn validate(&self) -> Result<(), EcError> {
        for row in &self.rows {
            if row.breakpoints.len() < 2 {
                return Err(EcError::BadRule(format!("month {} has no intervals", row.month)));
            }
            if row.limits.len() + 1 != row.breakpoints.len() {
                return Err(EcError::BadRule(format!(
                    "month {}: {} limits for {} breakpoints",
                    row.month,
                    row.limits.len(),
                    row.breakpoints.len()
                )));
            }
            if (row.breakpoints[0]).abs() > 1e-9
                || (row.breakpoints.last().unwrap() - 1.0).abs() > 1e-9
            {
                return Err(EcError::BadRule(format!(
                    "month {}: breakpoints must start at 0 and end at 1",
                    row.month
                )));
            }
            if row.breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                return Err(EcError::BadRule(format!(
                    "month {}: breakpoints not strictly increasing",
                    row.month
                )));
            }
            if row.limits.iter().flatten().any(|q| *q <= 0.0) {
                return Err(EcError::BadRule(format!("month {}: nonpositive limit", row.month)));
            }
        }
        Ok(())
    }
}

/// Ranges plus rule table for one constrained plant.
#[derive(Debug, Clone)]
pub struct PlantRule {
    pub ranges: OperationRanges,
    pub table: MaxOutflowTable,
}

/// Per-plant rules, keyed by hydro index.
pub type RuleMap = BTreeMap<usize, PlantRule>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// m^3/s per hm^3.
    pub slope: f64,
    /// m^3/s at zero volume.
    pub intercept: f64,
}

impl Segment {
    pub fn at(&self, volume: f64) -> f64 {
        self.slope * volume + self.intercept
    }
}

/// Affine pieces of the piecewise-linear rule model: the concave maximum-
/// outflow envelope over the attention and normal ranges, and the
/// minimum-outflow pieces with the physical drain bound as piece 1.
#[derive(Debug, Clone)]
pub struct PiecewiseSegments {
    pub max_segments: Vec<Segment>,
    /// Fractions splitting the minimum-outflow intervals, first 0 last 1.
    pub min_breakpoints: Vec<f64>,
    pub min_segments: Vec<Segment>,
}

impl PiecewiseSegments {
    /// Value of the concave envelope at an absolute volume: the pointwise
    /// minimum of the segment lines.
    pub fn max_envelope(&self, volume: f64) -> f64 {
        self.max_segments
            .iter()
            .map(|s| s.at(volume))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Error)]
pub enum EcError {
    #[error("rule table has no row for month {0}")]
    MissingMonth(usize),
    #[error("fewer than 2 attention-range breakpoints")]
    TooFewPoints,
    #[error("invalid rule data: {0}")]
    BadRule(String),
}

/// Maximum outflow by the closed-open interval rule: the limit of the
/// interval whose left endpoint is the largest breakpoint <= the fraction.
pub fn lookup_max_outflow(
    table: &MaxOutflowTable,
    month: usize,
    storage_fraction: f64,
) -> Result<f64, EcError> {
    let row = table.row(month)?;
    let nz = row.limits.len();
    let mut z = 0;
    for (i, &bp) in row.breakpoints.iter().enumerate().take(nz) {
        if storage_fraction >= bp {
            z = i;
        }
    }
    Ok(table.limit(row, z))
}

/// Minimum outflow by storage band; exactly at the threshold the lower
/// (restricted) value is reported.
pub fn min_outflow_requirement(ranges: &OperationRanges, storage_fraction: f64) -> f64 {
    if storage_fraction <= ranges.v_res {
        ranges.q_min_restricted
    } else {
        ranges.q_min_normal
    }
}

fn fraction_of(volume: f64, vmax: f64) -> f64 {
    if vmax > 0.0 {
        (volume / vmax).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Appends the interval-selection formulation for `plant`. No-op when the
/// plant carries no environmental flag.
pub fn add_variant_a(
    sub: &mut StageSubproblem,
    config: &SystemConfig,
    plant: usize,
    rule: &PlantRule,
    month: usize,
    incoming: &[f64],
) -> Result<(), EcError> {
    if !config.hydros[plant].ec_flag {
        return Ok(());
    }
    let row = rule.table.row(month)?.clone();
    let r = config.hydros[plant].reference_id;
    let vmax_r = config.hydros[r].useful_volume;
    let frac = fraction_of(incoming[r], vmax_r);
    let inv_vmax = 1.0 / vmax_r;
    let v_res = rule.ranges.v_res;
    let q = sub.vars.turbined[plant];
    let s = sub.vars.spilled[plant];

    // Restricted-zone selector: u = 1 inside the restricted range.
    let u = sub.lp.add_var(0.0, 0.0, 1.0);
    sub.binaries.push(u);
    sub.add_linked_row(
        vec![(u, -v_res)],
        RowSense::Le,
        frac - v_res,
        vec![(r, inv_vmax)],
    );
    sub.add_linked_row(
        vec![(u, 1.0 - v_res)],
        RowSense::Le,
        1.0 - frac,
        vec![(r, -inv_vmax)],
    );

    // Minimum outflow with slack: Q1*u + Q2*(1-u) <= q + s + def_min.
    let def_min = sub.lp.add_var(config.ec_penalty_min, 0.0, f64::INFINITY);
    sub.vars.ec_slack_min.push(def_min);
    let (q1, q2) = (rule.ranges.q_min_restricted, rule.ranges.q_min_normal);
    sub.add_row(
        vec![(u, q1 - q2), (q, -1.0), (s, -1.0), (def_min, -1.0)],
        RowSense::Le,
        -q2,
    );

    // One selector per table interval, tied to the reference fraction.
    let nz = row.limits.len();
    let mut selectors = Vec::with_capacity(nz);
    for z in 0..nz {
        let uz = sub.lp.add_var(0.0, 0.0, 1.0);
        sub.binaries.push(uz);
        selectors.push(uz);
        let lo = row.breakpoints[z];
        let hi = row.breakpoints[z + 1];
        sub.add_linked_row(vec![(uz, lo)], RowSense::Le, frac, vec![(r, inv_vmax)]);
        sub.add_linked_row(
            vec![(uz, 1.0 - hi)],
            RowSense::Le,
            1.0 - frac,
            vec![(r, -inv_vmax)],
        );
    }
    // Exactly one interval active.
    sub.add_row(selectors.iter().map(|&j| (j, 1.0)).collect(), RowSense::Eq, 1.0);

    // Maximum outflow with slack: q + s <= sum(u_z * Qmax_z) + def_max.
    let def_max = sub.lp.add_var(config.ec_penalty_max, 0.0, f64::INFINITY);
    sub.vars.ec_slack_max.push(def_max);
    let mut coeffs = vec![(q, 1.0), (s, 1.0), (def_max, -1.0)];
    for (z, &uz) in selectors.iter().enumerate() {
        coeffs.push((uz, -rule.table.limit(&row, z)));
    }
    sub.add_row(coeffs, RowSense::Le, 0.0);

    Ok(())
}

/// Fits the piecewise-linear rule model for one month: the upper concave
/// hull of the attention-range (breakpoint, limit) points, with the last
/// piece extended over the normal range, plus the minimum-outflow pieces.
/// The restricted range is excluded; the zone binary handles it.
pub fn fit_concave_segments(
    row: &MaxOutflowRow,
    table: &MaxOutflowTable,
    ranges: &OperationRanges,
    ref_vmax: f64,
    own_vmax: f64,
    k: f64,
) -> Result<PiecewiseSegments, EcError> {
    // Interpolation points: left endpoint and limit of every regulated
    // interval at or above the restricted threshold.
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for z in 0..row.limits.len() {
        if row.limits[z].is_some() && row.breakpoints[z] >= ranges.v_res - 1e-9 {
            pts.push((row.breakpoints[z], table.limit(row, z)));
        }
    }
    if pts.len() < 2 {
        return Err(EcError::TooFewPoints);
    }

    // Upper concave hull: wherever a slope would increase relative to its
    // predecessor, the predecessor segment is extended through to the next
    // point (the offending knot drops out). Collinear knots merge.
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - b.1) - (b.1 - a.1) * (p.0 - b.0);
            if cross >= -1e-9 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }

    let mut max_segments = Vec::with_capacity(hull.len() - 1);
    for w in hull.windows(2) {
        let slope_frac = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        let intercept = w[0].1 - slope_frac * w[0].0;
        max_segments.push(Segment {
            slope: slope_frac / ref_vmax,
            intercept,
        });
    }

    // Minimum-outflow pieces on the plant's own storage: piece 1 is the
    // physical bound (drain the whole initial volume over the period),
    // pieces 2 and 3 the regulated constants.
    let phys_frac = if own_vmax > 0.0 {
        (ranges.q_min_restricted * k / own_vmax).min(ranges.v_res)
    } else {
        0.0
    };
    if phys_frac >= ranges.v_res {
        return Err(EcError::BadRule(
            "restricted minimum outflow drains more than the restricted band".into(),
        ));
    }
    let min_breakpoints = vec![0.0, phys_frac, ranges.v_res, 1.0];
    let min_segments = vec![
        Segment { slope: 1.0 / k, intercept: 0.0 },
        Segment { slope: 0.0, intercept: ranges.q_min_restricted },
        Segment { slope: 0.0, intercept: ranges.q_min_normal },
    ];

    Ok(PiecewiseSegments {
        max_segments,
        min_breakpoints,
        min_segments,
    })
}

/// Appends the piecewise-linear formulation for `plant`. No-op when the
/// plant carries no environmental flag.
pub fn add_variant_b(
    sub: &mut StageSubproblem,
    config: &SystemConfig,
    plant: usize,
    segments: &PiecewiseSegments,
    rule: &PlantRule,
    month: usize,
    incoming: &[f64],
) -> Result<(), EcError> {
    if !config.hydros[plant].ec_flag {
        return Ok(());
    }
    let row = rule.table.row(month)?;
    let r = config.hydros[plant].reference_id;
    let vmax_r = config.hydros[r].useful_volume;
    let frac = fraction_of(incoming[r], vmax_r);
    let inv_vmax_r = 1.0 / vmax_r;
    let v_res = rule.ranges.v_res;
    let q_sup = config.q_sup;
    let q = sub.vars.turbined[plant];
    let s = sub.vars.spilled[plant];

    // Single zone binary, selected by the reference fraction.
    let u = sub.lp.add_var(0.0, 0.0, 1.0);
    sub.binaries.push(u);
    sub.add_linked_row(
        vec![(u, -v_res)],
        RowSense::Le,
        frac - v_res,
        vec![(r, inv_vmax_r)],
    );
    sub.add_linked_row(
        vec![(u, 1.0 - v_res)],
        RowSense::Le,
        1.0 - frac,
        vec![(r, -inv_vmax_r)],
    );

    // Attention/normal envelope rows, deactivated inside the restricted
    // range by the big Q_sup term.
    let def_max = sub.lp.add_var(config.ec_penalty_max, 0.0, f64::INFINITY);
    sub.vars.ec_slack_max.push(def_max);
    for seg in &segments.max_segments {
        sub.add_linked_row(
            vec![(q, 1.0), (s, 1.0), (u, -q_sup), (def_max, -1.0)],
            RowSense::Le,
            seg.intercept + seg.slope * incoming[r],
            vec![(r, seg.slope)],
        );
    }

    // Restricted-range cap, deactivated outside via (1 - u).
    let res_cost = if config.price_def_res { config.ec_penalty_max } else { 0.0 };
    let def_res = sub.lp.add_var(res_cost, 0.0, f64::INFINITY);
    sub.vars.ec_slack_res.push(def_res);
    let q_max_restricted = rule.table.limit(row, 0);
    sub.add_row(
        vec![(q, 1.0), (s, 1.0), (u, q_sup), (def_res, -1.0)],
        RowSense::Le,
        q_max_restricted + q_sup,
    );

    // Minimum-outflow interval selectors on the plant's own fraction.
    let own_vmax = config.hydros[plant].useful_volume;
    let own_frac = fraction_of(incoming[plant], own_vmax);
    let inv_own = if own_vmax > 0.0 { 1.0 / own_vmax } else { 0.0 };
    let nmin = segments.min_segments.len();
    let mut selectors = Vec::with_capacity(nmin);
    for z in 0..nmin {
        let uz = sub.lp.add_var(0.0, 0.0, 1.0);
        sub.binaries.push(uz);
        selectors.push(uz);
        let lo = segments.min_breakpoints[z];
        let hi = segments.min_breakpoints[z + 1];
        let link_lo = if inv_own > 0.0 { vec![(plant, inv_own)] } else { vec![] };
        let link_hi = if inv_own > 0.0 { vec![(plant, -inv_own)] } else { vec![] };
        sub.add_linked_row(vec![(uz, lo)], RowSense::Le, own_frac, link_lo);
        sub.add_linked_row(vec![(uz, 1.0 - hi)], RowSense::Le, 1.0 - own_frac, link_hi);
    }
    sub.add_row(selectors.iter().map(|&j| (j, 1.0)).collect(), RowSense::Eq, 1.0);

    // Minimum-outflow rows carry no slack: piece 1 only asks the plant to
    // drain what it physically holds.
    for (z, seg) in segments.min_segments.iter().enumerate() {
        sub.add_linked_row(
            vec![(selectors[z], q_sup), (q, -1.0), (s, -1.0)],
            RowSense::Le,
            q_sup - seg.intercept - seg.slope * incoming[plant],
            vec![(plant, -seg.slope)],
        );
    }

    Ok(())
}
