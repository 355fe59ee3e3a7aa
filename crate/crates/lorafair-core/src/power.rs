//! Max-min transmit power allocation for a fixed SF assignment.
//!
//! The rate constraints `R_m * P_cap >= eta` are non-linear, so they are
//! replaced by Taylor approximations of the log terms: a first-order
//! (linear) version and a second-order (quadratic) version. A bisection over
//! the rate target eta solves a feasibility subproblem per probe and keeps
//! the last feasible power vector.

use crate::capture::{short_term_rate, Assignment, PowerVector, P_FLOOR_MW};
use crate::feasibility::{solve_linear, solve_quadratic, Status};
use crate::matching::solve_sf_allocation;
use crate::model::{db_to_linear, Deployment, Sf, CO_SF_THRESHOLD_DB, INTER_SF_THRESHOLD_DB, SF_COUNT};
use crate::{Error, MatchState, Result};

/// Which constraint approximation backs the feasibility subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Linear,
    Quadratic,
}

impl std::fmt::Display for ApproxKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApproxKind::Linear => write!(f, "linear"),
            ApproxKind::Quadratic => write!(f, "quadratic"),
        }
    }
}

/// One inequality `constant + linear.p + p'.quad.p <= 0` over the assigned
/// powers.
#[derive(Clone, Debug)]
pub struct ConstraintRow {
    /// Device whose rate the row protects.
    pub device: usize,
    pub sf: Sf,
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Row-major coefficient matrix for the quadratic kind.
    pub quad: Option<Vec<f64>>,
    /// Largest coefficient magnitude, used to normalize violations.
    pub scale: f64,
}

impl ConstraintRow {
    pub fn eval(&self, p: &[f64]) -> f64 {
        let n = self.linear.len();
        let mut v = self.constant;
        for k in 0..n {
            v += self.linear[k] * p[k];
        }
        if let Some(q) = &self.quad {
            for k in 0..n {
                let pk = p[k];
                if pk == 0.0 {
                    continue;
                }
                for l in 0..n {
                    v += q[k * n + l] * pk * p[l];
                }
            }
        }
        v
    }

    /// Gradient of the row value, written into `out`.
    pub fn gradient(&self, p: &[f64], out: &mut [f64]) {
        let n = self.linear.len();
        out[..n].copy_from_slice(&self.linear);
        if let Some(q) = &self.quad {
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += (q[k * n + l] + q[l * n + k]) * p[l];
                }
                out[k] += acc;
            }
        }
    }

    /// Positive part of the row value divided by the row scale.
    pub fn normalized_violation(&self, p: &[f64]) -> f64 {
        (self.eval(p) / self.scale).max(0.0)
    }

    fn finish_scale(&mut self) {
        let mut s = self.constant.abs();
        for &c in &self.linear {
            s = s.max(c.abs());
        }
        if let Some(q) = &self.quad {
            for &c in q {
                s = s.max(c.abs());
            }
        }
        self.scale = if s > 0.0 { s } else { 1.0 };
    }
}

/// The feasibility subproblem for one rate target: one row per assigned
/// device plus shared box bounds.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub kind: ApproxKind,
    /// Assigned devices in ascending order; row coefficients index into this.
    pub vars: Vec<usize>,
    pub lower_mw: f64,
    pub upper_mw: f64,
    pub rows: Vec<ConstraintRow>,
}

impl ConstraintSystem {
    pub fn var_index(&self, device: usize) -> Option<usize> {
        self.vars.binary_search(&device).ok()
    }

    /// Largest normalized violation across rows.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        self.rows.iter().map(|r| r.normalized_violation(p)).fold(0.0, f64::max)
    }

    pub fn power_vector(&self, p: &[f64]) -> PowerVector {
        let mut map = std::collections::BTreeMap::new();
        for (idx, &device) in self.vars.iter().enumerate() {
            map.insert(device, p[idx].clamp(P_FLOOR_MW, self.upper_mw));
        }
        PowerVector::from_map(map)
    }
}

struct RowContext<'a> {
    a: &'a Assignment,
    dep: &'a Deployment,
    vars: Vec<usize>,
    theta_co: f64,
    ln2_minus_half: f64,
    ln2_minus_five_eighths: f64,
}

impl<'a> RowContext<'a> {
    fn new(a: &'a Assignment, dep: &'a Deployment) -> Result<Self> {
        let vars: Vec<usize> = a.assigned_pairs().map(|(n, _)| n).collect();
        if vars.is_empty() {
            return Err(Error::InvalidAssignment("power allocation needs a non-empty assignment".into()));
        }
        Ok(RowContext {
            a,
            dep,
            vars,
            theta_co: db_to_linear(CO_SF_THRESHOLD_DB),
            ln2_minus_half: std::f64::consts::LN_2 - 0.5,
            ln2_minus_five_eighths: std::f64::consts::LN_2 - 0.625,
        })
    }

    /// Interferers of (n, m): every other assigned device on a different SF,
    /// plus the co-SF members when the SF is shared.
    fn interferers(&self, n: usize, m: Sf, include_co: bool) -> Vec<usize> {
        self.a
            .assigned_pairs()
            .filter(|&(i, j)| i != n && (j != m || include_co))
            .map(|(i, _)| i)
            .collect()
    }

    fn ratio_pow(&self, n: usize, i: usize) -> f64 {
        (self.dep.distances_m[n] / self.dep.distances_m[i]).powf(self.dep.channel.path_loss_exponent)
    }

    /// theta * sigma^2 * r_n^alpha / A(f_c) = theta / mean CNR.
    fn noise_term(&self, n: usize, theta: f64) -> f64 {
        theta / self.dep.mean_cnr(n)
    }
}

/// Build the linearized feasibility system for a rate target.
pub fn build_linear_system(a: &Assignment, dep: &Deployment, eta: f64) -> Result<ConstraintSystem> {
    if eta <= 0.0 {
        return Err(Error::InvalidParameter(format!("rate target {eta} must be positive")));
    }
    let ctx = RowContext::new(a, dep)?;
    let nv = ctx.vars.len();
    let mut rows = Vec::with_capacity(nv);

    for (n, m) in a.assigned_pairs() {
        let idx_n = ctx.vars.binary_search(&n).expect("vars lists every assigned device");
        let ln_eta = (eta / dep.sf_table.get(m).bitrate_bps).ln();
        let shared = a.members(m).len() >= 2;
        let mut row = ConstraintRow {
            device: n,
            sf: m,
            constant: 0.0,
            linear: vec![0.0; nv],
            quad: None,
            scale: 1.0,
        };

        if !shared {
            // Sole member: the inter-SF threshold is small, so the log terms
            // are expanded to first order around zero.
            let theta = db_to_linear(INTER_SF_THRESHOLD_DB[m.index()]);
            row.constant = ctx.noise_term(n, theta);
            row.linear[idx_n] += ln_eta;
            for i in ctx.interferers(n, m, false) {
                let idx_i = ctx.vars.binary_search(&i).unwrap();
                row.linear[idx_i] += theta * ctx.ratio_pow(n, i);
            }
        } else {
            // Shared SF: the 6 dB co-SF threshold makes the log argument
            // order one, so the expansion is taken where it equals 2.
            let theta = ctx.theta_co;
            row.constant = ctx.noise_term(n, theta);
            let interferers = ctx.interferers(n, m, true);
            row.linear[idx_n] += ln_eta + interferers.len() as f64 * ctx.ln2_minus_half;
            for i in interferers {
                let idx_i = ctx.vars.binary_search(&i).unwrap();
                row.linear[idx_i] += 0.5 * theta * ctx.ratio_pow(n, i);
            }
        }

        row.finish_scale();
        rows.push(row);
    }

    Ok(ConstraintSystem {
        kind: ApproxKind::Linear,
        vars: ctx.vars,
        lower_mw: P_FLOOR_MW,
        upper_mw: dep.channel.p_max_mw(),
        rows,
    })
}

/// Build the quadratic feasibility system for a rate target.
pub fn build_quadratic_system(a: &Assignment, dep: &Deployment, eta: f64) -> Result<ConstraintSystem> {
    if eta <= 0.0 {
        return Err(Error::InvalidParameter(format!("rate target {eta} must be positive")));
    }
    let ctx = RowContext::new(a, dep)?;
    let nv = ctx.vars.len();
    let mut rows = Vec::with_capacity(nv);

    for (n, m) in a.assigned_pairs() {
        let idx_n = ctx.vars.binary_search(&n).expect("vars lists every assigned device");
        let ln_eta = (eta / dep.sf_table.get(m).bitrate_bps).ln();
        let shared = a.members(m).len() >= 2;
        let mut row = ConstraintRow {
            device: n,
            sf: m,
            constant: 0.0,
            linear: vec![0.0; nv],
            quad: Some(vec![0.0; nv * nv]),
            scale: 1.0,
        };
        let quad = row.quad.as_mut().unwrap();

        if !shared {
            let theta = db_to_linear(INTER_SF_THRESHOLD_DB[m.index()]);
            quad[idx_n * nv + idx_n] += ln_eta;
            row.linear[idx_n] += ctx.noise_term(n, theta);
            for i in ctx.interferers(n, m, false) {
                let idx_i = ctx.vars.binary_search(&i).unwrap();
                let ratio = ctx.ratio_pow(n, i);
                quad[idx_n * nv + idx_i] += theta * ratio;
                quad[idx_i * nv + idx_i] -= 0.5 * theta * theta * ratio * ratio;
            }
        } else {
            let theta = ctx.theta_co;
            let interferers = ctx.interferers(n, m, true);
            quad[idx_n * nv + idx_n] += ln_eta + interferers.len() as f64 * ctx.ln2_minus_five_eighths;
            row.linear[idx_n] += ctx.noise_term(n, theta);
            for i in interferers {
                let idx_i = ctx.vars.binary_search(&i).unwrap();
                let ratio = ctx.ratio_pow(n, i);
                quad[idx_n * nv + idx_i] += 0.75 * theta * ratio;
                quad[idx_i * nv + idx_i] -= theta * theta * ratio * ratio / 8.0;
            }
        }

        row.finish_scale();
        rows.push(row);
    }

    Ok(ConstraintSystem {
        kind: ApproxKind::Quadratic,
        vars: ctx.vars,
        lower_mw: P_FLOOR_MW,
        upper_mw: dep.channel.p_max_mw(),
        rows,
    })
}

/// Rate-target interval for the bisection.
#[derive(Clone, Copy, Debug)]
pub struct RateTarget {
    pub eta_min: f64,
    pub eta_max: f64,
    pub epsilon: f64,
}

impl RateTarget {
    /// eta is capped by the smallest bit-rate among occupied SFs; empty SFs
    /// do not constrain the target.
    pub fn for_assignment(a: &Assignment, dep: &Deployment, epsilon: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter("bisection epsilon must be positive".into()));
        }
        let eta_max = a
            .occupied_sfs()
            .map(|m| dep.sf_table.get(m).bitrate_bps)
            .fold(f64::INFINITY, f64::min);
        if !eta_max.is_finite() {
            return Err(Error::InvalidAssignment("no occupied SF to optimize".into()));
        }
        Ok(RateTarget { eta_min: 0.0, eta_max, epsilon })
    }
}

/// Feasibility verdict for one probe of the bisection.
pub enum ProbeOutcome<W> {
    Feasible(W),
    Infeasible,
}

/// Outcome of a generic bisection run.
#[derive(Clone, Debug)]
pub struct BisectionOutcome<W> {
    /// Largest target proved feasible, with its witness; `None` when every
    /// probe was infeasible.
    pub best: Option<(f64, W)>,
    pub iterations: usize,
}

/// Bisection over the rate target: halve the interval until it is shorter
/// than epsilon, remembering the last feasible witness.
pub fn bisect_target<W, F>(target: RateTarget, mut probe: F) -> Result<BisectionOutcome<W>>
where
    F: FnMut(f64) -> Result<ProbeOutcome<W>>,
{
    let mut lo = target.eta_min;
    let mut hi = target.eta_max;
    let mut best = None;
    let mut iterations = 0;
    while hi - lo >= target.epsilon {
        iterations += 1;
        let eta = 0.5 * (lo + hi);
        match probe(eta)? {
            ProbeOutcome::Feasible(w) => {
                best = Some((eta, w));
                lo = eta;
            }
            ProbeOutcome::Infeasible => hi = eta,
        }
    }
    Ok(BisectionOutcome { best, iterations })
}

/// Result of the power-allocation phase on a fixed assignment.
#[derive(Clone, Debug)]
pub struct PowerReport {
    pub kind: ApproxKind,
    pub iterations: usize,
    /// Largest feasible target found; 0 when the fallback triggered.
    pub eta_achieved: f64,
    /// Exact minimum short-term rate at the returned powers.
    pub true_min_rate: f64,
    /// eta_achieved - true_min_rate: how optimistic the approximation was.
    pub approximation_slack: f64,
    /// No target was feasible; powers fell back to uniform P_max.
    pub fallback: bool,
    pub power: PowerVector,
}

/// Max-min power optimization via bisection; `kind` selects the feasibility
/// subproblem and `seed` drives the quadratic solver's multi-start sampling.
pub fn bisect_power(
    a: &Assignment,
    dep: &Deployment,
    kind: ApproxKind,
    epsilon: f64,
    seed: u64,
) -> Result<PowerReport> {
    let target = RateTarget::for_assignment(a, dep, epsilon)?;
    let outcome = bisect_target(target, |eta| {
        let result = match kind {
            ApproxKind::Linear => solve_linear(&build_linear_system(a, dep, eta)?),
            ApproxKind::Quadratic => solve_quadratic(&build_quadratic_system(a, dep, eta)?, seed),
        };
        match result.status {
            Status::Feasible(witness) => Ok(ProbeOutcome::Feasible(witness)),
            Status::Infeasible => Ok(ProbeOutcome::Infeasible),
            Status::NumericalFailure => {
                Err(Error::SolverFailure(format!("{kind} feasibility solver failed at eta={eta}")))
            }
        }
    })?;

    let (eta_achieved, power, fallback) = match outcome.best {
        Some((eta, witness)) => {
            let vars: Vec<usize> = a.assigned_pairs().map(|(n, _)| n).collect();
            let mut map = std::collections::BTreeMap::new();
            for (idx, device) in vars.into_iter().enumerate() {
                map.insert(device, witness[idx].clamp(P_FLOOR_MW, dep.channel.p_max_mw()));
            }
            (eta, PowerVector::from_map(map), false)
        }
        None => (0.0, PowerVector::uniform(a, dep.channel.p_max_mw()), true),
    };

    let true_min_rate = evaluate_true_min_rate(a, &power, dep)?;
    Ok(PowerReport {
        kind,
        iterations: outcome.iterations,
        eta_achieved,
        true_min_rate,
        approximation_slack: eta_achieved - true_min_rate,
        fallback,
        power,
    })
}

/// Exact minimum short-term rate over assigned devices, using the closed
/// forms rather than any approximation.
pub fn evaluate_true_min_rate(a: &Assignment, p: &PowerVector, dep: &Deployment) -> Result<f64> {
    let mut min = f64::INFINITY;
    for (n, m) in a.assigned_pairs() {
        min = min.min(short_term_rate(n, m, a, p, dep)?);
    }
    if min.is_finite() {
        Ok(min)
    } else {
        Err(Error::InvalidAssignment("no assigned device to evaluate".into()))
    }
}

/// Result of the joint SF + power pipeline.
#[derive(Clone, Debug)]
pub struct JointAllocation {
    pub matching: MatchState,
    pub power: PowerVector,
    /// Report of the last power phase, whether or not it was kept.
    pub power_report: Option<PowerReport>,
    /// True when the optimized powers beat uniform P_max and were kept.
    pub power_accepted: bool,
    pub true_min_rate: f64,
}

/// Alternate the SF phase (at P_max) and the power phase, keeping a new
/// power vector only when it improves the exact objective. The SF phase is
/// deterministic for a fixed deployment, so with the default single
/// iteration this is one matching pass plus one bisection.
pub fn joint_allocate(
    dep: &Deployment,
    quotas: [usize; SF_COUNT],
    kind: ApproxKind,
    iterations: usize,
    epsilon: f64,
    seed: u64,
) -> Result<JointAllocation> {
    assert!(iterations >= 1, "joint allocation needs at least one iteration");
    let matching = solve_sf_allocation(dep, quotas);
    let mut power = PowerVector::uniform(&matching.assignment, dep.channel.p_max_mw());
    if matching.assignment.assigned_count() == 0 {
        return Ok(JointAllocation {
            matching,
            power,
            power_report: None,
            power_accepted: false,
            true_min_rate: 0.0,
        });
    }
    let mut best_rate = evaluate_true_min_rate(&matching.assignment, &power, dep)?;
    let mut power_report = None;
    let mut power_accepted = false;

    for _ in 0..iterations {
        let report = bisect_power(&matching.assignment, dep, kind, epsilon, seed)?;
        let improved = report.true_min_rate > best_rate;
        if improved {
            best_rate = report.true_min_rate;
            power = report.power.clone();
            power_accepted = true;
        }
        power_report = Some(report);
        if !improved {
            // The matching phase is deterministic for the deployment, so a
            // further round would reproduce the same subproblem.
            break;
        }
    }

    Ok(JointAllocation { matching, power, power_report, power_accepted, true_min_rate: best_rate })
}
