//! Monte Carlo experiment driver: deployment sampling, scheme execution,
//! per-trial metrics, sweeps over the device count, and the quota study.
//!
//! Trials are independent work units keyed by `(seed, n, trial index)`; the
//! deployment seed does not depend on the scheme, so different schemes see
//! the same deployments and results are paired. Aggregation reduces trials
//! in index order regardless of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{distance_allocation, random_allocation};
use crate::capture::{short_term_rate, Assignment, PowerVector};
use crate::matching::{build_preferences, initial_matching, solve_sf_allocation};
use crate::model::{ChannelParams, Deployment, Sf, SF_COUNT};
use crate::power::{joint_allocate, ApproxKind};
use crate::{Error, Result};

/// Quota scenario with no co-SF interference: one device per SF.
pub const SCENARIO_1_QUOTAS: [usize; SF_COUNT] = [1; SF_COUNT];
/// Quota scenario with up to three devices on SF7.
pub const SCENARIO_2_QUOTAS: [usize; SF_COUNT] = [3, 1, 1, 1, 1, 1];

/// Allocation scheme run by a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Initial matching only, at P_max.
    PropInitial,
    /// Initial matching plus refinement, at P_max.
    PropSf,
    /// Matching followed by bisection power allocation, linear approximation.
    PropSfLinear,
    /// Matching followed by bisection power allocation, quadratic approximation.
    PropSfQuadratic,
    /// Random device subset, uniformly random SFs, P_max.
    ConvRandom,
    /// Random device subset, distance-ring SFs, P_max.
    ConvDistance,
}

impl Scheme {
    pub fn all() -> [Scheme; 6] {
        [
            Scheme::PropInitial,
            Scheme::PropSf,
            Scheme::PropSfLinear,
            Scheme::PropSfQuadratic,
            Scheme::ConvRandom,
            Scheme::ConvDistance,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::PropInitial => "prop-initial",
            Scheme::PropSf => "prop-sf",
            Scheme::PropSfLinear => "prop-sf-linear",
            Scheme::PropSfQuadratic => "prop-sf-quadratic",
            Scheme::ConvRandom => "conv-random",
            Scheme::ConvDistance => "conv-distance",
        }
    }

    pub fn parse(name: &str) -> Result<Scheme> {
        Scheme::all()
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme '{name}'")))
    }

    fn id(&self) -> u64 {
        Scheme::all().iter().position(|s| s == self).unwrap() as u64
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full description of one experiment run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schemes: Vec<Scheme>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub quotas: [usize; SF_COUNT],
    pub seed: u64,
    /// Bisection accuracy in bit/s.
    pub epsilon: f64,
    pub channel: ChannelParams,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schemes: vec![Scheme::PropSf, Scheme::ConvRandom, Scheme::ConvDistance],
            n_values: (2..=20).collect(),
            trials: 1000,
            quotas: SCENARIO_1_QUOTAS,
            seed: 1,
            epsilon: 1.0,
            channel: ChannelParams::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() || self.n_values.is_empty() {
            return Err(Error::InvalidParameter("schemes and n values must be non-empty".into()));
        }
        if self.n_values.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("device counts must be at least 2".into()));
        }
        if self.quotas.iter().any(|&q| q == 0) {
            return Err(Error::InvalidParameter("quotas must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deployment seed for a trial; identical across schemes so comparisons are
/// paired.
pub fn deployment_seed(master: u64, n: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(master ^ 0xD3) ^ splitmix64(n as u64) ^ (trial as u64))
}

/// Scheme-private randomness for a trial.
pub fn scheme_seed(master: u64, scheme: Scheme, n: usize, trial: usize) -> u64 {
    splitmix64(deployment_seed(master, n, trial) ^ splitmix64(0xA1 ^ scheme.id()))
}

/// Sample device positions uniformly over the disk of the cell.
pub fn sample_deployment(
    n: usize,
    channel: &ChannelParams,
    quotas: [usize; SF_COUNT],
    seed: u64,
) -> Result<Deployment> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("deployment sampling needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distances = (0..n)
        .map(|_| {
            // Uniform over the disk area: r = R * sqrt(u), u in (0, 1].
            let u: f64 = 1.0 - rng.random::<f64>();
            channel.cell_radius_m * u.sqrt()
        })
        .collect();
    Deployment::new(distances, channel.clone(), quotas)
}

/// Jain's fairness index over non-negative utilities; the second value is
/// true when the index is undefined (all-zero input) and 0 is reported.
pub fn jain_index(utilities: &[f64]) -> (f64, bool) {
    if utilities.is_empty() {
        return (0.0, true);
    }
    let sum: f64 = utilities.iter().sum();
    let sum_sq: f64 = utilities.iter().map(|u| u * u).sum();
    if sum_sq == 0.0 {
        return (0.0, true);
    }
    (sum * sum / (utilities.len() as f64 * sum_sq), false)
}

/// Everything measured on a single trial.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrialMetrics {
    /// Minimum short-term rate over assigned devices, bit/s.
    pub min_rate_bps: f64,
    /// Mean short-term rate over assigned devices, bit/s.
    pub mean_rate_bps: f64,
    pub jain: f64,
    pub jain_undefined: bool,
    /// Mean consumed power over assigned devices, mW.
    pub mean_power_mw: f64,
    /// SFs left unused although N > M.
    pub c5_violations: usize,
    pub swap_count: usize,
    pub assigned: usize,
    pub unassigned: usize,
    /// Power phase found no feasible rate target and kept uniform P_max.
    pub fallback: bool,
}

/// Run one scheme on one sampled deployment.
pub fn run_trial(spec: &ExperimentSpec, scheme: Scheme, n: usize, trial: usize) -> Result<TrialMetrics> {
    let dep_seed = deployment_seed(spec.seed, n, trial);
    let dep = sample_deployment(n, &spec.channel, spec.quotas, dep_seed)?;
    run_trial_on(&dep, spec, scheme, scheme_seed(spec.seed, scheme, n, trial))
}

/// Run one scheme on a prepared deployment (exposed for paired tests).
pub fn run_trial_on(
    dep: &Deployment,
    spec: &ExperimentSpec,
    scheme: Scheme,
    seed: u64,
) -> Result<TrialMetrics> {
    let active = dep.sf_table.total_quota().min(dep.device_count());
    let p_max = dep.channel.p_max_mw();

    let (assignment, power, swap_count, fallback) = match scheme {
        Scheme::PropInitial => {
            let prefs = build_preferences(dep);
            let state = initial_matching(&prefs, dep, spec.quotas);
            let p = PowerVector::uniform(&state.assignment, p_max);
            (state.assignment, p, 0, false)
        }
        Scheme::PropSf => {
            let state = solve_sf_allocation(dep, spec.quotas);
            let p = PowerVector::uniform(&state.assignment, p_max);
            (state.assignment, p, state.swap_count, false)
        }
        Scheme::PropSfLinear | Scheme::PropSfQuadratic => {
            let kind = if scheme == Scheme::PropSfLinear {
                ApproxKind::Linear
            } else {
                ApproxKind::Quadratic
            };
            let joint = joint_allocate(dep, spec.quotas, kind, 1, spec.epsilon, seed)?;
            let fallback = joint.power_report.as_ref().map(|r| r.fallback).unwrap_or(false);
            (joint.matching.assignment, joint.power, joint.matching.swap_count, fallback)
        }
        Scheme::ConvRandom => {
            let a = random_allocation(dep, active, seed);
            let p = PowerVector::uniform(&a, p_max);
            (a, p, 0, false)
        }
        Scheme::ConvDistance => {
            let a = distance_allocation(dep, active, seed);
            let p = PowerVector::uniform(&a, p_max);
            (a, p, 0, false)
        }
    };

    Ok(metrics_for(dep, &assignment, &power, swap_count, fallback)?)
}

/// Compute the trial metrics for a final (assignment, power) pair.
pub fn metrics_for(
    dep: &Deployment,
    assignment: &Assignment,
    power: &PowerVector,
    swap_count: usize,
    fallback: bool,
) -> Result<TrialMetrics> {
    let mut utilities = Vec::with_capacity(assignment.assigned_count());
    for (n, m) in assignment.assigned_pairs() {
        utilities.push(short_term_rate(n, m, assignment, power, dep)?);
    }
    let assigned = utilities.len();
    let unassigned = dep.device_count() - assigned;
    let (jain, jain_undefined) = jain_index(&utilities);
    let min_rate_bps = utilities.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_rate_bps = if assigned > 0 { utilities.iter().sum::<f64>() / assigned as f64 } else { 0.0 };
    let c5_violations = if dep.device_count() > SF_COUNT {
        Sf::all().iter().filter(|&&m| assignment.members(m).is_empty()).count()
    } else {
        0
    };

    Ok(TrialMetrics {
        min_rate_bps: if assigned > 0 { min_rate_bps } else { 0.0 },
        mean_rate_bps,
        jain,
        jain_undefined,
        mean_power_mw: power.mean_mw(),
        c5_violations,
        swap_count,
        assigned,
        unassigned,
        fallback,
    })
}

/// Metrics of every trial for one (scheme, n) cell, in trial order.
pub fn run_trials(spec: &ExperimentSpec, scheme: Scheme, n: usize) -> Vec<Result<TrialMetrics>> {
    (0..spec.trials)
        .into_par_iter()
        .map(|trial| run_trial(spec, scheme, n, trial))
        .collect()
}

/// One aggregated record: mean and normal-approximation 95% CI half-width of
/// a metric over the trials of a (scheme, n) cell.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub scheme: Scheme,
    pub n: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub ci95_half: f64,
    pub trials: usize,
}

/// Names and extractors of the aggregated metrics, in output order.
pub const METRIC_NAMES: [&str; 8] = [
    "min_rate_bps",
    "mean_rate_bps",
    "jain",
    "mean_power_mw",
    "c5_violations",
    "swap_count",
    "unassigned",
    "fallback_rate",
];

fn metric_value(metrics: &TrialMetrics, name: &str) -> f64 {
    match name {
        "min_rate_bps" => metrics.min_rate_bps,
        "mean_rate_bps" => metrics.mean_rate_bps,
        "jain" => metrics.jain,
        "mean_power_mw" => metrics.mean_power_mw,
        "c5_violations" => metrics.c5_violations as f64,
        "swap_count" => metrics.swap_count as f64,
        "unassigned" => metrics.unassigned as f64,
        "fallback_rate" => if metrics.fallback { 1.0 } else { 0.0 },
        other => unreachable!("unknown metric {other}"),
    }
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Result of a full sweep: aggregated records plus the count of trials that
/// failed in the solver.
#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
    pub solver_failures: usize,
}

/// Aggregate `run_trial` over every (scheme, n, metric) cell.
pub fn sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    spec.validate()?;
    let mut records = Vec::new();
    let mut solver_failures = 0usize;
    for &scheme in &spec.schemes {
        for &n in &spec.n_values {
            let outcomes = run_trials(spec, scheme, n);
            let mut ok = Vec::with_capacity(outcomes.len());
            for outcome in outcomes {
                match outcome {
                    Ok(m) => ok.push(m),
                    Err(Error::SolverFailure(_)) => solver_failures += 1,
                    Err(e) => return Err(e),
                }
            }
            for name in METRIC_NAMES {
                let values: Vec<f64> = ok.iter().map(|m| metric_value(m, name)).collect();
                let (mean, ci95_half) = mean_and_ci(&values);
                records.push(SweepRecord { scheme, n, metric: name, mean, ci95_half, trials: ok.len() });
            }
        }
    }
    Ok(SweepReport { records, solver_failures })
}

/// Table of mean per-SF minimal throughput for uniform quota candidates.
#[derive(Clone, Debug, Serialize)]
pub struct QuotaStudy {
    /// Candidate uniform quotas, ascending (row index + 1).
    pub quota_values: Vec<usize>,
    /// `cells[q-1][sf]`: mean over trials of the minimal rate on that SF
    /// when every SF holds exactly q ring-confined devices, bit/s.
    pub cells_bps: Vec<[f64; SF_COUNT]>,
    /// Largest candidate quota per SF whose cell stays at or above the
    /// 1 bit/s target (1 if none qualifies).
    pub selected: [usize; SF_COUNT],
}

/// Quota study: for each uniform quota q, place exactly q devices in every
/// SF's distance ring (sampled uniformly over the ring area), transmit at
/// P_max, and average each SF's minimal member rate over the trials.
pub fn quota_study(
    channel: &ChannelParams,
    max_quota: usize,
    trials: usize,
    seed: u64,
) -> Result<QuotaStudy> {
    channel.validate()?;
    if max_quota == 0 || trials == 0 {
        return Err(Error::InvalidParameter("quota study needs max_quota >= 1 and trials >= 1".into()));
    }

    let mut cells_bps = Vec::with_capacity(max_quota);
    for q in 1..=max_quota {
        let mut quotas = [0usize; SF_COUNT];
        quotas.iter_mut().for_each(|s| *s = q);

        let sums: [f64; SF_COUNT] = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
                    splitmix64(seed ^ (q as u64)) ^ trial as u64,
                ));
                let mut distances = Vec::with_capacity(SF_COUNT * q);
                let probe = Deployment::new(vec![1.0], channel.clone(), quotas)
                    .expect("probe deployment is valid");
                for m in Sf::all() {
                    let inner = probe.sf_table.ring_inner(m);
                    let outer = probe.sf_table.get(m).coverage_m.min(channel.cell_radius_m);
                    for _ in 0..q {
                        // Uniform over the ring area.
                        let u: f64 = 1.0 - rng.random::<f64>();
                        distances.push((inner * inner + u * (outer * outer - inner * inner)).sqrt());
                    }
                }
                let dep = Deployment::new(distances, channel.clone(), quotas)
                    .expect("ring samples stay inside the cell");
                let mut assignment = Assignment::new(dep.device_count(), quotas);
                for (slot, m) in Sf::all().into_iter().enumerate() {
                    for k in 0..q {
                        assignment.assign(slot * q + k, m).expect("exactly quota devices per SF");
                    }
                }
                let power = PowerVector::uniform(&assignment, dep.channel.p_max_mw());
                let mut mins = [f64::INFINITY; SF_COUNT];
                for (n, m) in assignment.assigned_pairs() {
                    let rate = short_term_rate(n, m, &assignment, &power, &dep)
                        .expect("assignment is consistent");
                    let slot = &mut mins[m.index()];
                    *slot = slot.min(rate);
                }
                mins
            })
            .reduce(
                || [0.0; SF_COUNT],
                |mut acc, mins| {
                    for (a, m) in acc.iter_mut().zip(mins) {
                        *a += m;
                    }
                    acc
                },
            );

        let mut row = [0.0; SF_COUNT];
        for (slot, sum) in row.iter_mut().zip(sums) {
            *slot = sum / trials as f64;
        }
        cells_bps.push(row);
    }

    let mut selected = [1usize; SF_COUNT];
    for sf_idx in 0..SF_COUNT {
        for (row, &q) in cells_bps.iter().zip((1..=max_quota).collect::<Vec<_>>().iter()) {
            if row[sf_idx] >= 1.0 {
                selected[sf_idx] = q;
            }
        }
    }

    Ok(QuotaStudy { quota_values: (1..=max_quota).collect(), cells_bps, selected })
}
