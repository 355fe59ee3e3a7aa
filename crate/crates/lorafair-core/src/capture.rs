//! Success probabilities under Rayleigh fading.
//!
//! With exponentially distributed CNRs, the probability that a device's SINR
//! clears the capture threshold has a closed form: a noise term
//! `exp(-theta * sigma^2 * r^alpha / (A * p))` times one factor
//! `1 / (theta * (p_i/p_n) * (r_n/r_i)^alpha + 1)` per active interferer.
//! A device alone on its SF faces only inter-SF interference (threshold
//! `theta_m` from the table); a device sharing its SF additionally faces
//! co-SF interference at the 6 dB co-SF threshold.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{db_to_linear, Deployment, Sf, CO_SF_THRESHOLD_DB, INTER_SF_THRESHOLD_DB, SF_COUNT};
use crate::{Error, Result};

/// Smallest admissible transmit power in mW (-60 dBm). The closed forms
/// divide by the device's power, so assigned devices are clamped to this
/// floor rather than allowed to reach zero.
pub const P_FLOOR_MW: f64 = 1e-6;

/// Above this many interference factors the product is accumulated in
/// log-space to avoid underflow.
const LOG_SPACE_FACTOR_LIMIT: usize = 32;

/// Capture thresholds in linear scale.
#[derive(Clone, Debug)]
pub struct CaptureThresholds {
    pub theta_co_linear: f64,
    pub theta_inter_linear: [f64; SF_COUNT],
}

impl Default for CaptureThresholds {
    fn default() -> Self {
        CaptureThresholds {
            theta_co_linear: db_to_linear(CO_SF_THRESHOLD_DB),
            theta_inter_linear: INTER_SF_THRESHOLD_DB.map(db_to_linear),
        }
    }
}

/// Which SINR condition the Monte Carlo oracle checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdKind {
    InterSf,
    CoSf,
}

/// The binary SF assignment: a partial map device -> SF with per-SF member
/// lists and quotas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    sf_of: Vec<Option<Sf>>,
    members: [Vec<usize>; SF_COUNT],
    quotas: [usize; SF_COUNT],
}

impl Assignment {
    pub fn new(device_count: usize, quotas: [usize; SF_COUNT]) -> Self {
        Assignment { sf_of: vec![None; device_count], members: Default::default(), quotas }
    }

    pub fn device_count(&self) -> usize {
        self.sf_of.len()
    }

    pub fn sf_of(&self, device: usize) -> Option<Sf> {
        self.sf_of[device]
    }

    pub fn members(&self, m: Sf) -> &[usize] {
        &self.members[m.index()]
    }

    pub fn quotas(&self) -> [usize; SF_COUNT] {
        self.quotas
    }

    pub fn assigned_count(&self) -> usize {
        self.sf_of.iter().filter(|s| s.is_some()).count()
    }

    /// All assigned (device, SF) pairs in ascending device order.
    pub fn assigned_pairs(&self) -> impl Iterator<Item = (usize, Sf)> + '_ {
        self.sf_of.iter().enumerate().filter_map(|(n, s)| s.map(|m| (n, m)))
    }

    /// SFs with at least one member.
    pub fn occupied_sfs(&self) -> impl Iterator<Item = Sf> + '_ {
        Sf::all().into_iter().filter(|&m| !self.members[m.index()].is_empty())
    }

    /// Assign a device, enforcing uniqueness and the SF quota.
    pub fn assign(&mut self, device: usize, m: Sf) -> Result<()> {
        if self.sf_of[device].is_some() {
            return Err(Error::InvalidAssignment(format!("device {device} already assigned")));
        }
        if self.members[m.index()].len() >= self.quotas[m.index()] {
            return Err(Error::InvalidAssignment(format!("{m} quota {} exhausted", self.quotas[m.index()])));
        }
        self.sf_of[device] = Some(m);
        self.members[m.index()].push(device);
        Ok(())
    }

    /// Assign without the quota check. The random baseline is defined to
    /// ignore quotas and coverage, so it needs this escape hatch.
    pub fn assign_unchecked(&mut self, device: usize, m: Sf) {
        assert!(self.sf_of[device].is_none(), "device {device} already assigned");
        self.sf_of[device] = Some(m);
        self.members[m.index()].push(device);
    }

    pub fn unassign(&mut self, device: usize) -> Option<Sf> {
        let m = self.sf_of[device].take()?;
        let list = &mut self.members[m.index()];
        let pos = list.iter().position(|&d| d == device).expect("member lists track sf_of");
        list.remove(pos);
        Some(m)
    }

    /// Move a device to another SF keeping its slot position when replacing
    /// a swapped-out partner is not involved.
    pub fn reassign(&mut self, device: usize, to: Sf) -> Result<()> {
        self.unassign(device);
        self.assign(device, to)
    }

    /// Exchange the SFs of two assigned devices, preserving list positions.
    pub fn swap(&mut self, a: usize, b: usize) {
        let ma = self.sf_of[a].expect("swap requires assigned devices");
        let mb = self.sf_of[b].expect("swap requires assigned devices");
        let pa = self.members[ma.index()].iter().position(|&d| d == a).unwrap();
        let pb = self.members[mb.index()].iter().position(|&d| d == b).unwrap();
        self.members[ma.index()][pa] = b;
        self.members[mb.index()][pb] = a;
        self.sf_of[a] = Some(mb);
        self.sf_of[b] = Some(ma);
    }

    /// Check C3 (uniqueness, implied by representation) and C4 (quotas).
    pub fn quotas_satisfied(&self) -> bool {
        self.members.iter().zip(self.quotas).all(|(list, q)| list.len() <= q)
    }

    /// Bidirectional consistency between `sf_of` and the member lists.
    pub fn is_consistent(&self) -> bool {
        let forward = self
            .assigned_pairs()
            .all(|(n, m)| self.members[m.index()].contains(&n));
        let backward = self.members.iter().enumerate().all(|(idx, list)| {
            list.iter().all(|&n| self.sf_of[n] == Some(Sf::from_index(idx)))
        });
        forward && backward
    }
}

/// Transmit powers in mW for assigned devices.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerVector {
    mw: BTreeMap<usize, f64>,
}

impl PowerVector {
    /// Every assigned device at the same power.
    pub fn uniform(assignment: &Assignment, p_mw: f64) -> Self {
        let mw = assignment.assigned_pairs().map(|(n, _)| (n, p_mw.max(P_FLOOR_MW))).collect();
        PowerVector { mw }
    }

    pub fn from_map(mw: BTreeMap<usize, f64>) -> Self {
        let mw = mw.into_iter().map(|(n, p)| (n, p.max(P_FLOOR_MW))).collect();
        PowerVector { mw }
    }

    pub fn get(&self, device: usize) -> Option<f64> {
        self.mw.get(&device).copied()
    }

    pub fn set(&mut self, device: usize, p_mw: f64) {
        self.mw.insert(device, p_mw.max(P_FLOOR_MW));
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mw.iter().map(|(&n, &p)| (n, p))
    }

    pub fn mean_mw(&self) -> f64 {
        if self.mw.is_empty() {
            0.0
        } else {
            self.mw.values().sum::<f64>() / self.mw.len() as f64
        }
    }

    pub fn within_bounds(&self, p_max_mw: f64) -> bool {
        self.mw.values().all(|&p| (P_FLOOR_MW..=p_max_mw * (1.0 + 1e-12)).contains(&p))
    }
}

fn power_of(p: &PowerVector, device: usize) -> Result<f64> {
    p.get(device)
        .ok_or_else(|| Error::InvalidAssignment(format!("device {device} has no transmit power")))
}

/// One interference factor 1/(theta * (p_i/p_n) * (r_n/r_i)^alpha + 1).
fn interference_factor(theta: f64, p_i: f64, p_n: f64, r_n: f64, r_i: f64, alpha: f64) -> f64 {
    1.0 / (theta * (p_i / p_n) * (r_n / r_i).powf(alpha) + 1.0)
}

/// Multiply factors directly, or accumulate logs when the count is large.
fn product(factors: &[f64]) -> f64 {
    if factors.len() > LOG_SPACE_FACTOR_LIMIT {
        factors.iter().map(|f| f.ln()).sum::<f64>().exp()
    } else {
        factors.iter().product()
    }
}

fn capture_probability(
    n: usize,
    m: Sf,
    theta: f64,
    include_co_sf: bool,
    a: &Assignment,
    p: &PowerVector,
    dep: &Deployment,
) -> Result<f64> {
    let p_n = power_of(p, n)?;
    let r_n = dep.distances_m[n];
    let alpha = dep.channel.path_loss_exponent;

    // Noise term: theta * sigma^2 * r^alpha / (A * p) = theta / (mean CNR * p).
    let noise_exponent = theta / (dep.mean_cnr(n) * p_n);

    // Inter-SF interferers always contribute; co-SF members only in the
    // shared-SF case, where every factor uses the co-SF threshold.
    let mut factors = Vec::with_capacity(a.assigned_count());
    for (i, j) in a.assigned_pairs() {
        if i == n || (j == m && !include_co_sf) {
            continue;
        }
        let p_i = power_of(p, i)?;
        factors.push(interference_factor(theta, p_i, p_n, r_n, dep.distances_m[i], alpha));
    }

    Ok((-noise_exponent).exp() * product(&factors))
}

/// Capture probability for a device alone on its SF (inter-SF case).
pub fn p_cap_inter(n: usize, m: Sf, a: &Assignment, p: &PowerVector, dep: &Deployment) -> Result<f64> {
    if a.members(m) != [n] {
        return Err(Error::InvalidAssignment(format!(
            "inter-SF capture requires device {n} to be the sole member of {m}"
        )));
    }
    let theta = CaptureThresholds::default().theta_inter_linear[m.index()];
    capture_probability(n, m, theta, false, a, p, dep)
}

/// Capture probability for a device sharing its SF (co-SF case).
pub fn p_cap_co(n: usize, m: Sf, a: &Assignment, p: &PowerVector, dep: &Deployment) -> Result<f64> {
    if !a.members(m).contains(&n) {
        return Err(Error::InvalidAssignment(format!("device {n} is not assigned to {m}")));
    }
    if a.members(m).len() < 2 {
        return Err(Error::InvalidAssignment(format!("co-SF capture requires at least 2 devices on {m}")));
    }
    let theta = CaptureThresholds::default().theta_co_linear;
    capture_probability(n, m, theta, true, a, p, dep)
}

/// Success probability of a device: dispatches on the SF's occupancy.
pub fn p_cap(n: usize, m: Sf, a: &Assignment, p: &PowerVector, dep: &Deployment) -> Result<f64> {
    if a.sf_of(n) != Some(m) {
        return Err(Error::InvalidAssignment(format!("device {n} is not assigned to {m}")));
    }
    if a.members(m).len() == 1 {
        p_cap_inter(n, m, a, p, dep)
    } else {
        p_cap_co(n, m, a, p, dep)
    }
}

/// Short-term average rate: bit-rate times capture probability.
pub fn short_term_rate(n: usize, m: Sf, a: &Assignment, p: &PowerVector, dep: &Deployment) -> Result<f64> {
    Ok(dep.sf_table.get(m).bitrate_bps * p_cap(n, m, a, p, dep)?)
}

/// Monte Carlo estimate of a capture probability.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub probability: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Estimate the capture probability by sampling exponential CNRs and
/// evaluating the SINR condition directly. Independent of the closed forms;
/// used to validate them.
pub fn mc_capture_oracle(
    n: usize,
    m: Sf,
    a: &Assignment,
    p: &PowerVector,
    dep: &Deployment,
    kind: ThresholdKind,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if a.sf_of(n) != Some(m) {
        return Err(Error::InvalidAssignment(format!("device {n} is not assigned to {m}")));
    }
    let thresholds = CaptureThresholds::default();
    let theta = match kind {
        ThresholdKind::InterSf => thresholds.theta_inter_linear[m.index()],
        ThresholdKind::CoSf => thresholds.theta_co_linear,
    };

    // (power, mean CNR, is co-SF member) per interferer, plus the device itself.
    let own_power = power_of(p, n)?;
    let own_mean = dep.mean_cnr(n);
    let mut interferers = Vec::new();
    for (i, j) in a.assigned_pairs() {
        if i == n {
            continue;
        }
        let co_sf = j == m;
        if co_sf && kind == ThresholdKind::InterSf {
            continue;
        }
        interferers.push((power_of(p, i)?, dep.mean_cnr(i)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Inverse-CDF exponential draw; u in (0,1] keeps ln finite.
    let draw_exp = |rng: &mut ChaCha8Rng, mean: f64| -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        -u.ln() * mean
    };

    let mut hits = 0usize;
    for _ in 0..samples {
        let signal = draw_exp(&mut rng, own_mean) * own_power;
        let mut interference = 0.0;
        for &(p_i, mean_i) in &interferers {
            interference += draw_exp(&mut rng, mean_i) * p_i;
        }
        if signal / (interference + 1.0) >= theta {
            hits += 1;
        }
    }

    let probability = hits as f64 / samples as f64;
    let std_err = (probability * (1.0 - probability) / samples as f64).sqrt();
    Ok(McEstimate { probability, std_err, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelParams;

    fn two_device_dep(r1: f64, r2: f64, quotas: [usize; SF_COUNT]) -> Deployment {
        Deployment::new(vec![r1, r2], ChannelParams::default(), quotas).unwrap()
    }

    fn sf(v: u8) -> Sf {
        Sf::new(v).unwrap()
    }

    #[test]
    fn lone_device_with_high_power_captures() {
        let dep = two_device_dep(1.0, 500.0, [1; 6]);
        let mut a = Assignment::new(2, [1; 6]);
        a.assign(0, sf(7)).unwrap();
        // Huge power and tiny distance drive the noise exponent to zero;
        // no interferers leaves an empty product.
        let p = PowerVector::uniform(&a, 1e12);
        let got = p_cap_inter(0, sf(7), &a, &p, &dep).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn single_equal_interferer_matches_analytic_factor() {
        // Equal distance and power, negligible noise: 1/(theta+1).
        let dep = two_device_dep(100.0, 100.0, [1; 6]);
        let mut a = Assignment::new(2, [1; 6]);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(8)).unwrap();
        let p = PowerVector::uniform(&a, 1e9);
        let got = p_cap_inter(0, sf(7), &a, &p, &dep).unwrap();
        let want = 1.0 / (db_to_linear(-7.5) + 1.0);
        assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        assert!((want - 0.849).abs() < 1e-3);
    }

    #[test]
    fn symmetric_co_sf_pair_matches_analytic_factor() {
        let dep = two_device_dep(100.0, 100.0, [2, 1, 1, 1, 1, 1]);
        let mut a = Assignment::new(2, [2, 1, 1, 1, 1, 1]);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(7)).unwrap();
        let p = PowerVector::uniform(&a, 1e9);
        let got = p_cap_co(0, sf(7), &a, &p, &dep).unwrap();
        let want = 1.0 / (db_to_linear(6.0) + 1.0);
        assert!((got - want).abs() < 1e-6);
        assert!((want - 0.2008).abs() < 1e-3);

        let rate = short_term_rate(0, sf(7), &a, &p, &dep).unwrap();
        assert!((rate - want * 5468.75).abs() < 1e-2);
        assert!((rate - 1098.0).abs() < 1.0);
    }

    #[test]
    fn power_scaling_leaves_factors_invariant() {
        let dep = two_device_dep(200.0, 350.0, [1; 6]);
        let mut a = Assignment::new(2, [1; 6]);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(9)).unwrap();
        let p1 = PowerVector::uniform(&a, 2.0);
        let p2 = PowerVector::uniform(&a, 8.0);
        // Same ratios: only the noise exponent changes, and it shrinks with power.
        let c1 = p_cap_inter(0, sf(7), &a, &p1, &dep).unwrap();
        let c2 = p_cap_inter(0, sf(7), &a, &p2, &dep).unwrap();
        assert!(c2 > c1);

        let theta = db_to_linear(-7.5);
        let ratio_term = 1.0 / (theta * (200.0f64 / 350.0).powi(4) + 1.0);
        // Dividing out the noise exponent recovers the identical product term.
        let noise1 = (-theta / (dep.mean_cnr(0) * 2.0)).exp();
        let noise2 = (-theta / (dep.mean_cnr(0) * 8.0)).exp();
        assert!((c1 / noise1 - ratio_term).abs() < 1e-12);
        assert!((c2 / noise2 - ratio_term).abs() < 1e-12);
    }

    #[test]
    fn co_sf_is_harsher_than_inter_sf() {
        // Same geometry; adding a co-SF interferer must cost more than an
        // inter-SF one (extra factor and a larger threshold).
        let quotas = [2, 1, 1, 1, 1, 1];
        let dep = two_device_dep(150.0, 220.0, quotas);
        let mut inter = Assignment::new(2, quotas);
        inter.assign(0, sf(7)).unwrap();
        inter.assign(1, sf(8)).unwrap();
        let mut co = Assignment::new(2, quotas);
        co.assign(0, sf(7)).unwrap();
        co.assign(1, sf(7)).unwrap();
        let p = PowerVector::uniform(&inter, ChannelParams::default().p_max_mw());
        let p_inter = p_cap_inter(0, sf(7), &inter, &p, &dep).unwrap();
        let p_co = p_cap_co(0, sf(7), &co, &p, &dep).unwrap();
        assert!(p_co < p_inter);
    }

    #[test]
    fn co_sf_interferer_at_floor_power_contributes_unit_factor() {
        let quotas = [2, 1, 1, 1, 1, 1];
        let dep = two_device_dep(150.0, 220.0, quotas);
        let mut a = Assignment::new(2, quotas);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(7)).unwrap();
        let mut p = PowerVector::uniform(&a, ChannelParams::default().p_max_mw());
        p.set(1, 0.0); // clamped to the floor
        assert_eq!(p.get(1), Some(P_FLOOR_MW));
        let with_floor = p_cap_co(0, sf(7), &a, &p, &dep).unwrap();

        let solo = {
            let mut alone = Assignment::new(2, quotas);
            alone.assign(0, sf(7)).unwrap();
            let ps = PowerVector::uniform(&alone, ChannelParams::default().p_max_mw());
            // Same noise term but at theta_co instead of theta_inter.
            let theta = db_to_linear(6.0);
            (-theta / (dep.mean_cnr(0) * ps.get(0).unwrap())).exp()
        };
        assert!((with_floor - solo).abs() / solo < 1e-4);
    }

    #[test]
    fn dispatch_follows_occupancy() {
        let quotas = [2, 1, 1, 1, 1, 1];
        let dep = Deployment::new(vec![100.0, 300.0, 600.0], ChannelParams::default(), quotas).unwrap();
        let mut a = Assignment::new(3, quotas);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(7)).unwrap();
        a.assign(2, sf(9)).unwrap();
        let p = PowerVector::uniform(&a, 25.0);

        let via_dispatch = p_cap(0, sf(7), &a, &p, &dep).unwrap();
        let direct = p_cap_co(0, sf(7), &a, &p, &dep).unwrap();
        assert_eq!(via_dispatch, direct);

        let via_dispatch = p_cap(2, sf(9), &a, &p, &dep).unwrap();
        let direct = p_cap_inter(2, sf(9), &a, &p, &dep).unwrap();
        assert_eq!(via_dispatch, direct);

        assert!(p_cap(0, sf(9), &a, &p, &dep).is_err());
        assert!(p_cap_inter(0, sf(7), &a, &p, &dep).is_err());
        assert!(p_cap_co(2, sf(9), &a, &p, &dep).is_err());
    }

    #[test]
    fn probability_bounds_and_permutation_symmetry() {
        let quotas = [3, 3, 3, 3, 3, 3];
        let dep = Deployment::new(vec![120.0, 340.0, 560.0, 780.0], ChannelParams::default(), quotas).unwrap();
        let mut a = Assignment::new(4, quotas);
        a.assign(0, sf(8)).unwrap();
        a.assign(1, sf(8)).unwrap();
        a.assign(2, sf(10)).unwrap();
        a.assign(3, sf(12)).unwrap();
        let p = PowerVector::uniform(&a, 25.0);
        let base = p_cap(0, sf(8), &a, &p, &dep).unwrap();
        assert!((0.0..=1.0).contains(&base));

        // Exchanging the SFs of two inter-SF interferers does not change any
        // factor, so the probability is invariant under the relabeling.
        let mut b = Assignment::new(4, quotas);
        b.assign(0, sf(8)).unwrap();
        b.assign(1, sf(8)).unwrap();
        b.assign(2, sf(12)).unwrap();
        b.assign(3, sf(10)).unwrap();
        let again = p_cap(0, sf(8), &b, &p, &dep).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn monotonic_in_powers() {
        let quotas = [2, 1, 1, 1, 1, 1];
        let dep = Deployment::new(vec![150.0, 300.0, 450.0], ChannelParams::default(), quotas).unwrap();
        let mut a = Assignment::new(3, quotas);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(7)).unwrap();
        a.assign(2, sf(8)).unwrap();
        let mut p = PowerVector::uniform(&a, 10.0);
        let base = p_cap(0, sf(7), &a, &p, &dep).unwrap();

        // More own power helps.
        p.set(0, 12.0);
        assert!(p_cap(0, sf(7), &a, &p, &dep).unwrap() > base);
        p.set(0, 10.0);
        // More interferer power hurts, whichever interferer.
        p.set(1, 12.0);
        assert!(p_cap(0, sf(7), &a, &p, &dep).unwrap() < base);
        p.set(1, 10.0);
        p.set(2, 12.0);
        assert!(p_cap(0, sf(7), &a, &p, &dep).unwrap() < base);
    }

    #[test]
    fn log_space_product_matches_direct() {
        let factors: Vec<f64> = (1..=40).map(|i| 1.0 / (1.0 + 0.03 * i as f64)).collect();
        let direct: f64 = factors.iter().product();
        let via_log = product(&factors);
        assert!((direct - via_log).abs() / direct < 1e-12);
        // Small slices take the direct path.
        let small = &factors[..8];
        assert_eq!(product(small), small.iter().product::<f64>());
    }

    #[test]
    fn oracle_is_deterministic_and_agrees_on_simple_cases() {
        let quotas = [2, 1, 1, 1, 1, 1];
        let dep = two_device_dep(100.0, 100.0, quotas);
        let mut a = Assignment::new(2, quotas);
        a.assign(0, sf(7)).unwrap();
        a.assign(1, sf(7)).unwrap();
        let p = PowerVector::uniform(&a, ChannelParams::default().p_max_mw());

        let e1 = mc_capture_oracle(0, sf(7), &a, &p, &dep, ThresholdKind::CoSf, 200_000, 42).unwrap();
        let e2 = mc_capture_oracle(0, sf(7), &a, &p, &dep, ThresholdKind::CoSf, 200_000, 42).unwrap();
        assert_eq!(e1.probability, e2.probability);

        let closed = p_cap_co(0, sf(7), &a, &p, &dep).unwrap();
        assert!(
            (e1.probability - closed).abs() <= 3.0 * e1.std_err.max(1e-4),
            "mc {} vs closed {closed}",
            e1.probability
        );
    }

    #[test]
    fn oracle_with_no_interference_and_high_power_hits_one() {
        let dep = two_device_dep(10.0, 500.0, [1; 6]);
        let mut a = Assignment::new(2, [1; 6]);
        a.assign(0, sf(7)).unwrap();
        let p = PowerVector::uniform(&a, 1e9);
        let est = mc_capture_oracle(0, sf(7), &a, &p, &dep, ThresholdKind::InterSf, 20_000, 7).unwrap();
        assert!(est.probability > 0.9999);
    }

    #[test]
    fn assignment_bookkeeping() {
        let mut a = Assignment::new(4, [1, 2, 1, 1, 1, 1]);
        a.assign(0, sf(8)).unwrap();
        a.assign(2, sf(8)).unwrap();
        assert!(a.assign(3, sf(8)).is_err(), "quota 2 exhausted");
        assert!(a.is_consistent());
        assert!(a.quotas_satisfied());
        assert_eq!(a.members(sf(8)), [0, 2]);

        a.swap(0, 2);
        assert_eq!(a.members(sf(8)), [2, 0]);
        assert!(a.is_consistent());

        assert_eq!(a.unassign(2), Some(sf(8)));
        assert_eq!(a.assigned_count(), 1);
        assert!(a.is_consistent());

        a.assign_unchecked(1, sf(7));
        a.assign_unchecked(2, sf(7)); // over quota, allowed by the unchecked path
        assert!(!a.quotas_satisfied());
        assert!(a.is_consistent());
    }
}
