//! Fixed-power comparison schemes.
//!
//! Both baselines activate `A` randomly chosen devices (without
//! replacement) and keep every transmit power at P_max. The random scheme
//! draws each device's SF uniformly from all six, deliberately ignoring
//! quotas and coverage; the distance scheme picks the SF whose ring
//! contains the device.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capture::Assignment;
use crate::model::{Deployment, Sf};

/// Draw `count` distinct devices by a partial Fisher-Yates shuffle.
fn pick_devices(n_devices: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n_devices).collect();
    let take = count.min(n_devices);
    for i in 0..take {
        let j = i + rng.random_range(0..pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

/// Random SF allocation: `active` devices each get a uniformly random SF.
/// Quotas and coverage are not consulted.
pub fn random_allocation(dep: &Deployment, active: usize, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = Assignment::new(dep.device_count(), dep.sf_table.quotas());
    for device in pick_devices(dep.device_count(), active, &mut rng) {
        let m = Sf::from_index(rng.random_range(0..6));
        assignment.assign_unchecked(device, m);
    }
    assignment
}

/// Distance SF allocation: `active` random devices, each assigned the SF of
/// its distance ring (l_{m-1}, l_m], with l_6 := 0. A device beyond l_12
/// stays unassigned.
pub fn distance_allocation(dep: &Deployment, active: usize, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = Assignment::new(dep.device_count(), dep.sf_table.quotas());
    for device in pick_devices(dep.device_count(), active, &mut rng) {
        let r = dep.distances_m[device];
        let ring = Sf::all().into_iter().find(|&m| {
            let inner = dep.sf_table.ring_inner(m);
            let outer = dep.sf_table.get(m).coverage_m;
            r > inner && r <= outer || (m.index() == 0 && r <= outer)
        });
        if let Some(m) = ring {
            assignment.assign_unchecked(device, m);
        }
    }
    assignment
}
