//! Physical-layer model: channel constants, per-SF characteristics, unit
//! conversions, mean CNR and SF coverage geometry.
//!
//! Unit conventions used throughout the crate:
//! - carrier frequency in MHz, bandwidth in Hz
//! - distances in meters
//! - powers in dBm at interfaces, mW internally
//! - thresholds stored in dB, converted to linear once before use

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of usable spreading factors (SF7..SF12).
pub const SF_COUNT: usize = 6;

/// Co-SF capture threshold, 6 dB for every SF.
pub const CO_SF_THRESHOLD_DB: f64 = 6.0;

/// SNR reception thresholds per SF, in dB (SF7..SF12).
pub const RX_THRESHOLD_DB: [f64; SF_COUNT] = [-6.0, -9.0, -12.0, -15.0, -17.5, -20.0];

/// Inter-SF capture thresholds per SF, in dB (SF7..SF12).
pub const INTER_SF_THRESHOLD_DB: [f64; SF_COUNT] = [-7.5, -9.0, -13.5, -15.0, -18.0, -22.5];

/// A LoRa spreading factor in `{7..12}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sf(u8);

impl Sf {
    pub fn new(value: u8) -> Result<Self> {
        if (7..=12).contains(&value) {
            Ok(Sf(value))
        } else {
            Err(Error::InvalidParameter(format!("spreading factor {value} outside 7..=12")))
        }
    }

    /// Index into per-SF arrays: SF7 -> 0, ..., SF12 -> 5.
    pub fn index(self) -> usize {
        (self.0 - 7) as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < SF_COUNT, "SF index {index} out of range");
        Sf(7 + index as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// All six SFs in ascending order.
    pub fn all() -> [Sf; SF_COUNT] {
        [Sf(7), Sf(8), Sf(9), Sf(10), Sf(11), Sf(12)]
    }
}

impl std::fmt::Display for Sf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SF{}", self.0)
    }
}

/// Channel and deployment constants shared by every device.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Carrier frequency in MHz.
    pub carrier_freq_mhz: f64,
    /// Channel bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Receiver noise figure in dB.
    pub noise_figure_db: f64,
    /// Path loss exponent.
    pub path_loss_exponent: f64,
    /// Cell radius in meters.
    pub cell_radius_m: f64,
    /// Maximum transmit power in dBm.
    pub p_max_dbm: f64,
    /// Coding-rate parameter x in {1,2,3,4}; CR = 4/(4+x).
    pub coding_rate_x: u8,
}

impl Default for ChannelParams {
    fn default() -> Self {
        // EU868 single-gateway setting: 1 km cell, 125 kHz channel, lossy
        // urban path loss, 14 dBm power cap.
        ChannelParams {
            carrier_freq_mhz: 868.0,
            bandwidth_hz: 125_000.0,
            noise_figure_db: 6.0,
            path_loss_exponent: 4.0,
            cell_radius_m: 1000.0,
            p_max_dbm: 14.0,
            coding_rate_x: 1,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_hz <= 0.0 {
            return Err(Error::InvalidParameter("bandwidth must be positive".into()));
        }
        if self.path_loss_exponent <= 0.0 {
            return Err(Error::InvalidParameter("path loss exponent must be positive".into()));
        }
        if self.cell_radius_m <= 0.0 {
            return Err(Error::InvalidParameter("cell radius must be positive".into()));
        }
        if self.carrier_freq_mhz <= 0.0 {
            return Err(Error::InvalidParameter("carrier frequency must be positive".into()));
        }
        if !(1..=4).contains(&self.coding_rate_x) {
            return Err(Error::InvalidParameter(format!(
                "coding rate parameter x={} outside 1..=4",
                self.coding_rate_x
            )));
        }
        Ok(())
    }

    /// Coding rate CR = 4/(4+x).
    pub fn coding_rate(&self) -> f64 {
        4.0 / (4.0 + f64::from(self.coding_rate_x))
    }

    /// Maximum transmit power in mW.
    pub fn p_max_mw(&self) -> f64 {
        db_to_linear(self.p_max_dbm)
    }
}

/// 10^(x/10).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// 10*log10(x); rejects non-positive input.
pub fn linear_to_db(x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::InvalidParameter(format!("cannot convert {x} to dB")));
    }
    Ok(10.0 * x.log10())
}

/// Data bit-rate of an SF in bit/s: m * CR / (2^m / BW).
pub fn bitrate(m: Sf, channel: &ChannelParams) -> f64 {
    let symbol_time = 2f64.powi(i32::from(m.value())) / channel.bandwidth_hz;
    f64::from(m.value()) * channel.coding_rate() / symbol_time
}

/// Deterministic path gain A(f_c) = 1/(f_c^2 * 10^-2.8), f_c in MHz.
pub fn path_gain(channel: &ChannelParams) -> f64 {
    1.0 / (channel.carrier_freq_mhz.powi(2) * 10f64.powf(-2.8))
}

/// AWGN power at the receiver, derived from NF and bandwidth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma2_dbm: f64,
    pub sigma2_mw: f64,
}

impl NoiseModel {
    /// sigma^2 = -174 + NF + 10*log10(BW) dBm.
    pub fn from_channel(channel: &ChannelParams) -> Self {
        let sigma2_dbm = -174.0 + channel.noise_figure_db + 10.0 * channel.bandwidth_hz.log10();
        NoiseModel { sigma2_dbm, sigma2_mw: db_to_linear(sigma2_dbm) }
    }
}

/// Mean channel-to-noise ratio A(f_c)/(r^alpha * sigma^2) in 1/mW.
///
/// Multiplying by a transmit power in mW yields the mean SNR of the
/// Rayleigh-faded link.
pub fn mean_cnr(r_m: f64, channel: &ChannelParams, noise: &NoiseModel) -> Result<f64> {
    if r_m <= 0.0 {
        return Err(Error::InvalidParameter(format!("distance {r_m} must be positive")));
    }
    Ok(path_gain(channel) / (r_m.powf(channel.path_loss_exponent) * noise.sigma2_mw))
}

/// Coverage radius of an SF: the distance at which the mean received SNR at
/// P_max equals the SF's reception threshold.
pub fn coverage_radius(m: Sf, channel: &ChannelParams, noise: &NoiseModel) -> f64 {
    let gain_db = 10.0 * path_gain(channel).log10();
    let budget_db = channel.p_max_dbm - RX_THRESHOLD_DB[m.index()] - noise.sigma2_dbm + gain_db;
    10f64.powf(budget_db / (10.0 * channel.path_loss_exponent))
}

/// Per-SF constants: bit-rate, thresholds, coverage and quota.
#[derive(Clone, Debug)]
pub struct SfParams {
    pub sf: Sf,
    /// Data bit-rate in bit/s.
    pub bitrate_bps: f64,
    /// SNR reception threshold in dB.
    pub rx_threshold_db: f64,
    /// Inter-SF capture threshold in dB.
    pub inter_sf_threshold_db: f64,
    /// Coverage radius in meters.
    pub coverage_m: f64,
    /// Maximum number of devices that may share this SF.
    pub quota: usize,
}

/// The six per-SF parameter sets for one channel configuration.
#[derive(Clone, Debug)]
pub struct SfTable {
    params: [SfParams; SF_COUNT],
}

impl SfTable {
    pub fn new(channel: &ChannelParams, noise: &NoiseModel, quotas: [usize; SF_COUNT]) -> Result<Self> {
        if quotas.iter().any(|&q| q == 0) {
            return Err(Error::InvalidParameter("every SF quota must be at least 1".into()));
        }
        let params = Sf::all().map(|sf| SfParams {
            sf,
            bitrate_bps: bitrate(sf, channel),
            rx_threshold_db: RX_THRESHOLD_DB[sf.index()],
            inter_sf_threshold_db: INTER_SF_THRESHOLD_DB[sf.index()],
            coverage_m: coverage_radius(sf, channel, noise),
            quota: quotas[sf.index()],
        });
        // Table sanity: rates decrease and ranges grow with the SF.
        for w in params.windows(2) {
            debug_assert!(w[0].bitrate_bps > w[1].bitrate_bps);
            debug_assert!(w[0].coverage_m < w[1].coverage_m);
        }
        Ok(SfTable { params })
    }

    pub fn get(&self, m: Sf) -> &SfParams {
        &self.params[m.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SfParams> {
        self.params.iter()
    }

    pub fn quotas(&self) -> [usize; SF_COUNT] {
        let mut q = [0; SF_COUNT];
        for (slot, p) in q.iter_mut().zip(self.params.iter()) {
            *slot = p.quota;
        }
        q
    }

    /// Sum of quotas: the number of simultaneously served devices A.
    pub fn total_quota(&self) -> usize {
        self.params.iter().map(|p| p.quota).sum()
    }

    /// Inner boundary of the SF's distance ring, with l_6 := 0.
    pub fn ring_inner(&self, m: Sf) -> f64 {
        if m.index() == 0 {
            0.0
        } else {
            self.params[m.index() - 1].coverage_m
        }
    }
}

/// A set of device positions around the gateway plus the shared constants.
#[derive(Clone, Debug)]
pub struct Deployment {
    /// Distance of each device to the gateway, in meters.
    pub distances_m: Vec<f64>,
    pub channel: ChannelParams,
    pub noise: NoiseModel,
    pub sf_table: SfTable,
}

impl Deployment {
    pub fn new(distances_m: Vec<f64>, channel: ChannelParams, quotas: [usize; SF_COUNT]) -> Result<Self> {
        channel.validate()?;
        if distances_m.is_empty() {
            return Err(Error::InvalidParameter("deployment needs at least one device".into()));
        }
        for (n, &r) in distances_m.iter().enumerate() {
            if r <= 0.0 || r > channel.cell_radius_m {
                return Err(Error::InvalidParameter(format!(
                    "device {n} distance {r} outside (0, {}]",
                    channel.cell_radius_m
                )));
            }
        }
        let noise = NoiseModel::from_channel(&channel);
        let sf_table = SfTable::new(&channel, &noise, quotas)?;
        Ok(Deployment { distances_m, channel, noise, sf_table })
    }

    pub fn device_count(&self) -> usize {
        self.distances_m.len()
    }

    pub fn mean_cnr(&self, device: usize) -> f64 {
        mean_cnr(self.distances_m[device], &self.channel, &self.noise)
            .expect("deployment distances are validated positive")
    }
}
