//! Rician MIMO multiple-access channels, the link budget, and the received
//! signal `y = H V ż + n`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::linalg::{block_diag, gaussian_matrix, gaussian_scalar, hcat, rscale, CMat, CVec, Field, MatrixJson};
use crate::objective::PrecoderSet;
use crate::seeds;

/// Link budget of the uplink.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub distance_m: f64,
    pub rician_k: f64,
    /// Per-device maximum transmit power in watts.
    pub power_budgets_w: Vec<f64>,
}

impl LinkBudget {
    /// B = 10 kHz, N0 = -170 dBm/Hz, d = 240 m, κ = 1, every device at `p0_dbm`.
    pub fn standard(devices: usize, p0_dbm: f64) -> Self {
        Self {
            bandwidth_hz: 10e3,
            noise_density_dbm_hz: -170.0,
            distance_m: 240.0,
            rician_k: 1.0,
            power_budgets_w: vec![dbm_to_watts(p0_dbm); devices],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidInput("bandwidth must be positive".into()));
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::InvalidInput("Rician factor must be non-negative".into()));
        }
        if !(self.distance_m > 0.0) {
            return Err(Error::InvalidInput("distance must be positive".into()));
        }
        if self.power_budgets_w.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidInput("power budgets must be positive".into()));
        }
        Ok(())
    }

    pub fn pathloss_db(&self) -> f64 {
        pathloss_db(self.distance_m)
    }

    pub fn path_gain(&self) -> f64 {
        10f64.powf(-self.pathloss_db() / 10.0)
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(self.noise_density_dbm_hz, self.bandwidth_hz)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `32.6 + 36.7 log10(d)` dB.
pub fn pathloss_db(distance_m: f64) -> f64 {
    32.6 + 36.7 * distance_m.log10()
}

/// `δ₀² = N0 B` in watts, with `N0` in dBm/Hz.
pub fn noise_power(noise_density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(noise_density_dbm_hz) * bandwidth_hz
}

/// Antenna counts and slot count of a multiple-access channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub rx_antennas: usize,
    pub tx_antennas: Vec<usize>,
    pub slots: usize,
}

impl ChannelDims {
    pub fn uniform(devices: usize, rx_antennas: usize, tx_antennas: usize, slots: usize) -> Self {
        Self {
            rx_antennas,
            tx_antennas: vec![tx_antennas; devices],
            slots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rx_antennas == 0 || self.slots == 0 || self.tx_antennas.is_empty() || self.tx_antennas.contains(&0) {
            return Err(Error::InvalidInput(format!("channel dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Per-device, per-slot channel matrices with the assembled block structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ChannelJson", try_from = "ChannelJson")]
pub struct ChannelRealization {
    pub field: Field,
    /// `per_slot[k][t]` is `H_k(t)`, `N_r x N_{t,k}`.
    pub per_slot: Vec<Vec<CMat>>,
    pub noise_power: f64,
    device_blocks: Vec<CMat>,
    stacked: CMat,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    field: Field,
    noise_power: f64,
    per_slot: Vec<Vec<MatrixJson>>,
}

impl From<ChannelRealization> for ChannelJson {
    fn from(ch: ChannelRealization) -> Self {
        Self {
            field: ch.field,
            noise_power: ch.noise_power,
            per_slot: ch.per_slot.iter().map(|s| s.iter().map(MatrixJson::from).collect()).collect(),
        }
    }
}

impl TryFrom<ChannelJson> for ChannelRealization {
    type Error = Error;

    fn try_from(j: ChannelJson) -> Result<Self> {
        let per_slot = j
            .per_slot
            .iter()
            .map(|s| s.iter().map(CMat::try_from).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(j.field, per_slot, j.noise_power)
    }
}

impl ChannelRealization {
    pub fn new(field: Field, per_slot: Vec<Vec<CMat>>, noise_power: f64) -> Result<Self> {
        if !(noise_power >= 0.0) {
            return Err(Error::InvalidInput(format!("noise power must be non-negative, got {noise_power}")));
        }
        let slots = per_slot.first().map_or(0, Vec::len);
        if slots == 0 {
            return Err(Error::InvalidInput("channel needs at least one device and one slot".into()));
        }
        let rx = per_slot[0][0].nrows();
        for dev in &per_slot {
            if dev.len() != slots {
                return Err(mismatch("slots per device", slots, dev.len()));
            }
            let tx = dev[0].ncols();
            for h in dev {
                if h.shape() != (rx, tx) {
                    return Err(mismatch("slot matrix", format!("({rx}, {tx})"), format!("{:?}", h.shape())));
                }
            }
        }
        let device_blocks: Vec<CMat> = per_slot.iter().map(|dev| block_diag(dev)).collect();
        let stacked = hcat(&device_blocks);
        Ok(Self {
            field,
            per_slot,
            noise_power,
            device_blocks,
            stacked,
        })
    }

    pub fn device_count(&self) -> usize {
        self.per_slot.len()
    }

    pub fn slots(&self) -> usize {
        self.per_slot[0].len()
    }

    pub fn rx_antennas(&self) -> usize {
        self.per_slot[0][0].nrows()
    }

    pub fn tx_antennas(&self, k: usize) -> usize {
        self.per_slot[k][0].ncols()
    }

    /// `T N_r`.
    pub fn rx_dim(&self) -> usize {
        self.slots() * self.rx_antennas()
    }

    /// `T N_{t,k}`.
    pub fn tx_dim(&self, k: usize) -> usize {
        self.slots() * self.tx_antennas(k)
    }

    /// Column range of device `k` inside `H`.
    pub fn tx_range(&self, k: usize) -> Range<usize> {
        let start: usize = (0..k).map(|q| self.tx_dim(q)).sum();
        start..start + self.tx_dim(k)
    }

    /// `H_k = diag{H_k(1), ..., H_k(T)}`.
    pub fn device_block(&self, k: usize) -> &CMat {
        &self.device_blocks[k]
    }

    /// `H = [H_1 ... H_K]`.
    pub fn stacked(&self) -> &CMat {
        &self.stacked
    }

    /// Same channel seen at a different noise power.
    pub fn with_noise_power(&self, noise_power: f64) -> Result<Self> {
        Self::new(self.field, self.per_slot.clone(), noise_power)
    }

    /// Channel rescaled by `1/δ₀` so that the noise has unit power. Detection,
    /// MSE-based precoding and classification are unchanged by this rescaling.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.noise_power > 0.0) {
            return Err(Error::InvalidInput("cannot normalize a noiseless channel".into()));
        }
        let s = 1.0 / self.noise_power.sqrt();
        let per_slot = self.per_slot.iter().map(|dev| dev.iter().map(|h| rscale(h, s)).collect()).collect();
        Self::new(self.field, per_slot, 1.0)
    }
}

/// Draws a channel realization. Complex mode uses the Rician model with the
/// link budget's path gain; real mode draws i.i.d. unit-variance real entries.
pub fn draw_channel(
    dims: &ChannelDims,
    budget: &LinkBudget,
    field: Field,
    block_fading: bool,
    seed: u64,
) -> Result<ChannelRealization> {
    dims.validate()?;
    budget.validate()?;
    let nr = dims.rx_antennas;
    let per_slot = dims
        .tx_antennas
        .iter()
        .enumerate()
        .map(|(k, &nt)| {
            let mut rng = seeds::rng(seeds::derive(seed, k as u64));
            let mut draw = || match field {
                Field::Real => gaussian_matrix(nr, nt, Field::Real, &mut rng),
                Field::Complex => rician(nr, nt, budget.rician_k, budget.path_gain(), &mut rng),
            };
            if block_fading {
                vec![draw(); dims.slots]
            } else {
                (0..dims.slots).map(|_| draw()).collect()
            }
        })
        .collect();
    ChannelRealization::new(field, per_slot, budget.noise_power())
}

/// `√g (√(κ/(1+κ)) H_los + √(1/(1+κ)) H_w)` with an all-ones `H_los`.
pub fn rician<R: Rng + ?Sized>(nr: usize, nt: usize, kappa: f64, gain: f64, rng: &mut R) -> CMat {
    let (los, nlos) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
    };
    let scatter = gaussian_matrix(nr, nt, Field::Complex, rng);
    let g = gain.sqrt();
    scatter.map(|w| (w * nlos + los) * g)
}

/// `y = H V ż + n` with noise drawn from `seed`.
pub fn transmit(chan: &ChannelRealization, v: &PrecoderSet, z: &CVec, seed: u64) -> Result<CVec> {
    transmit_with(chan, v, z, &mut seeds::rng(seed))
}

pub fn transmit_with<R: Rng + ?Sized>(chan: &ChannelRealization, v: &PrecoderSet, z: &CVec, rng: &mut R) -> Result<CVec> {
    let a = chan.stacked() * v.assembled();
    if a.ncols() != z.len() {
        return Err(mismatch("transmit signal", a.ncols(), z.len()));
    }
    Ok(receive(&a, z, chan.noise_power, chan.field, rng))
}

/// `A ż + n` for a precomputed effective channel `A = H V`.
pub fn receive<R: Rng + ?Sized>(a: &CMat, z: &CVec, noise_power: f64, field: Field, rng: &mut R) -> CVec {
    let sd = noise_power.sqrt();
    let mut y = a * z;
    for x in y.iter_mut() {
        *x += gaussian_scalar(field, rng) * sd;
    }
    y
}
