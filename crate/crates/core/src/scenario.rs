//! Synthetic uplink frames: device placement, pathloss, sporadic activity,
//! Rayleigh channels, spreading sequences and the pilot/data observations.
//!
//! All powers are linear milliwatts; dB and dBm only appear in [`SystemConfig`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::detection::Regularizer;
use crate::ep::EpConfig;
use crate::error::{Error, Result};
use crate::gaussian::sample_cn_unchecked;
use crate::C64;

/// Finite modulation alphabet normalized to unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    name: &'static str,
    points: Vec<C64>,
}

impl Alphabet {
    pub fn bpsk() -> Self {
        Self {
            name: "bpsk",
            points: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
        }
    }

    /// Gray-free QPSK with points ordered by quadrant: `(1+i), (-1+i), (-1-i), (1-i)`, over sqrt(2).
    pub fn qpsk() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            name: "qpsk",
            points: vec![C64::new(a, a), C64::new(-a, a), C64::new(-a, -a), C64::new(a, -a)],
        }
    }

    pub fn qam16() -> Self {
        let scale = 1.0 / 10f64.sqrt();
        let levels = [-3.0, -1.0, 1.0, 3.0];
        let points = levels
            .iter()
            .flat_map(|&re| levels.iter().map(move |&im| C64::new(re * scale, im * scale)))
            .collect();
        Self { name: "qam16", points }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bpsk" => Some(Self::bpsk()),
            "qpsk" => Some(Self::qpsk()),
            "qam16" | "16qam" => Some(Self::qam16()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Random ensemble the unit-norm spreading sequences are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpreadingEnsemble {
    /// i.i.d. `CN(0, 1)` entries, then column-normalized.
    Gaussian,
    /// i.i.d. equiprobable `+-1` entries, then column-normalized.
    Bernoulli,
}

impl SpreadingEnsemble {
    pub fn name(self) -> &'static str {
        match self {
            SpreadingEnsemble::Gaussian => "gaussian",
            SpreadingEnsemble::Bernoulli => "bernoulli",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gaussian" => Some(SpreadingEnsemble::Gaussian),
            "bernoulli" => Some(SpreadingEnsemble::Bernoulli),
            _ => None,
        }
    }
}

/// Every constant describing one simulated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_devices: usize,
    pub spread_len: usize,
    pub n_data_symbols: usize,
    /// Per-device activity probability, length `n_devices`.
    pub activity_prob: Vec<f64>,
    pub cell_radius_km: f64,
    pub min_distance_km: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub alphabet: Alphabet,
    pub pilot_symbol: C64,
    pub spreading: SpreadingEnsemble,
    pub regularizer: Regularizer,
    pub ep: EpConfig,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let n_devices = 128;
        Self {
            n_devices,
            spread_len: 64,
            n_data_symbols: 9,
            activity_prob: vec![0.1; n_devices],
            cell_radius_km: 0.2,
            min_distance_km: 0.01,
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -170.0,
            bandwidth_hz: 1e6,
            alphabet: Alphabet::qpsk(),
            pilot_symbol: C64::new(1.0, 0.0),
            spreading: SpreadingEnsemble::Gaussian,
            regularizer: Regularizer::Scaled,
            ep: EpConfig::default(),
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Sets every device's activity probability to `p`.
    pub fn set_uniform_activity(&mut self, p: f64) {
        self.activity_prob = vec![p; self.n_devices];
    }

    /// Transmit power in linear milliwatts.
    pub fn tx_power_lin(&self) -> f64 {
        dbm_to_mw(self.tx_power_dbm)
    }

    pub fn noise_var(&self) -> f64 {
        10f64.powf((self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10()) / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 1 {
            return Err(Error::constraint("n_devices", "must be >= 1"));
        }
        if self.spread_len < 1 {
            return Err(Error::constraint("spread_len", "must be >= 1"));
        }
        if self.activity_prob.len() != self.n_devices {
            return Err(Error::constraint(
                "activity_prob",
                format!("expected {} entries, got {}", self.n_devices, self.activity_prob.len()),
            ));
        }
        if let Some(p) = self.activity_prob.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::constraint("activity_prob", format!("{p} not in (0, 1)")));
        }
        if !(self.cell_radius_km.is_finite() && self.cell_radius_km > 0.0) {
            return Err(Error::constraint("cell_radius_km", "must be > 0"));
        }
        if !(self.min_distance_km >= 0.0 && self.min_distance_km < self.cell_radius_km) {
            return Err(Error::constraint("min_distance_km", "must lie in [0, cell_radius_km)"));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::constraint("tx_power_dbm", "must be finite"));
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            return Err(Error::constraint("noise_psd_dbm_hz", "must be finite"));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::constraint("bandwidth_hz", "must be > 0"));
        }
        if self.alphabet.is_empty() {
            return Err(Error::constraint("alphabet", "must be non-empty"));
        }
        let power: f64 = self.alphabet.points().iter().map(|s| s.norm_sqr()).sum();
        if (power - self.alphabet.len() as f64).abs() > 1e-9 * self.alphabet.len() as f64 {
            return Err(Error::constraint("alphabet", "must have unit average power"));
        }
        if !(self.pilot_symbol.norm_sqr() > 0.0 && self.pilot_symbol.norm_sqr().is_finite()) {
            return Err(Error::constraint("pilot_symbol", "must be finite and nonzero"));
        }
        self.ep.validate()
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Large-scale channel variance (linear) at distance `d_km`:
/// `-128.1 - 36.7 log10(d_km)` dB.
pub fn pathloss_variance(d_km: f64) -> Result<f64> {
    if !(d_km.is_finite() && d_km > 0.0) {
        return Err(Error::invalid("d_km", format!("must be > 0, got {d_km}")));
    }
    let db = -128.1 - 36.7 * d_km.log10();
    Ok(10f64.powf(db / 10.0))
}

/// Thermal noise power in mW over `bandwidth_hz`.
pub fn noise_variance(psd_dbm_hz: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
        return Err(Error::invalid("bandwidth_hz", format!("must be > 0, got {bandwidth_hz}")));
    }
    Ok(10f64.powf((psd_dbm_hz + 10.0 * bandwidth_hz.log10()) / 10.0))
}

/// Seeds an independent stream for `(seed, index, purpose)`.
///
/// Streams for different purposes never share state, so adding a consumer
/// leaves every existing draw untouched.
pub fn derive_stream(seed: u64, index: u64, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"epmud/v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derives a 64-bit child seed, e.g. one per sweep point.
pub fn derive_seed(seed: u64, index: u64, purpose: &str) -> u64 {
    derive_stream(seed, index, purpose).random()
}

/// One realized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Pilot-scaled spreading matrix, column `n` is `s_n x_p sqrt(rho)`.
    pub phi: DMatrix<C64>,
    /// Unit-norm spreading sequences as columns.
    pub spreading: DMatrix<C64>,
    pub activity: Vec<bool>,
    pub channels: DVector<C64>,
    /// `activity[n] * channels[n]`.
    pub composite: DVector<C64>,
    /// Per-device channel variance (linear).
    pub channel_var: Vec<f64>,
    pub distances_km: Vec<f64>,
    /// `N x J`, transmitted symbols already scaled by `sqrt(rho)`; zero rows for inactive devices.
    pub data_symbols: DMatrix<C64>,
    pub y_pilot: DVector<C64>,
    pub pilot_noise: DVector<C64>,
    /// `M x J`, one column per data symbol period.
    pub y_data: DMatrix<C64>,
    pub noise_var: f64,
    pub tx_power_lin: f64,
}

impl Instance {
    /// Indices of truly active devices, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.activity.iter().enumerate().filter(|(_, a)| **a).map(|(n, _)| n).collect()
    }

    pub fn n_active(&self) -> usize {
        self.activity.iter().filter(|a| **a).count()
    }

    /// SHA-256 over every stored array, used to check paired-trial identity.
    pub fn digest(&self) -> [u8; 32] {
        fn feed_c(h: &mut Sha256, xs: &[C64]) {
            for x in xs {
                h.update(x.re.to_bits().to_le_bytes());
                h.update(x.im.to_bits().to_le_bytes());
            }
        }
        let mut h = Sha256::new();
        feed_c(&mut h, self.phi.as_slice());
        feed_c(&mut h, self.spreading.as_slice());
        h.update(self.activity.iter().map(|&a| a as u8).collect::<Vec<_>>());
        feed_c(&mut h, self.channels.as_slice());
        feed_c(&mut h, self.data_symbols.as_slice());
        feed_c(&mut h, self.y_pilot.as_slice());
        feed_c(&mut h, self.y_data.as_slice());
        for v in self.channel_var.iter().chain([self.noise_var, self.tx_power_lin].iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }
}

fn draw_spreading(ensemble: SpreadingEnsemble, m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let mut s = DMatrix::from_fn(m, n, |_, _| match ensemble {
        SpreadingEnsemble::Gaussian => sample_cn_unchecked(C64::new(0.0, 0.0), 1.0, rng),
        SpreadingEnsemble::Bernoulli => C64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0),
    });
    for mut col in s.column_iter_mut() {
        let norm = col.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        // A Gaussian column of exact zeros has probability zero; guard anyway.
        if norm > 0.0 {
            col.unscale_mut(norm);
        } else {
            col[0] = C64::new(1.0, 0.0);
        }
    }
    s
}

/// Generates trial `trial_index` of the configured scenario.
///
/// Fully determined by `(cfg.seed, trial_index)`.
pub fn generate_instance(cfg: &SystemConfig, trial_index: u64) -> Instance {
    let n = cfg.n_devices;
    let m = cfg.spread_len;
    let j = cfg.n_data_symbols;
    let rho = cfg.tx_power_lin();
    let sqrt_rho = rho.sqrt();
    let noise_var = cfg.noise_var();
    let zero = C64::new(0.0, 0.0);
    let stream = |tag: &str| derive_stream(cfg.seed, trial_index, tag);

    let mut geo = stream("geometry");
    let r0 = cfg.min_distance_km;
    let r1 = cfg.cell_radius_km;
    let distances_km: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = geo.random();
            (u * (r1 * r1 - r0 * r0) + r0 * r0).sqrt().max(f64::MIN_POSITIVE)
        })
        .collect();
    let channel_var: Vec<f64> = distances_km
        .iter()
        .map(|&d| pathloss_variance(d).expect("distance is positive"))
        .collect();

    let mut act = stream("activity");
    let activity: Vec<bool> = cfg.activity_prob.iter().map(|&p| act.random::<f64>() < p).collect();

    let mut ch = stream("channel");
    let channels = DVector::from_iterator(n, channel_var.iter().map(|&a| sample_cn_unchecked(zero, a, &mut ch)));
    let composite = DVector::from_iterator(
        n,
        channels.iter().zip(&activity).map(|(&h, &a)| if a { h } else { zero }),
    );

    let spreading = draw_spreading(cfg.spreading, m, n, &mut stream("spreading"));
    let phi = &spreading * (cfg.pilot_symbol * sqrt_rho);

    let mut sym = stream("symbols");
    let points = cfg.alphabet.points();
    let mut data_symbols = DMatrix::from_element(n, j, zero);
    for (dev, &active) in activity.iter().enumerate() {
        for i in 0..j {
            let k = sym.random_range(0..points.len());
            if active {
                data_symbols[(dev, i)] = points[k] * sqrt_rho;
            }
        }
    }

    let mut pn = stream("pilot_noise");
    let pilot_noise = DVector::from_fn(m, |_, _| sample_cn_unchecked(zero, noise_var, &mut pn));
    let y_pilot = &phi * &composite + &pilot_noise;

    let mut dn = stream("data_noise");
    let data_noise = DMatrix::from_fn(m, j, |_, _| sample_cn_unchecked(zero, noise_var, &mut dn));
    // y_d = S diag(h) X + W; inactive rows of X are zero.
    let mut effective = spreading.clone();
    for (mut col, &h) in effective.column_iter_mut().zip(channels.iter()) {
        col *= h;
    }
    let y_data = &effective * &data_symbols + data_noise;

    Instance {
        phi,
        spreading,
        activity,
        channels,
        composite,
        channel_var,
        distances_km,
        data_symbols,
        y_pilot,
        pilot_noise,
        y_data,
        noise_var,
        tx_power_lin: rho,
    }
}
