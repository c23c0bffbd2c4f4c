//! Large-scale (3GPP UMi street canyon) and small-scale (Rician) channel
//! generation.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::scenario::{distance_2d, distance_3d, Position, ScenarioConfig, Topology};

pub type C64 = Complex<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Effective environment height of the UMi breakpoint computation, meters.
const UMI_ENV_HEIGHT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("2D distance {0} m is below the 10 m path-loss model limit")]
    Distance(f64),
    #[error("carrier frequency {0} GHz outside [0.5, 100]")]
    Carrier(f64),
}

/// UMi street-canyon breakpoint distance d'_BP in meters.
pub fn umi_breakpoint(fc_ghz: f64, h_bs: f64, h_ue: f64) -> f64 {
    4.0 * (h_bs - UMI_ENV_HEIGHT) * (h_ue - UMI_ENV_HEIGHT) * fc_ghz * 1e9 / SPEED_OF_LIGHT
}

/// UMi street-canyon path loss in dB.
pub fn umi_pathloss(
    d2d: f64,
    fc_ghz: f64,
    h_bs: f64,
    h_ue: f64,
    los: bool,
) -> Result<f64, ChannelError> {
    if !(d2d >= 10.0) {
        return Err(ChannelError::Distance(d2d));
    }
    if !(0.5..=100.0).contains(&fc_ghz) {
        return Err(ChannelError::Carrier(fc_ghz));
    }
    let dh = h_bs - h_ue;
    let d3d = (d2d * d2d + dh * dh).sqrt();
    let d_bp = umi_breakpoint(fc_ghz, h_bs, h_ue);
    let pl_los = if d2d <= d_bp {
        32.4 + 21.0 * d3d.log10() + 20.0 * fc_ghz.log10()
    } else {
        32.4 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10() - 9.5 * (d_bp * d_bp + dh * dh).log10()
    };
    if los {
        return Ok(pl_los);
    }
    let pl_nlos = 35.3 * d3d.log10() + 22.4 + 21.3 * fc_ghz.log10() - 0.3 * (h_ue - 1.5);
    Ok(pl_los.max(pl_nlos))
}

/// UMi LOS probability.
pub fn los_probability(d2d: f64) -> f64 {
    if d2d <= 18.0 {
        1.0
    } else {
        18.0 / d2d + (-d2d / 36.0).exp() * (1.0 - 18.0 / d2d)
    }
}

/// Specular array response of a half-wavelength ULA (aligned with x) at the
/// BS towards a UE: unit-modulus entries with phase set by the exact path
/// length from each element.
pub fn specular_response(bs: &Position, ue: &Position, nt: usize, wavelength: f64) -> DVector<C64> {
    let centre = (nt as f64 - 1.0) / 2.0;
    DVector::from_fn(nt, |i, _| {
        let mut elem = *bs;
        elem[0] += (i as f64 - centre) * wavelength / 2.0;
        let d = distance_3d(&elem, ue);
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * d / wavelength)
    })
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rician draw `sqrt(beta) * (sqrt(k/(1+k)) a + sqrt(1/(1+k)) g)`.
/// Infinite K-factors select the pure specular or pure Rayleigh limits.
pub fn draw_small_scale<R: Rng + ?Sized>(
    beta: f64,
    rician_k_db: f64,
    specular: &DVector<C64>,
    rng: &mut R,
) -> DVector<C64> {
    let (los_w, nlos_w) = if rician_k_db == f64::INFINITY {
        (1.0, 0.0)
    } else if rician_k_db == f64::NEG_INFINITY {
        (0.0, 1.0)
    } else {
        let k = 10f64.powf(rician_k_db / 10.0);
        ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
    };
    let amp = beta.sqrt();
    DVector::from_fn(specular.len(), |i, _| {
        let scatter = if nlos_w > 0.0 {
            complex_gaussian(rng) * nlos_w
        } else {
            C64::new(0.0, 0.0)
        };
        (specular[i] * los_w + scatter) * amp
    })
}

/// Per-antenna reference-signal received power in dBm.
pub fn rsrp(beta: f64, p_max: f64, nt: usize) -> f64 {
    10.0 * (1000.0 * beta * p_max / nt as f64).log10()
}

/// Thermal noise power in watts.
pub fn noise_power(bandwidth: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * bandwidth.log10() + noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// One drop's channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub nt: usize,
    /// `h[bs][ue]`, length `nt`, large-scale gain included. The received
    /// sample is `h^H w`.
    pub h: Vec<Vec<DVector<C64>>>,
    /// Linear large-scale power gain `[bs][ue]`.
    pub beta: Vec<Vec<f64>>,
    pub los: Vec<Vec<bool>>,
    pub rsrp_dbm: Vec<Vec<f64>>,
    /// Noise power, watts.
    pub noise_power: f64,
}

impl ChannelState {
    pub fn n_bs(&self) -> usize {
        self.h.len()
    }

    pub fn n_ue(&self) -> usize {
        self.h.first().map_or(0, |row| row.len())
    }

    pub fn median_beta(&self) -> f64 {
        let mut all: Vec<f64> = self.beta.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.total_cmp(b));
        let n = all.len();
        if n % 2 == 1 {
            all[n / 2]
        } else {
            0.5 * (all[n / 2 - 1] + all[n / 2])
        }
    }

    /// Multiplies every channel by `sqrt(factor)`.
    pub fn scaled(&self, factor: f64) -> ChannelState {
        let amp = factor.sqrt();
        let mut out = self.clone();
        for (h_row, b_row) in out.h.iter_mut().zip(out.beta.iter_mut()) {
            for (h, b) in h_row.iter_mut().zip(b_row.iter_mut()) {
                *h *= C64::new(amp, 0.0);
                *b *= factor;
            }
        }
        out
    }

    /// Channel and per-BS power budget at one sweep point.
    ///
    /// Normalized mode divides all gains by the drop's median gain and sets
    /// the noise so that `p_max / noise` equals the requested SNR. Raw mode
    /// keeps physical gains and noise and scales the configured power budget
    /// by the sweep value instead.
    pub fn operating_point(
        &self,
        snr_db: f64,
        p_max_per_bs: f64,
        normalize: bool,
    ) -> (ChannelState, f64) {
        if normalize {
            let mut out = self.scaled(1.0 / self.median_beta());
            out.noise_power = p_max_per_bs / db_to_linear(snr_db);
            (out, p_max_per_bs)
        } else {
            (self.clone(), p_max_per_bs * db_to_linear(snr_db))
        }
    }

    /// Adds i.i.d. estimation error of variance `rel_var * beta` per entry.
    pub fn with_estimation_error<R: Rng + ?Sized>(
        &self,
        rel_var: f64,
        rng: &mut R,
    ) -> ChannelState {
        let mut out = self.clone();
        if rel_var <= 0.0 {
            return out;
        }
        for (h_row, b_row) in out.h.iter_mut().zip(self.beta.iter()) {
            for (h, &b) in h_row.iter_mut().zip(b_row.iter()) {
                let sd = (rel_var * b).sqrt();
                for v in h.iter_mut() {
                    *v += complex_gaussian(rng) * sd;
                }
            }
        }
        out
    }

    /// Writes rows `drop,bs,ue,antenna,re,im,beta`.
    pub fn write_csv<W: Write>(&self, out: &mut W, drop: usize) -> std::io::Result<()> {
        for (bs, row) in self.h.iter().enumerate() {
            for (ue, h) in row.iter().enumerate() {
                for (a, v) in h.iter().enumerate() {
                    writeln!(
                        out,
                        "{drop},{bs},{ue},{a},{:e},{:e},{:e}",
                        v.re, v.im, self.beta[bs][ue]
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub const CHANNEL_CSV_HEADER: &str = "drop,bs,ue,antenna,re,im,beta";

/// Draws LOS state, path loss, optional shadowing and Rician fading for every
/// BS-UE pair of a drop.
pub fn generate_channels<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    topology: &Topology,
    rng: &mut R,
) -> Result<ChannelState, ChannelError> {
    let wavelength = SPEED_OF_LIGHT / (cfg.carrier_freq * 1e9);
    let shadowing = if cfg.shadowing_std_db > 0.0 {
        Some(Normal::new(0.0, cfg.shadowing_std_db).expect("finite std"))
    } else {
        None
    };
    let n_bs = topology.bs_positions.len();
    let n_ue = topology.ue_positions.len();
    let mut h = Vec::with_capacity(n_bs);
    let mut beta = Vec::with_capacity(n_bs);
    let mut los = Vec::with_capacity(n_bs);
    let mut rsrp_dbm = Vec::with_capacity(n_bs);
    for bs in &topology.bs_positions {
        let mut h_row = Vec::with_capacity(n_ue);
        let mut b_row = Vec::with_capacity(n_ue);
        let mut l_row = Vec::with_capacity(n_ue);
        let mut r_row = Vec::with_capacity(n_ue);
        for ue in &topology.ue_positions {
            let d2d = distance_2d(bs, ue);
            let is_los = rng.random::<f64>() < los_probability(d2d);
            let mut pl = umi_pathloss(d2d, cfg.carrier_freq, cfg.bs_height, cfg.ue_height, is_los)?;
            if let Some(dist) = &shadowing {
                pl += dist.sample(rng);
            }
            let b = db_to_linear(-pl);
            let k_db = if is_los {
                cfg.rician_k
            } else {
                cfg.rician_k_nlos
            };
            let spec = specular_response(bs, ue, cfg.nt, wavelength);
            h_row.push(draw_small_scale(b, k_db, &spec, rng));
            b_row.push(b);
            l_row.push(is_los);
            r_row.push(rsrp(b, cfg.p_max_per_bs, cfg.nt));
        }
        h.push(h_row);
        beta.push(b_row);
        los.push(l_row);
        rsrp_dbm.push(r_row);
    }
    Ok(ChannelState {
        nt: cfg.nt,
        h,
        beta,
        los,
        rsrp_dbm,
        noise_power: noise_power(cfg.bandwidth, cfg.noise_figure),
    })
}
