//! Delay-Doppler path estimation from a multicarrier echo and reference-path
//! calibration of the receiver's timing and carrier-frequency offsets.
//!
//! The echo on subcarrier `m`, symbol `l` is
//!
//! ```text
//! Y[m][l] = sum_p g_p exp(-j2pi m df (tau_p + tau_off)) exp(j2pi l T (fd_p + cfo)) + noise
//! ```
//!
//! with `tau_p = d_p / c` and `fd_p = v_p fc / c`. Both offsets are common to
//! every path, so once the line-of-sight path (the shortest) is matched to its
//! known geometry, the same correction applies to all other paths.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{complex_gaussian, db_to_linear, C64, SPEED_OF_LIGHT};
use crate::scenario::ConfigError;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("found {found} resolvable peaks, {requested} requested")]
    InsufficientPeaks { found: usize, requested: usize },
    #[error("no estimates to calibrate against the reference path")]
    MissingReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingPath {
    /// Propagation distance, meters.
    pub distance: f64,
    /// Projected (radial) velocity, m/s.
    pub velocity: f64,
    /// Linear amplitude.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingScene {
    pub paths: Vec<SensingPath>,
    /// Receiver timing offset, seconds.
    pub timing_offset: f64,
    /// Carrier-frequency offset, Hz.
    pub cfo: f64,
    pub subcarriers: usize,
    pub symbols: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// GHz.
    pub carrier_freq: f64,
    /// Cyclic prefix as a fraction of the useful symbol length.
    pub cp_ratio: f64,
    /// Index of the line-of-sight path in `paths`.
    pub reference_path_index: usize,
}

impl Default for SensingScene {
    fn default() -> Self {
        Self {
            paths: vec![
                SensingPath {
                    distance: 300.0,
                    velocity: 0.0,
                    gain: 1.0,
                },
                SensingPath {
                    distance: 947.2,
                    velocity: 20.0,
                    gain: 0.5,
                },
            ],
            timing_offset: 100e-9,
            cfo: 1e3,
            subcarriers: 256,
            symbols: 64,
            subcarrier_spacing: 120e3,
            carrier_freq: 28.0,
            cp_ratio: 0.07,
            reference_path_index: 0,
        }
    }
}

impl SensingScene {
    /// OFDM symbol duration including the cyclic prefix, seconds.
    pub fn symbol_duration(&self) -> f64 {
        (1.0 + self.cp_ratio) / self.subcarrier_spacing
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_freq * 1e9
    }

    pub fn validate(&self) -> Result<(), SensingError> {
        let bad = |m: &str| Err(SensingError::Scene(m.to_string()));
        if self.paths.is_empty() {
            return bad("at least one path is required");
        }
        if self
            .paths
            .iter()
            .any(|p| !(p.distance > 0.0) || !p.velocity.is_finite() || !(p.gain > 0.0))
        {
            return bad("path distances and gains must be positive");
        }
        if self.subcarriers < 2 || self.symbols < 2 {
            return bad("subcarriers and symbols must be at least 2");
        }
        if !(self.subcarrier_spacing > 0.0) || !(self.carrier_freq > 0.0) || !(self.cp_ratio >= 0.0)
        {
            return bad("subcarrier spacing and carrier must be positive, cp_ratio non-negative");
        }
        if !self.timing_offset.is_finite() || !self.cfo.is_finite() {
            return bad("offsets must be finite");
        }
        let Some(reference) = self.paths.get(self.reference_path_index) else {
            return bad("reference_path_index out of range");
        };
        if self.paths.iter().any(|p| p.distance < reference.distance) {
            return bad("reference path must have the smallest distance");
        }
        let max_distance = SPEED_OF_LIGHT / self.subcarrier_spacing;
        let max_speed = SPEED_OF_LIGHT / (2.0 * self.symbol_duration() * self.carrier_hz());
        for p in &self.paths {
            let d = p.distance + SPEED_OF_LIGHT * self.timing_offset;
            let v = p.velocity + SPEED_OF_LIGHT * self.cfo / self.carrier_hz();
            if !(0.0..max_distance).contains(&d) || v.abs() >= max_speed {
                return bad("path outside the unambiguous delay-Doppler range");
            }
        }
        Ok(())
    }

    pub fn reference(&self) -> &SensingPath {
        &self.paths[self.reference_path_index]
    }

    pub fn grid(&self, padding: usize) -> DelayDopplerGrid {
        DelayDopplerGrid {
            subcarrier_spacing: self.subcarrier_spacing,
            symbol_duration: self.symbol_duration(),
            carrier_freq: self.carrier_hz(),
            padding,
        }
    }
}

/// Axis calibration of the zero-padded periodogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDopplerGrid {
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    /// Hz.
    pub carrier_freq: f64,
    pub padding: usize,
}

impl DelayDopplerGrid {
    /// Distance spanned by one padded delay bin for `subcarriers` tones.
    pub fn distance_cell(&self, subcarriers: usize) -> f64 {
        SPEED_OF_LIGHT / (self.subcarrier_spacing * (subcarriers * self.padding) as f64)
    }

    pub fn velocity_cell(&self, symbols: usize) -> f64 {
        SPEED_OF_LIGHT
            / (self.carrier_freq * self.symbol_duration * (symbols * self.padding) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub distance: f64,
    pub velocity: f64,
    pub compensated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    pub scene: SensingScene,
    /// Zero-padding factor of both periodogram axes.
    pub padding: usize,
    /// Per-sample SNR of the echo: total path power over noise power.
    pub snr_db: f64,
    pub n_draws: usize,
    /// Peaks weaker than this (relative to the strongest, dB) are not
    /// resolvable.
    pub min_peak_db: f64,
    pub seed: u64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            scene: SensingScene::default(),
            padding: 8,
            snr_db: 20.0,
            n_draws: 100,
            min_peak_db: -30.0,
            seed: 2025,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: String| {
            Err(ConfigError::Invalid {
                field: field.to_string(),
                reason,
            })
        };
        if let Err(e) = self.scene.validate() {
            return bad("scene", e.to_string());
        }
        if self.padding == 0 {
            return bad("padding", "padding must be at least 1".into());
        }
        if self.n_draws == 0 {
            return bad("n_draws", "n_draws must be at least 1".into());
        }
        if !self.snr_db.is_finite() || !(self.min_peak_db < 0.0) {
            return bad(
                "min_peak_db",
                "snr_db must be finite and min_peak_db negative".into(),
            );
        }
        Ok(())
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            grid: self.scene.grid(self.padding),
            min_peak_db: self.min_peak_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub grid: DelayDopplerGrid,
    pub min_peak_db: f64,
}

fn tone(m: usize, l: usize, df: f64, t_sym: f64, tau: f64, fd: f64) -> C64 {
    let phase = -2.0 * std::f64::consts::PI * m as f64 * df * tau
        + 2.0 * std::f64::consts::PI * l as f64 * t_sym * fd;
    Complex::from_polar(1.0, phase)
}

/// Subcarriers x symbols echo of `scene`. `snr_db = inf` gives the noiseless
/// signal.
pub fn synthesize_echo<R: Rng + ?Sized>(
    scene: &SensingScene,
    snr_db: f64,
    rng: &mut R,
) -> DMatrix<C64> {
    let (n, l) = (scene.subcarriers, scene.symbols);
    let t_sym = scene.symbol_duration();
    let fc = scene.carrier_hz();
    let mut y = DMatrix::zeros(n, l);
    for p in &scene.paths {
        let tau = p.distance / SPEED_OF_LIGHT + scene.timing_offset;
        let fd = p.velocity * fc / SPEED_OF_LIGHT + scene.cfo;
        for s in 0..l {
            for m in 0..n {
                y[(m, s)] += tone(m, s, scene.subcarrier_spacing, t_sym, tau, fd) * p.gain;
            }
        }
    }
    if snr_db.is_finite() {
        let signal: f64 = scene.paths.iter().map(|p| p.gain * p.gain).sum();
        let sigma = (signal / db_to_linear(snr_db)).sqrt();
        for v in y.iter_mut() {
            *v += complex_gaussian(rng) * sigma;
        }
    }
    y
}

struct Periodogram {
    /// `power[q * delay_bins + k]`
    power: Vec<f64>,
    delay_bins: usize,
    doppler_bins: usize,
}

impl Periodogram {
    fn at(&self, k: isize, q: isize) -> f64 {
        let k = k.rem_euclid(self.delay_bins as isize) as usize;
        let q = q.rem_euclid(self.doppler_bins as isize) as usize;
        self.power[q * self.delay_bins + k]
    }
}

struct Transforms {
    delay: Arc<dyn Fft<f64>>,
    doppler: Arc<dyn Fft<f64>>,
}

/// Inverse DFT across subcarriers (delay) and forward DFT across symbols
/// (Doppler), each zero-padded to `padding` times its length.
fn periodogram(echo: &DMatrix<C64>, padding: usize, fft: &Transforms) -> Periodogram {
    let (n, l) = echo.shape();
    let (nk, nq) = (n * padding, l * padding);
    // Doppler transform of every subcarrier row
    let mut rows = vec![Complex::new(0.0, 0.0); n * nq];
    for m in 0..n {
        let row = &mut rows[m * nq..(m + 1) * nq];
        for s in 0..l {
            row[s] = echo[(m, s)];
        }
        fft.doppler.process(row);
    }
    let mut power = vec![0.0; nk * nq];
    let mut col = vec![Complex::new(0.0, 0.0); nk];
    for q in 0..nq {
        col.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
        for m in 0..n {
            col[m] = rows[m * nq + q];
        }
        fft.delay.process(&mut col);
        for (k, v) in col.iter().enumerate() {
            power[q * nk + k] = v.norm_sqr();
        }
    }
    Periodogram {
        power,
        delay_bins: nk,
        doppler_bins: nq,
    }
}

/// Vertex offset of the parabola through three equally spaced samples.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Extracts `n_paths` peaks, strongest first. Each detected path is fitted
/// (least-squares amplitude at the interpolated delay and Doppler) and
/// removed from the echo before the next search, which nulls both its main
/// lobe and its sidelobes.
pub fn estimate_paths(
    echo: &DMatrix<C64>,
    n_paths: usize,
    cfg: &EstimatorConfig,
) -> Result<Vec<PathEstimate>, SensingError> {
    if n_paths == 0 {
        return Err(SensingError::Scene("n_paths must be at least 1".into()));
    }
    let (n, l) = echo.shape();
    let grid = cfg.grid;
    let padding = grid.padding.max(1);
    let mut planner = FftPlanner::new();
    let fft = Transforms {
        delay: planner.plan_fft_inverse(n * padding),
        doppler: planner.plan_fft_forward(l * padding),
    };
    let mut residual = echo.clone();
    let mut out = Vec::with_capacity(n_paths);
    let mut strongest = None;
    for _ in 0..n_paths {
        let pg = periodogram(&residual, padding, &fft);
        let (best, &peak) = pg
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty periodogram");
        let first = *strongest.get_or_insert(peak);
        if !(peak > 0.0) || 10.0 * (peak / first).log10() < cfg.min_peak_db {
            return Err(SensingError::InsufficientPeaks {
                found: out.len(),
                requested: n_paths,
            });
        }
        let (k, q) = (
            (best % pg.delay_bins) as isize,
            (best / pg.delay_bins) as isize,
        );
        let dk = parabolic_offset(pg.at(k - 1, q), peak, pg.at(k + 1, q));
        let dq = parabolic_offset(pg.at(k, q - 1), peak, pg.at(k, q + 1));
        let kf = k as f64 + dk;
        let mut qf = q as f64 + dq;
        if qf >= pg.doppler_bins as f64 / 2.0 {
            qf -= pg.doppler_bins as f64;
        }
        let tau = kf / (pg.delay_bins as f64 * grid.subcarrier_spacing);
        let fd = qf / (pg.doppler_bins as f64 * grid.symbol_duration);

        let mut norm = 0.0;
        let mut proj = Complex::new(0.0, 0.0);
        for s in 0..l {
            for m in 0..n {
                let t = tone(m, s, grid.subcarrier_spacing, grid.symbol_duration, tau, fd);
                proj += residual[(m, s)] * t.conj();
                norm += 1.0;
            }
        }
        let amp = proj / norm;
        for s in 0..l {
            for m in 0..n {
                residual[(m, s)] -=
                    tone(m, s, grid.subcarrier_spacing, grid.symbol_duration, tau, fd) * amp;
            }
        }
        out.push(PathEstimate {
            distance: (tau * SPEED_OF_LIGHT).max(0.0),
            velocity: fd * SPEED_OF_LIGHT / grid.carrier_freq,
            compensated: false,
        });
    }
    Ok(out)
}

/// Shifts every estimate by the reference path's error. The reference is
/// the estimate with the smallest distance; its compensated value equals
/// `reference_truth` exactly.
pub fn compensate_with_reference(
    estimates: &[PathEstimate],
    reference_truth: (f64, f64),
) -> Result<Vec<PathEstimate>, SensingError> {
    let reference = estimates
        .iter()
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
        .ok_or(SensingError::MissingReference)?;
    let dd = reference.distance - reference_truth.0;
    let dv = reference.velocity - reference_truth.1;
    Ok(estimates
        .iter()
        .map(|e| PathEstimate {
            distance: (e.distance - dd).max(0.0),
            velocity: e.velocity - dv,
            compensated: true,
        })
        .collect())
}

/// One Monte-Carlo draw: raw and compensated estimates, both ordered like
/// `scene.paths` (matched by distance rank).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingDraw {
    pub raw: Vec<PathEstimate>,
    pub compensated: Vec<PathEstimate>,
}

/// Synthesizes, estimates and calibrates one noisy echo.
pub fn run_draw<R: Rng + ?Sized>(
    scene: &SensingScene,
    snr_db: f64,
    est: &EstimatorConfig,
    rng: &mut R,
) -> Result<SensingDraw, SensingError> {
    scene.validate()?;
    let echo = synthesize_echo(scene, snr_db, rng);
    let mut raw = estimate_paths(&echo, scene.paths.len(), est)?;
    raw.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let r = scene.reference();
    let comp = compensate_with_reference(&raw, (r.distance, r.velocity))?;
    // truth order by distance, mapped back to scene order
    let mut order: Vec<usize> = (0..scene.paths.len()).collect();
    order.sort_by(|&a, &b| scene.paths[a].distance.total_cmp(&scene.paths[b].distance));
    let mut raw_out = raw.clone();
    let mut comp_out = comp.clone();
    for (rank, &p) in order.iter().enumerate() {
        raw_out[p] = raw[rank];
        comp_out[p] = comp[rank];
    }
    Ok(SensingDraw {
        raw: raw_out,
        compensated: comp_out,
    })
}

/// Per-path error statistics over all draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSummary {
    pub path: usize,
    pub truth: SensingPath,
    pub mean_raw: (f64, f64),
    pub mean_comp: (f64, f64),
    /// Root-mean-square errors `(distance, velocity)`.
    pub rmse_raw: (f64, f64),
    pub rmse_comp: (f64, f64),
}

pub fn summarize(scene: &SensingScene, draws: &[SensingDraw]) -> Vec<SensingSummary> {
    let n = draws.len().max(1) as f64;
    scene
        .paths
        .iter()
        .enumerate()
        .map(|(p, truth)| {
            let stats = |pick: &dyn Fn(&SensingDraw) -> PathEstimate| {
                let mut mean = (0.0, 0.0);
                let mut sq = (0.0, 0.0);
                for d in draws {
                    let e = pick(d);
                    mean.0 += e.distance / n;
                    mean.1 += e.velocity / n;
                    sq.0 += (e.distance - truth.distance).powi(2) / n;
                    sq.1 += (e.velocity - truth.velocity).powi(2) / n;
                }
                (mean, (sq.0.sqrt(), sq.1.sqrt()))
            };
            let (mean_raw, rmse_raw) = stats(&|d| d.raw[p]);
            let (mean_comp, rmse_comp) = stats(&|d| d.compensated[p]);
            SensingSummary {
                path: p,
                truth: *truth,
                mean_raw,
                mean_comp,
                rmse_raw,
                rmse_comp,
            }
        })
        .collect()
}

pub const SENSING_CSV_HEADER: &str =
    "draw,path,truth_d,truth_v,est_d_raw,est_v_raw,est_d_comp,est_v_comp";

pub fn write_draws_csv<W: Write>(
    out: &mut W,
    scene: &SensingScene,
    draws: &[SensingDraw],
) -> std::io::Result<()> {
    writeln!(out, "{SENSING_CSV_HEADER}")?;
    for (i, d) in draws.iter().enumerate() {
        for (p, truth) in scene.paths.iter().enumerate() {
            writeln!(
                out,
                "{i},{p},{},{},{},{},{},{}",
                truth.distance,
                truth.velocity,
                d.raw[p].distance,
                d.raw[p].velocity,
                d.compensated[p].distance,
                d.compensated[p].velocity
            )?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: &mut W, summary: &[SensingSummary]) -> std::io::Result<()> {
    writeln!(
        out,
        "path,truth_d,truth_v,mean_d_raw,mean_v_raw,mean_d_comp,mean_v_comp,rmse_d_raw,rmse_v_raw,rmse_d_comp,rmse_v_comp"
    )?;
    for s in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.path,
            s.truth.distance,
            s.truth.velocity,
            s.mean_raw.0,
            s.mean_raw.1,
            s.mean_comp.0,
            s.mean_comp.1,
            s.rmse_raw.0,
            s.rmse_raw.1,
            s.rmse_comp.0,
            s.rmse_comp.1
        )?;
    }
    Ok(())
}

/// Plain-text report of the calibration experiment.
pub fn write_report<W: Write>(
    out: &mut W,
    cfg: &SensingConfig,
    summary: &[SensingSummary],
) -> std::io::Result<()> {
    let s = &cfg.scene;
    let c = SPEED_OF_LIGHT;
    writeln!(out, "reference-path synchronization")?;
    writeln!(
        out,
        "scene: {} paths, {} subcarriers x {} symbols, df = {} Hz, fc = {} GHz, padding {}",
        s.paths.len(),
        s.subcarriers,
        s.symbols,
        s.subcarrier_spacing,
        s.carrier_freq,
        cfg.padding
    )?;
    writeln!(
        out,
        "offsets: timing {:.3e} s (+{:.2} m), cfo {} Hz (+{:.2} m/s)",
        s.timing_offset,
        c * s.timing_offset,
        s.cfo,
        c * s.cfo / s.carrier_hz()
    )?;
    writeln!(out, "draws: {} at {} dB SNR", cfg.n_draws, cfg.snr_db)?;
    writeln!(out)?;
    writeln!(
        out,
        "path  truth (m, m/s)         w/o compensation        with compensation"
    )?;
    for r in summary {
        writeln!(
            out,
            "{:<5} {:>9.2} {:>8.2}    {:>9.2} {:>8.2}    {:>9.2} {:>8.2}",
            r.path,
            r.truth.distance,
            r.truth.velocity,
            r.mean_raw.0,
            r.mean_raw.1,
            r.mean_comp.0,
            r.mean_comp.1
        )?;
    }
    writeln!(out)?;
    writeln!(
        out,
        "Note: a published table for this scene (20 m/s, 947.2 m) prints the\n\
         uncompensated row (18.46 m/s, 946.7 m) closer to the truth than the\n\
         compensated row (26.77 m/s, 1248 m). The row labels appear swapped;\n\
         this report shows the physically expected result, in which\n\
         compensation removes the common offset bias."
    )?;
    Ok(())
}
