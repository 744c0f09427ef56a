//! Synthetic mmWave street scenario.
//!
//! A base station with a half-wavelength ULA sits at the origin facing `+y`.
//! The UE drives along a straight street `y = bs_distance` from
//! `x = -street_half_length` to `x = +street_half_length`; when it leaves the
//! street a new pass starts at the far end with a freshly drawn speed. Each
//! slot carries a single line-of-sight path with a unit-magnitude,
//! random-phase gain, so the optimal beam is a pure function of the UE angle.
//!
//! Observations are a noisy 2-D position and a camera-surrogate embedding:
//! Fourier features `[cos(k*pi*sin(theta)), sin(k*pi*sin(theta))]` for
//! `k = 1, 2, ...` plus Gaussian noise.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("angle {0} rad is outside the open interval (-pi/2, pi/2)")]
    AngleOutOfRange(f64),
    #[error("noise variance must be positive to form an SNR, got {0}")]
    NonPositiveNoise(f64),
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path}: row {row}, column `{column}`: {reason}")]
    BadCell {
        path: String,
        row: u64,
        column: String,
        reason: String,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Analog beam codebook dimensions. Half-wavelength spacing is assumed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub num_antennas: usize,
    pub num_beams: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            num_antennas: 8,
            num_beams: 8,
        }
    }
}

impl CodebookConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_antennas < 1 {
            return Err(EnvError::InvalidConfig(
                "num_antennas must be >= 1".to_string(),
            ));
        }
        if self.num_beams < 2 {
            return Err(EnvError::InvalidConfig(
                "num_beams must be >= 2".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub tx_power: f64,
    pub noise_variance: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            tx_power: 1.0,
            noise_variance: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return Err(EnvError::InvalidConfig("tx_power must be > 0".to_string()));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(EnvError::InvalidConfig(
                "noise_variance must be > 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// One slot's line-of-sight channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub gain: Complex64,
    /// UE azimuth from array boresight, strictly inside (-pi/2, pi/2).
    pub angle: f64,
    pub noise_variance: f64,
    pub tx_power: f64,
}

impl ChannelRealization {
    /// `h = gain * sqrt(N) * a(angle)`, i.e. entry `n` is `gain * exp(j*pi*n*sin(angle))`.
    pub fn channel_vector(&self, num_antennas: usize) -> Result<Vec<Complex64>> {
        let scale = (num_antennas as f64).sqrt();
        Ok(steering_vector(self.angle, num_antennas)?
            .into_iter()
            .map(|a| self.gain * a * scale)
            .collect())
    }
}

/// Unit-norm ULA response: entry `n` is `exp(j*pi*n*sin(angle)) / sqrt(N)`.
pub fn steering_vector(angle: f64, num_antennas: usize) -> Result<Vec<Complex64>> {
    if !(angle > -FRAC_PI_2 && angle < FRAC_PI_2) {
        return Err(EnvError::AngleOutOfRange(angle));
    }
    Ok(steering_from_sine(angle.sin(), num_antennas))
}

fn steering_from_sine(sine: f64, num_antennas: usize) -> Vec<Complex64> {
    let norm = 1.0 / (num_antennas as f64).sqrt();
    (0..num_antennas)
        .map(|n| Complex64::from_polar(norm, PI * n as f64 * sine))
        .collect()
}

/// DFT-grid codebook, beams uniform in sine space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    config: CodebookConfig,
    codewords: Vec<Vec<Complex64>>,
}

impl Codebook {
    pub fn config(&self) -> CodebookConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codeword(&self, m: usize) -> &[Complex64] {
        &self.codewords[m]
    }

    pub fn codewords(&self) -> &[Vec<Complex64>] {
        &self.codewords
    }

    /// `sin` of the boresight of beam `m`: `-1 + (2m + 1) / M`.
    pub fn boresight_sine(&self, m: usize) -> f64 {
        boresight_sine(m, self.config.num_beams)
    }

    pub fn boresight_angle(&self, m: usize) -> f64 {
        self.boresight_sine(m).asin()
    }
}

fn boresight_sine(m: usize, num_beams: usize) -> f64 {
    -1.0 + (2 * m + 1) as f64 / num_beams as f64
}

pub fn dft_codebook(config: &CodebookConfig) -> Result<Codebook> {
    config.validate()?;
    let codewords = (0..config.num_beams)
        .map(|m| steering_from_sine(boresight_sine(m, config.num_beams), config.num_antennas))
        .collect();
    Ok(Codebook {
        config: *config,
        codewords,
    })
}

/// `P * |h^H f|^2 / sigma^2`. The antenna count is taken from the codeword.
pub fn beam_snr(channel: &ChannelRealization, codeword: &[Complex64]) -> Result<f64> {
    if channel.noise_variance.is_nan() || channel.noise_variance <= 0.0 {
        return Err(EnvError::NonPositiveNoise(channel.noise_variance));
    }
    let h = channel.channel_vector(codeword.len())?;
    let inner: Complex64 = h
        .iter()
        .zip(codeword)
        .map(|(hn, fn_)| hn.conj() * fn_)
        .sum();
    Ok(channel.tx_power * inner.norm_sqr() / channel.noise_variance)
}

/// Index of the max-SNR codeword; ties go to the smallest index.
pub fn optimal_beam(channel: &ChannelRealization, codebook: &Codebook) -> Result<usize> {
    let mut best = 0;
    let mut best_snr = f64::NEG_INFINITY;
    for (m, codeword) in codebook.codewords().iter().enumerate() {
        let snr = beam_snr(channel, codeword)?;
        if snr > best_snr {
            best = m;
            best_snr = snr;
        }
    }
    Ok(best)
}

/// Camera-surrogate features of an angle, interleaved as
/// `[cos(pi s), sin(pi s), cos(2 pi s), sin(2 pi s), ...]` with `s = sin(angle)`,
/// truncated to `dim` entries.
pub fn surrogate_embedding(angle: f64, dim: usize) -> Vec<f64> {
    let s = angle.sin();
    (0..dim)
        .map(|i| {
            let k = (i / 2 + 1) as f64;
            if i % 2 == 0 {
                (k * PI * s).cos()
            } else {
                (k * PI * s).sin()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub num_slots: usize,
    /// UE speed in metres per slot, drawn uniformly per street pass.
    pub speed_range: (f64, f64),
    pub position_noise_std: f64,
    pub embedding_dim: usize,
    pub embedding_noise_std: f64,
    /// Perpendicular distance from the BS to the street, metres.
    pub bs_distance: f64,
    pub street_half_length: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            num_slots: 2000,
            speed_range: (1.0, 2.0),
            position_noise_std: 0.5,
            embedding_dim: 8,
            embedding_noise_std: 0.05,
            bs_distance: 10.0,
            street_half_length: 40.0,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EnvError::InvalidConfig(msg.to_string()));
        if self.num_slots < 1 {
            return bad("num_slots must be >= 1");
        }
        let (lo, hi) = self.speed_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("speed_range must satisfy 0 < min <= max");
        }
        if !(self.position_noise_std >= 0.0 && self.position_noise_std.is_finite()) {
            return bad("position_noise_std must be >= 0");
        }
        if !(self.embedding_noise_std >= 0.0 && self.embedding_noise_std.is_finite()) {
            return bad("embedding_noise_std must be >= 0");
        }
        if self.embedding_dim < 1 {
            return bad("embedding_dim must be >= 1");
        }
        if !(self.bs_distance > 0.0 && self.bs_distance.is_finite()) {
            return bad("bs_distance must be > 0");
        }
        if !(self.street_half_length > 0.0 && self.street_half_length.is_finite()) {
            return bad("street_half_length must be > 0");
        }
        Ok(())
    }
}

/// Ground truth and observations for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub slot: usize,
    /// Noisy observed street coordinates.
    pub position: [f64; 2],
    pub embedding: Vec<f64>,
    pub label: usize,
    /// Hidden ground truth; absent when loaded from a file without it.
    pub true_angle: Option<f64>,
}

pub fn generate_trajectory(
    traj: &TrajectoryConfig,
    cb: &CodebookConfig,
    ch: &ChannelParams,
) -> Result<Vec<ScenarioSample>> {
    traj.validate()?;
    ch.validate()?;
    let codebook = dft_codebook(cb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(traj.seed);
    let pos_noise = Normal::new(0.0, traj.position_noise_std)
        .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
    let emb_noise = Normal::new(0.0, traj.embedding_noise_std)
        .map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
    let (speed_lo, speed_hi) = traj.speed_range;
    let half = traj.street_half_length;

    let mut x = -half;
    let mut speed = rng.random_range(speed_lo..=speed_hi);
    let mut samples = Vec::with_capacity(traj.num_slots);
    for slot in 0..traj.num_slots {
        let angle = x.atan2(traj.bs_distance);
        let phase = rng.random_range(0.0..(2.0 * PI));
        let channel = ChannelRealization {
            gain: Complex64::from_polar(1.0, phase),
            angle,
            noise_variance: ch.noise_variance,
            tx_power: ch.tx_power,
        };
        let label = optimal_beam(&channel, &codebook)?;
        let position = [
            x + pos_noise.sample(&mut rng),
            traj.bs_distance + pos_noise.sample(&mut rng),
        ];
        let embedding = surrogate_embedding(angle, traj.embedding_dim)
            .into_iter()
            .map(|v| v + emb_noise.sample(&mut rng))
            .collect();
        samples.push(ScenarioSample {
            slot,
            position,
            embedding,
            label,
            true_angle: Some(angle),
        });

        x += speed;
        if x > half {
            x = -half;
            speed = rng.random_range(speed_lo..=speed_hi);
        }
    }
    Ok(samples)
}

/// Column layout expected by [`load_csv_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvSchema {
    pub num_beams: usize,
    /// Expected embedding width; `None` infers it from the `emb_*` headers.
    pub embedding_dim: Option<usize>,
}

/// Writes `slot,pos_x,pos_y,emb_0..emb_{D-1},label[,true_angle]`.
///
/// Floats use the shortest representation that parses back to the same bits.
pub fn write_csv_dataset(path: impl AsRef<Path>, samples: &[ScenarioSample]) -> Result<()> {
    let path = path.as_ref();
    let dim = samples.first().map_or(0, |s| s.embedding.len());
    let with_angle = samples.iter().all(|s| s.true_angle.is_some()) && !samples.is_empty();
    let csv_err = |source| EnvError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec!["slot".to_string(), "pos_x".to_string(), "pos_y".to_string()];
    header.extend((0..dim).map(|i| format!("emb_{i}")));
    header.push("label".to_string());
    if with_angle {
        header.push("true_angle".to_string());
    }
    writer.write_record(&header).map_err(csv_err)?;
    for s in samples {
        if s.embedding.len() != dim {
            return Err(EnvError::InvalidConfig(format!(
                "slot {} has {} embedding entries, expected {dim}",
                s.slot,
                s.embedding.len()
            )));
        }
        let mut row = vec![
            s.slot.to_string(),
            s.position[0].to_string(),
            s.position[1].to_string(),
        ];
        row.extend(s.embedding.iter().map(f64::to_string));
        row.push(s.label.to_string());
        if with_angle {
            row.push(s.true_angle.unwrap_or(f64::NAN).to_string());
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    writer.into_inner().map_err(|e| e.into_error())?.flush()?;
    Ok(())
}

pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<ScenarioSample>> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let csv_err = |source| EnvError::Csv {
        path: path_str.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EnvError::MissingColumn {
                path: path_str.clone(),
                column: name.to_string(),
            })
    };

    let dim = match schema.embedding_dim {
        Some(d) => d,
        None => headers.iter().filter(|h| h.starts_with("emb_")).count(),
    };
    let slot_col = column("slot")?;
    let x_col = column("pos_x")?;
    let y_col = column("pos_y")?;
    let emb_cols = (0..dim)
        .map(|i| column(&format!("emb_{i}")))
        .collect::<Result<Vec<_>>>()?;
    let label_col = column("label")?;
    let angle_col = headers.iter().position(|h| h == "true_angle");

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // header is line 1, data rows start at line 2
        let row = record.position().map_or(i as u64 + 2, |p| p.line());
        let cell = |col: usize| -> Result<&str> {
            record.get(col).ok_or_else(|| EnvError::BadCell {
                path: path_str.clone(),
                row,
                column: headers[col].to_string(),
                reason: "missing cell".to_string(),
            })
        };
        let bad = |col: usize, reason: String| EnvError::BadCell {
            path: path_str.clone(),
            row,
            column: headers[col].to_string(),
            reason,
        };
        let float = |col: usize| -> Result<f64> {
            let raw = cell(col)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| bad(col, format!("`{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(col, format!("`{raw}` is not finite")));
            }
            Ok(v)
        };
        let integer = |col: usize| -> Result<usize> {
            let raw = cell(col)?;
            raw.parse()
                .map_err(|_| bad(col, format!("`{raw}` is not a non-negative integer")))
        };

        let label = integer(label_col)?;
        if label >= schema.num_beams {
            return Err(bad(
                label_col,
                format!("label {label} is outside [0, {})", schema.num_beams),
            ));
        }
        let true_angle = match angle_col {
            Some(col) => {
                let raw = cell(col)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| bad(col, format!("`{raw}` is not a number")))?;
                v.is_finite().then_some(v)
            }
            None => None,
        };
        samples.push(ScenarioSample {
            slot: integer(slot_col)?,
            position: [float(x_col)?, float(y_col)?],
            embedding: emb_cols.iter().map(|&c| float(c)).collect::<Result<_>>()?,
            label,
            true_angle,
        });
    }
    samples.sort_by_key(|s| s.slot);
    Ok(samples)
}
