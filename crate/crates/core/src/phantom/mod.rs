//! Synthetic forearm phantom.
//!
//! A fixed speckle-like texture stands in for the imaged flexor compartment.
//! Muscle activation translates the texture vertically and compresses its
//! upper half, so the correlation of a rendered frame with the relaxed
//! texture falls steadily as activation rises.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FrameError};

pub mod subject;

pub use subject::{plan_movement, ActivationTrajectory, Profile, VirtualSubject, VirtualSubjectParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("activation {0} outside [0, 1]")]
    Activation(f64),
    #[error("invalid phantom parameters: {0}")]
    Params(&'static str),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub texture_seed: u64,
    /// Vertical texture displacement at full activation, pixels.
    pub max_shift: f64,
    /// Fractional compression of the upper half at full activation.
    pub max_compression: f64,
    /// Per-frame Gaussian pixel noise, intensity units.
    pub noise_sigma: f64,
    /// Vertical correlation length of the tissue texture, pixels.
    #[serde(default = "default_structure_length")]
    pub structure_length: f64,
    /// Vertical correlation length of the fine speckle, pixels.
    #[serde(default = "default_speckle_length")]
    pub speckle_length: f64,
    /// Share of texture variance carried by the fine speckle.
    #[serde(default = "default_speckle_fraction")]
    pub speckle_fraction: f64,
}

fn default_structure_length() -> f64 {
    120.0
}

fn default_speckle_length() -> f64 {
    6.0
}

fn default_speckle_fraction() -> f64 {
    0.1
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            width: 660,
            height: 363,
            texture_seed: 1,
            max_shift: 40.0,
            max_compression: 0.15,
            noise_sigma: 2.0,
            structure_length: default_structure_length(),
            speckle_length: default_speckle_length(),
            speckle_fraction: default_speckle_fraction(),
        }
    }
}

impl PhantomParams {
    /// Same geometry scaled by `factor` in both axes; lengths scale along.
    pub fn scaled(factor: f64) -> Self {
        let d = Self::default();
        Self {
            width: ((d.width as f64 * factor).round() as usize).max(3),
            height: ((d.height as f64 * factor).round() as usize).max(3),
            max_shift: d.max_shift * factor,
            structure_length: d.structure_length * factor,
            speckle_length: (d.speckle_length * factor).max(1.0),
            ..d
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.width < 3 || self.height < 3 {
            return Err(PhantomError::Params("frame must be at least 3x3"));
        }
        if !(self.max_shift >= 0.0 && self.max_shift < self.height as f64 / 4.0) {
            return Err(PhantomError::Params("max_shift must be below a quarter of the height"));
        }
        if !(0.0..1.0).contains(&self.max_compression) {
            return Err(PhantomError::Params("max_compression must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(PhantomError::Params("noise_sigma must be non-negative"));
        }
        if !(self.structure_length > 0.0 && self.speckle_length > 0.0) {
            return Err(PhantomError::Params("correlation lengths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.speckle_fraction) {
            return Err(PhantomError::Params("speckle_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

const MEAN_INTENSITY: f64 = 110.0;
const TEXTURE_SD: f64 = 42.0;

/// A phantom with its base texture generated once.
#[derive(Debug, Clone)]
pub struct Phantom {
    params: PhantomParams,
    /// Padded texture, `width × padded_height`, row-major.
    texture: Vec<f64>,
    pad_top: usize,
    padded_height: usize,
}

/// Stationary unit-variance AR(1) sequence with correlation `exp(-1/len)` per step.
fn ar1_column(rng: &mut ChaCha8Rng, n: usize, len: f64) -> Vec<f64> {
    let phi = (-1.0 / len).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x: f64 = rng.sample(StandardNormal);
    for _ in 0..n {
        out.push(x);
        let e: f64 = rng.sample(StandardNormal);
        x = phi * x + innov * e;
    }
    out
}

/// Horizontal Gaussian blur of each row (wrap-around), renormalized to unit variance.
fn blur_rows(field: &mut [f64], width: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let energy: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let mut row_buf = vec![0.0; width];
    for row in field.chunks_exact_mut(width) {
        for (x, out) in row_buf.iter_mut().enumerate() {
            *out = weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[(x as isize + k as isize - radius).rem_euclid(width as isize) as usize])
                .sum::<f64>()
                / energy;
        }
        row.copy_from_slice(&row_buf);
    }
}

impl Phantom {
    pub fn new(params: PhantomParams) -> Result<Self, PhantomError> {
        params.validate()?;
        let mid = params.height as f64 / 2.0;
        let pad_top = (mid * params.max_compression).ceil() as usize + 2;
        let pad_bottom = params.max_shift.ceil() as usize + 2;
        let padded_height = params.height + pad_top + pad_bottom;
        let w = params.width;

        let mut rng = ChaCha8Rng::seed_from_u64(params.texture_seed);
        let mut structure = vec![0.0; w * padded_height];
        let mut speckle = vec![0.0; w * padded_height];
        for x in 0..w {
            let col = ar1_column(&mut rng, padded_height, params.structure_length);
            for (y, v) in col.into_iter().enumerate() {
                structure[y * w + x] = v;
            }
        }
        for x in 0..w {
            let col = ar1_column(&mut rng, padded_height, params.speckle_length);
            for (y, v) in col.into_iter().enumerate() {
                speckle[y * w + x] = v;
            }
        }
        blur_rows(&mut structure, w, (params.structure_length / 20.0).max(1.0));
        blur_rows(&mut speckle, w, (params.speckle_length / 4.0).max(0.5));

        let (a, b) = ((1.0 - params.speckle_fraction).sqrt(), params.speckle_fraction.sqrt());
        let texture =
            structure.iter().zip(&speckle).map(|(s, p)| MEAN_INTENSITY + TEXTURE_SD * (a * s + b * p)).collect();
        Ok(Self { params, texture, pad_top, padded_height })
    }

    pub fn params(&self) -> &PhantomParams {
        &self.params
    }

    /// Source row (in padded texture coordinates) shown at output row `y`.
    fn source_row(&self, y: usize, activation: f64) -> f64 {
        let mid = self.params.height as f64 / 2.0;
        let y = y as f64;
        let warped = if y < mid { mid - (mid - y) * (1.0 + activation * self.params.max_compression) } else { y };
        warped + activation * self.params.max_shift + self.pad_top as f64
    }

    /// Noise-free, unquantized render.
    pub fn render_clean(&self, activation: f64) -> Result<Vec<f64>, PhantomError> {
        if !(0.0..=1.0).contains(&activation) {
            return Err(PhantomError::Activation(activation));
        }
        let w = self.params.width;
        let mut out = vec![0.0; w * self.params.height];
        for (y, dst) in out.chunks_exact_mut(w).enumerate() {
            let src = self.source_row(y, activation);
            let r0 = (src.floor() as usize).min(self.padded_height - 2);
            let f = src - r0 as f64;
            let row_a = &self.texture[r0 * w..][..w];
            let row_b = &self.texture[(r0 + 1) * w..][..w];
            if f == 0.0 {
                dst.copy_from_slice(row_a);
            } else {
                for ((d, a), b) in dst.iter_mut().zip(row_a).zip(row_b) {
                    *d = a + f * (b - a);
                }
            }
        }
        Ok(out)
    }

    /// Renders the frame seen at `activation` and time `t`.
    pub fn render(&self, activation: f64, t: f64) -> Result<Frame, PhantomError> {
        let mut img = self.render_clean(activation)?;
        if self.params.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(self.params.texture_seed, t));
            for v in img.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v += self.params.noise_sigma * n;
            }
        }
        let pixels = img.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Ok(Frame::new(self.params.width, self.params.height, pixels, t)?)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn noise_seed(texture_seed: u64, t: f64) -> u64 {
    splitmix(splitmix(texture_seed) ^ t.to_bits())
}

/// One-shot render through a freshly built phantom.
pub fn render_frame(activation: f64, params: &PhantomParams, t: f64) -> Result<Frame, PhantomError> {
    Phantom::new(*params)?.render(activation, t)
}
