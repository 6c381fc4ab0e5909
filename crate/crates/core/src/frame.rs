//! Frame representation and the per-frame signal computation.
//!
//! Every incoming B-mode frame is smoothed with a 3×3 Gaussian (σ = 0.5,
//! replicate-edge padding) and correlated against the stored rest and motion
//! references. The two correlations are folded into a single unitless signal
//!
//! ```text
//! S = (1 − C_m) / ((1 − C_m) + (1 − C_r))
//! ```
//!
//! which is 0 at the motion reference and 1 at the rest reference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard deviation of the smoothing kernel, in pixels.
pub const SMOOTHING_SIGMA: f64 = 0.5;

/// Smallest frame edge the 3×3 kernel accepts.
pub const MIN_FRAME_EDGE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame must be at least {MIN_FRAME_EDGE}x{MIN_FRAME_EDGE}, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("both images have zero variance; correlation is undefined")]
    DegenerateCorrelation,
    #[error("frame matches both references; signal is undefined")]
    DegenerateSignal,
    #[error("references are not distinguishable (correlation {0})")]
    IndistinguishableReferences(f64),
    #[error("timestamp {t} is not finite")]
    BadTimestamp { t: f64 },
}

/// A timestamped 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    timestamp: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, timestamp: f64) -> Result<Self, FrameError> {
        if width < MIN_FRAME_EDGE || height < MIN_FRAME_EDGE {
            return Err(FrameError::TooSmall { width, height });
        }
        if pixels.len() != width * height {
            return Err(FrameError::BufferLength { expected: width * height, actual: pixels.len() });
        }
        if !timestamp.is_finite() {
            return Err(FrameError::BadTimestamp { t: timestamp });
        }
        Ok(Self { width, height, pixels, timestamp })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Unfiltered real-valued copy of the pixel data.
    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.pixels.iter().map(|&p| f64::from(p)).collect() }
    }
}

/// A real-valued image plane. No minimum size; used for filtered frames and
/// as the operand type of [`pearson2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FrameError> {
        if data.len() != width * height {
            return Err(FrameError::BufferLength { expected: width * height, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Rounds to the nearest 8-bit value, saturating.
    pub fn quantize(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// A frame after Gaussian smoothing, kept at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedFrame {
    pub image: Image,
    pub timestamp: f64,
}

/// One-dimensional factor of the separable kernel: `[e, 1, e] / (1 + 2e)`
/// with `e = exp(-1 / (2σ²))`.
pub fn gaussian_weights_1d() -> [f64; 3] {
    let side = (-1.0 / (2.0 * SMOOTHING_SIGMA * SMOOTHING_SIGMA)).exp();
    let norm = 1.0 + 2.0 * side;
    [side / norm, 1.0 / norm, side / norm]
}

/// The normalized 3×3 kernel, indexed `[dy + 1][dx + 1]`.
pub fn gaussian_kernel() -> [[f64; 3]; 3] {
    let w = gaussian_weights_1d();
    let mut k = [[0.0; 3]; 3];
    for (row, wy) in k.iter_mut().zip(w) {
        for (cell, wx) in row.iter_mut().zip(w) {
            *cell = wy * wx;
        }
    }
    k
}

/// 3×3 Gaussian smoothing with replicate-edge padding.
///
/// The kernel is separable, so this runs as a horizontal pass followed by a
/// vertical pass.
pub fn gaussian_smooth(frame: &Frame) -> Result<SmoothedFrame, FrameError> {
    if frame.width < MIN_FRAME_EDGE || frame.height < MIN_FRAME_EDGE {
        return Err(FrameError::TooSmall { width: frame.width, height: frame.height });
    }
    let (w, h) = frame.dims();
    let [ws, wc, _] = gaussian_weights_1d();

    let mut horiz = vec![0.0f64; w * h];
    for (src, dst) in frame.pixels.chunks_exact(w).zip(horiz.chunks_exact_mut(w)) {
        let px = |i: usize| f64::from(src[i]);
        dst[0] = ws * px(0) + wc * px(0) + ws * px(1);
        for (x, d) in dst.iter_mut().enumerate().take(w - 1).skip(1) {
            *d = ws * px(x - 1) + wc * px(x) + ws * px(x + 1);
        }
        dst[w - 1] = ws * px(w - 2) + wc * px(w - 1) + ws * px(w - 1);
    }

    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        let above = &horiz[y.saturating_sub(1) * w..][..w];
        let here = &horiz[y * w..][..w];
        let below = &horiz[(y + 1).min(h - 1) * w..][..w];
        let dst = &mut out[y * w..][..w];
        for (x, d) in dst.iter_mut().enumerate() {
            *d = ws * above[x] + wc * here[x] + ws * below[x];
        }
    }

    Ok(SmoothedFrame { image: Image { width: w, height: h, data: out }, timestamp: frame.timestamp })
}

/// An image with its mean removed, plus the centered sum of squares.
///
/// Correlating against a fixed reference many times only needs the reference
/// centered once; [`pearson2d`] and [`SignalProcessor`] share this path so
/// both produce bit-identical correlations.
#[derive(Debug, Clone)]
pub struct CenteredImage {
    dims: (usize, usize),
    centered: Vec<f64>,
    sum_sq: f64,
}

impl CenteredImage {
    pub fn new(image: &Image) -> Self {
        let mean = image.mean();
        let centered: Vec<f64> = image.data.iter().map(|v| v - mean).collect();
        let sum_sq = centered.iter().map(|v| v * v).sum();
        Self { dims: image.dims(), centered, sum_sq }
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    pub fn correlate(&self, other: &CenteredImage) -> Result<f64, FrameError> {
        if self.dims != other.dims {
            return Err(FrameError::DimensionMismatch { a: self.dims, b: other.dims });
        }
        if self.sum_sq == 0.0 && other.sum_sq == 0.0 {
            return Err(FrameError::DegenerateCorrelation);
        }
        if self.sum_sq == 0.0 || other.sum_sq == 0.0 {
            // Covariance with a constant image is zero.
            return Ok(0.0);
        }
        let cross: f64 = self.centered.iter().zip(&other.centered).map(|(a, b)| a * b).sum();
        Ok((cross / (self.sum_sq * other.sum_sq).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Pearson correlation coefficient over all pixels of two equally sized images.
pub fn pearson2d(a: &Image, b: &Image) -> Result<f64, FrameError> {
    if a.dims() != b.dims() {
        return Err(FrameError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    CenteredImage::new(a).correlate(&CenteredImage::new(b))
}

/// Calibration references: raw frames and their smoothed counterparts.
///
/// The raw frames are kept so the pair can be persisted losslessly as 8-bit
/// images and re-smoothed bit-identically on load.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    rest_raw: Frame,
    motion_raw: Frame,
    rest: SmoothedFrame,
    motion: SmoothedFrame,
}

impl ReferencePair {
    pub fn new(rest_raw: Frame, motion_raw: Frame) -> Result<Self, FrameError> {
        if rest_raw.dims() != motion_raw.dims() {
            return Err(FrameError::DimensionMismatch { a: rest_raw.dims(), b: motion_raw.dims() });
        }
        let rest = gaussian_smooth(&rest_raw)?;
        let motion = gaussian_smooth(&motion_raw)?;
        let c = pearson2d(&rest.image, &motion.image)?;
        if c >= 1.0 {
            return Err(FrameError::IndistinguishableReferences(c));
        }
        Ok(Self { rest_raw, motion_raw, rest, motion })
    }

    pub fn rest(&self) -> &SmoothedFrame {
        &self.rest
    }

    pub fn motion(&self) -> &SmoothedFrame {
        &self.motion
    }

    pub fn rest_raw(&self) -> &Frame {
        &self.rest_raw
    }

    pub fn motion_raw(&self) -> &Frame {
        &self.motion_raw
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rest_raw.dims()
    }

    /// Correlation between the two smoothed references.
    pub fn mutual_correlation(&self) -> f64 {
        pearson2d(&self.rest.image, &self.motion.image).unwrap_or(1.0)
    }
}

/// Raw signal value and the correlations it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SonomyoSample {
    pub s_raw: f64,
    pub c_rest: f64,
    pub c_motion: f64,
    pub timestamp: f64,
}

/// Folds the two reference correlations into the raw signal.
pub fn signal_from_correlations(c_rest: f64, c_motion: f64) -> Result<f64, FrameError> {
    let motion_term = 1.0 - c_motion;
    let denom = motion_term + (1.0 - c_rest);
    if denom == 0.0 {
        return Err(FrameError::DegenerateSignal);
    }
    Ok(motion_term / denom)
}

/// Computes the raw signal for an already smoothed frame.
pub fn compute_signal(frame: &SmoothedFrame, refs: &ReferencePair) -> Result<SonomyoSample, FrameError> {
    let c_rest = pearson2d(&frame.image, &refs.rest.image)?;
    let c_motion = pearson2d(&frame.image, &refs.motion.image)?;
    Ok(SonomyoSample {
        s_raw: signal_from_correlations(c_rest, c_motion)?,
        c_rest,
        c_motion,
        timestamp: frame.timestamp,
    })
}

/// Streaming form of [`compute_signal`] with the references pre-centered.
#[derive(Debug, Clone)]
pub struct SignalProcessor {
    rest: CenteredImage,
    motion: CenteredImage,
}

impl SignalProcessor {
    pub fn new(refs: &ReferencePair) -> Self {
        Self { rest: CenteredImage::new(&refs.rest.image), motion: CenteredImage::new(&refs.motion.image) }
    }

    /// Smooths `frame` and computes its raw signal.
    pub fn process(&self, frame: &Frame) -> Result<SonomyoSample, FrameError> {
        let smoothed = gaussian_smooth(frame)?;
        self.process_smoothed(&smoothed)
    }

    pub fn process_smoothed(&self, frame: &SmoothedFrame) -> Result<SonomyoSample, FrameError> {
        let centered = CenteredImage::new(&frame.image);
        let c_rest = centered.correlate(&self.rest)?;
        let c_motion = centered.correlate(&self.motion)?;
        Ok(SonomyoSample {
            s_raw: signal_from_correlations(c_rest, c_motion)?,
            c_rest,
            c_motion,
            timestamp: frame.timestamp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        Frame::new(w, h, px, 0.0).unwrap()
    }

    #[test]
    fn rejects_small_or_malformed_frames() {
        assert!(matches!(Frame::new(2, 5, vec![0; 10], 0.0), Err(FrameError::TooSmall { .. })));
        assert!(matches!(Frame::new(3, 3, vec![0; 8], 0.0), Err(FrameError::BufferLength { .. })));
        assert!(Frame::new(3, 3, vec![0; 9], f64::NAN).is_err());
    }

    #[test]
    fn kernel_matches_closed_form() {
        let k = gaussian_kernel();
        let sum: f64 = k.iter().flatten().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!((k[1][1] - 0.6193).abs() < 1e-4);
        assert!((k[0][1] - 0.0838).abs() < 1e-4);
        assert!((k[0][0] - 0.0113).abs() < 1e-4);
    }

    #[test]
    fn constant_image_is_unchanged() {
        let f = frame(7, 5, |_, _| 128);
        let s = gaussian_smooth(&f).unwrap();
        assert!(s.image.data().iter().all(|v| (v - 128.0).abs() < 1e-12));
    }

    #[test]
    fn smoothing_keeps_dimensions_and_timestamp() {
        let f = frame(9, 4, |x, y| (x * 10 + y) as u8).with_timestamp(3.25);
        let s = gaussian_smooth(&f).unwrap();
        assert_eq!(s.image.dims(), (9, 4));
        assert_eq!(s.timestamp, 3.25);
    }

    #[test]
    fn pearson_basic_identities() {
        let a = frame(6, 6, |x, y| ((x * 37 + y * 11) % 251) as u8).to_image();
        let neg = Image::new(6, 6, a.data().iter().map(|v| 255.0 - v).collect()).unwrap();
        assert_eq!(pearson2d(&a, &a).unwrap(), 1.0);
        assert!((pearson2d(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        let a = Image::new(2, 2, vec![1.0; 4]).unwrap();
        let b = Image::new(2, 2, vec![3.0; 4]).unwrap();
        let c = Image::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pearson2d(&a, &b), Err(FrameError::DegenerateCorrelation));
        assert!(matches!(pearson2d(&a, &c), Err(FrameError::DimensionMismatch { .. })));
        let d = Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pearson2d(&a, &d), Ok(0.0));
    }

    #[test]
    fn signal_symmetry_point() {
        assert_eq!(signal_from_correlations(0.9, 0.9).unwrap(), 0.5);
        assert_eq!(signal_from_correlations(1.0, 1.0), Err(FrameError::DegenerateSignal));
    }

    #[test]
    fn processor_matches_compute_signal() {
        let rest = frame(12, 10, |x, y| ((x * 31 + y * 17) % 200) as u8);
        let motion = frame(12, 10, |x, y| ((x * 7 + y * 41) % 220) as u8);
        let probe = frame(12, 10, |x, y| ((x * 13 + y * 29) % 180) as u8);
        let refs = ReferencePair::new(rest, motion).unwrap();
        let direct = compute_signal(&gaussian_smooth(&probe).unwrap(), &refs).unwrap();
        let streamed = SignalProcessor::new(&refs).process(&probe).unwrap();
        assert_eq!(direct, streamed);
    }

    #[test]
    fn identical_references_rejected() {
        let f = frame(5, 5, |x, y| (x * 20 + y) as u8);
        assert!(matches!(ReferencePair::new(f.clone(), f), Err(FrameError::IndistinguishableReferences(_))));
    }
}
