//! Frame sources: phantom-driven, recorded, and a capture placeholder.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::frame::Frame;
use crate::phantom::Phantom;

/// Name of the index file inside a recording directory.
pub const RECORDING_INDEX: &str = "frames.jsonl";

pub trait FrameSource {
    /// Next frame, or `None` once the source is exhausted.
    fn next_frame(&mut self) -> Result<Option<Frame>, SessionError>;
}

/// Supplies the activation level for a phantom source at time `t`.
pub trait ActivationInput {
    fn activation(&mut self, t: f64) -> f64;
}

impl<F: FnMut(f64) -> f64> ActivationInput for F {
    fn activation(&mut self, t: f64) -> f64 {
        self(t)
    }
}

/// Activation level shared with another thread, e.g. an operator slider.
#[derive(Debug, Clone, Default)]
pub struct ManualActivation(Arc<AtomicU64>);

impl ManualActivation {
    pub fn new(initial: f64) -> Self {
        Self(Arc::new(AtomicU64::new(initial.to_bits())))
    }

    pub fn set(&self, value: f64) -> Result<(), SessionError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SessionError::ActivationRange(value));
        }
        self.0.store(value.to_bits(), Ordering::Relaxed);
        Ok(())
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }
}

impl ActivationInput for ManualActivation {
    fn activation(&mut self, _t: f64) -> f64 {
        self.get()
    }
}

/// Renders phantom frames on a fixed clock.
pub struct PhantomSource<A> {
    phantom: Arc<Phantom>,
    input: A,
    rate: f64,
    start: f64,
    index: u64,
    limit: Option<u64>,
}

impl<A: ActivationInput> PhantomSource<A> {
    pub fn new(phantom: Arc<Phantom>, input: A, rate: f64) -> Self {
        Self { phantom, input, rate, start: 0.0, index: 0, limit: None }
    }

    /// Timestamps start at `start` instead of zero.
    pub fn starting_at(mut self, start: f64) -> Self {
        self.start = start;
        self
    }

    /// Stops after `frames` frames.
    pub fn take_frames(mut self, frames: u64) -> Self {
        self.limit = Some(frames);
        self
    }

    pub fn input_mut(&mut self) -> &mut A {
        &mut self.input
    }

    /// Timestamp of the next frame.
    pub fn next_time(&self) -> f64 {
        self.start + self.index as f64 / self.rate
    }
}

impl<A: ActivationInput> FrameSource for PhantomSource<A> {
    fn next_frame(&mut self) -> Result<Option<Frame>, SessionError> {
        if self.limit.is_some_and(|l| self.index >= l) {
            return Ok(None);
        }
        let t = self.next_time();
        let a = self.input.activation(t).clamp(0.0, 1.0);
        self.index += 1;
        Ok(Some(self.phantom.render(a, t)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    timestamp: f64,
}

/// Frames stored as PNG files listed in a `frames.jsonl` index.
pub struct ReplaySource {
    dir: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    last: Option<f64>,
}

impl ReplaySource {
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let file = File::open(dir.join(RECORDING_INDEX))?;
        Ok(Self { dir: dir.to_path_buf(), lines: BufReader::new(file).lines(), last: None })
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SessionError> {
        let Some(line) = self.lines.next() else { return Ok(None) };
        let line = line?;
        if line.trim().is_empty() {
            return self.next_frame();
        }
        let entry: IndexEntry = serde_json::from_str(&line).map_err(|e| SessionError::Recording(e.to_string()))?;
        if self.last.is_some_and(|l| entry.timestamp <= l) {
            return Err(SessionError::Recording(format!("timestamp {} is not increasing", entry.timestamp)));
        }
        self.last = Some(entry.timestamp);
        Ok(Some(read_png(&self.dir.join(&entry.file), entry.timestamp)?))
    }
}

/// Stand-in for a hardware capture device; never yields frames.
pub struct CaptureStub {
    device: String,
}

impl CaptureStub {
    pub fn new(device: impl Into<String>) -> Self {
        Self { device: device.into() }
    }
}

impl FrameSource for CaptureStub {
    fn next_frame(&mut self) -> Result<Option<Frame>, SessionError> {
        Err(SessionError::DeviceUnavailable(self.device.clone()))
    }
}

/// Reads an 8-bit grayscale PNG as a frame.
pub fn read_png(path: &Path, timestamp: f64) -> Result<Frame, SessionError> {
    let img = ImageReader::open(path)?.decode().map_err(|e| SessionError::Image(e.to_string()))?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Frame::new(w as usize, h as usize, img.into_raw(), timestamp)?)
}

/// Writes a frame as an 8-bit grayscale PNG.
pub fn write_png(path: &Path, frame: &Frame) -> Result<(), SessionError> {
    let img = GrayImage::from_raw(frame.width() as u32, frame.height() as u32, frame.pixels().to_vec())
        .ok_or_else(|| SessionError::Image("pixel buffer does not match dimensions".into()))?;
    img.save(path).map_err(|e| SessionError::Image(e.to_string()))
}

/// Appends frames to a recording directory readable by [`ReplaySource`].
pub struct RecordingWriter {
    dir: PathBuf,
    index: BufWriter<File>,
    count: usize,
}

impl RecordingWriter {
    pub fn create(dir: &Path) -> Result<Self, SessionError> {
        std::fs::create_dir_all(dir)?;
        let index = BufWriter::new(File::create(dir.join(RECORDING_INDEX))?);
        Ok(Self { dir: dir.to_path_buf(), index, count: 0 })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<(), SessionError> {
        let file = format!("{:06}.png", self.count);
        write_png(&self.dir.join(&file), frame)?;
        let entry = IndexEntry { file, timestamp: frame.timestamp() };
        let line = serde_json::to_string(&entry).map_err(|e| SessionError::Recording(e.to_string()))?;
        writeln!(self.index, "{line}")?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize, SessionError> {
        self.index.flush()?;
        Ok(self.count)
    }
}
