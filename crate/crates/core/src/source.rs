//! Random-access frame sources.

use crate::frame::{Frame, VideoSpec};
use crate::weather::WeatherModel;

/// A video whose frames can be produced independently by index.
pub trait FrameSource {
    fn spec(&self) -> &VideoSpec;

    fn frame(&self, index: usize) -> Frame;

    fn len(&self) -> usize {
        self.spec().frame_count()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: FrameSource + ?Sized> FrameSource for &S {
    fn spec(&self) -> &VideoSpec {
        (**self).spec()
    }

    fn frame(&self, index: usize) -> Frame {
        (**self).frame(index)
    }

    fn len(&self) -> usize {
        (**self).len()
    }
}

/// Frames held in memory, e.g. loaded from a raw sequence file.
#[derive(Debug, Clone)]
pub struct VecSource {
    spec: VideoSpec,
    frames: Vec<Frame>,
}

impl VecSource {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Self {
        let (w, h) = frames.first().map(|f| (f.width(), f.height())).unwrap_or((1, 1));
        let spec = VideoSpec {
            width: w,
            height: h,
            fps,
            duration: frames.len() as f64 / fps,
        };
        VecSource { spec, frames }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

impl FrameSource for VecSource {
    fn spec(&self) -> &VideoSpec {
        &self.spec
    }

    fn frame(&self, index: usize) -> Frame {
        self.frames[index].clone()
    }

    fn len(&self) -> usize {
        self.frames.len()
    }
}

/// Applies a weather model on top of another source.
#[derive(Debug, Clone)]
pub struct WeatheredSource<S> {
    inner: S,
    weather: WeatherModel,
}

impl<S: FrameSource> WeatheredSource<S> {
    pub fn new(inner: S, weather: WeatherModel) -> Self {
        WeatheredSource { inner, weather }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn weather(&self) -> &WeatherModel {
        &self.weather
    }
}

impl<S: FrameSource> FrameSource for WeatheredSource<S> {
    fn spec(&self) -> &VideoSpec {
        self.inner.spec()
    }

    fn frame(&self, index: usize) -> Frame {
        self.weather.apply(&self.inner.frame(index))
    }

    fn len(&self) -> usize {
        self.inner.len()
    }
}
