//! Seeded convolutional feature extractor and crop geometry.
//!
//! A pretrained deep backbone is out of scope here; this stub preserves the
//! contract the downstream modules rely on — C-channel feature maps at
//! stride 8, computed by separate RGB and thermal branches — while staying
//! fully deterministic from a seed. Three stride-2 conv+relu stages halve
//! the resolution three times, then a 1x1 projection sets the channel count.

use crate::bbox::PixelBox;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;

/// Shapes and scales for feature extraction and cropping.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Output feature channels. Must be divisible by 4 (the stage channel
    /// progression is C/4, C/2, C).
    pub channels: usize,
    /// Template crop edge in pixels; features come out at 1/8 of this.
    pub template_size: usize,
    /// Search crop edge in pixels.
    pub search_size: usize,
    /// Template crop side relative to sqrt(box area).
    pub template_scale: f64,
    /// Search crop side relative to sqrt(box area).
    pub search_scale: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            channels: 64,
            template_size: 128,
            search_size: 256,
            template_scale: 2.0,
            search_scale: 4.0,
        }
    }
}

/// Feature-map stride of the extractor (three stride-2 stages).
pub const STRIDE: usize = 8;

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::Config(format!(
                "channels must be a positive multiple of 4, got {}",
                self.channels
            )));
        }
        for (name, size) in [("template_size", self.template_size), ("search_size", self.search_size)] {
            if size == 0 || size % STRIDE != 0 {
                return Err(Error::Config(format!(
                    "{name} must be a positive multiple of {STRIDE}, got {size}"
                )));
            }
        }
        if self.template_size >= self.search_size {
            return Err(Error::Config(format!(
                "template_size {} must be smaller than search_size {}",
                self.template_size, self.search_size
            )));
        }
        for (name, s) in [("template_scale", self.template_scale), ("search_scale", self.search_scale)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn template_feature_size(&self) -> usize {
        self.template_size / STRIDE
    }

    pub fn search_feature_size(&self) -> usize {
        self.search_size / STRIDE
    }
}

/// One aligned RGB + thermal frame, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: Tensor,
    pub thermal: Tensor,
    pub index: usize,
}

impl Frame {
    pub fn new(rgb: Tensor, thermal: Tensor, index: usize) -> Result<Self, Error> {
        if rgb.rank() != 3 || rgb.shape()[0] != 3 {
            return Err(Error::Data(format!("rgb plane must be [3,H,W], got {:?}", rgb.shape())));
        }
        if thermal.rank() != 3 || thermal.shape()[0] != 1 {
            return Err(Error::Data(format!(
                "thermal plane must be [1,H,W], got {:?}",
                thermal.shape()
            )));
        }
        if rgb.shape()[1..] != thermal.shape()[1..] {
            return Err(Error::Data(format!(
                "rgb {:?} and thermal {:?} sizes differ",
                &rgb.shape()[1..],
                &thermal.shape()[1..]
            )));
        }
        if rgb.data().iter().chain(thermal.data()).any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data("frame values must lie in [0,1]".into()));
        }
        Ok(Frame { rgb, thermal, index })
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }
}

/// Where a crop was taken from, in frame pixels. `side` is integral-valued;
/// `padded` records whether any sample fell outside the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub padded: bool,
}

/// Cuts a square window centered on `center_box`, side
/// `scale * sqrt(w * h)` (rounded to whole pixels), padding out-of-frame
/// samples with the per-channel image mean, and resamples it to
/// `out_size` x `out_size`.
pub fn crop_region(
    image: &Tensor,
    center_box: &PixelBox,
    scale: f64,
    out_size: usize,
) -> Result<(Tensor, CropWindow), Error> {
    if image.rank() != 3 {
        return Err(Error::Data(format!("image must be [C,H,W], got {:?}", image.shape())));
    }
    if !(center_box.w > 0.0 && center_box.h > 0.0) {
        return Err(Error::Data(format!(
            "degenerate box {}x{} cannot define a crop",
            center_box.w, center_box.h
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Data(format!("crop scale must be positive, got {scale}")));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let side = (scale * (center_box.w * center_box.h).sqrt()).round().max(2.0);
    let side_i = side as i64;
    let (cx, cy) = center_box.center();
    let x0 = (cx - side / 2.0).round() as i64;
    let y0 = (cy - side / 2.0).round() as i64;

    let means = image.gap()?;
    let plane = h * w;
    let mut padded = false;
    let mut data = vec![0.0; c * (side_i * side_i) as usize];
    for ch in 0..c {
        let src = &image.data()[ch * plane..(ch + 1) * plane];
        let mean = means.data()[ch];
        for oy in 0..side_i {
            let iy = y0 + oy;
            for ox in 0..side_i {
                let ix = x0 + ox;
                let v = if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                    src[iy as usize * w + ix as usize]
                } else {
                    padded = true;
                    mean
                };
                data[ch * (side_i * side_i) as usize + (oy * side_i + ox) as usize] = v;
            }
        }
    }
    let crop = Tensor::new(vec![c, side_i as usize, side_i as usize], data)?;
    let resized = crop.bilinear_resize(out_size, out_size)?;
    Ok((resized, CropWindow { x0: x0 as f64, y0: y0 as f64, side, padded }))
}

struct ConvStage {
    kernel: Tensor,
    bias: Vec<f64>,
}

impl ConvStage {
    /// 4x4 kernel, stride 2, padding 1: halves even spatial extents
    /// exactly. Weights are scaled by sqrt(2 / fan_in); biases start at 0.
    fn random(rng: &mut Rng, c_in: usize, c_out: usize) -> Self {
        let fan_in = (c_in * 16) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data: Vec<f64> = (0..c_out * c_in * 16).map(|_| rng.gaussian(std)).collect();
        ConvStage {
            kernel: Tensor::new(vec![c_out, c_in, 4, 4], data).expect("seeded weights are finite"),
            bias: vec![0.0; c_out],
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, Error> {
        Ok(x.conv2d(&self.kernel, 1, 2)?.add_channel_bias(&self.bias)?.relu()?)
    }
}

struct Branch {
    stages: Vec<ConvStage>,
    proj: ConvStage, // 1x1, stride 1, no padding
}

impl Branch {
    fn random(rng: &mut Rng, c_in: usize, channels: usize) -> Self {
        let c4 = channels / 4;
        let c2 = channels / 2;
        let stages = vec![
            ConvStage::random(rng, c_in, c4),
            ConvStage::random(rng, c4, c2),
            ConvStage::random(rng, c2, channels),
        ];
        let fan_in = channels as f64;
        let std = (2.0 / fan_in).sqrt();
        let data: Vec<f64> = (0..channels * channels).map(|_| rng.gaussian(std)).collect();
        let proj = ConvStage {
            kernel: Tensor::new(vec![channels, channels, 1, 1], data).expect("seeded weights are finite"),
            bias: vec![0.0; channels],
        };
        Branch { stages, proj }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, Error> {
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = stage.forward(&cur)?;
        }
        // final projection is linear (no relu) so features keep both signs
        Ok(cur.conv2d(&self.proj.kernel, 0, 1)?.add_channel_bias(&self.proj.bias)?)
    }
}

/// Deterministic two-branch feature extractor. Weights are drawn once from
/// the seed at construction and shared between template and search crops;
/// the RGB and thermal branches are independent.
pub struct FeatureExtractor {
    rgb: Branch,
    thermal: Branch,
    pub config: BackboneConfig,
}

impl FeatureExtractor {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut root = Rng::new(seed);
        let mut rgb_rng = root.fork(1);
        let mut th_rng = root.fork(2);
        Ok(FeatureExtractor {
            rgb: Branch::random(&mut rgb_rng, 3, config.channels),
            thermal: Branch::random(&mut th_rng, 1, config.channels),
            config,
        })
    }

    /// Features for an RGB crop: `[3,s,s] -> [C, s/8, s/8]`.
    pub fn extract_rgb(&self, crop: &Tensor) -> Result<Tensor, Error> {
        self.rgb.forward(crop)
    }

    /// Features for a thermal crop: `[1,s,s] -> [C, s/8, s/8]`.
    pub fn extract_thermal(&self, crop: &Tensor) -> Result<Tensor, Error> {
        self.thermal.forward(crop)
    }
}
