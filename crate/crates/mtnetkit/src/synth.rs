//! Synthetic two-modality sequence generator.
//!
//! Renders a deterministic, seed-reproducible stand-in for a real RGB +
//! thermal benchmark sequence: the RGB stream shows a colored rectangle over
//! textured noise, the thermal stream a bright blob over dark noise at the
//! same box. The target follows a linear + sinusoidal trajectory with
//! optional scale oscillation, optional occlusion windows (an occluder drawn
//! over the target), and optional per-frame sensor noise per modality.
//!
//! Output layout matches what the tracker and evaluator consume:
//! `rgb/%06d.ppm`, `thermal/%06d.pgm`, `groundtruth.txt` (one `x,y,w,h` line
//! per frame).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::PixelBox;
use crate::pnm::Pnm;
use crate::rng::Rng;
use crate::Error;

/// A frame range `[start, end)` during which the occluder covers the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionWindow {
    pub start: usize,
    pub end: usize,
}

/// Full description of a synthetic sequence; the seed determines every byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Target center at frame 0.
    pub start_cx: f64,
    pub start_cy: f64,
    /// Linear velocity, pixels per frame.
    pub vel_x: f64,
    pub vel_y: f64,
    /// Sinusoidal wobble amplitudes (pixels) and shared period (frames).
    pub wave_amp_x: f64,
    pub wave_amp_y: f64,
    pub wave_period: f64,
    /// Relative scale oscillation: size factor 1 + amp*sin(2*pi*t/period).
    pub scale_amp: f64,
    pub scale_period: f64,
    pub occlusions: Vec<OcclusionWindow>,
    /// Per-frame additive gaussian noise (8-bit intensity units).
    pub noise_rgb: f64,
    pub noise_thermal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 60,
            width: 256,
            height: 256,
            target_w: 48.0,
            target_h: 48.0,
            start_cx: 128.0,
            start_cy: 128.0,
            vel_x: 0.6,
            vel_y: 0.0,
            wave_amp_x: 0.0,
            wave_amp_y: 8.0,
            wave_period: 40.0,
            scale_amp: 0.0,
            scale_period: 50.0,
            occlusions: Vec::new(),
            noise_rgb: 4.0,
            noise_thermal: 4.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// The ground-truth box at frame `t`.
    pub fn box_at(&self, t: usize) -> PixelBox {
        let tf = t as f64;
        let phase = 2.0 * std::f64::consts::PI * tf / self.wave_period;
        let cx = self.start_cx + self.vel_x * tf + self.wave_amp_x * phase.sin();
        let cy = self.start_cy + self.vel_y * tf + self.wave_amp_y * phase.sin();
        let s = 1.0 + self.scale_amp * (2.0 * std::f64::consts::PI * tf / self.scale_period).sin();
        let (w, h) = (self.target_w * s, self.target_h * s);
        PixelBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config("frame size must be at least 8x8".into()));
        }
        for v in [
            self.target_w,
            self.target_h,
            self.start_cx,
            self.start_cy,
            self.vel_x,
            self.vel_y,
            self.wave_amp_x,
            self.wave_amp_y,
            self.wave_period,
            self.scale_amp,
            self.scale_period,
            self.noise_rgb,
            self.noise_thermal,
        ] {
            if !v.is_finite() {
                return Err(Error::Config("all trajectory fields must be finite".into()));
            }
        }
        if self.target_w < 2.0 || self.target_h < 2.0 {
            return Err(Error::Config("target must be at least 2x2 pixels".into()));
        }
        if self.wave_period <= 0.0 || self.scale_period <= 0.0 {
            return Err(Error::Config("periods must be positive".into()));
        }
        if self.scale_amp.abs() >= 1.0 {
            return Err(Error::Config("scale_amp magnitude must stay below 1".into()));
        }
        if self.noise_rgb < 0.0 || self.noise_thermal < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        for occ in &self.occlusions {
            if occ.start >= occ.end || occ.end > self.frames {
                return Err(Error::Config(format!(
                    "occlusion window {}..{} invalid for {} frames",
                    occ.start, occ.end, self.frames
                )));
            }
        }
        // the target must keep at least half its area inside the frame on
        // every frame, or the sequence is untrackable by construction
        for t in 0..self.frames {
            let b = self.box_at(t);
            if b.w <= 0.0 || b.h <= 0.0 {
                return Err(Error::Config(format!("degenerate target box at frame {t}")));
            }
            let ix = (b.x + b.w).min(self.width as f64) - b.x.max(0.0);
            let iy = (b.y + b.h).min(self.height as f64) - b.y.max(0.0);
            let inside = ix.max(0.0) * iy.max(0.0);
            if inside < 0.5 * b.w * b.h {
                return Err(Error::Config(format!(
                    "target leaves the frame at frame {t} ({:.0}% visible)",
                    100.0 * inside / (b.w * b.h)
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: SynthConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A fully rendered sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub rgb: Vec<Pnm>,
    pub thermal: Vec<Pnm>,
    pub gt: Vec<PixelBox>,
}

fn is_occluded(cfg: &SynthConfig, t: usize) -> bool {
    cfg.occlusions.iter().any(|o| t >= o.start && t < o.end)
}

/// Renders the whole sequence deterministically from the config seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSequence, Error> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut root = Rng::new(cfg.seed);

    // static textured backgrounds, drawn once: mid-gray noise for RGB,
    // dark noise for thermal
    let mut bg_rng = root.fork(1);
    let rgb_bg: Vec<u8> = (0..3 * w * h).map(|_| (40 + bg_rng.next_below(100)) as u8).collect();
    let thermal_bg: Vec<u8> = (0..w * h).map(|_| (5 + bg_rng.next_below(40)) as u8).collect();
    // target color: bright and saturated enough to stand out from the noise
    let color: [u8; 3] = [
        (170 + bg_rng.next_below(86)) as u8,
        (60 + bg_rng.next_below(60)) as u8,
        (170 + bg_rng.next_below(86)) as u8,
    ];

    let mut rgb_frames = Vec::with_capacity(cfg.frames);
    let mut thermal_frames = Vec::with_capacity(cfg.frames);
    let mut gt = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let b = cfg.box_at(t);
        gt.push(b);
        let mut rgb = rgb_bg.clone();
        let mut th = thermal_bg.clone();

        // pixel bounds of the target, clipped to the frame
        let x0 = b.x.floor().max(0.0) as usize;
        let y0 = b.y.floor().max(0.0) as usize;
        let x1 = (b.x + b.w).ceil().min(w as f64) as usize;
        let y1 = (b.y + b.h).ceil().min(h as f64) as usize;
        let (cx, cy) = (b.x + b.w / 2.0, b.y + b.h / 2.0);
        for py in y0..y1 {
            for px in x0..x1 {
                let base = 3 * (py * w + px);
                rgb[base] = color[0];
                rgb[base + 1] = color[1];
                rgb[base + 2] = color[2];
                // thermal: radial bright blob filling the box
                let nx = (px as f64 + 0.5 - cx) / (b.w / 2.0);
                let ny = (py as f64 + 0.5 - cy) / (b.h / 2.0);
                let glow = 230.0 * (-2.0 * (nx * nx + ny * ny)).exp();
                let v = thermal_bg[py * w + px] as f64 + glow;
                th[py * w + px] = v.min(255.0) as u8;
            }
        }

        if is_occluded(cfg, t) {
            // flat occluder slightly larger than the target, hiding it in
            // both modalities
            let margin_x = 0.1 * b.w;
            let margin_y = 0.1 * b.h;
            let ox0 = (b.x - margin_x).floor().max(0.0) as usize;
            let oy0 = (b.y - margin_y).floor().max(0.0) as usize;
            let ox1 = (b.x + b.w + margin_x).ceil().min(w as f64) as usize;
            let oy1 = (b.y + b.h + margin_y).ceil().min(h as f64) as usize;
            for py in oy0..oy1 {
                for px in ox0..ox1 {
                    let base = 3 * (py * w + px);
                    rgb[base] = 90;
                    rgb[base + 1] = 90;
                    rgb[base + 2] = 90;
                    th[py * w + px] = 18;
                }
            }
        }

        if cfg.noise_rgb > 0.0 {
            let mut nr = root.fork(1000 + 2 * t as u64);
            for v in rgb.iter_mut() {
                *v = (*v as f64 + nr.gaussian(cfg.noise_rgb)).clamp(0.0, 255.0) as u8;
            }
        }
        if cfg.noise_thermal > 0.0 {
            let mut nt = root.fork(1001 + 2 * t as u64);
            for v in th.iter_mut() {
                *v = (*v as f64 + nt.gaussian(cfg.noise_thermal)).clamp(0.0, 255.0) as u8;
            }
        }

        rgb_frames.push(Pnm::new(w, h, 3, rgb).map_err(Error::Image)?);
        thermal_frames.push(Pnm::new(w, h, 1, th).map_err(Error::Image)?);
    }
    Ok(SynthSequence { rgb: rgb_frames, thermal: thermal_frames, gt })
}

/// Formats ground-truth boxes the way benchmark files do: one
/// `x,y,w,h` line per frame, two decimals.
pub fn format_groundtruth(gt: &[PixelBox]) -> String {
    let mut out = String::new();
    for b in gt {
        out.push_str(&format!("{:.2},{:.2},{:.2},{:.2}\n", b.x, b.y, b.w, b.h));
    }
    out
}

/// Renders the sequence and writes the on-disk layout the tracker consumes.
pub fn write_sequence(cfg: &SynthConfig, dir: &Path) -> Result<SynthSequence, Error> {
    let seq = generate(cfg)?;
    let rgb_dir = dir.join("rgb");
    let th_dir = dir.join("thermal");
    fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(rgb_dir.clone(), e))?;
    fs::create_dir_all(&th_dir).map_err(|e| Error::io(th_dir.clone(), e))?;
    for (t, (rgb, th)) in seq.rgb.iter().zip(&seq.thermal).enumerate() {
        let rp = rgb_dir.join(format!("{t:06}.ppm"));
        fs::write(&rp, rgb.encode()).map_err(|e| Error::io(rp.clone(), e))?;
        let tp = th_dir.join(format!("{t:06}.pgm"));
        fs::write(&tp, th.encode()).map_err(|e| Error::io(tp.clone(), e))?;
    }
    let gt_path = dir.join("groundtruth.txt");
    fs::write(&gt_path, format_groundtruth(&seq.gt)).map_err(|e| Error::io(gt_path.clone(), e))?;
    Ok(seq)
}
