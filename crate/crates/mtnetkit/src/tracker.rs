//! Frame-by-frame tracking: proposal scoring with the Hann window prior,
//! best-proposal selection, and the template-update policy wired into the
//! full pipeline (crop -> backbone -> modality fusion -> transformer ->
//! head).
//!
//! Scoring blends the appearance score with a motion prior:
//! `score_j = (1-gamma) * p_cls_j * p_loc_j + gamma * hann_j`, where `hann`
//! is the outer product of 1-D Hann windows over the proposal grid. The
//! confidence handed to the update policy is the *unpenalized* product —
//! the motion prior says where the target is expected, not how reliable the
//! appearance match is.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{crop_region, FeatureExtractor, Frame};
use crate::bbox::{NormBox, PixelBox};
use crate::config::RunConfig;
use crate::eval::parse_box_file;
use crate::fusion::{self, FusionParams};
use crate::head::{head_forward, HeadParams, ProposalSet};
use crate::modality::{modality_forward, FeatureQuad, ModalityParams};
use crate::pnm::Pnm;
use crate::rng::Rng;
use crate::update::{update_step, Action, ActiveTemplate, Mode, UpdateConfig, UpdateState};
use crate::Error;

/// 1-D Hann window of length `n >= 2`, endpoints 0, peak 1 (at the middle
/// pair for even `n`). Built mirror-symmetric so `w[i] == w[n-1-i]` holds
/// bitwise — equal-score ties at the grid center must be exact, not
/// one-ulp accidents.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hann window needs at least 2 points");
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let v = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos());
        w[i] = v;
        w[n - 1 - i] = v;
    }
    w
}

/// Outer product of two 1-D Hann windows over a `side x side` grid,
/// flattened row-major; values in [0,1].
pub fn hann_grid(side: usize) -> Vec<f64> {
    let w = hann_window(side);
    let mut g = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            g.push(w[i] * w[j]);
        }
    }
    g
}

/// Unpenalized per-proposal confidence: `p_cls * p_loc`.
pub fn raw_confidences(ps: &ProposalSet) -> Result<Vec<f64>, Error> {
    let fg = ps.fg_probs()?;
    let loc = ps.loc_probs()?;
    Ok(fg.iter().zip(&loc).map(|(a, b)| a * b).collect())
}

/// Blends raw confidences with the Hann motion prior. The proposal count
/// must be a perfect square (it is the flattened search feature grid).
pub fn score_proposals(ps: &ProposalSet, gamma: f64) -> Result<Vec<f64>, Error> {
    if !(0.0..=1.0).contains(&gamma) || !gamma.is_finite() {
        return Err(Error::Config(format!("window gamma must lie in [0,1], got {gamma}")));
    }
    let n = ps.len();
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || side < 2 {
        return Err(Error::Data(format!("proposal count {n} is not a square grid")));
    }
    let hann = hann_grid(side);
    let raw = raw_confidences(ps)?;
    Ok(raw.iter().zip(&hann).map(|(r, h)| (1.0 - gamma) * r + gamma * h).collect())
}

/// The chosen proposal: its grid index, regressed normalized box, and
/// unpenalized confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub box_norm: NormBox,
    pub confidence: f64,
}

/// Argmax over penalized scores; exact ties go to the lowest index. The
/// reported confidence is the unpenalized `p_cls * p_loc` of the winner.
pub fn select_best(scores: &[f64], ps: &ProposalSet) -> Result<Selection, Error> {
    if scores.len() != ps.len() || scores.is_empty() {
        return Err(Error::Data(format!(
            "scores length {} does not match {} proposals",
            scores.len(),
            ps.len()
        )));
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let raw = raw_confidences(ps)?;
    Ok(Selection { index: best, box_norm: ps.norm_boxes()[best], confidence: raw[best] })
}

/// All learned (here: seeded) parameters of the pipeline.
pub struct TrackerParams {
    pub extractor: FeatureExtractor,
    pub modality: ModalityParams,
    pub fusion: FusionParams,
    pub head: HeadParams,
}

impl TrackerParams {
    /// Draws every parameter set from the config seed, one independent
    /// stream per stage.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let mut root = Rng::new(cfg.seed);
        let extractor = FeatureExtractor::new(cfg.backbone, root.fork(1).next_u64())?;
        let mut mrng = root.fork(2);
        let modality = ModalityParams::random(&mut mrng, cfg.backbone.channels);
        let mut frng = root.fork(3);
        let fusion = FusionParams::random(
            &mut frng,
            cfg.backbone.channels,
            cfg.fusion.dim,
            cfg.fusion.heads,
            cfg.fusion.layers,
        )?;
        let mut hrng = root.fork(4);
        let head = HeadParams::random(&mut hrng, cfg.fusion.dim);
        Ok(TrackerParams { extractor, modality, fusion, head })
    }
}

#[derive(Clone)]
struct TemplateFeatures {
    rgb: crate::tensor::Tensor,
    thermal: crate::tensor::Tensor,
}

/// One frame's tracking outcome, also the JSON state-log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame: usize,
    pub bbox: PixelBox,
    pub confidence: f64,
    pub mode: Mode,
    pub action: Action,
    pub template: ActiveTemplate,
    /// True when the predicted box had to be pulled back into the frame.
    pub clamped: bool,
    /// Proposals evaluated for this frame (0 on the init frame, which
    /// echoes the given box instead of predicting).
    pub proposals: usize,
}

/// The serialized side-log: seed echo plus one row per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLog {
    pub seed: u64,
    pub frames: Vec<FrameOutput>,
}

/// A live tracker over one sequence.
pub struct Tracker {
    params: TrackerParams,
    update_cfg: UpdateConfig,
    gamma: f64,
    state: UpdateState,
    initial: TemplateFeatures,
    current: TemplateFeatures,
    prev_box: PixelBox,
}

impl Tracker {
    /// Builds the pipeline from a run config and locks onto `init_box` in
    /// the first frame.
    pub fn new(cfg: &RunConfig, first: &Frame, init_box: &PixelBox) -> Result<Self, Error> {
        let params = TrackerParams::from_config(cfg)?;
        Tracker::with_params(params, cfg.update, cfg.window_gamma, first, init_box)
    }

    pub fn with_params(
        params: TrackerParams,
        update_cfg: UpdateConfig,
        gamma: f64,
        first: &Frame,
        init_box: &PixelBox,
    ) -> Result<Self, Error> {
        update_cfg.validate().map_err(Error::Config)?;
        if !(0.0..=1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(Error::Config(format!("window gamma must lie in [0,1], got {gamma}")));
        }
        let template = Tracker::extract_template(&params, first, init_box)?;
        Ok(Tracker {
            params,
            update_cfg,
            gamma,
            state: UpdateState::default(),
            initial: template.clone(),
            current: template,
            prev_box: *init_box,
        })
    }

    fn extract_template(
        params: &TrackerParams,
        frame: &Frame,
        at: &PixelBox,
    ) -> Result<TemplateFeatures, Error> {
        let cfg = &params.extractor.config;
        let (rgb_crop, _) = crop_region(&frame.rgb, at, cfg.template_scale, cfg.template_size)?;
        let (th_crop, _) = crop_region(&frame.thermal, at, cfg.template_scale, cfg.template_size)?;
        Ok(TemplateFeatures {
            rgb: params.extractor.extract_rgb(&rgb_crop)?,
            thermal: params.extractor.extract_thermal(&th_crop)?,
        })
    }

    /// The box the next search window will center on.
    pub fn current_box(&self) -> PixelBox {
        self.prev_box
    }

    /// Processes one frame: crop, run the pipeline, pick the best proposal,
    /// map it back to frame pixels, and apply the template-update policy.
    pub fn step(&mut self, frame: &Frame) -> Result<FrameOutput, Error> {
        let cfg = &self.params.extractor.config;
        let (rgb_crop, window) =
            crop_region(&frame.rgb, &self.prev_box, cfg.search_scale, cfg.search_size)?;
        let (th_crop, _) =
            crop_region(&frame.thermal, &self.prev_box, cfg.search_scale, cfg.search_size)?;
        let quad = FeatureQuad::new(
            self.current.rgb.clone(),
            self.current.thermal.clone(),
            self.params.extractor.extract_rgb(&rgb_crop)?,
            self.params.extractor.extract_thermal(&th_crop)?,
        )?;
        let (fz, fx, _maps) = modality_forward(&quad, &self.params.modality)?;
        let fused = fusion::fuse_maps(&fz, &fx, &self.params.fusion, None)?;
        let proposals = head_forward(&fused, &self.params.head)?;
        let scores = score_proposals(&proposals, self.gamma)?;
        let sel = select_best(&scores, &proposals)?;

        let mut bbox = sel.box_norm.denormalize(window.x0, window.y0, window.side);
        let clamped = clamp_to_frame(&mut bbox, frame.width(), frame.height());

        let (next, action) = update_step(&self.state, sel.confidence, frame.index, &self.update_cfg);
        self.state = next;
        match action {
            Action::Keep => {}
            Action::ReplaceWithCurrent => {
                self.current = Tracker::extract_template(&self.params, frame, &bbox)?;
            }
            Action::RestoreInitial => {
                self.current = self.initial.clone();
            }
        }
        self.prev_box = bbox;
        Ok(FrameOutput {
            frame: frame.index,
            bbox,
            confidence: sel.confidence,
            mode: self.state.mode,
            action,
            template: self.state.active_template,
            clamped,
            proposals: proposals.len(),
        })
    }
}

/// Pulls a box back into the frame: extents capped to the frame size and
/// the center clamped inside. Returns whether anything moved.
pub(crate) fn clamp_to_frame(b: &mut PixelBox, frame_w: usize, frame_h: usize) -> bool {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let (mut cx, mut cy) = b.center();
    let (mut w, mut h) = (b.w, b.h);
    let mut clamped = false;
    if w > fw {
        w = fw;
        clamped = true;
    }
    if h > fh {
        h = fh;
        clamped = true;
    }
    let (ncx, ncy) = (cx.clamp(0.0, fw), cy.clamp(0.0, fh));
    if ncx != cx || ncy != cy {
        clamped = true;
        cx = ncx;
        cy = ncy;
    }
    if clamped {
        *b = PixelBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h };
    }
    clamped
}

/// Tracks a whole sequence. Frame 0 is the init frame: its output is the
/// given box with confidence 1.0 by convention, and the update policy first
/// runs on frame 1.
pub fn track_sequence(
    cfg: &RunConfig,
    frames: &[Frame],
    init_box: &PixelBox,
) -> Result<Vec<FrameOutput>, Error> {
    let first = frames.first().ok_or_else(|| Error::Data("sequence has no frames".into()))?;
    let mut tracker = Tracker::new(cfg, first, init_box)?;
    let mut outputs = Vec::with_capacity(frames.len());
    outputs.push(FrameOutput {
        frame: first.index,
        bbox: *init_box,
        confidence: 1.0,
        mode: Mode::Steady,
        action: Action::Keep,
        template: ActiveTemplate::Initial,
        clamped: false,
        proposals: 0,
    });
    for frame in &frames[1..] {
        outputs.push(tracker.step(frame)?);
    }
    Ok(outputs)
}

/// Loads a sequence directory: `groundtruth.txt` plus `rgb/%06d.ppm` and
/// `thermal/%06d.pgm`, one pair per ground-truth line.
pub fn load_sequence(dir: &Path) -> Result<(Vec<Frame>, Vec<PixelBox>), Error> {
    let gt_path = dir.join("groundtruth.txt");
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(gt_path.clone(), e))?;
    let gt = parse_box_file(&text)?;
    if gt.is_empty() {
        return Err(Error::Data(format!("{} lists no frames", gt_path.display())));
    }
    let mut frames = Vec::with_capacity(gt.len());
    for t in 0..gt.len() {
        let rgb_path = dir.join(format!("rgb/{t:06}.ppm"));
        let rgb_bytes = fs::read(&rgb_path).map_err(|e| Error::io(rgb_path.clone(), e))?;
        let rgb = Pnm::decode_ppm(&rgb_bytes)?;
        let th_path = dir.join(format!("thermal/{t:06}.pgm"));
        let th_bytes = fs::read(&th_path).map_err(|e| Error::io(th_path.clone(), e))?;
        let th = Pnm::decode_pgm(&th_bytes)?;
        frames.push(Frame::new(rgb.to_tensor(), th.to_tensor(), t)?);
    }
    Ok((frames, gt))
}

/// Result-file rows: `x,y,w,h` per frame, two decimals — the same format
/// the evaluator parses.
pub fn format_results(outputs: &[FrameOutput]) -> String {
    let mut s = String::new();
    for o in outputs {
        s.push_str(&format!("{:.2},{:.2},{:.2},{:.2}\n", o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h));
    }
    s
}

/// Pretty JSON for the per-frame state side-log.
pub fn state_log_json(seed: u64, outputs: &[FrameOutput]) -> String {
    serde_json::to_string_pretty(&StateLog { seed, frames: outputs.to_vec() })
        .expect("state log serializes")
}
