//! Self-verification suites, runnable from the CLI as well as from tests.
//!
//! Two batteries live here:
//!
//! * a finite-difference gradient check that compares every analytic loss
//!   gradient against central differences on seeded random instances;
//! * an exhaustive equivalence check of the template-update state machine
//!   against [`reference_actions`], an independently-coded simulator of the
//!   same policy.
//!
//! Both are parameterized over the functions under test so a deliberately
//! broken implementation can be injected to prove the harness would notice
//! (mutation sanity).

use std::fmt;

use crate::bbox::NormBox;
use crate::loss::{self, LossConfig};
use crate::rng::Rng;
use crate::update::{run_trace, Action, UpdateConfig};

/// Relative-error ceiling for analytic-vs-numeric gradient agreement.
pub const GRAD_REL_TOL: f64 = 1e-6;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Central finite difference of a scalar function at `x`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Draws a (prediction, ground-truth) pair whose loss surface is smooth in
/// a neighborhood: no intersection-edge ties, no L1 kinks, no grazing
/// overlaps closer than `margin`.
pub fn sample_smooth_box_pair(rng: &mut Rng, margin: f64) -> (NormBox, NormBox) {
    loop {
        let draw = |rng: &mut Rng| {
            NormBox::new(
                rng.uniform(0.3, 0.7),
                rng.uniform(0.3, 0.7),
                rng.uniform(0.2, 0.5),
                rng.uniform(0.2, 0.5),
            )
        };
        let b = draw(rng);
        let g = draw(rng);
        let deltas = [
            b.cx - g.cx,
            b.cy - g.cy,
            b.w - g.w,
            b.h - g.h,
            (b.cx - b.w / 2.0) - (g.cx - g.w / 2.0),
            (b.cx + b.w / 2.0) - (g.cx + g.w / 2.0),
            (b.cy - b.h / 2.0) - (g.cy - g.h / 2.0),
            (b.cy + b.h / 2.0) - (g.cy + g.h / 2.0),
        ];
        if deltas.iter().all(|d| d.abs() > margin) {
            return (b, g);
        }
    }
}

/// The gradient functions under test, injectable for mutation sanity.
pub struct GradFns {
    pub cls: fn(&[f64], &[bool], &[f64]) -> Vec<f64>,
    pub reg: fn(&[NormBox], &[bool], &[f64], &NormBox, &LossConfig) -> Vec<[f64; 4]>,
    pub loc: fn(&[f64], &[f64]) -> Vec<f64>,
}

impl Default for GradFns {
    fn default() -> Self {
        GradFns {
            cls: loss::cls_grad,
            reg: loss::reg_grad,
            loc: loss::loc_grad,
        }
    }
}

/// Outcome of the gradient battery.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    pub trials: usize,
    pub max_rel_err_cls: f64,
    pub max_rel_err_reg: f64,
    pub max_rel_err_loc: f64,
    pub pass: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check: {} trials, seed {}", self.trials, self.seed)?;
        writeln!(f, "  classification  max rel err {:.3e}", self.max_rel_err_cls)?;
        writeln!(f, "  regression      max rel err {:.3e}", self.max_rel_err_reg)?;
        writeln!(f, "  localization    max rel err {:.3e}", self.max_rel_err_loc)?;
        write!(
            f,
            "  {} (tolerance {GRAD_REL_TOL:.0e})",
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Runs the full gradient battery with the default (production) gradients.
pub fn gradcheck(seed: u64, trials: usize) -> GradCheckReport {
    gradcheck_with(seed, trials, &GradFns::default())
}

/// Runs the gradient battery against caller-supplied gradient functions.
pub fn gradcheck_with(seed: u64, trials: usize, fns: &GradFns) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let cfg = LossConfig::default();
    let h = FD_STEP;
    let mut worst_cls: f64 = 0.0;
    let mut worst_reg: f64 = 0.0;
    let mut worst_loc: f64 = 0.0;

    for _ in 0..trials {
        // -- classification: a small batch of probabilities --------------
        let n = 8;
        let mut p: Vec<f64> = (0..n).map(|_| rng.uniform(0.05, 0.95)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        let ious: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 1.0)).collect();
        let grad = (fns.cls)(&p, &labels, &ious);
        for j in 0..n {
            let orig = p[j];
            p[j] = orig + h;
            let up = loss::cls_loss(&p, &labels, &ious);
            p[j] = orig - h;
            let dn = loss::cls_loss(&p, &labels, &ious);
            p[j] = orig;
            worst_cls = worst_cls.max(rel_err(grad[j], (up - dn) / (2.0 * h)));
        }

        // -- regression: one positive box, all four coordinates ----------
        let (b, gt) = sample_smooth_box_pair(&mut rng, 1e-4);
        let pw = rng.uniform(0.1, 0.9);
        let grad = (fns.reg)(&[b], &[true], &[pw], &gt, &cfg)[0];
        let mut coords = [b.cx, b.cy, b.w, b.h];
        for k in 0..4 {
            let orig = coords[k];
            coords[k] = orig + h;
            let up = loss::reg_loss(
                &[NormBox::new(coords[0], coords[1], coords[2], coords[3])],
                &[true],
                &[pw],
                &gt,
                &cfg,
            )
            .value;
            coords[k] = orig - h;
            let dn = loss::reg_loss(
                &[NormBox::new(coords[0], coords[1], coords[2], coords[3])],
                &[true],
                &[pw],
                &gt,
                &cfg,
            )
            .value;
            coords[k] = orig;
            worst_reg = worst_reg.max(rel_err(grad[k], (up - dn) / (2.0 * h)));
        }

        // -- localization: soft targets -----------------------------------
        let mut p: Vec<f64> = (0..n).map(|_| rng.uniform(0.05, 0.95)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let grad = (fns.loc)(&p, &targets);
        for j in 0..n {
            let orig = p[j];
            p[j] = orig + h;
            let up = loss::loc_loss(&p, &targets);
            p[j] = orig - h;
            let dn = loss::loc_loss(&p, &targets);
            p[j] = orig;
            worst_loc = worst_loc.max(rel_err(grad[j], (up - dn) / (2.0 * h)));
        }
    }

    let pass = worst_cls < GRAD_REL_TOL && worst_reg < GRAD_REL_TOL && worst_loc < GRAD_REL_TOL;
    GradCheckReport {
        seed,
        trials,
        max_rel_err_cls: worst_cls,
        max_rel_err_reg: worst_reg,
        max_rel_err_loc: worst_loc,
        pass,
    }
}

/// Independent simulator of the template-update policy, coded from the
/// policy's written description rather than from the state struct: two bare
/// counters updated unconditionally each frame, then the two triggers
/// checked in order.
pub fn reference_actions(confs: &[f64], cfg: &UpdateConfig) -> Vec<Action> {
    let mut consecutive_high = 0usize;
    let mut drops_since_change = 0usize;
    let mut out = Vec::with_capacity(confs.len());
    for &c in confs {
        if c > cfg.hi {
            consecutive_high += 1;
        } else {
            consecutive_high = 0;
        }
        if c < cfg.lo {
            drops_since_change += 1;
        }
        if consecutive_high == cfg.m {
            out.push(Action::ReplaceWithCurrent);
            consecutive_high = 0;
            drops_since_change = 0;
        } else if c < cfg.lo && drops_since_change >= cfg.n.max(1) {
            out.push(Action::RestoreInitial);
            consecutive_high = 0;
            drops_since_change = 0;
        } else {
            out.push(Action::Keep);
        }
    }
    out
}

/// Outcome of the state-machine equivalence sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCheckReport {
    pub traces_checked: usize,
    pub configs_checked: usize,
    pub mismatches: usize,
    /// First mismatching case found, smallest trace first: the confidence
    /// trace, the (m, n) pair, and the first differing frame.
    pub counterexample: Option<(Vec<f64>, usize, usize, usize)>,
    pub pass: bool,
}

impl fmt::Display for StateCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "state-machine check: {} traces x {} configs",
            self.traces_checked, self.configs_checked
        )?;
        if let Some((trace, m, n, frame)) = &self.counterexample {
            writeln!(
                f,
                "  counterexample: trace {trace:?}, m={m}, n={n}, first divergence at frame {frame}"
            )?;
        }
        write!(f, "  {} ({} mismatches)", if self.pass { "PASS" } else { "FAIL" }, self.mismatches)
    }
}

/// Confidence alphabet used in the exhaustive sweep: one value per band.
pub const TRACE_ALPHABET: [f64; 3] = [0.6, 0.8, 0.95];
/// Maximum trace length in the exhaustive sweep.
pub const TRACE_LEN: usize = 8;

/// Sweeps every confidence trace of length <= [`TRACE_LEN`] over
/// [`TRACE_ALPHABET`] and every `(m, n)` in {1,2,3}^2, comparing the state
/// machine against the default reference simulator.
pub fn statecheck() -> StateCheckReport {
    statecheck_with(reference_actions)
}

/// Same sweep against a caller-supplied reference (for mutation sanity).
pub fn statecheck_with(reference: fn(&[f64], &UpdateConfig) -> Vec<Action>) -> StateCheckReport {
    let mut traces_checked = 0;
    let mut mismatches = 0;
    let mut counterexample = None;
    let configs: Vec<UpdateConfig> = (1..=3)
        .flat_map(|m| (1..=3).map(move |n| UpdateConfig { m, n, ..UpdateConfig::default() }))
        .collect();

    // Enumerate traces shortest-first so the recorded counterexample is
    // minimal in length (and lexicographically smallest at that length).
    for len in 0..=TRACE_LEN {
        let total = 3usize.pow(len as u32);
        for code in 0..total {
            let mut trace = Vec::with_capacity(len);
            let mut c = code;
            for _ in 0..len {
                trace.push(TRACE_ALPHABET[c % 3]);
                c /= 3;
            }
            traces_checked += 1;
            for cfg in &configs {
                let got = run_trace(&trace, cfg);
                let want = reference(&trace, cfg);
                if got != want {
                    mismatches += 1;
                    if counterexample.is_none() {
                        let frame = got
                            .iter()
                            .zip(want.iter())
                            .position(|(a, b)| a != b)
                            .unwrap_or(0);
                        counterexample = Some((trace.clone(), cfg.m, cfg.n, frame));
                    }
                }
            }
        }
    }

    StateCheckReport {
        traces_checked,
        configs_checked: configs.len(),
        mismatches,
        counterexample,
        pass: mismatches == 0,
    }
}
