//! Three-branch prediction head: per-token classification, box regression, and
//! localization-quality branches.
//!
//! Each branch is an independent 3-layer perceptron (hidden width = token
//! dim, relu) applied to every fused search token. Classification emits two
//! logits (background, foreground), regression emits four values squashed by
//! a sigmoid into a normalized center-form box `(cx,cy,w,h)` of the search
//! window, and localization emits one logit scoring how trustworthy the
//! regressed box is.
//!
//! The seeded init biases the regression `w`/`h` outputs toward 0.25: the
//! search window is scaled to four times the target's side, so an untrained
//! head already proposes boxes at roughly the right scale instead of
//! half-window monsters.

use crate::bbox::NormBox;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;

/// sigmoid(x) = 0.25 at this logit; used to seed the regression w/h bias.
const QUARTER_LOGIT: f64 = -1.0986122886681098;

/// One 3-layer perceptron: linear-relu-linear-relu-linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl Mlp {
    pub fn random(rng: &mut Rng, d_in: usize, hidden: usize, d_out: usize) -> Self {
        // relu layers get He scaling, the linear output layer plain 1/sqrt(fan_in)
        let mat = |rows: usize, cols: usize, std: f64, rng: &mut Rng| {
            let data = (0..rows * cols).map(|_| rng.gaussian(std)).collect();
            Tensor::new(vec![rows, cols], data).expect("seeded weights are finite")
        };
        Mlp {
            w1: mat(d_in, hidden, (2.0 / d_in as f64).sqrt(), rng),
            b1: Tensor::zeros(vec![hidden]).unwrap(),
            w2: mat(hidden, hidden, (2.0 / hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(vec![hidden]).unwrap(),
            w3: mat(hidden, d_out, 1.0 / (hidden as f64).sqrt(), rng),
            b3: Tensor::zeros(vec![d_out]).unwrap(),
        }
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Mlp {
            w1: Tensor::zeros(vec![d_in, hidden]).unwrap(),
            b1: Tensor::zeros(vec![hidden]).unwrap(),
            w2: Tensor::zeros(vec![hidden, hidden]).unwrap(),
            b2: Tensor::zeros(vec![hidden]).unwrap(),
            w3: Tensor::zeros(vec![hidden, d_out]).unwrap(),
            b3: Tensor::zeros(vec![d_out]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, Error> {
        Ok(x
            .linear(&self.w1, &self.b1)?
            .relu()?
            .linear(&self.w2, &self.b2)?
            .relu()?
            .linear(&self.w3, &self.b3)?)
    }
}

/// Parameters of the three head branches.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub cls: Mlp,
    pub reg: Mlp,
    pub loc: Mlp,
}

impl HeadParams {
    /// Seeded init; the regression output bias starts `w`/`h` at 0.25.
    pub fn random(rng: &mut Rng, dim: usize) -> Self {
        let mut reg = Mlp::random(rng, dim, dim, 4);
        // the regression output layer starts near-silent: untrained boxes
        // must hug the bias point (window center, quarter scale), or the
        // search window random-walks off the target before any training
        let tiny = (0..dim * 4).map(|_| rng.gaussian(1e-3)).collect();
        reg.w3 = Tensor::new(vec![dim, 4], tiny).expect("seeded weights are finite");
        reg.b3 = Tensor::new(vec![4], vec![0.0, 0.0, QUARTER_LOGIT, QUARTER_LOGIT]).unwrap();
        HeadParams {
            cls: Mlp::random(rng, dim, dim, 2),
            reg,
            loc: Mlp::random(rng, dim, dim, 1),
        }
    }

    /// All-zero parameters: every token predicts p=0.5 and the box
    /// (0.5, 0.5, 0.5, 0.5).
    pub fn zeros(dim: usize) -> Self {
        HeadParams {
            cls: Mlp::zeros(dim, dim, 2),
            reg: Mlp::zeros(dim, dim, 4),
            loc: Mlp::zeros(dim, dim, 1),
        }
    }
}

/// The head's per-token outputs: classification logits `[L,2]` (column 0
/// background, column 1 foreground), normalized boxes `[L,4]` already passed
/// through the sigmoid, and localization logits `[L,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub cls_logits: Tensor,
    pub boxes: Tensor,
    pub loc_logits: Tensor,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.cls_logits.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Foreground probability per token: softmax over the two class logits.
    pub fn fg_probs(&self) -> Result<Vec<f64>, Error> {
        let sm = self.cls_logits.softmax_lastdim()?;
        Ok((0..self.len()).map(|i| sm.at(&[i, 1])).collect())
    }

    /// Localization quality per token: sigmoid of the loc logit.
    pub fn loc_probs(&self) -> Result<Vec<f64>, Error> {
        let s = self.loc_logits.sigmoid()?;
        Ok(s.data().to_vec())
    }

    /// The regressed boxes as center-form normalized boxes.
    pub fn norm_boxes(&self) -> Vec<NormBox> {
        (0..self.len())
            .map(|i| {
                let r = self.boxes.row(i);
                NormBox { cx: r[0], cy: r[1], w: r[2], h: r[3] }
            })
            .collect()
    }
}

/// Runs all three branches on the fused search tokens `[L,D]`.
pub fn head_forward(fused: &Tensor, p: &HeadParams) -> Result<ProposalSet, Error> {
    if fused.rank() != 2 {
        return Err(Error::Data(format!("head expects [L,D] tokens, got {:?}", fused.shape())));
    }
    if fused.shape()[1] != p.cls.w1.shape()[0] {
        return Err(Error::Data(format!(
            "token dim {} does not match head dim {}",
            fused.shape()[1],
            p.cls.w1.shape()[0]
        )));
    }
    Ok(ProposalSet {
        cls_logits: p.cls.forward(fused)?,
        boxes: p.reg.forward(fused)?.sigmoid()?,
        loc_logits: p.loc.forward(fused)?,
    })
}
