//! Transformer fusion of the template and search branches.
//!
//! The fused modality maps are projected to token sequences (1x1 conv, i.e.
//! a per-pixel linear map, flattened row-major) and run through four stacked
//! layers; in each layer both branches apply residual self-attention, then
//! residual cross-attention against the other branch, then a residual FFN.
//! A final cross-attention (search as query, template as key/value) plus FFN
//! produces the fused search sequence consumed by the prediction head.
//!
//! Residuals are pre-norm (`x + Sub(LN(x))`) with no trailing layer norm, so
//! zeroing every sublayer output projection makes the whole network an exact
//! identity on its tokens — a cheap structural self-test. Fixed 2-D
//! sinusoidal positional encodings are added to queries and keys only
//! (never values), and can be disabled to check permutation equivariance.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Error;

/// Layer-norm epsilon.
const LN_EPS: f64 = 1e-5;

/// A token sequence: `tokens[L,D]` plus its fixed positional encodings
/// `pos[L,D]`, kept separate so attention can add them to Q/K without
/// contaminating values.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub tokens: Tensor,
    pub pos: Tensor,
}

impl TokenSeq {
    pub fn new(tokens: Tensor, pos: Tensor) -> Result<Self, Error> {
        if tokens.rank() != 2 || pos.rank() != 2 || tokens.shape() != pos.shape() {
            return Err(Error::Data(format!(
                "token/pos shapes must be equal rank-2, got {:?} vs {:?}",
                tokens.shape(),
                pos.shape()
            )));
        }
        Ok(TokenSeq { tokens, pos })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Fixed 2-D sinusoidal positional encodings for an `h` x `w` grid,
/// flattened row-major to `[h*w, dim]`. The first half of the channels
/// encodes the row coordinate (sin block then cos block), the second half
/// the column coordinate. `dim` must be divisible by 4.
pub fn positional_encoding(h: usize, w: usize, dim: usize) -> Result<Tensor, Error> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs dim divisible by 4, got {dim}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Config("positional encoding needs a non-empty grid".into()));
    }
    let quarter = dim / 4;
    let mut data = vec![0.0; h * w * dim];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * dim;
            for k in 0..quarter {
                let freq = 1.0 / 10_000f64.powf(k as f64 / quarter as f64);
                data[base + k] = (y as f64 * freq).sin();
                data[base + quarter + k] = (y as f64 * freq).cos();
                data[base + 2 * quarter + k] = (x as f64 * freq).sin();
                data[base + 3 * quarter + k] = (x as f64 * freq).cos();
            }
        }
    }
    Ok(Tensor::new(vec![h * w, dim], data)?)
}

/// Per-pixel linear projection used to turn a `[C,s,s]` map into tokens:
/// weights `[C,D]`, bias `[D]` — exactly a 1x1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl EmbedParams {
    pub fn random(rng: &mut Rng, in_channels: usize, dim: usize) -> Self {
        let std = 1.0 / (in_channels as f64).sqrt();
        let data = (0..in_channels * dim).map(|_| rng.gaussian(std)).collect();
        EmbedParams {
            w: Tensor::new(vec![in_channels, dim], data).expect("seeded weights are finite"),
            b: Tensor::zeros(vec![dim]).unwrap(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        EmbedParams {
            w: Tensor::new(vec![dim, dim], data).unwrap(),
            b: Tensor::zeros(vec![dim]).unwrap(),
        }
    }
}

/// Projects a feature map to a token sequence: 1x1 conv C->D, spatial
/// positions flattened row-major, positional encodings attached.
pub fn tokenize(f: &Tensor, proj: &EmbedParams) -> Result<TokenSeq, Error> {
    if f.rank() != 3 {
        return Err(Error::Data(format!("tokenize expects [C,h,w], got {:?}", f.shape())));
    }
    let (h, w) = (f.shape()[1], f.shape()[2]);
    let dim = proj.w.shape()[1];
    let tokens = f.spatial_tokens()?.linear(&proj.w, &proj.b)?;
    let pos = positional_encoding(h, w, dim)?;
    TokenSeq::new(tokens, pos)
}

/// One multi-head attention block: Q/K/V/output projections, all `[D,D]`
/// with `[D]` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl MhaParams {
    pub fn random(rng: &mut Rng, dim: usize) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let mat = |rng: &mut Rng| {
            let data = (0..dim * dim).map(|_| rng.gaussian(std)).collect();
            Tensor::new(vec![dim, dim], data).expect("seeded weights are finite")
        };
        MhaParams {
            wq: mat(rng),
            bq: Tensor::zeros(vec![dim]).unwrap(),
            wk: mat(rng),
            bk: Tensor::zeros(vec![dim]).unwrap(),
            wv: mat(rng),
            bv: Tensor::zeros(vec![dim]).unwrap(),
            wo: mat(rng),
            bo: Tensor::zeros(vec![dim]).unwrap(),
        }
    }

    /// Identity V and output projections, random Q/K — handy in tests where
    /// the output should equal an attention-weighted mix of raw values.
    pub fn identity_values(rng: &mut Rng, dim: usize) -> Self {
        let eye = EmbedParams::identity(dim);
        MhaParams {
            wv: eye.w.clone(),
            bv: eye.b.clone(),
            wo: eye.w.clone(),
            bo: eye.b,
            ..MhaParams::random(rng, dim)
        }
    }

    fn zero_output(&mut self) {
        self.wo = Tensor::zeros(self.wo.shape().to_vec()).unwrap();
        self.bo = Tensor::zeros(self.bo.shape().to_vec()).unwrap();
    }
}

/// Two affine maps with a relu between, hidden width 4D.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnParams {
    pub fn random(rng: &mut Rng, dim: usize) -> Self {
        let hidden = 4 * dim;
        let mat = |rows: usize, cols: usize, rng: &mut Rng| {
            let std = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gaussian(std)).collect();
            Tensor::new(vec![rows, cols], data).expect("seeded weights are finite")
        };
        FfnParams {
            w1: mat(dim, hidden, rng),
            b1: Tensor::zeros(vec![hidden]).unwrap(),
            w2: mat(hidden, dim, rng),
            b2: Tensor::zeros(vec![dim]).unwrap(),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, Error> {
        Ok(x.linear(&self.w1, &self.b1)?.relu()?.linear(&self.w2, &self.b2)?)
    }

    fn zero_output(&mut self) {
        self.w2 = Tensor::zeros(self.w2.shape().to_vec()).unwrap();
        self.b2 = Tensor::zeros(self.b2.shape().to_vec()).unwrap();
    }
}

/// Layer-norm scale/shift over the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LnParams {
    pub fn unit(dim: usize) -> Self {
        LnParams {
            gamma: Tensor::filled(vec![dim], 1.0).unwrap(),
            beta: Tensor::zeros(vec![dim]).unwrap(),
        }
    }
}

/// Row-wise layer normalization of `[L,D]` tokens.
pub fn layer_norm(x: &Tensor, p: &LnParams) -> Result<Tensor, Error> {
    if x.rank() != 2 || p.gamma.len() != x.shape()[1] || p.beta.len() != x.shape()[1] {
        return Err(Error::Data(format!(
            "layer_norm shape mismatch: x {:?}, gamma {:?}",
            x.shape(),
            p.gamma.shape()
        )));
    }
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let mut data = vec![0.0; l * d];
    for i in 0..l {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            data[i * d + j] = (row[j] - mean) * inv * p.gamma.data()[j] + p.beta.data()[j];
        }
    }
    Ok(Tensor::new(vec![l, d], data)?)
}

/// Summary of one attention call's probability matrix, for invariant
/// checking: worst row-sum deviation from 1 and smallest entry across all
/// heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnStats {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub max_row_sum_dev: f64,
    pub min_entry: f64,
}

/// Scaled dot-product attention over already-normalized inputs; positional
/// encodings are added to the Q/K projections' inputs only.
///
/// The `1/sqrt(dh)` scale is folded into the projected queries — one pass
/// over `[L,D]` instead of one over every head's full score matrix. When
/// `trace` is given, each call appends one [`AttnStats`] record; when it is
/// `None` the probability matrices are not rescanned at all.
fn attention(
    q_in: &Tensor,
    q_pos: Option<&Tensor>,
    kv_in: &Tensor,
    kv_pos: Option<&Tensor>,
    p: &MhaParams,
    heads: usize,
    label: &str,
    trace: Option<&mut Vec<AttnStats>>,
) -> Result<Tensor, Error> {
    let dim = q_in.shape()[1];
    if dim == 0 || heads == 0 || dim % heads != 0 {
        return Err(Error::Config(format!("dim {dim} not divisible by heads {heads}")));
    }
    let q_src = match q_pos {
        Some(pos) => q_in.add(pos)?,
        None => q_in.clone(),
    };
    let k_src = match kv_pos {
        Some(pos) => kv_in.add(pos)?,
        None => kv_in.clone(),
    };
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = q_src.linear(&p.wq, &p.bq)?.scale(scale)?;
    let k = k_src.linear(&p.wk, &p.bk)?;
    let v = kv_in.linear(&p.wv, &p.bv)?;

    let mut stats = trace.is_some().then(|| AttnStats {
        label: label.to_string(),
        rows: q.shape()[0],
        cols: k.shape()[0],
        max_row_sum_dev: 0.0,
        min_entry: f64::INFINITY,
    });
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
        let kh = k.slice_cols(h * dh, (h + 1) * dh)?;
        let vh = v.slice_cols(h * dh, (h + 1) * dh)?;
        let attn = qh.matmul(&kh.transpose2d()?)?.softmax_lastdim()?;
        if let Some(st) = stats.as_mut() {
            let cols = attn.shape()[1];
            for i in 0..attn.shape()[0] {
                let row = attn.row(i);
                let sum: f64 = row.iter().sum();
                st.max_row_sum_dev = st.max_row_sum_dev.max((sum - 1.0).abs());
                for j in 0..cols {
                    st.min_entry = st.min_entry.min(row[j]);
                }
            }
        }
        parts.push(attn.matmul(&vh)?);
    }
    if let (Some(sink), Some(st)) = (trace, stats) {
        sink.push(st);
    }
    Ok(Tensor::concat_cols(&parts)?.linear(&p.wo, &p.bo)?)
}

/// Standalone multi-head attention between two token sequences.
pub fn mha(
    q: &TokenSeq,
    kv: &TokenSeq,
    p: &MhaParams,
    heads: usize,
    use_pos: bool,
) -> Result<Tensor, Error> {
    let (qp, kp) = if use_pos { (Some(&q.pos), Some(&kv.pos)) } else { (None, None) };
    attention(&q.tokens, qp, &kv.tokens, kp, p, heads, "mha", None)
}

/// As [`mha`], recording the attention statistics into `trace`.
pub fn mha_traced(
    q: &TokenSeq,
    kv: &TokenSeq,
    p: &MhaParams,
    heads: usize,
    use_pos: bool,
    label: &str,
    trace: &mut Vec<AttnStats>,
) -> Result<Tensor, Error> {
    let (qp, kp) = if use_pos { (Some(&q.pos), Some(&kv.pos)) } else { (None, None) };
    attention(&q.tokens, qp, &kv.tokens, kp, p, heads, label, Some(trace))
}

/// One branch's sublayer parameters for one fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLayerParams {
    pub ln_self: LnParams,
    pub self_attn: MhaParams,
    pub ln_cross_q: LnParams,
    pub ln_cross_kv: LnParams,
    pub cross_attn: MhaParams,
    pub ln_ffn: LnParams,
    pub ffn: FfnParams,
}

impl BranchLayerParams {
    fn random(rng: &mut Rng, dim: usize) -> Self {
        BranchLayerParams {
            ln_self: LnParams::unit(dim),
            self_attn: MhaParams::random(rng, dim),
            ln_cross_q: LnParams::unit(dim),
            ln_cross_kv: LnParams::unit(dim),
            cross_attn: MhaParams::random(rng, dim),
            ln_ffn: LnParams::unit(dim),
            ffn: FfnParams::random(rng, dim),
        }
    }

    fn zero_sublayer_outputs(&mut self) {
        self.self_attn.zero_output();
        self.cross_attn.zero_output();
        self.ffn.zero_output();
    }
}

/// One fusion layer: template-branch and search-branch sublayers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub template: BranchLayerParams,
    pub search: BranchLayerParams,
}

/// The whole fusion network: token embeddings for both maps, the stacked
/// layers, and the final cross-attention + FFN block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub dim: usize,
    pub heads: usize,
    pub embed_template: EmbedParams,
    pub embed_search: EmbedParams,
    pub layers: Vec<LayerParams>,
    pub final_ln_q: LnParams,
    pub final_ln_kv: LnParams,
    pub final_cross: MhaParams,
    pub final_ln_ffn: LnParams,
    pub final_ffn: FfnParams,
}

impl FusionParams {
    /// Seeded parameter draw. `dim` must be divisible by `heads` and by 4
    /// (for the 2-D positional encodings).
    pub fn random(
        rng: &mut Rng,
        in_channels: usize,
        dim: usize,
        heads: usize,
        num_layers: usize,
    ) -> Result<Self, Error> {
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("dim {dim} must be divisible by heads {heads}")));
        }
        if dim % 4 != 0 {
            return Err(Error::Config(format!("dim {dim} must be divisible by 4")));
        }
        if num_layers == 0 || in_channels == 0 {
            return Err(Error::Config("need at least one layer and one input channel".into()));
        }
        let layers = (0..num_layers)
            .map(|_| LayerParams {
                template: BranchLayerParams::random(rng, dim),
                search: BranchLayerParams::random(rng, dim),
            })
            .collect();
        Ok(FusionParams {
            dim,
            heads,
            embed_template: EmbedParams::random(rng, in_channels, dim),
            embed_search: EmbedParams::random(rng, in_channels, dim),
            layers,
            final_ln_q: LnParams::unit(dim),
            final_ln_kv: LnParams::unit(dim),
            final_cross: MhaParams::random(rng, dim),
            final_ln_ffn: LnParams::unit(dim),
            final_ffn: FfnParams::random(rng, dim),
        })
    }

    /// Zeroes every sublayer output projection (attention output maps and
    /// second FFN maps, final block included). With pre-norm residuals this
    /// turns [`fusion_forward`] into the identity on its search tokens.
    pub fn zero_sublayer_outputs(&mut self) {
        for layer in &mut self.layers {
            layer.template.zero_sublayer_outputs();
            layer.search.zero_sublayer_outputs();
        }
        self.final_cross.zero_output();
        self.final_ffn.zero_output();
    }
}

/// Runs the fusion network on pre-built token sequences and returns the
/// fused search tokens `[Lx,D]`.
pub fn fusion_forward(xz: &TokenSeq, xx: &TokenSeq, p: &FusionParams) -> Result<Tensor, Error> {
    forward_impl(xz, xx, p, true, None)
}

/// As [`fusion_forward`], with positional encodings toggleable and every
/// attention call's statistics appended to `trace`.
pub fn fusion_forward_traced(
    xz: &TokenSeq,
    xx: &TokenSeq,
    p: &FusionParams,
    use_pos: bool,
    trace: &mut Vec<AttnStats>,
) -> Result<Tensor, Error> {
    forward_impl(xz, xx, p, use_pos, Some(trace))
}

fn forward_impl(
    xz: &TokenSeq,
    xx: &TokenSeq,
    p: &FusionParams,
    use_pos: bool,
    mut trace: Option<&mut Vec<AttnStats>>,
) -> Result<Tensor, Error> {
    if xz.dim() != p.dim || xx.dim() != p.dim {
        return Err(Error::Data(format!(
            "token dim {} / {} does not match model dim {}",
            xz.dim(),
            xx.dim(),
            p.dim
        )));
    }
    // reborrows the optional trace sink for one attention call
    fn tr<'a>(t: &'a mut Option<&mut Vec<AttnStats>>) -> Option<&'a mut Vec<AttnStats>> {
        t.as_mut().map(|v| &mut **v)
    }
    let (pz, px): (Option<&Tensor>, Option<&Tensor>) =
        if use_pos { (Some(&xz.pos), Some(&xx.pos)) } else { (None, None) };
    let mut z = xz.tokens.clone();
    let mut x = xx.tokens.clone();
    for (li, layer) in p.layers.iter().enumerate() {
        let lt = &layer.template;
        let ls = &layer.search;
        // residual self-attention on both branches
        let zn = layer_norm(&z, &lt.ln_self)?;
        let dz = attention(&zn, pz, &zn, pz, &lt.self_attn, p.heads, &format!("layer{li}.self.template"), tr(&mut trace))?;
        let z1 = z.add(&dz)?;
        let xn = layer_norm(&x, &ls.ln_self)?;
        let dx = attention(&xn, px, &xn, px, &ls.self_attn, p.heads, &format!("layer{li}.self.search"), tr(&mut trace))?;
        let x1 = x.add(&dx)?;
        // two-way residual cross-attention, both reading the post-self values
        let zq = layer_norm(&z1, &lt.ln_cross_q)?;
        let zkv = layer_norm(&x1, &lt.ln_cross_kv)?;
        let dz = attention(&zq, pz, &zkv, px, &lt.cross_attn, p.heads, &format!("layer{li}.cross.template"), tr(&mut trace))?;
        let z2 = z1.add(&dz)?;
        let xq = layer_norm(&x1, &ls.ln_cross_q)?;
        let xkv = layer_norm(&z1, &ls.ln_cross_kv)?;
        let dx = attention(&xq, px, &xkv, pz, &ls.cross_attn, p.heads, &format!("layer{li}.cross.search"), tr(&mut trace))?;
        let x2 = x1.add(&dx)?;
        // residual FFN
        z = z2.add(&lt.ffn.forward(&layer_norm(&z2, &lt.ln_ffn)?)?)?;
        x = x2.add(&ls.ffn.forward(&layer_norm(&x2, &ls.ln_ffn)?)?)?;
    }
    // final cross-attention: search queries the template, then one more FFN
    let fq = layer_norm(&x, &p.final_ln_q)?;
    let fkv = layer_norm(&z, &p.final_ln_kv)?;
    let dx = attention(&fq, px, &fkv, pz, &p.final_cross, p.heads, "final.cross", tr(&mut trace))?;
    let x = x.add(&dx)?;
    let out = x.add(&p.final_ffn.forward(&layer_norm(&x, &p.final_ln_ffn)?)?)?;
    Ok(out)
}

/// Convenience: tokenize both maps and run the fusion network. Pass a trace
/// sink to collect per-call attention statistics, or `None` to skip the
/// (full-matrix) statistics scan.
pub fn fuse_maps(
    fz: &Tensor,
    fx: &Tensor,
    p: &FusionParams,
    trace: Option<&mut Vec<AttnStats>>,
) -> Result<Tensor, Error> {
    let xz = tokenize(fz, &p.embed_template)?;
    let xx = tokenize(fx, &p.embed_search)?;
    forward_impl(&xz, &xx, p, true, trace)
}
