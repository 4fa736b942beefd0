//! Dense double-precision tensor engine.
//!
//! Deliberately minimal: exactly the operations the tracking pipeline needs,
//! all pure functions over immutable row-major buffers. Every operation
//! validates its output and refuses to produce NaN or infinity; a non-finite
//! value is an error, never data. Reductions run in a fixed sequential order
//! so repeated calls are bitwise identical; the heavy kernels can fan
//! independent output rows out across worker threads ([`set_workers`])
//! without changing a single bit of any result.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Errors from tensor construction and operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape product does not match the data length.
    ShapeDataMismatch { expected: usize, got: usize },
    /// A zero or overflowing extent.
    BadShape { shape: Vec<usize> },
    /// Two operands cannot be combined under the documented rules.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Wrong rank or extent for the operation.
    BadOperand { op: &'static str, detail: String },
    /// The operation produced (or was given) a NaN or infinite value.
    NonFinite { op: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeDataMismatch { expected, got } => {
                write!(f, "shape implies {expected} elements, data has {got}")
            }
            TensorError::BadShape { shape } => {
                write!(f, "invalid shape {shape:?}: extents must be nonzero and not overflow")
            }
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::BadOperand { op, detail } => write!(f, "{op}: {detail}"),
            TensorError::NonFinite { op } => {
                write!(f, "{op}: non-finite value (NaN/Inf is an error, not a value)")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Worker threads used by the row-parallel kernels. Default 1 (sequential).
static WORKERS: AtomicUsize = AtomicUsize::new(1);

/// Scalar multiply-adds below which a kernel skips threading outright.
const PARALLEL_MIN_WORK: usize = 1 << 17;

/// Sets the worker-thread count for the heavy kernels (matmul, linear,
/// conv2d, softmax). Every output row is written by exactly one thread and
/// accumulated in the same order as the sequential loop, so results are
/// bitwise identical for every count. Clamped to `[1, 256]`.
pub fn set_workers(n: usize) {
    WORKERS.store(n.clamp(1, 256), Ordering::Relaxed);
}

/// The current worker-thread count.
pub fn workers() -> usize {
    WORKERS.load(Ordering::Relaxed)
}

/// Dense `[l,k] x [k,m]` product into `out`, k unrolled by four. Each
/// output element accumulates over k strictly ascending, so the result is
/// bit-for-bit the naive triple loop's, for any worker count.
fn gemm(a: &[f64], b: &[f64], l: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), l * k);
    debug_assert_eq!(b.len(), k * m);
    let work = l.saturating_mul(k).saturating_mul(m);
    row_parallel(out, l, m, work, |row0, chunk| {
        for (di, orow) in chunk.chunks_exact_mut(m).enumerate() {
            let arow = &a[(row0 + di) * k..][..k];
            let mut kk = 0;
            while kk + 4 <= k {
                let (a0, a1, a2, a3) = (arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3]);
                let b0 = &b[kk * m..][..m];
                let b1 = &b[(kk + 1) * m..][..m];
                let b2 = &b[(kk + 2) * m..][..m];
                let b3 = &b[(kk + 3) * m..][..m];
                for j in 0..m {
                    orow[j] = (((orow[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
                }
                kk += 4;
            }
            while kk < k {
                let a0 = arow[kk];
                let brow = &b[kk * m..][..m];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += a0 * bv;
                }
                kk += 1;
            }
        }
    });
}

/// Splits `out` into contiguous row chunks, one per worker, and runs
/// `f(first_row, chunk)` on each. `work` estimates the scalar multiply-adds
/// so small jobs stay on the calling thread.
fn row_parallel<F>(out: &mut [f64], rows: usize, row_len: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert_eq!(out.len(), rows * row_len);
    let t = workers().min(rows);
    if t <= 1 || work < PARALLEL_MIN_WORK {
        f(0, out);
        return;
    }
    let per = rows.div_ceil(t);
    std::thread::scope(|s| {
        let mut rest = out;
        let mut row = 0;
        while row < rows {
            let take = per.min(rows - row);
            let (chunk, tail) = rest.split_at_mut(take * row_len);
            rest = tail;
            let f = &f;
            s.spawn(move || f(row, chunk));
            row += take;
        }
    });
}

/// Dense N-dimensional array of f64, row-major, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(TensorError::BadShape { shape: shape.to_vec() });
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| TensorError::BadShape { shape: shape.to_vec() })?;
    }
    Ok(n)
}

impl Tensor {
    /// Builds a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch { expected, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape)?;
        Ok(Tensor { shape, data: vec![0.0; n] })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "filled" });
        }
        let n = element_count(&shape)?;
        Ok(Tensor { shape, data: vec![value; n] })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value at a full multi-index. Panics on out-of-range indices; this is
    /// an internal-style accessor for code that already knows the shape.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (d, (&i, &e)) in idx.iter().zip(self.shape.iter()).enumerate() {
            assert!(i < e, "index {i} out of range for dim {d} (extent {e})");
            flat = flat * e + i;
        }
        self.data[flat]
    }

    /// Same data, new shape. The element count must match.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let expected = element_count(&shape)?;
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch { expected, got: self.data.len() });
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    fn finish(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        // branchless scan (an all-exponent-bits pattern is NaN or ±inf);
        // this runs over every op's full output, so it must vectorize
        const EXP_MASK: u64 = 0x7ff0_0000_0000_0000;
        let mut bad = false;
        for v in &data {
            bad |= (v.to_bits() & EXP_MASK) == EXP_MASK;
        }
        if bad {
            return Err(TensorError::NonFinite { op });
        }
        Ok(Tensor { shape, data })
    }

    // ---- elementwise -------------------------------------------------------

    /// Elementwise sum. Shapes must match exactly, or `other` may be a
    /// single-channel spatial map `[1,H,W]` broadcast over `self`'s channel
    /// axis `[C,H,W]` (the only broadcast this engine supports).
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip("add", other, |a, b| a + b)
    }

    /// Elementwise product, same shape rules as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip("mul", other, |a, b| a * b)
    }

    fn zip(&self, op: &'static str, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data: Vec<f64> = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Tensor::finish(op, self.shape.clone(), data);
        }
        // Broadcast case: [C,H,W] (+|*) [1,H,W].
        if self.rank() == 3
            && other.rank() == 3
            && other.shape[0] == 1
            && self.shape[1..] == other.shape[1..]
        {
            let plane = self.shape[1] * self.shape[2];
            let mut data = Vec::with_capacity(self.data.len());
            for c in 0..self.shape[0] {
                let base = c * plane;
                for i in 0..plane {
                    data.push(f(self.data[base + i], other.data[i]));
                }
            }
            return Tensor::finish(op, self.shape.clone(), data);
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })
    }

    /// Multiplies every element by a finite scalar.
    pub fn scale(&self, s: f64) -> Result<Tensor> {
        Tensor::finish("scale", self.shape.clone(), self.data.iter().map(|&v| v * s).collect())
    }

    // ---- linear algebra ----------------------------------------------------

    /// Matrix product `[L,K] x [K,M] -> [L,M]`. Each output element sums
    /// over k in ascending order, so results are bitwise reproducible.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::BadOperand {
                op: "matmul",
                detail: format!("expected rank-2 operands, got {:?} and {:?}", self.shape, other.shape),
            });
        }
        let (l, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; l * m];
        gemm(&self.data, &other.data, l, k, m, &mut out);
        Tensor::finish("matmul", vec![l, m], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::BadOperand {
                op: "transpose2d",
                detail: format!("expected rank-2, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor { shape: vec![c, r], data })
    }

    /// Affine map along the last dimension: `x[...,K] x w[K,M] + b[M]`.
    /// Accumulates over k ascending, then adds the bias.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        if w.rank() != 2 || b.rank() != 1 {
            return Err(TensorError::BadOperand {
                op: "linear",
                detail: format!("weight must be [K,M] and bias [M], got {:?} and {:?}", w.shape, b.shape),
            });
        }
        let k = *self.shape.last().ok_or(TensorError::BadOperand {
            op: "linear",
            detail: "input must have at least one dimension".into(),
        })?;
        let (k2, m) = (w.shape[0], w.shape[1]);
        if k != k2 || b.shape[0] != m {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        let rows = self.data.len() / k;
        let mut out = vec![0.0; rows * m];
        gemm(&self.data, &w.data, rows, k, m, &mut out);
        for orow in out.chunks_exact_mut(m) {
            for (o, &bv) in orow.iter_mut().zip(b.data.iter()) {
                *o += bv;
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = m;
        Tensor::finish("linear", shape, out)
    }

    // ---- convolution and pooling -------------------------------------------

    /// 2-D cross-correlation (no kernel flip) of `x[Ci,H,W]` with
    /// `k[Co,Ci,kh,kw]`, zero padding, integral stride.
    ///
    /// Output extent along each axis is `(H + 2p - kh)/stride + 1` and must
    /// be an exact integer. Accumulation per output element runs over
    /// (ci, kh, kw) in ascending order.
    pub fn conv2d(&self, kernel: &Tensor, padding: usize, stride: usize) -> Result<Tensor> {
        if self.rank() != 3 || kernel.rank() != 4 {
            return Err(TensorError::BadOperand {
                op: "conv2d",
                detail: format!("expected x[Ci,H,W], k[Co,Ci,kh,kw]; got {:?}, {:?}", self.shape, kernel.shape),
            });
        }
        if stride == 0 {
            return Err(TensorError::BadOperand { op: "conv2d", detail: "stride must be >= 1".into() });
        }
        let (ci, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (co, ci2, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
        if ci != ci2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape.clone(),
                rhs: kernel.shape.clone(),
            });
        }
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if kh > hp || kw > wp {
            return Err(TensorError::BadOperand {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
            });
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(TensorError::BadOperand {
                op: "conv2d",
                detail: format!(
                    "non-integer output extent: ({hp}-{kh}) and ({wp}-{kw}) must divide stride {stride}"
                ),
            });
        }
        let ho = (hp - kh) / stride + 1;
        let wo = (wp - kw) / stride + 1;
        let ipl = h * w;
        let kpl = kh * kw;
        // Materialize the zero padding once so the window-gathering loops
        // are branch-free; the padding terms contribute exact zeros, so
        // values match the bounds-checked form term for term.
        let padded_store: Vec<f64>;
        let pdata: &[f64] = if padding == 0 {
            &self.data
        } else {
            let mut buf = vec![0.0; ci * hp * wp];
            for ic in 0..ci {
                for y in 0..h {
                    let src = &self.data[ic * ipl + y * w..][..w];
                    let at = ic * hp * wp + (y + padding) * wp + padding;
                    buf[at..at + w].copy_from_slice(src);
                }
            }
            padded_store = buf;
            &padded_store
        };
        let npos = ho * wo;
        // Few output positions over a large window (the template-as-kernel
        // correlation shape): windowed dot products on the padded input
        // beat materializing a gather matrix many times the output's size.
        if npos * 4 < ci * kpl {
            let mut out = vec![0.0; co * npos];
            let work = (co * npos).saturating_mul(ci * kpl);
            row_parallel(&mut out, co, npos, work, |oc0, chunk| {
                for (doc, oplane) in chunk.chunks_exact_mut(npos).enumerate() {
                    let kbase = (oc0 + doc) * ci * kpl;
                    for oy in 0..ho {
                        let py = oy * stride;
                        for ox in 0..wo {
                            let px = ox * stride;
                            let mut acc = 0.0;
                            // accumulate over (ci, kh, kw) ascending
                            for ic in 0..ci {
                                let xplane = &pdata[ic * hp * wp..][..hp * wp];
                                let kplane = &kernel.data[kbase + ic * kpl..][..kpl];
                                for ky in 0..kh {
                                    let xrow = &xplane[(py + ky) * wp + px..][..kw];
                                    let krow = &kplane[ky * kw..][..kw];
                                    for (xv, kv) in xrow.iter().zip(krow.iter()) {
                                        acc += xv * kv;
                                    }
                                }
                            }
                            oplane[oy * wo + ox] = acc;
                        }
                    }
                }
            });
            return Tensor::finish("conv2d", vec![co, ho, wo], out);
        }
        // Otherwise lower to a matrix product: gather every output
        // position's window into a [Ci*kh*kw, Ho*Wo] matrix whose row order
        // (ci, ky, kx) is exactly the conv's accumulation order, then
        // multiply by the kernel viewed as [Co, Ci*kh*kw]. Each output
        // element therefore sums the same terms in the same order as the
        // windowed form, making the two paths value-identical.
        let mut cols = vec![0.0; ci * kpl * npos];
        for ic in 0..ci {
            let xplane = &pdata[ic * hp * wp..][..hp * wp];
            for ky in 0..kh {
                for kx in 0..kw {
                    let crow = &mut cols[(ic * kpl + ky * kw + kx) * npos..][..npos];
                    for oy in 0..ho {
                        let xrow = &xplane[(oy * stride + ky) * wp + kx..];
                        let orow = &mut crow[oy * wo..][..wo];
                        if stride == 1 {
                            orow.copy_from_slice(&xrow[..wo]);
                        } else {
                            for (o, x) in orow.iter_mut().zip(xrow.iter().step_by(stride)) {
                                *o = *x;
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; co * npos];
        gemm(&kernel.data, &cols, co, ci * kpl, npos, &mut out);
        Tensor::finish("conv2d", vec![co, ho, wo], out)
    }

    /// Global average pooling: `[C,H,W] -> [C]`, mean over the spatial plane.
    pub fn gap(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(TensorError::BadOperand {
                op: "gap",
                detail: format!("expected [C,H,W], got {:?}", self.shape),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let plane = h * w;
        let mut out = Vec::with_capacity(c);
        for ch in 0..c {
            let mut acc = 0.0;
            for &v in &self.data[ch * plane..(ch + 1) * plane] {
                acc += v;
            }
            out.push(acc / plane as f64);
        }
        Tensor::finish("gap", vec![c], out)
    }

    /// Align-corners bilinear upsampling of `[C,h,w]` to `[C,H,W]`.
    /// Errors when the target is smaller than the source on either axis.
    pub fn bilinear_upsample(&self, target_h: usize, target_w: usize) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(TensorError::BadOperand {
                op: "bilinear_upsample",
                detail: format!("expected [C,h,w], got {:?}", self.shape),
            });
        }
        if target_h < self.shape[1] || target_w < self.shape[2] {
            return Err(TensorError::BadOperand {
                op: "bilinear_upsample",
                detail: format!(
                    "target {}x{} smaller than source {}x{}",
                    target_h, target_w, self.shape[1], self.shape[2]
                ),
            });
        }
        self.bilinear_resize(target_h, target_w)
    }

    /// Align-corners bilinear resampling to any size (up or down). Corner
    /// samples are preserved exactly; interpolation uses the lerp form
    /// `a + f*(b-a)` so outputs never leave the input's [min, max] range.
    pub fn bilinear_resize(&self, target_h: usize, target_w: usize) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(TensorError::BadOperand {
                op: "bilinear_resize",
                detail: format!("expected [C,h,w], got {:?}", self.shape),
            });
        }
        if target_h == 0 || target_w == 0 {
            return Err(TensorError::BadShape { shape: vec![self.shape[0], target_h, target_w] });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        if target_h == h && target_w == w {
            return Ok(self.clone());
        }
        // Source coordinate of output index o: o*(in-1)/(out-1). Exact at
        // the corners because small-integer products and even divisions are
        // exact in IEEE-754.
        let src_coord = |o: usize, out_n: usize, in_n: usize| -> (usize, usize, f64) {
            if out_n == 1 || in_n == 1 {
                return (0, 0, 0.0);
            }
            let s = (o as f64) * ((in_n - 1) as f64) / ((out_n - 1) as f64);
            let i0 = s.floor() as usize;
            let i0 = i0.min(in_n - 1);
            let i1 = (i0 + 1).min(in_n - 1);
            (i0, i1, s - i0 as f64)
        };
        let lerp = |a: f64, b: f64, f: f64| a + f * (b - a);
        let plane_in = h * w;
        let plane_out = target_h * target_w;
        let mut out = vec![0.0; c * plane_out];
        for ch in 0..c {
            let src = &self.data[ch * plane_in..(ch + 1) * plane_in];
            for oy in 0..target_h {
                let (y0, y1, fy) = src_coord(oy, target_h, h);
                for ox in 0..target_w {
                    let (x0, x1, fx) = src_coord(ox, target_w, w);
                    let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
                    let bot = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
                    out[ch * plane_out + oy * target_w + ox] = lerp(top, bot, fy);
                }
            }
        }
        Tensor::finish("bilinear_resize", vec![c, target_h, target_w], out)
    }

    // ---- activations ---------------------------------------------------------

    /// Logistic sigmoid, elementwise. Output is always in (0,1) up to f64
    /// rounding at extreme magnitudes.
    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| sigmoid_scalar(v)).collect();
        Tensor::finish("sigmoid", self.shape.clone(), data)
    }

    /// max(0, x) elementwise.
    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        Tensor::finish("relu", self.shape.clone(), data)
    }

    /// Softmax along the last dimension with max-subtraction for stability.
    /// Every row of the result sums to 1 (within rounding) with entries in [0,1].
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let k = *self.shape.last().ok_or(TensorError::BadOperand {
            op: "softmax_lastdim",
            detail: "input must have at least one dimension".into(),
        })?;
        let rows = self.data.len() / k;
        let mut out = vec![0.0; self.data.len()];
        // exp dominates; weight the work estimate accordingly
        let work = self.data.len().saturating_mul(32);
        row_parallel(&mut out, rows, k, work, |row0, chunk| {
            for (dr, orow) in chunk.chunks_exact_mut(k).enumerate() {
                let row = &self.data[(row0 + dr) * k..(row0 + dr + 1) * k];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &v) in orow.iter_mut().zip(row.iter()) {
                    *o = (v - m).exp();
                    sum += *o;
                }
                for o in orow.iter_mut() {
                    *o /= sum;
                }
            }
        });
        Tensor::finish("softmax_lastdim", self.shape.clone(), out)
    }

    // ---- plumbing used by the model modules ----------------------------------

    /// Adds `bias[c]` to every element of channel c of a `[C,H,W]` map.
    pub fn add_channel_bias(&self, bias: &[f64]) -> Result<Tensor> {
        if self.rank() != 3 || bias.len() != self.shape[0] {
            return Err(TensorError::BadOperand {
                op: "add_channel_bias",
                detail: format!("shape {:?} with {} biases", self.shape, bias.len()),
            });
        }
        let plane = self.shape[1] * self.shape[2];
        let mut data = Vec::with_capacity(self.data.len());
        for (c, &b) in bias.iter().enumerate() {
            for &v in &self.data[c * plane..(c + 1) * plane] {
                data.push(v + b);
            }
        }
        Tensor::finish("add_channel_bias", self.shape.clone(), data)
    }

    /// Scales channel c of a `[C,H,W]` map by `gate[c]`.
    pub fn scale_channels(&self, gate: &[f64]) -> Result<Tensor> {
        if self.rank() != 3 || gate.len() != self.shape[0] {
            return Err(TensorError::BadOperand {
                op: "scale_channels",
                detail: format!("shape {:?} with {} gates", self.shape, gate.len()),
            });
        }
        let plane = self.shape[1] * self.shape[2];
        let mut data = Vec::with_capacity(self.data.len());
        for (c, &g) in gate.iter().enumerate() {
            for &v in &self.data[c * plane..(c + 1) * plane] {
                data.push(v * g);
            }
        }
        Tensor::finish("scale_channels", self.shape.clone(), data)
    }

    /// Reorders `[C,H,W]` into a token matrix `[H*W, C]`, row-major over
    /// (row, col): token i*W+j holds the feature column at (i, j).
    pub fn spatial_tokens(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(TensorError::BadOperand {
                op: "spatial_tokens",
                detail: format!("expected [C,H,W], got {:?}", self.shape),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let plane = h * w;
        let mut data = vec![0.0; plane * c];
        for ch in 0..c {
            for p in 0..plane {
                data[p * c + ch] = self.data[ch * plane + p];
            }
        }
        Ok(Tensor { shape: vec![plane, c], data })
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() != 2 || start >= end || end > self.shape[1] {
            return Err(TensorError::BadOperand {
                op: "slice_cols",
                detail: format!("range {start}..{end} of shape {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let width = end - start;
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Tensor { shape: vec![r, width], data })
    }

    /// Horizontal concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::BadOperand { op: "concat_cols", detail: "no parts".into() });
        }
        let rows = parts[0].shape[0];
        for p in parts {
            if p.rank() != 2 || p.shape[0] != rows {
                return Err(TensorError::BadOperand {
                    op: "concat_cols",
                    detail: "all parts must be rank-2 with equal row counts".into(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[i * c..(i + 1) * c]);
            }
        }
        Ok(Tensor { shape: vec![rows, total], data })
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2, "row() requires rank 2");
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
