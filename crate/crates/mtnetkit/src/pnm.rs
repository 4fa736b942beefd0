//! Binary PPM (P6) and PGM (P5) images, 8-bit only.
//!
//! This is the only binary format the toolkit reads or writes: RGB frames
//! are P6, thermal frames are P5. The decoder is written for hostile input —
//! it never allocates before the header has been validated against the
//! actual byte count, so truncated or dimension-bombed files fail fast.

use std::fmt;

use crate::tensor::Tensor;

/// Hard per-axis limit; anything larger is rejected as implausible.
pub const MAX_DIM: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmError {
    /// First two bytes are not `P6` or `P5`.
    BadMagic,
    /// Header is malformed (missing fields, junk, oversized numbers).
    BadHeader(String),
    /// Only 8-bit images (maxval exactly 255) are supported.
    UnsupportedMaxval(u64),
    /// Pixel payload is shorter than width*height*channels.
    Truncated { expected: usize, got: usize },
    /// Extra bytes after the pixel payload.
    TrailingData { extra: usize },
}

impl fmt::Display for PnmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PnmError::BadMagic => write!(f, "not a binary PPM/PGM (expected P6 or P5 magic)"),
            PnmError::BadHeader(d) => write!(f, "malformed header: {d}"),
            PnmError::UnsupportedMaxval(m) => write!(f, "unsupported maxval {m} (only 255)"),
            PnmError::Truncated { expected, got } => {
                write!(f, "truncated pixel data: need {expected} bytes, have {got}")
            }
            PnmError::TrailingData { extra } => {
                write!(f, "{extra} trailing bytes after pixel data")
            }
        }
    }
}

impl std::error::Error for PnmError {}

/// A decoded 8-bit image: interleaved rows, `channels` is 3 (PPM) or 1 (PGM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Reads header tokens: skips whitespace and `#` comments, then parses an
/// unsigned decimal. Rejects numbers longer than 7 digits outright.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<u64, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = &self.bytes[start..self.pos];
        if digits.is_empty() {
            return Err(PnmError::BadHeader(format!("expected {what}")));
        }
        if digits.len() > 7 {
            return Err(PnmError::BadHeader(format!("{what} has too many digits")));
        }
        let mut v: u64 = 0;
        for &d in digits {
            v = v * 10 + (d - b'0') as u64;
        }
        Ok(v)
    }
}

fn decode(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Pnm, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(PnmError::BadMagic);
    }
    let mut r = HeaderReader::new(&bytes[2..]);
    let width = r.read_number("width")? as usize;
    let height = r.read_number("height")? as usize;
    let maxval = r.read_number("maxval")?;
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(PnmError::BadHeader(format!("bad dimensions {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if r.pos >= r.bytes.len() || !r.bytes[r.pos].is_ascii_whitespace() {
        return Err(PnmError::BadHeader("missing separator before pixel data".into()));
    }
    let payload = &r.bytes[r.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| PnmError::BadHeader("dimension overflow".into()))?;
    if payload.len() < expected {
        return Err(PnmError::Truncated { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(PnmError::TrailingData { extra: payload.len() - expected });
    }
    Ok(Pnm {
        width,
        height,
        channels,
        data: payload.to_vec(),
    })
}

impl Pnm {
    /// Builds an image from interleaved bytes, validating the element count.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, PnmError> {
        if !(channels == 1 || channels == 3) {
            return Err(PnmError::BadHeader(format!("{channels} channels (only 1 or 3)")));
        }
        if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
            return Err(PnmError::BadHeader(format!("bad dimensions {width}x{height}")));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(PnmError::Truncated { expected, got: data.len() });
        }
        Ok(Pnm { width, height, channels, data })
    }

    /// Decodes a binary RGB image (`P6`, maxval 255).
    pub fn decode_ppm(bytes: &[u8]) -> Result<Pnm, PnmError> {
        decode(bytes, b"P6", 3)
    }

    /// Decodes a binary grayscale image (`P5`, maxval 255).
    pub fn decode_pgm(bytes: &[u8]) -> Result<Pnm, PnmError> {
        decode(bytes, b"P5", 1)
    }

    /// Serializes with the canonical header `P6|P5\n<w> <h>\n255\n`.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let header = format!("{magic}\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    /// Converts to a channel-first `[C,H,W]` tensor scaled to [0,1] by /255.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; self.channels * plane];
        for p in 0..plane {
            for c in 0..self.channels {
                data[c * plane + p] = self.data[p * self.channels + c] as f64 / 255.0;
            }
        }
        Tensor::new(vec![self.channels, self.height, self.width], data)
            .expect("u8/255 values are always finite")
    }
}
