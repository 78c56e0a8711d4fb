//! Row-major token sequences and the token dataset file format.
//!
//! Layout: magic `LGRITTOK`, `u32` version, `u32` count, `u32` h, `u32` w, then
//! `count * h * w` little-endian `u16` tokens.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::Reader;
use crate::vqvae::TokenGrid;

pub const TOK_MAGIC: &[u8; 8] = b"LGRITTOK";
pub const TOK_VERSION: u32 = 1;

/// Row-major flattening of a grid.
pub fn flatten(grid: &TokenGrid) -> Vec<u16> {
    grid.tokens().to_vec()
}

/// Inverse of [`flatten`]. A leading `sentinel` is stripped when the sequence is
/// one longer than the grid.
pub fn tokens_to_grid(seq: &[u16], height: usize, width: usize, sentinel: Option<u16>) -> Result<TokenGrid> {
    let body = match (sentinel, seq.first()) {
        (Some(s), Some(&first)) if first == s && seq.len() == height * width + 1 => &seq[1..],
        _ => seq,
    };
    if body.len() != height * width {
        return Err(Error::invalid(format!(
            "sequence of length {} does not fill a {height}x{width} grid",
            seq.len()
        )));
    }
    TokenGrid::new(height, width, body.to_vec())
}

pub fn encode_token_set(grids: &[TokenGrid]) -> Result<Vec<u8>> {
    let (h, w) = match grids.first() {
        Some(g) => (g.height(), g.width()),
        None => (0, 0),
    };
    if let Some(g) = grids.iter().find(|g| (g.height(), g.width()) != (h, w)) {
        return Err(Error::shape("token_set", &[g.height(), g.width()], &[h, w]));
    }
    let mut out = Vec::with_capacity(24 + grids.len() * h * w * 2);
    out.extend_from_slice(TOK_MAGIC);
    for v in [TOK_VERSION, grids.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for g in grids {
        for t in g.tokens() {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_token_set(bytes: &[u8]) -> Result<Vec<TokenGrid>> {
    const KIND: &str = "token set";
    let mut r = Reader::new(bytes, KIND);
    r.expect_magic(TOK_MAGIC)?;
    let version = r.u32()?;
    if version != TOK_VERSION {
        return Err(Error::Format {
            kind: KIND,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()? as usize;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    if count > 0 && h * w == 0 {
        return Err(Error::Format {
            kind: KIND,
            reason: "empty grid shape".into(),
        });
    }
    if r.remaining() != count * h * w * 2 {
        return Err(Error::Format {
            kind: KIND,
            reason: format!("payload is {} bytes, header implies {}", r.remaining(), count * h * w * 2),
        });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tokens = (0..h * w).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        out.push(TokenGrid::new(h, w, tokens)?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_token_set(grids: &[TokenGrid], path: &Path) -> Result<()> {
    std::fs::write(path, encode_token_set(grids)?).map_err(|e| Error::io(path, e))
}

pub fn read_token_set(path: &Path) -> Result<Vec<TokenGrid>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_token_set(&bytes)
}
