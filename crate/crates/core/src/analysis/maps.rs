//! Assignment maps as binary greyscale images.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::ForwardTrace;
use crate::error::{Error, Result};
use crate::real::Real;

/// Scales values to `0..=255` by their own min and max. A constant slot
/// becomes mid-grey.
pub fn normalize_slot(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Binary PGM (`P5`, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM written by [`encode_pgm`]: `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::config("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::config("not an 8-bit P5 image"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::config("bad PGM size"));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| Error::config("truncated PGM payload"))?;
    Ok((w, h, pixels.to_vec()))
}

/// Writes one image per `(batch, head, slot)` of `Â`, named
/// `assign_b{b}_h{h}_m{m}.pgm`, with pixel `(r, c)` taken from token
/// `r · grid_w + c`.
pub fn export_assignment_maps<T: Real>(
    trace: &ForwardTrace<T>,
    grid: (usize, usize),
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let &[b, h, n, m] = trace.a_hat.shape() else {
        return Err(Error::Contract("malformed assignment tensor".into()));
    };
    let (gh, gw) = grid;
    if gh * gw != n {
        return Err(Error::config(format!("{n} tokens do not fill a {gh}x{gw} grid")));
    }
    fs::create_dir_all(dir)?;
    let data = trace.a_hat.data();
    let mut paths = Vec::with_capacity(b * h * m);
    for bi in 0..b {
        for hi in 0..h {
            let base = (bi * h + hi) * n * m;
            for slot in 0..m {
                let vals: Vec<f64> = (0..n).map(|t| data[base + t * m + slot].to_f64()).collect();
                let path = dir.join(format!("assign_b{bi}_h{hi}_m{slot}.pgm"));
                fs::write(&path, encode_pgm(gw, gh, &normalize_slot(&vals)))?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}
