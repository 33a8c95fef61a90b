//! Binary PGM (P5, maxval 255) frame export.

use std::fs;
use std::path::{Path, PathBuf};

use crate::environment::{ObservationMap, StateMap};
use crate::error::{Error, Result};
use crate::filter::BeliefGrid;

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must equal width * height");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 image written by [`encode_pgm`]; returns `(width, height, pixels)`.
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
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Parse("expected a P5 image with maxval 255".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM size: {e}")));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Parse("truncated PGM data".into()))?;
    Ok((w, h, data.to_vec()))
}

/// States spread evenly over 0..=255.
pub fn state_pixels(state: &StateMap, states: usize) -> Vec<u8> {
    let step = 255 / (states.max(2) - 1);
    state.cells().iter().map(|&s| (s as usize * step).min(255) as u8).collect()
}

/// Unobserved cells are black; symbols `0..|O|` map to evenly spaced grey levels above it.
pub fn observation_pixels(obs: &ObservationMap, observations: usize) -> Vec<u8> {
    let step = 255 / observations.max(1);
    obs.cells()
        .iter()
        .zip(obs.mask())
        .map(|(&c, &m)| if m == 0 { 0 } else { ((c as usize + 1) * step).min(255) as u8 })
        .collect()
}

/// One channel of a belief grid, probability scaled to 0..=255.
pub fn belief_pixels(belief: &BeliefGrid, channel: usize) -> Vec<u8> {
    belief
        .probs
        .channel(channel)
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes `<dir>/<quantity>_<k>.pgm`.
pub fn write_frame(dir: &Path, quantity: &str, k: u64, width: usize, height: usize, pixels: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{quantity}_{k}.pgm"));
    fs::write(&path, encode_pgm(width, height, pixels))?;
    Ok(path)
}
