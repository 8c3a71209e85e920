//! Binary PGM heatmaps of the crop map and PPM overlays of the chosen rect,
//! one pixel per grid cell.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attention::AttentionGrid;
use crate::error::{invalid, Result};
use crate::focus::Rect;
use crate::orchestrator::{CropDecision, RunTrace};

pub const MARKER: [u8; 3] = [255, 0, 0];

/// Linear map of the grid onto 0..=255; a constant grid is mid-gray.
pub fn to_gray(grid: &AttentionGrid) -> Vec<u8> {
    let lo = grid.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.max();
    grid.values()
        .iter()
        .map(|v| {
            if hi - lo <= 0.0 {
                128
            } else {
                ((v - lo) / (hi - lo) * 255.0).round() as u8
            }
        })
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Gray heatmap with the rect's border cells painted in [`MARKER`].
pub fn overlay(grid: &AttentionGrid, rect: &Rect) -> Vec<u8> {
    let w = grid.width();
    let mut rgb = Vec::with_capacity(grid.len() * 3);
    for (i, g) in to_gray(grid).into_iter().enumerate() {
        let (r, c) = (i / w, i % w);
        let border = rect.contains(r, c)
            && (r == rect.row0 || r + 1 == rect.row0 + rect.height || c == rect.col0 || c + 1 == rect.col0 + rect.width);
        rgb.extend_from_slice(&if border { MARKER } else { [g, g, g] });
    }
    rgb
}

/// Writes `iter_<t>_acrop.pgm` for every iteration with a crop map and
/// `iter_<t>_rect.ppm` for every iteration that cropped.
pub fn render_trace(trace: &RunTrace, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if trace.iterations.is_empty() {
        return Err(invalid("trace has no iterations"));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for it in &trace.iterations {
        let Some(a_crop) = &it.crop.a_crop else { continue };
        let (h, w) = a_crop.shape();
        let path = dir.join(format!("iter_{}_acrop.pgm", it.t));
        fs::write(&path, encode_pgm(w, h, &to_gray(a_crop)))?;
        written.push(path);
        if let (CropDecision::Crop, Some(rect)) = (it.crop.decision, it.crop.rect) {
            let path = dir.join(format!("iter_{}_rect.ppm", it.t));
            fs::write(&path, encode_ppm(w, h, &overlay(a_crop, &rect)))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_scaling() {
        let g = AttentionGrid::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(to_gray(&g), vec![0, 255, 0, 0]);
        let u = AttentionGrid::filled(3, 2, 0.25).unwrap();
        assert_eq!(to_gray(&u), vec![128; 6]);
    }

    #[test]
    fn pgm_header() {
        let bytes = encode_pgm(3, 2, &[1, 2, 3, 4, 5, 6]);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
    }

    #[test]
    fn overlay_marks_border_only() {
        let g = AttentionGrid::filled(5, 5, 1.0).unwrap();
        let rgb = overlay(&g, &Rect::new(1, 1, 3, 3));
        let px = |r: usize, c: usize| &rgb[(r * 5 + c) * 3..(r * 5 + c) * 3 + 3];
        assert_eq!(px(1, 1), MARKER);
        assert_eq!(px(3, 2), MARKER);
        assert_eq!(px(2, 2), [128, 128, 128]);
        assert_eq!(px(0, 0), [128, 128, 128]);
    }
}
