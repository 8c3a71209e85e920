//! Visual focus adjustment: score the image with a crop map, search
//! candidate windows, and decide between a crop and the original view.

use serde::{Deserialize, Serialize};

use crate::attention::{cosine_sim, AttentionGrid};
use crate::error::{invalid, Error, Result};

/// Window side lengths, in tenths of the original dimension.
const WINDOW_TENTHS: [usize; 6] = [4, 5, 6, 7, 8, 9];

/// A rectangle in grid-cell units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(row0: usize, col0: usize, height: usize, width: usize) -> Self {
        Self { row0, col0, height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits(&self, (h, w): (usize, usize)) -> bool {
        self.height >= 1 && self.width >= 1 && self.row0 + self.height <= h && self.col0 + self.width <= w
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.height).contains(&row) && (self.col0..self.col0 + self.width).contains(&col)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row0..self.row0 + self.height).flat_map(move |r| (self.col0..self.col0 + self.width).map(move |c| (r, c)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Original,
    Crop(Rect),
}

/// The current view, always expressed over the original grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusState {
    pub view: View,
    pub grid_shape: (usize, usize),
}

impl FocusState {
    pub fn original(grid_shape: (usize, usize)) -> Self {
        Self {
            view: View::Original,
            grid_shape,
        }
    }

    pub fn crop(rect: Rect, grid_shape: (usize, usize)) -> Result<Self> {
        if !rect.fits(grid_shape) {
            return Err(invalid(format!("{rect:?} outside grid {grid_shape:?}")));
        }
        Ok(Self {
            view: View::Crop(rect),
            grid_shape,
        })
    }

    pub fn rect(&self) -> Option<Rect> {
        match self.view {
            View::Original => None,
            View::Crop(r) => Some(r),
        }
    }

    /// The viewed region; the full grid for `Original`.
    pub fn region(&self) -> Rect {
        self.rect()
            .unwrap_or(Rect::new(0, 0, self.grid_shape.0, self.grid_shape.1))
    }
}

/// Everything computed while deciding the next view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusComputation {
    pub c_rel: AttentionGrid,
    pub a_crop: AttentionGrid,
    pub beta: f64,
    pub sigma: f64,
    pub mu_global: f64,
    pub mu_best: f64,
    pub best_rect: Rect,
    pub candidates_evaluated: usize,
}

/// `max(a_rel_q - alpha * a_rel_chain, 0)`: question relevance not yet
/// covered by the chain.
pub fn question_relevance(a_rel_q: &AttentionGrid, a_rel_chain: &AttentionGrid, alpha: f64) -> Result<AttentionGrid> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1], got {alpha}")));
    }
    a_rel_q.map_with(a_rel_chain, |q, r| (q - alpha * r).max(0.0))
}

pub fn compose_crop_map(c_rel: &AttentionGrid, a_rel_sample: &AttentionGrid) -> Result<AttentionGrid> {
    c_rel.map_with(a_rel_sample, |c, s| 0.5 * c + 0.5 * s)
}

// round-half-up of tenths * n / 10, in integers
fn tenths_of(n: usize, tenths: usize) -> usize {
    (tenths * n + 5) / 10
}

fn offsets(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = extent - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Candidate windows spanning 40%..90% of each dimension (chosen
/// independently), on a 10% stride with the far edge always reachable.
///
/// Ordered by area descending, then `row0`, `col0`, then taller first.
pub fn enumerate_windows((h, w): (usize, usize)) -> Result<Vec<Rect>> {
    if h < 2 || w < 2 {
        return Err(invalid(format!("window search needs a grid of at least 2x2, got {h}x{w}")));
    }
    let sizes = |n: usize| {
        let mut s: Vec<usize> = WINDOW_TENTHS.iter().map(|&t| tenths_of(n, t).clamp(1, n)).collect();
        s.dedup();
        s
    };
    let row_stride = tenths_of(h, 1).max(1);
    let col_stride = tenths_of(w, 1).max(1);
    let mut rects = Vec::new();
    for &rh in &sizes(h) {
        for &rw in &sizes(w) {
            for r in offsets(h, rh, row_stride) {
                for c in offsets(w, rw, col_stride) {
                    rects.push(Rect::new(r, c, rh, rw));
                }
            }
        }
    }
    rects.sort_by_key(|r| (std::cmp::Reverse(r.area()), r.row0, r.col0, std::cmp::Reverse(r.height)));
    rects.dedup();
    Ok(rects)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Returns `(beta, sigma)`: `sigma` is the spread of `a_crop`, scaled by
/// how far the question-relevance map diverges from the sample's focus.
/// An all-zero `c_rel` counts as fully divergent, so `beta = sigma`.
pub fn adaptive_threshold(
    c_rel: &AttentionGrid,
    a_rel_sample: &AttentionGrid,
    a_crop: &AttentionGrid,
) -> Result<(f64, f64)> {
    c_rel.ensure_same_shape(a_rel_sample)?;
    c_rel.ensure_same_shape(a_crop)?;
    let sigma = std_dev(a_crop.values());
    let cos = if c_rel.values().iter().all(|v| *v == 0.0) {
        0.0
    } else {
        cosine_sim(c_rel, a_rel_sample)?
    };
    Ok((sigma * (1.0 - cos), sigma))
}

/// Mean of `grid` over `rect`, summed in row-major order.
pub fn window_mean(grid: &AttentionGrid, rect: &Rect) -> f64 {
    let mut sum = 0.0;
    for r in rect.row0..rect.row0 + rect.height {
        let row = &grid.values()[r * grid.width()..(r + 1) * grid.width()];
        sum += row[rect.col0..rect.col0 + rect.width].iter().sum::<f64>();
    }
    sum / rect.area() as f64
}

/// Outcome of the window search before it is turned into a view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowChoice {
    pub best: Rect,
    pub mu_best: f64,
    pub mu_global: f64,
    pub crop: bool,
}

pub fn best_window(a_crop: &AttentionGrid, candidates: &[Rect], beta: f64) -> Result<WindowChoice> {
    if candidates.is_empty() {
        return Err(invalid("no candidate windows"));
    }
    if let Some(r) = candidates.iter().find(|r| !r.fits(a_crop.shape())) {
        return Err(Error::InvalidInput(format!("{r:?} outside grid {:?}", a_crop.shape())));
    }
    let mut best = candidates[0];
    let mut mu_best = window_mean(a_crop, &best);
    for rect in &candidates[1..] {
        let mu = window_mean(a_crop, rect);
        if mu > mu_best {
            best = *rect;
            mu_best = mu;
        }
    }
    let mu_global = a_crop.mean();
    Ok(WindowChoice {
        best,
        mu_best,
        mu_global,
        crop: mu_best > mu_global + beta,
    })
}

/// Crop to the best window when its mean beats the global mean by more
/// than `beta`; otherwise return to the original view.
pub fn select_focus(a_crop: &AttentionGrid, candidates: &[Rect], beta: f64) -> Result<FocusState> {
    let choice = best_window(a_crop, candidates, beta)?;
    if choice.crop {
        FocusState::crop(choice.best, a_crop.shape())
    } else {
        Ok(FocusState::original(a_crop.shape()))
    }
}

/// Full adjustment step from the three relative maps.
pub fn adjust_focus(
    a_rel_q: &AttentionGrid,
    a_rel_chain: &AttentionGrid,
    a_rel_sample: &AttentionGrid,
    alpha: f64,
    candidates: &[Rect],
) -> Result<(FocusState, FocusComputation)> {
    let c_rel = question_relevance(a_rel_q, a_rel_chain, alpha)?;
    let a_crop = compose_crop_map(&c_rel, a_rel_sample)?;
    let (beta, sigma) = adaptive_threshold(&c_rel, a_rel_sample, &a_crop)?;
    let choice = best_window(&a_crop, candidates, beta)?;
    let state = if choice.crop {
        FocusState::crop(choice.best, a_crop.shape())?
    } else {
        FocusState::original(a_crop.shape())
    };
    Ok((
        state,
        FocusComputation {
            c_rel,
            a_crop,
            beta,
            sigma,
            mu_global: choice.mu_global,
            mu_best: choice.mu_best,
            best_rect: choice.best,
            candidates_evaluated: candidates.len(),
        },
    ))
}

/// A rectangle in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

// Grow `[start, start+len)` to `target` inside `[0, bound)`, centred, shifted
// back inside when it would cross an edge.
fn grow(start: u64, len: u64, target: u64, bound: u64) -> (u64, u64) {
    let target = target.min(bound).max(len);
    let left = (target - len) / 2;
    let mut s = start.saturating_sub(left);
    if s + target > bound {
        s = bound - target;
    }
    (s, target)
}

/// Scales a grid rect to pixels, then expands it around its centre until
/// it has the original image's aspect ratio.
pub fn grid_rect_to_pixels(rect: &Rect, patch_px: u32, image_w_px: u32, image_h_px: u32) -> Result<PixelRect> {
    if patch_px == 0 || image_w_px == 0 || image_h_px == 0 {
        return Err(invalid("patch and image sizes must be positive"));
    }
    let (p, iw, ih) = (patch_px as u64, image_w_px as u64, image_h_px as u64);
    let x0 = rect.col0 as u64 * p;
    let y0 = rect.row0 as u64 * p;
    let x1 = ((rect.col0 + rect.width) as u64 * p).min(iw);
    let y1 = ((rect.row0 + rect.height) as u64 * p).min(ih);
    if x0 >= x1 || y0 >= y1 {
        return Err(invalid(format!("{rect:?} maps to an empty pixel region")));
    }
    let (mut x, mut w, mut y, mut h) = (x0, x1 - x0, y0, y1 - y0);
    if w * ih < h * iw {
        // too narrow: widen to h * iw / ih, rounded half up
        (x, w) = grow(x, w, (2 * h * iw + ih) / (2 * ih), iw);
    } else if w * ih > h * iw {
        (y, h) = grow(y, h, (2 * w * ih + iw) / (2 * iw), ih);
    }
    Ok(PixelRect {
        x: x as u32,
        y: y as u32,
        width: w as u32,
        height: h as u32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&[f64]]) -> AttentionGrid {
        AttentionGrid::from_rows(rows).unwrap()
    }

    #[test]
    fn relevance_examples() {
        let q = AttentionGrid::filled(2, 2, 0.25).unwrap();
        let c = question_relevance(&q, &q, 0.3).unwrap();
        assert!(c.values().iter().all(|v| (v - 0.175).abs() < 1e-15));

        let q = grid(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let chain = grid(&[&[0.2, 0.2], &[0.5, 0.4]]);
        let c = question_relevance(&q, &chain, 1.0).unwrap();
        assert!(c.values().iter().all(|v| *v == 0.0));

        assert!(question_relevance(&q, &chain, 0.0).is_err());
        assert!(question_relevance(&q, &AttentionGrid::filled(1, 4, 0.1).unwrap(), 0.3).is_err());
    }

    #[test]
    fn crop_map_examples() {
        let s = grid(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let z = AttentionGrid::filled(2, 2, 0.0).unwrap();
        let m = compose_crop_map(&z, &s).unwrap();
        for (a, b) in m.values().iter().zip(s.values()) {
            assert_eq!(*a, 0.5 * b);
        }
        assert_eq!(compose_crop_map(&s, &s).unwrap(), s);
    }

    #[test]
    fn windows_ten_by_ten() {
        let w = enumerate_windows((10, 10)).unwrap();
        // sizes 4..=9 at stride 1: (7+6+5+4+3+2)^2
        assert_eq!(w.len(), 729);
        assert!(w.iter().all(|r| r.fits((10, 10))));
        assert_eq!(w[0], Rect::new(0, 0, 9, 9));
    }

    #[test]
    fn windows_two_by_two() {
        let w = enumerate_windows((2, 2)).unwrap();
        // heights/widths {1, 2}: 1x1 at 4 spots, 1x2 and 2x1 at 2 each, 2x2 once
        assert_eq!(w.len(), 9);
        assert_eq!(w[0], Rect::new(0, 0, 2, 2));
        assert!(enumerate_windows((1, 5)).is_err());
    }

    #[test]
    fn windows_reach_far_edge() {
        let w = enumerate_windows((13, 17)).unwrap();
        assert!(w.iter().all(|r| r.fits((13, 17))));
        assert!(w.iter().any(|r| r.row0 + r.height == 13 && r.col0 + r.width == 17 && r.height == 5));
    }

    #[test]
    fn threshold_examples() {
        let s = grid(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let c = grid(&[&[0.2, 0.4], &[0.6, 0.8]]);
        let a = compose_crop_map(&c, &s).unwrap();
        let (beta, sigma) = adaptive_threshold(&c, &s, &a).unwrap();
        assert!(sigma > 0.0);
        assert!(beta.abs() < 1e-12 * sigma.max(1.0));

        let s = grid(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let c = grid(&[&[0.0, 0.5], &[0.5, 0.0]]);
        let a = compose_crop_map(&c, &s).unwrap();
        let (beta, sigma) = adaptive_threshold(&c, &s, &a).unwrap();
        assert_eq!(beta, sigma);

        let z = AttentionGrid::filled(2, 2, 0.0).unwrap();
        let (beta, sigma) = adaptive_threshold(&z, &s, &a).unwrap();
        assert_eq!(beta, sigma);

        let u = AttentionGrid::filled(2, 2, 0.25).unwrap();
        assert_eq!(adaptive_threshold(&c, &s, &u).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn uniform_map_keeps_original() {
        let g = AttentionGrid::filled(10, 10, 0.01).unwrap();
        let w = enumerate_windows(g.shape()).unwrap();
        for beta in [0.0, 1e-3] {
            assert_eq!(select_focus(&g, &w, beta).unwrap().view, View::Original);
        }
        assert!(select_focus(&g, &[], 0.0).is_err());
    }

    #[test]
    fn block_mass_crops_onto_block() {
        let mut v = vec![0.0; 100];
        for r in 3..7 {
            for c in 5..9 {
                v[r * 10 + c] = 1.0 / 16.0;
            }
        }
        let g = AttentionGrid::new(10, 10, v).unwrap();
        let w = enumerate_windows(g.shape()).unwrap();
        let f = select_focus(&g, &w, 0.0).unwrap();
        assert_eq!(f.view, View::Crop(Rect::new(3, 5, 4, 4)));
    }

    #[test]
    fn pixels_full_grid_identity() {
        let r = Rect::new(0, 0, 32, 32);
        assert_eq!(
            grid_rect_to_pixels(&r, 14, 448, 448).unwrap(),
            PixelRect { x: 0, y: 0, width: 448, height: 448 }
        );
        // grid rounded up past the image edge is clipped back to it
        let r = Rect::new(0, 0, 4, 5);
        assert_eq!(
            grid_rect_to_pixels(&r, 10, 45, 36).unwrap(),
            PixelRect { x: 0, y: 0, width: 45, height: 36 }
        );
    }

    #[test]
    fn pixels_square_stays_square() {
        let r = Rect::new(2, 3, 4, 4);
        assert_eq!(
            grid_rect_to_pixels(&r, 14, 224, 224).unwrap(),
            PixelRect { x: 42, y: 28, width: 56, height: 56 }
        );
    }

    #[test]
    fn pixels_widescreen_expands_horizontally() {
        // 1600x900 image, 100 px patches: square 400x400 crop at x=600 needs
        // width round(400 * 16 / 9) = 711, split 155 left / 156 right.
        let r = Rect::new(2, 6, 4, 4);
        assert_eq!(
            grid_rect_to_pixels(&r, 100, 1600, 900).unwrap(),
            PixelRect { x: 445, y: 200, width: 711, height: 400 }
        );
        // at the left edge the grown window is shifted back inside
        let r = Rect::new(2, 0, 4, 4);
        assert_eq!(
            grid_rect_to_pixels(&r, 100, 1600, 900).unwrap(),
            PixelRect { x: 0, y: 200, width: 711, height: 400 }
        );
        // a tall strip is widened until it spans the whole image
        let r = Rect::new(0, 0, 9, 2);
        assert_eq!(
            grid_rect_to_pixels(&r, 100, 1600, 900).unwrap(),
            PixelRect { x: 0, y: 0, width: 1600, height: 900 }
        );
    }

    #[test]
    fn pixels_degenerate_rejected() {
        assert!(grid_rect_to_pixels(&Rect::new(5, 5, 1, 1), 10, 40, 40).is_err());
        assert!(grid_rect_to_pixels(&Rect::new(0, 0, 1, 1), 0, 40, 40).is_err());
    }
}
