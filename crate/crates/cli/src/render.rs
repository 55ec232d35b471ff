//! Frame grids, attention boxes and animations.

use image::{Rgb, RgbImage};

pub const BACKGROUND: Rgb<u8> = Rgb([40, 40, 40]);
const GAP: u32 = 2;

/// Distinct box colours, one per component.
pub const PALETTE: [Rgb<u8>; 6] = [
    Rgb([230, 60, 60]),
    Rgb([60, 200, 80]),
    Rgb([70, 120, 240]),
    Rgb([240, 200, 40]),
    Rgb([200, 80, 220]),
    Rgb([40, 210, 210]),
];

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grid of square grayscale frames; `rows[r][c]` is a `size * size` frame
/// and short rows leave their remaining cells as background.
pub fn grid(rows: &[Vec<Vec<f32>>], size: usize, scale: u32) -> RgbImage {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let tile = size as u32 * scale;
    let w = cols * tile + cols.saturating_sub(1) * GAP;
    let h = rows.len() as u32 * tile + (rows.len() as u32).saturating_sub(1) * GAP;
    let mut img = RgbImage::from_pixel(w.max(1), h.max(1), BACKGROUND);
    for (r, row) in rows.iter().enumerate() {
        for (c, frame) in row.iter().enumerate() {
            let (x0, y0) = cell_origin(r, c, size, scale);
            for y in 0..tile {
                for x in 0..tile {
                    let v = to_u8(frame[(y / scale) as usize * size + (x / scale) as usize]);
                    img.put_pixel(x0 + x, y0 + y, Rgb([v, v, v]));
                }
            }
        }
    }
    img
}

/// Top-left pixel of cell `(row, col)`.
pub fn cell_origin(row: usize, col: usize, size: usize, scale: u32) -> (u32, u32) {
    let step = size as u32 * scale + GAP;
    (col as u32 * step, row as u32 * step)
}

/// Pixel rectangle `(x0, y0, x1, y1)` of the window of pose `(s, tx, ty)`
/// in a `size`-pixel frame: center `(t + 1) / 2 * size`, half-width
/// `size / (2 s)`.
pub fn window_rect(pose: [f64; 3], size: usize) -> (f64, f64, f64, f64) {
    let n = size as f64;
    let half = n / (2.0 * pose[0]);
    let cx = (pose[1] + 1.0) / 2.0 * n;
    let cy = (pose[2] + 1.0) / 2.0 * n;
    (cx - half, cy - half, cx + half, cy + half)
}

/// Outline of `pose`'s window drawn into the cell at `origin`, clipped to
/// the cell.
pub fn draw_window(img: &mut RgbImage, origin: (u32, u32), size: usize, scale: u32, pose: [f64; 3], color: Rgb<u8>) {
    let tile = (size as u32 * scale) as i64;
    let (x0, y0, x1, y1) = window_rect(pose, size);
    let px = |v: f64| (v * scale as f64).round() as i64;
    let (x0, y0, x1, y1) = (px(x0), px(y0), px(x1) - 1, px(y1) - 1);
    let mut put = |x: i64, y: i64| {
        if (0..tile).contains(&x) && (0..tile).contains(&y) {
            img.put_pixel(origin.0 + x as u32, origin.1 + y as u32, color);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_half_window() {
        assert_eq!(window_rect([2.0, 0.0, 0.0], 64), (16.0, 16.0, 48.0, 48.0));
        assert_eq!(window_rect([1.0, -1.0, 1.0], 64), (-32.0, 32.0, 32.0, 96.0));
    }

    #[test]
    fn grid_layout_and_values() {
        let f = vec![0.0, 1.0, 0.5, 0.25];
        let img = grid(&[vec![f.clone(), f.clone()], vec![f]], 2, 1);
        assert_eq!(img.dimensions(), (2 * 2 + GAP, 2 * 2 + GAP));
        assert_eq!(img.get_pixel(1, 0), &Rgb([255, 255, 255]));
        let (x, y) = cell_origin(1, 1, 2, 1);
        assert_eq!(img.get_pixel(x, y), &BACKGROUND);
        let (x, y) = cell_origin(1, 0, 2, 1);
        assert_eq!(img.get_pixel(x, y + 1), &Rgb([128, 128, 128]));
    }

    #[test]
    fn boxes_are_clipped_to_their_cell() {
        let mut img = grid(&[vec![vec![0.0; 16], vec![0.0; 16]]], 4, 2);
        draw_window(&mut img, cell_origin(0, 0, 4, 2), 4, 2, [0.5, 0.0, 0.0], PALETTE[0]);
        let (x, _) = cell_origin(0, 1, 4, 2);
        for y in 0..8 {
            assert_eq!(img.get_pixel(x, y), &Rgb([0, 0, 0]));
        }
    }
}
