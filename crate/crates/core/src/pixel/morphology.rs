//! Binary morphology with a 3×3 square structuring element. Neighbors outside
//! the image are ignored rather than padded.

use super::ForegroundMask;

fn pick3(a: u8, b: u8, c: u8, keep_min: bool) -> u8 {
    if keep_min {
        a.min(b).min(c)
    } else {
        a.max(b).max(c)
    }
}

fn filter3(mask: &ForegroundMask, keep_min: bool) -> ForegroundMask {
    let (w, h) = (mask.width, mask.height);
    let src = mask.as_slice();
    let mut rows = vec![0u8; w * h];
    for (row, dst) in src.chunks_exact(w).zip(rows.chunks_exact_mut(w)) {
        if w == 1 {
            dst[0] = row[0];
            continue;
        }
        dst[0] = pick3(row[0], row[1], row[1], keep_min);
        dst[w - 1] = pick3(row[w - 1], row[w - 2], row[w - 2], keep_min);
        for (o, win) in dst[1..w - 1].iter_mut().zip(row.windows(3)) {
            *o = pick3(win[0], win[1], win[2], keep_min);
        }
    }
    let mut out = ForegroundMask::zeros(w, h, mask.frame);
    let dst = out.as_mut_slice();
    for y in 0..h {
        let cur = &rows[y * w..(y + 1) * w];
        let up = if y > 0 { &rows[(y - 1) * w..y * w] } else { cur };
        let down = if y + 1 < h { &rows[(y + 1) * w..(y + 2) * w] } else { cur };
        let o = &mut dst[y * w..(y + 1) * w];
        for x in 0..w {
            o[x] = pick3(up[x], cur[x], down[x], keep_min);
        }
    }
    out
}

pub fn erode(mask: &ForegroundMask) -> ForegroundMask {
    filter3(mask, true)
}

pub fn dilate(mask: &ForegroundMask) -> ForegroundMask {
    filter3(mask, false)
}

/// Opening followed by closing.
pub fn morphology_enhance(mask: &ForegroundMask) -> ForegroundMask {
    let opened = dilate(&erode(mask));
    erode(&dilate(&opened))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(mask: &ForegroundMask, keep_min: bool) -> ForegroundMask {
        let mut out = ForegroundMask::zeros(mask.width, mask.height, mask.frame);
        for y in 0..mask.height as isize {
            for x in 0..mask.width as isize {
                let mut vals = Vec::new();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < mask.width as isize && yy < mask.height as isize {
                            vals.push(mask.get(xx as usize, yy as usize));
                        }
                    }
                }
                let v = if keep_min { vals.iter().all(|&v| v) } else { vals.iter().any(|&v| v) };
                out.set(x as usize, y as usize, v);
            }
        }
        out
    }

    #[test]
    fn isolated_pixel_removed() {
        let mut m = ForegroundMask::zeros(9, 9, 0);
        m.set(4, 4, true);
        assert_eq!(morphology_enhance(&m).count(), 0);
    }

    #[test]
    fn interior_hole_filled() {
        let mut m = ForegroundMask::zeros(20, 20, 0);
        for y in 5..15 {
            for x in 5..15 {
                m.set(x, y, true);
            }
        }
        m.set(9, 9, false);
        let e = morphology_enhance(&m);
        assert!(e.get(9, 9));
        assert_eq!(e.count(), 100);
    }

    #[test]
    fn empty_stays_empty() {
        let m = ForegroundMask::zeros(7, 5, 3);
        assert_eq!(morphology_enhance(&m), m);
    }

    #[test]
    fn separable_filters_match_window_scan() {
        let mut seed = 77u32;
        let data: Vec<u8> = (0..31 * 17)
            .map(|_| {
                seed = seed.wrapping_mul(1_103_515_245).wrapping_add(12345);
                ((seed >> 16) % 3 != 0) as u8
            })
            .collect();
        let m = ForegroundMask::from_vec(31, 17, 0, data).unwrap();
        assert_eq!(erode(&m), naive(&m, true));
        assert_eq!(dilate(&m), naive(&m, false));
    }
}
