//! Top-down warping, regions of interest and pixel-to-speed calibration.
//!
//! Continuous image coordinates put the center of pixel `(x, y)` at
//! `(x + 0.5, y + 0.5)`; a continuous point belongs to pixel `(floor(x), floor(y))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Meters per second to miles per hour.
pub const MPS_TO_MPH: f64 = 2.23694;

const SINGULAR_EPS: f64 = 1e-12;

/// A nonsingular 3x3 projective transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let h = Homography { m };
        let det = h.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_EPS {
            return Err(Error::SingularHomography(det));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self> {
        Homography::new([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.determinant();
        if det.abs() < SINGULAR_EPS {
            return Err(Error::SingularHomography(det));
        }
        let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
            [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
            [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                inv[r][k] = adj[r][k] / det;
            }
        }
        Homography::new(inv)
    }

    pub fn compose(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|j| self.m[r][j] * other.m[j][k]).sum();
            }
        }
        Homography { m: out }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ]
    }

    /// Solves the 8-DOF system mapping four source points onto four destination points.
    pub fn from_correspondences(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let [x, y] = src[i];
            let [u, v] = dst[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        // Gauss-Jordan with partial pivoting on the augmented 8x9 system.
        for col in 0..8 {
            let pivot = (col..8)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if a[pivot][col].abs() < SINGULAR_EPS {
                return Err(Error::SingularHomography(0.0));
            }
            a.swap(col, pivot);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            for row in 0..8 {
                if row != col {
                    let f = a[row][col];
                    if f != 0.0 {
                        for k in col..9 {
                            a[row][k] -= f * a[col][k];
                        }
                    }
                }
            }
        }
        let h: Vec<f64> = (0..8).map(|r| a[r][8]).collect();
        Homography::new([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    }

    /// Maps four road corners (clockwise from top-left) onto an axis-aligned
    /// `width` x `height` rectangle.
    pub fn from_road_corners(corners: &[[f64; 2]; 4], width: f64, height: f64) -> Result<Homography> {
        let rect = [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]];
        Homography::from_correspondences(corners, &rect)
    }
}

/// Inverse-mapped nearest-neighbor warp into an `out_w` x `out_h` frame.
/// Output pixels whose preimage falls outside the source are zero.
pub fn warp_topdown(frame: &Frame, h: &Homography, out_w: usize, out_h: usize) -> Result<Frame> {
    let inv = h.inverse()?;
    let ch = frame.channels();
    let (sw, sh) = (frame.width() as f64, frame.height() as f64);
    let mut data = vec![0u8; out_w * out_h * ch];
    let src = frame.data();
    let m = inv.matrix();
    if m[0][1] == 0.0 && m[1][0] == 0.0 && m[2][0] == 0.0 && m[2][1] == 0.0 {
        // axis-aligned: the source column depends only on x and the row only on y
        let map = |n: usize, f: &dyn Fn(f64) -> f64, limit: f64| -> Vec<Option<usize>> {
            (0..n)
                .map(|o| {
                    let v = f(o as f64 + 0.5);
                    (v >= 0.0 && v < limit).then(|| v.floor() as usize)
                })
                .collect()
        };
        let cols = map(out_w, &|x| inv.apply([x, 0.5])[0], sw);
        let rows = map(out_h, &|y| inv.apply([0.5, y])[1], sh);
        for (y, iy) in rows.iter().enumerate() {
            let Some(iy) = *iy else { continue };
            let src_row = &src[iy * frame.width() * ch..(iy + 1) * frame.width() * ch];
            let dst_row = &mut data[y * out_w * ch..(y + 1) * out_w * ch];
            for (x, ix) in cols.iter().enumerate() {
                if let Some(ix) = *ix {
                    dst_row[x * ch..(x + 1) * ch].copy_from_slice(&src_row[ix * ch..(ix + 1) * ch]);
                }
            }
        }
        return Frame::new(frame.index, frame.timestamp(), out_w, out_h, ch, data);
    }
    Ok(warp_general(frame, &inv, out_w, out_h))
}

fn warp_general(frame: &Frame, inv: &Homography, out_w: usize, out_h: usize) -> Frame {
    let ch = frame.channels();
    let (sw, sh) = (frame.width() as f64, frame.height() as f64);
    let mut data = vec![0u8; out_w * out_h * ch];
    let src = frame.data();
    for y in 0..out_h {
        for x in 0..out_w {
            let [sx, sy] = inv.apply([x as f64 + 0.5, y as f64 + 0.5]);
            if !(sx >= 0.0 && sy >= 0.0 && sx < sw && sy < sh) {
                continue;
            }
            let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
            let s = (iy * frame.width() + ix) * ch;
            let d = (y * out_w + x) * ch;
            data[d..d + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    Frame::new(frame.index, frame.timestamp(), out_w, out_h, ch, data).expect("valid dimensions")
}

/// Physical calibration of the warped view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub meters_per_pixel: f64,
    /// Two horizontal referential lines, as continuous y coordinates in warped pixels.
    pub lines: [f64; 2],
    /// Unit conversion applied to m/s.
    pub unit: f64,
    /// Seconds between adjacent frames.
    pub frame_interval: f64,
}

impl Calibration {
    pub fn new(meters_per_pixel: f64, lines: [f64; 2], fps: f64) -> Result<Self> {
        if !(meters_per_pixel > 0.0 && meters_per_pixel.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "meters_per_pixel must be positive, got {meters_per_pixel}"
            )));
        }
        if lines[0] == lines[1] {
            return Err(Error::InvalidArgument("referential lines must be distinct".into()));
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        Ok(Calibration {
            meters_per_pixel,
            lines,
            unit: MPS_TO_MPH,
            frame_interval: 1.0 / fps,
        })
    }

    /// Referential lines given in world meters, converted to warped pixel rows.
    pub fn from_world_lines(meters_per_pixel: f64, lines_m: [f64; 2], fps: f64) -> Result<Self> {
        Calibration::new(
            meters_per_pixel,
            [lines_m[0] / meters_per_pixel, lines_m[1] / meters_per_pixel],
            fps,
        )
    }

    pub fn with_frame_interval(mut self, dt: f64) -> Self {
        self.frame_interval = dt;
        self
    }
}

/// Converts a per-frame pixel displacement into mph.
pub fn pixels_to_mph(displacement: f64, calib: &Calibration) -> f64 {
    displacement * calib.meters_per_pixel / calib.frame_interval * calib.unit
}

/// A simple polygon region of interest in warped pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    vertices: Vec<[f64; 2]>,
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        let v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if v.abs() < 1e-12 {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    };
    let on_seg = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        c[0] >= a[0].min(b[0]) && c[0] <= a[0].max(b[0]) && c[1] >= a[1].min(b[1]) && c[1] <= a[1].max(b[1])
    };
    let (o1, o2, o3, o4) = (orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2));
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_seg(p1, p2, q1))
        || (o2 == 0 && on_seg(p1, p2, q2))
        || (o3 == 0 && on_seg(q1, q2, p1))
        || (o4 == 0 && on_seg(q1, q2, p2))
}

impl Roi {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!("need at least 3 vertices, got {}", vertices.len())));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if a == b {
                return Err(Error::InvalidPolygon(format!("repeated vertex at {i}")));
            }
            for j in i + 1..n {
                // skip adjacent edges
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
                }
            }
        }
        Ok(Roi { vertices })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Roi::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn scaled(&self, factor: f64) -> Roi {
        Roi {
            vertices: self.vertices.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
        }
    }

    pub fn centroid(&self) -> [f64; 2] {
        // area-weighted polygon centroid
        let n = self.vertices.len();
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            a += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        [cx / (3.0 * a), cy / (3.0 * a)]
    }

    /// Even-odd membership; points on the boundary count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cross.abs() < 1e-9
                && p[0] >= a[0].min(b[0]) - 1e-12
                && p[0] <= a[0].max(b[0]) + 1e-12
                && p[1] >= a[1].min(b[1]) - 1e-12
                && p[1] <= a[1].max(b[1]) + 1e-12
            {
                return true;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Membership of every pixel center on a `width` x `height` grid.
    pub fn rasterize(&self, width: usize, height: usize) -> RoiMask {
        let mut inside = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                inside[y * width + x] = self.contains([x as f64 + 0.5, y as f64 + 0.5]);
            }
        }
        RoiMask { width, height, inside }
    }
}

/// Free function form of [`Roi::contains`].
pub fn point_in_roi(p: [f64; 2], roi: &Roi) -> bool {
    roi.contains(p)
}

/// Pixel-level ROI membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub width: usize,
    pub height: usize,
    inside: Vec<bool>,
}

impl RoiMask {
    pub fn full(width: usize, height: usize) -> Self {
        RoiMask {
            width,
            height,
            inside: vec![true; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.inside[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_warp_is_identity() {
        let data: Vec<u8> = (0..20 * 10 * 3).map(|i| (i % 256) as u8).collect();
        let f = Frame::new(0, 0.0, 20, 10, 3, data).unwrap();
        let g = warp_topdown(&f, &Homography::identity(), 20, 10).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn scale_warp_replicates_pixels() {
        let data: Vec<u8> = (0..8 * 6).map(|i| (i * 5) as u8).collect();
        let f = Frame::new(0, 0.0, 8, 6, 1, data).unwrap();
        let h = Homography::scale(2.0, 2.0).unwrap();
        let g = warp_topdown(&f, &h, 16, 12).unwrap();
        for j in 0..6 {
            for i in 0..8 {
                assert_eq!(g.pixel(2 * i, 2 * j), f.pixel(i, j));
            }
        }
    }

    #[test]
    fn singular_rejected() {
        assert!(matches!(
            Homography::new([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(Error::SingularHomography(_))
        ));
        let collinear = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(Homography::from_road_corners(&collinear, 10.0, 10.0).is_err());
    }

    #[test]
    fn projective_corners_hit_rectangle() {
        // closed-form projective map applied to the unit square
        let known = Homography::new([[1.2, 0.3, 5.0], [-0.1, 0.9, 2.0], [0.001, 0.002, 1.0]]).unwrap();
        let unit = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let corners: [[f64; 2]; 4] = unit.map(|p| known.apply(p));
        // the corners map back onto a 200x100 rectangle
        let h = Homography::from_road_corners(&corners, 200.0, 100.0).unwrap();
        let rect = [[0.0, 0.0], [200.0, 0.0], [200.0, 100.0], [0.0, 100.0]];
        for (c, r) in corners.iter().zip(rect) {
            let p = h.apply(*c);
            assert!((p[0] - r[0]).abs() < 0.5 && (p[1] - r[1]).abs() < 0.5, "{p:?} vs {r:?}");
        }
        // and the solve recovers `known` up to scale from unit-square correspondences
        let solved = Homography::from_correspondences(&unit, &corners).unwrap();
        for p in [[0.3, 0.7], [0.9, 0.1]] {
            let (a, b) = (solved.apply(p), known.apply(p));
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_aligned_path_matches_general() {
        let (w, h) = (23, 17);
        let data: Vec<u8> = (0..w * h * 3).map(|i| ((i * 53) % 256) as u8).collect();
        let f = Frame::new(0, 0.0, w, h, 3, data).unwrap();
        for m in [
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [[0.5, 0.0, 2.0], [0.0, 2.0, -3.0], [0.0, 0.0, 1.0]],
            [[1.3, 0.0, -1.5], [0.0, 0.7, 4.2], [0.0, 0.0, 1.1]],
        ] {
            let hom = Homography::new(m).unwrap();
            let fast = warp_topdown(&f, &hom, 30, 12).unwrap();
            assert_eq!(fast, warp_general(&f, &hom.inverse().unwrap(), 30, 12));
        }
    }

    #[test]
    fn warp_round_trip_interior() {
        let (w, h) = (40, 30);
        let data: Vec<u8> = (0..w * h).map(|i| ((i * 37) % 251) as u8).collect();
        let f = Frame::new(0, 0.0, w, h, 1, data).unwrap();
        let hom = Homography::new([[1.0, 0.05, 1.0], [0.02, 1.0, -0.5], [0.0005, 0.0002, 1.0]]).unwrap();
        let warped = warp_topdown(&f, &hom, w, h).unwrap();
        let back = warp_topdown(&warped, &hom.inverse().unwrap(), w, h).unwrap();
        // each interior output pixel comes from within one pixel of its own position
        let mut exact = 0;
        for y in 5..h - 5 {
            for x in 5..w - 5 {
                let v = back.pixel(x, y)[0];
                let near = (-1i64..=1).any(|dy| {
                    (-1i64..=1).any(|dx| f.pixel((x as i64 + dx) as usize, (y as i64 + dy) as usize)[0] == v)
                });
                assert!(near, "pixel ({x},{y}) moved more than one pixel");
                exact += (v == f.pixel(x, y)[0]) as usize;
            }
        }
        assert!(exact > (w - 10) * (h - 10) / 2);
    }

    #[test]
    fn mph_conversion() {
        let c = Calibration::new(0.1, [10.0, 100.0], 15.0).unwrap();
        assert_eq!(pixels_to_mph(0.0, &c), 0.0);
        let v = pixels_to_mph(2.0, &c);
        assert!((v - 6.71082).abs() < 1e-4, "{v}");
        let c2 = Calibration::new(0.2, [10.0, 100.0], 15.0).unwrap();
        assert_eq!(pixels_to_mph(2.0, &c2), 2.0 * v);
        let slow = c.with_frame_interval(0.1);
        assert!(pixels_to_mph(2.0, &slow) < v);
        assert!(Calibration::new(0.0, [1.0, 2.0], 15.0).is_err());
        assert!(Calibration::new(0.1, [1.0, 1.0], 15.0).is_err());
    }

    #[test]
    fn roi_membership() {
        let roi = Roi::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]).unwrap();
        assert!(point_in_roi(roi.centroid(), &roi));
        assert!(roi.contains([10.0, 5.0]));
        assert!(roi.contains([0.0, 0.0]));
        assert!(!roi.contains([10.5, 5.0]));
        assert!(!roi.contains([-20.0, 50.0]));
        assert!(Roi::new(vec![[0.0, 0.0], [1.0, 1.0]]).is_err());
        // bow-tie
        assert!(Roi::new(vec![[0.0, 0.0], [10.0, 10.0], [10.0, 0.0], [0.0, 10.0]]).is_err());
    }
}
