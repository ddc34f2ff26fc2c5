//! Trajectory video rasterization.
//!
//! Frame t of a trajectory video draws the polyline through the *current and
//! future* projected points {p_t, ..., p_T}. Geometry is quantized to a
//! 1/16-pixel integer grid and a pixel belongs to a stroke iff its center
//! lies within line_width/2 of a drawn segment (inclusive), decided in exact
//! integer arithmetic. Segments touching an invisible endpoint are skipped;
//! every visible point also stamps a line_width disc, so an isolated visible
//! point still renders.

use crate::error::{Error, Result};
use crate::geometry::TrajectoryImage;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Subpixel quantization of the raster grid (positions snap to 1/16 px).
pub const SUBPIXEL: i64 = 16;

/// A T x H x W x C video with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    frame_rate: f64,
    data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoShape {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub frame_rate: f64,
}

impl VideoTensor {
    pub fn new(shape: VideoShape, data: Vec<f32>) -> Result<Self> {
        if shape.t < 1 {
            return Err(Error::invalid("video needs at least one frame"));
        }
        if data.len() != shape.t * shape.h * shape.w * shape.c {
            return Err(Error::invalid(format!(
                "video data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("video values must be finite and in [0, 1]"));
        }
        Ok(VideoTensor {
            t: shape.t,
            h: shape.h,
            w: shape.w,
            c: shape.c,
            frame_rate: shape.frame_rate,
            data,
        })
    }

    pub fn zeros(shape: VideoShape) -> Self {
        VideoTensor {
            t: shape.t,
            h: shape.h,
            w: shape.w,
            c: shape.c,
            frame_rate: shape.frame_rate,
            data: vec![0.0; shape.t * shape.h * shape.w * shape.c],
        }
    }

    pub fn shape(&self) -> VideoShape {
        VideoShape {
            t: self.t,
            h: self.h,
            w: self.w,
            c: self.c,
            frame_rate: self.frame_rate,
        }
    }

    pub fn frames(&self) -> usize {
        self.t
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Frame `t` (0-based here; raw storage view).
    pub fn frame(&self, t: usize) -> &[f32] {
        let sz = self.h * self.w * self.c;
        &self.data[t * sz..(t + 1) * sz]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let idx = ((t * self.h + y) * self.w + x) * self.c;
        &self.data[idx..idx + self.c]
    }

    /// Replicate a single channel into `c_new` channels (used to feed
    /// 1-channel trajectory videos through the 3-channel codec).
    pub fn broadcast_channels(&self, c_new: usize) -> Result<VideoTensor> {
        if self.c != 1 {
            return Err(Error::invalid(format!(
                "broadcast_channels expects a single-channel video, got {}",
                self.c
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() * c_new);
        for &v in &self.data {
            for _ in 0..c_new {
                data.push(v);
            }
        }
        Ok(VideoTensor {
            t: self.t,
            h: self.h,
            w: self.w,
            c: c_new,
            frame_rate: self.frame_rate,
            data,
        })
    }
}

/// Stroke parameters for trajectory rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterStyle {
    pub line_width: u32,
    pub intensity: f64,
}

impl RasterStyle {
    pub fn new(line_width: u32, intensity: f64) -> Result<Self> {
        if line_width < 1 {
            return Err(Error::invalid("line_width must be >= 1"));
        }
        if !(intensity > 0.0 && intensity <= 1.0) {
            return Err(Error::invalid("intensity must be in (0, 1]"));
        }
        Ok(RasterStyle {
            line_width,
            intensity,
        })
    }
}

impl Default for RasterStyle {
    /// Width 2 at 64-pixel resolution, full intensity.
    fn default() -> Self {
        RasterStyle {
            line_width: 2,
            intensity: 1.0,
        }
    }
}

fn quant(v: f64) -> i64 {
    (v * SUBPIXEL as f64).round() as i64
}

fn pixel_in_capsule(p: (i64, i64), a: (i64, i64), b: (i64, i64), r: i64) -> bool {
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let ap2 = (apx * apx + apy * apy) as i128;
    let l2 = (abx * abx + aby * aby) as i128;
    let r2 = (r * r) as i128;
    if l2 == 0 {
        return ap2 <= r2;
    }
    let s = (apx * abx + apy * aby) as i128;
    if s <= 0 {
        return ap2 <= r2;
    }
    if s >= l2 {
        let (bpx, bpy) = (p.0 - b.0, p.1 - b.1);
        return ((bpx * bpx + bpy * bpy) as i128) <= r2;
    }
    ap2 * l2 - s * s <= r2 * l2
}

/// Quantized draw primitives (discs are degenerate segments) for frame
/// `frame_index` of the plot rule {p_t, ..., p_T}.
fn frame_primitives(traj: &TrajectoryImage, frame_index: usize) -> Vec<((i64, i64), (i64, i64))> {
    let t0 = frame_index - 1;
    let n = traj.len();
    let mut prims = Vec::new();
    for i in t0..n {
        if !traj.visible[i] {
            continue;
        }
        let a = (quant(traj.points[i][0]), quant(traj.points[i][1]));
        prims.push((a, a));
        if i + 1 < n && traj.visible[i + 1] {
            let b = (quant(traj.points[i + 1][0]), quant(traj.points[i + 1][1]));
            prims.push((a, b));
        }
    }
    prims
}

/// Rasterize one frame (`frame_index` is 1-based, like the plot rule).
/// Returns a row-major H x W single-channel frame.
pub fn rasterize_frame(
    traj: &TrajectoryImage,
    frame_index: usize,
    height: usize,
    width: usize,
    style: &RasterStyle,
) -> Result<Vec<f32>> {
    if frame_index < 1 || frame_index > traj.len() {
        return Err(Error::FrameIndex {
            index: frame_index,
            len: traj.len(),
        });
    }
    let mut frame = vec![0.0f32; height * width];
    let r = style.line_width as i64 * SUBPIXEL / 2;
    let value = style.intensity as f32;
    for (a, b) in frame_primitives(traj, frame_index) {
        let (xmin, xmax) = (a.0.min(b.0) - r, a.0.max(b.0) + r);
        let (ymin, ymax) = (a.1.min(b.1) - r, a.1.max(b.1) + r);
        let px0 = (xmin.div_euclid(SUBPIXEL)).max(0) as usize;
        let px1 = (xmax.div_euclid(SUBPIXEL) + 1).min(width as i64 - 1).max(-1);
        let py0 = (ymin.div_euclid(SUBPIXEL)).max(0) as usize;
        let py1 = (ymax.div_euclid(SUBPIXEL) + 1).min(height as i64 - 1).max(-1);
        if px1 < 0 || py1 < 0 {
            continue;
        }
        for py in py0..=py1 as usize {
            for px in px0..=px1 as usize {
                if pixel_in_capsule((px as i64 * SUBPIXEL, py as i64 * SUBPIXEL), a, b, r) {
                    frame[py * width + px] = value;
                }
            }
        }
    }
    Ok(frame)
}

/// Rasterize all T frames of a trajectory into a single-channel video.
pub fn rasterize_trajectory_video(
    traj: &TrajectoryImage,
    height: usize,
    width: usize,
    style: &RasterStyle,
    frame_rate: f64,
) -> Result<VideoTensor> {
    if traj.is_empty() {
        return Err(Error::invalid("trajectory must have at least one point"));
    }
    let n = traj.len();
    let frames: Result<Vec<Vec<f32>>> = (1..=n)
        .into_par_iter()
        .map(|t| rasterize_frame(traj, t, height, width, style))
        .collect();
    let mut data = Vec::with_capacity(n * height * width);
    for f in frames? {
        data.extend_from_slice(&f);
    }
    VideoTensor::new(
        VideoShape {
            t: n,
            h: height,
            w: width,
            c: 1,
            frame_rate,
        },
        data,
    )
}

/// Element-wise maximum across per-vehicle trajectory videos. All inputs must
/// match `shape`; an empty list yields an all-zero video of that shape.
pub fn compose_other_vehicles(videos: &[VideoTensor], shape: VideoShape) -> Result<VideoTensor> {
    let mut out = VideoTensor::zeros(shape);
    for v in videos {
        if v.shape() != shape {
            return Err(Error::invalid(format!(
                "compose: video shape {:?} does not match requested {:?}",
                v.shape(),
                shape
            )));
        }
        for (o, &x) in out.data.iter_mut().zip(v.data.iter()) {
            *o = o.max(x);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Image-sequence export (PGM for 1 channel, PPM for 3)
// ---------------------------------------------------------------------------

/// Write a video as numbered binary PGM/PPM frames for human inspection.
pub fn write_image_sequence(video: &VideoTensor, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (ext, magic) = match video.channels() {
        1 => ("pgm", "P5"),
        3 => ("ppm", "P6"),
        c => {
            return Err(Error::invalid(format!(
                "image export supports 1 or 3 channels, got {c}"
            )))
        }
    };
    for t in 0..video.frames() {
        let path = dir.join(format!("frame_{t:03}.{ext}"));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "{magic}\n{} {}\n255\n", video.width(), video.height())?;
        let bytes: Vec<u8> = video
            .frame(t)
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        f.write_all(&bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::raster::frame_support_oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn traj(points: Vec<[f64; 2]>, visible: Vec<bool>) -> TrajectoryImage {
        TrajectoryImage { points, visible }
    }

    fn support(frame: &[f32]) -> Vec<bool> {
        frame.iter().map(|&v| v != 0.0).collect()
    }

    #[test]
    fn single_point_width_one_is_one_pixel() {
        let tr = traj(vec![[10.0, 10.0]], vec![true]);
        let style = RasterStyle::new(1, 1.0).unwrap();
        let frame = rasterize_frame(&tr, 1, 32, 32, &style).unwrap();
        let on: Vec<usize> = (0..frame.len()).filter(|&i| frame[i] != 0.0).collect();
        assert_eq!(on, vec![10 * 32 + 10]);
    }

    #[test]
    fn all_invisible_gives_zero_frame() {
        let tr = traj(
            vec![[f64::NAN, f64::NAN]; 4],
            vec![false; 4],
        );
        let frame = rasterize_frame(&tr, 1, 16, 16, &RasterStyle::default()).unwrap();
        assert!(frame.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_polyline_support_is_the_segment() {
        let tr = traj(
            vec![[10.0, 20.0], [20.0, 20.0], [30.0, 20.0]],
            vec![true; 3],
        );
        let style = RasterStyle::new(1, 1.0).unwrap();
        let frame = rasterize_frame(&tr, 1, 40, 40, &style).unwrap();
        let mut expect = vec![false; 40 * 40];
        for x in 10..=30 {
            expect[20 * 40 + x] = true;
        }
        assert_eq!(support(&frame), expect);
        assert_eq!(
            support(&frame),
            frame_support_oracle(&tr, 1, 40, 40, 1)
        );
    }

    #[test]
    fn frame_index_out_of_range_errors() {
        let tr = traj(vec![[1.0, 1.0]], vec![true]);
        assert!(matches!(
            rasterize_frame(&tr, 0, 8, 8, &RasterStyle::default()),
            Err(Error::FrameIndex { .. })
        ));
        assert!(matches!(
            rasterize_frame(&tr, 2, 8, 8, &RasterStyle::default()),
            Err(Error::FrameIndex { .. })
        ));
    }

    #[test]
    fn video_has_25_frames_for_25_points() {
        let pts: Vec<[f64; 2]> = (0..25).map(|i| [10.0 + i as f64, 30.0]).collect();
        let tr = traj(pts, vec![true; 25]);
        let vid =
            rasterize_trajectory_video(&tr, 64, 64, &RasterStyle::default(), 10.0).unwrap();
        assert_eq!(vid.frames(), 25);
        assert_eq!(vid.channels(), 1);
        assert_eq!(vid.frame_rate(), 10.0);
    }

    #[test]
    fn last_frame_is_a_bounded_disc() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [5.0 + 2.0 * i as f64, 17.3]).collect();
        let tr = traj(pts, vec![true; 10]);
        let w = 2u32;
        let style = RasterStyle::new(w, 1.0).unwrap();
        let vid = rasterize_trajectory_video(&tr, 64, 64, &style, 10.0).unwrap();
        let last = vid.frame(9);
        let count = last.iter().filter(|&&v| v != 0.0).count();
        let bound = (w * w) as f64 * std::f64::consts::PI / 4.0 + w as f64;
        assert!(count as f64 <= bound, "{count} > {bound}");
        assert!(count > 0);
    }

    #[test]
    fn support_counts_non_increasing_fully_visible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = 12;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(4.0..60.0), rng.random_range(4.0..60.0)])
                .collect();
            let tr = traj(pts, vec![true; n]);
            let vid =
                rasterize_trajectory_video(&tr, 64, 64, &RasterStyle::default(), 10.0).unwrap();
            let mut prev = usize::MAX;
            for t in 0..n {
                // Oracle recomputes each frame's support independently.
                let oracle = frame_support_oracle(&tr, t + 1, 64, 64, 2);
                let count = oracle.iter().filter(|&&b| b).count();
                assert_eq!(support(vid.frame(t)), oracle);
                assert!(count <= prev);
                prev = count;
            }
        }
    }

    #[test]
    fn compose_identity_and_union() {
        let shape = VideoShape {
            t: 2,
            h: 16,
            w: 16,
            c: 1,
            frame_rate: 10.0,
        };
        let t1 = traj(vec![[2.0, 2.0], [10.0, 2.0]], vec![true; 2]);
        let t2 = traj(vec![[2.0, 12.0], [10.0, 12.0]], vec![true; 2]);
        let style = RasterStyle::new(1, 1.0).unwrap();
        let v1 = rasterize_trajectory_video(&t1, 16, 16, &style, 10.0).unwrap();
        let v2 = rasterize_trajectory_video(&t2, 16, 16, &style, 10.0).unwrap();

        let one = compose_other_vehicles(std::slice::from_ref(&v1), shape).unwrap();
        assert_eq!(one, v1);

        let both = compose_other_vehicles(&[v1.clone(), v2.clone()], shape).unwrap();
        // Union of supports per frame, via sets.
        for t in 0..2 {
            let s1 = support(v1.frame(t));
            let s2 = support(v2.frame(t));
            let su: Vec<bool> = s1.iter().zip(&s2).map(|(&a, &b)| a || b).collect();
            assert_eq!(support(both.frame(t)), su);
        }
    }

    #[test]
    fn compose_empty_list_gives_zeros() {
        let shape = VideoShape {
            t: 25,
            h: 64,
            w: 64,
            c: 1,
            frame_rate: 10.0,
        };
        let v = compose_other_vehicles(&[], shape).unwrap();
        assert_eq!(v.shape(), shape);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn compose_rejects_shape_mismatch() {
        let shape = VideoShape {
            t: 2,
            h: 8,
            w: 8,
            c: 1,
            frame_rate: 10.0,
        };
        let other = VideoTensor::zeros(VideoShape { t: 3, ..shape });
        assert!(compose_other_vehicles(&[other], shape).is_err());
    }

    #[test]
    fn image_sequence_writes_pgm_headers() {
        let dir = tempfile::tempdir().unwrap();
        let tr = traj(vec![[4.0, 4.0], [8.0, 8.0]], vec![true; 2]);
        let vid =
            rasterize_trajectory_video(&tr, 16, 16, &RasterStyle::default(), 10.0).unwrap();
        write_image_sequence(&vid, dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join("frame_000.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(bytes.len(), b"P5\n16 16\n255\n".len() + 256);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Identical inputs give bit-identical frames; intensity scales values
        /// without changing support; support shrinks frame-to-frame.
        #[test]
        fn raster_properties(
            pts in proptest::collection::vec((0.0f64..48.0, 0.0f64..48.0), 2..10),
            vis in proptest::collection::vec(any::<bool>(), 10),
            width in 1u32..4,
        ) {
            let n = pts.len();
            let points: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let visible: Vec<bool> = (0..n).map(|i| vis[i]).collect();
            let points = points.iter().zip(&visible)
                .map(|(p, &v)| if v { *p } else { [f64::NAN, f64::NAN] })
                .collect();
            let tr = traj(points, visible.clone());
            let style = RasterStyle::new(width, 0.5).unwrap();
            let a = rasterize_trajectory_video(&tr, 48, 48, &style, 10.0).unwrap();
            let b = rasterize_trajectory_video(&tr, 48, 48, &style, 10.0).unwrap();
            prop_assert_eq!(&a, &b);

            let style2 = RasterStyle::new(width, 1.0).unwrap();
            let c = rasterize_trajectory_video(&tr, 48, 48, &style2, 10.0).unwrap();
            for (x, y) in a.data().iter().zip(c.data().iter()) {
                prop_assert_eq!(*x, 0.5 * *y);
                prop_assert_eq!(*x != 0.0, *y != 0.0);
            }

            if visible.iter().all(|&v| v) {
                for t in 1..n {
                    let prev = support(a.frame(t - 1));
                    let cur = support(a.frame(t));
                    for (p, q) in prev.iter().zip(&cur) {
                        prop_assert!(*p || !*q, "support grew at frame {}", t);
                    }
                }
            }
        }

        /// Max-composition is commutative, associative and idempotent.
        #[test]
        fn compose_algebra(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = VideoShape { t: 2, h: 8, w: 8, c: 1, frame_rate: 10.0 };
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let data: Vec<f32> = (0..128).map(|_| rng.random_range(0.0f32..1.0)).collect();
                VideoTensor::new(shape, data).unwrap()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = compose_other_vehicles(&[a.clone(), b.clone()], shape).unwrap();
            let ba = compose_other_vehicles(&[b.clone(), a.clone()], shape).unwrap();
            prop_assert_eq!(&ab, &ba);
            let ab_c = compose_other_vehicles(&[ab.clone(), c.clone()], shape).unwrap();
            let bc = compose_other_vehicles(&[b.clone(), c.clone()], shape).unwrap();
            let a_bc = compose_other_vehicles(&[a.clone(), bc], shape).unwrap();
            prop_assert_eq!(&ab_c, &a_bc);
            let aa = compose_other_vehicles(&[a.clone(), a.clone()], shape).unwrap();
            prop_assert_eq!(&aa, &a);
        }
    }
}
