//! Resizing frames to the network resolution and cutting sources into
//! overlapping 16-frame segments.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Frame, FrameSource};
use crate::types::{SegmentOrigin, SegmentSample, FRAME_SIDE, SEGMENT_LEN, SEGMENT_STRIDE};

/// How a frame of arbitrary size is brought to 112x112.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestPolicy {
    /// Bilinear resize of the whole frame (aspect ratio not preserved).
    #[default]
    Resize,
    /// Crop the centred square, then bilinear resize.
    CenterCrop,
}

/// Views an RGB image as a `(height, width, 3)` array.
pub fn frame_view(frame: &Frame) -> ArrayView3<'_, u8> {
    let (w, h) = frame.dimensions();
    ArrayView3::from_shape((h as usize, w as usize, 3), frame.as_raw()).expect("rgb buffer")
}

/// Bilinear resize with corner alignment: output corners sample the source
/// corners exactly. Works on `(height, width, channels)` arrays.
pub fn resize_bilinear(src: ArrayView3<'_, u8>, out_h: usize, out_w: usize) -> Result<Array3<u8>> {
    let (in_h, in_w, channels) = src.dim();
    if channels != 3 {
        return Err(Error::Channels(channels));
    }
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "cannot resize {in_h}x{in_w} to {out_h}x{out_w}"
        )));
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(src.to_owned());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let pos = if out == 1 {
                    (inp - 1) as f32 / 2.0
                } else {
                    o as f32 * (inp - 1) as f32 / (out - 1) as f32
                };
                let lo = (pos.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let rows = axis(out_h, in_h);
    let cols = axis(out_w, in_w);
    let mut out = Array3::<u8>::zeros((out_h, out_w, 3));
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..3 {
                let top = src[[y0, x0, c]] as f32 * (1.0 - fx) + src[[y0, x1, c]] as f32 * fx;
                let bottom = src[[y1, x0, c]] as f32 * (1.0 - fx) + src[[y1, x1, c]] as f32 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[[oy, ox, c]] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

/// Resizes one frame to 112x112x3.
pub fn resize_frame(frame: ArrayView3<'_, u8>) -> Result<Array3<u8>> {
    resize_bilinear(frame, FRAME_SIDE, FRAME_SIDE)
}

/// Brings a decoded frame to 112x112x3 under `policy`.
pub fn ingest(frame: &Frame, policy: IngestPolicy) -> Result<Array3<u8>> {
    let view = frame_view(frame);
    match policy {
        IngestPolicy::Resize => resize_frame(view),
        IngestPolicy::CenterCrop => {
            let (h, w, _) = view.dim();
            let side = h.min(w);
            let (y0, x0) = ((h - side) / 2, (w - side) / 2);
            resize_frame(view.slice(s![y0..y0 + side, x0..x0 + side, ..]))
        }
    }
}

/// Start frames of the segments covering a source of `frame_count` frames.
///
/// Starts are multiples of 8; a start is emitted when it is the first one or
/// when its window contains at least one frame not covered by the previous
/// window.
pub fn segment_starts(frame_count: usize) -> Vec<usize> {
    if frame_count == 0 {
        return Vec::new();
    }
    let mut starts = vec![0];
    let mut s = SEGMENT_STRIDE;
    while s + SEGMENT_STRIDE < frame_count {
        starts.push(s);
        s += SEGMENT_STRIDE;
    }
    starts
}

/// Streams the segments of a source in order, decoding each frame once.
pub struct Windower<'a> {
    source: &'a dyn FrameSource,
    policy: IngestPolicy,
    starts: std::vec::IntoIter<usize>,
    cache: Vec<(usize, Array3<u8>)>,
}

impl<'a> Windower<'a> {
    pub fn new(source: &'a dyn FrameSource, policy: IngestPolicy) -> Self {
        Self {
            starts: segment_starts(source.frame_count()).into_iter(),
            source,
            policy,
            cache: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.len() == 0
    }

    fn frame(&mut self, index: usize) -> Result<Array3<u8>> {
        if let Some((_, f)) = self.cache.iter().find(|(i, _)| *i == index) {
            return Ok(f.clone());
        }
        let f = ingest(&self.source.frame(index)?, self.policy)?;
        self.cache.push((index, f.clone()));
        Ok(f)
    }

    fn build(&mut self, start: usize) -> Result<SegmentSample> {
        let n = self.source.frame_count();
        let last = n - 1;
        self.cache.retain(|(i, _)| *i >= start);
        let mut frames = Array4::<u8>::zeros((SEGMENT_LEN, FRAME_SIDE, FRAME_SIDE, 3));
        for t in 0..SEGMENT_LEN {
            let f = self.frame((start + t).min(last))?;
            frames.index_axis_mut(Axis(0), t).assign(&f);
        }
        let pad_count = (start + SEGMENT_LEN).saturating_sub(n);
        Ok(SegmentSample {
            frames,
            label: None,
            origin: SegmentOrigin {
                sources: vec![self.source.uri().to_string()],
                starts: vec![start],
                schedule: None,
            },
            start_frame: start,
            pad_count,
        })
    }
}

impl Iterator for Windower<'_> {
    type Item = Result<SegmentSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.starts.next()?;
        Some(self.build(start))
    }
}

/// The single segment starting at `start`, padded past the last frame.
pub fn segment_at(source: &dyn FrameSource, start: usize, policy: IngestPolicy) -> Result<SegmentSample> {
    let n = source.frame_count();
    if start >= n {
        return Err(Error::FrameIndex { index: start, count: n });
    }
    let mut w = Windower::new(source, policy);
    w.build(start)
}

/// All segments of a source: length 16, overlap 8, tail padded by repeating
/// the final frame.
pub fn window_video(source: &dyn FrameSource, policy: IngestPolicy) -> Result<Vec<SegmentSample>> {
    Windower::new(source, policy).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::MemorySource;
    use image::{Rgb, RgbImage};

    /// Independent per-pixel reference: explicit source coordinate mapping
    /// evaluated in f64 with the four-neighbour weights written out.
    fn reference_pixel(src: &Array3<u8>, oy: usize, ox: usize, c: usize) -> u8 {
        let (h, w, _) = src.dim();
        let sy = oy as f64 * (h as f64 - 1.0) / 111.0;
        let sx = ox as f64 * (w as f64 - 1.0) / 111.0;
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
        let v = src[[y0, x0, c]] as f64 * (1.0 - dy) * (1.0 - dx)
            + src[[y0, x1, c]] as f64 * (1.0 - dy) * dx
            + src[[y1, x0, c]] as f64 * dy * (1.0 - dx)
            + src[[y1, x1, c]] as f64 * dy * dx;
        v.round() as u8
    }

    fn pattern(h: usize, w: usize) -> Array3<u8> {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 7 + x * 13 + c * 101) % 256) as u8)
    }

    #[test]
    fn identity_at_target_size() {
        let src = pattern(112, 112);
        assert_eq!(resize_frame(src.view()).unwrap(), src);
    }

    #[test]
    fn constant_colour_is_preserved() {
        let src = Array3::from_shape_fn((224, 224, 3), |(_, _, c)| [10u8, 200, 77][c]);
        let out = resize_frame(src.view()).unwrap();
        assert_eq!(out.dim(), (112, 112, 3));
        assert!(out.indexed_iter().all(|((_, _, c), &v)| v == [10u8, 200, 77][c]));
    }

    #[test]
    fn odd_size_matches_reference_and_keeps_corners() {
        let src = pattern(111, 113);
        let out = resize_frame(src.view()).unwrap();
        assert_eq!(out.dim(), (112, 112, 3));
        for &(y, x, sy, sx) in &[(0, 0, 0, 0), (0, 111, 0, 112), (111, 0, 110, 0), (111, 111, 110, 112)] {
            for c in 0..3 {
                assert_eq!(out[[y, x, c]], src[[sy, sx, c]]);
            }
        }
        let mut mismatches = 0;
        for ((y, x, c), &v) in out.indexed_iter() {
            let r = reference_pixel(&src, y, x, c);
            assert!((v as i32 - r as i32).abs() <= 1);
            mismatches += (v != r) as usize;
        }
        // f32 vs f64 evaluation may differ on exact .5 rounding ties only.
        assert!(mismatches < 50, "{mismatches} off-by-one pixels");
    }

    #[test]
    fn non_rgb_input_is_rejected() {
        let src = Array3::<u8>::zeros((10, 10, 4));
        assert!(matches!(resize_frame(src.view()), Err(Error::Channels(4))));
    }

    #[test]
    fn center_crop_takes_the_middle() {
        let mut img = RgbImage::from_pixel(336, 112, Rgb([255, 0, 0]));
        for y in 0..112 {
            for x in 112..224 {
                img.put_pixel(x, y, Rgb([0, 255, 0]));
            }
        }
        let out = ingest(&img, IngestPolicy::CenterCrop).unwrap();
        assert!(out.outer_iter().all(|row| row.outer_iter().all(|p| p[1] == 255)));
        let squashed = ingest(&img, IngestPolicy::Resize).unwrap();
        assert_eq!(squashed[[0, 0, 0]], 255);
    }

    #[test]
    fn segment_start_enumeration() {
        assert_eq!(segment_starts(32), vec![0, 8, 16]);
        assert_eq!(segment_starts(16), vec![0]);
        assert_eq!(segment_starts(20), vec![0, 8]);
        assert_eq!(segment_starts(5), vec![0]);
        assert_eq!(segment_starts(0), Vec::<usize>::new());
    }

    fn numbered_source(n: usize) -> MemorySource {
        let frames = (0..n)
            .map(|i| RgbImage::from_pixel(112, 112, Rgb([i as u8, 0, 0])))
            .collect();
        MemorySource::new("mem", frames).unwrap()
    }

    #[test]
    fn twenty_frames_pad_the_tail() {
        let src = numbered_source(20);
        let segs = window_video(&src, IngestPolicy::Resize).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].start_frame, 8);
        assert_eq!(segs[1].pad_count, 4);
        assert_eq!(segs[1].last_real_frame(), 19);
        let ids: Vec<u8> = (0..16).map(|t| segs[1].frames[[t, 0, 0, 0]]).collect();
        assert_eq!(&ids[..12], &(8..20).map(|i| i as u8).collect::<Vec<_>>()[..]);
        assert!(ids[12..].iter().all(|&v| v == 19));
    }

    #[test]
    fn consecutive_segments_share_eight_frames() {
        let src = numbered_source(48);
        let segs = window_video(&src, IngestPolicy::Resize).unwrap();
        assert_eq!(segs.len(), 5);
        for pair in segs.windows(2) {
            let a = pair[0].frames.slice(s![8.., .., .., ..]);
            let b = pair[1].frames.slice(s![..8, .., .., ..]);
            assert_eq!(a, b);
        }
    }
}
