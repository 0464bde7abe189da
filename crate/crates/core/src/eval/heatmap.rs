//! conv5 filter-response maps: one block per filter, time running down.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{Array2, Axis};

use crate::error::{IoContext, Result};
use crate::net::{segments_to_tensor, C3dSbd};
use crate::types::SegmentSample;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Per-filter `(time, height)` responses averaged over width.
    pub blocks: Vec<Array2<f32>>,
    pub image: GrayImage,
}

impl Heatmap {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.png_bytes()?).at(path)
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.image.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Renders post-ReLU conv5 responses of one segment. Each filter becomes a
/// `time x height` block (width averaged out) scaled up by `scale`; blocks
/// are tiled in a near-square grid with one-pixel gaps, and intensities are
/// normalized by the largest response over all filters.
pub fn filter_heatmap(segment: &SegmentSample, model: &C3dSbd<f32>, scale: usize) -> Result<Heatmap> {
    let x = segments_to_tensor::<f32>([&segment.frames])?;
    let conv5 = model.conv5_responses(x.view())?;
    let sample = conv5.index_axis(Axis(0), 0);
    let blocks: Vec<Array2<f32>> = sample
        .outer_iter()
        .map(|filter| filter.mean_axis(Axis(2)).expect("non-empty width"))
        .collect();
    let scale = scale.max(1);
    let (t, h) = blocks[0].dim();
    let cols = (blocks.len() as f64).sqrt().ceil() as usize;
    let rows = blocks.len().div_ceil(cols);
    let (bw, bh) = (h * scale, t * scale);
    let width = cols * (bw + 1) - 1;
    let height = rows * (bh + 1) - 1;
    let max = blocks.iter().flat_map(|b| b.iter()).fold(0.0f32, |m, &v| m.max(v));
    let norm = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut image = GrayImage::new(width as u32, height as u32);
    for (k, block) in blocks.iter().enumerate() {
        let (ox, oy) = ((k % cols) * (bw + 1), (k / cols) * (bh + 1));
        for ((ti, hi), &v) in block.indexed_iter() {
            let px = Luma([(v * norm).round().clamp(0.0, 255.0) as u8]);
            for dy in 0..scale {
                for dx in 0..scale {
                    image.put_pixel((ox + hi * scale + dx) as u32, (oy + ti * scale + dy) as u32, px);
                }
            }
        }
    }
    Ok(Heatmap { blocks, image })
}

/// Energy of row-to-row (time) changes relative to the total energy of the
/// maps; 0 for maps constant in time.
pub fn temporal_roughness(map: &Heatmap) -> f64 {
    let mut diff = 0.0;
    let mut total = 0.0;
    for b in &map.blocks {
        for t in 0..b.nrows() {
            for (k, &v) in b.row(t).iter().enumerate() {
                total += (v as f64).powi(2);
                if t > 0 {
                    diff += (v as f64 - b[[t - 1, k]] as f64).powi(2);
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        diff / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::C3dSbdConfig;
    use ndarray::Array4;

    fn segment(cut: Option<usize>) -> SegmentSample {
        let mut frames = Array4::<u8>::from_elem((16, 112, 112, 3), 60);
        for t in 0..16 {
            for y in 0..112 {
                for x in 0..112 {
                    let bright = cut.is_some_and(|c| t >= c);
                    let v = ((x * 2 + y) % 97) as u8 + if bright { 150 } else { 0 };
                    frames[[t, y, x, 0]] = v;
                    frames[[t, y, x, 1]] = v / 2;
                }
            }
        }
        SegmentSample::new(frames).unwrap()
    }

    #[test]
    fn sharp_is_rougher_than_constant_and_output_is_stable() {
        let model = C3dSbd::<f32>::new(C3dSbdConfig::reduced([4, 6, 6, 6, 9], [8, 8]), 5).unwrap();
        let flat = filter_heatmap(&segment(None), &model, 2).unwrap();
        let sharp = filter_heatmap(&segment(Some(8)), &model, 2).unwrap();
        assert_eq!(flat.blocks.len(), 9);
        assert_eq!(flat.blocks[0].dim(), (10, 14));
        assert_eq!(flat.image.dimensions(), (3 * 29 - 1, 3 * 21 - 1));
        assert!(temporal_roughness(&flat) < temporal_roughness(&sharp));
        let again = filter_heatmap(&segment(Some(8)), &model, 2).unwrap();
        assert_eq!(sharp.png_bytes().unwrap(), again.png_bytes().unwrap());
    }
}
