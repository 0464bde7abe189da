//! Frame access: image-sequence directories, Y4M files, and in-memory clips.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub type Frame = RgbImage;

/// Frame rate as a rational number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for Fps {
    fn default() -> Self {
        Fps::new(25, 1)
    }
}

/// Read-only, index-addressable access to decoded RGB frames.
///
/// Every frame returned has exactly [`FrameSource::dimensions`] and three
/// 8-bit channels. Indexing is deterministic.
pub trait FrameSource: Send + Sync {
    fn uri(&self) -> &str;
    fn frame_count(&self) -> usize;
    fn fps(&self) -> Fps;
    /// `(width, height)` in pixels.
    fn dimensions(&self) -> (u32, u32);
    fn frame(&self, index: usize) -> Result<Frame>;

    fn duration_secs(&self) -> f64 {
        self.frame_count() as f64 / self.fps().as_f64()
    }
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn uri(&self) -> &str {
        (**self).uri()
    }
    fn frame_count(&self) -> usize {
        (**self).frame_count()
    }
    fn fps(&self) -> Fps {
        (**self).fps()
    }
    fn dimensions(&self) -> (u32, u32) {
        (**self).dimensions()
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        (**self).frame(index)
    }
}

/// Opens a directory of numerically ordered images or a `.y4m` file.
pub fn open_frame_source(uri: &str) -> Result<Box<dyn FrameSource>> {
    let path = Path::new(uri);
    let meta = fs::metadata(path).map_err(|e| Error::Open {
        uri: uri.to_string(),
        reason: e.to_string(),
    })?;
    if meta.is_dir() {
        return Ok(Box::new(ImageDirSource::open(path)?));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("y4m") => Ok(Box::new(Y4mSource::open(path)?)),
        _ => Err(Error::Open {
            uri: uri.to_string(),
            reason: "unsupported container (expected an image directory or .y4m file)".into(),
        }),
    }
}

fn check_frame(uri: &str, frame: &Frame, dims: (u32, u32)) -> Result<()> {
    if frame.dimensions() != dims {
        return Err(Error::Shape(format!(
            "{uri}: frame is {:?}, source declares {:?}",
            frame.dimensions(),
            dims
        )));
    }
    Ok(())
}

/// A directory of images ordered by the number embedded in each file name.
#[derive(Debug, Clone)]
pub struct ImageDirSource {
    uri: String,
    files: Vec<PathBuf>,
    fps: Fps,
    dims: (u32, u32),
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn numeric_key(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

impl ImageDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let uri = dir.display().to_string();
        let entries = fs::read_dir(dir).map_err(|e| Error::Open {
            uri: uri.clone(),
            reason: e.to_string(),
        })?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.at(dir)?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)));
            if is_image && path.is_file() {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(Error::EmptySource(uri));
        }
        files.sort_by(|a, b| {
            (numeric_key(a), a.file_name()).cmp(&(numeric_key(b), b.file_name()))
        });
        let first = image::open(&files[0])?.to_rgb8();
        Ok(Self {
            uri,
            dims: first.dimensions(),
            files,
            fps: Fps::default(),
        })
    }

    pub fn with_fps(mut self, fps: Fps) -> Self {
        self.fps = fps;
        self
    }
}

impl FrameSource for ImageDirSource {
    fn uri(&self) -> &str {
        &self.uri
    }
    fn frame_count(&self) -> usize {
        self.files.len()
    }
    fn fps(&self) -> Fps {
        self.fps
    }
    fn dimensions(&self) -> (u32, u32) {
        self.dims
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        let path = self.files.get(index).ok_or(Error::FrameIndex {
            index,
            count: self.files.len(),
        })?;
        let frame = image::open(path)?.to_rgb8();
        check_frame(&self.uri, &frame, self.dims)?;
        Ok(frame)
    }
}

/// Writes frames as `00000.png`, `00001.png`, ... into `dir`.
pub fn write_image_dir(dir: &Path, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        frame.save(dir.join(format!("{i:05}.png")))?;
    }
    Ok(())
}

/// Clips held in memory, mostly for generated material and tests.
#[derive(Debug, Clone)]
pub struct MemorySource {
    uri: String,
    frames: Vec<Frame>,
    fps: Fps,
}

impl MemorySource {
    pub fn new(uri: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let uri = uri.into();
        let Some(first) = frames.first() else {
            return Err(Error::EmptySource(uri));
        };
        let dims = first.dimensions();
        for frame in &frames {
            check_frame(&uri, frame, dims)?;
        }
        Ok(Self {
            uri,
            frames,
            fps: Fps::default(),
        })
    }

    pub fn with_fps(mut self, fps: Fps) -> Self {
        self.fps = fps;
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

impl FrameSource for MemorySource {
    fn uri(&self) -> &str {
        &self.uri
    }
    fn frame_count(&self) -> usize {
        self.frames.len()
    }
    fn fps(&self) -> Fps {
        self.fps
    }
    fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        self.frames.get(index).cloned().ok_or(Error::FrameIndex {
            index,
            count: self.frames.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    fn plane_sizes(self, w: usize, h: usize) -> (usize, usize) {
        let luma = w * h;
        let chroma = match self {
            Chroma::C420 => w.div_ceil(2) * h.div_ceil(2),
            Chroma::C422 => w.div_ceil(2) * h,
            Chroma::C444 => w * h,
            Chroma::Mono => 0,
        };
        (luma, chroma)
    }
}

/// Uncompressed YUV4MPEG2 video.
///
/// Frame byte offsets are indexed once on open, so random access is a single
/// seek. Chroma is upsampled by replication and converted with BT.601
/// studio-range coefficients.
#[derive(Debug, Clone)]
pub struct Y4mSource {
    uri: String,
    path: PathBuf,
    width: usize,
    height: usize,
    fps: Fps,
    chroma: Chroma,
    offsets: Vec<u64>,
}

impl Y4mSource {
    pub fn open(path: &Path) -> Result<Self> {
        let uri = path.display().to_string();
        let open_err = |reason: String| Error::Open {
            uri: uri.clone(),
            reason,
        };
        let file = File::open(path).map_err(|e| open_err(e.to_string()))?;
        let file_len = file.metadata().at(path)?.len();
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header).at(path)?;
        let mut tokens = header.trim_end().split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(open_err("missing YUV4MPEG2 signature".into()));
        }
        let (mut width, mut height, mut fps, mut chroma) = (0usize, 0usize, Fps::default(), Chroma::C420);
        for token in tokens {
            let (tag, value) = token.split_at(1.min(token.len()));
            match tag {
                "W" => width = value.parse().map_err(|_| open_err(format!("bad width {value}")))?,
                "H" => height = value.parse().map_err(|_| open_err(format!("bad height {value}")))?,
                "F" => {
                    let (n, d) = value
                        .split_once(':')
                        .ok_or_else(|| open_err(format!("bad frame rate {value}")))?;
                    let num = n.parse().map_err(|_| open_err(format!("bad frame rate {value}")))?;
                    let den = d.parse().map_err(|_| open_err(format!("bad frame rate {value}")))?;
                    if num == 0 || den == 0 {
                        return Err(open_err(format!("non-positive frame rate {value}")));
                    }
                    fps = Fps::new(num, den);
                }
                "C" => {
                    chroma = if value.starts_with("420") {
                        Chroma::C420
                    } else if value.starts_with("422") {
                        Chroma::C422
                    } else if value.starts_with("444") && !value.contains("alpha") {
                        Chroma::C444
                    } else if value.starts_with("mono") {
                        Chroma::Mono
                    } else {
                        return Err(open_err(format!("unsupported colour space C{value}")));
                    }
                }
                _ => {}
            }
        }
        if width == 0 || height == 0 {
            return Err(open_err("missing frame dimensions".into()));
        }
        let (luma, chroma_len) = chroma.plane_sizes(width, height);
        let payload = (luma + 2 * chroma_len) as u64;
        let mut pos = header.len() as u64;
        let mut offsets = Vec::new();
        let mut line = Vec::new();
        while pos < file_len {
            line.clear();
            let n = reader.read_until(b'\n', &mut line).at(path)?;
            if n == 0 {
                break;
            }
            if !line.starts_with(b"FRAME") {
                return Err(open_err(format!("expected FRAME marker at byte {pos}")));
            }
            pos += n as u64;
            if pos + payload > file_len {
                return Err(open_err("truncated final frame".into()));
            }
            offsets.push(pos);
            pos += payload;
            reader.seek(SeekFrom::Start(pos)).at(path)?;
        }
        if offsets.is_empty() {
            return Err(Error::EmptySource(uri));
        }
        Ok(Self {
            uri,
            path: path.to_path_buf(),
            width,
            height,
            fps,
            chroma,
            offsets,
        })
    }
}

fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [u8; 3] {
    let c = 1.164_383 * (y as f32 - 16.0);
    let d = u as f32 - 128.0;
    let e = v as f32 - 128.0;
    let clamp = |x: f32| x.round().clamp(0.0, 255.0) as u8;
    [
        clamp(c + 1.596_027 * e),
        clamp(c - 0.391_762 * d - 0.812_968 * e),
        clamp(c + 2.017_232 * d),
    ]
}

fn rgb_to_yuv(p: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (p[0] as f32, p[1] as f32, p[2] as f32);
    let clamp = |x: f32| x.round().clamp(0.0, 255.0) as u8;
    [
        clamp(16.0 + 0.256_788 * r + 0.504_129 * g + 0.097_906 * b),
        clamp(128.0 - 0.148_223 * r - 0.290_993 * g + 0.439_216 * b),
        clamp(128.0 + 0.439_216 * r - 0.367_788 * g - 0.071_427 * b),
    ]
}

impl FrameSource for Y4mSource {
    fn uri(&self) -> &str {
        &self.uri
    }
    fn frame_count(&self) -> usize {
        self.offsets.len()
    }
    fn fps(&self) -> Fps {
        self.fps
    }
    fn dimensions(&self) -> (u32, u32) {
        (self.width as u32, self.height as u32)
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        let offset = *self.offsets.get(index).ok_or(Error::FrameIndex {
            index,
            count: self.offsets.len(),
        })?;
        let (w, h) = (self.width, self.height);
        let (luma, chroma_len) = self.chroma.plane_sizes(w, h);
        let mut buf = vec![0u8; luma + 2 * chroma_len];
        let mut file = File::open(&self.path).at(&self.path)?;
        file.seek(SeekFrom::Start(offset)).at(&self.path)?;
        file.read_exact(&mut buf).at(&self.path)?;
        let (y_plane, rest) = buf.split_at(luma);
        let (u_plane, v_plane) = rest.split_at(chroma_len);
        let cw = match self.chroma {
            Chroma::C444 => w,
            _ => w.div_ceil(2),
        };
        let mut frame = RgbImage::new(w as u32, h as u32);
        for row in 0..h {
            for col in 0..w {
                let y = y_plane[row * w + col];
                let (u, v) = match self.chroma {
                    Chroma::Mono => (128, 128),
                    Chroma::C444 => (u_plane[row * w + col], v_plane[row * w + col]),
                    Chroma::C422 => (u_plane[row * cw + col / 2], v_plane[row * cw + col / 2]),
                    Chroma::C420 => {
                        let i = (row / 2) * cw + col / 2;
                        (u_plane[i], v_plane[i])
                    }
                };
                frame.put_pixel(col as u32, row as u32, image::Rgb(yuv_to_rgb(y, u, v)));
            }
        }
        Ok(frame)
    }
}

/// Writes frames as a 4:4:4 Y4M stream.
pub fn write_y4m(path: &Path, frames: &[Frame], fps: Fps) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::EmptySource(path.display().to_string()));
    };
    let (w, h) = first.dimensions();
    let file = File::create(path).at(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "YUV4MPEG2 W{w} H{h} F{}:{} Ip A1:1 C444", fps.num, fps.den).at(path)?;
    let n = (w * h) as usize;
    let mut planes = vec![0u8; 3 * n];
    for frame in frames {
        check_frame(&path.display().to_string(), frame, (w, h))?;
        for (i, px) in frame.pixels().enumerate() {
            let [y, u, v] = rgb_to_yuv(px.0);
            planes[i] = y;
            planes[n + i] = u;
            planes[2 * n + i] = v;
        }
        out.write_all(b"FRAME\n").at(path)?;
        out.write_all(&planes).at(path)?;
    }
    out.flush().at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, v: u8) -> Frame {
        RgbImage::from_pixel(w, h, image::Rgb([v, v / 2, 255 - v]))
    }

    #[test]
    fn image_dir_counts_and_orders_numerically() {
        let dir = tempfile::tempdir().unwrap();
        for i in [0u8, 1, 2, 10, 11] {
            solid(4, 3, i).save(dir.path().join(format!("f{i}.png"))).unwrap();
        }
        let src = open_frame_source(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(src.frame_count(), 5);
        assert_eq!(src.dimensions(), (4, 3));
        let order: Vec<u8> = (0..5).map(|i| src.frame(i).unwrap().get_pixel(0, 0)[0]).collect();
        assert_eq!(order, vec![0, 1, 2, 10, 11]);
        assert!(matches!(src.frame(5), Err(Error::FrameIndex { .. })));
    }

    #[test]
    fn hundred_png_directory() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..100).map(|i| solid(2, 2, i as u8)).collect();
        write_image_dir(dir.path(), &frames).unwrap();
        let src = open_frame_source(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(src.frame_count(), 100);
    }

    #[test]
    fn empty_directory_is_an_empty_source() {
        let dir = tempfile::tempdir().unwrap();
        let err = open_frame_source(dir.path().to_str().unwrap()).err().unwrap();
        assert!(matches!(err, Error::EmptySource(_)));
    }

    #[test]
    fn unreadable_uri_is_an_open_error() {
        let err = open_frame_source("/definitely/not/here").err().unwrap();
        assert!(matches!(err, Error::Open { .. }));
    }

    #[test]
    fn y4m_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.y4m");
        let frames: Vec<Frame> = (0..7).map(|i| solid(6, 4, 30 * i as u8)).collect();
        write_y4m(&path, &frames, Fps::new(30000, 1001)).unwrap();
        let src = Y4mSource::open(&path).unwrap();
        assert_eq!(src.frame_count(), 7);
        assert_eq!(src.fps(), Fps::new(30000, 1001));
        for (i, orig) in frames.iter().enumerate() {
            let got = src.frame(i).unwrap();
            for (a, b) in orig.pixels().zip(got.pixels()) {
                for c in 0..3 {
                    assert!((a[c] as i32 - b[c] as i32).abs() <= 2, "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn y4m_420_is_decoded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.y4m");
        let mut bytes = b"YUV4MPEG2 W4 H2 F25:1 C420jpeg\n".to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(b"FRAME\n");
            bytes.extend_from_slice(&[126; 8]);
            bytes.extend_from_slice(&[128; 4]);
        }
        fs::write(&path, bytes).unwrap();
        let src = open_frame_source(path.to_str().unwrap()).unwrap();
        assert_eq!(src.frame_count(), 3);
        let px = src.frame(2).unwrap().get_pixel(3, 1).0;
        assert_eq!(px[0], px[1]);
        assert_eq!(px[1], px[2]);
    }

    #[test]
    fn memory_source_rejects_mixed_sizes() {
        let err = MemorySource::new("m", vec![solid(2, 2, 0), solid(3, 2, 0)]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(matches!(MemorySource::new("m", vec![]), Err(Error::EmptySource(_))));
    }
}
