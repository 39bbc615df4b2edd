//! Raster inputs: whole-image loading and forward-only row streaming.
//!
//! Only 8-bit PNG and baseline TIFF are accepted. Every reader normalizes to
//! interleaved RGB8; alpha is dropped and gray is replicated.

use std::fs::File;
use std::io::{BufReader, Read, Seek};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CoreImage, StainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Gray,
    GrayAlpha,
    Rgb,
    Rgba,
}

impl Layout {
    fn samples(self) -> usize {
        match self {
            Layout::Gray => 1,
            Layout::GrayAlpha => 2,
            Layout::Rgb => 3,
            Layout::Rgba => 4,
        }
    }

    fn to_rgb(self, src: &[u8], dst: &mut Vec<u8>) {
        let n = self.samples();
        for px in src.chunks_exact(n) {
            match self {
                Layout::Gray | Layout::GrayAlpha => dst.extend_from_slice(&[px[0], px[0], px[0]]),
                Layout::Rgb | Layout::Rgba => dst.extend_from_slice(&px[..3]),
            }
        }
    }
}

/// A raster file on disk with its declared resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSource {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub mpp: Option<f64>,
    pub stain_state: StainState,
}

impl RasterSource {
    /// Probe the header for dimensions without decoding pixel data.
    pub fn open(path: impl AsRef<Path>, mpp: Option<f64>, stain_state: StainState) -> Result<Self> {
        let path = path.as_ref();
        let rows = open_rows(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            width: rows.width(),
            height: rows.height(),
            mpp,
            stain_state,
        })
    }

    pub fn rows(&self) -> Result<Box<dyn RowSource>> {
        let rows = open_rows(&self.path)?;
        if rows.width() != self.width || rows.height() != self.height {
            return Err(Error::Format(format!(
                "{} is {}x{}, declared {}x{}",
                self.path.display(),
                rows.width(),
                rows.height(),
                self.width,
                self.height
            )));
        }
        Ok(rows)
    }
}

/// Forward-only reader that yields RGB8 rows top to bottom.
pub trait RowSource {
    fn width(&self) -> u32;
    fn height(&self) -> u32;

    /// Append the next row (`3 * width` bytes) to `out`.
    fn next_row(&mut self, out: &mut Vec<u8>) -> Result<()>;

    fn skip_rows(&mut self, count: u32) -> Result<()> {
        let mut scratch = Vec::with_capacity(self.width() as usize * 3);
        for _ in 0..count {
            scratch.clear();
            self.next_row(&mut scratch)?;
        }
        Ok(())
    }
}

/// Rows of an image already in memory.
pub struct MemoryRows<'a> {
    img: &'a RgbImage,
    cursor: u32,
}

impl<'a> MemoryRows<'a> {
    pub fn new(img: &'a RgbImage) -> Self {
        Self { img, cursor: 0 }
    }
}

impl RowSource for MemoryRows<'_> {
    fn width(&self) -> u32 {
        self.img.width()
    }

    fn height(&self) -> u32 {
        self.img.height()
    }

    fn next_row(&mut self, out: &mut Vec<u8>) -> Result<()> {
        if self.cursor >= self.img.height() {
            return Err(Error::Decode("read past last row".into()));
        }
        let stride = self.img.width() as usize * 3;
        let start = self.cursor as usize * stride;
        out.extend_from_slice(&self.img.as_raw()[start..start + stride]);
        self.cursor += 1;
        Ok(())
    }

    fn skip_rows(&mut self, count: u32) -> Result<()> {
        self.cursor = self.cursor.saturating_add(count);
        Ok(())
    }
}

/// Fallback for encodings that cannot be streamed (interlaced PNG, tiled or
/// planar TIFF).
struct OwnedRows {
    img: RgbImage,
    cursor: u32,
}

impl RowSource for OwnedRows {
    fn width(&self) -> u32 {
        self.img.width()
    }

    fn height(&self) -> u32 {
        self.img.height()
    }

    fn next_row(&mut self, out: &mut Vec<u8>) -> Result<()> {
        MemoryRows {
            img: &self.img,
            cursor: self.cursor,
        }
        .next_row(out)?;
        self.cursor += 1;
        Ok(())
    }
}

struct PngRows {
    reader: png::Reader<BufReader<File>>,
    layout: Layout,
    width: u32,
    height: u32,
}

impl RowSource for PngRows {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn next_row(&mut self, out: &mut Vec<u8>) -> Result<()> {
        let row = self
            .reader
            .next_row()
            .map_err(|e| Error::Decode(e.to_string()))?
            .ok_or_else(|| Error::Decode("PNG ended early".into()))?;
        self.layout.to_rgb(row.data(), out);
        Ok(())
    }
}

struct TiffRows<R: Read + Seek> {
    decoder: tiff::decoder::Decoder<R>,
    layout: Layout,
    width: u32,
    height: u32,
    rows_per_strip: u32,
    strip: Vec<u8>,
    strip_index: u32,
    row_in_strip: u32,
    strip_rows: u32,
}

impl<R: Read + Seek> RowSource for TiffRows<R> {
    fn width(&self) -> u32 {
        self.width
    }

    fn height(&self) -> u32 {
        self.height
    }

    fn next_row(&mut self, out: &mut Vec<u8>) -> Result<()> {
        if self.row_in_strip >= self.strip_rows {
            let chunk = self
                .decoder
                .read_chunk(self.strip_index)
                .map_err(|e| Error::Decode(e.to_string()))?;
            self.strip = match chunk {
                tiff::decoder::DecodingResult::U8(v) => v,
                _ => return Err(Error::Format("TIFF strip is not 8-bit".into())),
            };
            let remaining = self.height - self.strip_index * self.rows_per_strip;
            self.strip_rows = remaining.min(self.rows_per_strip);
            self.strip_index += 1;
            self.row_in_strip = 0;
        }
        let stride = self.width as usize * self.layout.samples();
        let start = self.row_in_strip as usize * stride;
        let row = self
            .strip
            .get(start..start + stride)
            .ok_or_else(|| Error::Decode("TIFF strip shorter than declared".into()))?;
        self.layout.to_rgb(row, out);
        self.row_in_strip += 1;
        Ok(())
    }
}

fn sniff(path: &Path) -> Result<ImageFormat> {
    let mut head = [0u8; 8];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    match image::guess_format(&head[..n]) {
        Ok(fmt @ (ImageFormat::Png | ImageFormat::Tiff)) => Ok(fmt),
        Ok(other) => Err(Error::Format(format!(
            "{}: {other:?} is not supported (PNG or TIFF only)",
            path.display()
        ))),
        Err(_) => Err(Error::Format(format!("{}: unrecognized image format", path.display()))),
    }
}

/// Open a streaming row reader for a PNG or TIFF file.
pub fn open_rows(path: &Path) -> Result<Box<dyn RowSource>> {
    match sniff(path)? {
        ImageFormat::Png => open_png(path),
        _ => open_tiff(path),
    }
}

fn open_png(path: &Path) -> Result<Box<dyn RowSource>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: {depth:?}-bit PNG, only 8-bit is supported",
            path.display()
        )));
    }
    let layout = match color {
        png::ColorType::Grayscale => Layout::Gray,
        png::ColorType::GrayscaleAlpha => Layout::GrayAlpha,
        png::ColorType::Rgb => Layout::Rgb,
        png::ColorType::Rgba => Layout::Rgba,
        png::ColorType::Indexed => return Err(Error::Format("unexpanded palette PNG".into())),
    };
    let info = reader.info();
    let (width, height, interlaced) = (info.width, info.height, info.interlaced);
    if interlaced {
        let img = load_rgb(path)?;
        return Ok(Box::new(OwnedRows { img, cursor: 0 }));
    }
    Ok(Box::new(PngRows {
        reader,
        layout,
        width,
        height,
    }))
}

fn open_tiff(path: &Path) -> Result<Box<dyn RowSource>> {
    use tiff::decoder::ChunkType;
    use tiff::tags::{PlanarConfiguration, Tag};
    use tiff::ColorType;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = tiff::decoder::Decoder::new(BufReader::new(file))
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let derr = |e: tiff::TiffError| Error::Decode(format!("{}: {e}", path.display()));
    let (width, height) = decoder.dimensions().map_err(derr)?;
    let layout = match decoder.colortype().map_err(derr)? {
        ColorType::Gray(8) => Layout::Gray,
        ColorType::GrayA(8) => Layout::GrayAlpha,
        ColorType::RGB(8) => Layout::Rgb,
        ColorType::RGBA(8) => Layout::Rgba,
        other => {
            return Err(Error::Format(format!(
                "{}: TIFF color type {other:?} unsupported (8-bit gray/RGB only)",
                path.display()
            )))
        }
    };
    let planar = decoder
        .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
        .map_err(derr)?
        .and_then(PlanarConfiguration::from_u16)
        .unwrap_or(PlanarConfiguration::Chunky);
    if decoder.get_chunk_type() != ChunkType::Strip || planar != PlanarConfiguration::Chunky {
        let img = load_rgb(path)?;
        return Ok(Box::new(OwnedRows { img, cursor: 0 }));
    }
    let rows_per_strip = decoder.chunk_dimensions().1.max(1);
    Ok(Box::new(TiffRows {
        decoder,
        layout,
        width,
        height,
        rows_per_strip,
        strip: Vec::new(),
        strip_index: 0,
        row_in_strip: 0,
        strip_rows: 0,
    }))
}

/// Decode a whole PNG/TIFF into RGB8, rejecting anything deeper than 8 bits.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let format = sniff(path)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let img = image::load(BufReader::new(file), format)
        .map_err(|e| match e {
            image::ImageError::Unsupported(u) => Error::Format(format!("{}: {u}", path.display())),
            other => Error::Decode(format!("{}: {other}", path.display())),
        })?;
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            Ok(img.to_rgb8())
        }
        other => Err(Error::Format(format!(
            "{}: {:?} pixels, only 8-bit gray/RGB(A) supported",
            path.display(),
            other.color()
        ))),
    }
}

/// Load a PNG/TIFF as a core image.
pub fn load_core_image(path: impl AsRef<Path>, mpp: Option<f64>) -> Result<CoreImage> {
    let path = path.as_ref();
    let pixels = load_rgb(path)?;
    let mpp = mpp.ok_or_else(|| Error::MissingMpp(path.display().to_string()))?;
    let core_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    CoreImage::new(pixels, mpp, core_id, StainState::Stained)
}
