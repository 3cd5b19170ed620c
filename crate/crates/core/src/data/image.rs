//! Pixel grids, image decoding/encoding and bilinear resizing.

use std::io::Cursor;

use super::DataError;

/// Row-major grid with interleaved channels: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// Decoded 8-bit image.
pub type PixelGrid = Grid<u8>;
/// Intermediate float image on the 0–255 scale.
pub type FloatGrid = Grid<f32>;

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Image(format!("image dimensions must be at least 1x1, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(DataError::Image(format!("expected 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(DataError::Image(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self, DataError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl PixelGrid {
    pub fn to_float(&self) -> FloatGrid {
        self.map(f32::from)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

impl FloatGrid {
    /// Rounds to the nearest byte, clamping to 0–255.
    pub fn to_pixels(&self) -> PixelGrid {
        self.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }

    /// Identifies the format from the leading bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(b"P5") {
            Some(ImageFormat::Pgm)
        } else if bytes.starts_with(b"P6") {
            Some(ImageFormat::Ppm)
        } else {
            None
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<PixelGrid, DataError> {
    match format {
        ImageFormat::Pgm => decode_pnm(bytes, b"P5", 1),
        ImageFormat::Ppm => decode_pnm(bytes, b"P6", 3),
        ImageFormat::Png => decode_png(bytes),
    }
}

/// Decodes after sniffing the format from the content.
pub fn decode_any(bytes: &[u8]) -> Result<PixelGrid, DataError> {
    let format = ImageFormat::sniff(bytes).ok_or_else(|| DataError::Image("unrecognized image format".into()))?;
    decode_image(bytes, format)
}

fn decode_pnm(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<PixelGrid, DataError> {
    let name = std::str::from_utf8(magic).expect("ascii magic");
    if !bytes.starts_with(magic) {
        return Err(DataError::Image(format!("missing {name} magic")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Image(format!("malformed {name} header")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| DataError::Image(format!("{name} header value out of range")))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DataError::Image(format!("malformed {name} header")));
    }
    pos += 1;
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::Image(format!("{name} maxval {maxval} out of range")));
    }
    let samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| DataError::Image(format!("{name} dimensions too large")))?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let body = &bytes[pos..];
    if body.len() < samples * bps {
        return Err(DataError::Image(format!(
            "{name} pixel data truncated: need {} bytes, have {}",
            samples * bps,
            body.len()
        )));
    }
    let data = if bps == 1 {
        let raw = &body[..samples];
        if maxval == 255 {
            raw.to_vec()
        } else {
            raw.iter().map(|&v| scale_sample(u32::from(v), maxval as u32)).collect::<Result<_, _>>()?
        }
    } else {
        body[..samples * 2]
            .chunks_exact(2)
            .map(|c| scale_sample(u32::from(u16::from_be_bytes([c[0], c[1]])), maxval as u32))
            .collect::<Result<_, _>>()?
    };
    Grid::new(width, height, channels, data)
}

fn scale_sample(v: u32, maxval: u32) -> Result<u8, DataError> {
    if v > maxval {
        return Err(DataError::Image(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(((v * 255 * 2 + maxval) / (2 * maxval)) as u8)
}

fn decode_png(bytes: &[u8]) -> Result<PixelGrid, DataError> {
    let err = |e: png::DecodingError| DataError::Image(format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Image("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(DataError::Image("png: unexpanded palette".into())),
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            data.extend_from_slice(&px[..keep]);
        }
    }
    Grid::new(w, h, keep, data)
}

/// Binary PGM (1 channel) or PPM (3 channels).
pub fn encode_pnm(grid: &PixelGrid) -> Vec<u8> {
    let magic = if grid.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend_from_slice(&grid.data);
    out
}

/// 8-bit grayscale or RGB PNG.
pub fn encode_png(grid: &PixelGrid) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, grid.width as u32, grid.height as u32);
        enc.set_color(if grid.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| DataError::Image(format!("png: {e}"));
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&grid.data).map_err(err)?;
        writer.finish().map_err(err)?;
    }
    Ok(out)
}

pub fn encode_image(grid: &PixelGrid, format: ImageFormat) -> Result<Vec<u8>, DataError> {
    match (format, grid.channels) {
        (ImageFormat::Png, _) => encode_png(grid),
        (ImageFormat::Pgm, 1) | (ImageFormat::Ppm, 3) => Ok(encode_pnm(grid)),
        (f, c) => Err(DataError::Image(format!("cannot write a {c}-channel image as {}", f.extension()))),
    }
}

/// Half-pixel-center bilinear resize: output pixel `i` samples the source at
/// `(i + 0.5)·(src/dst) − 0.5`, clamped to the valid range.
pub fn resize_bilinear(grid: &FloatGrid, target_h: usize, target_w: usize) -> Result<FloatGrid, DataError> {
    if target_h == 0 || target_w == 0 {
        return Err(DataError::Image(format!("resize target {target_w}x{target_h} is empty")));
    }
    if target_h == grid.height && target_w == grid.width {
        return Ok(grid.clone());
    }
    let c = grid.channels;
    let xs = sample_positions(grid.width, target_w);
    let ys = sample_positions(grid.height, target_h);
    let mut data = Vec::with_capacity(target_h * target_w * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let top = lerp(grid.get(x0, y0, ch), grid.get(x1, y0, ch), tx);
                let bottom = lerp(grid.get(x0, y1, ch), grid.get(x1, y1, ch), tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    Grid::new(target_w, target_h, c, data)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// `a + (b − a)·t`, kept inside `[min(a,b), max(a,b)]`.
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if a == b {
        return a;
    }
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}
