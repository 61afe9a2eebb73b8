//! Binary PPM (P6, maxval 255) and 8-bit PNG reading and writing.
//!
//! Loading scales bytes by `1/255`. Saving clamps to `[0, 1]` and rounds half
//! up, i.e. `floor(255 v + 0.5)`.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use num_traits::Float;

use crate::error::ImageError;
use crate::spectral::{Image, Plane};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    /// Chooses a format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") => Ok(Self::Ppm),
            Some("png") => Ok(Self::Png),
            _ => Err(ImageError::UnknownFormat(format!(
                "{}: expected a .ppm or .png extension",
                path.display()
            ))),
        }
    }

    fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"P6") {
            Some(Self::Ppm)
        } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(Self::Png)
        } else {
            None
        }
    }
}

pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_image(&bytes)
}

/// Decodes PPM or PNG bytes, detected by magic number.
pub fn decode_image<T: Scalar>(bytes: &[u8]) -> Result<Image<T>, ImageError> {
    match ImageFormat::sniff(bytes) {
        Some(ImageFormat::Ppm) => decode_ppm(bytes),
        Some(ImageFormat::Png) => decode_png(bytes),
        None => Err(ImageError::UnknownFormat("neither a P6 PPM nor a PNG signature".into())),
    }
}

pub fn save_image<T: Scalar>(image: &Image<T>, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_image(image, ImageFormat::from_path(path)?)?;
    let io = |source| ImageError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(&bytes).map_err(io)?;
    Ok(())
}

pub fn encode_image<T: Scalar>(image: &Image<T>, format: ImageFormat) -> Result<Vec<u8>, ImageError> {
    match format {
        ImageFormat::Ppm => Ok(encode_ppm(image)),
        ImageFormat::Png => encode_png(image),
    }
}

/// Clamp to `[0, 1]` then round half up to `0..=255`. NaN maps to 0.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    if v.is_nan() || v <= 0.0 {
        return 0;
    }
    (v.min(1.0) * 255.0 + 0.5).floor() as u8
}

fn interleaved<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            out.extend(image.pixel(r, c).map(quantize));
        }
    }
    out
}

fn from_interleaved<T: Scalar>(height: usize, width: usize, rgb: &[u8]) -> Result<Image<T>, ImageError> {
    let scale = T::one() / T::lit(255.0);
    let plane = |ch: usize| {
        let data = (0..height * width).map(|i| T::lit(f64::from(rgb[i * 3 + ch])) * scale).collect();
        Plane::new(height, width, data).map_err(|e| ImageError::MalformedHeader(e.to_string()))
    };
    let planes = [plane(0)?, plane(1)?, plane(2)?];
    Image::new(planes).map_err(|e| ImageError::MalformedHeader(e.to_string()))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedHeader(format!("{what} out of range")))
    }
}

fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Image<T>, ImageError> {
    if !bytes.starts_with(b"P6") {
        return Err(ImageError::MalformedHeader("missing P6 magic".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader(format!("zero-sized image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(ImageError::MalformedHeader("no whitespace after maxval".into())),
    }
    let expected = width * height * 3;
    let data = &bytes[cur.pos..];
    if data.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: data.len(),
        });
    }
    from_interleaved(height, width, &data[..expected])
}

fn encode_ppm<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(interleaved(image));
    out
}

fn decode_png<T: Scalar>(bytes: &[u8]) -> Result<Image<T>, ImageError> {
    let png_err = |e: png::DecodingError| ImageError::Png(e.to_string());
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(ImageError::UnsupportedBitDepth(16));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth(info.bit_depth as u8));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(ImageError::Png("palette was not expanded".into())),
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks(channels) {
            match channels {
                1 | 2 => rgb.extend([px[0]; 3]),
                _ => rgb.extend(&px[..3]),
            }
        }
    }
    from_interleaved(h, w, &rgb)
}

fn encode_png<T: Scalar>(image: &Image<T>) -> Result<Vec<u8>, ImageError> {
    let (h, w) = image.dims();
    let png_err = |e: png::EncodingError| ImageError::Png(e.to_string());
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&interleaved(image)).map_err(png_err)?;
    }
    Ok(out)
}

/// Mean of squared intensities over all pixels and channels.
pub fn mean_energy<T: Scalar>(image: &Image<T>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in image.planes() {
        for &v in p.as_slice() {
            sum += Float::powi(v.as_f64(), 2);
            n += 1;
        }
    }
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image<f64> {
        let mut r = rng::seeded(seed);
        let v: Vec<f64> = (0..h * w * 3).map(|_| r.gen()).collect();
        Image::from_fn(h, w, |y, x, c| v[(y * w + x) * 3 + c]).unwrap()
    }

    #[test]
    fn decodes_two_pixel_ppm() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img: Image<f64> = decode_image(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 2));
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut ok = b"P6 # made by hand\n1 1\n# max\n255 ".to_vec();
        ok.extend([10, 20, 30]);
        assert_eq!(decode_image::<f64>(&ok).unwrap().dims(), (1, 1));

        let deep = b"P6\n1 1\n65535\n\0\0\0\0\0\0";
        let err = decode_image::<f64>(deep).unwrap_err();
        assert!(matches!(err, ImageError::UnsupportedMaxval(65535)));
        assert!(err.to_string().contains("unsupported maxval"));

        assert!(matches!(decode_image::<f64>(b"P6\n2 x\n255\n"), Err(ImageError::MalformedHeader(_))));
        assert!(matches!(
            decode_image::<f64>(b"P6\n2 2\n255\n\x01\x02"),
            Err(ImageError::Truncated { expected: 12, found: 2 })
        ));
        assert!(matches!(decode_image::<f64>(b"P3\n1 1\n255\n1 2 3"), Err(ImageError::UnknownFormat(_))));
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(f64::NAN), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
    }

    #[test]
    fn round_trip_within_quantization() {
        let img = random_image(7, 5, 21);
        for fmt in [ImageFormat::Ppm, ImageFormat::Png] {
            let bytes = encode_image(&img, fmt).unwrap();
            let back: Image<f64> = decode_image(&bytes).unwrap();
            assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 255.0 + 1e-9, "{fmt:?}");
        }
    }

    #[test]
    fn png_gray_is_replicated() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[0, 255]).unwrap();
        }
        let img: Image<f64> = decode_image(&out).unwrap();
        assert_eq!(img.pixel(0, 1), [1.0; 3]);
    }

    #[test]
    fn png_sixteen_bit_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[0; 6]).unwrap();
        }
        assert!(matches!(decode_image::<f64>(&out), Err(ImageError::UnsupportedBitDepth(16))));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(4, 6, 8);
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back: Image<f64> = load_image(&p).unwrap();
            assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 255.0 + 1e-9);
        }
        assert!(matches!(save_image(&img, dir.path().join("a.jpg")), Err(ImageError::UnknownFormat(_))));
        assert!(matches!(load_image::<f64>(dir.path().join("missing.ppm")), Err(ImageError::Io { .. })));
    }
}
