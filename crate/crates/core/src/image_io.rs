//! Grayscale image files: binary PGM (read and write) and 8-bit PNG (read).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a P5 PGM or grayscale PNG as an `[H, W]` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        Err(format_err(
            path,
            0,
            "unknown image magic, expected P5 PGM or PNG",
        ))
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(self.path, start, format!("expected {what}")))
    }
}

/// Decodes an in-memory P5 PGM; `path` only labels errors.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if !bytes.starts_with(b"P5") {
        return Err(format_err(path, 0, "not a binary PGM"));
    }
    let mut hdr = Header {
        bytes,
        pos: 2,
        path,
    };
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    if w == 0 || h == 0 {
        return Err(format_err(path, hdr.pos, format!("empty image {w}x{h}")));
    }
    let maxval = hdr.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(format_err(
            path,
            hdr.pos,
            format!("unsupported maxval {maxval}"),
        ));
    }
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, hdr.pos, "missing whitespace after header"));
    }
    let start = hdr.pos + 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(depth))
        .ok_or_else(|| format_err(path, start, format!("image {w}x{h} is too large")))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload, expected {need} bytes after offset {start}"),
        ));
    }
    let scale = maxval as f64;
    let data = if depth == 1 {
        payload[..need].iter().map(|&v| v as f64 / scale).collect()
    } else {
        payload[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Tensor::new(&[h, w], data)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, 0, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(
            path,
            0,
            format!(
                "unsupported PNG format {:?}/{:?}, expected 8-bit grayscale",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, 0, e.to_string()))?;
    let stride = frame.line_size;
    let data = (0..h)
        .flat_map(|y| {
            buf[y * stride..y * stride + w]
                .iter()
                .map(|&v| v as f64 / 255.0)
        })
        .collect();
    Tensor::new(&[h, w], data)
}

/// `round(255·v)` with halves rounded away from zero, clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes an `[H, W]` (or `[H, W, 1]`) tensor as P5 with maxval 255.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = image.hwc()?;
    if c != 1 {
        return Err(Error::ChannelMismatch {
            op: "write_image",
            expected: 1,
            got: c,
        });
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_image(image: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(image)?).map_err(io_err(path))
}
