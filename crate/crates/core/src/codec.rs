//! PNG/JPEG decoding, PNG encoding, base64 payloads and content digests.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ImageBuffer, Mask, MAX_DIMENSION};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("image is {width}x{height}, larger than {MAX_DIMENSION} on an axis")]
    OversizedImage { width: u32, height: u32 },
    #[error("invalid base64 payload: {0}")]
    Base64(String),
}

fn reader(bytes: &[u8]) -> Result<ImageReader<Cursor<&[u8]>>, CodecError> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| CodecError::MalformedImage(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => Ok(reader),
        Some(other) => Err(CodecError::MalformedImage(format!(
            "unsupported format {other:?}"
        ))),
        None => Err(CodecError::MalformedImage("unrecognized format".into())),
    }
}

fn decode_dynamic(bytes: &[u8]) -> Result<image::DynamicImage, CodecError> {
    let (width, height) = reader(bytes)?
        .into_dimensions()
        .map_err(|e| CodecError::MalformedImage(e.to_string()))?;
    if width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(CodecError::OversizedImage { width, height });
    }
    if width == 0 || height == 0 {
        return Err(CodecError::MalformedImage("zero-sized image".into()));
    }
    reader(bytes)?
        .decode()
        .map_err(|e| CodecError::MalformedImage(e.to_string()))
}

/// Decodes a PNG or JPEG stream to RGB8. Alpha is composited over white.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, CodecError> {
    let img = decode_dynamic(bytes)?;
    let (width, height) = (img.width(), img.height());
    let pixels = if img.color().has_alpha() {
        let rgba = img.to_rgba8();
        let mut out = Vec::with_capacity(width as usize * height as usize * 3);
        for p in rgba.pixels() {
            let a = u32::from(p.0[3]);
            for c in &p.0[..3] {
                // over white: c*a + 255*(1-a), rounded
                let v = (u32::from(*c) * a + 255 * (255 - a) + 127) / 255;
                out.push(v as u8);
            }
        }
        out
    } else {
        img.to_rgb8().into_raw()
    };
    ImageBuffer::new(width, height, pixels).map_err(|e| CodecError::MalformedImage(e.to_string()))
}

/// 8-bit RGB PNG, no alpha.
pub fn encode_image(image: &ImageBuffer) -> Vec<u8> {
    encode_png(image.as_bytes(), image.width(), image.height(), ExtendedColorType::Rgb8)
}

/// Single-channel PNG with set bits as 255 and clear bits as 0.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let data: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    encode_png(&data, mask.width(), mask.height(), ExtendedColorType::L8)
}

fn encode_png(data: &[u8], width: u32, height: u32, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, width, height, color)
        .expect("in-memory PNG encoding of a validated buffer");
    out
}

/// Decodes a mask image. Any format `decode_image` accepts; luma ≥ 128 is a set bit.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask, CodecError> {
    let img = decode_dynamic(bytes)?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let bits = luma.into_raw().into_iter().map(|v| v >= 128).collect();
    Mask::new(w, h, bits).map_err(|e| CodecError::MalformedImage(e.to_string()))
}

pub fn to_base64(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

pub fn from_base64(text: &str) -> Result<Vec<u8>, CodecError> {
    BASE64
        .decode(text.trim())
        .map_err(|e| CodecError::Base64(e.to_string()))
}

pub fn image_to_base64(image: &ImageBuffer) -> String {
    to_base64(&encode_image(image))
}

pub fn image_from_base64(text: &str) -> Result<ImageBuffer, CodecError> {
    decode_image(&from_base64(text)?)
}

pub fn mask_to_base64(mask: &Mask) -> String {
    to_base64(&encode_mask(mask))
}

pub fn mask_from_base64(text: &str) -> Result<Mask, CodecError> {
    decode_mask(&from_base64(text)?)
}

/// Hex SHA-256 over `width`, `height` (little-endian u32) and the RGB bytes.
///
/// Depends only on pixel content, so it is stable across PNG re-encodings.
pub fn image_digest(image: &ImageBuffer) -> String {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_bytes());
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
