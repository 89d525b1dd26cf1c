use sha2::{Digest, Sha256};

use super::Fault;
use crate::codec;
use crate::model::ImageBuffer;
use crate::protocol::{GlobalEditRequest, GlobalEditResponse, InpaintRequest, InpaintResponse};

/// Intensity added (mod 256) to every channel by the global-edit mock.
pub const GLOBAL_SHIFT: u8 = 48;

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Flat color the inpaint mock paints: the first three bytes of SHA-256(prompt).
pub fn fill_color(prompt: &str) -> [u8; 3] {
    let d = Sha256::digest(prompt.as_bytes());
    [d[0], d[1], d[2]]
}

/// Channel order the global mock uses for `prompt`.
pub fn channel_permutation(prompt: &str) -> [usize; 3] {
    let d = Sha256::digest(prompt.as_bytes());
    PERMUTATIONS[usize::from(d[0]) % PERMUTATIONS.len()]
}

pub fn global_transform(image: &ImageBuffer, prompt: &str) -> ImageBuffer {
    let perm = channel_permutation(prompt);
    let bytes: Vec<u8> = image
        .pixels()
        .flat_map(|p| perm.map(|c| p[c].wrapping_add(GLOBAL_SHIFT)))
        .collect();
    ImageBuffer::new(image.width(), image.height(), bytes).expect("same dimensions")
}

#[derive(Debug, Clone, Default)]
pub struct MockInpaint {
    pub fault: Fault,
}

impl MockInpaint {
    pub fn respond(&self, req: &InpaintRequest) -> Result<InpaintResponse, String> {
        let image = codec::image_from_base64(&req.image).map_err(|e| e.to_string())?;
        let mask = codec::mask_from_base64(&req.mask).map_err(|e| e.to_string())?;
        if mask.dims() != image.dims() {
            return Err(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            ));
        }
        let fill = fill_color(&req.prompt);
        let mut out = image.clone();
        for (i, bit) in mask.bits().iter().enumerate() {
            if *bit {
                out.set_pixel_at(i, fill);
            } else if self.fault == Fault::CorruptUnmasked {
                let p = out.pixel_at(i);
                out.set_pixel_at(i, p.map(|c| 255 - c));
            }
        }
        if self.fault == Fault::WrongDimensions {
            out = ImageBuffer::filled(image.width() + 1, image.height(), fill)
                .map_err(|e| e.to_string())?;
        }
        Ok(InpaintResponse {
            image: codec::image_to_base64(&out),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockGlobal {
    pub fault: Fault,
}

impl MockGlobal {
    pub fn respond(&self, req: &GlobalEditRequest) -> Result<GlobalEditResponse, String> {
        let image = codec::image_from_base64(&req.image).map_err(|e| e.to_string())?;
        let mut out = global_transform(&image, &req.target_prompt);
        if self.fault == Fault::WrongDimensions {
            out = ImageBuffer::filled(image.width(), image.height() + 1, [0; 3])
                .map_err(|e| e.to_string())?;
        }
        Ok(GlobalEditResponse {
            image: codec::image_to_base64(&out),
        })
    }
}
