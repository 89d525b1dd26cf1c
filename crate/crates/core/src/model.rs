//! Domain types shared by every pipeline stage.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted width or height, in pixels.
pub const MAX_DIMENSION: u32 = 8192;

/// Longest accepted instruction, in characters after trimming.
pub const MAX_INSTRUCTION_CHARS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("dimensions {width}x{height} are out of range (1..={MAX_DIMENSION})")]
    BadDimensions { width: u32, height: u32 },
    #[error("buffer holds {actual} values, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("instruction must be 1..={MAX_INSTRUCTION_CHARS} characters after trimming, got {0}")]
    InstructionLength(usize),
    #[error("request id must be a non-empty path-safe token: {0:?}")]
    BadId(String),
}

fn check_dims(width: u32, height: u32) -> Result<usize, ModelError> {
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(ModelError::BadDimensions { width, height });
    }
    Ok(width as usize * height as usize)
}

/// Row-major RGB8 raster.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ModelError> {
        let expected = check_dims(width, height)? * 3;
        if pixels.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ModelError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: rgb.repeat(n),
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ModelError> {
        let n = check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(n * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Raw RGB bytes, three per pixel.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let i = index * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel_at(&mut self, index: usize, rgb: [u8; 3]) {
        let i = index * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

/// Binary raster, row-major. A set bit marks a pixel the generator may change.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ModelError> {
        let expected = check_dims(width, height)?;
        if bits.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self, ModelError> {
        let n = check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![value; n],
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, ModelError> {
        let n = check_dims(width, height)?;
        let mut bits = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| !*a || *b)
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Mask({}x{}, {} set)",
            self.width,
            self.height,
            self.count_ones()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditCategory {
    LocalEdit,
    BackgroundEdit,
    GlobalEdit,
    Addition,
    Remove,
}

impl EditCategory {
    pub const ALL: [EditCategory; 5] = [
        EditCategory::LocalEdit,
        EditCategory::BackgroundEdit,
        EditCategory::GlobalEdit,
        EditCategory::Addition,
        EditCategory::Remove,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditCategory::LocalEdit => "LocalEdit",
            EditCategory::BackgroundEdit => "BackgroundEdit",
            EditCategory::GlobalEdit => "GlobalEdit",
            EditCategory::Addition => "Addition",
            EditCategory::Remove => "Remove",
        }
    }

    /// The mask rule each category is bound to.
    pub fn mask_source(self) -> MaskSource {
        match self {
            EditCategory::LocalEdit | EditCategory::Remove => MaskSource::GroundedObject,
            EditCategory::BackgroundEdit => MaskSource::BackgroundComplement,
            EditCategory::Addition => MaskSource::AdditionBox,
            EditCategory::GlobalEdit => MaskSource::WholeImage,
        }
    }

    pub fn needs_main_object(self) -> bool {
        matches!(
            self,
            EditCategory::LocalEdit | EditCategory::Remove | EditCategory::BackgroundEdit
        )
    }
}

impl fmt::Display for EditCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EditCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "localedit" | "local" => Ok(EditCategory::LocalEdit),
            "backgroundedit" | "background" => Ok(EditCategory::BackgroundEdit),
            "globaledit" | "global" => Ok(EditCategory::GlobalEdit),
            "addition" | "add" => Ok(EditCategory::Addition),
            "remove" | "removal" => Ok(EditCategory::Remove),
            _ => Err(format!("unknown edit category {s:?}")),
        }
    }
}

/// Which mask rule produces the editing mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MaskSource {
    GroundedObject,
    BackgroundComplement,
    AdditionBox,
    WholeImage,
}

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub id: String,
    pub image: ImageBuffer,
    pub instruction: String,
}

impl EditRequest {
    /// Trims the instruction and checks the id and length rules.
    pub fn new(
        id: impl Into<String>,
        image: ImageBuffer,
        instruction: &str,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        validate_id(&id)?;
        let instruction = validate_instruction(instruction)?;
        Ok(Self {
            id,
            image,
            instruction,
        })
    }
}

pub fn validate_instruction(instruction: &str) -> Result<String, ModelError> {
    let trimmed = instruction.trim();
    let n = trimmed.chars().count();
    if n == 0 || n > MAX_INSTRUCTION_CHARS {
        return Err(ModelError::InstructionLength(n));
    }
    Ok(trimmed.to_string())
}

/// Ids become directory names, so only `[A-Za-z0-9._-]` is accepted.
pub fn validate_id(id: &str) -> Result<(), ModelError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(ModelError::BadId(id.to_string()))
    }
}

/// Axis-aligned box; `x0,y0` inclusive, `x1,y1` exclusive.
///
/// Coordinates are signed so out-of-range proposals can be represented and
/// then clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl BoundingBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Clamps into `[0,width]x[0,height]`; `None` when nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let (w, h) = (i64::from(width), i64::from(height));
        let b = BoundingBox {
            x0: self.x0.clamp(0, w),
            y0: self.y0.clamp(0, h),
            x1: self.x1.clamp(0, w),
            y1: self.y1.clamp(0, h),
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    pub fn area(&self) -> i64 {
        (self.x1 - self.x0).max(0) * (self.y1 - self.y0).max(0)
    }
}

/// The intermediary guidance handed from analysis to masking and generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditPlan {
    pub category: EditCategory,
    pub main_object: Option<String>,
    pub addition_subject: Option<String>,
    pub target_prompt: String,
    pub mask_source: MaskSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanViolation {
    EmptyTargetPrompt,
    MainObjectMustBeAbsent,
    MainObjectRequired,
    AdditionSubjectMustBeAbsent,
    AdditionSubjectRequired,
    WrongMaskSource {
        expected: MaskSource,
        found: MaskSource,
    },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::EmptyTargetPrompt => f.write_str("target prompt is empty"),
            PlanViolation::MainObjectMustBeAbsent => {
                f.write_str("main object must be absent for this category")
            }
            PlanViolation::MainObjectRequired => {
                f.write_str("main object is required for this category")
            }
            PlanViolation::AdditionSubjectMustBeAbsent => {
                f.write_str("addition subject is only allowed for Addition")
            }
            PlanViolation::AdditionSubjectRequired => {
                f.write_str("Addition requires an addition subject")
            }
            PlanViolation::WrongMaskSource { expected, found } => {
                write!(f, "mask source {found:?} does not match expected {expected:?}")
            }
        }
    }
}

fn present(s: &Option<String>) -> bool {
    s.as_deref().is_some_and(|s| !s.trim().is_empty())
}

/// Lists every per-category field rule the plan breaks. Empty means consistent.
pub fn validate_plan(plan: &EditPlan) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    if plan.target_prompt.trim().is_empty() {
        out.push(PlanViolation::EmptyTargetPrompt);
    }
    let has_object = present(&plan.main_object);
    let has_subject = present(&plan.addition_subject);
    match plan.category {
        EditCategory::GlobalEdit | EditCategory::Addition => {
            if plan.main_object.is_some() {
                out.push(PlanViolation::MainObjectMustBeAbsent);
            }
        }
        _ => {
            if !has_object {
                out.push(PlanViolation::MainObjectRequired);
            }
        }
    }
    if plan.category == EditCategory::Addition {
        if !has_subject {
            out.push(PlanViolation::AdditionSubjectRequired);
        }
    } else if plan.addition_subject.is_some() {
        out.push(PlanViolation::AdditionSubjectMustBeAbsent);
    }
    let expected = plan.category.mask_source();
    if plan.mask_source != expected {
        out.push(PlanViolation::WrongMaskSource {
            expected,
            found: plan.mask_source,
        });
    }
    out
}
