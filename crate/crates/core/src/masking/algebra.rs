use super::MaskError;
use crate::model::{BoundingBox, Mask};

pub fn complement(m: &Mask) -> Mask {
    let bits = m.bits().iter().map(|b| !b).collect();
    Mask::new(m.width(), m.height(), bits).expect("same dimensions")
}

pub fn union(masks: &[Mask]) -> Result<Mask, MaskError> {
    let (first, rest) = masks.split_first().ok_or(MaskError::EmptyUnion)?;
    let mut out = first.clone();
    for m in rest {
        if m.dims() != out.dims() {
            return Err(MaskError::DimensionMismatch {
                expected: out.dims(),
                found: m.dims(),
            });
        }
        for (o, b) in out.bits_mut().iter_mut().zip(m.bits()) {
            *o |= *b;
        }
    }
    Ok(out)
}

pub fn intersect(a: &Mask, b: &Mask) -> Result<Mask, MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let bits = a.bits().iter().zip(b.bits()).map(|(x, y)| *x && *y).collect();
    Ok(Mask::new(a.width(), a.height(), bits).expect("same dimensions"))
}

/// Disk dilation: a bit is set iff some set bit lies within Euclidean distance `radius`.
pub fn dilate(m: &Mask, radius: u32) -> Mask {
    if radius == 0 || m.is_empty() {
        return m.clone();
    }
    let r2 = u64::from(radius) * u64::from(radius);
    let d2 = squared_distance_to_set(m);
    let bits = d2.iter().map(|d| d.is_some_and(|d| d <= r2)).collect();
    Mask::new(m.width(), m.height(), bits).expect("same dimensions")
}

pub fn rasterize_box(b: BoundingBox, width: u32, height: u32) -> Result<Mask, MaskError> {
    let c = b.clamped(width, height).ok_or(MaskError::EmptyBoxAfterClamp(b))?;
    Ok(Mask::from_fn(width, height, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        x >= c.x0 && x < c.x1 && y >= c.y0 && y < c.y1
    })
    .expect("dimensions come from a valid image"))
}

/// Nearest-neighbor resample, sampling each target pixel at its center.
pub fn resample_nearest(m: &Mask, width: u32, height: u32) -> Mask {
    if m.dims() == (width, height) {
        return m.clone();
    }
    let (sw, sh) = (u64::from(m.width()), u64::from(m.height()));
    Mask::from_fn(width, height, |x, y| {
        let sx = ((2 * u64::from(x) + 1) * sw / (2 * u64::from(width))).min(sw - 1);
        let sy = ((2 * u64::from(y) + 1) * sh / (2 * u64::from(height))).min(sh - 1);
        m.get(sx as u32, sy as u32)
    })
    .expect("target dimensions are valid")
}

/// Exact squared Euclidean distance from every pixel to the nearest set bit;
/// `None` everywhere when the mask is empty.
///
/// Separable transform: a per-column linear scan, then the lower envelope of
/// parabolas along each row.
pub fn squared_distance_to_set(m: &Mask) -> Vec<Option<u64>> {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let bits = m.bits();
    // column pass: vertical distance to the nearest set bit in the same column
    let mut col: Vec<Option<u64>> = vec![None; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if bits[y * w + x] {
                last = Some(y);
            }
            col[y * w + x] = last.map(|l| (y - l) as u64);
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if bits[y * w + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let d = (n - y) as u64;
                let cell = &mut col[y * w + x];
                *cell = Some(cell.map_or(d, |c| c.min(d)));
            }
        }
    }
    let mut out = vec![None; w * h];
    let mut f: Vec<(i64, i64)> = Vec::with_capacity(w);
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(w);
    let mut z: Vec<f64> = Vec::with_capacity(w + 1);
    for y in 0..h {
        f.clear();
        for x in 0..w {
            if let Some(d) = col[y * w + x] {
                f.push((x as i64, (d * d) as i64));
            }
        }
        if f.is_empty() {
            continue;
        }
        lower_envelope(&f, &mut hull, &mut z);
        let mut k = 0;
        for x in 0..w {
            let q = x as i64;
            while k + 1 < hull.len() && z[k + 1] < q as f64 {
                k += 1;
            }
            let (p, fp) = hull[k];
            out[y * w + x] = Some(((q - p) * (q - p) + fp) as u64);
        }
    }
    out
}

/// Lower envelope of the parabolas `(x - p)^2 + fp`; `z[k]` is where parabola
/// `k` starts to be minimal.
fn lower_envelope(points: &[(i64, i64)], hull: &mut Vec<(i64, i64)>, z: &mut Vec<f64>) {
    hull.clear();
    z.clear();
    let intersect = |(p, fp): (i64, i64), (q, fq): (i64, i64)| -> f64 {
        ((fq + q * q) - (fp + p * p)) as f64 / (2 * (q - p)) as f64
    };
    for &pt in points {
        loop {
            match hull.last() {
                Some(&top) => {
                    let s = intersect(top, pt);
                    if s <= z[hull.len() - 1] {
                        hull.pop();
                        z.pop();
                        continue;
                    }
                    hull.push(pt);
                    z.push(s);
                }
                None => {
                    hull.push(pt);
                    z.push(f64::NEG_INFINITY);
                }
            }
            break;
        }
    }
}
