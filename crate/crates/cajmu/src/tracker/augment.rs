use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::TensorData;

use super::bbox::BBox;

const MAX_RETRIES: usize = 50;

fn pixel(frame: &TensorData, ch: usize, y: i64, x: i64, h: usize, w: usize) -> f64 {
    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
        return 0.0;
    }
    frame.values[ch * h * w + y as usize * w + x as usize]
}

fn blur(frame: &TensorData, h: usize, w: usize) -> TensorData {
    // Separable binomial 3x3 blur with zero padding.
    let k = [0.25, 0.5, 0.25];
    let mut values = vec![0.0; frame.values.len()];
    for ch in 0..3 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for (dy, ky) in (-1..=1).zip(k) {
                    for (dx, kx) in (-1..=1).zip(k) {
                        acc += ky * kx * pixel(frame, ch, y + dy, x + dx, h, w);
                    }
                }
                values[ch * h * w + y as usize * w + x as usize] = acc;
            }
        }
    }
    TensorData::new(frame.shape.clone(), values).unwrap()
}

fn translate(frame: &TensorData, dx: i64, dy: i64, h: usize, w: usize) -> TensorData {
    let mut values = vec![0.0; frame.values.len()];
    for ch in 0..3 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                values[ch as usize * h * w + y as usize * w + x as usize] =
                    pixel(frame, ch, y - dy, x - dx, h, w);
            }
        }
    }
    TensorData::new(frame.shape.clone(), values).unwrap()
}

fn bilinear(frame: &TensorData, ch: usize, y: f64, x: f64, h: usize, w: usize) -> f64 {
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    (1.0 - fy) * (1.0 - fx) * pixel(frame, ch, y0, x0, h, w)
        + (1.0 - fy) * fx * pixel(frame, ch, y0, x0 + 1, h, w)
        + fy * (1.0 - fx) * pixel(frame, ch, y0 + 1, x0, h, w)
        + fy * fx * pixel(frame, ch, y0 + 1, x0 + 1, h, w)
}

fn rotate(frame: &TensorData, angle: f64, h: usize, w: usize) -> TensorData {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut values = vec![0.0; frame.values.len()];
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                // Inverse map: sample the source at the back-rotated point.
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sx = cx + cos * dx + sin * dy;
                let sy = cy - sin * dx + cos * dy;
                values[ch * h * w + y * w + x] = bilinear(frame, ch, sy, sx, h, w);
            }
        }
    }
    TensorData::new(frame.shape.clone(), values).unwrap()
}

fn rotate_box(b: &BBox, angle: f64, h: usize, w: usize) -> BBox {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let dx = b.cx - cx;
    let dy = b.cy - cy;
    BBox {
        cx: cx + cos * dx - sin * dy,
        cy: cy + sin * dx + cos * dy,
        w: b.w,
        h: b.h,
    }
}

fn dropout(frame: &TensorData, rate: f64, h: usize, w: usize, rng: &mut ChaCha8Rng) -> TensorData {
    let mut values = frame.values.clone();
    for y in 0..h {
        for x in 0..w {
            if rng.gen::<f64>() < rate {
                for ch in 0..3 {
                    values[ch * h * w + y * w + x] = 0.0;
                }
            }
        }
    }
    TensorData::new(frame.shape.clone(), values).unwrap()
}

fn inside(b: &BBox, h: usize, w: usize) -> bool {
    b.x0() >= 0.0 && b.y0() >= 0.0 && b.x1() <= w as f64 && b.y1() <= h as f64
}

/// Seeded first-frame augmentation: the identity sample first, then draws
/// from {blur, rotation, translation, dropout}. Augmentations whose box
/// would leave the frame are resampled with bounded retries.
pub fn augment_initial(
    frame: &TensorData,
    box_: &BBox,
    count: usize,
    seed: u64,
) -> Result<Vec<(TensorData, BBox)>> {
    if count < 1 {
        return Err(Error::invalid("augment count must be >= 1".to_string()));
    }
    if frame.shape.len() != 3 || frame.shape[0] != 3 {
        return Err(Error::shape(format!("frame must be [3,H,W], got {:?}", frame.shape)));
    }
    let (h, w) = (frame.shape[1], frame.shape[2]);
    if !inside(box_, h, w) {
        return Err(Error::invalid("initial box leaves the frame".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6175_676d_656e_7431);
    let mut out = vec![(frame.clone(), *box_)];
    while out.len() < count {
        let mut placed = false;
        for _ in 0..MAX_RETRIES {
            let (f, b) = match rng.gen_range(0..4u8) {
                0 => (blur(frame, h, w), *box_),
                1 => {
                    let angle = rng.gen_range(-0.26..=0.26); // about +/-15 degrees
                    (rotate(frame, angle, h, w), rotate_box(box_, angle, h, w))
                }
                2 => {
                    let max_dx = (w as f64 / 8.0).ceil() as i64;
                    let max_dy = (h as f64 / 8.0).ceil() as i64;
                    let dx = rng.gen_range(-max_dx..=max_dx);
                    let dy = rng.gen_range(-max_dy..=max_dy);
                    (
                        translate(frame, dx, dy, h, w),
                        BBox {
                            cx: box_.cx + dx as f64,
                            cy: box_.cy + dy as f64,
                            ..*box_
                        },
                    )
                }
                _ => (dropout(frame, 0.1, h, w, &mut rng), *box_),
            };
            if inside(&b, h, w) {
                out.push((f, b));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(
                "could not place augmentation inside the frame".to_string(),
            ));
        }
    }
    Ok(out)
}
