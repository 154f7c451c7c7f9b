use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorData;
use crate::tracker::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub length: usize,
    pub frame_size: (usize, usize), // (H, W)
    pub target_size_range: (f64, f64),
    pub appearance_dim: usize,
    pub drift_rate: f64,
    pub velocity: f64,
    pub jitter_std: f64,
    pub distractor_count: usize,
    pub distractor_similarity: f64,
    pub noise_std: f64,
    /// Per-frame log-scale random walk of the target's width/height,
    /// clamped to `target_size_range`. Zero keeps the size fixed (and the
    /// RNG stream identical to sequences generated before this knob).
    pub scale_walk: f64,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            length: 40,
            frame_size: (32, 32),
            target_size_range: (8.0, 12.0),
            appearance_dim: 4,
            drift_rate: 0.1,
            velocity: 1.0,
            jitter_std: 0.3,
            distractor_count: 2,
            distractor_similarity: 0.6,
            noise_std: 0.02,
            scale_walk: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub frames: Vec<TensorData>, // each [3, H, W]
    pub gt: Vec<BBox>,
    pub config: SequenceConfig,
}

struct Blob {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    appearance: Vec<f64>,
}

impl Blob {
    fn bbox(&self) -> BBox {
        BBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
        }
    }

    fn step(
        &mut self,
        jitter: f64,
        scale_walk: f64,
        size_range: (f64, f64),
        rng: &mut ChaCha8Rng,
        fw: f64,
        fh: f64,
    ) {
        let normal = Normal::new(0.0, 1.0).unwrap();
        self.cx += self.vx + jitter * normal.sample(rng);
        self.cy += self.vy + jitter * normal.sample(rng);
        if scale_walk > 0.0 {
            let (smin, smax) = size_range;
            self.w = (self.w * (scale_walk * normal.sample(rng)).exp()).clamp(smin, smax);
            self.h = (self.h * (scale_walk * normal.sample(rng)).exp()).clamp(smin, smax);
        }
        // Bounce off the walls so the box stays fully inside.
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        if self.cx < hw {
            self.cx = hw + (hw - self.cx);
            self.vx = -self.vx;
        }
        if self.cx > fw - hw {
            self.cx = (fw - hw) - (self.cx - (fw - hw));
            self.vx = -self.vx;
        }
        if self.cy < hh {
            self.cy = hh + (hh - self.cy);
            self.vy = -self.vy;
        }
        if self.cy > fh - hh {
            self.cy = (fh - hh) - (self.cy - (fh - hh));
            self.vy = -self.vy;
        }
        self.cx = self.cx.clamp(hw, fw - hw);
        self.cy = self.cy.clamp(hh, fh - hh);
    }
}

/// Map an appearance vector to per-channel colors and a texture phase via
/// a fixed seeded projection.
struct AppearanceModel {
    proj: Vec<f64>, // 4 x dim: three colors and one texture coefficient
    dim: usize,
}

impl AppearanceModel {
    fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, 1.0).unwrap();
        AppearanceModel {
            proj: (0..4 * dim).map(|_| normal.sample(&mut rng)).collect(),
            dim,
        }
    }

    fn render_params(&self, appearance: &[f64]) -> ([f64; 3], f64) {
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, a) in appearance.iter().enumerate().take(self.dim) {
                acc += self.proj[r * self.dim + c] * a;
            }
            *o = acc / (self.dim as f64).sqrt();
        }
        let colors = [
            0.55 + 0.4 * out[0].tanh(),
            0.55 + 0.4 * out[1].tanh(),
            0.55 + 0.4 * out[2].tanh(),
        ];
        (colors, out[3].tanh())
    }
}

fn render(frame: &mut [f64], h: usize, w: usize, blob: &Blob, model: &AppearanceModel) {
    let (colors, texture) = model.render_params(&blob.appearance);
    let (rx, ry) = (blob.w / 2.0, blob.h / 2.0);
    let x_lo = ((blob.cx - blob.w).floor().max(0.0)) as usize;
    let x_hi = ((blob.cx + blob.w).ceil().min(w as f64 - 1.0)) as usize;
    let y_lo = ((blob.cy - blob.h).floor().max(0.0)) as usize;
    let y_hi = ((blob.cy + blob.h).ceil().min(h as f64 - 1.0)) as usize;
    for py in y_lo..=y_hi {
        for px in x_lo..=x_hi {
            let dx = (px as f64 + 0.5 - blob.cx) / rx;
            let dy = (py as f64 + 0.5 - blob.cy) / ry;
            let r2 = dx * dx + dy * dy;
            if r2 > 4.0 {
                continue;
            }
            let core = (-2.0 * r2).exp();
            // Radial texture ring whose contrast follows the appearance.
            let ring = 1.0 + 0.5 * texture * (std::f64::consts::PI * 2.0 * r2.sqrt()).cos();
            for (ch, color) in colors.iter().enumerate() {
                frame[ch * h * w + py * w + px] += color * core * ring;
            }
        }
    }
}

pub fn generate(config: &SequenceConfig) -> Result<SequenceRecord> {
    let (h, w) = config.frame_size;
    let (smin, smax) = config.target_size_range;
    if smax > h.min(w) as f64 {
        return Err(Error::invalid(format!(
            "target size up to {smax} exceeds frame {h}x{w}"
        )));
    }
    if !(smin > 0.0 && smax >= smin) {
        return Err(Error::invalid("bad target size range".to_string()));
    }
    if config.length == 0 {
        return Err(Error::invalid("sequence length must be >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let model = AppearanceModel::new(config.appearance_dim, config.seed);
    let (fw, fh) = (w as f64, h as f64);

    let spawn = |rng: &mut ChaCha8Rng| -> Blob {
        let bw = rng.gen_range(smin..=smax);
        let bh = rng.gen_range(smin..=smax);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        Blob {
            cx: rng.gen_range(bw / 2.0..=fw - bw / 2.0),
            cy: rng.gen_range(bh / 2.0..=fh - bh / 2.0),
            w: bw,
            h: bh,
            vx: config.velocity * angle.cos(),
            vy: config.velocity * angle.sin(),
            appearance: (0..config.appearance_dim)
                .map(|_| normal.sample(rng))
                .collect(),
        }
    };

    let mut target = spawn(&mut rng);
    let mut distractors: Vec<Blob> = (0..config.distractor_count)
        .map(|_| {
            let mut b = spawn(&mut rng);
            for (d, t) in b.appearance.iter_mut().zip(&target.appearance) {
                *d = (1.0 - config.distractor_similarity) * *d
                    + config.distractor_similarity * t;
            }
            b
        })
        .collect();

    let mut frames = Vec::with_capacity(config.length);
    let mut gt = Vec::with_capacity(config.length);
    for frame_idx in 0..config.length {
        if frame_idx > 0 {
            target.step(
                config.jitter_std,
                config.scale_walk,
                config.target_size_range,
                &mut rng,
                fw,
                fh,
            );
            for a in target.appearance.iter_mut() {
                *a += config.drift_rate * normal.sample(&mut rng);
            }
            for d in distractors.iter_mut() {
                d.step(config.jitter_std, 0.0, config.target_size_range, &mut rng, fw, fh);
            }
        }
        let mut values = vec![0.0; 3 * h * w];
        for d in &distractors {
            render(&mut values, h, w, d, &model);
        }
        render(&mut values, h, w, &target, &model);
        if config.noise_std > 0.0 {
            for v in values.iter_mut() {
                *v += config.noise_std * normal.sample(&mut rng);
            }
        }
        frames.push(TensorData::new(vec![3, h, w], values)?);
        gt.push(target.bbox().clamp_inside(fw, fh));
    }
    Ok(SequenceRecord {
        frames,
        gt,
        config: config.clone(),
    })
}
