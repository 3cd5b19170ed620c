use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{lerp, Grid};
use super::{DataError, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    pub horizontal_flip_prob: f64,
    pub rotation_max_degrees: f64,
    /// Maximum shift as a fraction of width (x) and height (y).
    pub translate_max_fraction: f64,
    /// Maximum relative brightness change, e.g. 0.1 for ±10 %.
    pub brightness_delta_max: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            rotation_max_degrees: 10.0,
            translate_max_fraction: 0.1,
            brightness_delta_max: 0.1,
            seed: 42,
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self {
            horizontal_flip_prob: 0.0,
            rotation_max_degrees: 0.0,
            translate_max_fraction: 0.0,
            brightness_delta_max: 0.0,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.horizontal_flip_prob == 0.0
            && self.rotation_max_degrees == 0.0
            && self.translate_max_fraction == 0.0
            && self.brightness_delta_max == 0.0
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |detail: String| Err(DataError::Invalid {
            what: "augmentation policy",
            detail,
        });
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return bad(format!("flip probability {} outside [0, 1]", self.horizontal_flip_prob));
        }
        for (name, v) in [
            ("rotation", self.rotation_max_degrees),
            ("translation", self.translate_max_fraction),
            ("brightness", self.brightness_delta_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} magnitude {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

struct Draw {
    flip: bool,
    angle: f64,
    dx: f64,
    dy: f64,
    brightness: f64,
}

fn draw(policy: &AugmentationPolicy, draw_index: u64, width: usize, height: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(draw_index);
    // always five draws so every parameter uses the same stream position
    let u: [f64; 5] = std::array::from_fn(|_| rng.gen::<f64>());
    let sym = |v: f64| 2.0 * v - 1.0;
    Draw {
        flip: u[0] < policy.horizontal_flip_prob,
        angle: sym(u[1]) * policy.rotation_max_degrees.to_radians(),
        dx: sym(u[2]) * policy.translate_max_fraction * width as f64,
        dy: sym(u[3]) * policy.translate_max_fraction * height as f64,
        brightness: 1.0 + sym(u[4]) * policy.brightness_delta_max,
    }
}

/// Seeded random flip, rotation about the image centre, translation and
/// brightness scaling. Geometry is resampled bilinearly with zero fill.
/// The result depends only on `(policy, draw_index)` and the input.
pub fn augment(record: &ImageRecord, policy: &AugmentationPolicy, draw_index: u64) -> ImageRecord {
    if policy.is_identity() {
        return record.clone();
    }
    let src = &record.pixels;
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let d = draw(policy, draw_index, w, h);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = d.angle.sin_cos();
    let fetch = |x: isize, y: isize, ch: usize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            f32::from(src.get(x as usize, y as usize, ch))
        }
    };
    let mut out = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            // invert translate, then rotate, then flip
            let px = x as f64 - d.dx - cx;
            let py = y as f64 - d.dy - cy;
            let mut sx = cos * px + sin * py + cx;
            let sy = -sin * px + cos * py + cy;
            if d.flip {
                sx = (w as f64 - 1.0) - sx;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (tx, ty) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = lerp(fetch(x0, y0, ch), fetch(x0 + 1, y0, ch), tx);
                let bottom = lerp(fetch(x0, y0 + 1, ch), fetch(x0 + 1, y0 + 1, ch), tx);
                let v = f64::from(lerp(top, bottom, ty)) * d.brightness;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageRecord {
        id: record.id.clone(),
        pixels: Grid::new(w, h, c, out).expect("same dimensions"),
        label: record.label,
    }
}
