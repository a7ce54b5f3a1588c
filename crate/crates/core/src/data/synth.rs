//! Procedural shape corpora: a 10-class source task and a 5-class target
//! task whose appearance can be shifted away from the source.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initkit::tensor_rng;

pub const SOURCE_CORPUS: &str = "shapes10";
pub const TARGET_CORPUS: &str = "target5";

pub const SOURCE_CLASSES: [&str; 10] =
    ["disk", "square", "triangle", "plus", "ring", "cross", "hbars", "vbars", "dots2", "diamond"];
pub const TARGET_CLASSES: [&str; 5] = ["halfdisk", "frame", "tee", "dots3", "bullseye"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// `shapes10` or `target5`.
    pub corpus: String,
    pub samples: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Probability in `[0, 1]` that a sample is recolored and re-textured.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> usize {
    32
}

impl GeneratorSpec {
    pub fn source(samples: usize, image_size: usize, seed: u64) -> Self {
        Self { corpus: SOURCE_CORPUS.into(), samples, image_size, shift: 0.0, seed }
    }

    pub fn target(samples: usize, image_size: usize, shift: f64, seed: u64) -> Self {
        Self { corpus: TARGET_CORPUS.into(), samples, image_size, shift, seed }
    }

    pub fn class_names(&self) -> Result<Vec<String>> {
        let names: &[&str] = match self.corpus.as_str() {
            SOURCE_CORPUS => &SOURCE_CLASSES,
            TARGET_CORPUS => &TARGET_CLASSES,
            other => return Err(Error::Config(format!("unknown synthetic corpus `{other}`"))),
        };
        Ok(names.iter().map(|s| s.to_string()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.class_names()?;
        if self.samples == 0 {
            return Err(Error::Data("synthetic corpus with zero samples".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be at least 8".into()));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(Error::Config(format!("shift {} outside [0, 1]", self.shift)));
        }
        Ok(())
    }
}

/// Renders the corpus as `[n, 3, s, s]` pixels in `[0, 1]` plus balanced labels.
pub fn generate(spec: &GeneratorSpec) -> Result<(Vec<f32>, Vec<usize>)> {
    spec.validate()?;
    let classes = spec.class_names()?.len();
    let s = spec.image_size;
    let per = 3 * s * s;
    let mut pixels = vec![0.0f32; spec.samples * per];
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let label = i % classes;
        let mut rng = tensor_rng(spec.seed, &spec.corpus, &i.to_string());
        let shifted = spec.shift > 0.0 && rng.random::<f64>() < spec.shift;
        render(&mut rng, &spec.corpus, label, shifted, s, &mut pixels[i * per..(i + 1) * per]);
        labels.push(label);
    }
    Ok((pixels, labels))
}

fn inside(corpus: &str, class: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    let disk = |cu: f64, cv: f64, rad: f64| (u - cu).powi(2) + (v - cv).powi(2) <= rad * rad;
    if corpus == SOURCE_CORPUS {
        match class {
            0 => r2 <= 1.0,
            1 => u.abs().max(v.abs()) <= 0.8,
            2 => (-0.7..=0.9).contains(&v) && u.abs() <= 0.95 * (0.9 - v) / 1.6,
            3 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
            4 => (0.3..=1.0).contains(&r2),
            5 => {
                let (a, b) = ((u + v) * std::f64::consts::FRAC_1_SQRT_2, (u - v) * std::f64::consts::FRAC_1_SQRT_2);
                (a.abs() <= 0.28 && b.abs() <= 1.0) || (b.abs() <= 0.28 && a.abs() <= 1.0)
            }
            6 => u.abs() <= 0.95 && ((v - 0.5).abs() <= 0.22 || (v + 0.5).abs() <= 0.22),
            7 => v.abs() <= 0.95 && ((u - 0.5).abs() <= 0.22 || (u + 0.5).abs() <= 0.22),
            8 => disk(0.55, 0.0, 0.38) || disk(-0.55, 0.0, 0.38),
            _ => u.abs() + v.abs() <= 1.0,
        }
    } else {
        match class {
            0 => r2 <= 1.0 && v >= -0.1,
            1 => (0.45..=0.9).contains(&u.abs().max(v.abs())),
            2 => ((v - 0.65).abs() <= 0.25 && u.abs() <= 0.9) || (u.abs() <= 0.25 && (-0.9..=0.65).contains(&v)),
            3 => disk(-0.66, 0.0, 0.3) || disk(0.0, 0.0, 0.3) || disk(0.66, 0.0, 0.3),
            _ => r2 <= 0.1 || (0.42..=1.0).contains(&r2),
        }
    }
}

fn rotation_jitter(corpus: &str, class: usize) -> f64 {
    match (corpus, class) {
        (SOURCE_CORPUS, 8) | (TARGET_CORPUS, 3) => std::f64::consts::PI,
        _ => 0.2,
    }
}

fn vivid(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = [rng.random_range(0.0..0.35), rng.random_range(0.0..0.35), rng.random_range(0.0..0.35)];
    let k = rng.random_range(0..3);
    c[k] = rng.random_range(0.75..1.0);
    if rng.random::<bool>() {
        c[(k + 1) % 3] = rng.random_range(0.6..1.0);
    }
    c
}

fn render(rng: &mut ChaCha8Rng, corpus: &str, class: usize, shifted: bool, s: usize, out: &mut [f32]) {
    let cx = rng.random_range(0.38..0.62);
    let cy = rng.random_range(0.38..0.62);
    let scale = rng.random_range(0.24..0.34);
    let jitter = rotation_jitter(corpus, class);
    let theta = rng.random_range(-jitter..jitter);
    let flip = if rng.random::<bool>() { -1.0 } else { 1.0 };
    let (sin, cos) = theta.sin_cos();

    let (fg, bg, texture) = if shifted {
        // Desaturated, channel-swapped palette with textures unseen in the source.
        let base = vivid(rng);
        let grey = (base[0] + base[1] + base[2]) / 3.0;
        let fg = [0.25 + 0.5 * grey, 0.2 + 0.3 * base[2], 0.15 + 0.4 * base[0]];
        let bg = if rng.random::<bool>() {
            let lvl = rng.random_range(0.0..0.15);
            [0.9 - 0.5 * fg[0] - lvl, 0.85 - 0.4 * fg[2] - lvl, 0.9 - 0.45 * fg[1] - lvl]
        } else {
            let lvl = rng.random_range(0.0..0.2);
            [lvl + 0.1 * fg[1], lvl + 0.1 * fg[0], lvl]
        };
        (fg, bg, 4 + rng.random_range(0..2))
    } else {
        let fg = vivid(rng);
        let dark = rng.random::<bool>();
        let lvl = if dark { rng.random_range(0.0..0.2) } else { rng.random_range(0.0..0.15) };
        let bg = if dark { [lvl, lvl, lvl] } else { [1.0 - fg[0] * 0.6 - lvl, 1.0 - fg[1] * 0.6 - lvl, 1.0 - fg[2] * 0.6 - lvl] };
        (fg, bg, rng.random_range(0..4))
    };
    let period = rng.random_range(2..4) as f64;
    let speckle_seed = rng.next_u64();

    let px = 1.0 / s as f64;
    let plane = s * s;
    for y in 0..s {
        for x in 0..s {
            let mut cover = 0.0;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let gx = (x as f64 + ox) * px - cx;
                let gy = (y as f64 + oy) * px - cy;
                let u = (cos * gx + sin * gy) / scale;
                let v = flip * (-sin * gx + cos * gy) / scale;
                if inside(corpus, class, u, v) {
                    cover += 0.25;
                }
            }
            let shade = match texture {
                1 => ((y as f64 / period).floor() as i64 % 2) as f64,
                2 => (((x as f64 / period).floor() + (y as f64 / period).floor()) as i64 % 2) as f64,
                3 => ((x as f64 / period).floor() as i64 % 2) as f64,
                4 => (((x + y) as f64 / period).floor() as i64 % 2) as f64,
                5 => ((speckle_seed >> ((x * 7 + y * 13) % 64)) & 1) as f64,
                _ => 0.0,
            };
            let gain = 1.0 - 0.55 * shade;
            for c in 0..3 {
                let value = bg[c] * (1.0 - cover) + fg[c] * gain * cover;
                let noise: f64 = StandardNormal.sample(rng);
                out[c * plane + y * s + x] = (value + 0.04 * noise).clamp(0.0, 1.0) as f32;
            }
        }
    }
}
