use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 1-D heightfield sampled at a fixed spacing starting at `origin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub samples: Vec<f64>,
    pub spacing: f64,
    pub origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainParams {
    pub length: f64,
    pub spacing: f64,
    /// Start of the heightfield, m.
    pub origin: f64,
    pub max_height: f64,
    pub octaves: usize,
    /// Wavelength of the first octave, m.
    pub base_wavelength: f64,
    pub noise_amplitude: f64,
    pub uniform_noise: f64,
    pub blocks: usize,
    pub block_height: f64,
    pub block_width: (f64, f64),
    pub slopes: usize,
    pub slope_gradient: f64,
    /// Height differences between neighbouring samples are clipped to this
    /// gradient times the spacing. Values ≤ 0 disable the cutoff.
    pub max_gradient: f64,
    /// Flat run-up at the start so episodes begin on level ground, m.
    pub flat_start: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            length: 60.0,
            spacing: 0.05,
            origin: -5.0,
            max_height: 0.75,
            octaves: 3,
            base_wavelength: 6.0,
            noise_amplitude: 1.0,
            uniform_noise: 0.02,
            blocks: 8,
            block_height: 0.3,
            block_width: (0.4, 1.5),
            slopes: 3,
            slope_gradient: 0.25,
            max_gradient: 1.0,
            flat_start: 0.0,
        }
    }
}

impl TerrainParams {
    pub fn flat() -> Self {
        Self {
            noise_amplitude: 0.0,
            uniform_noise: 0.0,
            blocks: 0,
            block_height: 0.0,
            slopes: 0,
            slope_gradient: 0.0,
            ..Self::default()
        }
    }
}

impl Terrain {
    pub fn flat(origin: f64, length: f64, spacing: f64) -> Self {
        let n = (length / spacing).round() as usize + 1;
        Self {
            samples: vec![0.0; n],
            spacing,
            origin,
        }
    }

    /// Linearly interpolated height; queries outside the samples clamp to the edge.
    pub fn height_at(&self, x: f64) -> f64 {
        let n = self.samples.len();
        if n == 0 {
            return 0.0;
        }
        let u = (x - self.origin) / self.spacing;
        if u <= 0.0 {
            return self.samples[0];
        }
        let i = u.floor() as usize;
        if i + 1 >= n {
            return self.samples[n - 1];
        }
        let f = u - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }

    /// dh/dx of the interpolant at `x` (zero beyond the edges).
    pub fn slope_at(&self, x: f64) -> f64 {
        let n = self.samples.len();
        let u = (x - self.origin) / self.spacing;
        if n < 2 || u <= 0.0 {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= n {
            return 0.0;
        }
        (self.samples[i + 1] - self.samples[i]) / self.spacing
    }

    /// Lookup of `x` clamped to the nearest sample (no interpolation).
    pub fn nearest(&self, x: f64) -> f64 {
        let n = self.samples.len();
        if n == 0 {
            return 0.0;
        }
        let u = ((x - self.origin) / self.spacing).round();
        let i = u.clamp(0.0, (n - 1) as f64) as usize;
        self.samples[i]
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// 1-D gradient noise over a lattice of random slopes.
fn perlin(lattice: &[f64], x: f64) -> f64 {
    let i = x.floor();
    let f = x - i;
    let i = i as usize;
    let g0 = lattice[i % lattice.len()];
    let g1 = lattice[(i + 1) % lattice.len()];
    let a = g0 * f;
    let b = g1 * (f - 1.0);
    a + fade(f) * (b - a)
}

pub fn generate_terrain(seed: u64, params: &TerrainParams) -> Terrain {
    let p = params;
    let spacing = p.spacing.max(1e-6);
    let n = (p.length / spacing).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0; n];
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();

    if p.noise_amplitude != 0.0 {
        let mut amp = p.noise_amplitude;
        let mut wl = p.base_wavelength.max(spacing);
        for _ in 0..p.octaves {
            let cells = (p.length / wl).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..cells).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (k, &x) in xs.iter().enumerate() {
                h[k] += amp * perlin(&lattice, x / wl);
            }
            amp *= 0.5;
            wl *= 0.5;
        }
    }
    if p.uniform_noise != 0.0 {
        for v in &mut h {
            *v += rng.random_range(-p.uniform_noise..=p.uniform_noise);
        }
    }
    for _ in 0..p.blocks {
        let start = rng.random_range(0.0..p.length);
        let (lo, hi) = p.block_width;
        let width = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let height = p.block_height * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for (k, &x) in xs.iter().enumerate() {
            if x >= start && x < start + width {
                h[k] += height;
            }
        }
    }
    for _ in 0..p.slopes {
        let start = rng.random_range(0.0..p.length);
        let len = rng.random_range(1.0..4.0);
        let grad = p.slope_gradient * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for (k, &x) in xs.iter().enumerate() {
            if x >= start {
                h[k] += grad * (x - start).min(len);
            }
        }
    }
    if p.max_gradient > 0.0 {
        let step = p.max_gradient * spacing;
        for k in 1..n {
            let d = (h[k] - h[k - 1]).clamp(-step, step);
            h[k] = h[k - 1] + d;
        }
    }
    let flat = ((p.flat_start / spacing).round() as usize).min(n);
    if flat > 0 && flat < n {
        let base = h[flat];
        for v in &mut h[..flat] {
            *v = base;
        }
    }

    let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        for v in &mut h {
            *v = -p.max_height + 2.0 * p.max_height * (*v - lo) / (hi - lo);
        }
    } else {
        h.iter_mut().for_each(|v| *v = 0.0);
    }
    Terrain {
        samples: h,
        spacing,
        origin: p.origin,
    }
}

/// Number of samples in a heightfield window.
pub const WINDOW_SAMPLES: usize = 32;
/// Backward and forward extent of the window along the heading, m.
pub const WINDOW_BACK: f64 = 1.0;
pub const WINDOW_FORWARD: f64 = 2.4;

/// Heights at `WINDOW_SAMPLES` points spanning `[-WINDOW_BACK, WINDOW_FORWARD]`
/// along `heading` (±1) from `root_x`, relative to the ground under the root.
pub fn heightfield_window(terrain: &Terrain, root_x: f64, heading: f64) -> Vec<f64> {
    let dir = if heading < 0.0 { -1.0 } else { 1.0 };
    let base = terrain.nearest(root_x);
    let span = WINDOW_BACK + WINDOW_FORWARD;
    (0..WINDOW_SAMPLES)
        .map(|k| {
            let s = -WINDOW_BACK + span * k as f64 / (WINDOW_SAMPLES - 1) as f64;
            terrain.nearest(root_x + dir * s) - base
        })
        .collect()
}
