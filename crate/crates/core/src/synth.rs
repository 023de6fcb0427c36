//! Procedural scenes: boxes and spheres on a ground plane, rendered to RGB,
//! dense groundtruth depth and a simulated Radar raster.
//!
//! Three independent random streams are derived from the sample seed (scene
//! layout, Radar returns, weather corruption), so changing the weather of a
//! scene leaves its depth and Radar data untouched.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{project_points, CameraIntrinsics, PointCloud, RigidPose};
use crate::image::{DepthMap, RgbImage, SparseDepthImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Weather {
    #[default]
    Day,
    Night,
    Fog,
    Rain,
    Cloudy,
}

impl Weather {
    pub const ALL: [Weather; 5] = [Self::Day, Self::Night, Self::Fog, Self::Rain, Self::Cloudy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Day => "day",
            Self::Night => "night",
            Self::Fog => "fog",
            Self::Rain => "rain",
            Self::Cloudy => "cloudy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|w| w.name() == s)
    }
}

/// Fog extinction coefficient per meter.
pub const FOG_BETA: f64 = 0.08;
const FOG_GRAY: f64 = 0.7;
const NIGHT_GAIN: f64 = 0.25;
const NIGHT_NOISE: f64 = 0.02;
const CLOUDY_CONTRAST: f64 = 0.8;
/// Radar depth noise is Gaussian truncated at this many standard deviations.
pub const RADAR_NOISE_TRUNCATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub id: String,
    pub weather: Weather,
    pub seed: u64,
}

/// Aligned RGB image, sparse Radar raster and dense groundtruth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: RgbImage,
    pub sparse: SparseDepthImage,
    pub gt: DepthMap,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.gt.width
    }

    pub fn height(&self) -> usize {
        self.gt.height
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gt.same_extent(&self.sparse) || self.rgb.width != self.gt.width || self.rgb.height != self.gt.height {
            return Err(Error::InvalidArgument(format!("sample `{}` rasters differ in size", self.meta.id)));
        }
        if self.gt.data.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidArgument(format!("sample `{}` has non-positive groundtruth", self.meta.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    /// Camera height above the ground plane in meters.
    pub camera_height: f64,
    pub primitives: usize,
    /// Range of primitive center depths.
    pub primitive_depth: (f64, f64),
    pub weather: Weather,
    /// Expected number of Radar returns (Poisson mean).
    pub radar_returns: f64,
    pub radar_noise_sigma: f64,
    /// Rows sampled by the Radar, as fractions of the image height relative
    /// to the principal row: `[cy + lo·H, cy + hi·H]`.
    pub radar_band: (f64, f64),
    pub d_min: f64,
    pub d_max: f64,
}

impl SceneSpec {
    /// Camera with a 0.9·width focal length and the horizon on the middle row.
    pub fn for_size(width: usize, height: usize) -> Self {
        let f = 0.9 * width as f64;
        Self {
            intrinsics: CameraIntrinsics {
                fx: f,
                fy: f,
                cx: (width / 2) as f64,
                cy: (height / 2) as f64,
                width,
                height,
            },
            camera_height: 1.5,
            primitives: 6,
            primitive_depth: (2.0, 60.0),
            weather: Weather::Day,
            radar_returns: 40.0,
            radar_noise_sigma: 0.1,
            radar_band: (-0.15, 0.35),
            d_min: 0.5,
            d_max: 80.0,
        }
    }

    pub fn with_weather(mut self, weather: Weather) -> Self {
        self.weather = weather;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (lo, hi) = self.primitive_depth;
        let ok = self.camera_height > 0.0
            && self.d_min > 0.0
            && self.d_max > self.d_min
            && lo >= self.d_min + 1.5
            && hi <= self.d_max
            && lo <= hi
            && self.radar_returns >= 0.0
            && self.radar_noise_sigma >= 0.0
            && self.radar_band.0 <= self.radar_band.1;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid scene spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape3 {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Primitive {
    shape: Shape3,
    albedo: [f64; 3],
}

/// Hit distance along a ray with unit z component (so `t` is the depth)
/// and the surface normal there.
fn intersect(shape: &Shape3, dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
    match *shape {
        Shape3::Box { min, max } => {
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            let mut axis = 0;
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if 0.0 < min[a] || 0.0 > max[a] {
                        return None;
                    }
                    continue;
                }
                let (mut near, mut far) = (min[a] / dir[a], max[a] / dir[a]);
                if near > far {
                    core::mem::swap(&mut near, &mut far);
                }
                if near > t0 {
                    t0 = near;
                    axis = a;
                }
                t1 = t1.min(far);
                if t0 > t1 {
                    return None;
                }
            }
            if t0 <= 0.0 {
                return None;
            }
            let mut n = [0.0; 3];
            n[axis] = -dir[axis].signum();
            Some((t0, n))
        }
        Shape3::Sphere { center, radius } => {
            let dd = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
            let dc = dir[0] * center[0] + dir[1] * center[1] + dir[2] * center[2];
            let cc = center[0] * center[0] + center[1] * center[1] + center[2] * center[2];
            let disc = dc * dc - dd * (cc - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let t = (dc - libm::sqrt(disc)) / dd;
            if t <= 0.0 {
                return None;
            }
            let p = [dir[0] * t, dir[1] * t, dir[2] * t];
            let n = [(p[0] - center[0]) / radius, (p[1] - center[1]) / radius, (p[2] - center[2]) / radius];
            Some((t, n))
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let k = &spec.intrinsics;
    let ground = spec.camera_height;
    (0..spec.primitives)
        .map(|_| {
            let z = rng.random_range(spec.primitive_depth.0..=spec.primitive_depth.1);
            let half_fov = (k.width as f64 - k.cx).max(k.cx) / k.fx;
            let x = rng.random_range(-half_fov..=half_fov) * z;
            let albedo = [rng.random_range(0.15..0.95), rng.random_range(0.15..0.95), rng.random_range(0.15..0.95)];
            let shape = if rng.random_bool(0.6) {
                let hw = rng.random_range(0.3..1.5);
                let hd = rng.random_range(0.3..1.5);
                let height = rng.random_range(0.5..3.0);
                Shape3::Box { min: [x - hw, ground - height, z - hd], max: [x + hw, ground, z + hd] }
            } else {
                let r = rng.random_range(0.4..1.5);
                Shape3::Sphere { center: [x, ground - r, z], radius: r }
            };
            Primitive { shape, albedo }
        })
        .collect()
}

const TO_LIGHT: [f64; 3] = [-0.3713906763541037, -0.7427813527082074, -0.5570860145311556];

/// Renders the scene: returns linear RGB before weather, and clamped depth.
fn render(spec: &SceneSpec, prims: &[Primitive]) -> (RgbImage, DepthMap) {
    let k = &spec.intrinsics;
    let mut rgb = RgbImage::new(k.width, k.height);
    let mut gt = DepthMap::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let dir = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let mut best: Option<(f64, [f64; 3], [f64; 3])> = None;
            if dir[1] > 0.0 {
                let t = spec.camera_height / dir[1];
                let (gx, gz) = (dir[0] * t, t);
                let checker = ((libm::floor(gx / 2.0) + libm::floor(gz / 2.0)) as i64).rem_euclid(2) as f64;
                let g = 0.38 + 0.12 * checker;
                best = Some((t, [0.0, -1.0, 0.0], [g, g * 0.97, g * 0.92]));
            }
            for p in prims {
                if let Some((t, n)) = intersect(&p.shape, dir) {
                    if best.map_or(true, |b| t < b.0) {
                        best = Some((t, n, p.albedo));
                    }
                }
            }
            let (depth, color) = match best {
                Some((t, n, albedo)) => {
                    let lambert = (n[0] * TO_LIGHT[0] + n[1] * TO_LIGHT[1] + n[2] * TO_LIGHT[2]).max(0.0);
                    let shade = (0.3 + 0.7 * lambert) / (1.0 + 0.01 * t);
                    (t, albedo.map(|a| a * shade))
                }
                None => {
                    let up = ((k.cy - v as f64) / k.height as f64).clamp(0.0, 1.0);
                    (spec.d_max, [0.65 - 0.2 * up, 0.75 - 0.1 * up, 0.92])
                }
            };
            gt.set(u, v, depth.clamp(spec.d_min, spec.d_max));
            rgb.set_pixel(u, v, color.map(|c| c.clamp(0.0, 1.0) as f32));
        }
    }
    (rgb, gt)
}

/// Corrupts `rgb` according to `weather`; depth is only read.
pub fn apply_weather(rgb: &mut RgbImage, gt: &DepthMap, weather: Weather, rng: &mut impl Rng) {
    let clamp = |x: f64| x.clamp(0.0, 1.0) as f32;
    match weather {
        Weather::Day => {}
        Weather::Fog => {
            for (i, px) in rgb.data.chunks_exact_mut(3).enumerate() {
                let t = libm::exp(-FOG_BETA * gt.data[i]);
                for c in px {
                    *c = clamp(*c as f64 * t + FOG_GRAY * (1.0 - t));
                }
            }
        }
        Weather::Night => {
            let noise = Normal::new(0.0, NIGHT_NOISE).expect("positive std");
            for c in &mut rgb.data {
                *c = clamp(*c as f64 * NIGHT_GAIN + noise.sample(rng));
            }
        }
        Weather::Rain => {
            for c in &mut rgb.data {
                *c = clamp(*c as f64 * 0.9);
            }
            let (w, h) = (rgb.width, rgb.height);
            let streaks = (w * h / 40).max(1);
            for _ in 0..streaks {
                let x = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                let len = rng.random_range(3..=8);
                for y in y0..(y0 + len).min(h) {
                    let mut px = rgb.pixel(x, y);
                    for c in &mut px {
                        *c = clamp(0.6 * *c as f64 + 0.4 * 0.85);
                    }
                    rgb.set_pixel(x, y, px);
                }
            }
        }
        Weather::Cloudy => {
            let mean = rgb.data.iter().map(|&c| c as f64).sum::<f64>() / rgb.data.len() as f64;
            for c in &mut rgb.data {
                *c = clamp(mean + (*c as f64 - mean) * CLOUDY_CONTRAST);
            }
        }
    }
}

/// Radar returns: Poisson count, pixels drawn uniformly from the elevation
/// band, range perturbed by truncated Gaussian noise, then projected.
fn simulate_radar(spec: &SceneSpec, gt: &DepthMap, rng: &mut ChaCha8Rng) -> SparseDepthImage {
    let k = &spec.intrinsics;
    let count = if spec.radar_returns > 0.0 {
        Poisson::new(spec.radar_returns).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let h = k.height as f64;
    let top = libm::floor(k.cy + spec.radar_band.0 * h).clamp(0.0, h - 1.0) as usize;
    let bottom = libm::floor(k.cy + spec.radar_band.1 * h).clamp(0.0, h - 1.0) as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random_range(0..k.width);
        let v = rng.random_range(top..=bottom);
        let noise = loop {
            let n: f64 = StandardNormal.sample(rng);
            if n.abs() <= RADAR_NOISE_TRUNCATION {
                break n;
            }
        };
        let depth = gt.get(u, v);
        if depth >= spec.d_max {
            // Open sky: no return.
            continue;
        }
        let z = (depth + spec.radar_noise_sigma * noise).clamp(spec.d_min, spec.d_max);
        points.push(k.unproject(u as f64, v as f64, z));
    }
    project_points(&PointCloud::new(points), &RigidPose::identity(), k)
}

pub fn generate_sample(spec: &SceneSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let prims = layout(spec, &mut stream(seed, 0));
    let (mut rgb, gt) = render(spec, &prims);
    let sparse = simulate_radar(spec, &gt, &mut stream(seed, 1));
    apply_weather(&mut rgb, &gt, spec.weather, &mut stream(seed, 2));
    Ok(Sample { rgb, sparse, gt, meta: SampleMeta { id: format!("{seed:08}"), weather: spec.weather, seed } })
}

/// Weighted mixture of weather conditions, e.g. `day:0.4,fog:0.6`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherMix {
    entries: Vec<(Weather, f64)>,
}

impl WeatherMix {
    pub fn single(weather: Weather) -> Self {
        Self { entries: alloc::vec![(weather, 1.0)] }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, w) = part.split_once(':').unwrap_or((part, "1"));
            let weather = Weather::parse(name.trim())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown weather `{name}`")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad weight in `{part}`")))?;
            if !(w >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative weight in `{part}`")));
            }
            entries.push((weather, w));
        }
        if entries.is_empty() || entries.iter().all(|e| e.1 == 0.0) {
            return Err(Error::InvalidArgument(format!("empty weather mix `{s}`")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(Weather, f64)] {
        &self.entries
    }

    /// Weather at cumulative probability `u ∈ [0, 1)`.
    pub fn pick(&self, u: f64) -> Weather {
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        let mut acc = 0.0;
        for &(w, p) in &self.entries {
            acc += p / total;
            if u < acc {
                return w;
            }
        }
        self.entries.iter().rev().find(|e| e.1 > 0.0).map(|e| e.0).unwrap_or_default()
    }
}
