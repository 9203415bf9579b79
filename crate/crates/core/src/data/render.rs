//! Software renderer for a time-varying analytic scalar field.
//!
//! The field is a mixture of Gaussian lobes orbiting the z axis. Isosurface
//! mode finds the first crossing of the isovalue along each ray and shades it
//! with a headlight; volume mode composites emission and absorption front to
//! back. The background is white.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::icosphere::ViewPoint;
use crate::data::raster::Raster;

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Shaded isosurface.
    #[default]
    Ir,
    /// Direct volume rendering.
    Dvr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub centre: Vec3,
    pub amplitude: f64,
    pub width: f64,
    pub colour: [f64; 3],
}

/// Parameters of the synthetic field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub lobes: usize,
    /// Rotation about z per timestep, radians.
    pub spin: f64,
    /// Vertical oscillation amplitude of the lobe centres.
    pub bob: f64,
    pub isovalue: f64,
    /// Absorption coefficient of volume mode.
    pub density: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            lobes: 6,
            spin: 0.35,
            bob: 0.12,
            isovalue: 0.5,
            density: 10.0,
        }
    }
}

/// A field whose lobes move with time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub lobes: Vec<Lobe>,
    pub spin: f64,
    pub bob: f64,
    pub isovalue: f64,
    pub density: f64,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.33, 0.25],
    [0.25, 0.55, 0.85],
    [0.35, 0.75, 0.35],
    [0.90, 0.70, 0.20],
    [0.60, 0.35, 0.75],
    [0.20, 0.70, 0.70],
];

impl Field {
    pub fn from_config(cfg: &FieldConfig, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lobes = (0..cfg.lobes)
            .map(|k| {
                let r = rng.random_range(0.25..0.6);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-0.45..0.45);
                Lobe {
                    centre: [r * a.cos(), r * a.sin(), z],
                    amplitude: rng.random_range(0.8..1.2),
                    width: rng.random_range(0.16..0.28),
                    colour: PALETTE[k % PALETTE.len()],
                }
            })
            .collect();
        Field {
            lobes,
            spin: cfg.spin,
            bob: cfg.bob,
            isovalue: cfg.isovalue,
            density: cfg.density,
        }
    }

    /// Lobe positions at timestep `t`.
    pub fn at(&self, t: f64) -> Vec<Lobe> {
        let (s, c) = (self.spin * t).sin_cos();
        self.lobes
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let [x, y, z] = l.centre;
                let dz = self.bob * (0.9 * t + k as f64).sin();
                Lobe {
                    centre: [c * x - s * y, s * x + c * y, z + dz],
                    ..*l
                }
            })
            .collect()
    }
}

/// Value, gradient and lobe-weighted colour at `p`.
fn sample(lobes: &[Lobe], p: Vec3) -> (f64, Vec3, [f64; 3]) {
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    let mut colour = [0.0; 3];
    for l in lobes {
        let d = [p[0] - l.centre[0], p[1] - l.centre[1], p[2] - l.centre[2]];
        let inv = 1.0 / (2.0 * l.width * l.width);
        let g = l.amplitude * (-dot(d, d) * inv).exp();
        value += g;
        grad = add(grad, scale(d, -2.0 * inv * g));
        colour = add(colour, scale(l.colour, g));
    }
    if value > 0.0 {
        colour = scale(colour, 1.0 / value);
    }
    (value, grad, colour)
}

fn value_at(lobes: &[Lobe], p: Vec3) -> f64 {
    lobes
        .iter()
        .map(|l| {
            let d = [p[0] - l.centre[0], p[1] - l.centre[1], p[2] - l.centre[2]];
            l.amplitude * (-dot(d, d) / (2.0 * l.width * l.width)).exp()
        })
        .sum()
}

const CAMERA_DISTANCE: f64 = 3.2;
const BOUNDS_RADIUS: f64 = 1.25;
const HALF_FOV_TAN: f64 = 0.32;
const MARCH_STEPS: usize = 160;

/// Orthonormal camera frame `(forward, right, up)` looking at the origin.
fn camera_frame(view: &ViewPoint) -> (Vec3, Vec3, Vec3) {
    let forward = scale(normalize(view.position), -1.0);
    let world_up = if forward[2].abs() > 0.99 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let right = normalize(cross(forward, world_up));
    let up = cross(right, forward);
    (forward, right, up)
}

/// Entry and exit distances of a ray through the bounding sphere.
fn chord(origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let b = dot(origin, dir);
    let c = dot(origin, origin) - BOUNDS_RADIUS * BOUNDS_RADIUS;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let r = disc.sqrt();
    Some(((-b - r).max(0.0), -b + r))
}

fn shade_isosurface(lobes: &[Lobe], iso: f64, origin: Vec3, dir: Vec3, near: f64, far: f64) -> [f64; 3] {
    let step = (far - near) / MARCH_STEPS as f64;
    let mut prev_t = near;
    if value_at(lobes, add(origin, scale(dir, near))) >= iso {
        return shade_hit(lobes, origin, dir, near);
    }
    for i in 1..=MARCH_STEPS {
        let t = near + step * i as f64;
        let cur = value_at(lobes, add(origin, scale(dir, t))) - iso;
        if cur >= 0.0 {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if value_at(lobes, add(origin, scale(dir, mid))) - iso >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return shade_hit(lobes, origin, dir, 0.5 * (lo + hi));
        }
        prev_t = t;
    }
    [1.0; 3]
}

fn shade_hit(lobes: &[Lobe], origin: Vec3, dir: Vec3, t: f64) -> [f64; 3] {
    let (_, grad, colour) = sample(lobes, add(origin, scale(dir, t)));
    let glen = dot(grad, grad).sqrt();
    let lambert = if glen > 0.0 { (dot(grad, dir) / glen).abs() } else { 1.0 };
    let light = 0.15 + 0.85 * lambert;
    colour.map(|c| (c * light).clamp(0.0, 1.0))
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let u = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn composite_volume(lobes: &[Lobe], density: f64, origin: Vec3, dir: Vec3, near: f64, far: f64) -> [f64; 3] {
    let step = (far - near) / MARCH_STEPS as f64;
    let mut acc = [0.0; 3];
    let mut alpha = 0.0;
    for i in 0..MARCH_STEPS {
        let t = near + step * (i as f64 + 0.5);
        let (v, _, colour) = sample(lobes, add(origin, scale(dir, t)));
        let a = 1.0 - (-density * smoothstep(0.1, 0.9, v) * step).exp();
        if a <= 0.0 {
            continue;
        }
        let brightness = 0.55 + 0.45 * smoothstep(0.2, 1.0, v);
        let w = (1.0 - alpha) * a;
        acc = add(acc, scale(colour, w * brightness));
        alpha += w;
        if alpha > 0.995 {
            break;
        }
    }
    acc.map(|c| (c + (1.0 - alpha)).clamp(0.0, 1.0))
}

/// Render `field` at timestep `t` from `view`.
pub fn render(field: &Field, t: f64, view: &ViewPoint, mode: RenderMode, height: usize, width: usize) -> Raster {
    let lobes = field.at(t);
    let (forward, right, up) = camera_frame(view);
    let origin = scale(normalize(view.position), CAMERA_DISTANCE);
    let aspect = width as f64 / height as f64;
    let mut img = Raster::filled(height, width, 1.0);
    for y in 0..height {
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / height as f64) * HALF_FOV_TAN;
        for x in 0..width {
            let sx = (2.0 * (x as f64 + 0.5) / width as f64 - 1.0) * HALF_FOV_TAN * aspect;
            let dir = normalize(add(forward, add(scale(right, sx), scale(up, sy))));
            let Some((near, far)) = chord(origin, dir) else {
                continue;
            };
            let rgb = match mode {
                RenderMode::Ir => shade_isosurface(&lobes, field.isovalue, origin, dir, near, far),
                RenderMode::Dvr => composite_volume(&lobes, field.density, origin, dir, near, far),
            };
            img.set_rgb(y, x, rgb.map(|c| c as f32));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_field() -> Field {
        let half = [
            ([0.45, 0.1, 0.2], [0.8, 0.3, 0.2]),
            ([-0.1, 0.5, -0.3], [0.2, 0.5, 0.8]),
        ];
        let lobes = half
            .iter()
            .flat_map(|&(c, colour)| {
                [1.0, -1.0].map(|s| Lobe {
                    centre: scale(c, s),
                    amplitude: 1.0,
                    width: 0.22,
                    colour,
                })
            })
            .collect();
        Field {
            lobes,
            spin: 0.0,
            bob: 0.0,
            isovalue: 0.5,
            density: 10.0,
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let field = Field::from_config(&FieldConfig::default(), 3);
        let view = ViewPoint::from_angles(1.0, 0.7);
        for mode in [RenderMode::Ir, RenderMode::Dvr] {
            let a = render(&field, 2.0, &view, mode, 24, 32);
            let b = render(&field, 2.0, &view, mode, 24, 32);
            assert_eq!(a, b);
            assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
            // Something other than background is visible.
            assert!(a.data.iter().any(|v| *v < 0.9), "{mode:?}");
        }
    }

    #[test]
    fn antipodal_views_of_symmetric_field_are_vertical_mirrors() {
        let field = symmetric_field();
        let view = ViewPoint::from_angles(1.2, 0.4);
        let opposite = ViewPoint::from_position(scale(view.position, -1.0));
        for mode in [RenderMode::Ir, RenderMode::Dvr] {
            let a = render(&field, 0.0, &view, mode, 32, 32);
            let b = render(&field, 0.0, &opposite, mode, 32, 32);
            let mut worst = 0.0f32;
            for c in 0..3 {
                for y in 0..32 {
                    for x in 0..32 {
                        worst = worst.max((a.get(c, y, x) - b.get(c, 31 - y, x)).abs());
                    }
                }
            }
            assert!(worst < 1e-4, "{mode:?}: {worst}");
            assert_ne!(a, b);
        }
    }

    #[test]
    fn time_moves_the_lobes() {
        let field = Field::from_config(&FieldConfig::default(), 3);
        let view = ViewPoint::from_angles(0.9, 2.0);
        assert_ne!(
            render(&field, 0.0, &view, RenderMode::Ir, 16, 16),
            render(&field, 3.0, &view, RenderMode::Ir, 16, 16)
        );
    }
}
