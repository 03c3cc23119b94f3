//! Synthetic point-cloud families.
//!
//! Each family samples points uniformly on a simple surface; a per-sample
//! random scale in [0.8, 1.2] and a random rotation about the vertical (z)
//! axis provide within-class variety. Clouds come out un-normalized so the
//! raw scale is observable; normalization happens downstream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    /// Flat sheet with a few Gaussian bumps.
    Plane,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Torus,
        ShapeFamily::Plane,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Plane => "plane",
        }
    }
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "unknown shape family {s:?} (expected one of sphere, cube, cylinder, torus, plane)"
                ))
            })
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One raw cloud: scale and rotation drawn first, then `n_points` surface
/// points. Un-normalized; sphere clouds have point norms in [0.8, 1.2].
pub fn raw_cloud(family: ShapeFamily, n_points: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let scale: f64 = rng.gen_range(0.8..1.2);
    let angle: f64 = rng.gen_range(0.0..2.0 * PI);
    let (sin_a, cos_a) = angle.sin_cos();
    let mut points = Vec::with_capacity(n_points);
    let sampler = surface_sampler(family, rng);
    for _ in 0..n_points {
        let [x, y, z] = sampler.point(rng);
        points.push([
            scale * (x * cos_a - y * sin_a),
            scale * (x * sin_a + y * cos_a),
            scale * z,
        ]);
    }
    points
}

enum Sampler {
    Sphere,
    Cube,
    Cylinder { radius: f64, half_height: f64 },
    Torus { major: f64, minor: f64 },
    Plane { bumps: Vec<([f64; 2], f64)>, sigma: f64 },
}

fn surface_sampler(family: ShapeFamily, rng: &mut ChaCha8Rng) -> Sampler {
    match family {
        ShapeFamily::Sphere => Sampler::Sphere,
        ShapeFamily::Cube => Sampler::Cube,
        ShapeFamily::Cylinder => Sampler::Cylinder {
            radius: 0.7,
            half_height: 1.0,
        },
        ShapeFamily::Torus => Sampler::Torus {
            major: 0.75,
            minor: 0.3,
        },
        ShapeFamily::Plane => {
            let bumps = (0..3)
                .map(|_| {
                    let cx = rng.gen_range(-0.6..0.6);
                    let cy = rng.gen_range(-0.6..0.6);
                    let amp = rng.gen_range(0.2..0.5);
                    ([cx, cy], amp)
                })
                .collect();
            Sampler::Plane { bumps, sigma: 0.25 }
        }
    }
}

impl Sampler {
    fn point(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            Sampler::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    return [v[0] / norm, v[1] / norm, v[2] / norm];
                }
            },
            Sampler::Cube => {
                let face = rng.gen_range(0..6usize);
                let u = rng.gen_range(-1.0..1.0);
                let v = rng.gen_range(-1.0..1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            &Sampler::Cylinder {
                radius,
                half_height,
            } => {
                let lateral = 2.0 * PI * radius * 2.0 * half_height;
                let caps = 2.0 * PI * radius * radius;
                if rng.gen_range(0.0..lateral + caps) < lateral {
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    let z = rng.gen_range(-half_height..half_height);
                    [radius * theta.cos(), radius * theta.sin(), z]
                } else {
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
                    let z = if rng.gen_bool(0.5) { half_height } else { -half_height };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            Sampler::Torus { major, minor } => {
                let u = rng.gen_range(0.0..2.0 * PI);
                // area element scales with major + minor·cos(v): rejection-sample v
                let v = loop {
                    let cand = rng.gen_range(0.0..2.0 * PI);
                    let accept = (major + minor * cand.cos()) / (major + minor);
                    if rng.gen_range(0.0..1.0) < accept {
                        break cand;
                    }
                };
                let ring = major + minor * v.cos();
                [ring * u.cos(), ring * u.sin(), minor * v.sin()]
            }
            Sampler::Plane { bumps, sigma } => {
                let x = rng.gen_range(-1.0..1.0);
                let y = rng.gen_range(-1.0..1.0);
                let mut z = 0.0;
                for ([cx, cy], amp) in bumps {
                    let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    z += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
                [x, y, z]
            }
        }
    }
}
