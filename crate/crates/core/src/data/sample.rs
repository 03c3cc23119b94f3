//! Uniform surface sampling of triangle meshes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::off::Mesh;
use crate::error::{Error, Result};

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Sample `n_points` points uniformly over the mesh surface: faces chosen
/// with probability proportional to area, positions by barycentric draw.
pub fn sample_surface(mesh: &Mesh, n_points: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 3]>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Dataset(
            "cannot sample mesh surface: all faces are degenerate (zero total area)".into(),
        ));
    }
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let t = rng.gen_range(0.0..total);
        let fi = cumulative.partition_point(|&c| c <= t).min(mesh.faces.len() - 1);
        let f = mesh.faces[fi];
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        let mut u: f64 = rng.gen_range(0.0..1.0);
        let mut v: f64 = rng.gen_range(0.0..1.0);
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push([
            a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
            a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
            a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
        ]);
    }
    Ok(points)
}
