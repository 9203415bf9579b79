//! Camera positions on a subdivided icosahedron.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{FcnrError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPoint {
    /// Polar angle from +z, in `[0, pi]`.
    pub theta: f64,
    /// Azimuth in `[0, 2 pi)`.
    pub phi_view: f64,
    pub position: [f64; 3],
}

impl ViewPoint {
    pub fn from_position(p: [f64; 3]) -> Self {
        let n = norm(p);
        let position = [p[0] / n, p[1] / n, p[2] / n];
        let theta = position[2].clamp(-1.0, 1.0).acos();
        let mut phi = position[1].atan2(position[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        ViewPoint {
            theta,
            phi_view: phi,
            position,
        }
    }

    pub fn from_angles(theta: f64, phi_view: f64) -> Self {
        ViewPoint {
            theta,
            phi_view,
            position: [theta.sin() * phi_view.cos(), theta.sin() * phi_view.sin(), theta.cos()],
        }
    }
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub const MAX_SUBDIVISION: u32 = 4;

/// Vertices of an icosahedron subdivided `level` times by edge midpoints and
/// projected onto the unit sphere: 12, 42, 162, 642, 2562 views.
pub fn icosphere_views(level: u32) -> Result<Vec<ViewPoint>> {
    if level > MAX_SUBDIVISION {
        return Err(FcnrError::InvalidArgument(format!(
            "subdivision level {level} outside [0, {MAX_SUBDIVISION}]"
        )));
    }
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = [
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ]
    .map(|p| {
        let n = norm(p);
        [p[0] / n, p[1] / n, p[2] / n]
    })
    .to_vec();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
                let n = norm(m);
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Ok(verts.into_iter().map(ViewPoint::from_position).collect())
}
