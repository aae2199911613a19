use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::{Mat3, Vec3};

/// Triangles with area at or below this are degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// One posed frame of the driving mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFrame {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Frame index.
    pub t: usize,
}

/// Local coordinate frame of a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFrame {
    /// Barycenter.
    pub origin: Vec3,
    /// Columns: normalized first edge, `normal × edge`, normal.
    pub rotation: Mat3,
    /// `sqrt(area)`.
    pub scale: f64,
}

impl TriangleFrame {
    pub fn normal(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }
}

impl MeshFrame {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, t: usize) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            t,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|v| *v >= self.vertices.len()) {
                return Err(Error::DegenerateGeometry(format!(
                    "triangle {i} references a vertex out of range"
                )));
            }
            if self.area(i) <= MIN_TRIANGLE_AREA {
                return Err(Error::DegenerateGeometry(format!(
                    "triangle {i} has zero area"
                )));
            }
        }
        Ok(())
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Point with barycentric coordinates `bary` on triangle `tri`.
    pub fn point_at(&self, tri: usize, bary: &[f64; 3]) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    pub fn same_topology(&self, other: &MeshFrame) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v);
        sum / self.vertices.len().max(1) as f64
    }

    /// Frames of every triangle, in triangle order.
    pub fn frames(&self) -> Result<Vec<TriangleFrame>> {
        (0..self.triangles.len())
            .map(|i| triangle_frame(self, i))
            .collect()
    }
}

/// Barycenter, orthonormal tangent frame and `sqrt(area)` of triangle `tri`.
pub fn triangle_frame(mesh: &MeshFrame, tri: usize) -> Result<TriangleFrame> {
    if tri >= mesh.triangles.len() {
        return Err(Error::Binding(format!(
            "triangle {tri} out of range ({} triangles)",
            mesh.triangles.len()
        )));
    }
    let [a, b, c] = mesh.corners(tri);
    let e1 = b - a;
    let e2 = c - a;
    let cross = e1.cross(&e2);
    let area = 0.5 * cross.norm();
    if !(area > MIN_TRIANGLE_AREA) || e1.norm() == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "triangle {tri} is degenerate"
        )));
    }
    let normal = cross / cross.norm();
    let tangent = e1 / e1.norm();
    let bitangent = normal.cross(&tangent).normalize();
    Ok(TriangleFrame {
        origin: (a + b + c) / 3.0,
        rotation: Mat3::from_columns(&[tangent, bitangent, normal]),
        scale: area.sqrt(),
    })
}

/// Closest point on triangle `(a, b, c)` to `p`, as barycentric coordinates.
pub fn closest_point_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}
