//! Fixed-topology triangle meshes: validation, file I/O, spiral orderings,
//! the pooling hierarchy, and enclosed volume.

mod hierarchy;
mod io;
mod sparse;
mod spiral;

pub use hierarchy::{build_hierarchy, HierarchyLevel, SamplingHierarchy};
pub use io::{load_mesh, save_mesh, MeshFormat};
pub use sparse::SparseMatrix;
pub use spiral::{compute_spirals, ordered_one_ring, SpiralIndexSet};

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("face {face}: index {index} out of range (mesh has {num_vertices} vertices)")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        num_vertices: usize,
    },
    #[error("face {face} is degenerate: {indices:?}")]
    DegenerateFace { face: usize, indices: [usize; 3] },
    #[error("vertex {0} is non-manifold")]
    NonManifoldVertex(usize),
    #[error("vertex {0} is isolated")]
    IsolatedVertex(usize),
    #[error("open mesh: edge ({0}, {1}) lies on a boundary")]
    OpenMesh(usize, usize),
    #[error("unsupported mesh format '{0}'")]
    UnsupportedFormat(String),
    #[error("cannot decimate level {level} from {from} to {target} vertices")]
    Decimation {
        level: usize,
        from: usize,
        target: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Triangle mesh with vertex coordinates and index-triple faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh, rejecting out-of-range indices and degenerate faces.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: idx,
                        num_vertices: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace {
                    face: fi,
                    indices: *f,
                });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same topology, new coordinates.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::TopologyMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// True when both meshes have the same vertex count and identical face lists.
    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// Coordinates flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        }
    }

    /// Vertex adjacency lists, sorted ascending.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// First edge used by exactly one face, if any.
    pub fn boundary_edge(&self) -> Option<(usize, usize)> {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut open: Vec<_> = counts
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect();
        open.sort_unstable();
        open.first().copied()
    }
}

/// Enclosed volume as the sum of signed tetrahedra spanned by each face and
/// the origin. Positive for outward-oriented closed meshes.
pub fn mesh_volume(mesh: &TriMesh) -> Result<f64> {
    if let Some((a, b)) = mesh.boundary_edge() {
        return Err(MeshError::OpenMesh(a, b));
    }
    Ok(signed_volume(mesh.vertices(), mesh.faces()))
}

/// Signed volume without the closedness check; used on decoded meshes whose
/// topology is already known to be closed.
pub fn signed_volume(vertices: &[Point3], faces: &[[usize; 3]]) -> f64 {
    let mut total = 0.0;
    for f in faces {
        let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let cross = [
            b[1] * c[2] - b[2] * c[1],
            b[2] * c[0] - b[0] * c[2],
            b[0] * c[1] - b[1] * c[0],
        ];
        total += a[0] * cross[0] + a[1] * cross[1] + a[2] * cross[2];
    }
    total / 6.0
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn rejects_degenerate_and_out_of_range() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(matches!(
            TriMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            TriMesh::new(v, vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace { face: 0, .. })
        ));
    }

    #[test]
    fn unit_cube_volume() {
        let v = mesh_volume(&unit_cube()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flipped_winding_negates_volume() {
        let cube = unit_cube();
        let v = mesh_volume(&cube.flipped()).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let ico = icosahedron();
        let a = mesh_volume(&ico).unwrap();
        let b = mesh_volume(&ico.flipped()).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, -b);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let cube = unit_cube();
        let mut faces = cube.faces().to_vec();
        faces.pop();
        let open = TriMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert!(matches!(mesh_volume(&open), Err(MeshError::OpenMesh(..))));
    }
}
