//! Coarse-to-fine template hierarchy for mesh pooling.
//!
//! Each coarser template comes from quadric-error-metric half-edge collapse of
//! the previous one, so coarse vertices are a subset of fine vertices. Pooling
//! selects the surviving vertices; unpooling interpolates every fine vertex
//! from the coarse triangle nearest to it with barycentric weights.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sparse::SparseTriplets;
use super::{MeshError, Point3, Result, SparseMatrix, TriMesh};

/// One template per level plus the maps between neighbouring levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingHierarchy {
    factors: Vec<f64>,
    templates: Vec<TriMesh>,
    down: Vec<SparseMatrix>,
    up: Vec<SparseMatrix>,
}

/// Borrowed view of level `ℓ`: its template and, for all but the coarsest
/// level, the maps to and from level `ℓ + 1`.
pub struct HierarchyLevel<'a> {
    pub template: &'a TriMesh,
    pub down: Option<&'a SparseMatrix>,
    pub up: Option<&'a SparseMatrix>,
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    version: u32,
    factors: Vec<f64>,
    level_sizes: Vec<usize>,
    levels: Vec<LevelFile>,
    down: Vec<SparseTriplets>,
    up: Vec<SparseTriplets>,
}

#[derive(Serialize, Deserialize)]
struct LevelFile {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

const HIERARCHY_VERSION: u32 = 1;

impl SamplingHierarchy {
    /// Number of pooling stages.
    pub fn depth(&self) -> usize {
        self.down.len()
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn template(&self, level: usize) -> &TriMesh {
        &self.templates[level]
    }

    /// Pooling map from level `level` to `level + 1`, shape `N₊₁ × N`.
    pub fn down(&self, level: usize) -> &SparseMatrix {
        &self.down[level]
    }

    /// Unpooling map from level `level + 1` back to `level`, shape `N × N₊₁`.
    pub fn up(&self, level: usize) -> &SparseMatrix {
        &self.up[level]
    }

    pub fn level(&self, level: usize) -> HierarchyLevel<'_> {
        HierarchyLevel {
            template: &self.templates[level],
            down: self.down.get(level),
            up: self.up.get(level),
        }
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.templates.iter().map(TriMesh::num_vertices).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = HierarchyFile {
            version: HIERARCHY_VERSION,
            factors: self.factors.clone(),
            level_sizes: self.level_sizes(),
            levels: self
                .templates
                .iter()
                .map(|t| LevelFile {
                    vertices: t.vertices().to_vec(),
                    faces: t.faces().to_vec(),
                })
                .collect(),
            down: self.down.iter().map(SparseMatrix::to_triplets).collect(),
            up: self.up.iter().map(SparseMatrix::to_triplets).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        if file.version != HIERARCHY_VERSION {
            return Err(MeshError::InvalidArgument(format!(
                "unsupported hierarchy version {}",
                file.version
            )));
        }
        let templates = file
            .levels
            .into_iter()
            .map(|l| TriMesh::new(l.vertices, l.faces))
            .collect::<Result<Vec<_>>>()?;
        let down = file
            .down
            .into_iter()
            .map(SparseMatrix::from_serialized)
            .collect::<Result<Vec<_>>>()?;
        let up = file
            .up
            .into_iter()
            .map(SparseMatrix::from_serialized)
            .collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = templates.iter().map(TriMesh::num_vertices).collect();
        let consistent = templates.len() == down.len() + 1
            && down.len() == up.len()
            && sizes == file.level_sizes
            && down.iter().enumerate().all(|(l, d)| d.rows() == sizes[l + 1] && d.cols() == sizes[l])
            && up.iter().enumerate().all(|(l, u)| u.rows() == sizes[l] && u.cols() == sizes[l + 1]);
        if !consistent {
            return Err(MeshError::InvalidArgument(
                "hierarchy file has inconsistent level shapes".into(),
            ));
        }
        Ok(Self {
            factors: file.factors,
            templates,
            down,
            up,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| MeshError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the JSON encoding; identifies the hierarchy in checkpoints.
    pub fn content_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Builds one coarser level per factor; level `ℓ + 1` has
/// `ceil(N_ℓ / factor_ℓ)` vertices.
pub fn build_hierarchy(template: &TriMesh, factors: &[f64]) -> Result<SamplingHierarchy> {
    if let Some(bad) = factors.iter().find(|f| !f.is_finite() || **f < 1.0) {
        return Err(MeshError::InvalidArgument(format!(
            "downsample factor {bad} must be a finite value >= 1"
        )));
    }
    let mut templates = vec![template.clone()];
    let mut down = Vec::with_capacity(factors.len());
    let mut up = Vec::with_capacity(factors.len());
    for (level, &factor) in factors.iter().enumerate() {
        let fine = &templates[level];
        let n = fine.num_vertices();
        let target = (n as f64 / factor).ceil() as usize;
        let (coarse, kept) = decimate(fine, target).ok_or(MeshError::Decimation {
            level,
            from: n,
            target,
        })?;
        let d = SparseMatrix::from_triplets(
            kept.len(),
            n,
            kept.iter().enumerate().map(|(c, &f)| (c, f, 1.0)).collect(),
        )?;
        let u = upsample_map(fine, &coarse, &kept)?;
        down.push(d);
        up.push(u);
        templates.push(coarse);
    }
    Ok(SamplingHierarchy {
        factors: factors.to_vec(),
        templates,
        down,
        up,
    })
}

type Quadric = [f64; 10];

fn plane_quadric(a: Point3, b: Point3, c: Point3) -> Quadric {
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    if len == 0.0 {
        return [0.0; 10];
    }
    // area-weighted: |n| = 2·area
    let w = 0.5 * len;
    let (x, y, z) = (n[0] / len, n[1] / len, n[2] / len);
    let d = -(x * a[0] + y * a[1] + z * a[2]);
    [
        w * x * x,
        w * x * y,
        w * x * z,
        w * x * d,
        w * y * y,
        w * y * z,
        w * y * d,
        w * z * z,
        w * z * d,
        w * d * d,
    ]
}

fn quadric_error(q: &Quadric, p: Point3) -> f64 {
    let [x, y, z] = p;
    q[0] * x * x
        + 2.0 * q[1] * x * y
        + 2.0 * q[2] * x * z
        + 2.0 * q[3] * x
        + q[4] * y * y
        + 2.0 * q[5] * y * z
        + 2.0 * q[6] * y
        + q[7] * z * z
        + 2.0 * q[8] * z
        + q[9]
}

fn add_quadric(a: &Quadric, b: &Quadric) -> Quadric {
    let mut out = *a;
    for (o, v) in out.iter_mut().zip(b) {
        *o += v;
    }
    out
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Mode {
    /// Link condition plus no triangle flips.
    Strict,
    /// Link condition only.
    Topological,
    /// Any collapse; degenerate and duplicate triangles are dropped.
    Free,
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    from: usize,
    to: usize,
    stamp_from: u32,
    stamp_to: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.from.cmp(&other.from))
            .then(self.to.cmp(&other.to))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Decimator<'a> {
    pos: &'a [Point3],
    quadrics: Vec<Quadric>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    alive: Vec<bool>,
    stamps: Vec<u32>,
    live_count: usize,
}

impl<'a> Decimator<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        let pos = mesh.vertices();
        let n = pos.len();
        let mut quadrics = vec![[0.0; 10]; n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            let q = plane_quadric(pos[f[0]], pos[f[1]], pos[f[2]]);
            for &v in f {
                quadrics[v] = add_quadric(&quadrics[v], &q);
                vertex_faces[v].push(fi);
            }
        }
        Self {
            pos,
            quadrics,
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.num_faces()],
            vertex_faces,
            alive: vec![true; n],
            stamps: vec![0; n],
            live_count: n,
        }
    }

    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vertex_faces[v]
            .iter()
            .copied()
            .filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .live_faces(v)
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let q = add_quadric(&self.quadrics[a], &self.quadrics[b]);
        let into_b = quadric_error(&q, self.pos[b]);
        let into_a = quadric_error(&q, self.pos[a]);
        // keep the lower index on ties
        let (from, to, cost) = if into_b < into_a || (into_b == into_a && b < a) {
            (a, b, into_b)
        } else {
            (b, a, into_a)
        };
        Candidate {
            cost,
            from,
            to,
            stamp_from: self.stamps[from],
            stamp_to: self.stamps[to],
        }
    }

    fn push_edges_around(&self, v: usize, heap: &mut BinaryHeap<Reverse<Candidate>>) {
        for w in self.neighbors(v) {
            heap.push(Reverse(self.candidate(v, w)));
        }
    }

    fn all_candidates(&self) -> BinaryHeap<Reverse<Candidate>> {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            if !self.alive[v] {
                continue;
            }
            for w in self.neighbors(v) {
                if v < w {
                    heap.push(Reverse(self.candidate(v, w)));
                }
            }
        }
        heap
    }

    fn face_key(f: [usize; 3]) -> [usize; 3] {
        let mut k = f;
        k.sort_unstable();
        k
    }

    fn is_valid(&self, from: usize, to: usize, mode: Mode) -> bool {
        if mode == Mode::Free {
            return true;
        }
        // link condition: shared neighbours are exactly the apexes of the
        // faces on the edge
        let nf = self.neighbors(from);
        let nt = self.neighbors(to);
        let shared: HashSet<usize> = nf.iter().copied().filter(|x| nt.binary_search(x).is_ok()).collect();
        let apexes: HashSet<usize> = self
            .live_faces(from)
            .filter(|&f| self.faces[f].contains(&to))
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != from && w != to)
            .collect();
        if shared != apexes {
            return false;
        }
        // surviving faces must not duplicate an existing face
        let existing: HashSet<[usize; 3]> = self
            .live_faces(to)
            .map(|f| Self::face_key(self.faces[f]))
            .collect();
        for f in self.live_faces(from) {
            let face = self.faces[f];
            if face.contains(&to) {
                continue;
            }
            let moved = face.map(|x| if x == from { to } else { x });
            if existing.contains(&Self::face_key(moved)) {
                return false;
            }
            if mode == Mode::Strict {
                let before = cross(
                    sub(self.pos[face[1]], self.pos[face[0]]),
                    sub(self.pos[face[2]], self.pos[face[0]]),
                );
                let after = cross(
                    sub(self.pos[moved[1]], self.pos[moved[0]]),
                    sub(self.pos[moved[2]], self.pos[moved[0]]),
                );
                let scale = norm(before) * norm(after);
                if scale == 0.0 || dot(before, after) <= 1e-3 * scale {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, from: usize, to: usize) {
        let mut existing: HashSet<[usize; 3]> = self
            .live_faces(to)
            .map(|f| Self::face_key(self.faces[f]))
            .collect();
        let incident: Vec<usize> = self.live_faces(from).collect();
        for f in incident {
            if self.faces[f].contains(&to) {
                self.face_alive[f] = false;
                continue;
            }
            let moved = self.faces[f].map(|x| if x == from { to } else { x });
            let key = Self::face_key(moved);
            if existing.contains(&key) {
                self.face_alive[f] = false;
                continue;
            }
            existing.insert(key);
            self.faces[f] = moved;
            self.vertex_faces[to].push(f);
        }
        self.quadrics[to] = add_quadric(&self.quadrics[to], &self.quadrics[from]);
        self.alive[from] = false;
        self.live_count -= 1;
        self.stamps[to] += 1;
        for w in self.neighbors(to) {
            self.stamps[w] += 1;
        }
    }

    fn run(&mut self, target: usize, mode: Mode) {
        let mut heap = self.all_candidates();
        while self.live_count > target {
            let Some(Reverse(c)) = heap.pop() else {
                return;
            };
            if !self.alive[c.from]
                || !self.alive[c.to]
                || self.stamps[c.from] != c.stamp_from
                || self.stamps[c.to] != c.stamp_to
            {
                continue;
            }
            if !self.is_valid(c.from, c.to, mode) {
                continue;
            }
            self.collapse(c.from, c.to);
            self.push_edges_around(c.to, &mut heap);
            for w in self.neighbors(c.to) {
                self.push_edges_around(w, &mut heap);
            }
        }
    }
}

/// Collapses `mesh` down to `target` vertices. Returns the coarse mesh and,
/// for each coarse vertex, the fine vertex it was kept from.
fn decimate(mesh: &TriMesh, target: usize) -> Option<(TriMesh, Vec<usize>)> {
    let mut dec = Decimator::new(mesh);
    for mode in [Mode::Strict, Mode::Topological, Mode::Free] {
        if dec.live_count <= target {
            break;
        }
        dec.run(target, mode);
    }
    if dec.live_count > target {
        return None;
    }
    let kept: Vec<usize> = (0..dec.alive.len()).filter(|&v| dec.alive[v]).collect();
    let mut remap = vec![usize::MAX; dec.alive.len()];
    for (c, &f) in kept.iter().enumerate() {
        remap[f] = c;
    }
    let faces: Vec<[usize; 3]> = dec
        .faces
        .iter()
        .zip(&dec.face_alive)
        .filter(|(_, &a)| a)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    let vertices = kept.iter().map(|&v| mesh.vertices()[v]).collect();
    TriMesh::new(vertices, faces).ok().map(|m| (m, kept))
}

/// Barycentric coordinates of the point on triangle `abc` closest to `p`.
pub(crate) fn closest_point_barycentric(p: Point3, a: Point3, b: Point3, c: Point3) -> ([f64; 3], f64) {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    let bary = if d1 <= 0.0 && d2 <= 0.0 {
        [1.0, 0.0, 0.0]
    } else {
        let bp = sub(p, b);
        let d3 = dot(ab, bp);
        let d4 = dot(ac, bp);
        let cp = sub(p, c);
        let d5 = dot(ab, cp);
        let d6 = dot(ac, cp);
        let vc = d1 * d4 - d3 * d2;
        let vb = d5 * d2 - d1 * d6;
        let va = d3 * d6 - d5 * d4;
        if d3 >= 0.0 && d4 <= d3 {
            [0.0, 1.0, 0.0]
        } else if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            let v = d1 / (d1 - d3);
            [1.0 - v, v, 0.0]
        } else if d6 >= 0.0 && d5 <= d6 {
            [0.0, 0.0, 1.0]
        } else if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            let w = d2 / (d2 - d6);
            [1.0 - w, 0.0, w]
        } else if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            [0.0, 1.0 - w, w]
        } else {
            let denom = 1.0 / (va + vb + vc);
            let v = vb * denom;
            let w = vc * denom;
            [1.0 - v - w, v, w]
        }
    };
    let q = [
        bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
        bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2],
    ];
    let d = sub(p, q);
    (bary, dot(d, d))
}

fn upsample_map(fine: &TriMesh, coarse: &TriMesh, kept: &[usize]) -> Result<SparseMatrix> {
    let mut coarse_of = vec![usize::MAX; fine.num_vertices()];
    for (c, &f) in kept.iter().enumerate() {
        coarse_of[f] = c;
    }
    let cv = coarse.vertices();
    let mut triplets = Vec::new();
    for (i, &p) in fine.vertices().iter().enumerate() {
        if coarse_of[i] != usize::MAX {
            triplets.push((i, coarse_of[i], 1.0));
            continue;
        }
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (fi, f) in coarse.faces().iter().enumerate() {
            let (bary, d2) = closest_point_barycentric(p, cv[f[0]], cv[f[1]], cv[f[2]]);
            if best.is_none_or(|(bd, _, _)| d2 < bd) {
                best = Some((d2, fi, bary));
            }
        }
        match best {
            Some((_, fi, bary)) => {
                let f = coarse.faces()[fi];
                let total: f64 = bary.iter().sum();
                for k in 0..3 {
                    if bary[k] != 0.0 {
                        triplets.push((i, f[k], bary[k] / total));
                    }
                }
            }
            None => {
                // faceless coarse level: nearest vertex
                let nearest = (0..cv.len())
                    .min_by(|&a, &b| {
                        let da = dot(sub(p, cv[a]), sub(p, cv[a]));
                        let db = dot(sub(p, cv[b]), sub(p, cv[b]));
                        da.total_cmp(&db)
                    })
                    .ok_or(MeshError::InvalidArgument("empty coarse level".into()))?;
                triplets.push((i, nearest, 1.0));
            }
        }
    }
    SparseMatrix::from_triplets(fine.num_vertices(), coarse.num_vertices(), triplets)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::icosahedron;
    use super::super::{compute_spirals, mesh_volume};
    use super::*;
    use crate::torusgen::{generate_torus, TorusFactors};

    fn torus(n_major: usize, n_minor: usize) -> TriMesh {
        generate_torus(&TorusFactors::plain(1.0), (n_major, n_minor), 0).unwrap()
    }

    #[test]
    fn unit_factors_give_identity_levels() {
        let m = torus(16, 8);
        let h = build_hierarchy(&m, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(h.level_sizes(), vec![128; 5]);
        let signal: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        for l in 0..4 {
            assert_eq!(h.template(l + 1), &m);
            let back = h.up(l).apply(&h.down(l).apply(&signal));
            assert_eq!(back, signal);
        }
    }

    // ceil(2048/4)=512, ceil(512/4)=128, ceil(128/4)=32, ceil(32/4)=8
    #[test]
    fn torus_level_sizes_follow_ceiling_targets() {
        let m = torus(64, 32);
        let h = build_hierarchy(&m, &[4.0; 4]).unwrap();
        assert_eq!(h.level_sizes(), vec![2048, 512, 128, 32, 8]);
        let m2 = torus(32, 32);
        let h2 = build_hierarchy(&m2, &[4.0; 4]).unwrap();
        assert_eq!(h2.level_sizes(), vec![1024, 256, 64, 16, 4]);
    }

    #[test]
    fn maps_are_row_stochastic_and_preserve_constants() {
        let m = torus(32, 16);
        let h = build_hierarchy(&m, &[4.0; 4]).unwrap();
        for l in 0..h.depth() {
            let up = h.up(l);
            let down = h.down(l);
            assert_eq!((down.rows(), down.cols()), (up.cols(), up.rows()));
            for r in 0..up.rows() {
                assert!((up.row_sum(r) - 1.0).abs() < 1e-9);
            }
            for r in 0..down.rows() {
                assert!((down.row_sum(r) - 1.0).abs() < 1e-9);
            }
            let c = vec![2.5; down.cols()];
            let back = up.apply(&down.apply(&c));
            assert!(back.iter().all(|x| (x - 2.5).abs() < 1e-9));
        }
    }

    #[test]
    fn manifold_levels_support_spirals() {
        let m = torus(32, 32);
        let h = build_hierarchy(&m, &[4.0; 4]).unwrap();
        for l in 0..4 {
            let t = h.template(l);
            compute_spirals(t, 45, 2).unwrap();
            assert!(mesh_volume(t).unwrap() > 0.0, "level {l} lost orientation");
        }
    }

    #[test]
    fn hierarchy_is_deterministic_and_round_trips_json() {
        let m = torus(16, 16);
        let a = build_hierarchy(&m, &[4.0, 2.0]).unwrap();
        let b = build_hierarchy(&m, &[4.0, 2.0]).unwrap();
        assert_eq!(a, b);
        let back = SamplingHierarchy::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.content_hash().unwrap(), a.content_hash().unwrap());
    }

    #[test]
    fn too_few_vertices_is_an_error() {
        let err = build_hierarchy(&icosahedron(), &[12.0]).unwrap_err();
        assert!(matches!(err, MeshError::Decimation { level: 0, .. }));
        assert!(build_hierarchy(&icosahedron(), &[0.5]).is_err());
    }

    #[test]
    fn closest_point_inside_and_outside() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let (bary, d2) = closest_point_barycentric([0.25, 0.25, 1.0], a, b, c);
        assert!((bary[0] - 0.5).abs() < 1e-12 && (bary[1] - 0.25).abs() < 1e-12);
        assert!((d2 - 1.0).abs() < 1e-12);
        let (bary, _) = closest_point_barycentric([2.0, -1.0, 0.0], a, b, c);
        assert_eq!(bary, [0.0, 1.0, 0.0]);
    }
}
