use serde::{Deserialize, Serialize};

use super::{MeshError, Result, TriMesh};

/// Fixed-length spiral neighbour orderings, one row per vertex.
///
/// Entries equal to [`SpiralIndexSet::pad_marker`] mark exhausted spirals and
/// gather as zero feature vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpiralIndexSet {
    num_vertices: usize,
    length: usize,
    dilation: usize,
    indices: Vec<usize>,
}

impl SpiralIndexSet {
    /// Builds a set from raw rows; each row must have `length` entries.
    pub fn from_rows(num_vertices: usize, dilation: usize, rows: &[Vec<usize>]) -> Result<Self> {
        let length = rows.first().map_or(0, Vec::len);
        if rows.len() != num_vertices || rows.iter().any(|r| r.len() != length) || length == 0 {
            return Err(MeshError::InvalidArgument(
                "spiral rows must be non-empty and of equal length, one per vertex".into(),
            ));
        }
        if rows.iter().flatten().any(|&i| i > num_vertices) {
            return Err(MeshError::InvalidArgument("spiral index out of range".into()));
        }
        Ok(Self {
            num_vertices,
            length,
            dilation,
            indices: rows.concat(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn pad_marker(&self) -> usize {
        self.num_vertices
    }

    pub fn row(&self, vertex: usize) -> &[usize] {
        &self.indices[vertex * self.length..(vertex + 1) * self.length]
    }

    /// Row-major `num_vertices × length` index table.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Orders the link of every vertex counter-clockwise about the outward normal,
/// starting from the lowest-index neighbour. Boundary vertices are ordered
/// along their link path from its free end.
pub fn ordered_one_ring(mesh: &TriMesh) -> Result<Vec<Vec<usize>>> {
    let n = mesh.num_vertices();
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for f in mesh.faces() {
        for k in 0..3 {
            incident[f[k]].push((f[(k + 1) % 3], f[(k + 2) % 3]));
        }
    }
    let mut rings = Vec::with_capacity(n);
    for (v, link) in incident.iter().enumerate() {
        rings.push(order_link(v, link)?);
    }
    Ok(rings)
}

fn order_link(v: usize, link: &[(usize, usize)]) -> Result<Vec<usize>> {
    if link.is_empty() {
        return Err(MeshError::IsolatedVertex(v));
    }
    let mut members: Vec<usize> = link.iter().flat_map(|&(a, b)| [a, b]).collect();
    members.sort_unstable();
    members.dedup();
    let pos = |x: usize| members.binary_search(&x).unwrap();
    let mut next = vec![usize::MAX; members.len()];
    let mut has_prev = vec![false; members.len()];
    for &(a, b) in link {
        let (ia, ib) = (pos(a), pos(b));
        if next[ia] != usize::MAX || has_prev[ib] {
            return Err(MeshError::NonManifoldVertex(v));
        }
        next[ia] = ib;
        has_prev[ib] = true;
    }
    let start = if link.len() == members.len() {
        0
    } else if link.len() + 1 == members.len() {
        has_prev
            .iter()
            .position(|&p| !p)
            .ok_or(MeshError::NonManifoldVertex(v))?
    } else {
        return Err(MeshError::NonManifoldVertex(v));
    };
    let mut order = Vec::with_capacity(members.len());
    let mut cur = start;
    for _ in 0..members.len() {
        order.push(members[cur]);
        cur = next[cur];
        if cur == usize::MAX || cur == start {
            break;
        }
    }
    if order.len() != members.len() {
        // several disjoint fans around one vertex
        return Err(MeshError::NonManifoldVertex(v));
    }
    Ok(order)
}

/// Spiral orderings: the vertex, its ordered one-ring, then successive rings,
/// truncated to `length * dilation` entries, keeping every `dilation`-th, and
/// padded to `length`.
pub fn compute_spirals(mesh: &TriMesh, length: usize, dilation: usize) -> Result<SpiralIndexSet> {
    if length == 0 || dilation == 0 {
        return Err(MeshError::InvalidArgument(
            "spiral length and dilation must be positive".into(),
        ));
    }
    let n = mesh.num_vertices();
    let rings = ordered_one_ring(mesh)?;
    let span = length * dilation;
    let mut visited = vec![usize::MAX; n];
    let mut in_last = vec![usize::MAX; n];
    let mut indices = Vec::with_capacity(n * length);
    let mut spiral = Vec::with_capacity(span);

    for v in 0..n {
        spiral.clear();
        spiral.push(v);
        visited[v] = v;
        let mut last: Vec<usize> = Vec::new();
        if span > 1 {
            for &w in &rings[v] {
                visited[w] = v;
            }
            last.extend_from_slice(&rings[v]);
            spiral.extend_from_slice(&last);
        }
        // ring counter keeps `in_last` stamps unique across all vertices
        let mut stamp = v * n;
        while spiral.len() < span && !last.is_empty() {
            stamp += 1;
            for &w in &last {
                in_last[w] = stamp;
            }
            let mut next = Vec::new();
            for &w in &last {
                let ring = &rings[w];
                let start = ring
                    .iter()
                    .position(|&x| in_last[x] == stamp)
                    .map_or(0, |p| p + 1);
                for k in 0..ring.len() {
                    let x = ring[(start + k) % ring.len()];
                    if visited[x] != v {
                        visited[x] = v;
                        next.push(x);
                    }
                }
            }
            spiral.extend_from_slice(&next);
            last = next;
        }
        spiral.truncate(span);
        let before = indices.len();
        indices.extend(spiral.iter().step_by(dilation).copied());
        indices.resize(before + length, n);
    }
    Ok(SpiralIndexSet {
        num_vertices: n,
        length,
        dilation,
        indices,
    })
}
