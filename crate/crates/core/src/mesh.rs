//! Conforming triangulations graded toward the degenerate point, and submesh
//! extraction realizing Ω_δ inside the parent mesh (so the zero-extension
//! operator is an exact index injection).

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{norm, outward_normal, DomainSpec, Point};

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub normal: [f64; 2],
    pub tag: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub dirichlet_mask: Vec<bool>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// per-node index into the parent mesh, when this mesh realizes Ω_δ
    pub parent_map: Option<Vec<usize>>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.dirichlet_mask[i]).collect()
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn min_origin_distance(&self) -> f64 {
        self.nodes.iter().map(|p| norm(*p)).fold(f64::INFINITY, f64::min)
    }

    /// Conformity check: positive areas, interior edges shared by exactly two
    /// triangles, boundary edges by exactly one, no node at the origin.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.tri_area(t) <= 0.0 {
                return Err(Error::Meshing(format!("triangle {t} has non-positive area")));
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for e in [[tri[0], tri[1]], [tri[1], tri[2]], [tri[2], tri[0]]] {
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        if count.values().any(|&c| c > 2) {
            return Err(Error::Meshing("non-conforming edge shared by >2 triangles".into()));
        }
        let boundary_cnt = count.values().filter(|&&c| c == 1).count();
        if boundary_cnt != self.boundary_edges.len() {
            return Err(Error::Meshing(format!(
                "boundary edge bookkeeping mismatch: {} single-sided edges, {} recorded",
                boundary_cnt,
                self.boundary_edges.len()
            )));
        }
        if self.min_origin_distance() < 1e-14 {
            return Err(Error::Meshing("a mesh node coincides with the origin".into()));
        }
        Ok(())
    }

    /// Adjacent triangle of each boundary edge.
    pub fn boundary_edge_triangles(&self) -> Vec<usize> {
        let mut map: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in [[tri[0], tri[1]], [tri[1], tri[2]], [tri[2], tri[0]]] {
                map.insert((e[0].min(e[1]), e[0].max(e[1])), t);
            }
        }
        self.boundary_edges
            .iter()
            .map(|be| {
                let key = (be.nodes[0].min(be.nodes[1]), be.nodes[0].max(be.nodes[1]));
                map[&key]
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "nodes": self.nodes,
            "triangles": self.triangles,
            "boundary_edges": self.boundary_edges.iter().map(|b| serde_json::json!({
                "nodes": b.nodes, "normal": b.normal, "tag": b.tag,
            })).collect::<Vec<_>>(),
            "tags": self.boundary_edges.iter().map(|b| b.tag.clone()).collect::<Vec<_>>(),
        })
    }
}

/// 1-D graded points on (0, length]: `count` values length·(i/count)^g, i = 1..count.
fn graded_points(length: f64, count: usize, g: f64) -> Vec<f64> {
    (1..=count).map(|i| length * ((i as f64) / (count as f64)).powf(g)).collect()
}

fn division_count(length: f64, h: f64, g: f64) -> usize {
    ((g * length * std::f64::consts::SQRT_2 / h).ceil() as usize).max(2)
}

/// Structured graded triangulation of an axis-aligned rectangle whose bottom
/// edge contains the origin in its interior. Grid lines accumulate toward the
/// origin; no grid line passes through x = 0, so no node sits at the origin.
pub fn generate_mesh(domain: &DomainSpec, h: f64, grading_exponent: f64) -> Result<Mesh> {
    if !(h > 0.0) {
        return Err(Error::Meshing("h must be positive".into()));
    }
    if grading_exponent < 1.0 {
        return Err(Error::Meshing("grading_exponent must be >= 1".into()));
    }
    let (xmin, xmax, ymax) = rectangle_extents(domain)?;
    let g = grading_exponent;

    let mneg = division_count(-xmin, h, g);
    let mpos = division_count(xmax, h, g);
    let ny = division_count(ymax, h, g);

    let mut xs: Vec<f64> = graded_points(-xmin, mneg, g).into_iter().map(|v| -v).collect();
    xs.reverse();
    xs.extend(graded_points(xmax, mpos, g));
    let mut ys = vec![0.0];
    ys.extend(graded_points(ymax, ny, g));

    let nx = xs.len();
    let nyp = ys.len();
    let mut nodes = Vec::with_capacity(nx * nyp);
    for &y in &ys {
        for &x in &xs {
            nodes.push([x, y]);
        }
    }
    let idx = |ix: usize, iy: usize| iy * nx + ix;

    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (nyp - 1));
    for iy in 0..nyp - 1 {
        for ix in 0..nx - 1 {
            let (a, b, c, d) = (idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let mut dirichlet_mask = vec![false; nodes.len()];
    for iy in 0..nyp {
        for ix in 0..nx {
            if ix == 0 || ix == nx - 1 || iy == 0 || iy == nyp - 1 {
                dirichlet_mask[idx(ix, iy)] = true;
            }
        }
    }

    let mut boundary_edges = Vec::new();
    for ix in 0..nx - 1 {
        boundary_edges.push(make_boundary_edge(domain, &nodes, idx(ix, 0), idx(ix + 1, 0))?);
        boundary_edges.push(make_boundary_edge(domain, &nodes, idx(ix, nyp - 1), idx(ix + 1, nyp - 1))?);
    }
    for iy in 0..nyp - 1 {
        boundary_edges.push(make_boundary_edge(domain, &nodes, idx(0, iy), idx(0, iy + 1))?);
        boundary_edges.push(make_boundary_edge(domain, &nodes, idx(nx - 1, iy), idx(nx - 1, iy + 1))?);
    }

    let mesh = Mesh { nodes, triangles, dirichlet_mask, boundary_edges, parent_map: None };
    mesh.validate()?;
    Ok(mesh)
}

fn rectangle_extents(domain: &DomainSpec) -> Result<(f64, f64, f64)> {
    if domain.vertices.len() != 4 {
        return Err(Error::Meshing(
            "mesh generation supports the canonical axis-aligned rectangle family only".into(),
        ));
    }
    let xs: Vec<f64> = domain.vertices.iter().map(|v| v[0]).collect();
    let ys: Vec<f64> = domain.vertices.iter().map(|v| v[1]).collect();
    let (xmin, xmax) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (ymin, ymax) = (ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let on_corner = domain
        .vertices
        .iter()
        .all(|v| (v[0] == xmin || v[0] == xmax) && (v[1] == ymin || v[1] == ymax));
    if !on_corner || ymin.abs() > 1e-14 || !(xmin < 0.0 && xmax > 0.0) {
        return Err(Error::Meshing(
            "mesh generation supports the canonical axis-aligned rectangle family only".into(),
        ));
    }
    Ok((xmin, xmax, ymax))
}

fn make_boundary_edge(domain: &DomainSpec, nodes: &[Point], a: usize, b: usize) -> Result<BoundaryEdge> {
    let (pa, pb) = (nodes[a], nodes[b]);
    let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
    // inherit the tag of the domain segment containing the midpoint
    let mut best: Option<(f64, usize)> = None;
    for (i, seg) in domain.segments.iter().enumerate() {
        let (sa, sb) = domain.edge_endpoints(seg);
        let d = dist_point_segment(mid, sa, sb);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (d, i) = best.unwrap();
    if d > 1e-9 {
        return Err(Error::Meshing("boundary edge does not lie on the domain boundary".into()));
    }
    let seg = &domain.segments[i];
    let (sa, sb) = domain.edge_endpoints(seg);
    Ok(BoundaryEdge { nodes: [a, b], normal: outward_normal(sa, sb), tag: seg.tag.clone() })
}

fn dist_point_segment(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    norm([p[0] - q[0], p[1] - q[1]])
}

/// Extract the Ω_δ submesh: drop triangles with a vertex inside B(0, δ); nodes
/// exposed by the cut become Dirichlet, the cut edges are tagged "arc".
/// δ must exceed the innermost graded layer so at least one triangle is removed.
pub fn submesh_outside_ball(parent: &Mesh, delta: f64) -> Result<Mesh> {
    let removed: Vec<bool> = parent
        .triangles
        .iter()
        .map(|tri| tri.iter().any(|&v| norm(parent.nodes[v]) < delta * (1.0 - 1e-12)))
        .collect();
    if !removed.iter().any(|&r| r) {
        return Err(Error::Meshing(format!(
            "delta {delta} below the innermost mesh layer: truncation removes no triangles"
        )));
    }
    if removed.iter().all(|&r| r) {
        return Err(Error::Meshing("truncation removes the entire mesh".into()));
    }

    let mut node_used = vec![false; parent.nodes.len()];
    let mut cut_node = vec![false; parent.nodes.len()];
    for (t, tri) in parent.triangles.iter().enumerate() {
        for &v in tri {
            if removed[t] {
                cut_node[v] = true;
            } else {
                node_used[v] = true;
            }
        }
    }

    let mut new_index = vec![usize::MAX; parent.nodes.len()];
    let mut parent_map = Vec::new();
    let mut nodes = Vec::new();
    let mut dirichlet_mask = Vec::new();
    for i in 0..parent.nodes.len() {
        if node_used[i] {
            new_index[i] = nodes.len();
            nodes.push(parent.nodes[i]); // bitwise copy of parent coordinates
            parent_map.push(i);
            dirichlet_mask.push(parent.dirichlet_mask[i] || cut_node[i]);
        }
    }

    let mut triangles = Vec::new();
    for (t, tri) in parent.triangles.iter().enumerate() {
        if !removed[t] {
            triangles.push([new_index[tri[0]], new_index[tri[1]], new_index[tri[2]]]);
        }
    }

    // edge -> (kept count, removed count, owning kept triangle)
    let mut edge_info: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for (t, tri) in parent.triangles.iter().enumerate() {
        for e in [[tri[0], tri[1]], [tri[1], tri[2]], [tri[2], tri[0]]] {
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            let entry = edge_info.entry(key).or_insert((0, 0, usize::MAX));
            if removed[t] {
                entry.1 += 1;
            } else {
                entry.0 += 1;
                entry.2 = t;
            }
        }
    }

    let mut boundary_edges = Vec::new();
    for be in &parent.boundary_edges {
        let key = (be.nodes[0].min(be.nodes[1]), be.nodes[0].max(be.nodes[1]));
        if let Some(&(kept, _, _)) = edge_info.get(&key) {
            if kept == 1 {
                boundary_edges.push(BoundaryEdge {
                    nodes: [new_index[be.nodes[0]], new_index[be.nodes[1]]],
                    normal: be.normal,
                    tag: be.tag.clone(),
                });
            }
        }
    }
    // cut edges become "arc" boundary with normal pointing away from the kept triangle
    let mut cut_edges: Vec<((usize, usize), usize)> = edge_info
        .iter()
        .filter(|(_, &(kept, rem, _))| kept == 1 && rem == 1)
        .map(|(&key, &(_, _, t))| (key, t))
        .collect();
    cut_edges.sort_by_key(|(key, _)| *key);
    for ((a, b), t) in cut_edges {
        let tri = parent.triangles[t];
        let third = tri.iter().copied().find(|&v| v != a && v != b).unwrap();
        let (pa, pb, pc) = (parent.nodes[a], parent.nodes[b], parent.nodes[third]);
        let mut nu = outward_normal(pa, pb);
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if (pc[0] - mid[0]) * nu[0] + (pc[1] - mid[1]) * nu[1] > 0.0 {
            nu = [-nu[0], -nu[1]];
        }
        boundary_edges.push(BoundaryEdge { nodes: [new_index[a], new_index[b]], normal: nu, tag: "arc".into() });
    }

    let mesh = Mesh { nodes, triangles, dirichlet_mask, boundary_edges, parent_map: Some(parent_map) };
    mesh.validate()?;
    Ok(mesh)
}
