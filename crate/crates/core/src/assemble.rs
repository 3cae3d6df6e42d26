//! P1 assembly of the weighted operators: stiffness K with weight |x|^α,
//! mass M, and the Hardy matrix H with the singular weight |x|^{α−2}.

use crate::error::{Error, Result};
use crate::geometry::{norm, Point};
use crate::mesh::Mesh;
use crate::sparse::{Csr, Triplets};

pub struct AssembledOperators {
    pub k: Csr,
    pub m: Csr,
    pub h: Csr,
    pub alpha: f64,
    pub free_dofs: Vec<usize>,
    /// restrictions to the free dofs
    pub kf: Csr,
    pub mf: Csr,
    pub hf: Csr,
}

impl AssembledOperators {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Scatter a free-dof vector to the full node set (zeros on Dirichlet nodes).
    pub fn scatter(&self, xf: &[f64], n_nodes: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_nodes];
        for (k, &i) in self.free_dofs.iter().enumerate() {
            full[i] = xf[k];
        }
        full
    }

    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&i| full[i]).collect()
    }
}

/// 7-point degree-5 rule in barycentric coordinates (weight, l1, l2, l3).
const GAUSS7: [(f64, f64, f64, f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const W1: f64 = 0.132_394_152_788_506_2;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_34;
    const W2: f64 = 0.125_939_180_544_827_14;
    [
        (0.225, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        (W1, A1, B1, B1),
        (W1, B1, A1, B1),
        (W1, B1, B1, A1),
        (W2, A2, B2, B2),
        (W2, B2, A2, B2),
        (W2, B2, B2, A2),
    ]
};

pub struct TriGeom {
    pub p: [Point; 3],
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

pub fn tri_geom(mesh: &Mesh, t: usize) -> TriGeom {
    let [a, b, c] = mesh.triangles[t];
    let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    let d = 2.0 * area;
    let grads = [
        [(p[1][1] - p[2][1]) / d, (p[2][0] - p[1][0]) / d],
        [(p[2][1] - p[0][1]) / d, (p[0][0] - p[2][0]) / d],
        [(p[0][1] - p[1][1]) / d, (p[1][0] - p[0][0]) / d],
    ];
    TriGeom { p, area, grads }
}

fn bary_point(p: &[Point; 3], l: (f64, f64, f64)) -> Point {
    [
        l.0 * p[0][0] + l.1 * p[1][0] + l.2 * p[2][0],
        l.0 * p[0][1] + l.1 * p[1][1] + l.2 * p[2][1],
    ]
}

/// Quadrature points (point, weight, barycentric) over a triangle for the
/// singular weight: triangles nearest the origin get one 4-way subdivision,
/// 7-point rule on each piece. All points are strictly interior.
fn singular_quad(geom: &TriGeom) -> Vec<(Point, f64, [f64; 3])> {
    let diam = {
        let e = |a: Point, b: Point| norm([a[0] - b[0], a[1] - b[1]]);
        e(geom.p[0], geom.p[1]).max(e(geom.p[1], geom.p[2])).max(e(geom.p[2], geom.p[0]))
    };
    let dist0 = geom.p.iter().map(|q| norm(*q)).fold(f64::INFINITY, f64::min);
    let subdivide = dist0 < diam;

    let mut out = Vec::new();
    let corners: Vec<[(f64, f64, f64); 3]> = if subdivide {
        // midpoint subdivision in barycentric coordinates
        let v0 = (1.0, 0.0, 0.0);
        let v1 = (0.0, 1.0, 0.0);
        let v2 = (0.0, 0.0, 1.0);
        let m01 = (0.5, 0.5, 0.0);
        let m12 = (0.0, 0.5, 0.5);
        let m20 = (0.5, 0.0, 0.5);
        vec![[v0, m01, m20], [m01, v1, m12], [m20, m12, v2], [m01, m12, m20]]
    } else {
        vec![[(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]]
    };
    let piece_area = geom.area / corners.len() as f64;
    for cs in corners {
        for &(w, l1, l2, l3) in GAUSS7.iter() {
            let lam = [
                l1 * cs[0].0 + l2 * cs[1].0 + l3 * cs[2].0,
                l1 * cs[0].1 + l2 * cs[1].1 + l3 * cs[2].1,
                l1 * cs[0].2 + l2 * cs[1].2 + l3 * cs[2].2,
            ];
            let x = bary_point(&geom.p, (lam[0], lam[1], lam[2]));
            out.push((x, w * piece_area, lam));
        }
    }
    out
}

/// Per-triangle local matrices (k, m, h) in the triangle's vertex order.
#[allow(clippy::needless_range_loop, clippy::type_complexity)]
pub fn local_matrices(mesh: &Mesh, t: usize, alpha: f64) -> Result<([[f64; 3]; 3], [[f64; 3]; 3], [[f64; 3]; 3])> {
    let geom = tri_geom(mesh, t);
    // weighted stiffness: 3-point mid-edge rule for ∫ w
    let mids = [
        bary_point(&geom.p, (0.5, 0.5, 0.0)),
        bary_point(&geom.p, (0.0, 0.5, 0.5)),
        bary_point(&geom.p, (0.5, 0.0, 0.5)),
    ];
    let int_w: f64 = mids.iter().map(|x| norm(*x).powf(alpha)).sum::<f64>() * geom.area / 3.0;
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = int_w
                * (geom.grads[i][0] * geom.grads[j][0] + geom.grads[i][1] * geom.grads[j][1]);
        }
    }
    // exact P1 mass
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = geom.area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    // singular Hardy weight
    let mut h = [[0.0; 3]; 3];
    for (x, w, lam) in singular_quad(&geom) {
        let r = norm(x);
        if r < 1e-14 {
            return Err(Error::Assembly("quadrature point coincides with the origin".into()));
        }
        let wgt = w * r.powf(alpha - 2.0);
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += wgt * lam[i] * lam[j];
            }
        }
    }
    Ok((k, m, h))
}

pub fn assemble(mesh: &Mesh, alpha: f64) -> Result<AssembledOperators> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Assembly(format!("alpha = {alpha} outside (0, 1)")));
    }
    let n = mesh.n_nodes();
    let mut tk = Triplets::new(n);
    let mut tm = Triplets::new(n);
    let mut th = Triplets::new(n);
    for t in 0..mesh.triangles.len() {
        let (k, m, h) = local_matrices(mesh, t, alpha)?;
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                tk.push(tri[i], tri[j], k[i][j]);
                tm.push(tri[i], tri[j], m[i][j]);
                th.push(tri[i], tri[j], h[i][j]);
            }
        }
    }
    let k = tk.into_csr();
    let m = tm.into_csr();
    let h = th.into_csr();
    let free_dofs = mesh.free_dofs();
    let kf = k.restrict(&free_dofs);
    let mf = m.restrict(&free_dofs);
    let hf = h.restrict(&free_dofs);
    Ok(AssembledOperators { k, m, h, alpha, free_dofs, kf, mf, hf })
}

/// Normal-derivative trace of one or more nodal frames on tagged boundary
/// segments, recovered from the adjacent triangle's P1 gradient.
#[derive(Debug, Clone)]
pub struct FluxTrace {
    /// indices into mesh.boundary_edges
    pub edges: Vec<usize>,
    pub lengths: Vec<f64>,
    /// frames × edges values of ∂φ/∂ν
    pub values: Vec<Vec<f64>>,
    /// frames × edges values of w·∂φ/∂ν
    pub weighted: Vec<Vec<f64>>,
}

impl FluxTrace {
    /// ∫ over the tagged segments of (∂φ/∂ν)² for frame `f`.
    pub fn energy_frame(&self, f: usize) -> f64 {
        self.values[f]
            .iter()
            .zip(&self.lengths)
            .map(|(v, l)| v * v * l)
            .sum()
    }
}

pub fn boundary_flux(mesh: &Mesh, frames: &[Vec<f64>], tags: &[String], alpha: f64) -> Result<FluxTrace> {
    let adj = mesh.boundary_edge_triangles();
    let mut edges = Vec::new();
    for (i, be) in mesh.boundary_edges.iter().enumerate() {
        if tags.iter().any(|t| t == &be.tag) {
            edges.push(i);
        }
    }
    for t in tags {
        if !mesh.boundary_edges.iter().any(|be| &be.tag == t) {
            return Err(Error::Assembly(format!("segment tag '{t}' absent from mesh")));
        }
    }
    let lengths: Vec<f64> = edges
        .iter()
        .map(|&i| {
            let [a, b] = mesh.boundary_edges[i].nodes;
            norm([mesh.nodes[b][0] - mesh.nodes[a][0], mesh.nodes[b][1] - mesh.nodes[a][1]])
        })
        .collect();
    let mut values = Vec::with_capacity(frames.len());
    let mut weighted = Vec::with_capacity(frames.len());
    for field in frames {
        let mut row = Vec::with_capacity(edges.len());
        let mut wrow = Vec::with_capacity(edges.len());
        for &i in &edges {
            let be = &mesh.boundary_edges[i];
            let t = adj[i];
            let geom = tri_geom(mesh, t);
            let tri = mesh.triangles[t];
            let mut g = [0.0f64; 2];
            for v in 0..3 {
                g[0] += field[tri[v]] * geom.grads[v][0];
                g[1] += field[tri[v]] * geom.grads[v][1];
            }
            let dn = g[0] * be.normal[0] + g[1] * be.normal[1];
            let [a, b] = be.nodes;
            let mid = [
                0.5 * (mesh.nodes[a][0] + mesh.nodes[b][0]),
                0.5 * (mesh.nodes[a][1] + mesh.nodes[b][1]),
            ];
            row.push(dn);
            wrow.push(norm(mid).powf(alpha) * dn);
        }
        values.push(row);
        weighted.push(wrow);
    }
    Ok(FluxTrace { edges, lengths, values, weighted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::flat_bottom_rect;
    use crate::mesh::generate_mesh;

    fn setup(h: f64) -> (Mesh, AssembledOperators) {
        let d = flat_bottom_rect(1.0, 1.0, 0.4).unwrap();
        let mesh = generate_mesh(&d, h, 2.0).unwrap();
        let ops = assemble(&mesh, 0.5).unwrap();
        (mesh, ops)
    }

    #[test]
    fn symmetry_and_annihilation() {
        let (mesh, ops) = setup(0.1);
        for a in [&ops.k, &ops.m, &ops.h] {
            assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
        }
        let ones = vec![1.0; mesh.n_nodes()];
        let k1 = ops.k.apply(&ones);
        let maxk = ops.k.max_abs();
        assert!(k1.iter().all(|v| v.abs() <= 1e-12 * maxk));
    }

    #[test]
    fn mass_matrix_integrates_area() {
        let (mesh, ops) = setup(0.1);
        let ones = vec![1.0; mesh.n_nodes()];
        let area = ops.m.quad(&ones, &ones);
        assert!((area - 1.0).abs() < 1e-10, "area = {area}");
    }

    #[test]
    fn stiffness_matches_centroid_scaling_far_from_origin() {
        let (mesh, _) = setup(0.05);
        // pick a triangle far from the origin
        let t = (0..mesh.triangles.len())
            .max_by(|&a, &b| {
                let c = |t: usize| {
                    let tri = mesh.triangles[t];
                    let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
                    let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
                    let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
                    cx * cx + cy * cy
                };
                c(a).partial_cmp(&c(b)).unwrap()
            })
            .unwrap();
        let alpha = 0.5;
        let (k, _, _) = local_matrices(&mesh, t, alpha).unwrap();
        let tri = mesh.triangles[t];
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let cen = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let wc = norm(cen).powf(alpha);
        // unweighted stiffness entry times centroid weight
        let geom = tri_geom(&mesh, t);
        #[allow(clippy::needless_range_loop)]
        for i in 0..3 {
            for j in 0..3 {
                let unweighted = geom.area
                    * (geom.grads[i][0] * geom.grads[j][0] + geom.grads[i][1] * geom.grads[j][1]);
                let expect = wc * unweighted;
                if expect.abs() > 1e-12 {
                    assert!((k[i][j] - expect).abs() <= 0.01 * expect.abs());
                }
            }
        }
    }

    #[test]
    fn flux_exact_for_linear_field() {
        let (mesh, _) = setup(0.1);
        let field: Vec<f64> = mesh.nodes.iter().map(|p| p[1]).collect();
        let tr = boundary_flux(&mesh, &[field], &["top".into()], 0.5).unwrap();
        for v in &tr.values[0] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let zero = vec![0.0; mesh.n_nodes()];
        let tz = boundary_flux(&mesh, &[zero], &["top".into()], 0.5).unwrap();
        assert!(tz.values[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flux_converges_for_quadratic_field() {
        // field x₁² on the right edge (ν = (1,0)) at x₁ = 1/2 has flux 1.0
        let errs: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&h| {
                let d = flat_bottom_rect(1.0, 1.0, 0.4).unwrap();
                let mesh = generate_mesh(&d, h, 1.0).unwrap();
                let field: Vec<f64> = mesh.nodes.iter().map(|p| p[0] * p[0]).collect();
                let tr = boundary_flux(&mesh, &[field], &["right".into()], 0.5).unwrap();
                tr.values[0]
                    .iter()
                    .map(|v| (v - 1.0).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[1] < errs[0]);
        assert!(errs[0] < 0.2, "O(h) recovery, err = {}", errs[0]);
    }

    #[test]
    fn flux_unknown_tag_rejected() {
        let (mesh, _) = setup(0.2);
        let zero = vec![0.0; mesh.n_nodes()];
        assert!(boundary_flux(&mesh, &[zero], &["nope".into()], 0.5).is_err());
    }

    #[test]
    fn submesh_local_matrices_match_parent_bitwise() {
        let (mesh, _) = setup(0.05);
        let sub = crate::mesh::submesh_outside_ball(&mesh, 0.05).unwrap();
        let pm = sub.parent_map.as_ref().unwrap();
        // map parent triangle (by sorted parent node ids) -> index
        let mut parent_tris = std::collections::HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let mut key = *tri;
            key.sort_unstable();
            parent_tris.insert(key, t);
        }
        for (st, stri) in sub.triangles.iter().enumerate() {
            let mut key = [pm[stri[0]], pm[stri[1]], pm[stri[2]]];
            key.sort_unstable();
            let pt = parent_tris[&key];
            let (ks, ms, hs) = local_matrices(&sub, st, 0.5).unwrap();
            let (kp, mp, hp) = local_matrices(&mesh, pt, 0.5).unwrap();
            assert_eq!(ks, kp);
            assert_eq!(ms, mp);
            assert_eq!(hs, hp);
        }
    }
}
