//! Planar polygonal domains with a boundary degeneracy point at the origin.
//!
//! The domain carries the radius `R0` of the neighborhood where the sign
//! condition `x·ν ≤ 0` is required, and `M_radius` with `Ω ⊆ B(0, M_radius − 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const ORIGIN_TOL: f64 = 1e-12;
/// Zero-class tolerance for the sign of x·ν at edge midpoints.
pub const XNU_TOL: f64 = 1e-10;

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Outward unit normal of a CCW polygon edge from `a` to `b`.
#[inline]
pub fn outward_normal(a: Point, b: Point) -> Point {
    let d = sub(b, a);
    let len = norm(d);
    [d[1] / len, -d[0] / len]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub vertices: Vec<Point>,
    pub segments: Vec<Segment>,
    pub contains_origin_on_boundary: bool,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "M_radius")]
    pub m_radius: f64,
}

impl DomainSpec {
    /// Build a validated domain. `tags` has one entry per edge `(v_i, v_{i+1})`;
    /// when absent, edges are tagged `e0, e1, ...`.
    pub fn new(vertices: Vec<Point>, tags: Option<Vec<String>>, r0: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain("polygon needs at least 3 vertices".into()));
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidDomain("R0 must be positive".into()));
        }
        let n = vertices.len();
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::InvalidDomain(
                "polygon must be counter-clockwise with positive area".into(),
            ));
        }
        if !is_simple(&vertices) {
            return Err(Error::InvalidDomain("polygon is self-intersecting".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            let w = vertices[(i + 1) % n];
            if norm(sub(w, *v)) < 1e-14 {
                return Err(Error::InvalidDomain(format!("degenerate edge at vertex {i}")));
            }
        }
        let tags = match tags {
            Some(t) => {
                if t.len() != n {
                    return Err(Error::InvalidDomain("tag count must equal edge count".into()));
                }
                t
            }
            None => (0..n).map(|i| format!("e{i}")).collect(),
        };
        let segments = tags
            .into_iter()
            .enumerate()
            .map(|(i, tag)| Segment { start: i, end: (i + 1) % n, tag })
            .collect();
        let max_norm = vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max);
        let m_radius = 1.0 + max_norm;
        let contains_origin_on_boundary = origin_on_boundary(&vertices);
        Ok(DomainSpec { vertices, segments, contains_origin_on_boundary, r0, m_radius })
    }

    pub fn edge_endpoints(&self, seg: &Segment) -> (Point, Point) {
        (self.vertices[seg.start], self.vertices[seg.end])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.vertices, p)
    }

    /// δ₀ = (1/16)·min{1, R₀, M_radius}, the admissible truncation bound.
    pub fn delta0(&self) -> f64 {
        self.r0.min(1.0).min(self.m_radius) / 16.0
    }

    /// largest δ for which the truncation ball stays well inside B(0, R₀)
    pub fn delta_max(&self) -> f64 {
        self.r0 / 2.0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "vertices": self.vertices,
            "R0": self.r0,
            "M_radius": self.m_radius,
            "tags": self.segments.iter().map(|s| s.tag.clone()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let vertices: Vec<Point> = serde_json::from_value(
            v.get("vertices")
                .cloned()
                .ok_or_else(|| Error::Config("domain JSON missing 'vertices'".into()))?,
        )?;
        let r0 = v
            .get("R0")
            .and_then(|x| x.as_f64())
            .ok_or_else(|| Error::Config("domain JSON missing 'R0'".into()))?;
        let tags: Option<Vec<String>> = match v.get("tags") {
            Some(t) => Some(serde_json::from_value(t.clone())?),
            None => None,
        };
        DomainSpec::new(vertices, tags, r0)
    }
}

pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let cross = |o: Point, a: Point, b: Point| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn is_simple(vertices: &[Point]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        for j in (i + 1)..n {
            // skip adjacent edges (shared vertex)
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (p1, p2) = (vertices[i], vertices[(i + 1) % n]);
            let (q1, q2) = (vertices[j], vertices[(j + 1) % n]);
            if segments_intersect(p1, p2, q1, q2) {
                return false;
            }
        }
    }
    true
}

pub fn point_in_polygon(vertices: &[Point], p: Point) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let vi = vertices[i];
        let vj = vertices[j];
        if ((vi[1] > p[1]) != (vj[1] > p[1]))
            && p[0] < (vj[0] - vi[0]) * (p[1] - vi[1]) / (vj[1] - vi[1]) + vi[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = sub(b, a);
    let t = (dot(sub(p, a), d) / dot(d, d)).clamp(0.0, 1.0);
    norm(sub(p, [a[0] + t * d[0], a[1] + t * d[1]]))
}

fn origin_on_boundary(vertices: &[Point]) -> bool {
    let n = vertices.len();
    (0..n).any(|i| point_segment_distance([0.0, 0.0], vertices[i], vertices[(i + 1) % n]) <= ORIGIN_TOL)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryClassification {
    pub gamma_plus: Vec<usize>,
    pub gamma_zero: Vec<usize>,
    pub gamma_minus: Vec<usize>,
    pub condition_holds: bool,
    pub sup_x_dot_nu: f64,
}

/// Classify boundary edges by the sign of x·ν at their midpoints, and check
/// the sign condition on ∂Ω ∩ B(0, R₀).
pub fn classify_boundary(domain: &DomainSpec, tol: f64) -> BoundaryClassification {
    let mut gamma_plus = Vec::new();
    let mut gamma_zero = Vec::new();
    let mut gamma_minus = Vec::new();
    let mut condition_holds = true;
    let mut sup = f64::NEG_INFINITY;
    for (i, seg) in domain.segments.iter().enumerate() {
        let (a, b) = domain.edge_endpoints(seg);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let nu = outward_normal(a, b);
        let xnu = dot(mid, nu);
        sup = sup.max(xnu);
        if xnu > tol {
            gamma_plus.push(i);
        } else if xnu < -tol {
            gamma_minus.push(i);
        } else {
            gamma_zero.push(i);
        }
        if norm(mid) < domain.r0 && xnu > tol {
            condition_holds = false;
        }
    }
    BoundaryClassification { gamma_plus, gamma_zero, gamma_minus, condition_holds, sup_x_dot_nu: sup }
}

impl BoundaryClassification {
    /// Tags of the Γ⁺ edges of `domain` (deduplicated, in boundary order).
    pub fn gamma_plus_tags(&self, domain: &DomainSpec) -> Vec<String> {
        let mut tags = Vec::new();
        for &i in &self.gamma_plus {
            let t = &domain.segments[i].tag;
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        tags
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub delta: f64,
    pub arc_segments: usize,
    pub delta0: f64,
}

impl TruncationSpec {
    pub fn new(delta: f64, arc_segments: usize, domain: &DomainSpec) -> Result<Self> {
        let delta0 = domain.delta0();
        // geometric admissibility: the ball must stay inside the neighborhood
        // where x·ν ≤ 0 holds; the tighter theoretical bound δ₀ is kept on
        // the struct for reporting
        let delta_max = domain.delta_max();
        if !(delta > 0.0 && delta < delta_max) {
            return Err(Error::InvalidDomain(format!(
                "delta {delta} outside admissible range (0, {delta_max})"
            )));
        }
        if arc_segments < 8 {
            return Err(Error::InvalidDomain("arc_segments must be at least 8".into()));
        }
        Ok(TruncationSpec { delta, arc_segments, delta0 })
    }
}

/// Remove the cap B(0, δ) ∩ Ω, replacing it by a polyline arc on which
/// x·ν ≈ −δ. A domain whose boundary stays outside the ball is returned
/// unchanged (truncation is idempotent).
pub fn truncate_domain(domain: &DomainSpec, spec: &TruncationSpec) -> Result<DomainSpec> {
    let delta = spec.delta;
    let verts = &domain.vertices;
    let n = verts.len();

    let strictly_inside = |p: Point| norm(p) < delta * (1.0 - 1e-12);
    if !verts.iter().any(|v| strictly_inside(*v)) && !boundary_dips_into_ball(domain, delta) {
        return Ok(domain.clone());
    }

    // Start from a vertex outside the ball and walk the closed polyline,
    // replacing the in-ball run by an arc.
    let start = verts
        .iter()
        .position(|v| norm(*v) > delta * (1.0 + 1e-12))
        .ok_or_else(|| Error::InvalidDomain("all vertices inside truncation ball".into()))?;

    let mut out_verts: Vec<Point> = Vec::new();
    let mut out_tags: Vec<String> = Vec::new();
    let mut inside = false;
    let mut pending_entry: Option<Point> = None;

    for k in 0..n {
        let i = (start + k) % n;
        let a = verts[i];
        let b = verts[(i + 1) % n];
        let tag = domain.segments[i].tag.clone();
        let roots = circle_crossings(a, b, delta);
        if !inside {
            out_verts.push(a);
            out_tags.push(tag.clone());
            match roots.len() {
                0 => {}
                1 => {
                    // entering the ball
                    pending_entry = Some(point_at(a, b, roots[0]));
                    out_verts.push(pending_entry.unwrap());
                    out_tags.push("arc".into());
                    inside = true;
                }
                _ => {
                    // dip: enters and exits within one edge
                    let p_in = point_at(a, b, roots[0]);
                    let p_out = point_at(a, b, roots[1]);
                    out_verts.push(p_in);
                    out_tags.push("arc".into());
                    emit_arc(domain, p_in, p_out, delta, spec.arc_segments, &mut out_verts, &mut out_tags)?;
                    out_verts.push(p_out);
                    out_tags.push(tag.clone());
                }
            }
        } else {
            match roots.len() {
                0 => {} // still inside; drop vertex a
                _ => {
                    let t_exit = *roots.last().unwrap();
                    let p_out = point_at(a, b, t_exit);
                    let p_in = pending_entry
                        .take()
                        .ok_or_else(|| Error::InvalidDomain("arc failed to close against boundary".into()))?;
                    emit_arc(domain, p_in, p_out, delta, spec.arc_segments, &mut out_verts, &mut out_tags)?;
                    out_verts.push(p_out);
                    out_tags.push(tag.clone());
                    inside = false;
                }
            }
        }
    }
    if inside {
        return Err(Error::InvalidDomain("arc failed to close against boundary".into()));
    }

    let mut truncated = DomainSpec::new(out_verts, Some(out_tags), domain.r0)?;
    // keep the parent's enclosing-ball radius
    truncated.m_radius = domain.m_radius;
    Ok(truncated)
}

fn boundary_dips_into_ball(domain: &DomainSpec, delta: f64) -> bool {
    let n = domain.vertices.len();
    (0..n).any(|i| {
        let a = domain.vertices[i];
        let b = domain.vertices[(i + 1) % n];
        point_segment_distance([0.0, 0.0], a, b) < delta * (1.0 - 1e-12)
            && circle_crossings(a, b, delta).len() == 2
    })
}

fn point_at(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Parameters t ∈ (0,1) where the segment crosses the circle |x| = r, sorted.
fn circle_crossings(a: Point, b: Point, r: f64) -> Vec<f64> {
    let d = sub(b, a);
    let qa = dot(d, d);
    let qb = 2.0 * dot(a, d);
    let qc = dot(a, a) - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let mut out = Vec::new();
    for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
        if t > 1e-12 && t < 1.0 - 1e-12 {
            out.push(t);
        }
    }
    out
}

/// Interior polyline points of the circular arc from `p_in` to `p_out` (both on
/// |x| = δ), choosing the branch that lies inside Ω.
fn emit_arc(
    domain: &DomainSpec,
    p_in: Point,
    p_out: Point,
    delta: f64,
    arc_segments: usize,
    out_verts: &mut Vec<Point>,
    out_tags: &mut Vec<String>,
) -> Result<()> {
    let th_in = p_in[1].atan2(p_in[0]);
    let th_out = p_out[1].atan2(p_out[0]);
    // Two candidate sweeps; pick the one whose midpoint is inside Ω.
    let mut sweep = th_out - th_in;
    if sweep > 0.0 {
        sweep -= std::f64::consts::TAU;
    }
    // candidate A: negative (clockwise) sweep; candidate B: the complement
    let cand = [sweep, sweep + std::f64::consts::TAU];
    let chosen = cand
        .into_iter()
        .find(|s| {
            let mid_th = th_in + 0.5 * s;
            domain.contains([delta * mid_th.cos(), delta * mid_th.sin()])
        })
        .ok_or_else(|| Error::InvalidDomain("truncation arc lies outside the domain".into()))?;
    for k in 1..arc_segments {
        let th = th_in + chosen * (k as f64) / (arc_segments as f64);
        out_verts.push([delta * th.cos(), delta * th.sin()]);
        out_tags.push("arc".into());
    }
    Ok(())
}

/// Canonical rectangle (−w/2, w/2) × (0, h): the origin is the midpoint of the
/// bottom edge, so x·ν = 0 there.
pub fn flat_bottom_rect(width: f64, height: f64, r0: f64) -> Result<DomainSpec> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidDomain("rectangle width/height must be positive".into()));
    }
    let a = width / 2.0;
    let vertices = vec![[-a, 0.0], [a, 0.0], [a, height], [-a, height]];
    let tags = vec!["bottom".into(), "right".into(), "top".into(), "left".into()];
    let d = DomainSpec::new(vertices, Some(tags), r0)?;
    if !d.contains_origin_on_boundary {
        return Err(Error::InvalidDomain("origin is not on the boundary".into()));
    }
    Ok(d)
}

/// Pentagon with a V-notch meeting the origin: the two slanted edges lie on
/// lines through 0, so x·ν = 0 there and the sign condition holds.
pub fn notched_polygon(width: f64, height: f64, notch_height: f64, r0: f64) -> Result<DomainSpec> {
    if !(width > 0.0 && height > 0.0 && notch_height > 0.0 && notch_height < height) {
        return Err(Error::InvalidDomain("inconsistent notched polygon parameters".into()));
    }
    let a = width / 2.0;
    let c = notch_height;
    let vertices = vec![[-a, c], [0.0, 0.0], [a, c], [a, c + height], [-a, c + height]];
    let tags = vec!["notch_left".into(), "notch_right".into(), "right".into(), "top".into(), "left".into()];
    let d = DomainSpec::new(vertices, Some(tags), r0)?;
    if !d.contains_origin_on_boundary {
        return Err(Error::InvalidDomain("origin is not on the boundary".into()));
    }
    Ok(d)
}

/// Sampled polyline of the oscillating boundary x₂ = |x₁|^16 sin(1/|x₁|)
/// closed by a box above. The sign of x·ν oscillates near 0, so the geometric
/// condition fails for any R₀ covering the sampled oscillation.
pub fn oscillating_boundary_domain(r0: f64) -> Result<DomainSpec> {
    let g = |r: f64| r.powi(16) * (1.0 / r).sin();
    // sample radii from 1 down to 0.25, uniform in 1/r to resolve the oscillation
    let m = 48usize;
    let radii: Vec<f64> = (0..=m).map(|k| 1.0 / (1.0 + 3.0 * (k as f64) / (m as f64))).collect();
    let mut verts: Vec<Point> = Vec::new();
    // bottom boundary left to right, passing through the origin
    for r in radii.iter() {
        verts.push([-r, g(*r)]);
    }
    verts.push([0.0, 0.0]);
    for r in radii.iter().rev() {
        verts.push([*r, g(*r)]);
    }
    verts.push([1.0, 1.5]);
    verts.push([-1.0, 1.5]);
    let d = DomainSpec::new(verts, None, r0)?;
    if !d.contains_origin_on_boundary {
        return Err(Error::InvalidDomain("origin is not on the boundary".into()));
    }
    Ok(d)
}

/// Dispatcher used by the CLI configuration layer.
pub fn build_canonical_domain(kind: &str, params: &serde_json::Value) -> Result<DomainSpec> {
    let f = |key: &str, default: Option<f64>| -> Result<f64> {
        match params.get(key).and_then(|v| v.as_f64()) {
            Some(v) => Ok(v),
            None => default.ok_or_else(|| Error::Config(format!("missing domain parameter '{key}'"))),
        }
    };
    match kind {
        "flat_bottom_rect" => {
            flat_bottom_rect(f("width", Some(1.0))?, f("height", Some(1.0))?, f("r0", Some(0.4))?)
        }
        "notched_polygon" => notched_polygon(
            f("width", Some(1.0))?,
            f("height", Some(1.0))?,
            f("notch_height", Some(0.25))?,
            f("r0", Some(0.4))?,
        ),
        "oscillating" => oscillating_boundary_domain(f("r0", Some(0.5))?),
        "custom" => DomainSpec::from_json(params),
        other => Err(Error::Config(format!("unknown domain kind '{other}'"))),
    }
}
