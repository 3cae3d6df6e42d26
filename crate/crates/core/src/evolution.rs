//! Time integration of ∂ₜy − div(|x|^α ∇y) = f with homogeneous Dirichlet
//! data: Crank–Nicolson on the assembled operators, a spectral Duhamel
//! solver, zero extension from truncated domains, and the δ-sweep study.

use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::{assemble, boundary_flux, AssembledOperators};
use crate::error::{Error, Result};
use crate::mesh::{generate_mesh, submesh_outside_ball, Mesh};
use crate::sparse::BandChol;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    CrankNicolson,
    Spectral,
}

#[derive(Debug, Clone)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
    pub times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0) {
            return Err(Error::Config(format!("t_final must be positive, got {t_final}")));
        }
        if steps < 2 {
            return Err(Error::Config(format!("need at least 2 time steps, got {steps}")));
        }
        let dt = t_final / steps as f64;
        let times = (0..=steps).map(|k| k as f64 * dt).collect();
        Ok(TimeGrid { t_final, steps, times })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }
}

/// Nodal frames over the full node set, one per time-grid point, always
/// stored with frames[k] at times[k] regardless of integration direction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub frames: Vec<Vec<f64>>,
    pub direction: Direction,
    pub scheme: Scheme,
}

impl Trajectory {
    /// trapezoid-in-time of the M-quadratic form of frame differences:
    /// the discrete L²(0,T; L²) distance to `other`
    pub fn l2q_distance(&self, other: &Trajectory, ops: &AssembledOperators) -> f64 {
        assert_eq!(self.frames.len(), other.frames.len());
        let dt = self.grid.dt();
        let mut acc = 0.0;
        for (k, (a, b)) in self.frames.iter().zip(&other.frames).enumerate() {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let w = if k == 0 || k == self.frames.len() - 1 { 0.5 } else { 1.0 };
            acc += w * ops.m.quad(&diff, &diff);
        }
        (acc * dt).sqrt()
    }

    pub fn m_norm(&self, k: usize, ops: &AssembledOperators) -> f64 {
        ops.m.quad(&self.frames[k], &self.frames[k]).sqrt()
    }
}

fn zero_dirichlet(mesh: &Mesh, field: &mut [f64]) {
    for (i, v) in field.iter_mut().enumerate() {
        if mesh.dirichlet_mask[i] {
            *v = 0.0;
        }
    }
}

/// Crank–Nicolson propagator pieces on the free dofs: factor of
/// A = M + Δt/2 K, and B = M − Δt/2 K.
pub struct CnStepper {
    pub a_chol: BandChol,
    pub b: crate::sparse::Csr,
    pub dt: f64,
}

impl CnStepper {
    pub fn new(ops: &AssembledOperators, dt: f64) -> Result<Self> {
        let a = ops.mf.linear_combination(1.0, &ops.kf, 0.5 * dt);
        let b = ops.mf.linear_combination(1.0, &ops.kf, -0.5 * dt);
        let a_chol = BandChol::factor(&a)
            .map_err(|e| Error::Evolution(format!("Crank–Nicolson factorization failed: {e}")))?;
        Ok(CnStepper { a_chol, b, dt })
    }

    /// one homogeneous step on free dofs: y ← A⁻¹ B y
    pub fn step_free(&self, y: &[f64]) -> Vec<f64> {
        self.a_chol.solve(&self.b.apply(y))
    }
}

/// Forward Crank–Nicolson solve with nodal initial data and forcing
/// f(t, node) sampled at interval midpoints.
pub fn solve_forward_cn<F>(
    mesh: &Mesh,
    ops: &AssembledOperators,
    grid: &TimeGrid,
    y0: &[f64],
    forcing: Option<&F>,
) -> Result<Trajectory>
where
    F: Fn(f64, crate::geometry::Point) -> f64,
{
    if y0.len() != mesh.n_nodes() {
        return Err(Error::Evolution(format!(
            "initial data has {} entries, mesh has {} nodes",
            y0.len(),
            mesh.n_nodes()
        )));
    }
    let stepper = CnStepper::new(ops, grid.dt())?;
    let mut y0 = y0.to_vec();
    zero_dirichlet(mesh, &mut y0);
    let mut frames = Vec::with_capacity(grid.steps + 1);
    frames.push(y0.clone());
    let mut yf = ops.gather(&y0);
    for k in 0..grid.steps {
        let mut rhs = stepper.b.apply(&yf);
        if let Some(f) = forcing {
            let t_mid = (grid.times[k] + grid.times[k + 1]) * 0.5;
            let fvals: Vec<f64> = mesh.nodes.iter().map(|p| f(t_mid, *p)).collect();
            let mf = ops.m.apply(&fvals);
            let mff = ops.gather(&mf);
            for (r, v) in rhs.iter_mut().zip(&mff) {
                *r += grid.dt() * v;
            }
        }
        yf = stepper.a_chol.solve(&rhs);
        frames.push(ops.scatter(&yf, mesh.n_nodes()));
    }
    Ok(Trajectory { grid: grid.clone(), frames, direction: Direction::Forward, scheme: Scheme::CrankNicolson })
}

/// Forward spectral solve by Duhamel's formula on the computed modes, with
/// Simpson quadrature of the forcing convolution per interval.
pub fn solve_forward_spectral<F>(
    mesh: &Mesh,
    ops: &AssembledOperators,
    basis: &SpectralBasis,
    grid: &TimeGrid,
    y0: &[f64],
    forcing: Option<&F>,
) -> Result<Trajectory>
where
    F: Fn(f64, crate::geometry::Point) -> f64,
{
    let mut y0 = y0.to_vec();
    zero_dirichlet(mesh, &mut y0);
    let (c0, _) = crate::spectral::expand(basis, ops, &y0);
    let dt = grid.dt();
    let n = mesh.n_nodes();
    // modal forcing samples at grid points and midpoints
    let modal_f = |t: f64| -> Vec<f64> {
        match forcing {
            None => vec![0.0; basis.m],
            Some(f) => {
                let fv: Vec<f64> = mesh.nodes.iter().map(|p| f(t, *p)).collect();
                let (cf, _) = crate::spectral::expand(basis, ops, &fv);
                cf
            }
        }
    };
    let mut coeffs = c0.clone();
    let mut frames = Vec::with_capacity(grid.steps + 1);
    let reconstruct = |coeffs: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (c, phi) in coeffs.iter().zip(&basis.phis) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += c * p;
            }
        }
        out
    };
    frames.push(reconstruct(&coeffs));
    let mut f_lo = modal_f(grid.times[0]);
    for k in 0..grid.steps {
        let t0 = grid.times[k];
        let f_mid = modal_f(t0 + 0.5 * dt);
        let f_hi = modal_f(grid.times[k + 1]);
        for i in 0..basis.m {
            let lam = basis.lambdas[i];
            let decay = (-lam * dt).exp();
            // Simpson on ∫ e^{−λ(t_{k+1}−τ)} f(τ) dτ over the interval
            let quad = dt / 6.0
                * (decay * f_lo[i] + 4.0 * (-lam * dt * 0.5).exp() * f_mid[i] + f_hi[i]);
            coeffs[i] = decay * coeffs[i] + quad;
        }
        f_lo = f_hi;
        frames.push(reconstruct(&coeffs));
    }
    Ok(Trajectory { grid: grid.clone(), frames, direction: Direction::Forward, scheme: Scheme::Spectral })
}

/// Backward (adjoint) solve from terminal data φ(T) = φ_T: the substitution
/// s = T − t reduces it to the forward homogeneous equation; frames are
/// re-indexed so frames[k] sits at times[k].
pub fn solve_backward(
    mesh: &Mesh,
    ops: &AssembledOperators,
    grid: &TimeGrid,
    phi_t: &[f64],
    scheme: Scheme,
    basis: Option<&SpectralBasis>,
) -> Result<Trajectory> {
    let no_forcing: Option<&fn(f64, crate::geometry::Point) -> f64> = None;
    let fwd = match scheme {
        Scheme::CrankNicolson => solve_forward_cn(mesh, ops, grid, phi_t, no_forcing)?,
        Scheme::Spectral => {
            let b = basis.ok_or_else(|| {
                Error::Evolution("spectral backward solve requires an eigenbasis".into())
            })?;
            solve_forward_spectral(mesh, ops, b, grid, phi_t, no_forcing)?
        }
    };
    let mut frames = fwd.frames;
    frames.reverse();
    Ok(Trajectory { grid: grid.clone(), frames, direction: Direction::Backward, scheme })
}

/// Zero extension of truncated-domain frames back to the parent node set;
/// nodal values are injected through the submesh parent map, so discrete
/// norms built from shared triangles are preserved bitwise.
pub fn extend_by_zero(sub: &Trajectory, sub_mesh: &Mesh, parent_nodes: usize) -> Result<Trajectory> {
    let pm = sub_mesh
        .parent_map
        .as_ref()
        .ok_or_else(|| Error::Evolution("mesh has no parent map; not a truncation submesh".into()))?;
    let frames = sub
        .frames
        .iter()
        .map(|f| {
            let mut out = vec![0.0; parent_nodes];
            for (i, &p) in pm.iter().enumerate() {
                out[p] = f[i];
            }
            out
        })
        .collect();
    Ok(Trajectory { grid: sub.grid.clone(), frames, direction: sub.direction, scheme: sub.scheme })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub l2q_error: f64,
    pub flux_error_gamma_plus: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub monotone: bool,
    pub inversions: usize,
}

/// δ-sweep: solve on Ω, then on each Ω_δ with the same data extended by
/// zero, and report L²(Q) and Γ⁺-flux errors against the full-domain run.
#[allow(clippy::too_many_arguments)]
pub fn delta_sweep<F>(
    domain: &crate::geometry::DomainSpec,
    alpha: f64,
    h: f64,
    grading: f64,
    grid: &TimeGrid,
    y0_fn: &F,
    deltas: &[f64],
    flux_tags: &[String],
) -> Result<(SweepReport, Mesh)>
where
    F: Fn(crate::geometry::Point) -> f64 + Sync,
{
    let delta_max = domain.delta_max();
    let max_delta = deltas.iter().cloned().fold(0.0, f64::max);
    for &d in deltas {
        if !(d > 0.0 && d < delta_max) {
            return Err(Error::Config(format!("delta {d} outside (0, {delta_max})")));
        }
    }
    let mesh = generate_mesh(domain, h, grading)?;
    // the comparison is only meaningful when the data vanish on the removed region
    for p in &mesh.nodes {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if r <= max_delta && y0_fn(*p).abs() > 0.0 {
            return Err(Error::Config(format!(
                "initial data does not vanish inside the truncation ball (|x| = {r:.3e})"
            )));
        }
    }
    let ops = assemble(&mesh, alpha)?;
    let y0: Vec<f64> = mesh.nodes.iter().map(|p| y0_fn(*p)).collect();
    let no_forcing: Option<&fn(f64, crate::geometry::Point) -> f64> = None;
    let reference = solve_forward_cn(&mesh, &ops, grid, &y0, no_forcing)?;
    let ref_flux = boundary_flux(&mesh, &reference.frames, flux_tags, alpha)?;

    let mut rows: Vec<SweepRow> = deltas
        .par_iter()
        .map(|&delta| -> Result<SweepRow> {
            let t_start = std::time::Instant::now();
            let sub = submesh_outside_ball(&mesh, delta)?;
            let sops = assemble(&sub, alpha)?;
            let sy0: Vec<f64> = sub.nodes.iter().map(|p| y0_fn(*p)).collect();
            let straj = solve_forward_cn(&sub, &sops, grid, &sy0, no_forcing)?;
            let ext = extend_by_zero(&straj, &sub, mesh.n_nodes())?;
            let l2q = ext.l2q_distance(&reference, &ops);
            let ext_flux = boundary_flux(&mesh, &ext.frames, flux_tags, alpha)?;
            let mut facc = 0.0;
            for k in 0..=grid.steps {
                let w = if k == 0 || k == grid.steps { 0.5 } else { 1.0 };
                let mut frame = 0.0;
                for (e, len) in ref_flux.lengths.iter().enumerate() {
                    let d = ref_flux.values[k][e] - ext_flux.values[k][e];
                    frame += len * d * d;
                }
                facc += w * frame;
            }
            Ok(SweepRow {
                delta,
                l2q_error: l2q,
                flux_error_gamma_plus: (facc * grid.dt()).sqrt(),
                runtime_ms: t_start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.delta.partial_cmp(&a.delta).unwrap());
    // decreasing δ should not increase the error (small inversions within
    // quadrature noise are counted, not failed, here)
    let mut inversions = 0;
    for w in rows.windows(2) {
        if w[1].l2q_error > w[0].l2q_error * (1.0 + 1e-12) {
            inversions += 1;
        }
    }
    let monotone = inversions == 0;
    Ok((SweepReport { rows, monotone, inversions }, mesh))
}
