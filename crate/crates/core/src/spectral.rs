//! Lowest eigenpairs of K Φ = λ M Φ on the free dofs, and verifiers for the
//! Hardy and Poincaré inequalities and the eigen-expansion identities.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assemble::AssembledOperators;
use crate::error::{Error, Result};
use crate::sparse::BandChol;

const N_DIM: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    /// ascending eigenvalues
    pub lambdas: Vec<f64>,
    /// M-orthonormal eigenvectors on the full node set (zeros on Dirichlet nodes)
    pub phis: Vec<Vec<f64>>,
    pub m: usize,
    /// relative eigen-residuals ‖KΦ − λMΦ‖ / ((1 + λ)‖MΦ‖)
    pub residuals: Vec<f64>,
}

/// Inverse subspace iteration with M-inner products and Rayleigh–Ritz
/// projection; converges to the lower spectrum.
pub fn solve_eigenpairs(ops: &AssembledOperators, m: usize, mesh: &crate::mesh::Mesh) -> Result<SpectralBasis> {
    let n_nodes = mesh.n_nodes();
    let nf = ops.n_free();
    if m < 1 || m > nf {
        return Err(Error::Eigensolver(format!("m = {m} out of range 1..={nf}")));
    }
    let p = (m + m.max(8)).min(nf);
    let chol = BandChol::factor(&ops.kf)
        .map_err(|e| Error::Eigensolver(format!("stiffness factorization failed: {e}")))?;

    // deterministic random start
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0123);
    let mut x: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..nf).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();

    let tol = 1e-11;
    let max_iter = 400;
    let mut lambdas = vec![0.0; p];
    let mut converged = false;
    let mut last_res = vec![f64::INFINITY; m];
    for _ in 0..max_iter {
        // X <- K^{-1} M X
        for col in x.iter_mut() {
            let mx = ops.mf.apply(col);
            *col = chol.solve(&mx);
        }
        // Rayleigh-Ritz on span(X)
        let a_small = projected(&x, &x, &ops.kf);
        let b_small = projected(&x, &x, &ops.mf);
        let lb = nalgebra::Cholesky::new(b_small)
            .ok_or_else(|| Error::Eigensolver("projected mass matrix not SPD".into()))?;
        let linv = lb.l().clone().try_inverse().unwrap();
        let c = &linv * a_small * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let mut v = DMatrix::zeros(p, p);
        for (newc, &oldc) in order.iter().enumerate() {
            v.set_column(newc, &eig.eigenvectors.column(oldc));
            lambdas[newc] = eig.eigenvalues[oldc];
        }
        let v = linv.transpose() * v;
        // X <- X V
        let mut xn = vec![vec![0.0; nf]; p];
        for (j, xnj) in xn.iter_mut().enumerate() {
            for i in 0..p {
                let vij = v[(i, j)];
                if vij != 0.0 {
                    for (r, xi) in x[i].iter().enumerate() {
                        xnj[r] += vij * xi;
                    }
                }
            }
        }
        x = xn;
        // residuals for the wanted modes
        last_res = (0..m)
            .map(|i| {
                let kx = ops.kf.apply(&x[i]);
                let mx = ops.mf.apply(&x[i]);
                let lam = lambdas[i];
                let rnorm: f64 = kx
                    .iter()
                    .zip(&mx)
                    .map(|(a, b)| (a - lam * b) * (a - lam * b))
                    .sum::<f64>()
                    .sqrt();
                let mnorm: f64 = mx.iter().zip(&x[i]).map(|(a, b)| a * b).sum::<f64>().sqrt();
                rnorm / ((1.0 + lam) * mnorm)
            })
            .collect();
        if last_res.iter().all(|&r| r <= tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Eigensolver(format!(
            "subspace iteration did not converge: residuals {:?}",
            last_res
        )));
    }
    let mut phis: Vec<Vec<f64>> = x[..m].iter().map(|xf| ops.scatter(xf, n_nodes)).collect();
    // pin the sign of each mode by its first nonvanishing low-order moment so
    // mixed-mode data are comparable across meshes
    for phi in &mut phis {
        let mphi = ops.m.apply(phi);
        let moments = [
            mphi.iter().sum::<f64>(),
            mphi.iter().zip(&mesh.nodes).map(|(v, p)| v * p[0]).sum::<f64>(),
            mphi.iter().zip(&mesh.nodes).map(|(v, p)| v * p[1]).sum::<f64>(),
        ];
        let lead = moments.iter().cloned().find(|m| m.abs() > 1e-8).unwrap_or(moments[0]);
        if lead < 0.0 {
            for v in phi.iter_mut() {
                *v = -*v;
            }
        }
    }
    Ok(SpectralBasis { lambdas: lambdas[..m].to_vec(), phis, m, residuals: last_res })
}

fn projected(xs: &[Vec<f64>], ys: &[Vec<f64>], a: &crate::sparse::Csr) -> DMatrix<f64> {
    let p = xs.len();
    let ay: Vec<Vec<f64>> = ys.iter().map(|y| a.apply(y)).collect();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            out[(i, j)] = xs[i].iter().zip(&ay[j]).map(|(a, b)| a * b).sum();
        }
    }
    
    (&out + out.transpose()) * 0.5
}

/// Closed-form lower bound λ₁ ≥ (N−2+α)² / (4 M^{2−α}).
pub fn lambda1_lower_bound(alpha: f64, m_radius: f64) -> f64 {
    (N_DIM - 2.0 + alpha).powi(2) / (4.0 * m_radius.powf(2.0 - alpha))
}

pub fn hardy_bound(alpha: f64) -> f64 {
    4.0 / (N_DIM - 2.0 + alpha).powi(2)
}

pub fn poincare_bound(alpha: f64, m_radius: f64) -> f64 {
    4.0 * m_radius.powf(2.0 - alpha) / (N_DIM - 2.0 + alpha).powi(2)
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub ratios: Vec<f64>,
    pub bound: f64,
    pub tol_quad: f64,
    pub max_ratio: f64,
    pub pass: bool,
}

fn ratio_report(nums: Vec<f64>, dens: Vec<f64>, bound: f64, tol_quad: f64) -> Result<InequalityReport> {
    let mut ratios = Vec::with_capacity(nums.len());
    for (n, d) in nums.iter().zip(&dens) {
        if *d <= 0.0 {
            return Err(Error::Assembly("field with zero weighted-gradient energy".into()));
        }
        ratios.push(n / d);
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let pass = max_ratio <= bound * (1.0 + tol_quad);
    Ok(InequalityReport { ratios, bound, tol_quad, max_ratio, pass })
}

/// Hardy ratios (uᵀHu)/(uᵀKu) against the bound 4/(N−2+α)².
pub fn verify_hardy(ops: &AssembledOperators, fields: &[Vec<f64>], tol_quad: f64) -> Result<InequalityReport> {
    let nums = fields.iter().map(|u| ops.h.quad(u, u)).collect();
    let dens = fields.iter().map(|u| ops.k.quad(u, u)).collect();
    ratio_report(nums, dens, hardy_bound(ops.alpha), tol_quad)
}

/// Poincaré ratios (uᵀMu)/(uᵀKu) against 4 M^{2−α}/(N−2+α)².
pub fn verify_poincare(
    ops: &AssembledOperators,
    m_radius: f64,
    fields: &[Vec<f64>],
    tol_quad: f64,
) -> Result<InequalityReport> {
    let nums = fields.iter().map(|u| ops.m.quad(u, u)).collect();
    let dens = fields.iter().map(|u| ops.k.quad(u, u)).collect();
    ratio_report(nums, dens, poincare_bound(ops.alpha, m_radius), tol_quad)
}

/// Modal coefficients uᵢ = ΦᵢᵀM·field and the M-norm reconstruction residual.
pub fn expand(basis: &SpectralBasis, ops: &AssembledOperators, field: &[f64]) -> (Vec<f64>, f64) {
    let mfield = ops.m.apply(field);
    let coeffs: Vec<f64> = basis
        .phis
        .iter()
        .map(|phi| phi.iter().zip(&mfield).map(|(a, b)| a * b).sum())
        .collect();
    let mut recon = vec![0.0; field.len()];
    for (c, phi) in coeffs.iter().zip(&basis.phis) {
        for (r, p) in recon.iter_mut().zip(phi) {
            *r += c * p;
        }
    }
    let diff: Vec<f64> = field.iter().zip(&recon).map(|(a, b)| a - b).collect();
    let res = ops.m.quad(&diff, &diff).sqrt();
    (coeffs, res)
}

/// Smooth compactly supported bump exp(1 − 1/(1 − ρ²)) with ρ = |x−c|/r.
pub fn bump(x: crate::geometry::Point, center: crate::geometry::Point, radius: f64) -> f64 {
    let dx = [x[0] - center[0], x[1] - center[1]];
    let rho2 = (dx[0] * dx[0] + dx[1] * dx[1]) / (radius * radius);
    if rho2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - rho2)).exp()
    }
}

/// Test-field suite for the Hardy/Poincaré checks: the first eigenvectors plus
/// random bumps supported both near and away from the origin.
pub fn hardy_test_suite(
    basis: &SpectralBasis,
    mesh: &crate::mesh::Mesh,
    n_bumps: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut fields: Vec<Vec<f64>> = basis.phis.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xmin = mesh.nodes.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let xmax = mesh.nodes.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let ymax = mesh.nodes.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    for b in 0..n_bumps {
        let near_origin = b % 2 == 0;
        let (center, radius) = if near_origin {
            let r = 0.05 + 0.10 * rng.gen::<f64>();
            ([0.0, r * 1.2], r)
        } else {
            let cx = xmin * 0.5 + (xmax - xmin) * 0.5 * rng.gen::<f64>();
            let cy = ymax * (0.3 + 0.4 * rng.gen::<f64>());
            let r = 0.1 + 0.1 * rng.gen::<f64>();
            ([cx, cy], r)
        };
        let mut field: Vec<f64> = mesh.nodes.iter().map(|p| bump(*p, center, radius)).collect();
        for (i, v) in field.iter_mut().enumerate() {
            if mesh.dirichlet_mask[i] {
                *v = 0.0;
            }
        }
        if field.iter().any(|v| v.abs() > 0.0) {
            fields.push(field);
        }
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble;
    use crate::geometry::flat_bottom_rect;
    use crate::mesh::generate_mesh;

    fn setup() -> (crate::mesh::Mesh, AssembledOperators, SpectralBasis, f64) {
        let d = flat_bottom_rect(1.0, 1.0, 0.4).unwrap();
        let mesh = generate_mesh(&d, 0.1, 2.0).unwrap();
        let ops = assemble(&mesh, 0.5).unwrap();
        let basis = solve_eigenpairs(&ops, 10, &mesh).unwrap();
        (mesh, ops, basis, d.m_radius)
    }

    #[test]
    fn eigenpairs_ordered_orthonormal() {
        let (_, ops, basis, m_radius) = setup();
        assert!(basis.lambdas[0] > 0.0);
        for w in basis.lambdas.windows(2) {
            assert!(w[0] <= w[1] * (1.0 + 1e-14));
        }
        // strict simplicity gap
        assert!((basis.lambdas[1] - basis.lambdas[0]) / basis.lambdas[0] > 1e-10);
        // lower bound with zero tolerance relief
        assert!(basis.lambdas[0] >= lambda1_lower_bound(0.5, m_radius));
        for i in 0..basis.m {
            for j in 0..basis.m {
                let mij = ops.m.quad(&basis.phis[i], &basis.phis[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((mij - expect).abs() < 1e-8, "M[{i}{j}] = {mij}");
                let kij = ops.k.quad(&basis.phis[i], &basis.phis[j]);
                let kexp = if i == j { basis.lambdas[i] } else { 0.0 };
                assert!(
                    (kij - kexp).abs() <= 1e-6 * basis.lambdas[i],
                    "K[{i}{j}] = {kij} vs {kexp}"
                );
            }
        }
    }

    #[test]
    fn eigen_residual_small() {
        let (_, ops, basis, _) = setup();
        let phi1 = ops.gather(&basis.phis[0]);
        let k = ops.kf.apply(&phi1);
        let m = ops.mf.apply(&phi1);
        let lam = basis.lambdas[0];
        let r: f64 = k.iter().zip(&m).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
        let mn: f64 = m.iter().zip(&phi1).map(|(a, b)| a * b).sum::<f64>().sqrt();
        assert!(r / mn <= 1e-8 * (1.0 + lam), "residual {}", r / mn);
    }

    #[test]
    fn hardy_and_poincare_hold() {
        let (mesh, ops, basis, m_radius) = setup();
        let fields = hardy_test_suite(&basis, &mesh, 10, 7);
        let hr = verify_hardy(&ops, &fields, 0.02).unwrap();
        assert!(hr.pass, "hardy max ratio {} > {}", hr.max_ratio, hr.bound);
        assert!((hr.bound - 16.0).abs() < 1e-14);
        let pr = verify_poincare(&ops, m_radius, &fields, 0.02).unwrap();
        assert!(pr.pass, "poincare max ratio {} > {}", pr.max_ratio, pr.bound);
        // eigenvector Rayleigh identity: ratio = 1/λₙ, max at Φ₁
        assert!((pr.ratios[0] - 1.0 / basis.lambdas[0]).abs() < 1e-8 / basis.lambdas[0]);
        let max_eig_ratio = pr.ratios[..basis.m].iter().cloned().fold(0.0, f64::max);
        assert!((max_eig_ratio - pr.ratios[0]).abs() < 1e-12);
    }

    #[test]
    fn hardy_ratio_scale_invariant() {
        let (_, ops, basis, _) = setup();
        let u = basis.phis[0].clone();
        let su: Vec<f64> = u.iter().map(|v| 10.0 * v).collect();
        let r1 = verify_hardy(&ops, &[u], 0.02).unwrap().ratios[0];
        let r2 = verify_hardy(&ops, &[su], 0.02).unwrap().ratios[0];
        assert!((r1 - r2).abs() < 1e-12 * r1);
    }

    #[test]
    fn expansion_recovers_coefficients() {
        let (_, ops, basis, _) = setup();
        let (coeffs, res) = expand(&basis, &ops, &basis.phis[2]);
        for (i, c) in coeffs.iter().enumerate() {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-8);
        }
        assert!(res < 1e-7);
    }

    #[test]
    fn parseval_and_energy_partial_sums() {
        let (mesh, ops, basis, _) = setup();
        let field: Vec<f64> = mesh
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| if mesh.dirichlet_mask[i] { 0.0 } else { bump(*p, [0.1, 0.5], 0.3) })
            .collect();
        let (coeffs, _) = expand(&basis, &ops, &field);
        let m_norm2 = ops.m.quad(&field, &field);
        let partial: f64 = coeffs.iter().map(|c| c * c).sum();
        assert!(partial <= m_norm2 * (1.0 + 1e-10));
        // weighted-norm partial sums increase toward the K-energy
        let k_norm2 = ops.k.quad(&field, &field);
        let wsum: f64 = coeffs.iter().zip(&basis.lambdas).map(|(c, l)| c * c * l).sum();
        assert!(wsum <= k_norm2 * (1.0 + 1e-10));
        let wsum5: f64 = coeffs[..5].iter().zip(&basis.lambdas[..5]).map(|(c, l)| c * c * l).sum();
        assert!(wsum5 <= wsum);
    }

    #[test]
    fn domain_monotonicity_of_lambda1() {
        let (mesh, ops, basis, _) = setup();
        let sub = crate::mesh::submesh_outside_ball(&mesh, 0.05).unwrap();
        let sops = assemble(&sub, 0.5).unwrap();
        let sbasis = solve_eigenpairs(&sops, 1, &sub).unwrap();
        assert!(sbasis.lambdas[0] >= basis.lambdas[0] * (1.0 - 1e-12));
        // oracle: Rayleigh quotient of the extended eigenvector on Ω's operators
        let pm = sub.parent_map.as_ref().unwrap();
        let mut ext = vec![0.0; mesh.n_nodes()];
        for (i, &p) in pm.iter().enumerate() {
            ext[p] = sbasis.phis[0][i];
        }
        let rq = ops.k.quad(&ext, &ext) / ops.m.quad(&ext, &ext);
        assert!(rq >= basis.lambdas[0] * (1.0 - 1e-10));
        assert!((rq - sbasis.lambdas[0]).abs() <= 1e-8 * rq);
    }
}
