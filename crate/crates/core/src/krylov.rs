//! Jacobi-preconditioned Krylov iterations.
//!
//! Both solvers accept an optional mean-zero projection: when set, the
//! iterate and the residual are projected onto mean-zero vectors after every
//! step, which solves singular periodic problems without augmenting the
//! system.

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovOptions {
    pub rtol: f64,
    pub max_iter: usize,
    pub project_mean: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Relative residual `‖b - Ax‖/‖b‖` recomputed from the final iterate.
    pub residual: f64,
}

fn project(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn jacobi(diag: &[f64]) -> Vec<f64> {
    diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect()
}

fn true_residual(a: &CsrMatrix, b: &[f64], x: &[f64], opts: &KrylovOptions) -> f64 {
    let mut r = vec![0.0; b.len()];
    a.mul_vec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    if opts.project_mean {
        project(&mut r);
    }
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// `a`. `x` holds the initial guess on entry.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: &KrylovOptions) -> Result<KrylovStats> {
    let n = b.len();
    let minv = jacobi(&a.diagonal());
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats { iterations: 0, residual: 0.0 });
    }
    let target = opts.rtol * bnorm;

    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    if opts.project_mean {
        project(&mut r);
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for it in 0..opts.max_iter {
        if norm2(&r) <= target {
            let residual = true_residual(a, b, x, opts);
            if residual <= opts.rtol {
                return Ok(KrylovStats { iterations: it, residual });
            }
            // Recurrence drifted from the true residual: restart from it.
            a.mul_vec(x, &mut r);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
            if opts.project_mean {
                project(&mut r);
            }
            z.iter_mut().zip(r.iter().zip(&minv)).for_each(|(zi, (ri, mi))| *zi = ri * mi);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        a.mul_vec(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::NotCoercive { iteration: it, curvature });
        }
        let alpha = rz / curvature;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        if opts.project_mean {
            project(x);
            project(&mut r);
        }
        z.iter_mut().zip(r.iter().zip(&minv)).for_each(|(zi, (ri, mi))| *zi = ri * mi);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    let residual = true_residual(a, b, x, opts);
    if residual <= opts.rtol {
        return Ok(KrylovStats { iterations: opts.max_iter, residual });
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

/// Right-preconditioned BiCGStab for non-symmetric `a`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: &KrylovOptions) -> Result<KrylovStats> {
    let n = b.len();
    let minv = jacobi(&a.diagonal());
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats { iterations: 0, residual: 0.0 });
    }
    let target = opts.rtol * bnorm;
    let precondition = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().zip(v.iter().zip(&minv)).for_each(|(o, (vi, mi))| *o = vi * mi);
    };

    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    if opts.project_mean {
        project(&mut r);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 0..opts.max_iter {
        if norm2(&r) <= target {
            let residual = true_residual(a, b, x, opts);
            if residual <= opts.rtol {
                return Ok(KrylovStats { iterations: it, residual });
            }
        }
        let rho_next = dot(&r_hat, &r);
        if rho_next == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        p.iter_mut()
            .zip(r.iter().zip(&v))
            .for_each(|(pi, (ri, vi))| *pi = ri + beta * (*pi - omega * vi));
        precondition(&p, &mut y);
        a.mul_vec(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        s.iter_mut().zip(r.iter().zip(&v)).for_each(|(si, (ri, vi))| *si = ri - alpha * vi);
        precondition(&s, &mut zz);
        a.mul_vec(&zz, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x.iter_mut()
            .zip(y.iter().zip(&zz))
            .for_each(|(xi, (yi, zi))| *xi += alpha * yi + omega * zi);
        r.iter_mut().zip(s.iter().zip(&t)).for_each(|(ri, (si, ti))| *ri = si - omega * ti);
        if opts.project_mean {
            project(x);
            project(&mut r);
        }
    }
    let residual = true_residual(a, b, x, opts);
    if residual <= opts.rtol {
        return Ok(KrylovStats { iterations: opts.max_iter, residual });
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    fn opts() -> KrylovOptions {
        KrylovOptions { rtol: 1e-12, max_iter: 1000, project_mean: false }
    }

    #[test]
    fn pcg_solves_spd_system() {
        let a = laplacian_1d(50);
        let exact: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.mul_vec(&exact, &mut b);
        let mut x = vec![0.0; 50];
        let stats = pcg(&a, &b, &mut x, &opts()).unwrap();
        assert!(stats.residual <= 1e-12);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn pcg_detects_indefinite_operator() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        let mut x = vec![0.0; 2];
        let err = pcg(&a, &[0.0, 1.0], &mut x, &opts()).unwrap_err();
        assert!(matches!(err, Error::NotCoercive { .. }));
    }

    #[test]
    fn pcg_reports_stagnation() {
        let a = laplacian_1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let o = KrylovOptions { max_iter: 3, ..opts() };
        assert!(matches!(pcg(&a, &b, &mut x, &o), Err(Error::NonConvergence { iterations: 3, .. })));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.5));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, t);
        let exact: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&exact, &mut b);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, &opts()).unwrap();
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn projected_pcg_on_singular_periodic_system() {
        // Periodic 1D Laplacian: constants in the kernel.
        let n = 32;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        let a = CsrMatrix::from_triplets(n, t);
        let b: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let o = KrylovOptions { project_mean: true, ..opts() };
        pcg(&a, &b, &mut x, &o).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
        let mut ax = vec![0.0; n];
        a.mul_vec(&x, &mut ax);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
