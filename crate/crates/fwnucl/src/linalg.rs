//! Dense linear-algebra kernels: power iteration for the top singular
//! triplet, one-sided Jacobi SVD for small matrices, and Euclidean
//! projection of vectors onto the l1 ball.
//!
//! Everything here is self-contained and deterministic; matrices are
//! expected to stay at desk scale (a few hundred per side).

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Rank-one outer product `u v^T` scaled by `alpha`.
    pub fn outer(alpha: f64, u: &[f64], v: &[f64]) -> Self {
        Mat::from_fn(u.len(), v.len(), |r, c| alpha * u[r] * v[c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[r] = acc;
        }
        out
    }

    pub fn matvec_t(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let ur = u[r];
            for (o, a) in out.iter_mut().zip(row) {
                *o += ur * a;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Frobenius inner product with another matrix of the same shape.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `U diag(s) V^T` for thin factors (U: m x k, V: n x k, s: len k).
    pub fn reconstruct(u: &Mat, s: &[f64], v: &Mat) -> Mat {
        let k = s.len();
        assert_eq!(u.cols, k);
        assert_eq!(v.cols, k);
        Mat::from_fn(u.rows, v.rows, |r, c| {
            let mut acc = 0.0;
            for i in 0..k {
                acc += u[(r, i)] * s[i] * v[(c, i)];
            }
            acc
        })
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// A singular value with its left/right singular vectors.
#[derive(Debug, Clone)]
pub struct SvdTriplet {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Outcome of the power iteration: best triplet found plus whether the
/// stopping rule was met before `max_iter`.
#[derive(Debug, Clone)]
pub struct TopSingular {
    pub triplet: SvdTriplet,
    pub converged: bool,
    pub iterations: usize,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nn = norm2(&v);
        if nn > 1e-6 {
            return v.iter().map(|x| x / nn).collect();
        }
    }
}

/// Flip (u, v) in tandem so the first nonzero coordinate of u is positive.
/// Keeps `sigma * uv^T` unchanged while making outputs reproducible.
fn fix_sign(u: &mut [f64], v: &mut [f64]) {
    for &x in u.iter() {
        if x != 0.0 {
            if x < 0.0 {
                for a in u.iter_mut() {
                    *a = -*a;
                }
                for b in v.iter_mut() {
                    *b = -*b;
                }
            }
            return;
        }
    }
}

// With a nearly degenerate top pair the singular vectors converge
// arbitrarily slowly while sigma (and the LMO optimal value, which only
// needs sigma) converges fast. After this many iterations a geometric
// tail estimate on the sigma increments may declare convergence on its
// own; clean spectra stop on vector stagnation long before this.
const VALUE_EXIT_MIN_ITER: usize = 200;
const VALUE_EXIT_REL_TOL: f64 = 1e-13;

/// Dominant singular triplet via power iteration, alternating `M v` and
/// `M^T u` (power iteration on `M^T M`). The start vector is seeded, so
/// the result is deterministic.
///
/// Stops when the right singular vector stagnates below `tol` (clean
/// vectors), or when the sigma sequence's geometric tail falls below
/// machine-level relative error (near-degenerate spectra: the value is
/// then exact even though the vectors are not pinned down).
pub fn top_singular_triplet(m: &Mat, tol: f64, max_iter: usize, seed: u64) -> Result<TopSingular> {
    if m.is_zero() {
        return Err(Error::ZeroMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_unit(&mut rng, m.cols());
    let mut restarted = true;
    let mut converged = false;
    let mut iterations = 0;
    let mut sigma_prev = 0.0;
    let mut delta_prev = f64::INFINITY;
    let mut stagnant = 0usize;

    for k in 0..max_iter {
        iterations = k + 1;
        let mut u = m.matvec(&v);
        let un = norm2(&u);
        if un == 0.0 {
            // v landed in the null space; restart from a fresh direction
            v = random_unit(&mut rng, m.cols());
            restarted = true;
            continue;
        }
        for x in u.iter_mut() {
            *x /= un;
        }
        let w = m.matvec_t(&u);
        let sigma = norm2(&w);
        if sigma == 0.0 {
            v = random_unit(&mut rng, m.cols());
            restarted = true;
            continue;
        }
        let v_next: Vec<f64> = w.iter().map(|x| x / sigma).collect();
        let delta_v: f64 = v_next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = v_next;
        if !restarted {
            if delta_v <= tol {
                converged = true;
                break;
            }
            let delta_s = (sigma - sigma_prev).abs();
            // sigma increments at machine level for several iterations in
            // a row: the value has converged even if the vectors drift
            // inside a (near-)degenerate top subspace.
            if delta_s <= 1e-14 * sigma {
                stagnant += 1;
                if stagnant >= 5 {
                    converged = true;
                    break;
                }
            } else {
                stagnant = 0;
            }
            if k >= VALUE_EXIT_MIN_ITER {
                let ratio = if delta_prev > 0.0 {
                    (delta_s / delta_prev).min(0.999_999)
                } else {
                    0.0
                };
                let tail = delta_s * ratio / (1.0 - ratio);
                if tail <= VALUE_EXIT_REL_TOL * sigma && delta_s <= VALUE_EXIT_REL_TOL * sigma {
                    converged = true;
                    break;
                }
            }
            delta_prev = delta_s;
        }
        sigma_prev = sigma;
        restarted = false;
    }

    // Re-derive u from the final v so that M v = sigma u holds exactly
    // up to the normalization.
    let mut u = m.matvec(&v);
    let sigma = norm2(&u);
    if sigma > 0.0 {
        for x in u.iter_mut() {
            *x /= sigma;
        }
    }
    fix_sign(&mut u, &mut v);
    Ok(TopSingular {
        triplet: SvdTriplet { sigma, u, v },
        converged,
        iterations,
    })
}

/// Thin SVD result: `M = U diag(s) V^T` with `s` nonincreasing and the
/// columns of U, V orthonormal.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl Svd {
    pub fn nuclear_norm(&self) -> f64 {
        self.s.iter().sum()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

const JACOBI_REL_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 64;

/// Full (thin) SVD via one-sided Jacobi.
pub fn full_svd(m: &Mat) -> Svd {
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let s = svd_tall(&m.transpose());
        Svd {
            u: s.v,
            s: s.s,
            v: s.u,
        }
    }
}

// Requires rows >= cols. U starts as a copy of A and is rotated column by
// column until all column pairs are orthogonal; V accumulates the
// rotations.
fn svd_tall(a: &Mat) -> Svd {
    let m = a.rows();
    let n = a.cols();
    let mut u = a.clone();
    let mut v = Mat::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let mut aii = 0.0;
                let mut ajj = 0.0;
                let mut aij = 0.0;
                for r in 0..m {
                    let ui = u[(r, i)];
                    let uj = u[(r, j)];
                    aii += ui * ui;
                    ajj += uj * uj;
                    aij += ui * uj;
                }
                if aij == 0.0 || aii == 0.0 || ajj == 0.0 {
                    continue;
                }
                if aij.abs() <= JACOBI_REL_TOL * (aii * ajj).sqrt() {
                    continue;
                }
                let zeta = (ajj - aii) / (2.0 * aij);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let ui = u[(r, i)];
                    let uj = u[(r, j)];
                    u[(r, i)] = c * ui - s * uj;
                    u[(r, j)] = s * ui + c * uj;
                }
                for r in 0..n {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = c * vi - s * vj;
                    v[(r, j)] = s * vi + c * vj;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values.
    let mut s: Vec<f64> = (0..n)
        .map(|c| {
            let mut acc = 0.0;
            for r in 0..m {
                acc += u[(r, c)] * u[(r, c)];
            }
            acc.sqrt()
        })
        .collect();

    // Sort descending (stable on ties).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let u_old = u.clone();
    let v_old = v.clone();
    let s_old = s.clone();
    for (new_c, &old_c) in order.iter().enumerate() {
        s[new_c] = s_old[old_c];
        for r in 0..m {
            u[(r, new_c)] = u_old[(r, old_c)];
        }
        for r in 0..n {
            v[(r, new_c)] = v_old[(r, old_c)];
        }
    }

    // Normalize nonzero columns; replace zero columns by an orthonormal
    // completion so U always has orthonormal columns.
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let zero_cut = sigma_max * 1e-300;
    for c in 0..n {
        if s[c] > zero_cut && s[c] > 0.0 {
            for r in 0..m {
                u[(r, c)] /= s[c];
            }
        } else {
            s[c] = 0.0;
            complete_column(&mut u, c);
        }
    }

    // Deterministic sign: first nonzero coordinate of each u column positive.
    for c in 0..n {
        let mut flip = false;
        for r in 0..m {
            let x = u[(r, c)];
            if x != 0.0 {
                flip = x < 0.0;
                break;
            }
        }
        if flip {
            for r in 0..m {
                u[(r, c)] = -u[(r, c)];
            }
            for r in 0..n {
                v[(r, c)] = -v[(r, c)];
            }
        }
    }

    Svd { u, s, v }
}

// Fill column c of u with a unit vector orthogonal to every other column,
// picked deterministically from the canonical basis.
fn complete_column(u: &mut Mat, c: usize) {
    let m = u.rows();
    let n = u.cols();
    for candidate in 0..m {
        let mut col: Vec<f64> = vec![0.0; m];
        col[candidate] = 1.0;
        for other in 0..n {
            if other == c {
                continue;
            }
            let mut proj = 0.0;
            for r in 0..m {
                proj += col[r] * u[(r, other)];
            }
            for r in 0..m {
                col[r] -= proj * u[(r, other)];
            }
        }
        let nn = norm2(&col);
        if nn > 0.5 {
            for r in 0..m {
                u[(r, c)] = col[r] / nn;
            }
            return;
        }
    }
    // Unreachable for m >= n with < n filled columns.
    u[(0, c)] = 1.0;
}

/// Euclidean projection of `v` onto the l1 ball of radius `r` (sort-based
/// soft threshold). Returns `v` unchanged (exactly) when already inside.
pub fn project_l1_ball(v: &[f64], r: f64) -> Vec<f64> {
    assert!(r > 0.0, "l1 ball radius must be positive");
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= r {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &mag) in mags.iter().enumerate() {
        cum += mag;
        let t = (cum - r) / (i + 1) as f64;
        if mag - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| {
            let shrunk = (x.abs() - tau).max(0.0);
            if x < 0.0 {
                -shrunk
            } else {
                shrunk
            }
        })
        .collect()
}
