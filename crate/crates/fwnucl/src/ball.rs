//! Distortion sets and their oracles: norm evaluation, dual norms, the
//! linear minimization oracle (LMO), Euclidean projection where it is
//! cheap, and in-ball sampling.
//!
//! The LMO follows the minimization convention: `lmo(ball, d)` returns a
//! vertex minimizing `<d, v>` over the ball, and the optimal value equals
//! `-radius * dual_norm(d)`.

use crate::error::{Error, Result};
use crate::linalg::{full_svd, project_l1_ball, top_singular_triplet, Mat};
use crate::tensor::{GroupPartition, ImageTensor, Matricization, PixelGroup};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Entrywise norm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpNorm {
    L1,
    L2,
    LInf,
}

/// Rule for picking the active group in the group-nuclear LMO.
///
/// `Spectral` maximizes `||d[g]||_inf / w_g` (the dual norm), which is the
/// selection that actually attains the linear minimum over the ball.
/// `Nuclear` maximizes `||d[g]||_1 / w_g` instead; it is kept as a
/// compatibility switch for comparison runs, but it does not minimize the
/// linear objective in general.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupSelection {
    #[default]
    Spectral,
    Nuclear,
}

/// The constraint set for the perturbation around the original image.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionBall {
    Lp {
        p: LpNorm,
        radius: f64,
    },
    Schatten {
        /// q in [1, inf]; use `f64::INFINITY` for the spectral-norm ball.
        q: f64,
        radius: f64,
        matricization: Matricization,
    },
    GroupNuclear {
        partition: GroupPartition,
        radius: f64,
        selection: GroupSelection,
    },
}

impl DistortionBall {
    pub fn lp(p: LpNorm, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(DistortionBall::Lp { p, radius })
    }

    pub fn linf(radius: f64) -> Result<Self> {
        Self::lp(LpNorm::LInf, radius)
    }

    pub fn l1(radius: f64) -> Result<Self> {
        Self::lp(LpNorm::L1, radius)
    }

    pub fn l2(radius: f64) -> Result<Self> {
        Self::lp(LpNorm::L2, radius)
    }

    pub fn schatten(q: f64, radius: f64, matricization: Matricization) -> Result<Self> {
        check_radius(radius)?;
        if !(q >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Schatten exponent must be >= 1, got {q}"
            )));
        }
        Ok(DistortionBall::Schatten {
            q,
            radius,
            matricization,
        })
    }

    /// Nuclear (S1) ball with the default stacked matricization.
    pub fn nuclear(radius: f64) -> Result<Self> {
        Self::schatten(1.0, radius, Matricization::Stacked)
    }

    pub fn group_nuclear(partition: GroupPartition, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(DistortionBall::GroupNuclear {
            partition,
            radius,
            selection: GroupSelection::Spectral,
        })
    }

    pub fn group_nuclear_with_selection(
        partition: GroupPartition,
        radius: f64,
        selection: GroupSelection,
    ) -> Result<Self> {
        check_radius(radius)?;
        Ok(DistortionBall::GroupNuclear {
            partition,
            radius,
            selection,
        })
    }

    pub fn radius(&self) -> f64 {
        match self {
            DistortionBall::Lp { radius, .. }
            | DistortionBall::Schatten { radius, .. }
            | DistortionBall::GroupNuclear { radius, .. } => *radius,
        }
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let mut b = self.clone();
        match &mut b {
            DistortionBall::Lp { radius: r, .. }
            | DistortionBall::Schatten { radius: r, .. }
            | DistortionBall::GroupNuclear { radius: r, .. } => *r = radius,
        }
        Ok(b)
    }

    /// Short label used in reports, e.g. `nuclear`, `linf`, `s2.5-perchannel`.
    pub fn label(&self) -> String {
        match self {
            DistortionBall::Lp { p, .. } => match p {
                LpNorm::L1 => "l1".into(),
                LpNorm::L2 => "l2".into(),
                LpNorm::LInf => "linf".into(),
            },
            DistortionBall::Schatten {
                q, matricization, ..
            } => {
                let base = if *q == 1.0 {
                    "nuclear".to_string()
                } else if q.is_infinite() {
                    "sinf".to_string()
                } else {
                    format!("s{q}")
                };
                match matricization {
                    Matricization::Stacked => base,
                    Matricization::PerChannel => format!("{base}-perchannel"),
                }
            }
            DistortionBall::GroupNuclear { partition, .. } => {
                format!("groupnuclear(n={})", partition.len())
            }
        }
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "ball radius must be strictly positive, got {radius}"
        )))
    }
}

/// Output of the LMO: an extreme point of the ball at full radius, except
/// when the direction is identically zero.
#[derive(Debug, Clone)]
pub struct LmoVertex {
    pub tensor: ImageTensor,
    /// Which group carries the mass, for group balls.
    pub support: Option<PixelGroup>,
    /// Set when the direction was identically zero: any point is optimal
    /// and the zero vertex is returned.
    pub degenerate: bool,
}

fn vec_qnorm(s: &[f64], q: f64) -> f64 {
    if q == 1.0 {
        s.iter().sum()
    } else if q.is_infinite() {
        s.iter().fold(0.0, |a, &b| a.max(b))
    } else {
        s.iter().map(|x| x.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn conjugate_exponent(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

// All singular values of the ball's matricization(s), concatenated.
fn schatten_spectrum(delta: &ImageTensor, matricization: Matricization) -> Vec<f64> {
    match matricization {
        Matricization::Stacked => full_svd(&delta.matricize_stacked()).s,
        Matricization::PerChannel => {
            let mut all = Vec::new();
            for m in delta.matricize_per_channel() {
                all.extend(full_svd(&m).s);
            }
            all
        }
    }
}

/// The ball's norm of a perturbation tensor.
pub fn norm_value(ball: &DistortionBall, delta: &ImageTensor) -> Result<f64> {
    match ball {
        DistortionBall::Lp { p, .. } => Ok(match p {
            LpNorm::L1 => delta.l1_norm(),
            LpNorm::L2 => delta.l2_norm(),
            LpNorm::LInf => delta.linf_norm(),
        }),
        DistortionBall::Schatten {
            q, matricization, ..
        } => Ok(vec_qnorm(&schatten_spectrum(delta, *matricization), *q)),
        DistortionBall::GroupNuclear { partition, .. } => {
            partition.check_bounds(delta)?;
            let mut total = 0.0;
            for (g, &w) in partition.groups().iter().zip(partition.weights()) {
                total += w * full_svd(&delta.extract_group(g)?).nuclear_norm();
            }
            Ok(total)
        }
    }
}

/// Dual norm of a direction tensor; `<d, lmo(ball, d)> = -radius * dual`.
pub fn dual_norm_value(ball: &DistortionBall, d: &ImageTensor) -> Result<f64> {
    match ball {
        DistortionBall::Lp { p, .. } => Ok(match p {
            LpNorm::L1 => d.linf_norm(),
            LpNorm::L2 => d.l2_norm(),
            LpNorm::LInf => d.l1_norm(),
        }),
        DistortionBall::Schatten {
            q, matricization, ..
        } => {
            let qc = conjugate_exponent(*q);
            Ok(vec_qnorm(&schatten_spectrum(d, *matricization), qc))
        }
        DistortionBall::GroupNuclear { partition, .. } => {
            partition.check_bounds(d)?;
            let mut best = 0.0f64;
            for (g, &w) in partition.groups().iter().zip(partition.weights()) {
                let spectral = full_svd(&d.extract_group(g)?).spectral_norm();
                best = best.max(spectral / w);
            }
            Ok(best)
        }
    }
}

/// General group norm `(sum_g ||x[g]||_{S(p)}^r)^{1/r}` for r in (1, inf),
/// evaluation only (no LMO).
pub fn group_norm_general(
    partition: &GroupPartition,
    r: f64,
    p: f64,
    delta: &ImageTensor,
) -> Result<f64> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "outer exponent must lie in (1, inf), got {r}"
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inner Schatten exponent must be >= 1, got {p}"
        )));
    }
    partition.check_bounds(delta)?;
    let mut acc = 0.0;
    for g in partition.groups() {
        let s = full_svd(&delta.extract_group(g)?).s;
        acc += vec_qnorm(&s, p).powf(r);
    }
    Ok(acc.powf(1.0 / r))
}

// Power-iteration parameters for LMO top pairs. Directions with a
// nearly degenerate top pair exit at the iteration cap with the optimal
// value still at machine accuracy (the objective is flat across the top
// subspace), so the cap stays modest.
const LMO_TOL: f64 = 1e-12;
const LMO_MAX_ITER: usize = 40_000;
const LMO_SEED: u64 = 0x5eed;

fn zero_vertex(shape: (usize, usize, usize)) -> LmoVertex {
    LmoVertex {
        tensor: ImageTensor::zeros(shape.0, shape.1, shape.2),
        support: None,
        degenerate: true,
    }
}

/// Linear minimization oracle: a point of the ball minimizing `<d, v>`.
pub fn lmo(ball: &DistortionBall, d: &ImageTensor) -> Result<LmoVertex> {
    if !d.is_finite() {
        return Err(Error::NonFinite("lmo direction".into()));
    }
    let shape = d.shape();
    match ball {
        DistortionBall::Lp { p, radius } => Ok(lmo_lp(*p, *radius, d)),
        DistortionBall::Schatten {
            q,
            radius,
            matricization,
        } => lmo_schatten(*q, *radius, *matricization, d),
        DistortionBall::GroupNuclear {
            partition,
            radius,
            selection,
        } => {
            partition.check_bounds(d)?;
            let all: Vec<usize> = (0..partition.len()).collect();
            lmo_group_restricted(partition, *radius, *selection, d, &all)
        }
    }
    .map(|v| if d.is_zero() { zero_vertex(shape) } else { v })
}

fn lmo_lp(p: LpNorm, radius: f64, d: &ImageTensor) -> LmoVertex {
    let (c, h, w) = d.shape();
    if d.is_zero() {
        return zero_vertex((c, h, w));
    }
    let tensor = match p {
        LpNorm::LInf => d.map(|x| {
            if x > 0.0 {
                -radius
            } else if x < 0.0 {
                radius
            } else {
                0.0
            }
        }),
        LpNorm::L1 => {
            // Mass on the single largest-magnitude entry; ties break to the
            // lowest index.
            let mut best = 0;
            let mut best_mag = -1.0;
            for (i, &x) in d.data().iter().enumerate() {
                if x.abs() > best_mag {
                    best_mag = x.abs();
                    best = i;
                }
            }
            let mut t = ImageTensor::zeros(c, h, w);
            t.data_mut()[best] = if d.data()[best] > 0.0 {
                -radius
            } else {
                radius
            };
            t
        }
        LpNorm::L2 => {
            let n = d.l2_norm();
            d.map(|x| -radius * x / n)
        }
    };
    LmoVertex {
        tensor,
        support: None,
        degenerate: false,
    }
}

fn lmo_schatten(
    q: f64,
    radius: f64,
    matricization: Matricization,
    d: &ImageTensor,
) -> Result<LmoVertex> {
    let (c, h, w) = d.shape();
    if d.is_zero() {
        return Ok(zero_vertex((c, h, w)));
    }
    let tensor = match matricization {
        Matricization::Stacked => {
            let m = d.matricize_stacked();
            let vertex = lmo_schatten_matrix(q, radius, &m)?;
            ImageTensor::from_stacked(c, &vertex)?
        }
        Matricization::PerChannel => {
            let mats = d.matricize_per_channel();
            if q == 1.0 {
                // l1 coupling over channels: all mass on the channel whose
                // matrix has the largest spectral norm (lowest index wins
                // ties).
                let mut best_c = 0;
                let mut best_sigma = -1.0;
                let mut best_pair: Option<(Vec<f64>, Vec<f64>)> = None;
                for (ci, m) in mats.iter().enumerate() {
                    if m.is_zero() {
                        continue;
                    }
                    let top = top_singular_triplet(m, LMO_TOL, LMO_MAX_ITER, LMO_SEED)?;
                    if top.triplet.sigma > best_sigma {
                        best_sigma = top.triplet.sigma;
                        best_c = ci;
                        best_pair = Some((top.triplet.u, top.triplet.v));
                    }
                }
                let (u, v) = best_pair.expect("nonzero tensor has a nonzero channel");
                let mut t = ImageTensor::zeros(c, h, w);
                let block = Mat::outer(-radius, &u, &v);
                let plane = h * w;
                t.data_mut()[best_c * plane..(best_c + 1) * plane].copy_from_slice(block.data());
                t
            } else if q.is_infinite() {
                // Decoupled: each channel gets its own full-spectrum vertex.
                let blocks: Vec<Mat> = mats
                    .iter()
                    .map(|m| {
                        let svd = full_svd(m);
                        let mut out = Mat::zeros(m.rows(), m.cols());
                        for r in 0..m.rows() {
                            for cc in 0..m.cols() {
                                let mut acc = 0.0;
                                for k in 0..svd.s.len() {
                                    if svd.s[k] > 0.0 {
                                        acc += svd.u[(r, k)] * svd.v[(cc, k)];
                                    }
                                }
                                out[(r, cc)] = -radius * acc;
                            }
                        }
                        out
                    })
                    .collect();
                ImageTensor::from_channel_mats(&blocks)?
            } else {
                // Finite q > 1: the dual weights come from the concatenated
                // spectrum across channels.
                let qc = conjugate_exponent(q);
                let svds: Vec<_> = mats.iter().map(full_svd).collect();
                let mut all: Vec<f64> = Vec::new();
                for svd in &svds {
                    all.extend(&svd.s);
                }
                let denom = vec_qnorm(&all, qc).powf(qc - 1.0);
                let blocks: Vec<Mat> = svds
                    .iter()
                    .map(|svd| {
                        let t: Vec<f64> = svd.s.iter().map(|s| s.powf(qc - 1.0) / denom).collect();
                        let mut out = Mat::zeros(svd.u.rows(), svd.v.rows());
                        for r in 0..svd.u.rows() {
                            for cc in 0..svd.v.rows() {
                                let mut acc = 0.0;
                                for k in 0..t.len() {
                                    acc += svd.u[(r, k)] * t[k] * svd.v[(cc, k)];
                                }
                                out[(r, cc)] = -radius * acc;
                            }
                        }
                        out
                    })
                    .collect();
                ImageTensor::from_channel_mats(&blocks)?
            }
        }
    };
    Ok(LmoVertex {
        tensor,
        support: None,
        degenerate: false,
    })
}

// LMO on a single matrix for the Schatten-q ball of the given radius.
fn lmo_schatten_matrix(q: f64, radius: f64, m: &Mat) -> Result<Mat> {
    if q == 1.0 {
        let top = top_singular_triplet(m, LMO_TOL, LMO_MAX_ITER, LMO_SEED)?;
        Ok(Mat::outer(-radius, &top.triplet.u, &top.triplet.v))
    } else if q.is_infinite() {
        let svd = full_svd(m);
        let mut out = Mat::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let mut acc = 0.0;
                for k in 0..svd.s.len() {
                    if svd.s[k] > 0.0 {
                        acc += svd.u[(r, k)] * svd.v[(c, k)];
                    }
                }
                out[(r, c)] = -radius * acc;
            }
        }
        Ok(out)
    } else {
        // Hoelder-aligned spectrum: t_i = sigma_i^(q'-1) / ||sigma||_q'^(q'-1).
        let qc = conjugate_exponent(q);
        let svd = full_svd(m);
        let denom = vec_qnorm(&svd.s, qc).powf(qc - 1.0);
        let t: Vec<f64> = svd.s.iter().map(|s| s.powf(qc - 1.0) / denom).collect();
        let mut out = Mat::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let mut acc = 0.0;
                for k in 0..t.len() {
                    acc += svd.u[(r, k)] * t[k] * svd.v[(c, k)];
                }
                out[(r, c)] = -radius * acc;
            }
        }
        Ok(out)
    }
}

/// Group LMO restricted to a subset of group indices (ascending order).
/// Used by the full LMO (all indices) and the randomized block variant.
pub(crate) fn lmo_group_restricted(
    partition: &GroupPartition,
    radius: f64,
    selection: GroupSelection,
    d: &ImageTensor,
    indices: &[usize],
) -> Result<LmoVertex> {
    let shape = d.shape();
    let mut best: Option<(usize, f64)> = None;
    for &gi in indices {
        let g = &partition.groups()[gi];
        let w = partition.weights()[gi];
        let block = d.extract_group(g)?;
        if block.is_zero() {
            continue;
        }
        let score = match selection {
            GroupSelection::Spectral => {
                top_singular_triplet(&block, LMO_TOL, LMO_MAX_ITER, LMO_SEED)?
                    .triplet
                    .sigma
                    / w
            }
            GroupSelection::Nuclear => full_svd(&block).nuclear_norm() / w,
        };
        // Strict > keeps the lowest index on ties.
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((gi, score));
        }
    }
    let Some((gi, _)) = best else {
        return Ok(zero_vertex(shape));
    };
    let g = &partition.groups()[gi];
    let w = partition.weights()[gi];
    let block = d.extract_group(g)?;
    let top = top_singular_triplet(&block, LMO_TOL, LMO_MAX_ITER, LMO_SEED)?;
    let vertex_block = Mat::outer(-radius / w, &top.triplet.u, &top.triplet.v);
    let mut tensor = ImageTensor::zeros(shape.0, shape.1, shape.2);
    tensor.scatter_group(g, &vertex_block)?;
    Ok(LmoVertex {
        tensor,
        support: Some(g.clone()),
        degenerate: false,
    })
}

/// Euclidean projection onto the ball. Supported for the l-inf, l2, and
/// nuclear (Schatten q=1) balls only.
pub fn project(ball: &DistortionBall, delta: &ImageTensor) -> Result<ImageTensor> {
    match ball {
        DistortionBall::Lp {
            p: LpNorm::LInf,
            radius,
        } => Ok(delta.map(|x| x.clamp(-radius, *radius))),
        DistortionBall::Lp {
            p: LpNorm::L2,
            radius,
        } => {
            let n = delta.l2_norm();
            if n <= *radius {
                Ok(delta.clone())
            } else {
                Ok(delta.map(|x| x * radius / n))
            }
        }
        DistortionBall::Schatten {
            q,
            radius,
            matricization,
        } if *q == 1.0 => match matricization {
            Matricization::Stacked => {
                let m = delta.matricize_stacked();
                let svd = full_svd(&m);
                if svd.nuclear_norm() <= *radius {
                    return Ok(delta.clone());
                }
                let s = project_l1_ball(&svd.s, *radius);
                ImageTensor::from_stacked(delta.channels(), &Mat::reconstruct(&svd.u, &s, &svd.v))
            }
            Matricization::PerChannel => {
                // Joint soft threshold over the concatenated spectra.
                let svds: Vec<_> = delta.matricize_per_channel().iter().map(full_svd).collect();
                let mut all = Vec::new();
                for svd in &svds {
                    all.extend(&svd.s);
                }
                if all.iter().sum::<f64>() <= *radius {
                    return Ok(delta.clone());
                }
                let proj = project_l1_ball(&all, *radius);
                let mut offset = 0;
                let blocks: Vec<Mat> = svds
                    .iter()
                    .map(|svd| {
                        let k = svd.s.len();
                        let s = &proj[offset..offset + k];
                        offset += k;
                        Mat::reconstruct(&svd.u, s, &svd.v)
                    })
                    .collect();
                ImageTensor::from_channel_mats(&blocks)
            }
        },
        _ => Err(Error::ProjectionUnsupported),
    }
}

/// A point with `norm_value <= radius`, deterministic per seed.
///
/// Nuclear-family balls draw a scaled rank-one matrix on a uniformly
/// chosen group or channel; smooth Schatten balls (q > 1) draw a dense
/// rescaled Gaussian-like tensor so samples explore the whole boundary;
/// lp balls draw a rescaled entrywise-uniform tensor.
pub fn sample_in_ball(
    ball: &DistortionBall,
    shape: (usize, usize, usize),
    seed: u64,
) -> ImageTensor {
    let (c, h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match ball {
        DistortionBall::Lp { p, radius } => {
            let raw = ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0));
            let n = match p {
                LpNorm::L1 => raw.l1_norm(),
                LpNorm::L2 => raw.l2_norm(),
                LpNorm::LInf => raw.linf_norm(),
            };
            let t: f64 = rng.random_range(0.0..1.0);
            if n == 0.0 {
                ImageTensor::zeros(c, h, w)
            } else {
                raw.map(|x| x * t * radius / n)
            }
        }
        DistortionBall::Schatten {
            q,
            radius,
            matricization,
        } => {
            if *q == 1.0 {
                match matricization {
                    Matricization::Stacked => {
                        let u = random_unit_vec(&mut rng, c * h);
                        let v = random_unit_vec(&mut rng, w);
                        let t: f64 = rng.random_range(0.0..1.0);
                        let m = Mat::outer(t * radius, &u, &v);
                        ImageTensor::from_stacked(c, &m).expect("shape by construction")
                    }
                    Matricization::PerChannel => {
                        let ch = rng.random_range(0..c);
                        let u = random_unit_vec(&mut rng, h);
                        let v = random_unit_vec(&mut rng, w);
                        let t: f64 = rng.random_range(0.0..1.0);
                        let m = Mat::outer(t * radius, &u, &v);
                        let mut out = ImageTensor::zeros(c, h, w);
                        out.scatter_group(&PixelGroup::full_channel(ch, h, w), &m)
                            .expect("bounds by construction");
                        out
                    }
                }
            } else {
                // Dense sample rescaled to a random fraction of the radius.
                let raw = ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0));
                let n = vec_qnorm(&schatten_spectrum(&raw, *matricization), *q);
                let t: f64 = rng.random_range(0.0..1.0);
                if n == 0.0 {
                    ImageTensor::zeros(c, h, w)
                } else {
                    raw.map(|x| x * t * radius / n)
                }
            }
        }
        DistortionBall::GroupNuclear {
            partition, radius, ..
        } => {
            let gi = rng.random_range(0..partition.len());
            let g = &partition.groups()[gi];
            let wgt = partition.weights()[gi];
            let u = random_unit_vec(&mut rng, g.matrix_rows());
            let v = random_unit_vec(&mut rng, g.cols());
            let t: f64 = rng.random_range(0.0..1.0);
            let m = Mat::outer(t * radius / wgt, &u, &v);
            let mut out = ImageTensor::zeros(c, h, w);
            out.scatter_group(g, &m).expect("partition within bounds");
            out
        }
    }
}

fn random_unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nn > 1e-6 {
            return v.iter().map(|x| x / nn).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(shape: (usize, usize, usize), seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(shape.0, shape.1, shape.2, |_, _, _| {
            rng.random_range(-1.0..1.0)
        })
    }

    #[test]
    fn norm_zero_tensor_is_zero_for_every_ball() {
        let z = ImageTensor::zeros(1, 4, 4);
        let balls = vec![
            DistortionBall::linf(1.0).unwrap(),
            DistortionBall::l1(1.0).unwrap(),
            DistortionBall::l2(1.0).unwrap(),
            DistortionBall::nuclear(1.0).unwrap(),
            DistortionBall::schatten(2.0, 1.0, Matricization::Stacked).unwrap(),
            DistortionBall::schatten(f64::INFINITY, 1.0, Matricization::PerChannel).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::full_frame(1, 4, 4), 1.0).unwrap(),
        ];
        for b in balls {
            assert_eq!(norm_value(&b, &z).unwrap(), 0.0, "{}", b.label());
        }
    }

    #[test]
    fn nuclear_norm_from_singular_values() {
        // Oracle: singular values of diag(3, -4) are (4, 3), so S1 = 7.
        let delta = ImageTensor::new(1, 2, 2, vec![3.0, 0.0, 0.0, -4.0]).unwrap();
        let ball = DistortionBall::nuclear(1.0).unwrap();
        assert!((norm_value(&ball, &delta).unwrap() - 7.0).abs() < 1e-10);
    }

    #[test]
    fn weighted_group_norm_is_weighted_sum() {
        // Two single-pixel-column groups each holding a unit value; weights
        // (1, 2) give total 3.
        let g1 = PixelGroup::new(vec![0], (0, 2), (0, 2)).unwrap();
        let g2 = PixelGroup::new(vec![0], (0, 2), (2, 4)).unwrap();
        let partition = GroupPartition::new(vec![g1, g2], vec![1.0, 2.0]).unwrap();
        let mut delta = ImageTensor::zeros(1, 2, 4);
        delta.set(0, 0, 0, 1.0); // ||.||_S1 = 1 on g1
        delta.set(0, 0, 2, 1.0); // ||.||_S1 = 1 on g2
        let ball = DistortionBall::group_nuclear(partition, 1.0).unwrap();
        assert!((norm_value(&ball, &delta).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn dual_norm_single_entry_and_hoelder_pairs() {
        let mut d = ImageTensor::zeros(1, 3, 3);
        d.set(0, 0, 0, 1.0);
        let nuclear = DistortionBall::nuclear(1.0).unwrap();
        assert!((dual_norm_value(&nuclear, &d).unwrap() - 1.0).abs() < 1e-10);

        let d = random_tensor((1, 4, 4), 5);
        let linf = DistortionBall::linf(1.0).unwrap();
        assert!((dual_norm_value(&linf, &d).unwrap() - d.l1_norm()).abs() < 1e-12);
        let l1 = DistortionBall::l1(1.0).unwrap();
        assert!((dual_norm_value(&l1, &d).unwrap() - d.linf_norm()).abs() < 1e-12);
    }

    #[test]
    fn dual_norm_nuclear_matches_power_iteration() {
        let d = random_tensor((1, 6, 5), 42);
        let ball = DistortionBall::nuclear(1.0).unwrap();
        let dual = dual_norm_value(&ball, &d).unwrap();
        let top = top_singular_triplet(&d.matricize_stacked(), 1e-12, 20_000, 9).unwrap();
        assert!((dual - top.triplet.sigma).abs() <= 1e-9 * dual);
    }

    #[test]
    fn lmo_nuclear_diagonal_example() {
        let d = ImageTensor::new(1, 2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let ball = DistortionBall::nuclear(2.0).unwrap();
        let v = lmo(&ball, &d).unwrap();
        assert!(!v.degenerate);
        assert!((v.tensor.at(0, 0, 0) + 2.0).abs() < 1e-8);
        for (i, &x) in v.tensor.data().iter().enumerate() {
            if i != 0 {
                assert!(x.abs() < 1e-8);
            }
        }
        assert!((d.dot(&v.tensor) + 6.0).abs() < 1e-8); // -radius * sigma_1
    }

    #[test]
    fn lmo_linf_is_negative_sign() {
        let d = random_tensor((1, 3, 3), 8);
        let ball = DistortionBall::linf(0.5).unwrap();
        let v = lmo(&ball, &d).unwrap();
        for (a, b) in d.data().iter().zip(v.tensor.data()) {
            if *a > 0.0 {
                assert_eq!(*b, -0.5);
            } else if *a < 0.0 {
                assert_eq!(*b, 0.5);
            }
        }
    }

    #[test]
    fn lmo_zero_direction_is_degenerate() {
        let d = ImageTensor::zeros(2, 3, 3);
        for ball in [
            DistortionBall::linf(1.0).unwrap(),
            DistortionBall::nuclear(1.0).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::per_channel(2, 3, 3), 1.0).unwrap(),
        ] {
            let v = lmo(&ball, &d).unwrap();
            assert!(v.degenerate);
            assert!(v.tensor.is_zero());
        }
    }

    #[test]
    fn lmo_group_zero_on_second_group_supports_first() {
        let g1 = PixelGroup::new(vec![0], (0, 2), (0, 2)).unwrap();
        let g2 = PixelGroup::new(vec![0], (0, 2), (2, 4)).unwrap();
        let partition = GroupPartition::unweighted(vec![g1.clone(), g2]).unwrap();
        let mut d = ImageTensor::zeros(1, 2, 4);
        d.set(0, 0, 0, 1.0);
        d.set(0, 1, 1, -0.5);
        let ball = DistortionBall::group_nuclear(partition, 1.0).unwrap();
        let v = lmo(&ball, &d).unwrap();
        assert_eq!(v.support.as_ref().unwrap(), &g1);
        // Vertex vanishes outside g1.
        for y in 0..2 {
            for x in 2..4 {
                assert_eq!(v.tensor.at(0, y, x), 0.0);
            }
        }
    }

    #[test]
    fn lmo_weighted_group_selection() {
        // Weights (1, 4); spectral norms 2 on g1 and 3 on g2. Scores are
        // 2/1 = 2 vs 3/4 = 0.75, so g1 is selected with magnitude eps/1.
        // (Enumerate-groups oracle: with only rank-one-per-group candidates
        // the best objective over the ball is -eps * max_g sigma(g)/w_g.)
        let g1 = PixelGroup::new(vec![0], (0, 2), (0, 2)).unwrap();
        let g2 = PixelGroup::new(vec![0], (0, 2), (2, 4)).unwrap();
        let partition = GroupPartition::new(vec![g1.clone(), g2], vec![1.0, 4.0]).unwrap();
        let mut d = ImageTensor::zeros(1, 2, 4);
        d.set(0, 0, 0, 2.0);
        d.set(0, 0, 2, 3.0);
        let eps = 1.5;
        let ball = DistortionBall::group_nuclear(partition, eps).unwrap();
        let v = lmo(&ball, &d).unwrap();
        assert_eq!(v.support.as_ref().unwrap(), &g1);
        let norm = norm_value(&DistortionBall::nuclear(1.0).unwrap(), &v.tensor).unwrap();
        assert!((norm - eps).abs() < 1e-8); // magnitude eps / w_g1 = eps
    }

    #[test]
    fn lmo_optimal_value_matches_dual_norm() {
        let shape = (2, 6, 5);
        let partition = GroupPartition::per_channel(2, 6, 5);
        let balls = vec![
            DistortionBall::linf(0.7).unwrap(),
            DistortionBall::l1(0.7).unwrap(),
            DistortionBall::l2(0.7).unwrap(),
            DistortionBall::nuclear(0.7).unwrap(),
            DistortionBall::schatten(1.0, 0.7, Matricization::PerChannel).unwrap(),
            DistortionBall::schatten(2.0, 0.7, Matricization::Stacked).unwrap(),
            DistortionBall::schatten(3.0, 0.7, Matricization::PerChannel).unwrap(),
            DistortionBall::schatten(f64::INFINITY, 0.7, Matricization::Stacked).unwrap(),
            DistortionBall::group_nuclear(partition, 0.7).unwrap(),
        ];
        for seed in 0..20u64 {
            let d = random_tensor(shape, 1000 + seed);
            for ball in &balls {
                let v = lmo(ball, &d).unwrap();
                let value = d.dot(&v.tensor);
                let expect = -ball.radius() * dual_norm_value(ball, &d).unwrap();
                assert!(
                    (value - expect).abs() <= 1e-8 * expect.abs().max(1e-12),
                    "{}: value {value} vs expected {expect}",
                    ball.label()
                );
            }
        }
    }

    #[test]
    fn lmo_vertices_are_extreme() {
        let shape = (1, 8, 8);
        let balls = vec![
            DistortionBall::linf(0.9).unwrap(),
            DistortionBall::l1(0.9).unwrap(),
            DistortionBall::l2(0.9).unwrap(),
            DistortionBall::nuclear(0.9).unwrap(),
            DistortionBall::schatten(2.5, 0.9, Matricization::Stacked).unwrap(),
            DistortionBall::schatten(f64::INFINITY, 0.9, Matricization::Stacked).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::full_frame(1, 8, 8), 0.9).unwrap(),
        ];
        for seed in 0..5u64 {
            let d = random_tensor(shape, 400 + seed);
            for ball in &balls {
                let v = lmo(ball, &d).unwrap();
                let n = norm_value(ball, &v.tensor).unwrap();
                assert!(
                    (n - 0.9).abs() <= 1e-8 * 0.9,
                    "{}: vertex norm {n}",
                    ball.label()
                );
            }
        }
    }

    #[test]
    fn lmo_beats_sampled_points() {
        let shape = (1, 8, 8);
        let balls = vec![
            DistortionBall::nuclear(1.2).unwrap(),
            DistortionBall::schatten(2.0, 1.2, Matricization::Stacked).unwrap(),
            DistortionBall::group_nuclear(
                GroupPartition::unweighted(vec![
                    PixelGroup::new(vec![0], (0, 8), (0, 4)).unwrap(),
                    PixelGroup::new(vec![0], (0, 8), (4, 8)).unwrap(),
                ])
                .unwrap(),
                1.2,
            )
            .unwrap(),
        ];
        for ball in &balls {
            let d = random_tensor(shape, 77);
            let v = lmo(ball, &d).unwrap();
            let best = d.dot(&v.tensor);
            for s in 0..200u64 {
                let p = sample_in_ball(ball, shape, s);
                assert!(
                    best <= d.dot(&p) + 1e-9,
                    "{}: lmo {best} beaten by sample {}",
                    ball.label(),
                    d.dot(&p)
                );
            }
        }
    }

    #[test]
    fn weight_scaling_leaves_selection_invariant() {
        let g1 = PixelGroup::new(vec![0], (0, 4), (0, 4)).unwrap();
        let g2 = PixelGroup::new(vec![0], (4, 8), (0, 4)).unwrap();
        let g3 = PixelGroup::new(vec![0], (0, 8), (4, 8)).unwrap();
        let groups = vec![g1, g2, g3];
        let weights = vec![0.5, 1.25, 2.0];
        let d = random_tensor((1, 8, 8), 31);
        let eps = 1.0;

        let base = DistortionBall::group_nuclear(
            GroupPartition::new(groups.clone(), weights.clone()).unwrap(),
            eps,
        )
        .unwrap();
        let v_base = lmo(&base, &d).unwrap();

        let c = 3.7;
        let scaled = DistortionBall::group_nuclear(
            GroupPartition::new(groups, weights.iter().map(|w| w * c).collect()).unwrap(),
            eps,
        )
        .unwrap();
        let v_scaled = lmo(&scaled, &d).unwrap();

        assert_eq!(v_base.support, v_scaled.support);
        // Vertex magnitude scales exactly by 1/c.
        for (a, b) in v_base.tensor.data().iter().zip(v_scaled.tensor.data()) {
            assert!((a / c - b).abs() < 1e-12 * (a.abs() + 1.0));
        }
    }

    #[test]
    fn projection_nuclear_soft_thresholds_spectrum() {
        // delta = diag(3, 1): projection onto the S1 ball of radius 2 keeps
        // the singular vectors and maps the spectrum to (2, 0).
        let delta = ImageTensor::new(1, 2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let ball = DistortionBall::nuclear(2.0).unwrap();
        let p = project(&ball, &delta).unwrap();
        assert!((p.at(0, 0, 0) - 2.0).abs() < 1e-10);
        assert!(p.at(0, 1, 1).abs() < 1e-10);
        assert!(p.at(0, 0, 1).abs() < 1e-10);

        // Inside the ball: identity (and exact for zero).
        let inside = ImageTensor::new(1, 2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(project(&ball, &inside).unwrap(), inside);
        let z = ImageTensor::zeros(1, 2, 2);
        assert_eq!(project(&ball, &z).unwrap(), z);
    }

    #[test]
    fn projection_unsupported_balls_error() {
        let delta = random_tensor((1, 4, 4), 2);
        for ball in [
            DistortionBall::l1(1.0).unwrap(),
            DistortionBall::schatten(2.0, 1.0, Matricization::Stacked).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::full_frame(1, 4, 4), 1.0).unwrap(),
        ] {
            match project(&ball, &delta) {
                Err(Error::ProjectionUnsupported) => {}
                other => panic!("expected ProjectionUnsupported, got {other:?}"),
            }
        }
    }

    #[test]
    fn projection_properties() {
        let balls = vec![
            DistortionBall::linf(0.3).unwrap(),
            DistortionBall::l2(0.8).unwrap(),
            DistortionBall::nuclear(1.1).unwrap(),
            DistortionBall::schatten(1.0, 1.1, Matricization::PerChannel).unwrap(),
        ];
        for ball in &balls {
            for seed in 0..10u64 {
                let a = random_tensor((2, 5, 4), 600 + seed);
                let b = random_tensor((2, 5, 4), 700 + seed);
                let pa = project(ball, &a).unwrap();
                let pb = project(ball, &b).unwrap();
                // In-ball and idempotent.
                assert!(norm_value(ball, &pa).unwrap() <= ball.radius() * (1.0 + 1e-9));
                let ppa = project(ball, &pa).unwrap();
                assert!(pa.sub(&ppa).l2_norm() < 1e-8);
                // Nonexpansive.
                assert!(pa.sub(&pb).l2_norm() <= a.sub(&b).l2_norm() + 1e-9);
            }
        }
    }

    #[test]
    fn samples_stay_in_ball_and_are_deterministic() {
        let shape = (2, 5, 4);
        let balls = vec![
            DistortionBall::linf(0.4).unwrap(),
            DistortionBall::l1(0.4).unwrap(),
            DistortionBall::l2(0.4).unwrap(),
            DistortionBall::nuclear(0.4).unwrap(),
            DistortionBall::schatten(2.0, 0.4, Matricization::PerChannel).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::per_channel(2, 5, 4), 0.4).unwrap(),
        ];
        for ball in &balls {
            for seed in 0..50u64 {
                let s = sample_in_ball(ball, shape, seed);
                assert!(
                    norm_value(ball, &s).unwrap() <= 0.4 + 1e-10,
                    "{}",
                    ball.label()
                );
            }
            let a = sample_in_ball(ball, shape, 123);
            let b = sample_in_ball(ball, shape, 123);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn nuclear_samples_are_rank_one() {
        let ball = DistortionBall::nuclear(1.0).unwrap();
        for seed in 0..1000u64 {
            let s = sample_in_ball(&ball, (1, 6, 6), seed);
            let svd = full_svd(&s.matricize_stacked());
            if svd.s[0] > 0.0 {
                assert!(svd.s[1] <= 1e-8 * svd.s[0]);
            }
        }
    }

    #[test]
    fn per_channel_nuclear_equals_group_nuclear() {
        let shape = (3, 5, 4);
        let schatten = DistortionBall::schatten(1.0, 0.9, Matricization::PerChannel).unwrap();
        let group = DistortionBall::group_nuclear(
            GroupPartition::per_channel(shape.0, shape.1, shape.2),
            0.9,
        )
        .unwrap();
        for seed in 0..10u64 {
            let d = random_tensor(shape, 50 + seed);
            let n1 = norm_value(&schatten, &d).unwrap();
            let n2 = norm_value(&group, &d).unwrap();
            assert!((n1 - n2).abs() <= 1e-9 * n1.max(1.0));
            let d1 = dual_norm_value(&schatten, &d).unwrap();
            let d2 = dual_norm_value(&group, &d).unwrap();
            assert!((d1 - d2).abs() <= 1e-9 * d1.max(1.0));
            let v1 = d.dot(&lmo(&schatten, &d).unwrap().tensor);
            let v2 = d.dot(&lmo(&group, &d).unwrap().tensor);
            assert!((v1 - v2).abs() <= 1e-8 * v1.abs().max(1e-12));
        }
    }

    #[test]
    fn single_full_frame_group_equals_plain_nuclear() {
        let shape = (1, 7, 5);
        let nuclear = DistortionBall::nuclear(1.3).unwrap();
        let group = DistortionBall::group_nuclear(
            GroupPartition::full_frame(shape.0, shape.1, shape.2),
            1.3,
        )
        .unwrap();
        for seed in 0..10u64 {
            let d = random_tensor(shape, 80 + seed);
            let n1 = norm_value(&nuclear, &d).unwrap();
            let n2 = norm_value(&group, &d).unwrap();
            assert!((n1 - n2).abs() <= 1e-9 * n1.max(1.0));
            let du1 = dual_norm_value(&nuclear, &d).unwrap();
            let du2 = dual_norm_value(&group, &d).unwrap();
            assert!((du1 - du2).abs() <= 1e-9 * du1.max(1.0));
            let v1 = d.dot(&lmo(&nuclear, &d).unwrap().tensor);
            let v2 = d.dot(&lmo(&group, &d).unwrap().tensor);
            assert!((v1 - v2).abs() <= 1e-8 * v1.abs().max(1e-12));
        }
    }

    #[test]
    fn general_group_norm_interpolates() {
        let partition = GroupPartition::per_channel(2, 4, 4);
        let d = random_tensor((2, 4, 4), 17);
        // r -> 1+ approaches the sum, large r approaches the max.
        let near_sum = group_norm_general(&partition, 1.000001, 1.0, &d).unwrap();
        let sum = norm_value(
            &DistortionBall::schatten(1.0, 1.0, Matricization::PerChannel).unwrap(),
            &d,
        )
        .unwrap();
        assert!((near_sum - sum).abs() < 1e-3 * sum);
        let near_max = group_norm_general(&partition, 200.0, 1.0, &d).unwrap();
        let per: Vec<f64> = d
            .matricize_per_channel()
            .iter()
            .map(|m| full_svd(m).nuclear_norm())
            .collect();
        let max = per.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!((near_max - max).abs() < 0.05 * max);
        assert!(group_norm_general(&partition, 1.0, 1.0, &d).is_err());
    }
}
