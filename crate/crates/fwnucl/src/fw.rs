//! Vanilla Frank-Wolfe over a distortion ball centered at an original
//! image, plus the randomized block-coordinate variant for group balls.
//!
//! Iterates are convex combinations of LMO vertices, so the perturbation
//! after t steps from a zero start is a combination of at most t extreme
//! points (rank at most t for nuclear-family balls). Box constraints are
//! not enforced here; callers clamp the final iterate.

use crate::ball::{lmo, lmo_group_restricted, norm_value, DistortionBall, LmoVertex};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Step-size rule for the convex-combination update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `gamma = clip_[0,1](<-grad, s - x> / (L ||s - x||^2))` for a known
    /// smoothness upper bound L.
    ShortStep { lipschitz: f64 },
    /// Halve gamma from `init` until the loss decreases; gamma = 0 if no
    /// decrease is found within `max_halvings`.
    Backtracking {
        init: f64,
        shrink: f64,
        max_halvings: u32,
    },
    /// `gamma_t = 2 / (t + 2)`.
    Harmonic,
}

impl StepRule {
    pub fn short_step(lipschitz: f64) -> Result<Self> {
        if lipschitz > 0.0 && lipschitz.is_finite() {
            Ok(StepRule::ShortStep { lipschitz })
        } else {
            Err(Error::InvalidArgument(format!(
                "smoothness constant must be positive, got {lipschitz}"
            )))
        }
    }

    pub fn backtracking() -> Self {
        StepRule::Backtracking {
            init: 1.0,
            shrink: 0.5,
            max_halvings: 30,
        }
    }
}

/// Which per-iteration fields to keep; trajectories on long sweeps stay
/// small when everything is off.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordFlags {
    pub iterates: bool,
    pub losses: bool,
    pub gaps: bool,
    pub steps: bool,
}

impl RecordFlags {
    pub fn all() -> Self {
        RecordFlags {
            iterates: true,
            losses: true,
            gaps: true,
            steps: true,
        }
    }
}

/// Recorded run of the optimizer.
#[derive(Debug, Clone)]
pub struct FwTrajectory {
    pub iterates: Vec<ImageTensor>,
    pub losses: Vec<f64>,
    pub gaps: Vec<f64>,
    pub steps: Vec<f64>,
    pub final_iterate: ImageTensor,
    /// Set when the run stopped early on a non-finite loss or gradient;
    /// `final_iterate` is then the last valid iterate.
    pub aborted: Option<String>,
}

/// Frank-Wolfe duality gap `<-grad, s - x>`; nonnegative for a convex
/// objective when `s` is the minimizing vertex.
pub fn fw_gap(gradient: &ImageTensor, x: &ImageTensor, s: &ImageTensor) -> f64 {
    let mut acc = 0.0;
    for ((g, xv), sv) in gradient.data().iter().zip(x.data()).zip(s.data()) {
        acc += -g * (sv - xv);
    }
    acc
}

/// Short step size: `clip_[0,1](<-g, r> / (L ||r||^2))` with `r = s - x`.
/// Returns 0 on a zero direction.
pub fn short_step(gradient: &ImageTensor, r: &ImageTensor, lipschitz: f64) -> f64 {
    let rr = r.dot(r);
    if rr == 0.0 {
        return 0.0;
    }
    let num = -gradient.dot(r);
    (num / (lipschitz * rr)).clamp(0.0, 1.0)
}

enum GroupSampler {
    Full,
    Block {
        k: usize,
        rng: ChaCha8Rng,
        indices: Vec<usize>,
    },
}

/// Run vanilla Frank-Wolfe: minimize `objective` over the ball centered
/// at `center`, starting from `start` (which must already satisfy the
/// constraint).
pub fn frank_wolfe(
    objective: impl Fn(&ImageTensor) -> (f64, ImageTensor),
    ball: &DistortionBall,
    center: &ImageTensor,
    start: &ImageTensor,
    steps: usize,
    rule: StepRule,
    record: RecordFlags,
) -> Result<FwTrajectory> {
    run_fw(
        objective,
        ball,
        center,
        start,
        steps,
        rule,
        record,
        GroupSampler::Full,
    )
}

/// Randomized block variant: each iteration samples `block_count` groups
/// uniformly without replacement (seeded) and restricts the group LMO to
/// them. With `block_count` equal to the number of groups this is
/// iterate-for-iterate identical to [`frank_wolfe`].
pub fn frank_wolfe_block(
    objective: impl Fn(&ImageTensor) -> (f64, ImageTensor),
    ball: &DistortionBall,
    center: &ImageTensor,
    start: &ImageTensor,
    steps: usize,
    rule: StepRule,
    block_count: usize,
    seed: u64,
) -> Result<FwTrajectory> {
    frank_wolfe_block_recorded(
        objective,
        ball,
        center,
        start,
        steps,
        rule,
        block_count,
        seed,
        RecordFlags::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn frank_wolfe_block_recorded(
    objective: impl Fn(&ImageTensor) -> (f64, ImageTensor),
    ball: &DistortionBall,
    center: &ImageTensor,
    start: &ImageTensor,
    steps: usize,
    rule: StepRule,
    block_count: usize,
    seed: u64,
    record: RecordFlags,
) -> Result<FwTrajectory> {
    let DistortionBall::GroupNuclear { partition, .. } = ball else {
        return Err(Error::InvalidArgument(
            "block sampling requires a group-nuclear ball".into(),
        ));
    };
    if block_count == 0 || block_count > partition.len() {
        return Err(Error::InvalidArgument(format!(
            "block count {} out of range 1..={}",
            block_count,
            partition.len()
        )));
    }
    let sampler = GroupSampler::Block {
        k: block_count,
        rng: ChaCha8Rng::seed_from_u64(seed),
        indices: (0..partition.len()).collect(),
    };
    run_fw(objective, ball, center, start, steps, rule, record, sampler)
}

#[allow(clippy::too_many_arguments)]
fn run_fw(
    objective: impl Fn(&ImageTensor) -> (f64, ImageTensor),
    ball: &DistortionBall,
    center: &ImageTensor,
    start: &ImageTensor,
    steps: usize,
    rule: StepRule,
    record: RecordFlags,
    mut sampler: GroupSampler,
) -> Result<FwTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    center.require_same_shape(start)?;
    let start_norm = norm_value(ball, &start.sub(center))?;
    if start_norm > ball.radius() * (1.0 + 1e-6) + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "start violates the constraint: perturbation norm {start_norm} > radius {}",
            ball.radius()
        )));
    }

    let mut x = start.clone();
    let mut traj = FwTrajectory {
        iterates: Vec::new(),
        losses: Vec::new(),
        gaps: Vec::new(),
        steps: Vec::new(),
        final_iterate: x.clone(),
        aborted: None,
    };

    for t in 0..steps {
        let (loss, grad) = objective(&x);
        if !loss.is_finite() || !grad.is_finite() {
            traj.aborted = Some(format!(
                "non-finite objective at iteration {t} (loss {loss})"
            ));
            break;
        }
        grad.require_same_shape(&x)?;

        let vertex: LmoVertex = match &mut sampler {
            GroupSampler::Full => lmo(ball, &grad)?,
            GroupSampler::Block { k, rng, indices } => {
                let DistortionBall::GroupNuclear {
                    partition,
                    radius,
                    selection,
                } = ball
                else {
                    unreachable!("sampler only built for group balls");
                };
                indices.shuffle(rng);
                let mut chosen: Vec<usize> = indices[..*k].to_vec();
                chosen.sort_unstable();
                lmo_group_restricted(partition, *radius, *selection, &grad, &chosen)?
            }
        };
        let s = center.add_scaled(1.0, &vertex.tensor);
        let gap = fw_gap(&grad, &x, &s);

        let gamma = match rule {
            StepRule::ShortStep { lipschitz } => {
                let r = s.sub(&x);
                short_step(&grad, &r, lipschitz)
            }
            StepRule::Harmonic => 2.0 / (t as f64 + 2.0),
            StepRule::Backtracking {
                init,
                shrink,
                max_halvings,
            } => {
                let mut gamma = init.clamp(0.0, 1.0);
                let mut accepted = 0.0;
                for _ in 0..=max_halvings {
                    let cand = blend(&x, &s, gamma);
                    let (cand_loss, _) = objective(&cand);
                    if cand_loss.is_finite() && cand_loss < loss {
                        accepted = gamma;
                        break;
                    }
                    gamma *= shrink;
                }
                accepted
            }
        };

        if record.iterates {
            traj.iterates.push(x.clone());
        }
        if record.losses {
            traj.losses.push(loss);
        }
        if record.gaps {
            traj.gaps.push(gap);
        }
        if record.steps {
            traj.steps.push(gamma);
        }

        x = blend(&x, &s, gamma);
    }

    traj.final_iterate = x;
    Ok(traj)
}

// (1 - gamma) x + gamma s, elementwise.
fn blend(x: &ImageTensor, s: &ImageTensor, gamma: f64) -> ImageTensor {
    ImageTensor::from_fn(x.channels(), x.height(), x.width(), |c, y, xx| {
        (1.0 - gamma) * x.at(c, y, xx) + gamma * s.at(c, y, xx)
    })
}
