//! Experiment orchestration: accuracy-under-attack rows, radius/step
//! sweeps, transferability matrices, perturbation statistics, and the
//! CSV/JSON report emitters.
//!
//! Per-image attacks fan out to the rayon pool; every image gets its own
//! seed derived from (global seed, image index), so results do not depend
//! on scheduling and reports are reproducible byte for byte.

use crate::attack::{attack_label, run_attack, AttackConfig, AttackKind, AttackResult, LossMode};
use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::model::{predict, Model};
use rayon::prelude::*;
use serde::Serialize;

/// One row of the metrics table. Percentages are on the 0-100 scale.
///
/// `success_rate` counts fooled images among the originally-correct ones,
/// so `attacked_accuracy_correct_only + success_rate = 100` for untargeted
/// attacks; `attacked_accuracy` is over the whole test set. The
/// `*_success` means are over successful attacks only (0 when none
/// succeeded); the plain means are over all images.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub attack: String,
    pub ball: String,
    pub eps: f64,
    pub steps: usize,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    pub success_rate: f64,
    pub mean_l2: f64,
    pub mean_nuclear: f64,
    pub mean_linf: f64,
    pub mean_nonzero_pixels: f64,
    pub success_rate_all: f64,
    pub attacked_accuracy_correct_only: f64,
    pub mean_l2_success: f64,
    pub mean_nuclear_success: f64,
    pub mean_linf_success: f64,
    pub mean_nonzero_pixels_success: f64,
}

pub const REPORT_COLUMNS: [&str; 17] = [
    "attack",
    "ball",
    "eps",
    "steps",
    "clean_accuracy",
    "attacked_accuracy",
    "success_rate",
    "mean_l2",
    "mean_nuclear",
    "mean_linf",
    "mean_nonzero_pixels",
    "success_rate_all",
    "attacked_accuracy_correct_only",
    "mean_l2_success",
    "mean_nuclear_success",
    "mean_linf_success",
    "mean_nonzero_pixels_success",
];

#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub model_id: String,
    pub dataset_id: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

/// Run one attack over every image of the dataset (in parallel, seeded
/// per image) and aggregate a report row.
pub fn accuracy_under_attack(
    model: &Model,
    dataset: &Dataset,
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<(ReportRow, Vec<AttackResult>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let results: Vec<AttackResult> = dataset
        .images
        .par_iter()
        .zip(dataset.labels.par_iter())
        .enumerate()
        .map(|(i, (x, &label))| {
            let mut per_image = cfg.clone();
            per_image.seed = derive_seed(cfg.seed, i);
            run_attack(kind, model, x, label, &per_image)
        })
        .collect::<Result<_>>()?;
    let row = aggregate_row(
        model,
        dataset,
        &results,
        attack_label(kind, &cfg.ball),
        cfg.ball.label(),
        cfg.ball.radius(),
        cfg.steps,
    );
    Ok((row, results))
}

/// Row for the zero-radius "attack": adversarial images are the clean
/// images, so the attacked accuracy equals the clean accuracy.
pub fn identity_attack_row(
    model: &Model,
    dataset: &Dataset,
    attack: &str,
    ball: &str,
    steps: usize,
) -> Result<(ReportRow, Vec<AttackResult>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let results: Vec<AttackResult> = dataset
        .images
        .iter()
        .zip(&dataset.labels)
        .map(|(x, &label)| {
            let zero = crate::tensor::ImageTensor::zeros(x.channels(), x.height(), x.width());
            let norms = crate::attack::perturbation_norms(&zero);
            AttackResult {
                x_adv: x.clone(),
                perturbation: zero,
                success: predict(model, x) != label,
                final_loss: 0.0,
                l2: 0.0,
                nuclear: 0.0,
                linf: 0.0,
                nonzero_pixels: 0,
                preclamp: norms,
                history: None,
            }
        })
        .collect();
    let row = aggregate_row(
        model,
        dataset,
        &results,
        attack.into(),
        ball.into(),
        0.0,
        steps,
    );
    Ok((row, results))
}

fn aggregate_row(
    model: &Model,
    dataset: &Dataset,
    results: &[AttackResult],
    attack: String,
    ball: String,
    eps: f64,
    steps: usize,
) -> ReportRow {
    let n = dataset.len();
    let clean_correct: Vec<bool> = dataset
        .images
        .iter()
        .zip(&dataset.labels)
        .map(|(x, &l)| predict(model, x) == l)
        .collect();
    let n_correct = clean_correct.iter().filter(|&&b| b).count();

    let attacked_correct: Vec<bool> = results
        .iter()
        .zip(&dataset.labels)
        .map(|(r, &l)| predict(model, &r.x_adv) == l)
        .collect();

    let pct = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };

    let succ_on_correct = results
        .iter()
        .zip(&clean_correct)
        .filter(|(r, &c)| c && r.success)
        .count();
    let still_correct = attacked_correct
        .iter()
        .zip(&clean_correct)
        .filter(|(&a, &c)| a && c)
        .count();

    let mean = |f: &dyn Fn(&AttackResult) -> f64, only_success: bool| {
        let vals: Vec<f64> = results
            .iter()
            .filter(|r| !only_success || r.success)
            .map(|r| f(r))
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };

    ReportRow {
        attack,
        ball,
        eps,
        steps,
        clean_accuracy: pct(n_correct, n),
        attacked_accuracy: pct(attacked_correct.iter().filter(|&&b| b).count(), n),
        success_rate: pct(succ_on_correct, n_correct),
        mean_l2: mean(&|r| r.l2, false),
        mean_nuclear: mean(&|r| r.nuclear, false),
        mean_linf: mean(&|r| r.linf, false),
        mean_nonzero_pixels: mean(&|r| r.nonzero_pixels as f64, false),
        success_rate_all: pct(results.iter().filter(|r| r.success).count(), n),
        attacked_accuracy_correct_only: pct(still_correct, n_correct),
        mean_l2_success: mean(&|r| r.l2, true),
        mean_nuclear_success: mean(&|r| r.nuclear, true),
        mean_linf_success: mean(&|r| r.linf, true),
        mean_nonzero_pixels_success: mean(&|r| r.nonzero_pixels as f64, true),
    }
}

/// Sweep axis: hold everything fixed and vary the radius or step count.
#[derive(Debug, Clone)]
pub enum SweepAxis {
    Radius(Vec<f64>),
    Steps(Vec<usize>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepDiagnostics {
    pub axis: String,
    /// Largest adjacent increase of attacked accuracy along the sweep, in
    /// percentage points (0 when the curve is nonincreasing).
    pub max_increase_pp: f64,
    pub nonincreasing_within_2pp: bool,
}

pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    pub diagnostics: SweepDiagnostics,
}

pub fn sweep(
    model: &Model,
    dataset: &Dataset,
    kind: AttackKind,
    base_cfg: &AttackConfig,
    axis: &SweepAxis,
) -> Result<SweepOutcome> {
    let values_ok = match axis {
        SweepAxis::Radius(v) => !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]),
        SweepAxis::Steps(v) => !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]),
    };
    if !values_ok {
        return Err(Error::InvalidArgument(
            "sweep values must be nonempty and increasing".into(),
        ));
    }
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Radius(values) => {
            for &eps in values {
                if eps == 0.0 {
                    let (row, _) = identity_attack_row(
                        model,
                        dataset,
                        &attack_label(kind, &base_cfg.ball),
                        &base_cfg.ball.label(),
                        base_cfg.steps,
                    )?;
                    rows.push(row);
                } else {
                    let mut cfg = base_cfg.clone();
                    cfg.ball = base_cfg.ball.with_radius(eps)?;
                    let (row, _) = accuracy_under_attack(model, dataset, kind, &cfg)?;
                    rows.push(row);
                }
            }
        }
        SweepAxis::Steps(values) => {
            for &steps in values {
                let mut cfg = base_cfg.clone();
                cfg.steps = steps;
                let (row, _) = accuracy_under_attack(model, dataset, kind, &cfg)?;
                rows.push(row);
            }
        }
    }
    let mut max_increase: f64 = 0.0;
    for w in rows.windows(2) {
        max_increase = max_increase.max(w[1].attacked_accuracy - w[0].attacked_accuracy);
    }
    Ok(SweepOutcome {
        rows,
        diagnostics: SweepDiagnostics {
            axis: match axis {
                SweepAxis::Radius(_) => "eps".into(),
                SweepAxis::Steps(_) => "steps".into(),
            },
            max_increase_pp: max_increase,
            nonincreasing_within_2pp: max_increase <= 2.0,
        },
    })
}

/// Square fooling-rate matrix: entry (i, j) is the percentage of
/// adversarial examples crafted on model i that model j misclassifies.
/// The diagonal is the white-box fooling rate.
#[derive(Debug, Clone, Serialize)]
pub struct TransferMatrix {
    pub model_ids: Vec<String>,
    pub fooling_rates: Vec<Vec<f64>>,
}

impl TransferMatrix {
    /// Whether every white-box (diagonal) rate is at least as high as the
    /// transfer rates in its row. Expected on independently trained
    /// models, and reported as a diagnostic rather than asserted.
    pub fn diagonal_dominant(&self) -> bool {
        self.fooling_rates
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().all(|&r| r <= row[i]))
    }
}

pub fn transfer_matrix(
    models: &[(String, Model)],
    dataset: &Dataset,
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<TransferMatrix> {
    transfer_matrix_inner(models, dataset, Some((kind, cfg)))
}

/// Zero-radius baseline: the "adversarial" images are the clean images,
/// so every entry is the target model's clean error rate.
pub fn transfer_matrix_identity(
    models: &[(String, Model)],
    dataset: &Dataset,
) -> Result<TransferMatrix> {
    transfer_matrix_inner(models, dataset, None)
}

fn transfer_matrix_inner(
    models: &[(String, Model)],
    dataset: &Dataset,
    attack: Option<(AttackKind, &AttackConfig)>,
) -> Result<TransferMatrix> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument(
            "transferability needs at least two models".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let n = dataset.len();
    let mut rates = Vec::with_capacity(models.len());
    for (_, source) in models {
        let adv: Vec<crate::tensor::ImageTensor> = match attack {
            None => dataset.images.clone(),
            Some((kind, cfg)) => dataset
                .images
                .par_iter()
                .zip(dataset.labels.par_iter())
                .enumerate()
                .map(|(i, (x, &label))| {
                    let mut per_image = cfg.clone();
                    per_image.seed = derive_seed(cfg.seed, i);
                    run_attack(kind, source, x, label, &per_image).map(|r| r.x_adv)
                })
                .collect::<Result<_>>()?,
        };
        let mut row = Vec::with_capacity(models.len());
        for (_, target) in models {
            let fooled = adv
                .iter()
                .zip(&dataset.labels)
                .filter(|(x_adv, &label)| predict(target, *x_adv) != label)
                .count();
            row.push(100.0 * fooled as f64 / n as f64);
        }
        rates.push(row);
    }
    Ok(TransferMatrix {
        model_ids: models.iter().map(|(id, _)| id.clone()).collect(),
        fooling_rates: rates,
    })
}

/// Aggregate perturbation statistics over a batch of attack results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStats {
    pub mean_l2: f64,
    pub median_l2: f64,
    pub mean_nuclear: f64,
    pub median_nuclear: f64,
    pub mean_linf: f64,
    pub median_linf: f64,
    pub mean_nonzero_pixels: f64,
    pub median_nonzero_pixels: f64,
}

pub fn perturbation_stats(results: &[AttackResult]) -> Result<AggregateStats> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no attack results".into()));
    }
    let collect = |f: &dyn Fn(&AttackResult) -> f64| -> (f64, f64) {
        let mut vals: Vec<f64> = results.iter().map(|r| f(r)).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let median = if vals.len() % 2 == 1 {
            vals[vals.len() / 2]
        } else {
            0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
        };
        (mean, median)
    };
    let (mean_l2, median_l2) = collect(&|r| r.l2);
    let (mean_nuclear, median_nuclear) = collect(&|r| r.nuclear);
    let (mean_linf, median_linf) = collect(&|r| r.linf);
    let (mean_nonzero_pixels, median_nonzero_pixels) = collect(&|r| r.nonzero_pixels as f64);
    Ok(AggregateStats {
        mean_l2,
        median_l2,
        mean_nuclear,
        median_nuclear,
        mean_linf,
        median_linf,
        mean_nonzero_pixels,
        median_nonzero_pixels,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// CSV emission with the fixed column order of [`REPORT_COLUMNS`].
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&REPORT_COLUMNS.join(","));
    out.push('\n');
    for r in &report.rows {
        let fields = [
            r.attack.clone(),
            r.ball.clone(),
            fmt_f64(r.eps),
            r.steps.to_string(),
            fmt_f64(r.clean_accuracy),
            fmt_f64(r.attacked_accuracy),
            fmt_f64(r.success_rate),
            fmt_f64(r.mean_l2),
            fmt_f64(r.mean_nuclear),
            fmt_f64(r.mean_linf),
            fmt_f64(r.mean_nonzero_pixels),
            fmt_f64(r.success_rate_all),
            fmt_f64(r.attacked_accuracy_correct_only),
            fmt_f64(r.mean_l2_success),
            fmt_f64(r.mean_nuclear_success),
            fmt_f64(r.mean_linf_success),
            fmt_f64(r.mean_nonzero_pixels_success),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// JSON emission: `{"meta": {...}, "rows": [...]}`.
pub fn report_to_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization cannot fail")
}

/// CSV for a transfer matrix: header `source\target,<ids...>`, one row
/// per source model.
pub fn transfer_to_csv(m: &TransferMatrix) -> String {
    let mut out = String::new();
    out.push_str("source\\target,");
    out.push_str(&m.model_ids.join(","));
    out.push('\n');
    for (id, row) in m.model_ids.iter().zip(&m.fooling_rates) {
        out.push_str(id);
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub meta: ReportMeta,
    /// Diagnostic only: white-box rates expected to dominate their rows.
    pub diagonal_dominant: bool,
    #[serde(flatten)]
    pub matrix: TransferMatrix,
}

pub fn transfer_to_json(report: &TransferReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization cannot fail")
}

/// Convenience constructor for the table-1-style multi-attack reports.
pub fn build_report(meta: ReportMeta, rows: Vec<ReportRow>) -> MetricsReport {
    MetricsReport { meta, rows }
}

/// Standard attack battery at desk scale: the Frank-Wolfe nuclear attack
/// at two radii plus the PGD/FGSM baselines, mirroring the layout of the
/// usual white-box comparison tables.
pub fn battery_configs(
    eps_nuclear: f64,
    eps_linf: f64,
    steps: usize,
    alpha: f64,
    rule: crate::fw::StepRule,
    seed: u64,
) -> Result<Vec<(AttackKind, AttackConfig)>> {
    use crate::ball::DistortionBall;
    let mut out = Vec::new();
    for (kind, ball, steps) in [
        (AttackKind::Fw, DistortionBall::nuclear(eps_nuclear)?, steps),
        (
            AttackKind::Fw,
            DistortionBall::nuclear(3.0 * eps_nuclear)?,
            steps,
        ),
        (
            AttackKind::PgdNucl,
            DistortionBall::nuclear(eps_nuclear)?,
            steps,
        ),
        (AttackKind::Pgd, DistortionBall::linf(eps_linf)?, steps),
        (AttackKind::Fgsm, DistortionBall::linf(eps_linf)?, 1),
    ] {
        let mut cfg = AttackConfig::new(ball, steps)
            .with_rule(rule)
            .with_step_size(alpha)
            .with_seed(seed);
        cfg.loss = LossMode::Untargeted;
        out.push((kind, cfg));
    }
    Ok(out)
}
