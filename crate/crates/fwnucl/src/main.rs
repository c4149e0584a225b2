//! Command-line surface: train desk-scale models, run attacks and
//! sweeps, build transferability tables, emit images, and self-test the
//! library invariants.
//!
//! Exit codes: 0 success, 2 validation/usage error, 3 runtime failure.

use clap::{Args, Parser, Subcommand};
use fwnucl::attack::{attack_label, AttackConfig, AttackKind, LossMode};
use fwnucl::ball::{DistortionBall, GroupSelection};
use fwnucl::data::{
    load_csv_dataset, load_idx, parse_group_spec, synth_dataset, Dataset, AUTO_WEIGHT_KAPPA,
};
use fwnucl::error::Error;
use fwnucl::harness::{
    accuracy_under_attack, build_report, identity_attack_row, report_to_csv, report_to_json, sweep,
    transfer_matrix, transfer_to_csv, transfer_to_json, MetricsReport, ReportMeta, SweepAxis,
    TransferReport,
};
use fwnucl::model::{load_model, save_model, train_sgd, GradientModel, Model};
use fwnucl::tensor::{GroupPartition, Matricization};
use fwnucl::StepRule;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "fwnucl",
    version,
    about = "Structured adversarial attacks via conditional-gradient methods",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a desk-scale classifier and save it as a text file.
    Train(TrainArgs),
    /// Attack every image of a dataset and write CSV/JSON reports.
    Attack(AttackArgs),
    /// Sweep the ball radius or the step count and report one row per value.
    Sweep(SweepArgs),
    /// Fooling-rate matrix between models (rows: source, columns: target).
    Transfer(TransferArgs),
    /// Run the built-in invariant suite and print one pass/fail line each.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: linear | mlp | conv
    #[arg(long, default_value = "linear")]
    model: String,
    /// Data source: synth:seed=7,n=400,h=16,w=16 | idx:imgs,labels | csv:path
    #[arg(long)]
    data: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden units (mlp only).
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Convolution filters (conv only).
    #[arg(long, default_value_t = 4)]
    filters: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; explicit flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct AttackArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Data source (see `train --help`).
    #[arg(long)]
    data: String,
    /// Attack: fw | fgsm | pgd | pgdnucl
    #[arg(long, default_value = "fw")]
    attack: String,
    /// Ball: nuclear | groupnuclear | linf | l1 | l2 | schatten
    #[arg(long, default_value = "nuclear")]
    ball: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Step rule for FW: short:<L> | backtrack | harmonic
    #[arg(long, default_value = "harmonic")]
    rule: String,
    /// Step size for the PGD family.
    #[arg(long, default_value_t = 0.02)]
    alpha: f64,
    /// Schatten exponent (with --ball schatten); `inf` is accepted.
    #[arg(long, default_value = "1")]
    q: String,
    /// Matricization: stacked | perchannel
    #[arg(long, default_value = "stacked")]
    matricization: String,
    /// Group spec file for --ball groupnuclear (default: one group per channel).
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Group-LMO selection rule: spectral (linear-minimization-correct
    /// default) or nuclear (compatibility switch for comparison runs).
    #[arg(long, default_value = "spectral")]
    selection: String,
    /// Group weights: auto (variance-based, per image) or a weights file
    /// with one weight per line.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = false)]
    random_start: bool,
    /// Randomized block sampling: number of groups per iteration.
    #[arg(long)]
    block: Option<usize>,
    /// Targeted attack toward this label (default: untargeted).
    #[arg(long)]
    targeted: Option<usize>,
    /// Skip the final [0,1] clamp (FW / PGDnucl only).
    #[arg(long, default_value_t = false)]
    no_clamp: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the first N adversarial images and |delta| heatmaps.
    #[arg(long, default_value_t = 0)]
    emit_images: usize,
    /// Include wall time in the report metadata (off by default so that
    /// reruns with equal seeds stay byte-identical).
    #[arg(long, default_value_t = false)]
    timings: bool,
    /// Output directory for report.csv / report.json.
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; explicit flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// eps | steps
    #[arg(long)]
    axis: String,
    /// Comma-separated increasing values, e.g. 0,0.5,1,2,4
    #[arg(long)]
    values: String,
    #[command(flatten)]
    attack: AttackArgs,
}

#[derive(Args)]
struct TransferArgs {
    /// Comma-separated model files.
    #[arg(long)]
    models: String,
    #[command(flatten)]
    attack: AttackArgs,
}

fn main() {
    let argv = inject_config_args(std::env::args().collect());
    let cli = Cli::parse_from(argv);
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

// Validation problems exit 2, runtime failures 3.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::NonFinite(_) | Error::Runtime(_) => 3,
        _ => 2,
    }
}

/// Splice `--key value` pairs from a `--config file` into the argument
/// list right after the subcommand, so explicit flags (parsed later)
/// override the file values.
fn inject_config_args(argv: Vec<String>) -> Vec<String> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return argv;
    };
    let Some(path) = argv.get(pos + 1) else {
        return argv;
    };
    let Ok(text) = std::fs::read_to_string(path) else {
        return argv; // parse error surfaces later via clap/run
    };
    let mut injected = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            let (key, value) = (key.trim(), value.trim());
            if key == "config" {
                continue;
            }
            if value == "true" {
                injected.push(format!("--{key}"));
            } else if value != "false" {
                injected.push(format!("--{key}"));
                injected.push(value.to_string());
            }
        }
    }
    // argv[0] program, argv[1] subcommand, config pairs, then user flags.
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend(argv.iter().take(2).cloned());
    out.extend(injected);
    out.extend(argv.iter().skip(2).cloned());
    out
}

fn run(cli: Cli) -> fwnucl::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Selftest => cmd_selftest(),
    }
}

fn parse_data_source(src: &str) -> fwnucl::Result<Dataset> {
    let (scheme, rest) = src
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("data source {src:?} needs a scheme")))?;
    match scheme {
        "synth" => {
            let mut seed = 0u64;
            let mut n = 100usize;
            let mut c = 1usize;
            let mut h = 16usize;
            let mut w = 16usize;
            let mut skip = 0usize;
            for field in rest.split(',').filter(|f| !f.is_empty()) {
                let (k, v) = field.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("synth field {field:?} is not key=value"))
                })?;
                let parse_err =
                    |e: std::num::ParseIntError| Error::InvalidArgument(format!("synth {k}: {e}"));
                match k {
                    "seed" => seed = v.parse().map_err(parse_err)?,
                    "n" => n = v.parse().map_err(parse_err)?,
                    "c" => c = v.parse().map_err(parse_err)?,
                    "h" => h = v.parse().map_err(parse_err)?,
                    "w" => w = v.parse().map_err(parse_err)?,
                    "skip" => skip = v.parse().map_err(parse_err)?,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown synth field {other:?}"
                        )))
                    }
                }
            }
            let full = synth_dataset(seed, skip + n, (c, h, w));
            Ok(if skip == 0 { full } else { full.split(skip).1 })
        }
        "idx" => {
            let (images, labels) = rest.split_once(',').ok_or_else(|| {
                Error::InvalidArgument("idx source needs images,labels paths".into())
            })?;
            load_idx(Path::new(images), Path::new(labels))
        }
        "csv" => load_csv_dataset(Path::new(rest)),
        other => Err(Error::InvalidArgument(format!(
            "unknown data scheme {other:?}"
        ))),
    }
}

fn cmd_train(args: TrainArgs) -> fwnucl::Result<()> {
    let data = parse_data_source(&args.data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let shape = data.images[0].shape();
    let mut model = match args.model.as_str() {
        "linear" => Model::linear_softmax(shape, args.classes, args.seed),
        "mlp" => Model::mlp_1hidden(shape, args.hidden, args.classes, args.seed),
        "conv" => Model::tiny_conv(shape, args.filters, args.classes, args.seed),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown model kind {other:?}"
            )))
        }
    };
    let start = Instant::now();
    let acc = train_sgd(&mut model, &data, args.epochs, args.lr, args.seed)?;
    let mut file = std::fs::File::create(&args.out)?;
    save_model(&model, &mut file)?;
    eprintln!(
        "trained {} on {} ({} samples): train accuracy {:.2}% in {:.2}s -> {}",
        args.model,
        data.name,
        data.len(),
        100.0 * acc,
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

struct AttackSetup {
    model: Model,
    data: Dataset,
    kind: AttackKind,
    cfg: AttackConfig,
}

fn build_setup(args: &AttackArgs) -> fwnucl::Result<AttackSetup> {
    let mut file = std::io::BufReader::new(std::fs::File::open(&args.model)?);
    let model = load_model(&mut file)?;
    let data = parse_data_source(&args.data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let shape = data.images[0].shape();
    if shape != model.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "dataset images {:?} vs model input {:?}",
            shape,
            model.input_shape()
        )));
    }

    let kind = match args.attack.as_str() {
        "fw" => AttackKind::Fw,
        "fgsm" => AttackKind::Fgsm,
        "pgd" => AttackKind::Pgd,
        "pgdnucl" => AttackKind::PgdNucl,
        other => return Err(Error::InvalidArgument(format!("unknown attack {other:?}"))),
    };

    let matricization = match args.matricization.as_str() {
        "stacked" => Matricization::Stacked,
        "perchannel" => Matricization::PerChannel,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown matricization {other:?}"
            )))
        }
    };
    let eps = if args.eps == 0.0 { 1.0 } else { args.eps }; // placeholder radius for the eps=0 identity row
    let ball = match args.ball.as_str() {
        "nuclear" => DistortionBall::schatten(1.0, eps, matricization)?,
        "linf" => DistortionBall::linf(eps)?,
        "l1" => DistortionBall::l1(eps)?,
        "l2" => DistortionBall::l2(eps)?,
        "schatten" => {
            let q = if args.q == "inf" {
                f64::INFINITY
            } else {
                args.q
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad --q: {e}")))?
            };
            DistortionBall::schatten(q, eps, matricization)?
        }
        "groupnuclear" => {
            let partition = match &args.groups {
                Some(path) => parse_group_spec(&std::fs::read_to_string(path)?)?,
                None => GroupPartition::per_channel(shape.0, shape.1, shape.2),
            };
            partition.check_bounds(&data.images[0])?;
            let partition = match args.weights.as_deref() {
                None | Some("auto") => partition,
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let weights: Vec<f64> = text
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|e| Error::Parse(format!("bad weight {t:?}: {e}")))
                        })
                        .collect::<fwnucl::Result<_>>()?;
                    partition.with_weights(weights)?
                }
            };
            let selection = match args.selection.as_str() {
                "spectral" => GroupSelection::Spectral,
                "nuclear" => GroupSelection::Nuclear,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown selection rule {other:?}"
                    )))
                }
            };
            DistortionBall::group_nuclear_with_selection(partition, eps, selection)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown ball {other:?}"))),
    };

    let rule = match args.rule.as_str() {
        "harmonic" => StepRule::Harmonic,
        "backtrack" => StepRule::backtracking(),
        s => {
            if let Some(l) = s.strip_prefix("short:") {
                StepRule::short_step(
                    l.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad --rule short:L: {e}")))?,
                )?
            } else {
                return Err(Error::InvalidArgument(format!("unknown rule {s:?}")));
            }
        }
    };

    let mut cfg = AttackConfig::new(ball, args.steps)
        .with_rule(rule)
        .with_step_size(args.alpha)
        .with_seed(args.seed);
    cfg.random_start = args.random_start;
    cfg.clamp_final = !args.no_clamp;
    cfg.block = args.block;
    cfg.loss = match args.targeted {
        Some(target_label) => LossMode::Targeted { target_label },
        None => LossMode::Untargeted,
    };
    cfg.auto_weights = matches!(args.weights.as_deref(), Some("auto")).then_some(AUTO_WEIGHT_KAPPA);
    Ok(AttackSetup {
        model,
        data,
        kind,
        cfg,
    })
}

fn meta_for(args: &AttackArgs, elapsed: Option<f64>) -> ReportMeta {
    ReportMeta {
        model_id: args.model.display().to_string(),
        dataset_id: args.data.clone(),
        seed: args.seed,
        wall_time_s: elapsed.filter(|_| args.timings),
    }
}

fn write_report(dir: &Path, report: &MetricsReport) -> fwnucl::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_to_csv(report))?;
    std::fs::write(dir.join("report.json"), report_to_json(report))?;
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> fwnucl::Result<()> {
    let setup = build_setup(&args)?;
    let start = Instant::now();
    let (row, results) = if args.eps == 0.0 {
        identity_attack_row(
            &setup.model,
            &setup.data,
            &attack_label(setup.kind, &setup.cfg.ball),
            &setup.cfg.ball.label(),
            setup.cfg.steps,
        )?
    } else {
        accuracy_under_attack(&setup.model, &setup.data, setup.kind, &setup.cfg)?
    };
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "{}: clean {:.2}%, attacked {:.2}%, success {:.2}% ({:.2}s)",
        row.attack, row.clean_accuracy, row.attacked_accuracy, row.success_rate, elapsed
    );
    let report = build_report(meta_for(&args, Some(elapsed)), vec![row]);
    write_report(&args.out, &report)?;

    for (i, r) in results.iter().take(args.emit_images).enumerate() {
        let ext = if r.x_adv.channels() == 3 {
            "ppm"
        } else {
            "pgm"
        };
        let mut f = std::fs::File::create(args.out.join(format!("adv_{i:03}.{ext}")))?;
        fwnucl::imageio::write_image(&mut f, &r.x_adv)?;
        let mut f = std::fs::File::create(args.out.join(format!("heat_{i:03}.{ext}")))?;
        fwnucl::imageio::write_heatmap(&mut f, &r.perturbation)?;
        let mut f = std::fs::File::create(args.out.join(format!("delta_{i:03}.csv")))?;
        r.perturbation.write_csv(&mut f)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> fwnucl::Result<()> {
    let setup = build_setup(&args.attack)?;
    let axis = match args.axis.as_str() {
        "eps" => SweepAxis::Radius(parse_values::<f64>(&args.values)?),
        "steps" => SweepAxis::Steps(parse_values::<usize>(&args.values)?),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown sweep axis {other:?}"
            )))
        }
    };
    let start = Instant::now();
    let outcome = sweep(&setup.model, &setup.data, setup.kind, &setup.cfg, &axis)?;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "sweep over {}: {} rows, max adjacent accuracy increase {:.2}pp ({})",
        outcome.diagnostics.axis,
        outcome.rows.len(),
        outcome.diagnostics.max_increase_pp,
        if outcome.diagnostics.nonincreasing_within_2pp {
            "nonincreasing within 2pp"
        } else {
            "NOT monotone within 2pp"
        }
    );
    let report = build_report(meta_for(&args.attack, Some(elapsed)), outcome.rows);
    write_report(&args.attack.out, &report)?;
    let diag = serde_json::to_string_pretty(&outcome.diagnostics)
        .expect("diagnostics serialization cannot fail");
    std::fs::write(args.attack.out.join("sweep_diagnostics.json"), diag)?;
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> fwnucl::Result<()> {
    let mut models = Vec::new();
    for path in args.models.split(',').filter(|s| !s.is_empty()) {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        models.push((path.to_string(), load_model(&mut file)?));
    }
    // The flattened attack args carry a --model flag that transfer does
    // not use; source models come from --models.
    let data = parse_data_source(&args.attack.data)?;
    if models.len() < 2 {
        return Err(Error::InvalidArgument(
            "transfer needs at least two --models".into(),
        ));
    }
    let shape = data.images[0].shape();
    let mut probe = args.attack.clone();
    probe.model = PathBuf::from(args.models.split(',').next().unwrap());
    let setup = build_setup(&probe)?;
    if shape != setup.model.input_shape() {
        return Err(Error::ShapeMismatch(
            "dataset shape does not match the models".into(),
        ));
    }
    let start = Instant::now();
    let matrix = if args.attack.eps == 0.0 {
        fwnucl::harness::transfer_matrix_identity(&models, &data)?
    } else {
        transfer_matrix(&models, &data, setup.kind, &setup.cfg)?
    };
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "transfer matrix over {} models ({:.2}s); white-box diagonal dominant: {}",
        models.len(),
        elapsed,
        matrix.diagonal_dominant()
    );
    std::fs::create_dir_all(&args.attack.out)?;
    std::fs::write(
        args.attack.out.join("transfer.csv"),
        transfer_to_csv(&matrix),
    )?;
    let report = TransferReport {
        meta: meta_for(&args.attack, Some(elapsed)),
        diagonal_dominant: matrix.diagonal_dominant(),
        matrix,
    };
    std::fs::write(
        args.attack.out.join("transfer.json"),
        transfer_to_json(&report),
    )?;
    Ok(())
}

fn parse_values<T: std::str::FromStr>(s: &str) -> fwnucl::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| Error::InvalidArgument(format!("bad value {t:?}: {e}")))
        })
        .collect()
}

fn cmd_selftest() -> fwnucl::Result<()> {
    use fwnucl::*;

    let mut all_ok = true;
    let mut check = |name: &str, ok: bool| {
        println!("selftest {name}: {}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // SVD reconstruction residual.
    {
        let m = Mat::from_fn(8, 6, |r, c| ((r * 31 + c * 17) as f64).sin());
        let svd = full_svd(&m);
        let rec = Mat::reconstruct(&svd.u, &svd.s, &svd.v);
        let err: f64 = rec
            .data()
            .iter()
            .zip(m.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        check("svd-reconstruction", err <= 1e-8 * m.frobenius_norm());
    }

    // l1 projection feasibility and idempotence.
    {
        let v: Vec<f64> = (0..9).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let p = project_l1_ball(&v, 2.5);
        let n: f64 = p.iter().map(|x| x.abs()).sum();
        let pp = project_l1_ball(&p, 2.5);
        check(
            "l1-projection",
            n <= 2.5 + 1e-10 && p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12),
        );
    }

    // LMO value matches -eps * dual norm across ball families.
    {
        let shape = (2, 6, 5);
        let balls = vec![
            DistortionBall::linf(0.7).unwrap(),
            DistortionBall::l1(0.7).unwrap(),
            DistortionBall::l2(0.7).unwrap(),
            DistortionBall::nuclear(0.7).unwrap(),
            DistortionBall::schatten(2.0, 0.7, Matricization::PerChannel).unwrap(),
            DistortionBall::group_nuclear(GroupPartition::per_channel(2, 6, 5), 0.7).unwrap(),
        ];
        let mut ok = true;
        for seed in 0..10u64 {
            let d = sample_in_ball(&DistortionBall::l2(1.0).unwrap(), shape, 100 + seed);
            if d.is_zero() {
                continue;
            }
            for ball in &balls {
                let v = lmo(ball, &d).unwrap();
                let value = d.dot(&v.tensor);
                let expect = -ball.radius() * dual_norm_value(ball, &d).unwrap();
                ok &= (value - expect).abs() <= 1e-8 * expect.abs().max(1e-12);
            }
        }
        check("lmo-dual-identity", ok);
    }

    // LMO beats sampled in-ball points.
    {
        let ball = DistortionBall::nuclear(1.0).unwrap();
        let d = sample_in_ball(&DistortionBall::l2(1.0).unwrap(), (1, 8, 8), 7);
        let v = lmo(&ball, &d).unwrap();
        let best = d.dot(&v.tensor);
        let ok = (0..500u64).all(|s| best <= d.dot(&sample_in_ball(&ball, (1, 8, 8), s)) + 1e-9);
        check("lmo-optimality-sampling", ok);
    }

    // FW reaches the projection oracle on a quadratic whose minimizer
    // lies outside the ball.
    {
        let ball = DistortionBall::nuclear(1.0).unwrap();
        let center = ImageTensor::zeros(1, 6, 6);
        let z = ImageTensor::from_fn(1, 6, 6, |_, y, x| (2.7 * (y * 6 + x) as f64).sin() * 2.0);
        let expected = project(&ball, &z).unwrap();
        let zc = z.clone();
        let traj = frank_wolfe(
            move |x: &ImageTensor| {
                let dd = x.sub(&zc);
                (0.5 * dd.dot(&dd), dd)
            },
            &ball,
            &center,
            &center,
            300,
            StepRule::short_step(1.0).unwrap(),
            Default::default(),
        )
        .unwrap();
        check(
            "fw-projection-oracle",
            traj.final_iterate.sub(&expected).l2_norm() < 1e-2,
        );
    }

    // Gradient fidelity for all architectures.
    {
        let shape = (1, 8, 8);
        let x = sample_in_ball(&DistortionBall::linf(0.5).unwrap(), shape, 3).map(|v| v + 0.5);
        let mut ok = true;
        for model in [
            Model::linear_softmax(shape, 2, 1),
            Model::mlp_1hidden(shape, 8, 2, 2),
            Model::tiny_conv(shape, 2, 2, 3),
        ] {
            let err = finite_diff_check(
                &model,
                &x,
                &LossSpec::Untargeted { true_label: 0 },
                1e-4,
                20,
                5,
            )
            .unwrap();
            ok &= err < 1e-4;
        }
        check("gradient-fidelity", ok);
    }

    // FGSM reduces to single-step PGD, and attacks are deterministic.
    {
        let data = synth_dataset(7, 40, (1, 8, 8));
        let (train, test) = data.split(30);
        let mut model = Model::linear_softmax((1, 8, 8), 2, 0);
        train_sgd(&mut model, &train, 30, 0.3, 1).unwrap();
        let cfg = AttackConfig::new(DistortionBall::linf(0.08).unwrap(), 1).with_step_size(0.08);
        let mut ok = true;
        for (x, &label) in test.images.iter().zip(&test.labels) {
            let a = fgsm(&model, x, label, &cfg).unwrap();
            let b = pgd(&model, x, label, &cfg).unwrap();
            ok &= a.x_adv == b.x_adv;
        }
        let c1 = fwnucl::attack::run_attack(
            AttackKind::Fw,
            &model,
            &test.images[0],
            test.labels[0],
            &AttackConfig::new(DistortionBall::nuclear(1.0).unwrap(), 10).with_seed(4),
        )
        .unwrap();
        let c2 = fwnucl::attack::run_attack(
            AttackKind::Fw,
            &model,
            &test.images[0],
            test.labels[0],
            &AttackConfig::new(DistortionBall::nuclear(1.0).unwrap(), 10).with_seed(4),
        )
        .unwrap();
        ok &= c1.x_adv == c2.x_adv;
        check("fgsm-pgd-reduction-and-determinism", ok);
    }

    // Per-channel nuclear ball behaves as the per-channel group ball.
    {
        let shape = (3, 5, 4);
        let schatten = DistortionBall::schatten(1.0, 0.9, Matricization::PerChannel).unwrap();
        let group =
            DistortionBall::group_nuclear(GroupPartition::per_channel(3, 5, 4), 0.9).unwrap();
        let mut ok = true;
        for seed in 0..5u64 {
            let d = sample_in_ball(&DistortionBall::l2(1.0).unwrap(), shape, 40 + seed);
            let n1 = norm_value(&schatten, &d).unwrap();
            let n2 = norm_value(&group, &d).unwrap();
            ok &= (n1 - n2).abs() <= 1e-9 * n1.max(1.0);
            let v1 = d.dot(&lmo(&schatten, &d).unwrap().tensor);
            let v2 = d.dot(&lmo(&group, &d).unwrap().tensor);
            ok &= (v1 - v2).abs() <= 1e-8 * v1.abs().max(1e-12);
        }
        check("perchannel-group-equivalence", ok);
    }

    if all_ok {
        Ok(())
    } else {
        Err(Error::Runtime("selftest checks failed".into()))
    }
}
