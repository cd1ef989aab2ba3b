use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use slide::corruption::convergence_report;
use slide::io::{convergence_csv, load_dataset, matrix_to_csv, width_trace_csv, write_atomic, Format, LabelColumn, LoadOptions};
use slide::metrics::evaluate;
use slide::pipeline::{fit_svm, predict, train_features, FitOptions, WidthMode, DEFAULT_C_GRID, DEFAULT_WIDTH_FACTORS};
use slide::stack::StackConfig;
use slide::svm::DEFAULT_TOL;
use slide::widths::WidthLearningConfig;
use slide::{Exec, SlideError, SlideModel};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "slide", version, about = "Stacked linear denoisers with a composite-kernel SVM")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a stack of denoising layers from unlabeled data.
    TrainFeatures(TrainFeatures),
    /// Write one representation (or all of them) for new data.
    Transform(Transform),
    /// Choose kernel widths and train a one-vs-rest SVM on top of a stack.
    FitSvm(FitSvm),
    /// Predict class labels.
    Predict(Predict),
    /// Score predictions against the labels in the input.
    Eval(Eval),
    /// Compare finite-m corruption against the closed form.
    Oracle(Oracle),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
    /// none, last, auto (last column iff rows have d+1 fields) or a zero-based index.
    #[arg(long)]
    labels_col: Option<LabelColumn>,
}

#[derive(Args)]
struct TrainFeatures {
    #[command(flatten)]
    data: InputArgs,
    /// Feature survival probability.
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = slide::denoise::DEFAULT_EPS)]
    eps: f64,
    /// Fit each layer above the first on thresholded inputs.
    #[arg(long)]
    fit_on_thresholded: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Transform {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: InputArgs,
    /// Representation index (0 is the input itself) or `all`.
    #[arg(long, default_value = "all")]
    layer: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Widths {
    Median,
    Grid,
    Learn,
}

#[derive(Args)]
struct FitSvm {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: InputArgs,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, value_enum, default_value = "median")]
    widths: Widths,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Comma-separated multipliers of the median widths searched in grid mode.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WIDTH_FACTORS.to_vec())]
    width_factors: Vec<f64>,
    /// Comma-separated C values searched in grid mode.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_C_GRID.to_vec())]
    c_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the updated model; defaults to overwriting --model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of the width-learning trace (learn mode only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: InputArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: InputArgs,
    /// Print metrics as JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Oracle {
    #[command(flatten)]
    data: InputArgs,
    #[arg(long)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 10, 100, 1000, 10000])]
    m_list: Vec<usize>,
    /// Number of corruption seeds per m, derived from --seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = slide::denoise::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn print_config(command: &str, entries: &[(&str, &dyn Display)]) {
    let body: Vec<String> = entries.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("config: command={command} {}", body.join(" "));
}

fn load(data: &InputArgs, dim: Option<usize>, default_labels: LabelColumn) -> anyhow::Result<slide::io::LabeledDataset> {
    let opts = LoadOptions { labels: data.labels_col.unwrap_or(default_labels), dim };
    load_dataset(&data.input, data.format, opts).with_context(|| format!("reading {}", data.input.display()))
}

fn load_model(path: &PathBuf) -> anyhow::Result<SlideModel> {
    SlideModel::load(path).with_context(|| format!("reading model {}", path.display()))
}

fn labels_name(l: Option<LabelColumn>, default: LabelColumn) -> String {
    format!("{:?}", l.unwrap_or(default)).to_lowercase()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let mode = if exec == Exec::Parallel && Exec::parallel_available() { "parallel" } else { "sequential" };
    match cli.command {
        Command::TrainFeatures(a) => {
            print_config(
                "train-features",
                &[
                    ("input", &a.data.input.display()),
                    ("format", &format!("{:?}", a.data.format).to_lowercase()),
                    ("labels_col", &labels_name(a.data.labels_col, LabelColumn::None)),
                    ("p", &a.p),
                    ("t", &a.t),
                    ("layers", &a.layers),
                    ("eps", &a.eps),
                    ("fit_on_thresholded", &a.fit_on_thresholded),
                    ("seed", &a.seed),
                    ("exec", &mode),
                    ("out", &a.out.display()),
                ],
            );
            let data = load(&a.data, None, LabelColumn::None)?;
            let mut cfg = StackConfig::new(a.p, a.t, a.layers, a.eps);
            cfg.fit_on_thresholded = a.fit_on_thresholded;
            let (model, _) = train_features(&data.features, &cfg, a.seed)?;
            model.save(&a.out)?;
            println!("trained {} layer(s) on {} samples with {} features", a.layers, data.n(), data.d());
        }
        Command::Transform(a) => {
            print_config(
                "transform",
                &[
                    ("model", &a.model.display()),
                    ("input", &a.data.input.display()),
                    ("layer", &a.layer),
                    ("out", &a.out.display()),
                ],
            );
            let model = load_model(&a.model)?;
            let data = load(&a.data, Some(model.stack.d), LabelColumn::Auto)?;
            let outputs = model.stack.forward(data.features.as_matrix())?;
            let n_reps = outputs.n_layers();
            let text = if a.layer == "all" {
                let d = model.stack.d;
                let stacked = vstack(&outputs.reps);
                let header: Vec<String> = (0..n_reps).flat_map(|k| (0..d).map(move |j| format!("h{k}_{j}"))).collect();
                matrix_to_csv(&stacked, Some(&header))
            } else {
                let k: usize = a.layer.parse().map_err(|_| {
                    SlideError::InvalidParameter(format!("--layer must be an index or `all`, got {:?}", a.layer))
                })?;
                if k >= n_reps {
                    return Err(SlideError::InvalidParameter(format!(
                        "--layer {k} out of range; the model has representations 0..={}",
                        n_reps - 1
                    ))
                    .into());
                }
                matrix_to_csv(&outputs.reps[k], None)
            };
            write_atomic(&a.out, text.as_bytes())?;
        }
        Command::FitSvm(a) => {
            let widths_name = match a.widths {
                Widths::Median => "median",
                Widths::Grid => "grid",
                Widths::Learn => "learn",
            };
            let out = a.out.clone().unwrap_or_else(|| a.model.clone());
            print_config(
                "fit-svm",
                &[
                    ("model", &a.model.display()),
                    ("input", &a.data.input.display()),
                    ("labels_col", &labels_name(a.data.labels_col, LabelColumn::Auto)),
                    ("c", &a.c),
                    ("tol", &a.tol),
                    ("widths", &widths_name),
                    ("folds", &a.folds),
                    ("width_factors", &format!("{:?}", a.width_factors)),
                    ("c_grid", &format!("{:?}", a.c_grid)),
                    ("seed", &a.seed),
                    ("exec", &mode),
                    ("out", &out.display()),
                ],
            );
            if a.trace.is_some() && !matches!(a.widths, Widths::Learn) {
                return Err(SlideError::InvalidParameter("--trace requires --widths learn".into()).into());
            }
            let mut model = load_model(&a.model)?;
            let data = load(&a.data, Some(model.stack.d), LabelColumn::Auto)?;
            let labels = data.require_labels()?;
            let widths = match a.widths {
                Widths::Median => WidthMode::Median,
                Widths::Grid => WidthMode::Grid { factors: a.width_factors, c_grid: a.c_grid, folds: a.folds },
                Widths::Learn => WidthMode::Learn(WidthLearningConfig::default()),
            };
            let opts = FitOptions { c: a.c, tol: a.tol, widths, seed: a.seed };
            let report = fit_svm(&mut model, &data.features, labels, &opts, exec)?;
            model.save(&out)?;
            println!("sigma={}", report.params.sigma);
            println!("sigmas={:?}", report.params.sigmas);
            println!("c={}", report.c);
            println!("support_vectors={}", report.n_support);
            if let Some(cv) = &report.cv {
                println!("cv_accuracy={}", cv.mean_accuracy);
            }
            if let Some(learning) = &report.learning {
                println!("criterion={}", learning.criterion);
                println!("stop={:?}", learning.stop);
                if let Some(path) = &a.trace {
                    write_atomic(path, width_trace_csv(&learning.trace).as_bytes())?;
                }
            }
        }
        Command::Predict(a) => {
            print_config(
                "predict",
                &[("model", &a.model.display()), ("input", &a.data.input.display()), ("exec", &mode), ("out", &a.out.display())],
            );
            let model = load_model(&a.model)?;
            let data = load(&a.data, Some(model.stack.d), LabelColumn::Auto)?;
            let pred = predict(&model, data.features.as_matrix(), exec)?;
            let mut text = String::from("label\n");
            for p in pred {
                text.push_str(&format!("{p}\n"));
            }
            write_atomic(&a.out, text.as_bytes())?;
        }
        Command::Eval(a) => {
            print_config(
                "eval",
                &[
                    ("model", &a.model.display()),
                    ("input", &a.data.input.display()),
                    ("labels_col", &labels_name(a.data.labels_col, LabelColumn::Auto)),
                    ("json", &a.json),
                    ("exec", &mode),
                ],
            );
            let model = load_model(&a.model)?;
            let data = load(&a.data, Some(model.stack.d), LabelColumn::Auto)?;
            let labels = data.require_labels()?;
            let pred = predict(&model, data.features.as_matrix(), exec)?;
            let metrics = evaluate(&pred, labels)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&metrics)?);
            } else {
                print!("{metrics}");
            }
        }
        Command::Oracle(a) => {
            let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed.wrapping_add(i)).collect();
            print_config(
                "oracle",
                &[
                    ("input", &a.data.input.display()),
                    ("p", &a.p),
                    ("m_list", &format!("{:?}", a.m_list)),
                    ("seeds", &format!("{:?}", seeds)),
                    ("eps", &a.eps),
                    ("rng", &slide::corruption::RNG_ALGORITHM),
                    ("exec", &mode),
                    ("out", &a.out.display()),
                ],
            );
            if a.seeds == 0 || a.m_list.is_empty() {
                bail!(SlideError::InvalidParameter("--seeds and --m-list must be non-empty".into()));
            }
            let data = load(&a.data, None, LabelColumn::None)?;
            let rows = convergence_report(&data.features, a.p, &a.m_list, &seeds, a.eps, exec)?;
            write_atomic(&a.out, convergence_csv(&rows).as_bytes())?;
            for &m in &a.m_list {
                let errs: Vec<f64> = rows.iter().filter(|r| r.m == m).map(|r| r.frobenius_error).collect();
                println!("m={m} mean_frobenius_error={}", errs.iter().sum::<f64>() / errs.len() as f64);
            }
        }
    }
    Ok(())
}

/// Stacks equally wide matrices on top of each other.
fn vstack(blocks: &[slide::nalgebra::DMatrix<f64>]) -> slide::nalgebra::DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = slide::nalgebra::DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SlideError>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(SlideError::InvalidParameter(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
