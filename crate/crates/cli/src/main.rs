use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hazboost::boost::{self, cross_validate_one_se, BoostParams, CvConfig, CvReport};
use hazboost::cox::{fit_cox, CoxOptions};
use hazboost::eval::{evaluate, label_of, write_curve, write_summary, SummaryRow};
use hazboost::flag::{flag, Criterion, CriterionKind, FlagRecord, RiskModel, RiskPath};
use hazboost::ingest::{
    ingest_files, read_defaults, split_by_patient, write_stays, write_timeline, Dataset, DefaultValueTable,
    IngestOptions, DEFAULT_HORIZON_HOURS,
};
use hazboost::persist::{load_model, save_model, AnyModel};
use hazboost::simulate::{generate_dataset, write_truth, CovariateProcess, HazardSpec, SCENARIOS};
use hazboost::{Error, Result};
use rayon::prelude::*;

#[derive(Parser, Debug)]
#[command(name = "hazboost", version, about = "Boosted hazard estimation and real-time mortality flags")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HAZBOOST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic stays with a known hazard.
    Simulate(SimulateArgs),
    /// Parse, impute and truncate raw CSVs into a clean dataset.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split a dataset into train and test sets by patient.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a boosted hazard or Cox model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelKind::Boost)]
        model_kind: ModelKind,
        #[command(flatten)]
        boost: BoostArgs,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the number of trees and depth by K-fold cross-validation.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        reg: f64,
        /// Grid as TREESxDEPTH pairs, e.g. `50x1,75x2`.
        #[arg(long, value_delimiter = ',', value_parser = parse_grid_point)]
        grid: Option<Vec<(usize, usize)>>,
        /// Optional CSV of the full table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write each stay's risk path.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag stays at a fixed threshold.
    Flag {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "window")]
        criterion: CriterionKind,
        #[arg(long, default_value_t = 8.0)]
        window_hours: f64,
        #[arg(long, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep thresholds and report ROC and precision-recall areas.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "window")]
        criterion: CriterionKind,
        #[arg(long, default_value_t = 8.0)]
        window_hours: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train boost and Cox on one split and tabulate both criteria.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        boost: BoostArgs,
        #[arg(long, default_value_t = 8.0)]
        window_hours: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
    scenario: String,
    /// Number of stays.
    #[arg(long, default_value_t = 2000)]
    stays: usize,
    #[arg(long, default_value_t = 5)]
    n_features: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Administrative censoring time.
    #[arg(long, default_value_t = DEFAULT_HORIZON_HOURS)]
    censor_hours: f64,
    /// Covariate jumps per hour.
    #[arg(long, default_value_t = 0.05)]
    jump_rate: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    timeline: PathBuf,
    #[arg(long)]
    stays: PathBuf,
    /// `feature,value` table for never-observed features (0.0 otherwise).
    #[arg(long)]
    defaults: Option<PathBuf>,
    /// Comma-separated feature subset.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value_t = DEFAULT_HORIZON_HOURS)]
    horizon_hours: f64,
    /// Comma-separated stay IDs to drop.
    #[arg(long, value_delimiter = ',')]
    exclude_stays: Vec<String>,
}

#[derive(Args, Debug)]
struct BoostArgs {
    #[arg(long, default_value_t = 75)]
    num_trees: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    reg: f64,
}

impl BoostArgs {
    fn params(&self) -> BoostParams {
        BoostParams {
            num_trees: self.num_trees,
            max_depth: self.depth,
            learning_rate: self.learning_rate,
            reg_lambda: self.reg,
            ..BoostParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Boost,
    Cox,
}

fn parse_grid_point(s: &str) -> std::result::Result<(usize, usize), String> {
    let (m, d) = s
        .split_once('x')
        .ok_or_else(|| format!("expected TREESxDEPTH, got `{s}`"))?;
    let m = m.trim().parse().map_err(|_| format!("bad tree count in `{s}`"))?;
    let d = d.trim().parse().map_err(|_| format!("bad depth in `{s}`"))?;
    Ok((m, d))
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(&args),
        Command::Ingest { data, out_dir } => {
            let ds = load(&data, None)?;
            write_dataset(&out_dir, &ds, &data_inputs(&data))?;
            println!("{} stays", ds.trajectories.len());
            Ok(())
        }
        Command::Split {
            data,
            train_fraction,
            seed,
            out_dir,
        } => {
            let ds = load(&data, None)?;
            let (train, test) = split_by_patient(&ds.trajectories, train_fraction, seed)?;
            let inputs = data_inputs(&data);
            for (name, part) in [("train", train), ("test", test)] {
                let part = Dataset {
                    feature_names: ds.feature_names.clone(),
                    trajectories: part,
                };
                write_dataset(&out_dir.join(name), &part, &inputs)?;
                println!("{name}: {} stays", part.trajectories.len());
            }
            Ok(())
        }
        Command::Train {
            data,
            model_kind,
            boost,
            out,
        } => {
            check_distinct(&[&out], &data_inputs(&data))?;
            let ds = load(&data, None)?;
            let model = train(&ds, model_kind, &boost.params())?;
            save_model(&model, &out)?;
            println!("wrote {} model to {}", model.kind(), out.display());
            Ok(())
        }
        Command::Cv {
            data,
            folds,
            seed,
            learning_rate,
            reg,
            grid,
            out,
        } => {
            if let Some(out) = &out {
                check_distinct(&[out], &data_inputs(&data))?;
            }
            let ds = load(&data, None)?;
            let config = CvConfig {
                folds,
                grid: grid.unwrap_or_else(CvConfig::default_grid),
                base: BoostParams {
                    learning_rate,
                    reg_lambda: reg,
                    ..BoostParams::default()
                },
                seed,
            };
            let report = cross_validate_one_se(&ds.trajectories, &ds.feature_names, &config)?;
            print_cv(&report);
            if let Some(out) = out {
                write_cv(&out, &report)?;
            }
            Ok(())
        }
        Command::Predict { data, model, out } => {
            check_distinct(&[&out], &model_inputs(&data, &model))?;
            let model = load_model(&model)?;
            let ds = load(&data, Some(&model))?;
            let paths = risk_paths(&model, &ds)?;
            let mut w = create(&out)?;
            writeln!(w, "stay_id,t_start,t_end,risk")?;
            for p in &paths {
                for (a, b, v) in p.segments() {
                    writeln!(w, "{},{a},{b},{v}", p.stay_id)?;
                }
            }
            w.flush()?;
            Ok(())
        }
        Command::Flag {
            data,
            model,
            criterion,
            window_hours,
            threshold,
            out,
        } => {
            check_distinct(&[&out], &model_inputs(&data, &model))?;
            let criterion = criterion_of(criterion, window_hours)?;
            let model = load_model(&model)?;
            let ds = load(&data, Some(&model))?;
            let records: Vec<FlagRecord> = risk_paths(&model, &ds)?
                .iter()
                .map(|p| FlagRecord {
                    stay_id: p.stay_id.clone(),
                    criterion,
                    threshold,
                    flag_time: flag(p, threshold, criterion),
                })
                .collect();
            let mut w = create(&out)?;
            hazboost::flag::write_flags(&mut w, &records)?;
            w.flush()?;
            let n = records.iter().filter(|r| r.flag_time.is_some()).count();
            println!("{n} of {} stays flagged", records.len());
            Ok(())
        }
        Command::Evaluate {
            data,
            model,
            criterion,
            window_hours,
            out_dir,
        } => {
            let inputs = model_inputs(&data, &model);
            check_distinct(&[&out_dir.join("curve.csv"), &out_dir.join("summary.csv")], &inputs)?;
            let criterion = criterion_of(criterion, window_hours)?;
            let model = load_model(&model)?;
            let ds = load(&data, Some(&model))?;
            let paths = risk_paths(&model, &ds)?;
            let labels = labels(&ds);
            let (curve, summary) = evaluate(&paths, &labels, criterion)?;
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir.join("curve.csv"))?;
            write_curve(&mut w, &curve)?;
            w.flush()?;
            let rows = [SummaryRow {
                model: model.kind().into(),
                criterion: criterion.name().into(),
                window_hours: criterion.window_hours(),
                auc_roc: summary.auc_roc,
                auc_prc: summary.auc_prc,
            }];
            let mut w = create(&out_dir.join("summary.csv"))?;
            write_summary(&mut w, &rows)?;
            w.flush()?;
            print_summary(&rows, summary.positive_rate);
            Ok(())
        }
        Command::Compare {
            data,
            train_fraction,
            seed,
            boost,
            window_hours,
            out_dir,
        } => {
            check_distinct(&[&out_dir.join("summary.csv")], &data_inputs(&data))?;
            let window = criterion_of(CriterionKind::Window, window_hours)?;
            let ds = load(&data, None)?;
            let (train_set, test_set) = split_by_patient(&ds.trajectories, train_fraction, seed)?;
            let train_ds = Dataset {
                feature_names: ds.feature_names.clone(),
                trajectories: train_set,
            };
            let test_ds = Dataset {
                feature_names: ds.feature_names,
                trajectories: test_set,
            };
            let models = [
                train(&train_ds, ModelKind::Cox, &boost.params())?,
                train(&train_ds, ModelKind::Boost, &boost.params())?,
            ];
            let labels = labels(&test_ds);
            let mut rows = Vec::new();
            let mut prevalence = 0.0;
            for (i, model) in models.iter().enumerate() {
                let paths = risk_paths(model, &test_ds)?;
                for criterion in [Criterion::Instant, window] {
                    let (_, s) = evaluate(&paths, &labels, criterion)?;
                    if i == 0 {
                        prevalence = s.positive_rate;
                        rows.push(SummaryRow {
                            model: "baseline".into(),
                            criterion: criterion.name().into(),
                            window_hours: criterion.window_hours(),
                            auc_roc: 0.5,
                            auc_prc: s.positive_rate,
                        });
                    }
                    rows.push(SummaryRow {
                        model: model.kind().into(),
                        criterion: criterion.name().into(),
                        window_hours: criterion.window_hours(),
                        auc_roc: s.auc_roc,
                        auc_prc: s.auc_prc,
                    });
                }
            }
            rows.sort_by_key(|r| (r.criterion.clone(), model_rank(&r.model)));
            fs::create_dir_all(&out_dir)?;
            let mut w = create(&out_dir.join("summary.csv"))?;
            write_summary(&mut w, &rows)?;
            w.flush()?;
            println!(
                "train {} stays, test {} stays",
                train_ds.trajectories.len(),
                test_ds.trajectories.len()
            );
            print_summary(&rows, prevalence);
            Ok(())
        }
    }
}

fn model_rank(name: &str) -> usize {
    match name {
        "baseline" => 0,
        "cox" => 1,
        _ => 2,
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = HazardSpec::named(&args.scenario, args.n_features, args.censor_hours)?;
    let process = CovariateProcess::standard(args.n_features, args.jump_rate, 0.0);
    let sim = generate_dataset(&spec, &process, args.stays, args.seed)?;
    let ds = Dataset {
        feature_names: sim.feature_names.clone(),
        trajectories: sim.trajectories,
    };
    write_dataset(&args.out_dir, &ds, &[])?;

    let mut w = create(&args.out_dir.join("defaults.csv"))?;
    DefaultValueTable::uniform(&ds.feature_names, 0.0).write_csv(&mut w)?;
    w.flush()?;

    let steps = (args.censor_hours / 2.0).ceil() as usize;
    let times: Vec<f64> = (0..=steps)
        .map(|i| (i as f64 * 2.0).min(args.censor_hours))
        .collect();
    let x1: Vec<f64> = (0..=12).map(|i| -3.0 + 0.5 * i as f64).collect();
    let mut w = create(&args.out_dir.join("truth.csv"))?;
    write_truth(&mut w, &spec, &ds.feature_names, &times, &x1)?;
    w.flush()?;

    let events = ds.trajectories.iter().filter(|t| t.event).count();
    let mut w = create(&args.out_dir.join("metadata.txt"))?;
    writeln!(w, "generator=ChaCha8")?;
    writeln!(w, "seed={}", args.seed)?;
    writeln!(w, "scenario={}", spec.name())?;
    writeln!(w, "hazard={:?}", spec.scenario)?;
    writeln!(w, "stays={}", args.stays)?;
    writeln!(w, "features={}", args.n_features)?;
    writeln!(w, "censor_hours={}", args.censor_hours)?;
    writeln!(w, "jump_rate={}", args.jump_rate)?;
    writeln!(w, "events={events}")?;
    w.flush()?;
    println!(
        "{} stays, {events} events, written to {}",
        args.stays,
        args.out_dir.display()
    );
    Ok(())
}

fn train(ds: &Dataset, kind: ModelKind, params: &BoostParams) -> Result<AnyModel> {
    match kind {
        ModelKind::Boost => boost::fit(&ds.trajectories, &ds.feature_names, params).map(AnyModel::Boost),
        ModelKind::Cox => {
            fit_cox(&ds.trajectories, &ds.feature_names, &CoxOptions::default()).map(AnyModel::Cox)
        }
    }
}

fn load(data: &DataArgs, model: Option<&AnyModel>) -> Result<Dataset> {
    let features = match (model, &data.features) {
        (Some(m), _) => Some(m.feature_names().to_vec()),
        (None, f) => f.clone(),
    };
    let mut opts = IngestOptions {
        features,
        defaults: None,
        horizon_hours: data.horizon_hours,
        exclude_stays: data.exclude_stays.clone(),
    };
    if let Some(path) = &data.defaults {
        let names = match &opts.features {
            Some(f) => f.clone(),
            None => timeline_features(&data.timeline)?,
        };
        opts.defaults = Some(read_defaults(path, &names)?);
    }
    ingest_files(&data.timeline, &data.stays, &opts)
}

/// Feature columns named in a timeline header.
fn timeline_features(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    Ok(header
        .trim_end_matches(['\r', '\n'])
        .split(',')
        .skip(3)
        .map(str::to_string)
        .collect())
}

fn risk_paths(model: &AnyModel, ds: &Dataset) -> Result<Vec<RiskPath>> {
    ds.trajectories.par_iter().map(|t| model.risk_path(t)).collect()
}

fn labels(ds: &Dataset) -> Vec<bool> {
    ds.trajectories.iter().map(label_of).collect()
}

fn criterion_of(kind: CriterionKind, window_hours: f64) -> Result<Criterion> {
    if kind == CriterionKind::Window && !(window_hours > 0.0 && window_hours.is_finite()) {
        return Err(Error::InvalidArgument("--window-hours must be positive".into()));
    }
    Ok(kind.with_window(window_hours))
}

fn data_inputs(data: &DataArgs) -> Vec<PathBuf> {
    let mut v = vec![data.timeline.clone(), data.stays.clone()];
    v.extend(data.defaults.clone());
    v
}

fn model_inputs(data: &DataArgs, model: &Path) -> Vec<PathBuf> {
    let mut v = data_inputs(data);
    v.push(model.to_path_buf());
    v
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()))
}

fn check_distinct(outputs: &[&Path], inputs: &[PathBuf]) -> Result<()> {
    for out in outputs {
        let o = absolute(out);
        if inputs.iter().any(|i| absolute(i) == o) {
            return Err(Error::InvalidArgument(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_dataset(dir: &Path, ds: &Dataset, inputs: &[PathBuf]) -> Result<()> {
    let timeline = dir.join("timeline.csv");
    let stays = dir.join("stays.csv");
    check_distinct(&[&timeline, &stays], inputs)?;
    let mut w = create(&timeline)?;
    write_timeline(&mut w, &ds.feature_names, &ds.trajectories)?;
    w.flush()?;
    let mut w = create(&stays)?;
    write_stays(&mut w, &ds.trajectories)?;
    w.flush()?;
    Ok(())
}

fn print_cv(report: &CvReport) {
    println!("{:>6} {:>6} {:>14} {:>12}", "trees", "depth", "mean_nll", "std_error");
    for (i, p) in report.points.iter().enumerate() {
        let mark = match (i == report.best, i == report.chosen) {
            (true, true) => "  best, chosen",
            (true, false) => "  best",
            (false, true) => "  chosen",
            _ => "",
        };
        println!(
            "{:>6} {:>6} {:>14.4} {:>12.4}{mark}",
            p.num_trees, p.depth, p.mean, p.std_error
        );
    }
    let (m, d) = report.chosen_point();
    println!("chosen: {m} trees, depth {d}");
}

fn write_cv(path: &Path, report: &CvReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "num_trees,depth,mean_nll,std_error,best,chosen")?;
    for (i, p) in report.points.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.num_trees,
            p.depth,
            p.mean,
            p.std_error,
            u8::from(i == report.best),
            u8::from(i == report.chosen)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn print_summary(rows: &[SummaryRow], positive_rate: f64) {
    println!("{:<9} {:<11} {:>7} {:>8}", "model", "criterion", "AUC", "AUC-PRC");
    for r in rows {
        let crit = match r.window_hours {
            Some(w) => format!("{}({w}h)", r.criterion),
            None => r.criterion.clone(),
        };
        println!("{:<9} {:<11} {:>7.3} {:>8.3}", r.model, crit, r.auc_roc, r.auc_prc);
    }
    println!("positive rate {positive_rate:.3}");
}
