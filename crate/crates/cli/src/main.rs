mod svg;

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdft_core::{
    crest_factor, estimate_frf, evaluate_frf, evaluate_frf_discrete, fit_bdft_model_with,
    generate_multisine, make_reference, run_experiment, run_trial_with, AxisPair, BdftParams,
    Complex64, Discretization, DualAxisCanceller, Error, ExperimentConfig, ExperimentResult,
    FitOptions, FitResult, FitTarget, FrequencyResponse, ModelRealization, MultisineSpec,
    PerturbationSource, ReferenceKind, SyntheticParticipant, Trial, TrialOptions,
};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "bdft", version, about = "Biodynamic feedthrough identification and cancellation")]
struct Cli {
    /// Overrides the seed(s) in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a perturbation signal from a spec, vehicle profile or PSD.
    GenSignal,
    /// Synthesize a trial for one participant.
    Simulate,
    /// Estimate per-axis FRFs from a trial CSV.
    Identify {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Sample rate in Hz; inferred from the `t` column when omitted.
        #[arg(long)]
        sample_rate: Option<f64>,
    },
    /// Fit BDFT parameters to an FRF (CSV or JSON).
    Fit {
        #[arg(long)]
        frf: PathBuf,
        /// Fit the model as discretized at this sample rate instead of the
        /// continuous-time model.
        #[arg(long)]
        sample_rate: Option<f64>,
        /// Initial parameters; multi-start when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cancel BDFT from a trial CSV.
    Cancel {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        params_y: PathBuf,
        #[arg(long)]
        params_z: PathBuf,
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cancel BDFT from `t,fd_y,fd_z,u_y,u_z` lines on stdin.
    StreamCancel {
        #[arg(long)]
        params_y: PathBuf,
        #[arg(long)]
        params_z: PathBuf,
        #[arg(long)]
        sample_rate: f64,
    },
    /// Individual-vs-average model experiment over a synthetic population.
    Experiment {
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
}

/// A failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    /// Downstream reader went away; not an error for a stream filter.
    fn closed() -> Self {
        Self {
            code: 0,
            message: String::new(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EmptySpec
            | Error::InvalidSpec(_)
            | Error::InvalidSeries(_)
            | Error::InvalidArgument(_)
            | Error::NyquistViolation { .. }
            | Error::InvalidParams(_)
            | Error::SampleRateTooLow { .. }
            | Error::OutOfRange { .. }
            | Error::NonCommensurate { .. }
            | Error::BandEmpty { .. }
            | Error::BandOutsidePsd { .. }
            | Error::LengthMismatch(_)
            | Error::Schema { .. }
            | Error::Config { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.code == 0 => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context {
        seed: cli.seed,
        out_dir: cli.out_dir,
        config: cli.config,
    };
    match cli.command {
        Command::GenSignal => cmd_gen_signal(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Identify {
            trial,
            spec,
            sample_rate,
        } => cmd_identify(&ctx, &trial, &spec, sample_rate),
        Command::Fit {
            frf,
            sample_rate,
            init,
            output,
        } => cmd_fit(&ctx, &frf, sample_rate, init.as_deref(), output),
        Command::Cancel {
            trial,
            params_y,
            params_z,
            sample_rate,
            output,
        } => cmd_cancel(&ctx, &trial, &params_y, &params_z, sample_rate, output),
        Command::StreamCancel {
            params_y,
            params_z,
            sample_rate,
        } => cmd_stream_cancel(&params_y, &params_z, sample_rate),
        Command::Experiment { print_config } => cmd_experiment(&ctx, print_config),
    }
}

struct Context {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    config: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self, fallback: Option<&Path>) -> CliResult<PathBuf> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn require_config(&self, command: &str) -> CliResult<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| Failure::validation(format!("{command} requires --config")))
    }

    fn config_dir(&self) -> PathBuf {
        self.config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))
}

fn open_input(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> CliResult<()> {
    let mut contents = contents.to_owned();
    if !contents.ends_with('\n') {
        contents.push('\n');
    }
    fs::write(path, contents)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_output(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn parse_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::validation(format!(
            "{}: line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn config_error(field: &str, message: impl Into<String>) -> Failure {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
    .into()
}

fn check_positive(field: &str, value: f64) -> CliResult<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(config_error(field, "must be positive"))
    }
}

fn override_phase_seed(source: &mut PerturbationSource, seed: u64) {
    match source {
        PerturbationSource::Spec {
            phase_seed,
            phase_trials,
            ..
        } => {
            *phase_seed = seed;
            phase_trials.get_or_insert(bdft_core::signals::DEFAULT_PHASE_TRIALS);
        }
        PerturbationSource::Profile { phase_seed, .. }
        | PerturbationSource::PsdFile { phase_seed, .. } => *phase_seed = seed,
    }
}

/// Parameters are accepted either bare or as a fit result.
fn read_params(path: &Path) -> CliResult<BdftParams> {
    let text = read_input(path)?;
    if let Ok(p) = BdftParams::from_json(&text) {
        return Ok(p);
    }
    serde_json::from_str::<FitResult>(&text)
        .map(|f| f.params)
        .map_err(|e| Failure::validation(format!("{}: not BDFT parameters: {e}", path.display())))
}

fn read_trial(path: &Path, sample_rate: Option<f64>) -> CliResult<Trial> {
    let file = open_input(path)?;
    let trial = match sample_rate {
        Some(fs) => Trial::read_csv_with_rate(file, fs),
        None => Trial::read_csv(file),
    };
    trial.map_err(|e| Failure::from(e).with_path(path))
}

impl Failure {
    fn with_path(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenSignalConfig {
    perturbation: PerturbationSource,
    sample_rate_hz: f64,
    duration_s: f64,
}

#[derive(Serialize)]
struct CrestReport {
    crest_factor: f64,
    peak: f64,
    rms: f64,
    variance: f64,
    spec_variance: f64,
    components: usize,
    samples: usize,
}

fn cmd_gen_signal(ctx: &Context) -> CliResult<()> {
    let path = ctx.require_config("gen-signal")?;
    let mut cfg: GenSignalConfig = parse_config(path)?;
    check_positive("sample_rate_hz", cfg.sample_rate_hz)?;
    check_positive("duration_s", cfg.duration_s)?;
    if let Some(seed) = ctx.seed {
        override_phase_seed(&mut cfg.perturbation, seed);
    }
    let spec = cfg.perturbation.resolve(&ctx.config_dir())?;
    let signal = generate_multisine(&spec, cfg.sample_rate_hz, cfg.duration_s)?;
    let report = CrestReport {
        crest_factor: crest_factor(&signal)?,
        peak: signal.peak(),
        rms: signal.rms(),
        variance: signal.variance(),
        spec_variance: spec.variance(),
        components: spec.len(),
        samples: signal.len(),
    };

    let dir = ctx.out_dir(None)?;
    let mut csv = String::from("t,fd\n");
    for (i, v) in signal.samples().iter().enumerate() {
        csv.push_str(&format!("{},{}\n", signal.time_at(i), v));
    }
    write_output(&dir.join("signal.csv"), &csv)?;
    write_output(&dir.join("spec.json"), &spec.to_json())?;
    write_output(
        &dir.join("crest_report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    participant: SyntheticParticipant,
    perturbation: PerturbationSource,
    /// Separate z-axis perturbation; the y-axis one is reused when absent.
    #[serde(default)]
    perturbation_z: Option<PerturbationSource>,
    #[serde(default)]
    reference: ReferenceKind,
    #[serde(default)]
    reference_seed: u64,
    duration_s: f64,
    sample_rate_hz: f64,
    #[serde(default)]
    allow_reference_overlap: bool,
}

fn cmd_simulate(ctx: &Context) -> CliResult<()> {
    let path = ctx.require_config("simulate")?;
    let mut cfg: SimulateConfig = parse_config(path)?;
    check_positive("sample_rate_hz", cfg.sample_rate_hz)?;
    check_positive("duration_s", cfg.duration_s)?;
    cfg.participant
        .validate()
        .map_err(|e| config_error("participant", e.to_string()))?;
    if let Some(seed) = ctx.seed {
        cfg.participant.rng_seed = seed;
    }
    let base = ctx.config_dir();
    let spec_y = cfg.perturbation.resolve(&base)?;
    let spec_z = match &cfg.perturbation_z {
        Some(p) => p.resolve(&base)?,
        None => spec_y.clone(),
    };
    let reference = make_reference(
        &cfg.reference,
        cfg.duration_s,
        cfg.sample_rate_hz,
        cfg.reference_seed,
    )?;
    let trial = run_trial_with(
        &cfg.participant,
        &reference,
        (&spec_y, &spec_z),
        cfg.sample_rate_hz,
        cfg.duration_s,
        &TrialOptions {
            allow_reference_overlap: cfg.allow_reference_overlap,
        },
    )?;

    let dir = ctx.out_dir(None)?;
    let trial_path = dir.join("trial.csv");
    trial
        .write_csv(create_output(&trial_path)?)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", trial_path.display())))?;
    write_output(&dir.join("spec.json"), &spec_y.to_json())?;
    if cfg.perturbation_z.is_some() {
        write_output(&dir.join("spec_z.json"), &spec_z.to_json())?;
    }
    let truth = AxisPair::new(cfg.participant.bdft_y, cfg.participant.bdft_z);
    write_output(
        &dir.join("truth.json"),
        &serde_json::to_string_pretty(&truth).expect("params serialize"),
    )?;
    Ok(())
}

fn read_spec(path: &Path) -> CliResult<MultisineSpec> {
    MultisineSpec::from_json(&read_input(path)?).map_err(|e| Failure::from(e).with_path(path))
}

fn cmd_identify(
    ctx: &Context,
    trial_path: &Path,
    spec_path: &Path,
    sample_rate: Option<f64>,
) -> CliResult<()> {
    let spec = read_spec(spec_path)?;
    let trial = read_trial(trial_path, sample_rate)?;
    let dir = ctx.out_dir(None)?;
    for (axis, record) in [("y", &trial.y), ("z", &trial.z)] {
        let frf = estimate_frf(&record.perturbation, &record.recorded, &spec)?;
        let csv_path = dir.join(format!("frf_{axis}.csv"));
        frf.write_csv(create_output(&csv_path)?)
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", csv_path.display())))?;
        write_output(&dir.join(format!("frf_{axis}.json")), &frf.to_json())?;
    }
    Ok(())
}

fn read_frf(path: &Path) -> CliResult<FrequencyResponse> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let frf = if is_json {
        FrequencyResponse::from_json(&read_input(path)?)
    } else {
        FrequencyResponse::read_csv(open_input(path)?)
    };
    frf.map_err(|e| Failure::from(e).with_path(path))
}

fn cmd_fit(
    ctx: &Context,
    frf_path: &Path,
    sample_rate: Option<f64>,
    init: Option<&Path>,
    output: Option<PathBuf>,
) -> CliResult<()> {
    let frf = read_frf(frf_path)?;
    let init = init.map(read_params).transpose()?;
    let realization = match sample_rate {
        Some(fs) => {
            check_positive("--sample-rate", fs)?;
            ModelRealization::Discrete {
                sample_rate: fs,
                discretization: Discretization::Bilinear,
            }
        }
        None => ModelRealization::Continuous,
    };
    let opts = FitOptions {
        realization,
        ..FitOptions::default()
    };
    let fit = fit_bdft_model_with(&frf, init, &opts)?;
    let path = match output {
        Some(p) => p,
        None => ctx.out_dir(None)?.join("fit.json"),
    };
    write_output(
        &path,
        &serde_json::to_string_pretty(&fit).expect("fit serializes"),
    )
}

fn cmd_cancel(
    ctx: &Context,
    trial_path: &Path,
    params_y: &Path,
    params_z: &Path,
    sample_rate: Option<f64>,
    output: Option<PathBuf>,
) -> CliResult<()> {
    let py = read_params(params_y)?;
    let pz = read_params(params_z)?;
    let trial = read_trial(trial_path, sample_rate)?;
    let (uy, uz) = bdft_core::cancel_batch(&trial, &py, &pz)?;
    let mut csv = String::from("t,ucan_y,ucan_z\n");
    for i in 0..uy.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            uy.time_at(i),
            uy.samples()[i],
            uz.samples()[i]
        ));
    }
    let path = match output {
        Some(p) => p,
        None => ctx.out_dir(None)?.join("cancelled.csv"),
    };
    write_output(&path, &csv)
}

fn parse_stream_line(line: &str, line_no: usize) -> CliResult<[f64; 5]> {
    const COLUMNS: [&str; 5] = ["t", "fd_y", "fd_z", "u_y", "u_z"];
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != COLUMNS.len() {
        return Err(Failure::validation(format!(
            "line {line_no}: expected {} fields, got {}",
            COLUMNS.len(),
            fields.len()
        )));
    }
    let mut out = [0.0; 5];
    for (i, (field, name)) in fields.iter().zip(COLUMNS).enumerate() {
        out[i] = field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Failure::validation(format!(
                    "line {line_no}, column `{name}`: not a finite number: {field:?}"
                ))
            })?;
    }
    Ok(out)
}

fn cmd_stream_cancel(params_y: &Path, params_z: &Path, sample_rate: f64) -> CliResult<()> {
    let params = AxisPair::new(read_params(params_y)?, read_params(params_z)?);
    let mut canceller = DualAxisCanceller::new(params, sample_rate)?;
    let mut input = io::BufReader::new(io::stdin());
    let mut out = BufWriter::new(io::stdout().lock());
    let io_err = |e: io::Error| match e.kind() {
        io::ErrorKind::BrokenPipe => Failure::closed(),
        _ => Failure::runtime(format!("stream: {e}")),
    };
    writeln!(out, "t,ucan_y,ucan_z").map_err(io_err)?;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if input.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        line_no += 1;
        let text = line.trim();
        if text.is_empty() || (line_no == 1 && text.starts_with('t')) {
            continue;
        }
        let [t, fd_y, fd_z, u_y, u_z] = parse_stream_line(text, line_no)?;
        let (cy, cz) = canceller.push((fd_y, fd_z), (u_y, u_z));
        writeln!(out, "{t},{cy},{cz}").map_err(io_err)?;
        if input.buffer().is_empty() {
            out.flush().map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

fn cmd_experiment(ctx: &Context, print_config: bool) -> CliResult<()> {
    let mut cfg = match &ctx.config {
        Some(path) => ExperimentConfig::from_json(&read_input(path)?)
            .map_err(|e| Failure::from(e).with_path(path))?,
        None => ExperimentConfig::default_study(),
    };
    if let Some(seed) = ctx.seed {
        cfg.population.seed = seed;
    }
    if print_config {
        println!(
            "{}",
            serde_json::to_string_pretty(&cfg).expect("config serializes")
        );
        return Ok(());
    }
    let result = run_experiment(&cfg, &ctx.config_dir())?;
    let dir = ctx.out_dir(cfg.output_dir.as_deref())?;
    write_output(&dir.join("result.json"), &result.to_json())?;
    write_output(&dir.join("table.csv"), &result.table_csv())?;
    write_output(
        &dir.join("failures.json"),
        &serde_json::to_string_pretty(&result.failures).expect("failures serialize"),
    )?;
    for axis in ["y", "z"] {
        write_output(
            &dir.join(format!("bode_{axis}.svg")),
            &bode_plot(&result, &cfg, axis)?,
        )?;
    }
    let s = &result.summary;
    println!(
        "participants {} failed {} | model VAF individual y {:.2} z {:.2} | average y {:.2} z {:.2}",
        s.participants,
        s.failed,
        s.mean_model_vaf_individual.y,
        s.mean_model_vaf_individual.z,
        s.mean_model_vaf_average.y,
        s.mean_model_vaf_average.z
    );
    if !result.failures.is_empty() {
        return Err(Failure::runtime(format!(
            "{} of {} participants failed; see {}",
            result.failures.len(),
            cfg.population.size,
            dir.join("failures.json").display()
        )));
    }
    Ok(())
}

fn model_response(params: &BdftParams, omegas: &[f64], cfg: &ExperimentConfig) -> CliResult<Vec<Complex64>> {
    let frf = match cfg.fit_target {
        FitTarget::Discrete => evaluate_frf_discrete(
            params,
            omegas,
            cfg.sample_rate_hz,
            Discretization::Bilinear,
        )?,
        FitTarget::Continuous => evaluate_frf(params, omegas)?,
    };
    Ok(frf.values())
}

fn bode_plot(result: &ExperimentResult, cfg: &ExperimentConfig, axis: &str) -> CliResult<String> {
    let pick = |p: &AxisPair<FrequencyResponse>| if axis == "y" { p.y.clone() } else { p.z.clone() };
    let omegas = result.perturbation.frequencies_rad_s();
    let lo = omegas.first().copied().unwrap_or(1.0) * 0.5;
    let nyquist = std::f64::consts::PI * cfg.sample_rate_hz;
    let hi = (omegas.last().copied().unwrap_or(10.0) * 2.0).min(0.99 * nyquist);
    let grid = svg::log_grid(lo, hi, 200);

    let mut curves = Vec::new();
    let mut markers = Vec::new();
    for r in &result.records {
        let fit = if axis == "y" { &r.fit.y } else { &r.fit.z };
        curves.push(svg::Curve {
            values: model_response(&fit.params, &grid, cfg)?,
            omegas: grid.clone(),
            stroke: "#9ab",
            width: 0.8,
        });
        let frf = pick(&r.frf);
        markers.push(svg::Markers {
            omegas: frf.omegas(),
            values: frf.values(),
            fill: "#36c",
        });
    }
    if let Some(avg) = &result.average_params {
        let p = if axis == "y" { &avg.y } else { &avg.z };
        curves.push(svg::Curve {
            values: model_response(p, &grid, cfg)?,
            omegas: grid.clone(),
            stroke: "#c33",
            width: 2.5,
        });
    }
    Ok(svg::bode(
        &format!("BDFT {axis}-axis: measured FRF, individual fits (grey), average model (red)"),
        &curves,
        &markers,
    ))
}
