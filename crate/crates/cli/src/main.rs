mod failure;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use distline::abundance::{estimate_abundance, EstimateOptions};
use distline::fit::{fit_working_model, FitOptions, FitResult};
use distline::mc::{design_check, run_replicates_on, BandCheck, PopulationSpec, ScenarioConfig};
use distline::rng::stream;
use distline::survey::{generate_population, run_survey_tagged, sidecar_path};
use distline::{DetectionModel, ModelSpec, SamplingMode, StudyDesign, SurveyData, WorkingModel};
use serde::{Deserialize, Serialize};

use failure::{Failure, ASSERTION};
use manifest::{ensure_dir, load_config, now, write_json, RunManifest};

const SEED_ENV: &str = "DISTLINE_SEED";

#[derive(Parser)]
#[command(name = "distline", version, about = "Line-transect distance sampling: simulate, fit, estimate, Monte Carlo studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a population and a survey; writes survey CSV and sidecar
    Simulate(SimulateArgs),
    /// Fit a working model to survey data
    Fit(FitArgs),
    /// Fit and estimate abundance with standard errors
    Estimate(EstimateArgs),
    /// Run a replicated Monte Carlo scenario
    Mc(McArgs),
    /// Check coverage constancy and distance uniformity of a design
    CheckDesign(CheckDesignArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (JSON) or a simulate manifest
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Seed; overrides the config, which overrides DISTLINE_SEED
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Survey CSV (transect_index,distance[,stratum_tag])
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON; defaults to the CSV path with a .json extension
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Working model spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Study design (JSON); defaults to the sidecar's half-width, transect count and sampling mode
    #[arg(long)]
    design: Option<PathBuf>,
    /// Permit minus-sampling data, estimated with interior coverage 2w
    #[arg(long)]
    allow_minus_sampling: bool,
}

#[derive(Args)]
struct McArgs {
    /// Scenario (JSON) or an mc manifest
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0: all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replicate count
    #[arg(long)]
    replicates: Option<usize>,
    /// Exit 5 unless every acceptance band in the scenario holds
    #[arg(long)]
    assert: bool,
    /// Exit 5 unless the relative-bias band holds
    #[arg(long)]
    assert_bias: bool,
}

#[derive(Args)]
struct CheckDesignArgs {
    /// Study design (JSON) or a check-design manifest
    #[arg(long)]
    design: PathBuf,
    /// Number of grid abscissae spanning [0, 1]
    #[arg(long, default_value_t = 20)]
    grid: usize,
    /// Monte Carlo draws per grid point and for the KS sample
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    /// Seed for the grid and KS streams
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report and manifest; report goes to stdout otherwise
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 5 if either check fails
    #[arg(long)]
    assert: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateConfig {
    population: PopulationSpec,
    detection: DetectionModel,
    design: StudyDesign,
    #[serde(default)]
    seed: Option<u64>,
    /// Add a stratum_tag column.
    #[serde(default)]
    tagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DesignCheckConfig {
    design: StudyDesign,
    grid: usize,
    draws: usize,
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
struct EstimateConfig<'a> {
    data: &'a Path,
    sidecar: &'a Path,
    spec: &'a ModelSpec,
    design: Option<&'a StudyDesign>,
    allow_minus_sampling: bool,
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            .map_err(Failure::config),
        Err(_) => Ok(0),
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let started = now();
    let mut config: SimulateConfig = load_config(&args.config, "simulate")?;
    let seed = resolve_seed(args.seed, config.seed)?;
    config.seed = Some(seed);
    config.detection.check_truncation(config.design.half_width())?;

    let mut rng = stream(seed, 0);
    let population = generate_population(
        config.population.n,
        &config.detection.weights(),
        &config.population.placement,
        &mut rng,
    )?;
    let tagged = run_survey_tagged(&population, &config.design, &config.detection, &mut rng)?;

    ensure_dir(&args.out)?;
    let csv = args.out.join("survey.csv");
    let sidecar = sidecar_path(&csv);
    if config.tagged {
        tagged.write_files(&csv, &sidecar)?;
    } else {
        tagged.survey().write_files(&csv, &sidecar)?;
    }
    let mut m = RunManifest::new("simulate", &config, started)?;
    m.seed = Some(seed);
    m.outputs = vec![csv.clone(), sidecar];
    m.write(&args.out)?;
    println!(
        "{} detections on {} transects -> {}",
        tagged.survey().total_detections(),
        tagged.survey().num_transects(),
        csv.display()
    );
    Ok(())
}

fn load_survey(args: &DataArgs) -> Result<(SurveyData, PathBuf, ModelSpec), Failure> {
    let sidecar = args.sidecar.clone().unwrap_or_else(|| sidecar_path(&args.data));
    let data = SurveyData::read_files(&args.data, &sidecar).map_err(|e| match e {
        distline::Error::Io(io) => Failure::data(anyhow::Error::new(io).context(format!(
            "reading {} / {}",
            args.data.display(),
            sidecar.display()
        ))),
        other => other.into(),
    })?;
    let spec: ModelSpec = load_config(&args.spec, "fit")?;
    Ok((data, sidecar, spec))
}

fn fit_data(data: &SurveyData, spec: &ModelSpec) -> Result<FitResult, Failure> {
    let model = WorkingModel::new(spec.clone(), data.half_width())?;
    let fit = fit_working_model(&model, data, &FitOptions::default())?;
    if !fit.converged {
        return Err(distline::Error::NonConvergence.into());
    }
    Ok(fit)
}

fn fit(args: &FitArgs) -> Result<(), Failure> {
    let started = now();
    let (data, sidecar, spec) = load_survey(&args.data)?;
    let result = fit_data(&data, &spec)?;
    ensure_dir(&args.data.out)?;
    let path = args.data.out.join("fit.json");
    write_json(&path, &result)?;
    let config = EstimateConfig {
        data: &args.data.data,
        sidecar: &sidecar,
        spec: &spec,
        design: None,
        allow_minus_sampling: false,
    };
    let mut m = RunManifest::new("fit", &config, started)?;
    m.outputs = vec![path.clone()];
    m.write(&args.data.out)?;
    println!("loglik {:.6} at θ̂ {:?} -> {}", result.loglik, result.theta_hat.0, path.display());
    Ok(())
}

fn write_influence_csv(path: &Path, phi: &[f64]) -> Result<(), Failure> {
    let mut text = String::from("transect_index,phi\n");
    for (j, p) in phi.iter().enumerate() {
        text.push_str(&format!("{j},{p:.16e}\n"));
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let started = now();
    let (data, sidecar, spec) = load_survey(&args.data)?;
    let design = match &args.design {
        Some(p) => load_config::<StudyDesign>(p, "estimate")?,
        None => StudyDesign::new(
            data.half_width(),
            data.num_transects(),
            data.sampling_mode().unwrap_or(SamplingMode::PlusSampling),
        )?,
    };
    let options = EstimateOptions {
        allow_minus_sampling: args.allow_minus_sampling,
    };
    if design.sampling_mode() == SamplingMode::MinusSampling && !options.allow_minus_sampling {
        return Err(distline::Error::MinusSamplingOverride.into());
    }
    if data.total_detections() == 0 {
        return Err(distline::Error::NoDetections.into());
    }
    let fit = fit_data(&data, &spec)?;
    let est = estimate_abundance(&data, &design, &fit, &options)?;

    let out = &args.data.out;
    ensure_dir(out)?;
    let est_path = out.join("estimate.json");
    let fit_path = out.join("fit.json");
    let phi_path = out.join("influence.csv");
    write_json(&est_path, &est)?;
    write_json(&fit_path, &fit)?;
    write_influence_csv(&phi_path, &est.influence_values)?;
    let config = EstimateConfig {
        data: &args.data.data,
        sidecar: &sidecar,
        spec: &spec,
        design: Some(&design),
        allow_minus_sampling: args.allow_minus_sampling,
    };
    let mut m = RunManifest::new("estimate", &config, started)?;
    m.outputs = vec![est_path.clone(), fit_path, phi_path];
    m.write(out)?;
    println!(
        "psi_hat {:.4} (sandwich SE {:.4}, naive SE {:.4}, 95% CI [{:.4}, {:.4}]) -> {}",
        est.psi_hat,
        est.se_sandwich,
        est.se_naive,
        est.ci_95.0,
        est.ci_95.1,
        est_path.display()
    );
    Ok(())
}

fn report_bands(checks: &[BandCheck]) -> bool {
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {:.6} in [{:.6}, {:.6}]", c.name, c.value, c.lower, c.upper);
    }
    checks.iter().all(|c| c.pass)
}

fn mc(args: &McArgs) -> Result<bool, Failure> {
    let started = now();
    let mut config: ScenarioConfig = load_config(&args.scenario, "mc")?;
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    config.validate()?;
    let summary = run_replicates_on(&config, args.threads)?;

    ensure_dir(&args.out)?;
    let summary_path = args.out.join("summary.json");
    let csv_path = args.out.join("replicates.csv");
    write_json(&summary_path, &summary)?;
    summary.write_replicates_csv(&csv_path)?;
    let mut outputs = vec![summary_path, csv_path];

    println!(
        "{}: {} of {} replicates; mean psi_hat {:.4} (true {:.1}), relative bias {:+.5} ± {:.5} (MC SE)",
        summary.name,
        summary.successes,
        summary.replicates,
        summary.mean_psi,
        summary.true_n,
        summary.relative_bias,
        summary.relative_bias_mc_se
    );
    println!(
        "MC SD {:.4}; mean SE sandwich {:.4} (ratio {:.4}), naive {:.4} (ratio {:.4}); CI coverage {:.4}",
        summary.mc_sd,
        summary.mean_se_sandwich,
        summary.sandwich_ratio,
        summary.mean_se_naive,
        summary.naive_ratio,
        summary.ci_coverage
    );

    let mut ok = true;
    if args.assert || args.assert_bias {
        let mut checks = summary.check(&config);
        if !args.assert {
            checks.retain(|c| c.name == "relative_bias");
            if checks.is_empty() {
                return Err(Failure::config(anyhow::anyhow!(
                    "--assert-bias: no expected relative bias is known for this scenario"
                )));
            }
        }
        ok = report_bands(&checks);
        let checks_path = args.out.join("checks.json");
        write_json(&checks_path, &checks)?;
        outputs.push(checks_path);
    }
    let mut m = RunManifest::new("mc", &config, started)?;
    m.seed = Some(config.master_seed);
    m.threads = Some(args.threads);
    m.outputs = outputs;
    m.write(&args.out)?;
    Ok(ok)
}

fn check_design(args: &CheckDesignArgs) -> Result<bool, Failure> {
    let started = now();
    let text = std::fs::read_to_string(&args.design)
        .with_context(|| format!("reading {}", args.design.display()))
        .map_err(Failure::config)?;
    let config = match serde_json::from_str::<StudyDesign>(&text) {
        Ok(design) => DesignCheckConfig {
            design,
            grid: args.grid,
            draws: args.draws,
            seed: resolve_seed(args.seed, None)?,
        },
        Err(_) => load_config::<DesignCheckConfig>(&args.design, "check-design")?,
    };
    let report = design_check(&config.design, config.grid, config.draws, config.seed)?;
    println!(
        "coverage: range {:.3e} (tolerance {:.3e}), analytic constant {} -> {}",
        report.coverage_range,
        report.range_tolerance,
        report.analytic_constant,
        if report.coverage_pass { "PASS" } else { "FAIL" }
    );
    println!(
        "distances: KS D {:.5}, p {:.4} -> {}",
        report.ks.statistic,
        report.ks.p_value,
        if report.ks_pass { "PASS" } else { "FAIL" }
    );
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join("design_check.json");
            write_json(&path, &report)?;
            let mut m = RunManifest::new("check-design", &config, started)?;
            m.seed = Some(config.seed);
            m.outputs = vec![path];
            m.write(dir)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::data)?),
    }
    Ok(report.pass || !args.assert)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Fit(a) => fit(a).map(|_| true),
        Command::Estimate(a) => estimate(a).map(|_| true),
        Command::Mc(a) => mc(a),
        Command::CheckDesign(a) => check_design(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("acceptance band failed");
            ExitCode::from(ASSERTION)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
