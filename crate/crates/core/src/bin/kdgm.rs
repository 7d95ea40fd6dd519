use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use kdgm::bench::{Bench, BenchOptions, SUITES};
use kdgm::config::RunConfig;
use kdgm::density::DensityEvaluator;
use kdgm::oracles::{self, HestonDynamics, OptionKind};
use kdgm::pde::ModelKind;
use kdgm::quad::{self, DensityEngine, Payoff, QuadSpec, Truncation};
use kdgm::trainer::{self, LrSchedule, TrainedModel};
use kdgm::{persistence, Error, Result};

/// Train Kolmogorov-equation networks, extract densities and price options.
#[derive(Parser)]
#[command(name = "kdgm", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network from scratch.
    Train(TrainArgs),
    /// Continue from a saved model on a new domain.
    Transfer {
        /// Model file to start from.
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write densities on a grid as CSV.
    Density(DensityArgs),
    /// Price option cases and write CSV.
    Price(PriceArgs),
    /// Run a benchmark suite against the oracles.
    Bench {
        suite: String,
        /// Include the slow trained-network Heston price.
        #[arg(long)]
        long: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// gbm, heston or td_heston.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Seeds both the initialisation and the sampler.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    points_per_epoch: Option<usize>,
    #[arg(long)]
    minibatches: Option<usize>,
    /// Constant learning rate in place of the schedule.
    #[arg(long)]
    lr: Option<f64>,
    /// Domain override `name=lo,hi`; repeatable.
    #[arg(long = "domain", value_name = "NAME=LO,HI")]
    domains: Vec<String>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss log CSV to write.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    maturity: f64,
    /// Log-spot.
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long)]
    sigma: Option<f64>,
    /// Initial variance.
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    y_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    y_hi: f64,
    #[arg(long, default_value_t = 101)]
    y_points: usize,
    /// Single terminal variance instead of a grid.
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    z_lo: Option<f64>,
    #[arg(long)]
    z_hi: Option<f64>,
    #[arg(long, default_value_t = 21)]
    z_points: usize,
    /// Add the closed-form GBM density as a column.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    delta: Option<f64>,
    /// Report negative densities as computed.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    /// Quadrature over the closed-form GBM density.
    Gaussian,
    /// Black-Scholes formula.
    Bs,
    /// Monte Carlo payoff average.
    Mc,
}

#[derive(Args)]
struct PriceArgs {
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    model_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<Oracle>,
    /// Case as `key=value,...` with keys kind, spot, strike, maturity,
    /// sigma, v0, kappa, theta, xi, rho; repeatable.
    #[arg(long = "case")]
    cases: Vec<String>,
    /// CSV of cases with a header row using the same keys.
    #[arg(long)]
    cases_file: Option<PathBuf>,
    #[arg(long)]
    mesh_points: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
struct PriceCase {
    #[serde(default = "default_kind")]
    kind: OptionKind,
    #[serde(default = "default_spot")]
    spot: f64,
    strike: f64,
    maturity: f64,
    sigma: Option<f64>,
    v0: Option<f64>,
    kappa: Option<f64>,
    theta: Option<f64>,
    xi: Option<f64>,
    rho: Option<f64>,
}

fn default_kind() -> OptionKind {
    OptionKind::Call
}

fn default_spot() -> f64 {
    1.0
}

fn parse_case(text: &str) -> Result<PriceCase> {
    let mut toml = String::new();
    for pair in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("case entry `{pair}` is not key=value")))?;
        let v = v.trim();
        if k.trim() == "kind" {
            let _ = writeln!(toml, "kind = \"{v}\"");
        } else {
            let num: f64 = v.parse().map_err(|_| {
                Error::Config(format!("case value `{v}` for `{k}` is not a number"))
            })?;
            let _ = writeln!(toml, "{} = {num:?}", k.trim());
        }
    }
    toml::from_str(&toml).map_err(|e| Error::Config(format!("case `{text}`: {e}")))
}

fn read_cases(path: &Path) -> Result<Vec<PriceCase>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_train_args(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(m) = &a.model {
        cfg.model = Some(m.clone());
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
        t.batch.seed = v;
    }
    if let Some(v) = a.width {
        t.width = v;
    }
    if let Some(v) = a.layers {
        t.layers = v;
    }
    if let Some(v) = a.points_per_epoch {
        t.batch.points_per_epoch = v;
    }
    if let Some(v) = a.minibatches {
        t.batch.minibatches_per_epoch = v;
    }
    if let Some(v) = a.lr {
        t.lr_schedule = LrSchedule::constant(v);
    }
    for d in &a.domains {
        let bad = || Error::Config(format!("domain override `{d}` is not NAME=LO,HI"));
        let (name, range) = d.split_once('=').ok_or_else(bad)?;
        let (lo, hi) = range.split_once(',').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        cfg.domain.insert(name.trim().to_string(), [lo, hi]);
    }
    if let Some(p) = &a.out {
        cfg.output.model = p.clone();
    }
    if let Some(p) = &a.loss_log {
        cfg.output.loss_log = p.clone();
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn finish_training(
    cfg: &RunConfig,
    model: &TrainedModel,
    report: &trainer::TrainReport,
) -> Result<()> {
    persistence::save(model, &cfg.output.model)?;
    write_output(
        Some(&cfg.output.loss_log),
        &format!("{}{}", cfg.echo(), report.to_csv()),
    )?;
    match report.best() {
        Some(b) => eprintln!(
            "{} steps in {:.1}s; best epoch {} loss {:.4e}; wrote {}",
            report.steps,
            report.seconds,
            b.epoch,
            b.losses.total,
            cfg.output.model.display()
        ),
        None => eprintln!("no epochs run; wrote {}", cfg.output.model.display()),
    }
    Ok(())
}

fn cmd_train(config: Option<&Path>, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_train_args(&mut cfg, a)?;
    cfg.validate()?;
    eprint!("{}", cfg.echo());
    let model = cfg.resolve_model()?;
    let (tm, report) = trainer::train(&model, &cfg.train)?;
    finish_training(&cfg, &tm, &report)
}

fn cmd_transfer(config: Option<&Path>, base: &Path, a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_train_args(&mut cfg, a)?;
    let base = persistence::load(base)?;
    let model = match cfg.model {
        Some(_) => cfg.resolve_model()?,
        None => {
            cfg.model = Some(base.model.name().to_string());
            cfg.apply_domain(&base.model)?
        }
    };
    cfg.train.validate()?;
    cfg.mc.validate()?;
    eprint!("{}", cfg.echo());
    let (tm, report) = trainer::transfer(&model, &base, &cfg.train)?;
    finish_training(&cfg, &tm, &report)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn required(v: Option<f64>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::MissingField(name.into()))
}

fn cmd_density(config: Option<&Path>, a: &DensityArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(d) = a.delta {
        cfg.density.delta = d;
    }
    if a.no_clamp {
        cfg.density.clamp_negative = false;
    }
    let tm = persistence::load(&a.model_file)?;
    cfg.model = Some(tm.model.name().to_string());
    let model = &tm.model;
    let t = model.terminal_time() - a.maturity;
    let eval = DensityEvaluator::new(&tm.params, model, cfg.density);
    let ys = linspace(a.y_lo, a.y_hi, a.y_points);
    let mut out = cfg.echo();
    let _ = writeln!(
        out,
        "# model_file = {:?}, maturity = {}, x = {}",
        a.model_file, a.maturity, a.x
    );

    if model.is_two_factor() {
        if a.exact {
            return Err(Error::Config(
                "--exact is only available for the gbm model".into(),
            ));
        }
        let v = required(a.v, "v")?;
        let params = match &model.kind {
            ModelKind::Heston => vec![
                required(a.kappa, "kappa")?,
                required(a.theta, "theta")?,
                required(a.xi, "xi")?,
                required(a.rho, "rho")?,
            ],
            _ => vec![],
        };
        let zs = match a.z {
            Some(z) => vec![z],
            None => {
                let zi = model.domain.interval(4);
                let d = cfg.density.delta;
                linspace(
                    a.z_lo.unwrap_or(zi.lo + d),
                    a.z_hi.unwrap_or(zi.hi - d),
                    a.z_points,
                )
            }
        };
        let mut points = Vec::with_capacity(ys.len() * zs.len());
        for &y in &ys {
            for &z in &zs {
                let mut p = vec![t, a.x, y, v, z];
                p.extend_from_slice(&params);
                points.push(p);
            }
        }
        let dens = eval.density_batch(&points)?;
        out.push_str("y,z,density\n");
        for (p, d) in points.iter().zip(&dens) {
            let _ = writeln!(out, "{},{},{:e}", p[2], p[4], d);
        }
    } else {
        let sigma = required(a.sigma, "sigma")?;
        let points: Vec<Vec<f64>> = ys.iter().map(|&y| vec![t, a.x, y, sigma]).collect();
        let dens = eval.density_batch(&points)?;
        out.push_str(if a.exact {
            "y,density,exact\n"
        } else {
            "y,density\n"
        });
        for (&y, d) in ys.iter().zip(&dens) {
            if a.exact {
                let _ = writeln!(
                    out,
                    "{y},{d:e},{:e}",
                    oracles::gaussian_density(a.x, a.maturity, y, sigma)
                );
            } else {
                let _ = writeln!(out, "{y},{d:e}");
            }
        }
    }
    let _ = writeln!(out, "# clamped = {}", eval.clamp_count());
    write_output(a.out.as_deref(), &out)
}

fn cmd_price(config: Option<&Path>, a: &PriceArgs) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(v) = a.mesh_points {
        cfg.quad.mesh_points = v;
    }
    if let Some(v) = a.q {
        cfg.quad.q = v;
    }
    if let Some(v) = a.paths {
        cfg.mc.paths = v;
    }
    if let Some(v) = a.delta {
        cfg.density.delta = v;
    }
    cfg.mc.validate()?;
    let mut cases = Vec::new();
    if let Some(p) = &a.cases_file {
        cases.extend(read_cases(p)?);
    }
    for c in &a.cases {
        cases.push(parse_case(c)?);
    }
    let network = a.model_file.as_deref().map(persistence::load).transpose()?;
    if let Some(tm) = &network {
        cfg.model = Some(tm.model.name().to_string());
    }

    let mut out = cfg.echo();
    out.push_str("case,engine,kind,spot,strike,maturity,price,seconds\n");
    for (i, case) in cases.iter().enumerate() {
        let mut spec = QuadSpec::new(
            Payoff::vanilla(case.kind, case.strike),
            case.spot,
            case.maturity,
        );
        spec.mesh_points = cfg.quad.mesh_points;
        spec.truncation = Truncation::StdDevs { q: cfg.quad.q };
        let start = Instant::now();
        let (engine, price) = match (&network, a.oracle) {
            (Some(tm), _) => ("network", price_network(tm, &spec, case, &cfg)?),
            (None, Some(Oracle::Bs)) => {
                let sigma = required(case.sigma, "sigma")?;
                (
                    "bs",
                    oracles::bs_price(case.spot, case.strike, sigma, case.maturity, case.kind),
                )
            }
            (None, Some(Oracle::Gaussian)) => (
                "gaussian",
                quad::price_1d(
                    &DensityEngine::Gaussian,
                    &spec,
                    required(case.sigma, "sigma")?,
                )?,
            ),
            (None, Some(Oracle::Mc)) => ("mc", price_mc(case, &cfg)?),
            (None, None) => unreachable!("clap requires an engine"),
        };
        let seconds = start.elapsed().as_secs_f64();
        let kind = match case.kind {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        };
        let _ = writeln!(
            out,
            "{},{engine},{kind},{},{},{},{price:.8},{seconds:.6}",
            i + 1,
            case.spot,
            case.strike,
            case.maturity
        );
    }
    write_output(a.out.as_deref(), &out)
}

fn price_network(
    tm: &TrainedModel,
    spec: &QuadSpec,
    case: &PriceCase,
    cfg: &RunConfig,
) -> Result<f64> {
    let engine = DensityEngine::Network {
        field: &tm.params,
        model: &tm.model,
        config: cfg.density,
    };
    match &tm.model.kind {
        ModelKind::Gbm => quad::price_1d(&engine, spec, required(case.sigma, "sigma")?),
        ModelKind::Heston => {
            let v0 = required(case.v0, "v0")?;
            let theta = required(case.theta, "theta")?;
            let params = quad::heston_params(
                &tm.model,
                required(case.kappa, "kappa")?,
                theta,
                required(case.xi, "xi")?,
                required(case.rho, "rho")?,
            );
            quad::price_2d(&engine, spec, v0, &params, v0.max(theta).sqrt())
        }
        ModelKind::TdHeston { schedule, .. } => {
            let v0 = required(case.v0, "v0")?;
            let theta = schedule.theta.iter().copied().fold(v0, f64::max);
            quad::price_2d(&engine, spec, v0, &[], theta.sqrt())
        }
    }
}

fn price_mc(case: &PriceCase, cfg: &RunConfig) -> Result<f64> {
    let x0 = case.spot.ln();
    let log_prices = if let Some(sigma) = case.sigma {
        oracles::gbm_mc(x0, sigma, case.maturity, &cfg.mc)?
    } else {
        let v0 = required(case.v0, "v0")?;
        let dynamics = match case.theta {
            Some(theta) => HestonDynamics::Constant {
                kappa: required(case.kappa, "kappa")?,
                theta,
                xi: required(case.xi, "xi")?,
                rho: required(case.rho, "rho")?,
            },
            None => HestonDynamics::Piecewise {
                kappa: case.kappa.unwrap_or(cfg.td_heston.kappa),
                schedule: cfg.td_heston.schedule.clone(),
            },
        };
        oracles::heston_mc(x0, v0, &dynamics, case.maturity, &cfg.mc)?.x
    };
    let payoff = Payoff::vanilla(case.kind, case.strike);
    Ok(oracles::mc_price(&log_prices, |st| payoff.eval(st))?.0)
}

fn cmd_bench(suite: &str, long: bool) -> Result<bool> {
    if !SUITES.contains(&suite) {
        return Err(Error::Config(format!(
            "unknown bench suite `{suite}`; available: {}",
            SUITES.join(", ")
        )));
    }
    println!("# suite = {suite:?}\n# long = {long}");
    let mut bench = Bench::new(BenchOptions { long });
    let checks = bench.run(suite)?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::OutOfDomain { .. } => 3,
        Error::Config(_) | Error::MissingField(_) | Error::LayoutMismatch { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match &cli.cmd {
        Cmd::Train(a) => cmd_train(config, a),
        Cmd::Transfer { base, train } => cmd_transfer(config, base, train),
        Cmd::Density(a) => cmd_density(config, a),
        Cmd::Price(a) => cmd_price(config, a),
        Cmd::Bench { suite, long } => match cmd_bench(suite, *long) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
