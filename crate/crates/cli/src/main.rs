mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cityproj_core::detect::{detect_cities, rank_cities, track_panel, CityLineage, Contiguity};
use cityproj_core::engine::{fit_models, project_fitted, summarize, validate_holdout, ModelSet, NbFitMode};
use cityproj_core::landprice::{city_total_values, fit_landprice};
use cityproj_core::synth::gen_panel;
use cityproj_core::{io, Error, GridPanel, Result};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cityproj", version, about = "Gridded population projection with city tracking")]
struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, env = "CITYPROJ_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit every model on a panel and dump coefficients.
    Fit {
        #[command(flatten)]
        input: PanelInput,
        #[command(flatten)]
        detect: DetectArgs,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Project a panel over a scenario.
    Project {
        #[command(flatten)]
        input: PanelInput,
        /// Scenario CSV `year,total_pop[,urban_share]`.
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        detect: DetectArgs,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Detect and track cities.
    Detect {
        #[command(flatten)]
        input: PanelInput,
        /// Only this year, without tracking.
        #[arg(long)]
        year: Option<i32>,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Hold out the last epoch and score growth-direction agreement.
    Validate {
        #[command(flatten)]
        input: PanelInput,
        #[command(flatten)]
        detect: DetectArgs,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Generate a synthetic panel.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_cities: Option<usize>,
        #[arg(long)]
        n_epochs: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        growth_rate: Option<f64>,
    },
    /// Fit the land-price model and predict.
    Landprice {
        /// Land-price CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n_basis: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct PanelInput {
    /// Long-form panel CSV `row,col,year,pop`.
    #[arg(long)]
    input: PathBuf,
    /// Optional CSV `row,col` listing the valid cells.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    density_threshold: Option<f64>,
    #[arg(long)]
    min_pop: Option<f64>,
    #[arg(long)]
    contiguity: Option<Contiguity>,
}

#[derive(Args, Debug)]
struct EngineArgs {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    smoothing: bool,
    #[arg(long)]
    nb_fit_mode: Option<NbFitMode>,
    /// Keep negative forecasts instead of clamping them to zero.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    n_boot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    models: Option<ModelSet>,
}

impl DetectArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.density_threshold {
            c.detect.density_threshold = v;
        }
        if let Some(v) = self.min_pop {
            c.detect.min_pop = v;
        }
        if let Some(v) = self.contiguity {
            c.detect.contiguity = v;
        }
    }
}

impl EngineArgs {
    fn apply(&self, c: &mut RunConfig) {
        let e = &mut c.engine;
        if self.horizon.is_some() {
            e.horizon = self.horizon;
        }
        e.smoothing |= self.smoothing;
        if let Some(v) = self.nb_fit_mode {
            e.nb_fit_mode = v;
        }
        if self.no_clamp {
            e.clamp_negative = false;
        }
        if let Some(v) = self.n_boot {
            e.n_boot = v;
        }
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.models {
            e.models = v;
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        c.out_dir = d.clone();
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    match &cli.command {
        Command::Fit { detect, engine, .. } | Command::Project { detect, engine, .. } | Command::Validate { detect, engine, .. } => {
            detect.apply(&mut c);
            engine.apply(&mut c);
        }
        Command::Detect { detect, .. } => detect.apply(&mut c),
        Command::Synth { seed, n_cities, n_epochs, growth_rate } => {
            let s = &mut c.synth;
            s.seed = seed.unwrap_or(s.seed);
            s.n_cities = n_cities.unwrap_or(s.n_cities);
            s.n_epochs = n_epochs.unwrap_or(s.n_epochs);
            s.growth_rate = growth_rate.unwrap_or(s.growth_rate);
        }
        Command::Landprice { n_basis, .. } => {
            c.landprice.n_basis = n_basis.unwrap_or(c.landprice.n_basis);
        }
    }
    Ok(c)
}

/// Output files land under `dir` via a temporary file and a rename, so a
/// failed run never leaves a half-written file behind.
struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let io_err = |source| Error::Io { path: path.clone(), source };
        let tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            f(&mut w)?;
            w.flush().map_err(io_err)?;
        }
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn read_input(input: &PanelInput) -> Result<GridPanel> {
    io::read_panel(&input.input, input.mask.as_deref())
}

fn write_lineage(out: &Outputs, panel: &GridPanel, lineage: &CityLineage, thresholds: &[f64]) -> Result<()> {
    out.write("cities.csv", |w| io::write_city_table(lineage, w))?;
    out.write("membership.csv", |w| io::write_membership(lineage, w))?;
    out.write("absorptions.csv", |w| io::write_absorptions(lineage, w))?;
    let rows = summarize(panel, lineage, thresholds);
    out.write("summary.csv", |w| io::write_summary(&rows, thresholds, w))
}

fn run(cli: &Cli, config: &RunConfig) -> Result<()> {
    let out = Outputs::new(&config.out_dir)?;
    let thresholds = &config.engine.size_thresholds;
    match &cli.command {
        Command::Fit { input, .. } => {
            let engine = config.engine_config()?;
            let panel = read_input(input)?;
            let fitted = fit_models(&panel, &engine)?;
            out.write("coeff_path.csv", |w| io::write_coeff_path(&fitted.rank_size, w))?;
            out.write("fits.csv", |w| io::write_fit_dump(&fitted.dump(&panel), w))?;
            write_lineage(&out, &panel, &fitted.lineage, thresholds)?;
            match &fitted.coeff_path {
                Some(p) => println!("a1_A {} a1_B {}", p.a1_a, p.a1_b),
                None => println!("coefficient paths not estimable"),
            }
        }
        Command::Project { input, scenario, .. } => {
            let engine = config.engine_config()?;
            let panel = read_input(input)?;
            let name = scenario.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let scenario = io::read_scenario(scenario, &name)?;
            let fitted = fit_models(&panel, &engine)?;
            let proj = project_fitted(&panel, fitted, &scenario, &engine)?;
            out.write("projected_panel.csv", |w| io::write_panel_years(&proj.panel, proj.n_training, w))?;
            out.write("city_forecasts.csv", |w| io::write_city_forecasts(&proj.city_forecasts, w))?;
            out.write("strata.csv", |w| io::write_strata(&proj.strata, w))?;
            write_lineage(&out, &proj.panel, &proj.lineage, thresholds)?;
            if let (Some(first), Some(last)) = (proj.projected_years().first(), proj.projected_years().last()) {
                println!("projected {first}-{last} ({} epochs)", proj.projected_years().len());
            }
        }
        Command::Detect { input, year, .. } => {
            let panel = read_input(input)?;
            let lineage = match year {
                Some(y) => {
                    let e = panel
                        .epoch_of_year(*y)
                        .ok_or_else(|| Error::InvalidInput(format!("year {y} is not in {}", input.input.display())))?;
                    let single = GridPanel::new(
                        panel.n_rows(),
                        panel.n_cols(),
                        vec![*y],
                        vec![panel.snapshot(e).to_vec()],
                        panel.valid_mask().to_vec(),
                    )?
                    .with_cell_area(panel.cell_area())?;
                    let mut l = CityLineage::new();
                    l.advance(*y, rank_cities(detect_cities(&single, single.snapshot(0), &config.detect)?))?;
                    write_lineage(&out, &single, &l, thresholds)?;
                    l
                }
                None => {
                    let l = track_panel(&panel, &config.detect)?;
                    write_lineage(&out, &panel, &l, thresholds)?;
                    l
                }
            };
            for ep in lineage.epochs() {
                println!("{} {} cities", ep.year, ep.cities.len());
            }
        }
        Command::Validate { input, .. } => {
            let engine = config.engine_config()?;
            let panel = read_input(input)?;
            let report = validate_holdout(&panel, &engine)?;
            out.write("holdout.csv", |w| io::write_holdout(&report, w))?;
            for v in &report.variants {
                println!("{} {}: {:.1}% of {} cities", report.year, v.models, 100.0 * v.sign_agreement(), v.cities.len());
            }
        }
        Command::Synth { .. } => {
            let s = gen_panel(&config.synth)?;
            out.write("panel.csv", |w| io::write_panel(&s.panel, w))?;
            out.write("truth.csv", |w| io::write_synth_truth(&s.cities, w))?;
        }
        Command::Landprice { input, .. } => {
            let rows = io::read_landprice(input)?;
            let model = fit_landprice(&rows, &config.landprice)?;
            let (hat, flags) = model.predict(&rows);
            let clamped = flags.iter().filter(|f| f.clamped).count();
            if clamped > 0 {
                log::warn!("{clamped} rows fell outside a spline range and were clamped");
            }
            out.write("landprice_fit.csv", |w| io::write_landprice_fit(&model, w))?;
            out.write("landprice_pred.csv", |w| io::write_landprice(&rows, Some(&hat), w))?;
            out.write("city_values.csv", |w| io::write_city_values(&city_total_values(&rows, &hat), w))?;
            println!("c1 {} c2 {} adj_r2 {}", model.c1, model.c2, model.adj_r2);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let config = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.print_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    if config.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
