//! Subcommand implementations and output writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use tmsynth::geomlab::{self, Surface};
use tmsynth::machines::{self, TapeConfig, TransitionTable};
use tmsynth::rlct::{self, CellSpec, ChainStore};
use tmsynth::sampler::Chain;
use tmsynth::thermo::{self, PhaseCandidate};
use tmsynth::utm::{self, CodeParameter};
use tmsynth::SynthesisProblem;

use crate::config::ExperimentConfig;
use crate::{CliError, Common, VERSION};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in machine name or path to a machine file.
    #[arg(long)]
    pub machine: Option<String>,

    /// Input word; `_` or `□` stand for blank.
    #[arg(long)]
    pub input: String,

    /// Number of steps; defaults to the built-in machine's budget.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Code checkpoint to run through the smooth UTM instead.
    #[arg(long)]
    pub code: Option<PathBuf>,

    /// Print every classical configuration.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// `example1` or `example2`; overrides the config.
    #[arg(long)]
    pub example: Option<String>,

    /// Grid resolution per axis; overrides the config.
    #[arg(long)]
    pub resolution: Option<usize>,
}

fn load_machine(spec: &str) -> Result<TransitionTable, CliError> {
    if let Some(m) = machines::builtin(spec) {
        return Ok(m);
    }
    let text = fs::read_to_string(spec).map_err(|e| CliError::Config(format!("machine `{spec}`: {e}")))?;
    Ok(text.parse()?)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    if let Some(path) = &args.code {
        let code = CodeParameter::from_checkpoint(&fs::read_to_string(path)?)?;
        let t = args.steps.ok_or_else(|| CliError::Config("--steps is required with --code".into()))?;
        let x = code.layout().parse_word(&args.input)?;
        let d = utm::delta_step_t(&x, &code, t)?;
        for (q, p) in d.alphabet().symbols().iter().zip(d.weights()) {
            println!("{q}\t{p:?}");
        }
        return Ok(());
    }
    let spec = args.machine.as_deref().ok_or_else(|| CliError::Config("--machine or --code is required".into()))?;
    let m = load_machine(spec)?;
    let t = args
        .steps
        .or_else(|| machines::builtin_steps(spec))
        .ok_or_else(|| CliError::Config("--steps is required for machine files".into()))?;
    let x = m.parse_word(&args.input)?;
    let mut c = TapeConfig::for_input(&m, &x, t);
    if args.trace {
        println!("0\t{}\t{}", c.render(&m), m.states().symbol(c.state));
    }
    for step in 1..=t {
        c = machines::step(&m, &c)?;
        if args.trace {
            println!("{step}\t{}\t{}", c.render(&m), m.states().symbol(c.state));
        }
    }
    println!("tape\t{}", c.render(&m));
    println!("state\t{}", m.states().symbol(c.state));
    Ok(())
}

/// Config with command-line overrides applied, plus the resolved seed and
/// output directory.
struct Resolved {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

fn resolve(common: &Common, default_out: &str) -> Result<Resolved, CliError> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.or(config.seed).unwrap_or(0);
    let out = common.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from(default_out));
    config.seed = Some(seed);
    config.out = Some(out.clone());
    Ok(Resolved { config, seed, out })
}

/// `# `-prefixed provenance lines for CSV outputs.
fn csv_header(config: &ExperimentConfig) -> String {
    let mut out = format!("# version {VERSION}\n");
    for line in config.to_toml().lines() {
        let _ = writeln!(out, "{}", format!("# {line}").trim_end());
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn json_document(config: &ExperimentConfig, result: serde_json::Value) -> Result<String, CliError> {
    let doc = json!({ "version": VERSION, "config": config, "result": result });
    serde_json::to_string_pretty(&doc).map(|s| s + "\n").map_err(CliError::from)
}

/// Chains stored as text files; a file is reused only if its recorded
/// context matches the current run exactly.
struct FileStore {
    dir: PathBuf,
    context: String,
}

impl FileStore {
    fn path(&self, spec: &CellSpec) -> PathBuf {
        self.dir.join(format!("dataset{}_beta{}.chain", spec.dataset, spec.beta_index))
    }

    fn header(&self, spec: &CellSpec) -> String {
        let mut h = format!(
            "# cell dataset={} beta_index={} beta={:?} stream={}\n",
            spec.dataset, spec.beta_index, spec.beta, spec.stream
        );
        for line in self.context.lines() {
            let _ = writeln!(h, "# {line}");
        }
        h
    }
}

impl ChainStore for FileStore {
    fn load(&self, spec: &CellSpec) -> Option<Chain> {
        let text = fs::read_to_string(self.path(spec)).ok()?;
        let header = self.header(spec);
        let body = text.strip_prefix(&header)?;
        Chain::from_text(body).ok()
    }

    fn save(&self, spec: &CellSpec, chain: &Chain) -> tmsynth::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(spec);
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.header(spec) + &chain.to_text())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

pub fn rlct(common: &Common) -> Result<(), CliError> {
    let r = resolve(common, "runs/rlct")?;
    let section = r.config.rlct.clone().ok_or_else(|| CliError::Config("missing [rlct] section".into()))?;
    let hyper = section.hyper()?;
    let problem = SynthesisProblem::by_name(&section.problem, hyper.a, hyper.b, hyper.t)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let specs = rlct::plan(&hyper).map_err(|e| CliError::Config(e.to_string()))?;
    if common.dry_run {
        println!(
            "problem {} n={} lengths {}..={} t={} dim={}",
            problem.name(),
            hyper.n,
            hyper.a,
            hyper.b,
            hyper.t,
            problem.layout().dim()
        );
        for d in 0..hyper.datasets {
            println!("dataset {d} seed {}", rlct::dataset_seed(r.seed, d));
        }
        for s in &specs {
            println!("chain dataset={} beta_index={} beta={:.6} stream={}", s.dataset, s.beta_index, s.beta, s.stream);
        }
        println!("{} chains of {} + {} transitions", specs.len(), hyper.burn_in, hyper.samples);
        return Ok(());
    }
    let store =
        FileStore { dir: r.out.join("checkpoints"), context: format!("version {VERSION}\n{}", r.config.to_toml()) };
    let est = rlct::rlct_experiment_with_store(&problem, &hyper, r.seed, common.jobs, &store)?;

    let header = csv_header(&r.config);
    let mut energies = header.clone();
    energies.push_str(
        "dataset_id,beta,inv_beta,e_nln,stderr,dataset_seed,samples,divergent_fraction,mean_accept,step_size\n",
    );
    for (d, ds) in est.per_dataset.iter().enumerate() {
        for (i, p) in ds.points.iter().enumerate() {
            let _ = writeln!(
                energies,
                "{d},{:?},{:?},{:?},{:?},{},{},{:?},{:?},{:?}",
                p.beta,
                1.0 / p.beta,
                p.mean,
                p.stderr,
                ds.seed,
                p.samples,
                ds.divergent_fraction[i],
                ds.mean_accept[i],
                ds.step_size[i]
            );
        }
    }
    let mut fits = header.clone();
    fits.push_str("dataset_id,dataset_seed,lambda,intercept,r_squared\n");
    for (d, ds) in est.per_dataset.iter().enumerate() {
        let _ = writeln!(fits, "{d},{},{:?},{:?},{:?}", ds.seed, ds.fit.lambda, ds.fit.intercept, ds.fit.r_squared);
    }
    let mut summary = header;
    summary.push_str("problem,n,a,b,temperature,lambda,std,min_r_squared,datasets,samples\n");
    let _ = writeln!(
        summary,
        "{},{},{},{},{:?},{:?},{:?},{:?},{},{}",
        problem.name(),
        hyper.n,
        hyper.a,
        hyper.b,
        hyper.temperature,
        est.lambda,
        est.std,
        est.min_r_squared,
        hyper.datasets,
        hyper.samples
    );
    write(&r.out.join("energies.csv"), &energies)?;
    write(&r.out.join("fits.csv"), &fits)?;
    write(&r.out.join("summary.csv"), &summary)?;
    write(&r.out.join("rlct.json"), &json_document(&r.config, json!(est))?)?;
    println!(
        "lambda = {:.4} ± {:.4}  (min R² {:.4}, {} datasets)",
        est.lambda, est.std, est.min_r_squared, hyper.datasets
    );
    for f in &est.flags {
        eprintln!("warning: {f}");
    }
    Ok(())
}

fn parse_surface(name: &str) -> Result<Surface, CliError> {
    match name {
        "example1" => Ok(Surface::Example1),
        "example2" => Ok(Surface::Example2),
        other => Err(CliError::Config(format!("unknown example `{other}`; expected example1 or example2"))),
    }
}

pub fn geometry(common: &Common, args: &GeometryArgs) -> Result<(), CliError> {
    let mut r = resolve(common, "runs/geometry")?;
    let mut section = r
        .config
        .geometry
        .clone()
        .unwrap_or(crate::config::GeometrySection { example: Surface::Example2, resolution: 101 });
    if let Some(e) = &args.example {
        section.example = parse_surface(e)?;
    }
    if let Some(res) = args.resolution {
        section.resolution = res;
    }
    if section.resolution < 32 {
        return Err(CliError::Config(format!("resolution must be at least 32, got {}", section.resolution)));
    }
    r.config.geometry = Some(section.clone());
    if common.dry_run {
        println!("{} at resolution {} -> {}", section.example.name(), section.resolution, r.out.display());
        return Ok(());
    }
    let scan = geomlab::scan_zero_set(section.example, section.resolution)?;
    let (mut max_grad, mut max_det, mut stencil_failures) = (0.0f64, 0.0f64, 0usize);
    for p in &scan.points {
        match geomlab::grad_hessian(section.example, *p) {
            Ok(d) => {
                max_grad = max_grad.max(d.gradient_norm());
                max_det = max_det.max(d.hessian_det().abs());
            }
            Err(_) => stencil_failures += 1,
        }
    }
    let name = section.example.name();
    let header = csv_header(&r.config);
    write(&r.out.join(format!("k_raster_{name}.csv")), &(header.clone() + &scan.raster_csv()))?;
    write(&r.out.join(format!("w0_points_{name}.csv")), &(header + &scan.points_csv()))?;
    let result = json!({
        "example": name,
        "resolution": scan.resolution,
        "zero_set_points": scan.points.len(),
        "max_gradient_norm": max_grad,
        "max_abs_hessian_det": max_det,
        "stencil_failures": stencil_failures,
    });
    write(&r.out.join(format!("geometry_{name}.json")), &json_document(&r.config, result)?)?;
    println!(
        "{name}: {} zero-set points, max |grad K| {max_grad:.2e}, max |det H| {max_det:.2e}, {stencil_failures} stencil failures",
        scan.points.len()
    );
    Ok(())
}

pub fn phases(common: &Common) -> Result<(), CliError> {
    let r = resolve(common, "runs/phases")?;
    let section = r.config.phases.clone().ok_or_else(|| CliError::Config("missing [phases] section".into()))?;
    let candidates = section
        .candidate
        .iter()
        .map(|c| PhaseCandidate::new(c.label.clone(), c.loss, c.lambda, c.length))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if candidates.is_empty() {
        return Err(CliError::Config("no candidates".into()));
    }
    if section.n_min < 2 || section.n_max < section.n_min {
        return Err(CliError::Config(format!("bad n range {}..={}", section.n_min, section.n_max)));
    }
    if common.dry_run {
        println!(
            "{} candidates over n = {}..={} at beta {}",
            candidates.len(),
            section.n_min,
            section.n_max,
            section.beta
        );
        return Ok(());
    }
    let scan = thermo::phase_transition_scan(&candidates, section.n_min, section.n_max, section.beta)?;
    let bounds = section.bound_constant.map(|c| {
        let (lo, hi) = (section.n_min as f64, section.n_max as f64);
        (0..section.points.max(2)).all(|i| {
            let n = lo + (hi - lo) * i as f64 / (section.points.max(2) - 1) as f64;
            candidates.iter().all(|cand| thermo::within_bounds(cand, n, section.beta, c))
        })
    });
    let mut csv = csv_header(&r.config);
    csv.push_str("# lambda values are supplied by the config, not computed\n");
    csv.push_str(&scan.to_csv(&candidates, section.points));
    write(&r.out.join("phases.csv"), &csv)?;
    write(
        &r.out.join("phases.json"),
        &json_document(&r.config, json!({ "scan": scan, "candidates": candidates, "within_bounds": bounds }))?,
    )?;
    for x in &scan.crossings {
        println!(
            "crossing {} / {} at n ≈ {:.4} (between {} and {}); {} preferred after",
            candidates[x.i].label, candidates[x.j].label, x.n_star, x.n_lo, x.n_hi, candidates[x.preferred_after].label
        );
    }
    for (i, j) in &scan.ties {
        println!("tie {} / {}", candidates[*i].label, candidates[*j].label);
    }
    if scan.crossings.is_empty() && scan.ties.is_empty() {
        println!("no crossings");
    }
    if let Some(ok) = bounds {
        println!("free-energy bounds hold on the grid: {ok}");
    }
    Ok(())
}
