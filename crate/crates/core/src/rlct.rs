//! Energies of tempered posteriors, the RLCT regression and bounds on the
//! RLCT of a solution.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{init_point, nuts_sample, Chain, NutsSettings, TemperedPosterior};
use crate::synthesis::{exact_k, make_dataset, Dataset, SynthesisProblem};
use crate::utm::{CodeLayout, CodeParameter};

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 50;

/// Tolerance on `∏ multipliers = 1`.
const PRODUCT_TOL: f64 = 1e-9;

/// Posterior mean of `n·L_n` at one inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub beta: f64,
    pub mean: f64,
    /// Batch-means standard error of `mean`.
    pub stderr: f64,
    pub samples: usize,
}

/// Mean and batch-means standard error of a run of energies.
pub fn energy(beta: f64, energies: &[f64]) -> Result<EnergyPoint> {
    let r = energies.len();
    if r == 0 {
        return Err(Error::InvalidParameter("no energy samples".into()));
    }
    let mean = energies.iter().sum::<f64>() / r as f64;
    let batches = BATCHES.min(r);
    let stderr = if batches < 2 {
        0.0
    } else {
        let means: Vec<f64> = (0..batches)
            .map(|m| {
                let s = &energies[m * r / batches..(m + 1) * r / batches];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect();
        let mm = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    };
    Ok(EnergyPoint { beta, mean, stderr, samples: r })
}

/// Weighted least-squares fit of `E_β = λ/β + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub lambda: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits the slope of energy against `1/β` with weights `1/stderr²`. Zero
/// standard errors are floored so a constant chain still gets a weight.
pub fn fit_lambda(points: &[EnergyPoint]) -> Result<LinearFit> {
    let distinct = {
        let mut b: Vec<f64> = points.iter().map(|p| p.beta).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b.len()
    };
    if distinct < 2 {
        return Err(Error::SingularDesign(format!("need two distinct inverse temperatures, got {distinct}")));
    }
    let floor = points.iter().map(|p| p.stderr).filter(|&s| s > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-3 } else { 1.0 };
    let w: Vec<f64> = points.iter().map(|p| 1.0 / p.stderr.max(floor).powi(2)).collect();
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.beta).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&xs).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(&xs).zip(&ys).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::SingularDesign("inverse temperatures have no spread".into()));
    }
    let lambda = sxy / sxx;
    let intercept = ym - lambda * xm;
    let ss_tot: f64 = w.iter().zip(&ys).map(|(w, y)| w * (y - ym).powi(2)).sum();
    let ss_res: f64 = w.iter().zip(&xs).zip(&ys).map(|((w, x), y)| w * (y - intercept - lambda * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit { lambda, intercept, r_squared })
}

/// Geometric multipliers `1.1^k`, `k = -2..=2`, whose product is one.
pub fn default_multipliers() -> Vec<f64> {
    (-2..=2).map(|k| 1.1f64.powi(k)).collect()
}

/// Five inverse temperatures `β* · m_i` around `β* = 1/T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    center: f64,
    multipliers: Vec<f64>,
}

impl BetaGrid {
    pub fn new(center: f64, multipliers: Vec<f64>) -> Result<Self> {
        if !(center > 0.0 && center.is_finite()) {
            return Err(Error::InvalidParameter(format!("center inverse temperature must be positive, got {center}")));
        }
        if multipliers.len() != 5 {
            return Err(Error::InvalidParameter(format!("expected 5 multipliers, got {}", multipliers.len())));
        }
        if multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidParameter("multipliers must be positive".into()));
        }
        let product: f64 = multipliers.iter().product();
        if (product - 1.0).abs() > PRODUCT_TOL {
            return Err(Error::InvalidParameter(format!("multipliers must have product 1, got {product}")));
        }
        Ok(Self { center, multipliers })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn betas(&self) -> Vec<f64> {
        self.multipliers.iter().map(|m| self.center * m).collect()
    }
}

/// Hyperparameters of an RLCT experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlctHyper {
    /// Training set size.
    pub n: usize,
    pub a: usize,
    pub b: usize,
    /// Simulation steps.
    pub t: usize,
    /// Post-burn-in draws per chain.
    pub samples: usize,
    pub burn_in: usize,
    pub datasets: usize,
    pub target_accept: f64,
    /// Dirichlet concentration of the initial point.
    pub alpha: f64,
    /// Temperature `T`; the grid is centred on `β* = 1/T`.
    pub temperature: f64,
    pub multipliers: Vec<f64>,
    pub max_depth: usize,
}

impl RlctHyper {
    pub fn grid(&self) -> Result<BetaGrid> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {}", self.temperature)));
        }
        BetaGrid::new(1.0 / self.temperature, self.multipliers.clone())
    }

    pub fn nuts(&self) -> NutsSettings {
        NutsSettings {
            samples: self.samples,
            burn_in: self.burn_in,
            target_accept: self.target_accept,
            max_depth: self.max_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.n == 0 || self.samples == 0 || self.datasets == 0 {
            return Err(Error::InvalidParameter("n, samples and datasets must be positive".into()));
        }
        if self.a > self.b {
            return Err(Error::InvalidParameter(format!("min length {} exceeds max length {}", self.a, self.b)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        Ok(())
    }
}

/// One chain of an experiment: dataset `dataset` at grid point `beta_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub dataset: usize,
    pub beta_index: usize,
    pub beta: f64,
    /// ChaCha stream of the chain generator.
    pub stream: u64,
}

/// Seed of dataset `d` derived from the master seed.
pub fn dataset_seed(master: u64, d: usize) -> u64 {
    master.wrapping_add((d as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// All chains of an experiment in a fixed order.
pub fn plan(hyper: &RlctHyper) -> Result<Vec<CellSpec>> {
    hyper.validate()?;
    let betas = hyper.grid()?.betas();
    Ok((0..hyper.datasets)
        .flat_map(|d| {
            betas.iter().enumerate().map(move |(i, &beta)| CellSpec {
                dataset: d,
                beta_index: i,
                beta,
                stream: ((d as u64) << 20) | i as u64,
            })
        })
        .collect())
}

pub fn datasets(problem: &SynthesisProblem, hyper: &RlctHyper, master: u64) -> Result<Vec<Dataset>> {
    (0..hyper.datasets).map(|d| make_dataset(problem, hyper.n, dataset_seed(master, d))).collect()
}

/// Runs one chain. Its generator is seeded with `master` on stream
/// `spec.stream`, so results do not depend on scheduling.
pub fn run_cell(
    problem: &SynthesisProblem,
    data: &Dataset,
    spec: &CellSpec,
    hyper: &RlctHyper,
    master: u64,
) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(spec.stream);
    let mut target = TemperedPosterior::new(problem.layout().clone(), data, spec.beta)?;
    let z0 = init_point(target.transform(), hyper.alpha, &mut rng)?;
    nuts_sample(&mut target, &z0, &hyper.nuts(), &mut rng)
}

/// Persistence for finished chains, used to resume interrupted runs.
pub trait ChainStore: Sync {
    fn load(&self, spec: &CellSpec) -> Option<Chain>;
    fn save(&self, spec: &CellSpec, chain: &Chain) -> Result<()>;
}

/// A store that keeps nothing.
pub struct NoStore;

impl ChainStore for NoStore {
    fn load(&self, _: &CellSpec) -> Option<Chain> {
        None
    }

    fn save(&self, _: &CellSpec, _: &Chain) -> Result<()> {
        Ok(())
    }
}

/// Per-dataset outcome of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEstimate {
    pub seed: u64,
    pub fit: LinearFit,
    pub points: Vec<EnergyPoint>,
    pub divergent_fraction: Vec<f64>,
    pub mean_accept: Vec<f64>,
    pub step_size: Vec<f64>,
}

/// RLCT estimate aggregated over datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlctEstimate {
    pub lambda: f64,
    /// Sample standard deviation across datasets; zero for one dataset.
    pub std: f64,
    pub min_r_squared: f64,
    pub per_dataset: Vec<DatasetEstimate>,
    /// Human-readable quality warnings.
    pub flags: Vec<String>,
}

/// Aggregates finished chains, given in [`plan`] order.
pub fn summarize(data: &[Dataset], cells: &[(CellSpec, Chain)]) -> Result<RlctEstimate> {
    let mut per_dataset = Vec::with_capacity(data.len());
    let mut flags = Vec::new();
    for (d, ds) in data.iter().enumerate() {
        let mine: Vec<&(CellSpec, Chain)> = cells.iter().filter(|(s, _)| s.dataset == d).collect();
        let points = mine.iter().map(|(s, c)| energy(s.beta, &c.energies)).collect::<Result<Vec<_>>>()?;
        let fit = fit_lambda(&points)?;
        let divergent_fraction: Vec<f64> = mine.iter().map(|(_, c)| c.divergent_fraction()).collect();
        for ((s, _), f) in mine.iter().zip(&divergent_fraction) {
            if *f > 0.1 {
                flags.push(format!("dataset {d}, beta {:.6}: {:.1}% divergent transitions", s.beta, 100.0 * f));
            }
        }
        if fit.r_squared < 0.9 {
            flags.push(format!("dataset {d}: regression R^2 = {:.3}", fit.r_squared));
        }
        let mean_accept = mine.iter().map(|(_, c)| c.mean_accept()).collect();
        let step_size = mine.iter().map(|(_, c)| c.step_size).collect();
        per_dataset.push(DatasetEstimate { seed: ds.seed, fit, points, divergent_fraction, mean_accept, step_size });
    }
    let k = per_dataset.len() as f64;
    let lambda = per_dataset.iter().map(|e| e.fit.lambda).sum::<f64>() / k;
    let std = if per_dataset.len() > 1 {
        (per_dataset.iter().map(|e| (e.fit.lambda - lambda).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let min_r_squared = per_dataset.iter().map(|e| e.fit.r_squared).fold(f64::INFINITY, f64::min);
    Ok(RlctEstimate { lambda, std, min_r_squared, per_dataset, flags })
}

/// Runs every chain of an experiment on up to `jobs` threads.
pub fn rlct_experiment(
    problem: &SynthesisProblem,
    hyper: &RlctHyper,
    master: u64,
    jobs: usize,
) -> Result<RlctEstimate> {
    rlct_experiment_with_store(problem, hyper, master, jobs, &NoStore)
}

pub fn rlct_experiment_with_store(
    problem: &SynthesisProblem,
    hyper: &RlctHyper,
    master: u64,
    jobs: usize,
    store: &dyn ChainStore,
) -> Result<RlctEstimate> {
    if (problem.min_len(), problem.max_len(), problem.steps()) != (hyper.a, hyper.b, hyper.t) {
        return Err(Error::InvalidParameter("problem lengths or steps disagree with the hyperparameters".into()));
    }
    let specs = plan(hyper)?;
    let data = datasets(problem, hyper, master)?;
    let results: Mutex<Vec<Option<Result<Chain>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(spec) = specs.get(i) else { break };
        let res = match store.load(spec) {
            Some(chain) => Ok(chain),
            None => run_cell(problem, &data[spec.dataset], spec, hyper, master)
                .and_then(|chain| store.save(spec, &chain).map(|_| chain)),
        };
        results.lock().expect("worker panicked")[i] = Some(res);
    };
    let jobs = jobs.clamp(1, specs.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let cells = results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .zip(&specs)
        .map(|(r, s)| r.expect("every cell ran").map(|c| (*s, c)))
        .collect::<Result<Vec<_>>>()?;
    summarize(&data, &cells)
}

/// Upper bound `½(M + N)·M'·N'` from a description of length `M'·N'`
/// tuples over a machine with `M` symbols and `N` states.
pub fn kolmogorov_bound(m: usize, n: usize, m_used: usize, n_used: usize) -> f64 {
    0.5 * (m + n) as f64 * (m_used * n_used) as f64
}

/// Which block of a tuple a free coordinate set ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Write,
    Next,
    Move,
}

/// A block of a tuple allowed to range over the simplex on `support`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeBlock {
    pub tuple: usize,
    pub block: Block,
    pub support: Vec<usize>,
}

fn block_range(layout: &CodeLayout, tuple: usize, block: Block) -> (usize, usize) {
    let (m, n) = (layout.sigma().len(), layout.states().len());
    let base = tuple * layout.stride();
    match block {
        Block::Write => (base, m),
        Block::Next => (base + m, n),
        Block::Move => (base + m + n, 3),
    }
}

/// Dimension `Σ(|support| - 1)` of the face spanned by a free set.
pub fn free_dimension(free: &[FreeBlock]) -> usize {
    free.iter().map(|b| b.support.len().saturating_sub(1)).sum()
}

/// Replaces each free block of `base` by `weights`, which must be a
/// distribution over the block's support.
fn set_block(code: &mut [f64], layout: &CodeLayout, fb: &FreeBlock, weights: &[f64]) {
    let (off, len) = block_range(layout, fb.tuple, fb.block);
    code[off..off + len].iter_mut().for_each(|v| *v = 0.0);
    for (&s, &w) in fb.support.iter().zip(weights) {
        code[off + s] = w;
    }
}

/// `base` with every free block set to the uniform distribution on its
/// support.
pub fn with_free_blocks_uniform(base: &CodeParameter, free: &[FreeBlock]) -> Result<CodeParameter> {
    let layout = base.layout().clone();
    let mut code = base.flat().to_vec();
    for fb in free {
        validate_block(&layout, fb)?;
        let k = fb.support.len();
        set_block(&mut code, &layout, fb, &vec![1.0 / k as f64; k]);
    }
    CodeParameter::from_flat(layout, code)
}

fn validate_block(layout: &CodeLayout, fb: &FreeBlock) -> Result<()> {
    if fb.tuple >= layout.n_tuples() {
        return Err(Error::InvalidParameter(format!("tuple {} out of range", fb.tuple)));
    }
    let (_, len) = block_range(layout, fb.tuple, fb.block);
    if fb.support.is_empty() || fb.support.iter().any(|&s| s >= len) {
        return Err(Error::InvalidParameter(format!("bad support {:?} for tuple {}", fb.support, fb.tuple)));
    }
    Ok(())
}

/// Free set of the `detectA` solution: the write and move blocks of every
/// `accept` tuple, and the move block of `(A, reject)`.
pub fn detect_a_free_set(layout: &CodeLayout) -> Result<Vec<FreeBlock>> {
    let accept = layout.states().index_of("accept")?;
    let reject = layout.states().index_of("reject")?;
    let sym_a = layout.sigma().index_of("A")?;
    let all_symbols: Vec<usize> = (0..layout.sigma().len()).collect();
    let mut free = Vec::new();
    for s in 0..layout.sigma().len() {
        let tuple = layout.tuple_index(s, accept);
        free.push(FreeBlock { tuple, block: Block::Write, support: all_symbols.clone() });
        free.push(FreeBlock { tuple, block: Block::Move, support: vec![0, 1, 2] });
    }
    free.push(FreeBlock { tuple: layout.tuple_index(sym_a, reject), block: Block::Move, support: vec![0, 1, 2] });
    Ok(free)
}

/// Result of [`codim_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodimBound {
    pub bound: f64,
    pub free_dim: usize,
    pub dim: usize,
    pub trials: usize,
}

/// Upper bound `½(dim W - d)` from a `d`-dimensional face of the zero set
/// through `solution`. The face is first checked: `trials` random points
/// of it must have exact `K ≤ 1e-9` on every input of the problem.
pub fn codim_bound(
    solution: &CodeParameter,
    free: &[FreeBlock],
    problem: &SynthesisProblem,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<CodimBound> {
    let layout = solution.layout().clone();
    for fb in free {
        validate_block(&layout, fb)?;
    }
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    for trial in 0..trials {
        let mut code = solution.flat().to_vec();
        for fb in free {
            let draws: Vec<f64> = fb.support.iter().map(|_| gamma.sample(rng)).collect();
            let total: f64 = draws.iter().sum();
            let weights: Vec<f64> = draws.iter().map(|d| d / total).collect();
            set_block(&mut code, &layout, fb, &weights);
        }
        let w = CodeParameter::from_flat(layout.clone(), code)?;
        let k = exact_k(&w, problem, problem.max_len())?;
        if k > 1e-9 {
            return Err(Error::FreeSetViolation(format!("trial {trial} has K = {k:e}")));
        }
    }
    let free_dim = free_dimension(free);
    let dim = layout.dim();
    Ok(CodimBound { bound: 0.5 * (dim as f64 - free_dim as f64), free_dim, dim, trials })
}
