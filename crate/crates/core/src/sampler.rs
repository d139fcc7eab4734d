//! Stick-breaking reparameterization of products of simplices and a
//! multinomial No-U-Turn sampler with dual-averaging step size adaptation.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::synthesis::{DataLikelihood, Dataset};
use crate::utm::CodeLayout;

/// Energy change beyond which a leapfrog step counts as divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Bijection between `R^{Σ(k-1)}` and the interior of a product of
/// simplices of sizes `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StickBreaking {
    sizes: Vec<usize>,
}

fn log_sigmoid(a: f64) -> f64 {
    // ln σ(a) = -softplus(-a)
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl StickBreaking {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter("simplex of size zero".into()));
        }
        Ok(Self { sizes })
    }

    /// One simplex per write, next-state and move block of each tuple.
    pub fn for_layout(layout: &CodeLayout) -> Self {
        Self { sizes: layout.simplices().into_iter().map(|(_, k)| k).collect() }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Unconstrained dimension `Σ(k-1)`.
    pub fn free_dim(&self) -> usize {
        self.sizes.iter().map(|k| k - 1).sum()
    }

    /// Constrained dimension `Σk`.
    pub fn flat_dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Writes the simplex point for `z` into `x` and returns `log |J|`.
    pub fn forward(&self, z: &[f64], x: &mut [f64]) -> f64 {
        debug_assert_eq!(z.len(), self.free_dim());
        debug_assert_eq!(x.len(), self.flat_dim());
        let (mut zi, mut xi) = (0, 0);
        let mut log_j = 0.0;
        for &k in &self.sizes {
            let mut stick: f64 = 1.0;
            for m in 0..k - 1 {
                let a = z[zi + m] - ((k - 1 - m) as f64).ln();
                let v = sigmoid(a);
                log_j += stick.ln() + log_sigmoid(a) + log_sigmoid(-a);
                x[xi + m] = stick * v;
                stick *= 1.0 - v;
            }
            x[xi + k - 1] = stick;
            zi += k - 1;
            xi += k;
        }
        log_j
    }

    /// Unconstrained coordinates of an interior point.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.flat_dim() {
            return Err(Error::InvalidParameter(format!("expected {} entries, got {}", self.flat_dim(), x.len())));
        }
        if x.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter("point is not in the interior".into()));
        }
        let mut z = Vec::with_capacity(self.free_dim());
        let mut xi = 0;
        for &k in &self.sizes {
            // logit of the broken fraction is ln x_m - ln(mass after m), which
            // avoids cancellation in the remaining stick
            let block = &x[xi..xi + k];
            for m in 0..k - 1 {
                let rest: f64 = block[m + 1..].iter().sum();
                z.push(block[m].ln() - rest.ln() + ((k - 1 - m) as f64).ln());
            }
            xi += k;
        }
        Ok(z)
    }

    /// Adds `∂/∂z [g_x · x(z) + log |J(z)|]` into `g_z`.
    pub fn pullback(&self, z: &[f64], g_x: &[f64], g_z: &mut [f64]) {
        let (mut zi, mut xi) = (0, 0);
        let mut sticks = Vec::new();
        let mut vs = Vec::new();
        for &k in &self.sizes {
            sticks.clear();
            vs.clear();
            let mut stick = 1.0;
            for m in 0..k - 1 {
                let v = sigmoid(z[zi + m] - ((k - 1 - m) as f64).ln());
                sticks.push(stick);
                vs.push(v);
                stick *= 1.0 - v;
            }
            let mut stick_bar = g_x[xi + k - 1];
            for m in (0..k - 1).rev() {
                let (s, v) = (sticks[m], vs[m]);
                let v_bar = g_x[xi + m] * s - stick_bar * s;
                stick_bar = g_x[xi + m] * v + stick_bar * (1.0 - v);
                g_z[zi + m] += v_bar * v * (1.0 - v) + 1.0 - (k - m) as f64 * v;
            }
            zi += k - 1;
            xi += k;
        }
    }
}

/// A differentiable log density on `R^d`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density together
    /// with a scalar recorded alongside each draw.
    fn evaluate(&mut self, z: &[f64], grad: &mut [f64]) -> Result<Evaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_density: f64,
    pub energy: f64,
}

/// The tempered posterior `β·Σ log p(y|x,w) + log |J|` in stick-breaking
/// coordinates under a uniform prior; the recorded energy is `n·L_n`.
#[derive(Debug, Clone)]
pub struct TemperedPosterior {
    lik: DataLikelihood,
    transform: StickBreaking,
    beta: f64,
    x: Vec<f64>,
    g_x: Vec<f64>,
}

impl TemperedPosterior {
    pub fn new(layout: Arc<CodeLayout>, data: &Dataset, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("inverse temperature must be positive, got {beta}")));
        }
        let transform = StickBreaking::for_layout(&layout);
        let flat = transform.flat_dim();
        Ok(Self { lik: DataLikelihood::new(layout, data), transform, beta, x: vec![0.0; flat], g_x: vec![0.0; flat] })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn transform(&self) -> &StickBreaking {
        &self.transform
    }

    pub fn likelihood(&mut self) -> &mut DataLikelihood {
        &mut self.lik
    }

    /// The code at unconstrained point `z`.
    pub fn code_at(&self, z: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.transform.flat_dim()];
        self.transform.forward(z, &mut x);
        x
    }
}

impl LogDensity for TemperedPosterior {
    fn dim(&self) -> usize {
        self.transform.free_dim()
    }

    fn evaluate(&mut self, z: &[f64], grad: &mut [f64]) -> Result<Evaluation> {
        let log_j = self.transform.forward(z, &mut self.x);
        self.g_x.iter_mut().for_each(|g| *g = 0.0);
        let (nl, _) = self.lik.nll_grad(&self.x, self.beta, &mut self.g_x)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.transform.pullback(z, &self.g_x, grad);
        Ok(Evaluation { log_density: -self.beta * nl + log_j, energy: nl })
    }
}

/// A Dirichlet(α) draw on each simplex, in unconstrained coordinates.
pub fn init_point(transform: &StickBreaking, alpha: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParameter(format!("Dirichlet concentration: {e}")))?;
    let mut x = Vec::with_capacity(transform.flat_dim());
    for &k in transform.sizes() {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
        let total: f64 = draws.iter().sum();
        x.extend(draws.iter().map(|d| d / total));
    }
    transform.inverse(&x)
}

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsSettings {
    pub samples: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    pub max_depth: usize,
}

impl Default for NutsSettings {
    fn default() -> Self {
        Self { samples: 1000, burn_in: 500, target_accept: 0.8, max_depth: 10 }
    }
}

/// Post-burn-in draws of one chain and their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub accept_stats: Vec<f64>,
    pub tree_depths: Vec<usize>,
    pub divergences: usize,
    pub step_size: f64,
    pub leapfrog_steps: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn divergent_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.divergences as f64 / self.len() as f64
        }
    }

    pub fn mean_accept(&self) -> f64 {
        self.accept_stats.iter().sum::<f64>() / self.len().max(1) as f64
    }

    /// Line-oriented text form; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "step_size {:?}\ndivergences {}\nleapfrog_steps {}\ndraws {}\n",
            self.step_size,
            self.divergences,
            self.leapfrog_steps,
            self.len()
        );
        for i in 0..self.len() {
            out.push_str(&format!("draw {:?} {:?} {}", self.energies[i], self.accept_stats[i], self.tree_depths[i]));
            for v in &self.draws[i] {
                out.push_str(&format!(" {v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines.next().ok_or_else(|| perr(0, format!("missing `{key}`")))?;
            line.strip_prefix(key).map(|v| v.trim().to_string()).ok_or_else(|| perr(n + 1, format!("expected `{key}`")))
        };
        let step_size: f64 = header("step_size")?.parse().map_err(|e| perr(1, format!("{e}")))?;
        let divergences: usize = header("divergences")?.parse().map_err(|e| perr(2, format!("{e}")))?;
        let leapfrog_steps: usize = header("leapfrog_steps")?.parse().map_err(|e| perr(3, format!("{e}")))?;
        let count: usize = header("draws")?.parse().map_err(|e| perr(4, format!("{e}")))?;
        let mut chain = Chain {
            draws: Vec::with_capacity(count),
            energies: Vec::with_capacity(count),
            accept_stats: Vec::with_capacity(count),
            tree_depths: Vec::with_capacity(count),
            divergences,
            step_size,
            leapfrog_steps,
        };
        for (n, line) in lines {
            let mut it = line.split_whitespace();
            if it.next() != Some("draw") {
                return Err(perr(n + 1, "expected `draw`".into()));
            }
            let mut num = |what: &str| -> Result<f64> {
                it.next()
                    .ok_or_else(|| perr(n + 1, format!("missing {what}")))?
                    .parse()
                    .map_err(|e| perr(n + 1, format!("{what}: {e}")))
            };
            chain.energies.push(num("energy")?);
            chain.accept_stats.push(num("accept statistic")?);
            chain.tree_depths.push(num("tree depth")? as usize);
            let rest: std::result::Result<Vec<f64>, _> = it.map(str::parse).collect();
            chain.draws.push(rest.map_err(|e| perr(n + 1, format!("coordinate: {e}")))?);
        }
        if chain.len() != count {
            return Err(perr(0, format!("expected {count} draws, found {}", chain.len())));
        }
        Ok(chain)
    }
}

#[derive(Clone)]
struct Point {
    z: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    log_density: f64,
    energy: f64,
}

impl Point {
    fn hamiltonian(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.p, &self.p)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_u_turn(p_minus: &[f64], p_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_plus, rho) > 0.0 && dot(p_minus, rho) > 0.0
}

fn leapfrog<D: LogDensity>(target: &mut D, pt: &mut Point, eps: f64) -> Result<()> {
    for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
        *p += 0.5 * eps * g;
    }
    for (z, p) in pt.z.iter_mut().zip(&pt.p) {
        *z += eps * p;
    }
    let ev = target.evaluate(&pt.z, &mut pt.grad)?;
    pt.log_density = ev.log_density;
    pt.energy = ev.energy;
    for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
        *p += 0.5 * eps * g;
    }
    Ok(())
}

/// Output of one subtree.
struct Subtree {
    /// Momentum at the end adjacent to the tree it extends.
    p_begin: Vec<f64>,
    /// Momentum at the far end.
    p_end: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
    proposal: Point,
}

struct TreeStats {
    sum_metro: f64,
    n_leapfrog: usize,
    divergent: bool,
}

struct Nuts<'a, D, R> {
    target: &'a mut D,
    rng: &'a mut R,
    h0: f64,
    eps: f64,
    stats: TreeStats,
}

impl<D: LogDensity, R: Rng> Nuts<'_, D, R> {
    /// Builds a subtree of `2^depth` leapfrog steps from `edge` (advanced in
    /// place). `None` means a divergence or an internal U-turn.
    fn build(&mut self, edge: &mut Point, depth: usize, dir: f64) -> Result<Option<Subtree>> {
        if depth == 0 {
            leapfrog(self.target, edge, dir * self.eps)?;
            let mut h = edge.hamiltonian();
            if h.is_nan() {
                h = f64::INFINITY;
            }
            self.stats.n_leapfrog += 1;
            if h - self.h0 > MAX_DELTA_H {
                self.stats.divergent = true;
                return Ok(None);
            }
            let dh = self.h0 - h;
            self.stats.sum_metro += if dh > 0.0 { 1.0 } else { dh.exp() };
            return Ok(Some(Subtree {
                p_begin: edge.p.clone(),
                p_end: edge.p.clone(),
                rho: edge.p.clone(),
                log_sum_weight: dh,
                proposal: edge.clone(),
            }));
        }
        let Some(init) = self.build(edge, depth - 1, dir)? else { return Ok(None) };
        let Some(fin) = self.build(edge, depth - 1, dir)? else { return Ok(None) };
        let log_sum_weight = log_add_exp(init.log_sum_weight, fin.log_sum_weight);
        let take_final = self.rng.gen::<f64>() < (fin.log_sum_weight - log_sum_weight).exp();
        let mut rho = init.rho.clone();
        add_into(&mut rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_begin, &fin.p_end, &rho);
        let mut ext = init.rho.clone();
        add_into(&mut ext, &fin.p_begin);
        persist &= no_u_turn(&init.p_begin, &fin.p_begin, &ext);
        let mut ext = fin.rho.clone();
        add_into(&mut ext, &init.p_end);
        persist &= no_u_turn(&init.p_end, &fin.p_end, &ext);
        if !persist {
            return Ok(None);
        }
        Ok(Some(Subtree {
            p_begin: init.p_begin,
            p_end: fin.p_end,
            rho,
            log_sum_weight,
            proposal: if take_final { fin.proposal } else { init.proposal },
        }))
    }
}

fn sample_momentum(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

struct Transition {
    point: Point,
    accept_stat: f64,
    depth: usize,
    divergent: bool,
    n_leapfrog: usize,
}

fn transition<D: LogDensity, R: Rng>(
    target: &mut D,
    current: &Point,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> Result<Transition> {
    let mut start = current.clone();
    start.p = sample_momentum(start.z.len(), rng);
    let h0 = start.hamiltonian();
    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut rho = start.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sample = start;
    let mut depth = 0;
    let mut nuts = Nuts { target, rng, h0, eps, stats: TreeStats { sum_metro: 0.0, n_leapfrog: 0, divergent: false } };
    while depth < max_depth {
        let forward = nuts.rng.gen::<f64>() > 0.5;
        let (old_begin, old_end) =
            if forward { (minus.p.clone(), plus.p.clone()) } else { (plus.p.clone(), minus.p.clone()) };
        let sub = if forward { nuts.build(&mut plus, depth, 1.0)? } else { nuts.build(&mut minus, depth, -1.0)? };
        let Some(sub) = sub else { break };
        depth += 1;
        if sub.log_sum_weight > log_sum_weight || nuts.rng.gen::<f64>() < (sub.log_sum_weight - log_sum_weight).exp() {
            sample = sub.proposal.clone();
        }
        log_sum_weight = log_add_exp(log_sum_weight, sub.log_sum_weight);
        // old tree spans old_begin..old_end, new subtree extends from old_end
        let old_rho = rho.clone();
        add_into(&mut rho, &sub.rho);
        let mut persist = no_u_turn(&old_begin, &sub.p_end, &rho);
        let mut ext = old_rho;
        add_into(&mut ext, &sub.p_begin);
        persist &= no_u_turn(&old_begin, &sub.p_begin, &ext);
        let mut ext = sub.rho.clone();
        add_into(&mut ext, &old_end);
        persist &= no_u_turn(&old_end, &sub.p_end, &ext);
        if !persist {
            break;
        }
    }
    let stats = nuts.stats;
    Ok(Transition {
        point: sample,
        accept_stat: if stats.n_leapfrog > 0 { stats.sum_metro / stats.n_leapfrog as f64 } else { 0.0 },
        depth,
        divergent: stats.divergent,
        n_leapfrog: stats.n_leapfrog,
    })
}

/// Doubles or halves a unit step until a single leapfrog step crosses
/// acceptance probability 0.8.
pub fn find_reasonable_epsilon<D: LogDensity>(target: &mut D, z: &[f64], rng: &mut impl Rng) -> Result<f64> {
    let mut base = new_point(target, z)?;
    let mut eps: f64 = 1.0;
    let threshold = 0.8f64.ln();
    let mut probe = |eps: f64, rng: &mut dyn rand::RngCore| -> Result<f64> {
        base.p = (0..base.z.len()).map(|_| StandardNormal.sample(rng)).collect();
        let h0 = base.hamiltonian();
        let mut pt = base.clone();
        leapfrog(target, &mut pt, eps)?;
        let h = pt.hamiltonian();
        Ok(if h.is_nan() { f64::NEG_INFINITY } else { h0 - h })
    };
    let dir = if probe(eps, rng)? > threshold { 1.0 } else { -1.0 };
    loop {
        let dh = probe(eps, rng)?;
        if (dir > 0.0 && !(dh > threshold)) || (dir < 0.0 && !(dh < threshold)) {
            return Ok(eps);
        }
        eps = if dir > 0.0 { eps * 2.0 } else { eps * 0.5 };
        if eps > 1e7 {
            return Err(Error::InvalidParameter("step size search diverged; the posterior looks improper".into()));
        }
        if eps < 1e-12 {
            return Err(Error::InvalidParameter("step size search collapsed; the density is ill-conditioned".into()));
        }
    }
}

fn new_point<D: LogDensity>(target: &mut D, z: &[f64]) -> Result<Point> {
    let mut grad = vec![0.0; z.len()];
    let ev = target.evaluate(z, &mut grad)?;
    if !ev.log_density.is_finite() {
        return Err(Error::InvalidParameter("initial point has non-finite log density".into()));
    }
    Ok(Point { z: z.to_vec(), p: vec![0.0; z.len()], grad, log_density: ev.log_density, energy: ev.energy })
}

/// Nesterov dual averaging of `log ε` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Updates with one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Runs NUTS from `z0`: `burn_in` adaptive transitions, then `samples`
/// recorded ones at the averaged step size.
pub fn nuts_sample<D: LogDensity>(
    target: &mut D,
    z0: &[f64],
    settings: &NutsSettings,
    rng: &mut impl Rng,
) -> Result<Chain> {
    if z0.len() != target.dim() {
        return Err(Error::InvalidParameter(format!(
            "initial point has dimension {}, expected {}",
            z0.len(),
            target.dim()
        )));
    }
    if !(settings.target_accept > 0.0 && settings.target_accept < 1.0) {
        return Err(Error::InvalidParameter("target acceptance must lie in (0, 1)".into()));
    }
    let mut current = new_point(target, z0)?;
    let mut eps = find_reasonable_epsilon(target, z0, rng)?;
    let mut adapt = DualAveraging::new(eps, settings.target_accept);
    for _ in 0..settings.burn_in {
        let tr = transition(target, &current, eps, settings.max_depth, rng)?;
        current = tr.point;
        eps = adapt.update(tr.accept_stat);
    }
    if settings.burn_in > 0 {
        eps = adapt.final_step();
    }
    let mut chain = Chain {
        draws: Vec::with_capacity(settings.samples),
        energies: Vec::with_capacity(settings.samples),
        accept_stats: Vec::with_capacity(settings.samples),
        tree_depths: Vec::with_capacity(settings.samples),
        divergences: 0,
        step_size: eps,
        leapfrog_steps: 0,
    };
    for _ in 0..settings.samples {
        let tr = transition(target, &current, eps, settings.max_depth, rng)?;
        current = tr.point;
        chain.draws.push(current.z.clone());
        chain.energies.push(current.energy);
        chain.accept_stats.push(tr.accept_stat);
        chain.tree_depths.push(tr.depth);
        chain.divergences += tr.divergent as usize;
        chain.leapfrog_steps += tr.n_leapfrog;
    }
    Ok(chain)
}

/// Isotropic normal target `N(mean, σ²I)`, used for calibration.
#[derive(Debug, Clone)]
pub struct IsoNormal {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl LogDensity for IsoNormal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&mut self, z: &[f64], grad: &mut [f64]) -> Result<Evaluation> {
        let s2 = self.sigma * self.sigma;
        let mut lp = 0.0;
        for ((g, &zi), &m) in grad.iter_mut().zip(z).zip(&self.mean) {
            let d = zi - m;
            lp -= 0.5 * d * d / s2;
            *g = -d / s2;
        }
        Ok(Evaluation { log_density: lp, energy: -lp })
    }
}
