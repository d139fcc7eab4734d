//! Synthesis problems, datasets and likelihoods.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::machines::{self, TransitionTable};
use crate::probkit::Alphabet;
use crate::utm::{CodeLayout, CodeParameter, LogProb, Simulator};

/// Largest input support [`exact_k`] will enumerate.
pub const EXACT_K_LIMIT: u128 = 100_000;

/// Target function of a deterministic synthesis problem.
pub type TargetFn = Arc<dyn Fn(&[usize]) -> usize + Send + Sync>;

/// A deterministic synthesis problem: inputs are words over
/// `input_alphabet` with length uniform in `[a, b]`, and the label is the
/// state `target(x)`.
#[derive(Clone)]
pub struct SynthesisProblem {
    name: String,
    layout: Arc<CodeLayout>,
    input_alphabet: Vec<usize>,
    target: TargetFn,
    a: usize,
    b: usize,
    t: usize,
}

impl fmt::Debug for SynthesisProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SynthesisProblem")
            .field("name", &self.name)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("t", &self.t)
            .finish()
    }
}

impl SynthesisProblem {
    pub fn new(
        name: impl Into<String>,
        layout: Arc<CodeLayout>,
        input_alphabet: Vec<usize>,
        target: TargetFn,
        a: usize,
        b: usize,
        t: usize,
    ) -> Result<Self> {
        if a > b {
            return Err(Error::InvalidParameter(format!("min length {a} exceeds max length {b}")));
        }
        if input_alphabet.is_empty() {
            return Err(Error::InvalidParameter("empty input alphabet".into()));
        }
        if input_alphabet.iter().any(|&s| s >= layout.sigma().len()) {
            return Err(Error::InvalidParameter("input alphabet is not a subset of Σ".into()));
        }
        Ok(Self { name: name.into(), layout, input_alphabet, target, a, b, t })
    }

    /// `detectA`: accept iff the word over `{A, B}` contains an `A`.
    pub fn detect_a(a: usize, b: usize, t: usize) -> Result<Self> {
        let m = machines::detect_a_solution();
        let (sym_a, sym_b) = (m.sigma().index_of("A")?, m.sigma().index_of("B")?);
        let (reject, accept) = (m.states().index_of("reject")?, m.states().index_of("accept")?);
        let target: TargetFn = Arc::new(move |x: &[usize]| if x.contains(&sym_a) { accept } else { reject });
        Self::new("detectA", CodeLayout::of_table(&m), vec![sym_a, sym_b], target, a, b, t)
    }

    /// `parityCheck`: accept iff the word has as many `A`s as `B`s.
    pub fn parity_check(a: usize, b: usize, t: usize) -> Result<Self> {
        let m = machines::parity_check_solution();
        let (sym_a, sym_b) = (m.sigma().index_of("A")?, m.sigma().index_of("B")?);
        let (reject, accept) = (m.states().index_of("reject")?, m.states().index_of("accept")?);
        let target: TargetFn = Arc::new(move |x: &[usize]| {
            let na = x.iter().filter(|&&s| s == sym_a).count();
            let nb = x.iter().filter(|&&s| s == sym_b).count();
            if na == nb {
                accept
            } else {
                reject
            }
        });
        Self::new("parityCheck", CodeLayout::of_table(&m), vec![sym_a, sym_b], target, a, b, t)
    }

    /// A problem whose target is the final state of a classical machine run
    /// for `t` steps.
    pub fn from_machine(
        table: TransitionTable,
        input_alphabet: Vec<usize>,
        a: usize,
        b: usize,
        t: usize,
    ) -> Result<Self> {
        let name = table.name().to_string();
        let layout = CodeLayout::of_table(&table);
        let target: TargetFn =
            Arc::new(move |x: &[usize]| machines::final_state(&table, x, t).expect("window is sized for t steps"));
        Self::new(name, layout, input_alphabet, target, a, b, t)
    }

    /// Built-in problem by name.
    pub fn by_name(name: &str, a: usize, b: usize, t: usize) -> Result<Self> {
        match name {
            "detectA" => Self::detect_a(a, b, t),
            "parityCheck" => Self::parity_check(a, b, t),
            other => Err(Error::InvalidParameter(format!("unknown problem `{other}`"))),
        }
    }

    /// A known classical solution of a built-in problem.
    pub fn solution(&self) -> Option<TransitionTable> {
        match self.name.as_str() {
            "detectA" => Some(machines::detect_a_solution()),
            "parityCheck" => Some(machines::parity_check_solution()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layout(&self) -> &Arc<CodeLayout> {
        &self.layout
    }

    pub fn sigma(&self) -> &Arc<Alphabet> {
        self.layout.sigma()
    }

    pub fn states(&self) -> &Arc<Alphabet> {
        self.layout.states()
    }

    pub fn input_alphabet(&self) -> &[usize] {
        &self.input_alphabet
    }

    pub fn min_len(&self) -> usize {
        self.a
    }

    pub fn max_len(&self) -> usize {
        self.b
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn target(&self, x: &[usize]) -> usize {
        (self.target)(x)
    }

    pub fn sample_input(&self, rng: &mut impl Rng) -> Vec<usize> {
        sample_input(self.a, self.b, &self.input_alphabet, rng).expect("validated on construction")
    }
}

/// Draws a length uniformly from `[a, b]`, then each letter uniformly.
pub fn sample_input(a: usize, b: usize, alphabet: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
    if alphabet.is_empty() {
        return Err(Error::InvalidParameter("empty input alphabet".into()));
    }
    if a > b {
        return Err(Error::InvalidParameter(format!("min length {a} exceeds max length {b}")));
    }
    let len = rng.gen_range(a..=b);
    Ok((0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect())
}

/// Input/label pairs drawn i.i.d. from a problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub problem: String,
    pub a: usize,
    pub b: usize,
    pub t: usize,
    pub seed: u64,
    pub pairs: Vec<(Vec<usize>, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct pairs with their multiplicities, in a fixed order.
    pub fn grouped(&self) -> Vec<(Vec<usize>, usize, usize)> {
        let mut counts: BTreeMap<(Vec<usize>, usize), usize> = BTreeMap::new();
        for (x, y) in &self.pairs {
            *counts.entry((x.clone(), *y)).or_default() += 1;
        }
        counts.into_iter().map(|((x, y), c)| (x, y, c)).collect()
    }

    /// Text form: a header of `# key value` lines, then `input<TAB>label`.
    pub fn to_text(&self, problem: &SynthesisProblem) -> String {
        let mut out = format!(
            "# problem {}\n# a {}\n# b {}\n# t {}\n# seed {}\n",
            self.problem, self.a, self.b, self.t, self.seed
        );
        for (x, y) in &self.pairs {
            out.push_str(&crate::machines::render_word(problem.sigma(), x));
            out.push('\t');
            out.push_str(problem.states().symbol(*y));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, problem: &SynthesisProblem) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if let (Some(k), Some(v)) = (it.next(), it.next()) {
                    header.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (x, y) = line.split_once('\t').ok_or_else(|| perr(line_no, "expected `input<TAB>label`".into()))?;
            let x = crate::machines::parse_word(problem.sigma(), problem.layout().blank(), x)
                .map_err(|e| perr(line_no, e.to_string()))?;
            let y = problem.states().index_of(y.trim()).map_err(|e| perr(line_no, e.to_string()))?;
            pairs.push((x, y));
        }
        let get = |k: &str| -> Result<String> {
            header.get(k).cloned().ok_or_else(|| perr(0, format!("missing header `{k}`")))
        };
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|e| perr(0, format!("header `{k}`: {e}"))) };
        Ok(Self {
            problem: get("problem")?,
            a: num("a")? as usize,
            b: num("b")? as usize,
            t: num("t")? as usize,
            seed: num("seed")?,
            pairs,
        })
    }
}

/// `n` i.i.d. pairs from `problem` using a generator seeded with `seed`.
pub fn make_dataset(problem: &SynthesisProblem, n: usize, seed: u64) -> Result<Dataset> {
    make_dataset_with(problem, n, &mut ChaCha8Rng::seed_from_u64(seed), seed)
}

/// Like [`make_dataset`] with a caller-provided generator; `seed` is only
/// recorded.
pub fn make_dataset_with(problem: &SynthesisProblem, n: usize, rng: &mut impl Rng, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("dataset size must be at least 1".into()));
    }
    let pairs = (0..n)
        .map(|_| {
            let x = problem.sample_input(rng);
            let y = problem.target(&x);
            (x, y)
        })
        .collect();
    Ok(Dataset { problem: problem.name.clone(), a: problem.a, b: problem.b, t: problem.t, seed, pairs })
}

/// Negative log likelihood of a dataset and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihoods {
    /// `n·L_n` in nats.
    pub nl_n: f64,
    pub k_n: f64,
    /// Empirical entropy; zero for deterministic problems.
    pub s_n: f64,
    /// Number of pairs whose probability hit the log clamp.
    pub clamped: usize,
}

impl Likelihoods {
    pub fn l_n(&self, n: usize) -> f64 {
        self.nl_n / n as f64
    }
}

/// Likelihood of a fixed dataset as a function of the code, with its
/// gradient. Identical pairs are evaluated once and weighted by count.
#[derive(Debug, Clone)]
pub struct DataLikelihood {
    sim: Simulator,
    groups: Vec<(Vec<usize>, usize, f64)>,
    n: usize,
}

impl DataLikelihood {
    pub fn new(layout: Arc<CodeLayout>, data: &Dataset) -> Self {
        let groups = data.grouped().into_iter().map(|(x, y, c)| (x, y, c as f64)).collect();
        Self { sim: Simulator::new(layout, data.t), groups, n: data.len() }
    }

    pub fn layout(&self) -> &Arc<CodeLayout> {
        self.sim.layout()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distinct(&self) -> usize {
        self.groups.len()
    }

    /// `n·L_n(w)` and the number of clamped pairs.
    pub fn nll(&mut self, code: &[f64]) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut clamped = 0;
        for (x, y, c) in &self.groups {
            let LogProb { value, clamped: cl } = self.sim.log_prob(code, x, *y)?;
            total -= c * value;
            clamped += cl as usize * *c as usize;
        }
        Ok((total, clamped))
    }

    /// `n·L_n(w)`, adding `scale · ∇(Σ log p)` over flat code entries into
    /// `grad`.
    pub fn nll_grad(&mut self, code: &[f64], scale: f64, grad: &mut [f64]) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut clamped = 0;
        for (x, y, c) in &self.groups {
            let LogProb { value, clamped: cl } = self.sim.log_prob_grad(code, x, *y, scale * c, grad)?;
            total -= c * value;
            clamped += cl as usize * *c as usize;
        }
        Ok((total, clamped))
    }
}

/// `n·L_n`, `K_n` and `S_n` of a code on a dataset.
pub fn neg_log_likelihood(w: &CodeParameter, data: &Dataset) -> Result<Likelihoods> {
    let mut lik = DataLikelihood::new(w.layout().clone(), data);
    let (nl_n, clamped) = lik.nll(w.flat())?;
    Ok(Likelihoods { nl_n, k_n: nl_n / data.len() as f64, s_n: 0.0, clamped })
}

/// Exact `K(w) = -Σ_x q(x) log p(f(x) | x, w)` over all inputs of length
/// `a..=min(b, max_len)`, with `q(x) = |Σ_in|^{-|x|} / (b - a + 1)`.
pub fn exact_k(w: &CodeParameter, problem: &SynthesisProblem, max_len: usize) -> Result<f64> {
    let k = problem.input_alphabet.len() as u128;
    let hi = problem.b.min(max_len);
    let count: u128 = (problem.a..=hi).map(|l| k.saturating_pow(l as u32)).fold(0u128, u128::saturating_add);
    if count > EXACT_K_LIMIT {
        return Err(Error::SupportTooLarge { count, limit: EXACT_K_LIMIT });
    }
    let mut sim = Simulator::new(w.layout().clone(), problem.t);
    let strata = (problem.b - problem.a + 1) as f64;
    let mut total = 0.0;
    for len in problem.a..=hi {
        let weight = 1.0 / (strata * (k as f64).powi(len as i32));
        let mut digits = vec![0usize; len];
        loop {
            let x: Vec<usize> = digits.iter().map(|&d| problem.input_alphabet[d]).collect();
            let y = problem.target(&x);
            total -= weight * sim.log_prob(w.flat(), &x, y)?.value;
            // odometer increment
            let mut pos = 0;
            while pos < len {
                digits[pos] += 1;
                if digits[pos] < k as usize {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == len {
                break;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utm::CodeParameter;

    #[test]
    fn single_symbol_single_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_input(1, 1, &[1], &mut rng).unwrap(), vec![1]);
        }
        assert!(sample_input(1, 1, &[], &mut rng).is_err());
    }

    #[test]
    fn length_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_input(4, 7, &[1, 2], &mut rng).unwrap().len() - 4] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn seeded_sample_is_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = sample_input(4, 7, &[1, 2], &mut rng).unwrap();
        assert_eq!(x, GOLDEN_SEED_42);
    }

    const GOLDEN_SEED_42: [usize; 5] = [1, 1, 2, 2, 2];

    #[test]
    fn accept_fraction_matches_analytic_value() {
        let p = SynthesisProblem::detect_a(4, 7, 10).unwrap();
        let d = make_dataset(&p, 100_000, 7).unwrap();
        let accept = p.states().index_of("accept").unwrap();
        let frac = d.pairs.iter().filter(|(_, y)| *y == accept).count() as f64 / d.len() as f64;
        let expected = 1.0 - (2f64.powi(-4) + 2f64.powi(-5) + 2f64.powi(-6) + 2f64.powi(-7)) / 4.0;
        assert!((frac - expected).abs() < 0.01, "{frac} vs {expected}");
    }

    #[test]
    fn datasets_are_deterministic_and_round_trip() {
        let p = SynthesisProblem::detect_a(4, 7, 10).unwrap();
        let d1 = make_dataset(&p, 200, 3).unwrap();
        let d2 = make_dataset(&p, 200, 3).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.to_text(&p), d2.to_text(&p));
        assert_eq!(Dataset::from_text(&d1.to_text(&p), &p).unwrap(), d1);
        assert_eq!(make_dataset(&p, 1, 3).unwrap().len(), 1);
        for (x, y) in &d1.pairs {
            assert!((4..=7).contains(&x.len()));
            assert_eq!(*y, p.target(x));
        }
    }

    #[test]
    fn solutions_have_zero_loss() {
        for p in [SynthesisProblem::detect_a(4, 7, 10).unwrap(), SynthesisProblem::parity_check(1, 6, 42).unwrap()] {
            let w = CodeParameter::encode(&p.solution().unwrap());
            let d = make_dataset(&p, 100, 5).unwrap();
            let l = neg_log_likelihood(&w, &d).unwrap();
            assert!(l.nl_n.abs() <= 1e-9);
            assert_eq!(l.clamped, 0);
            assert!(exact_k(&w, &p, p.max_len()).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn parity_timeout_is_too_short_for_two_length_seven_words() {
        let p = SynthesisProblem::parity_check(1, 7, 42).unwrap();
        let w = CodeParameter::encode(&p.solution().unwrap());
        let k = exact_k(&w, &p, 7).unwrap();
        // AAAABBB and BBBBAAA are still running at t = 42 and end in a
        // non-final state, which the clamp turns into a large finite loss.
        assert!(k > 1.0 && k.is_finite());
    }

    #[test]
    fn uniform_code_single_pair_matches_direct_evaluation() {
        let p = SynthesisProblem::detect_a(4, 7, 10).unwrap();
        let w = CodeParameter::uniform(p.layout().clone());
        let d = make_dataset(&p, 1, 9).unwrap();
        let l = neg_log_likelihood(&w, &d).unwrap();
        let (x, y) = &d.pairs[0];
        let direct = crate::utm::delta_step_t(x, &w, 10).unwrap().weights()[*y];
        assert!((l.nl_n + direct.ln()).abs() < 1e-12);
        assert!(l.nl_n > 0.0);
    }

    #[test]
    fn impossible_label_is_clamped() {
        let p = SynthesisProblem::detect_a(4, 7, 10).unwrap();
        let w = CodeParameter::encode(&p.solution().unwrap());
        let mut d = make_dataset(&p, 1, 9).unwrap();
        d.pairs[0].1 = 1 - d.pairs[0].1;
        let l = neg_log_likelihood(&w, &d).unwrap();
        assert_eq!(l.clamped, 1);
        assert!((l.nl_n - 1e-300f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn support_limit_is_enforced() {
        let p = SynthesisProblem::detect_a(1, 30, 10).unwrap();
        let w = CodeParameter::uniform(p.layout().clone());
        assert!(matches!(exact_k(&w, &p, 30), Err(Error::SupportTooLarge { .. })));
    }
}
