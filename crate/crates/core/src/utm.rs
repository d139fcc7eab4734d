//! Code parameters and the staged pseudo-UTM.
//!
//! A [`CodeParameter`] assigns to every `(σ, q)` pair of a machine a triple of
//! distributions over the written symbol, the next state and the move. The
//! description tape lists these tuples in lexicographic `(σ, q)` order.
//!
//! Two simulators are provided. [`utm_reference_run`] runs the classical
//! four-tape staged UTM step by step on a vertex code and checks its period.
//! [`direct_cycle`] and [`Simulator`] collapse one full UTM period into a
//! single map on the simulated work tape and state, which is the production
//! path for likelihoods and their gradients.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::machines::{Direction, TapeConfig, Transition, TransitionTable};
use crate::probkit::{Alphabet, Dist};
use crate::smoothstep::SmoothConfig;

/// Atom appended to the symbol, state and direction alphabets to form the
/// staging alphabets. It plays the role of the empty staging mark.
pub const STAGING_EMPTY: &str = "<X>";

/// Probabilities below this are clamped before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-300;

/// Alphabets and metadata shared by all codes of one parameter space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeLayout {
    sigma: Arc<Alphabet>,
    states: Arc<Alphabet>,
    blank: usize,
    initial: usize,
}

impl CodeLayout {
    pub fn new(sigma: Arc<Alphabet>, states: Arc<Alphabet>, blank: usize, initial: usize) -> Result<Arc<Self>> {
        if blank >= sigma.len() || initial >= states.len() {
            return Err(Error::InvalidParameter("blank or initial state out of range".into()));
        }
        Ok(Arc::new(Self { sigma, states, blank, initial }))
    }

    pub fn of_table(table: &TransitionTable) -> Arc<Self> {
        Arc::new(Self {
            sigma: table.sigma().clone(),
            states: table.states().clone(),
            blank: table.blank(),
            initial: table.initial(),
        })
    }

    pub fn sigma(&self) -> &Arc<Alphabet> {
        &self.sigma
    }

    /// Parses an input word over `Σ`, as [`TransitionTable::parse_word`].
    pub fn parse_word(&self, text: &str) -> Result<Vec<usize>> {
        crate::machines::parse_word(&self.sigma, self.blank, text)
    }

    pub fn states(&self) -> &Arc<Alphabet> {
        &self.states
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    /// Number of description tuples `N = |Σ|·|Q|`.
    pub fn n_tuples(&self) -> usize {
        self.sigma.len() * self.states.len()
    }

    /// Flat entries per tuple: `|Σ| + |Q| + 3`.
    pub fn stride(&self) -> usize {
        self.sigma.len() + self.states.len() + 3
    }

    pub fn flat_len(&self) -> usize {
        self.n_tuples() * self.stride()
    }

    /// The `(σ, q)` pair matched by tuple `i`.
    pub fn tuple(&self, i: usize) -> (usize, usize) {
        (i / self.states.len(), i % self.states.len())
    }

    pub fn tuple_index(&self, symbol: usize, state: usize) -> usize {
        symbol * self.states.len() + state
    }

    /// Dimension of the parameter space.
    pub fn dim(&self) -> usize {
        self.n_tuples() * (self.sigma.len() - 1 + self.states.len() - 1 + 2)
    }

    /// `(offset, size)` of every simplex factor in the flat layout, tuple by
    /// tuple in write, next, move order.
    pub fn simplices(&self) -> Vec<(usize, usize)> {
        let (ns, nq, st) = (self.sigma.len(), self.states.len(), self.stride());
        (0..self.n_tuples()).flat_map(|i| [(i * st, ns), (i * st + ns, nq), (i * st + ns + nq, 3)]).collect()
    }

    /// Log of the Lebesgue volume of the parameter space in free
    /// coordinates: each simplex of size `k` contributes `1/(k-1)!`.
    pub fn log_volume(&self) -> f64 {
        self.simplices().iter().map(|&(_, k)| -ln_factorial(k - 1)).sum()
    }

    /// Maps a gradient over all flat entries to the free coordinates, which
    /// are the first `k-1` entries of each simplex with the last one
    /// determined by the others.
    pub fn free_gradient(&self, flat: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (off, k) in self.simplices() {
            let last = flat[off + k - 1];
            out.extend(flat[off..off + k - 1].iter().map(|g| g - last));
        }
        out
    }

    fn describe(&self) -> String {
        format!("Σ={} Q={}", self.sigma, self.states)
    }
}

fn vertex_index(block: &[f64]) -> Option<usize> {
    let one = block.iter().position(|&x| x == 1.0)?;
    block.iter().enumerate().all(|(i, &x)| i == one || x == 0.0).then_some(one)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// A point of the parameter space: per tuple, distributions over the written
/// symbol, the next state and the move, stored flat as
/// `[write (|Σ|) | next (|Q|) | move (3)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeParameter {
    layout: Arc<CodeLayout>,
    data: Vec<f64>,
}

impl CodeParameter {
    /// Validates a flat vector: every simplex factor must be a distribution.
    pub fn from_flat(layout: Arc<CodeLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.flat_len() {
            return Err(Error::InvalidParameter(format!("expected {} entries, got {}", layout.flat_len(), data.len())));
        }
        for (off, k) in layout.simplices() {
            let block = &data[off..off + k];
            let total: f64 = block.iter().sum();
            if block.iter().any(|x| !x.is_finite() || *x < 0.0) || (total - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "entries {off}..{} are not a distribution: {block:?}",
                    off + k
                )));
            }
        }
        Ok(Self { layout, data })
    }

    /// Every entry uniform.
    pub fn uniform(layout: Arc<CodeLayout>) -> Self {
        let mut data = vec![0.0; layout.flat_len()];
        for (off, k) in layout.simplices() {
            data[off..off + k].iter_mut().for_each(|x| *x = 1.0 / k as f64);
        }
        Self { layout, data }
    }

    /// The vertex code of a classical machine.
    pub fn encode(table: &TransitionTable) -> Self {
        let layout = CodeLayout::of_table(table);
        let (ns, nq, st) = (layout.sigma.len(), layout.states.len(), layout.stride());
        let mut data = vec![0.0; layout.flat_len()];
        for i in 0..layout.n_tuples() {
            let (s, q) = layout.tuple(i);
            let tr = table.get(s, q);
            let row = &mut data[i * st..(i + 1) * st];
            row[tr.write] = 1.0;
            row[ns + tr.next] = 1.0;
            row[ns + nq + tr.dir.index()] = 1.0;
        }
        Self { layout, data }
    }

    /// Recovers the classical machine of a vertex code.
    pub fn decode(&self) -> Result<TransitionTable> {
        let lay = &self.layout;
        let mut delta = Vec::with_capacity(lay.n_tuples());
        for i in 0..lay.n_tuples() {
            let vertex = |block: &[f64], what: &str| -> Result<usize> {
                vertex_index(block).ok_or_else(|| {
                    let (s, q) = lay.tuple(i);
                    Error::NotVertex(format!(
                        "{what} of tuple ({}, {}) is {block:?}",
                        lay.sigma.symbol(s),
                        lay.states.symbol(q)
                    ))
                })
            };
            let write = vertex(self.write(i), "write")?;
            let next = vertex(self.next(i), "next state")?;
            let dir = Direction::from_index(vertex(self.movement(i), "move")?);
            delta.push(Transition { write, next, dir });
        }
        TransitionTable::new("decoded", lay.sigma.clone(), lay.states.clone(), lay.blank, lay.initial, delta)
    }

    pub fn layout(&self) -> &Arc<CodeLayout> {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn write(&self, i: usize) -> &[f64] {
        let (ns, st) = (self.layout.sigma.len(), self.layout.stride());
        &self.data[i * st..i * st + ns]
    }

    pub fn next(&self, i: usize) -> &[f64] {
        let (ns, nq, st) = (self.layout.sigma.len(), self.layout.states.len(), self.layout.stride());
        &self.data[i * st + ns..i * st + ns + nq]
    }

    pub fn movement(&self, i: usize) -> &[f64] {
        let (ns, nq, st) = (self.layout.sigma.len(), self.layout.states.len(), self.layout.stride());
        &self.data[i * st + ns + nq..(i + 1) * st]
    }

    /// Replaces the three distributions of tuple `i`.
    pub fn set_tuple(&mut self, i: usize, write: &Dist, next: &Dist, movement: &Dist) -> Result<()> {
        let lay = self.layout.clone();
        for (d, a) in [(write, &lay.sigma), (next, &lay.states)] {
            if d.alphabet() != a {
                return Err(Error::AlphabetMismatch { expected: a.to_string(), found: d.alphabet().to_string() });
            }
        }
        if movement.weights().len() != 3 {
            return Err(Error::InvalidParameter("move distribution must have 3 entries".into()));
        }
        let (ns, nq, st) = (lay.sigma.len(), lay.states.len(), lay.stride());
        let row = &mut self.data[i * st..(i + 1) * st];
        row[..ns].copy_from_slice(write.weights());
        row[ns..ns + nq].copy_from_slice(next.weights());
        row[ns + nq..].copy_from_slice(movement.weights());
        Ok(())
    }

    /// Mutable access to a block of the flat layout, for callers that build
    /// perturbed codes.
    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_vertex(&self) -> bool {
        self.decode().is_ok()
    }

    /// Text checkpoint: alphabets and tuple order, then one line per tuple.
    /// Floats are written in shortest round-trip form so reading back is
    /// bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let lay = &self.layout;
        let mut out = String::new();
        let _ = writeln!(out, "# code parameter");
        let _ = writeln!(out, "symbols {}", lay.sigma.symbols().join(" "));
        let _ = writeln!(out, "states {}", lay.states.symbols().join(" "));
        let _ = writeln!(out, "blank {}", lay.sigma.symbol(lay.blank));
        let _ = writeln!(out, "initial {}", lay.states.symbol(lay.initial));
        let _ = writeln!(out, "order lexicographic");
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for i in 0..lay.n_tuples() {
            let (s, q) = lay.tuple(i);
            let _ = writeln!(
                out,
                "tuple {} {} | {} | {} | {}",
                lay.sigma.symbol(s),
                lay.states.symbol(q),
                join(self.write(i)),
                join(self.next(i)),
                join(self.movement(i))
            );
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut header: [Option<Vec<String>>; 4] = Default::default();
        let mut tuples: Vec<(usize, Vec<String>)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<String> = line.split_whitespace().map(String::from).collect();
            let slot = match words[0].as_str() {
                "symbols" => 0,
                "states" => 1,
                "blank" => 2,
                "initial" => 3,
                "order" => {
                    if words.get(1).map(String::as_str) != Some("lexicographic") {
                        return Err(perr(line_no, "only lexicographic tuple order is supported".into()));
                    }
                    continue;
                }
                "tuple" => {
                    tuples.push((line_no, words[1..].to_vec()));
                    continue;
                }
                other => return Err(perr(line_no, format!("unknown key `{other}`"))),
            };
            header[slot] = Some(words[1..].to_vec());
        }
        let [Some(sym), Some(sts), Some(blank), Some(init)] = header else {
            return Err(perr(0, "missing symbols/states/blank/initial header".into()));
        };
        let sigma = Alphabet::new(sym).map_err(|e| perr(0, e.to_string()))?;
        let states = Alphabet::new(sts).map_err(|e| perr(0, e.to_string()))?;
        let one = |v: &[String], what: &str| -> Result<String> {
            v.first().cloned().ok_or_else(|| perr(0, format!("missing {what}")))
        };
        let blank = sigma.index_of(&one(&blank, "blank")?).map_err(|e| perr(0, e.to_string()))?;
        let initial = states.index_of(&one(&init, "initial")?).map_err(|e| perr(0, e.to_string()))?;
        let layout = CodeLayout::new(sigma.clone(), states.clone(), blank, initial)?;
        if tuples.len() != layout.n_tuples() {
            return Err(perr(0, format!("expected {} tuples, found {}", layout.n_tuples(), tuples.len())));
        }
        let mut data = Vec::with_capacity(layout.flat_len());
        for (i, (line_no, words)) in tuples.iter().enumerate() {
            let (s, q) = layout.tuple(i);
            if words.len() < 2 || words[0] != sigma.symbol(s) || words[1] != states.symbol(q) {
                return Err(perr(
                    *line_no,
                    format!("tuple out of lexicographic order, expected ({}, {})", sigma.symbol(s), states.symbol(q)),
                ));
            }
            let parts: Vec<&[String]> = words[2..].split(|w| w == "|").skip(1).collect();
            let sizes = [sigma.len(), states.len(), 3];
            if parts.len() != 3 || parts.iter().zip(sizes).any(|(p, k)| p.len() != k) {
                return Err(perr(*line_no, "expected `| write | next | move` blocks of matching sizes".into()));
            }
            for w in parts.concat() {
                data.push(w.parse::<f64>().map_err(|e| perr(*line_no, format!("`{w}`: {e}")))?);
            }
        }
        Self::from_flat(layout, data)
    }
}

/// Distributions on the staging tape after a full scan of the description.
/// Each is over its base alphabet extended by [`STAGING_EMPTY`], stored last.
#[derive(Debug, Clone, PartialEq)]
pub struct StagingState {
    pub s_hat: Dist,
    pub q_hat: Dist,
    pub d_hat: Dist,
}

fn extended(a: &Alphabet) -> Arc<Alphabet> {
    Alphabet::new(a.symbols().iter().map(String::as_str).chain([STAGING_EMPTY]))
        .expect("staging mark is distinct from user atoms")
}

fn check_head(w: &CodeParameter, y0: &Dist, s: &Dist) -> Result<()> {
    let lay = &w.layout;
    for (d, a) in [(y0, &lay.sigma), (s, &lay.states)] {
        if d.alphabet() != a {
            return Err(Error::AlphabetMismatch { expected: a.to_string(), found: d.alphabet().to_string() });
        }
    }
    Ok(())
}

/// Match weights `λ_i = P(head = θ(i)₁)·P(state = θ(i)₂)`.
pub fn match_weights(w: &CodeParameter, y0: &Dist, s: &Dist) -> Result<Vec<f64>> {
    check_head(w, y0, s)?;
    let lay = &w.layout;
    Ok((0..lay.n_tuples())
        .map(|i| {
            let (a, q) = lay.tuple(i);
            y0.weights()[a] * s.weights()[q]
        })
        .collect())
}

/// Staging distributions from the closed-form products over tuples.
pub fn staging_closed_form(w: &CodeParameter, y0: &Dist, s: &Dist) -> Result<StagingState> {
    check_head(w, y0, s)?;
    let lay = &w.layout;
    let mut sc = Scratch::new(lay);
    let x = sc.forward(lay, &w.data, y0.weights(), s.weights());
    let with_x = |v: &[f64], a: &Alphabet| {
        let mut out = v.to_vec();
        out.push(x);
        Dist::from_raw(extended(a), out)
    };
    Ok(StagingState {
        s_hat: with_x(&sc.shat, &lay.sigma),
        q_hat: with_x(&sc.qhat, &lay.states),
        d_hat: with_x(&sc.dhat, &Alphabet::directions()),
    })
}

/// Staging distributions by scanning the tuples one at a time, starting from
/// the empty mark and overwriting with probability `λ_i` at tuple `i`.
pub fn staging_recursive(w: &CodeParameter, y0: &Dist, s: &Dist) -> Result<StagingState> {
    let lambda = match_weights(w, y0, s)?;
    let lay = &w.layout;
    let (ns, nq) = (lay.sigma.len(), lay.states.len());
    let mut sh = vec![0.0; ns + 1];
    let mut qh = vec![0.0; nq + 1];
    let mut dh = vec![0.0; 4];
    sh[ns] = 1.0;
    qh[nq] = 1.0;
    dh[3] = 1.0;
    for (i, &l) in lambda.iter().enumerate() {
        for (hat, new) in [(&mut sh, w.write(i)), (&mut qh, w.next(i)), (&mut dh, w.movement(i))] {
            let k = new.len();
            for a in 0..k {
                hat[a] = l * new[a] + (1.0 - l) * hat[a];
            }
            hat[k] *= 1.0 - l;
        }
    }
    Ok(StagingState {
        s_hat: Dist::from_raw(extended(&lay.sigma), sh),
        q_hat: Dist::from_raw(extended(&lay.states), qh),
        d_hat: Dist::from_raw(extended(&Alphabet::directions()), dh),
    })
}

/// Intermediates of one direct cycle.
#[derive(Debug, Clone)]
struct Scratch {
    lambda: Vec<f64>,
    /// `suffix[j] = ∏_{l>j} (1 - λ_l)`.
    suffix: Vec<f64>,
    coef: Vec<f64>,
    shat: Vec<f64>,
    qhat: Vec<f64>,
    dhat: [f64; 3],
    a: Vec<f64>,
    x: f64,
}

impl Scratch {
    fn new(lay: &CodeLayout) -> Self {
        let n = lay.n_tuples();
        Self {
            lambda: vec![0.0; n],
            suffix: vec![0.0; n],
            coef: vec![0.0; n],
            shat: vec![0.0; lay.sigma.len()],
            qhat: vec![0.0; lay.states.len()],
            dhat: [0.0; 3],
            a: vec![0.0; lay.sigma.len()],
            x: 0.0,
        }
    }

    /// Scan phase: match weights, staged distributions and `A`. Returns the
    /// probability that nothing was staged.
    fn forward(&mut self, lay: &CodeLayout, code: &[f64], y0: &[f64], s: &[f64]) -> f64 {
        self.forward_impl(lay, code, y0, s, true)
    }

    fn forward_impl(&mut self, lay: &CodeLayout, code: &[f64], y0: &[f64], s: &[f64], skip_zero: bool) -> f64 {
        let (ns, nq, st) = (lay.sigma.len(), lay.states.len(), lay.stride());
        let n = lay.n_tuples();
        for (i, l) in self.lambda.iter_mut().enumerate() {
            *l = y0[i / nq] * s[i % nq];
        }
        let mut p = 1.0;
        for j in (0..n).rev() {
            self.suffix[j] = p;
            self.coef[j] = self.lambda[j] * p;
            p *= 1.0 - self.lambda[j];
        }
        self.x = p;
        self.shat.iter_mut().for_each(|v| *v = 0.0);
        self.qhat.iter_mut().for_each(|v| *v = 0.0);
        self.dhat = [0.0; 3];
        for j in 0..n {
            let c = self.coef[j];
            // Tuples that cannot match contribute exactly zero.
            if skip_zero && self.lambda[j] == 0.0 {
                continue;
            }
            let row = &code[j * st..(j + 1) * st];
            for a in 0..ns {
                self.shat[a] += c * row[a];
            }
            for q in 0..nq {
                self.qhat[q] += c * row[ns + q];
            }
            for d in 0..3 {
                self.dhat[d] += c * row[ns + nq + d];
            }
        }
        for a in 0..ns {
            self.a[a] = self.x * y0[a] + self.shat[a];
        }
        self.x
    }

    /// Move weights `(L, S, R)` with the empty staging mark acting as stay.
    fn moves(&self) -> (f64, f64, f64) {
        (self.dhat[0], self.dhat[1] + self.x, self.dhat[2])
    }

    fn state_forward(&self, s: &[f64], out: &mut [f64]) {
        for (q, o) in out.iter_mut().enumerate() {
            *o = self.x * s[q] + self.qhat[q];
        }
    }

    /// Reverse pass of the scan phase. Inputs are the adjoints of the new
    /// state (`s_bar_out`), of the three move weights and of `A`. Adds into
    /// the adjoints of the head cell, the old state and the code.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        lay: &CodeLayout,
        code: &[f64],
        y0: &[f64],
        s: &[f64],
        s_bar_out: &[f64],
        move_bar: (f64, f64, f64),
        a_bar: &[f64],
        y0_bar: &mut [f64],
        s_bar: &mut [f64],
        code_bar: &mut [f64],
    ) {
        let (ns, nq, st) = (lay.sigma.len(), lay.states.len(), lay.stride());
        let n = lay.n_tuples();
        let (dl_bar, ds_bar, dr_bar) = move_bar;
        let mut x_bar = ds_bar;
        for q in 0..nq {
            x_bar += s_bar_out[q] * s[q];
            s_bar[q] += self.x * s_bar_out[q];
        }
        for a in 0..ns {
            x_bar += a_bar[a] * y0[a];
            y0_bar[a] += self.x * a_bar[a];
        }
        let dhat_bar = [dl_bar, ds_bar, dr_bar];
        // Adjoint of the running product P_{j-1} = (1 - λ_j) P_j, starting
        // from P_{-1} = x.
        let mut p_prev_bar = x_bar;
        for j in 0..n {
            let row = &code[j * st..(j + 1) * st];
            let row_bar = &mut code_bar[j * st..(j + 1) * st];
            let c = self.coef[j];
            let mut c_bar = 0.0;
            for a in 0..ns {
                c_bar += a_bar[a] * row[a];
                row_bar[a] += c * a_bar[a];
            }
            for q in 0..nq {
                c_bar += s_bar_out[q] * row[ns + q];
                row_bar[ns + q] += c * s_bar_out[q];
            }
            for d in 0..3 {
                c_bar += dhat_bar[d] * row[ns + nq + d];
                row_bar[ns + nq + d] += c * dhat_bar[d];
            }
            let (l, p) = (self.lambda[j], self.suffix[j]);
            let l_bar = c_bar * p - p_prev_bar * p;
            p_prev_bar = c_bar * l + p_prev_bar * (1.0 - l);
            let (a, q) = (j / nq, j % nq);
            y0_bar[a] += l_bar * s[q];
            s_bar[q] += l_bar * y0[a];
        }
    }
}

/// Work-tape update of one cycle. `y` stores rows for cells
/// `[in_lo, in_lo + rows)`, anything outside is blank; the output covers
/// `[out_lo, out_hi]`.
#[allow(clippy::too_many_arguments)]
fn tape_forward(
    ns: usize,
    blank: usize,
    y: &[f64],
    in_lo: isize,
    out_lo: isize,
    out_hi: isize,
    sc: &Scratch,
    out: &mut Vec<f64>,
) {
    let rows = (y.len() / ns) as isize;
    let (dl, ds, dr) = sc.moves();
    out.clear();
    let cell = |u: isize, a: usize| -> f64 {
        let r = u - in_lo;
        if r < 0 || r >= rows {
            (a == blank) as u8 as f64
        } else {
            y[r as usize * ns + a]
        }
    };
    for u in out_lo..=out_hi {
        for a in 0..ns {
            let l = if u == 1 { sc.a[a] } else { cell(u - 1, a) };
            let s = if u == 0 { sc.a[a] } else { cell(u, a) };
            let r = if u == -1 { sc.a[a] } else { cell(u + 1, a) };
            out.push(dl * l + ds * s + dr * r);
        }
    }
}

/// Reverse of [`tape_forward`]. Adds into `y_bar` (same shape as `y`) and
/// `a_bar`, and returns the adjoints of the move weights.
#[allow(clippy::too_many_arguments)]
fn tape_backward(
    ns: usize,
    blank: usize,
    y: &[f64],
    in_lo: isize,
    out_lo: isize,
    g: &[f64],
    sc: &Scratch,
    y_bar: &mut [f64],
    a_bar: &mut [f64],
) -> (f64, f64, f64) {
    let rows = (y.len() / ns) as isize;
    let (dl, ds, dr) = sc.moves();
    let (mut dl_bar, mut ds_bar, mut dr_bar) = (0.0, 0.0, 0.0);
    let out_rows = g.len() / ns;
    for k in 0..out_rows {
        let u = out_lo + k as isize;
        for a in 0..ns {
            let gi = g[k * ns + a];
            if gi == 0.0 {
                continue;
            }
            for (offset, weight, bar) in [(-1isize, dl, &mut dl_bar), (0, ds, &mut ds_bar), (1, dr, &mut dr_bar)] {
                let src = u + offset;
                if src == 0 {
                    *bar += gi * sc.a[a];
                    a_bar[a] += weight * gi;
                } else {
                    let r = src - in_lo;
                    if r < 0 || r >= rows {
                        *bar += gi * ((a == blank) as u8 as f64);
                    } else {
                        let idx = r as usize * ns + a;
                        *bar += gi * y[idx];
                        y_bar[idx] += weight * gi;
                    }
                }
            }
        }
    }
    (dl_bar, ds_bar, dr_bar)
}

fn check_config(w: &CodeParameter, c: &SmoothConfig) -> Result<()> {
    let lay = &w.layout;
    if c.sigma() != &lay.sigma || c.states() != &lay.states {
        return Err(Error::AlphabetMismatch {
            expected: lay.describe(),
            found: format!("Σ={} Q={}", c.sigma(), c.states()),
        });
    }
    Ok(())
}

fn flat_cells(c: &SmoothConfig) -> Vec<f64> {
    let (lo, hi) = c.range();
    (lo..=hi).flat_map(|u| c.cell_weights(u).expect("in range").to_vec()).collect()
}

fn is_blank_row(row: &[f64], blank: usize) -> bool {
    row.iter().enumerate().all(|(i, &p)| i == blank || p == 0.0)
}

/// One full UTM period collapsed into a single update of the work tape and
/// state. The window of `work` is kept; non-blank mass that would be shifted
/// out of it is reported as [`Error::WindowOverflow`].
pub fn direct_cycle(work: &SmoothConfig, w: &CodeParameter) -> Result<SmoothConfig> {
    check_config(w, work)?;
    cycle_on_config(work, w, 0)
}

fn cycle_on_config(work: &SmoothConfig, w: &CodeParameter, done: usize) -> Result<SmoothConfig> {
    let lay = &w.layout;
    let ns = lay.sigma.len();
    let (lo, hi) = work.range();
    let y = flat_cells(work);
    let mut sc = Scratch::new(lay);
    sc.forward(lay, &w.data, work.cell_weights(0).expect("head cell"), work.state_weights());
    let (dl, _, dr) = sc.moves();
    let rows = y.len() / ns;
    if (dl > 0.0 && !is_blank_row(&y[(rows - 1) * ns..], lay.blank)) || (dr > 0.0 && !is_blank_row(&y[..ns], lay.blank))
    {
        return Err(Error::WindowOverflow { steps: done + 1 });
    }
    let mut cells = Vec::with_capacity(y.len());
    tape_forward(ns, lay.blank, &y, lo, lo, hi, &sc, &mut cells);
    let mut state = vec![0.0; lay.states.len()];
    sc.state_forward(work.state_weights(), &mut state);
    let mut out = work.clone();
    for (k, u) in (lo..=hi).enumerate() {
        out.set_cell(u, &Dist::from_raw(lay.sigma.clone(), cells[k * ns..(k + 1) * ns].to_vec()))?;
    }
    out.set_state(&Dist::from_raw(lay.states.clone(), state))?;
    Ok(out)
}

/// `t` direct cycles on a fixed window.
pub fn direct_run(work: &SmoothConfig, w: &CodeParameter, t: usize) -> Result<SmoothConfig> {
    check_config(w, work)?;
    let mut cur = work.clone();
    for s in 0..t {
        cur = cycle_on_config(&cur, w, s)?;
    }
    Ok(cur)
}

/// Adjoint of a configuration: one entry per stored cell weight (window
/// order) and per state weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigCotangent {
    pub cells: Vec<f64>,
    pub state: Vec<f64>,
}

impl ConfigCotangent {
    pub fn zeros(c: &SmoothConfig) -> Self {
        let (lo, hi) = c.range();
        Self { cells: vec![0.0; (hi - lo + 1) as usize * c.sigma().len()], state: vec![0.0; c.states().len()] }
    }
}

/// Vector-Jacobian product of [`direct_cycle`].
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGradient {
    /// Adjoint over every flat code entry.
    pub code: Vec<f64>,
    /// Adjoint over the free coordinates of the code.
    pub free: Vec<f64>,
    pub input: ConfigCotangent,
}

/// Reverse-mode gradient of `⟨cotangent, direct_cycle(work, w)⟩`.
pub fn direct_cycle_gradient(
    work: &SmoothConfig,
    w: &CodeParameter,
    cotangent: &ConfigCotangent,
) -> Result<CycleGradient> {
    check_config(w, work)?;
    direct_cycle(work, w)?;
    let lay = &w.layout;
    let ns = lay.sigma.len();
    let (lo, _) = work.range();
    let y = flat_cells(work);
    if cotangent.cells.len() != y.len() || cotangent.state.len() != lay.states.len() {
        return Err(Error::InvalidParameter("cotangent shape does not match the configuration".into()));
    }
    let mut sc = Scratch::new(lay);
    let y0 = work.cell_weights(0).expect("head cell");
    sc.forward(lay, &w.data, y0, work.state_weights());
    let mut y_bar = vec![0.0; y.len()];
    let mut a_bar = vec![0.0; ns];
    let moves = tape_backward(ns, lay.blank, &y, lo, lo, &cotangent.cells, &sc, &mut y_bar, &mut a_bar);
    let mut y0_bar = vec![0.0; ns];
    let mut s_bar = vec![0.0; lay.states.len()];
    let mut code_bar = vec![0.0; lay.flat_len()];
    sc.backward(
        lay,
        &w.data,
        y0,
        work.state_weights(),
        &cotangent.state,
        moves,
        &a_bar,
        &mut y0_bar,
        &mut s_bar,
        &mut code_bar,
    );
    let head_row = (-lo) as usize;
    for a in 0..ns {
        y_bar[head_row * ns + a] += y0_bar[a];
    }
    Ok(CycleGradient {
        free: lay.free_gradient(&code_bar),
        code: code_bar,
        input: ConfigCotangent { cells: y_bar, state: s_bar },
    })
}

/// `log p(y | x, w)` with its clamp flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProb {
    pub value: f64,
    /// True when the probability was below [`LOG_CLAMP`].
    pub clamped: bool,
}

/// Evaluates `Δstep^t(x, w)` for many inputs with reusable buffers.
///
/// Only cells that can still influence the final state are simulated: the
/// input tape of cycle `s` covers `[-(t - s), t - s]`, so nothing can be
/// pushed out of the window and the result is exact.
#[derive(Debug, Clone)]
pub struct Simulator {
    layout: Arc<CodeLayout>,
    t: usize,
    tapes: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    caches: Vec<Scratch>,
    g_cur: Vec<f64>,
    g_next: Vec<f64>,
    a_bar: Vec<f64>,
    y0_bar: Vec<f64>,
    s_bar: Vec<f64>,
    s_bar_next: Vec<f64>,
}

impl Simulator {
    pub fn new(layout: Arc<CodeLayout>, t: usize) -> Self {
        let (ns, nq) = (layout.sigma.len(), layout.states.len());
        let tapes = (0..=t).map(|s| Vec::with_capacity((2 * (t - s) + 1) * ns)).collect();
        let states = vec![vec![0.0; nq]; t + 1];
        let caches = vec![Scratch::new(&layout); t];
        Self {
            t,
            tapes,
            states,
            caches,
            g_cur: Vec::new(),
            g_next: Vec::new(),
            a_bar: vec![0.0; ns],
            y0_bar: vec![0.0; ns],
            s_bar: vec![0.0; nq],
            s_bar_next: vec![0.0; nq],
            layout,
        }
    }

    pub fn layout(&self) -> &Arc<CodeLayout> {
        &self.layout
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    fn check(&self, code: &[f64], x: &[usize]) -> Result<()> {
        if code.len() != self.layout.flat_len() {
            return Err(Error::InvalidParameter("code has the wrong length".into()));
        }
        if let Some(&bad) = x.iter().find(|&&a| a >= self.layout.sigma.len()) {
            return Err(Error::InvalidParameter(format!("input symbol index {bad} out of range")));
        }
        Ok(())
    }

    /// Runs all cycles and returns the final state distribution.
    pub fn forward(&mut self, code: &[f64], x: &[usize]) -> Result<&[f64]> {
        self.check(code, x)?;
        let lay = &*self.layout;
        let (ns, blank, t) = (lay.sigma.len(), lay.blank, self.t);
        let start = x.iter().position(|&a| a != blank).unwrap_or(0);
        let tape = &mut self.tapes[0];
        tape.clear();
        for u in -(t as isize)..=(t as isize) {
            let i = start as isize + u;
            let sym = if i >= 0 && (i as usize) < x.len() { x[i as usize] } else { blank };
            tape.extend((0..ns).map(|a| (a == sym) as u8 as f64));
        }
        self.states[0].iter_mut().enumerate().for_each(|(q, p)| *p = (q == lay.initial) as u8 as f64);
        for s in 0..t {
            let r = (t - s) as isize;
            let (done, rest) = self.tapes.split_at_mut(s + 1);
            let (y, out) = (&done[s], &mut rest[0]);
            let (sdone, srest) = self.states.split_at_mut(s + 1);
            let sc = &mut self.caches[s];
            sc.forward(lay, code, &y[r as usize * ns..(r as usize + 1) * ns], &sdone[s]);
            sc.state_forward(&sdone[s], &mut srest[0]);
            tape_forward(ns, blank, y, -r, -(r - 1), r - 1, sc, out);
        }
        Ok(&self.states[t])
    }

    /// `Δstep^t(x, w)` as a distribution.
    pub fn state_dist(&mut self, w: &CodeParameter, x: &[usize]) -> Result<Dist> {
        let states = self.layout.states.clone();
        Ok(Dist::from_raw(states, self.forward(&w.data, x)?.to_vec()))
    }

    /// Largest deviation from unit mass over all intermediate cells and
    /// states of the last forward pass.
    pub fn trace_mass_error(&self) -> f64 {
        let ns = self.layout.sigma.len();
        let tapes = self.tapes.iter().take(self.t).flat_map(|t| t.chunks(ns));
        tapes
            .chain(self.states.iter().map(Vec::as_slice))
            .map(|w| (w.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest weight over all intermediate cells and states.
    pub fn trace_min_weight(&self) -> f64 {
        self.tapes.iter().take(self.t).chain(&self.states).flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// `log p(y | x, w)` with the probability clamped at [`LOG_CLAMP`].
    pub fn log_prob(&mut self, code: &[f64], x: &[usize], y: usize) -> Result<LogProb> {
        let p = self.forward(code, x)?[y];
        Ok(clamped_log(p))
    }

    /// Like [`Simulator::log_prob`], also adding `weight · ∇ log p` over all
    /// flat code entries into `grad`. The gradient is zero when clamped.
    pub fn log_prob_grad(
        &mut self,
        code: &[f64],
        x: &[usize],
        y: usize,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<LogProb> {
        let p = self.forward(code, x)?[y];
        let lp = clamped_log(p);
        if lp.clamped || weight == 0.0 {
            return Ok(lp);
        }
        let mut s_bar = std::mem::take(&mut self.s_bar_next);
        s_bar.iter_mut().for_each(|v| *v = 0.0);
        s_bar[y] = weight / p;
        self.backward(code, s_bar, grad);
        Ok(lp)
    }

    /// Adds the vector-Jacobian product of the final state with `s_bar`.
    fn backward(&mut self, code: &[f64], mut s_bar_out: Vec<f64>, grad: &mut [f64]) {
        let lay = &*self.layout;
        let (ns, blank, t) = (lay.sigma.len(), lay.blank, self.t);
        self.g_next.clear();
        for s in (0..t).rev() {
            let r = (t - s) as isize;
            let y = &self.tapes[s];
            let sc = &self.caches[s];
            self.g_cur.clear();
            self.g_cur.resize(y.len(), 0.0);
            self.a_bar.iter_mut().for_each(|v| *v = 0.0);
            self.y0_bar.iter_mut().for_each(|v| *v = 0.0);
            self.s_bar.iter_mut().for_each(|v| *v = 0.0);
            let moves = if self.g_next.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                tape_backward(ns, blank, y, -r, -(r - 1), &self.g_next, sc, &mut self.g_cur, &mut self.a_bar)
            };
            let head = r as usize * ns;
            sc.backward(
                lay,
                code,
                &y[head..head + ns],
                &self.states[s],
                &s_bar_out,
                moves,
                &self.a_bar,
                &mut self.y0_bar,
                &mut self.s_bar,
                grad,
            );
            for a in 0..ns {
                self.g_cur[head + a] += self.y0_bar[a];
            }
            std::mem::swap(&mut self.g_cur, &mut self.g_next);
            s_bar_out.copy_from_slice(&self.s_bar);
        }
        self.s_bar_next = s_bar_out;
    }
}

fn clamped_log(p: f64) -> LogProb {
    if p >= LOG_CLAMP {
        LogProb { value: p.ln(), clamped: false }
    } else {
        LogProb { value: LOG_CLAMP.ln(), clamped: true }
    }
}

/// `Δstep^t(x, w)`: the state distribution after `t` direct cycles started
/// from `x` with the head on its leftmost non-blank cell.
pub fn delta_step_t(x: &[usize], w: &CodeParameter, t: usize) -> Result<Dist> {
    Simulator::new(w.layout.clone(), t).state_dist(w, x)
}

/// Control states of the classical staged UTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtmState {
    CompSymbol,
    CompState,
    CopySymbol,
    CopyState,
    CopyDir,
    NotCompState,
    NotCopySymbol,
    NotCopyState,
    NotCopyDir,
    UpdateSymbol,
    UpdateState,
    UpdateDir,
    ResetDescr,
}

/// Period of the staged UTM for `n` description tuples.
pub fn utm_period(n: usize) -> usize {
    10 * n + 5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DescCell {
    Mark,
    Symbol(usize),
    State(usize),
    Move(Direction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageCell {
    Mark,
    Symbol(usize),
    State(usize),
    Move(Direction),
}

/// Outcome of a classical staged UTM run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceRun {
    /// Simulated machine state after `t` cycles.
    pub state: usize,
    pub utm_steps: usize,
    pub period: usize,
    /// Description-head position after every UTM step.
    pub desc_head: Vec<usize>,
}

/// Runs the classical staged pseudo-UTM for `t` full cycles on a vertex code.
///
/// Each cycle scans the description tape left to right. Every tuple takes
/// five steps: compare symbol, compare state, then copy the new symbol,
/// state and move to the staging tape if both matched (or skip them
/// otherwise). At the closing mark the staged symbol, state and move are
/// applied to the work tape and state tape, the staging tape is reset, and
/// the description head returns to the opening mark. A cycle starts in
/// `compSymbol` with the description head on the first tuple.
pub fn utm_reference_run(w: &CodeParameter, x: &[usize], t: usize) -> Result<ReferenceRun> {
    let table = w.decode()?;
    let lay = &w.layout;
    let n = lay.n_tuples();
    let period = utm_period(n);

    let mut desc = vec![DescCell::Mark];
    for i in 0..n {
        let (a, q) = lay.tuple(i);
        let tr = table.get(a, q);
        desc.extend([
            DescCell::Symbol(a),
            DescCell::State(q),
            DescCell::Symbol(tr.write),
            DescCell::State(tr.next),
            DescCell::Move(tr.dir),
        ]);
    }
    desc.push(DescCell::Mark);

    let mut stage = [StageCell::Mark; 3];
    let mut stage_head = 1usize;
    let mut sim_state = lay.initial;
    let mut work = TapeConfig::for_input(&table, x, t);
    let mut dh = 1usize;
    let mut ctrl = UtmState::CompSymbol;
    let mut desc_head = Vec::with_capacity(t * period);

    let bad = |msg: &str| Error::UtmInvariant(msg.to_string());
    for step in 0..t * period {
        if step % period == 0 && (ctrl != UtmState::CompSymbol || dh != 1) {
            return Err(bad("cycle did not restart in compSymbol on the first tuple"));
        }
        let cell = desc[dh];
        use UtmState::*;
        let (next, mv): (UtmState, isize) = match (ctrl, cell) {
            (CompSymbol, DescCell::Mark) => {
                stage_head -= 1;
                (UpdateSymbol, 0)
            }
            (CompSymbol, DescCell::Symbol(a)) => (if a == work.read() { CompState } else { NotCompState }, 1),
            (CompState, DescCell::State(q)) => {
                if q == sim_state {
                    stage_head -= 1;
                    (CopySymbol, 1)
                } else {
                    (NotCopySymbol, 1)
                }
            }
            (NotCompState, DescCell::State(_)) => (NotCopySymbol, 1),
            (CopySymbol, DescCell::Symbol(a)) => {
                stage[stage_head] = StageCell::Symbol(a);
                stage_head += 1;
                (CopyState, 1)
            }
            (NotCopySymbol, DescCell::Symbol(_)) => (NotCopyState, 1),
            (CopyState, DescCell::State(q)) => {
                stage[stage_head] = StageCell::State(q);
                stage_head += 1;
                (CopyDir, 1)
            }
            (NotCopyState, DescCell::State(_)) => (NotCopyDir, 1),
            (CopyDir, DescCell::Move(d)) => {
                stage[stage_head] = StageCell::Move(d);
                stage_head -= 1;
                (CompSymbol, 1)
            }
            (NotCopyDir, DescCell::Move(_)) => (CompSymbol, 1),
            (UpdateSymbol, DescCell::Mark) => {
                if let StageCell::Symbol(a) = stage[stage_head] {
                    work.cells[work.head] = a;
                }
                stage[stage_head] = StageCell::Mark;
                stage_head += 1;
                (UpdateState, 0)
            }
            (UpdateState, DescCell::Mark) => {
                if let StageCell::State(q) = stage[stage_head] {
                    sim_state = q;
                }
                stage[stage_head] = StageCell::Mark;
                stage_head += 1;
                (UpdateDir, 0)
            }
            (UpdateDir, DescCell::Mark) => {
                if let StageCell::Move(d) = stage[stage_head] {
                    let pos = work.head as isize + d.offset();
                    if pos < 0 || pos as usize >= work.cells.len() {
                        return Err(Error::WindowOverflow { steps: step + 1 });
                    }
                    work.head = pos as usize;
                }
                stage[stage_head] = StageCell::Mark;
                stage_head -= 1;
                (ResetDescr, -1)
            }
            (ResetDescr, DescCell::Mark) => (CompSymbol, 1),
            (ResetDescr, _) => (ResetDescr, -1),
            (state, cell) => return Err(Error::UtmInvariant(format!("no UTM transition for {state:?} on {cell:?}"))),
        };
        ctrl = next;
        dh = (dh as isize + mv) as usize;
        desc_head.push(dh);
    }
    if t > 0 && (ctrl != UtmState::CompSymbol || dh != 1 || stage != [StageCell::Mark; 3] || stage_head != 1) {
        return Err(bad("final configuration is not the start of a cycle"));
    }
    for k in period..desc_head.len() {
        if desc_head[k] != desc_head[k - period] {
            return Err(bad("description head is not periodic"));
        }
    }
    Ok(ReferenceRun { state: sim_state, utm_steps: t * period, period, desc_head })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::machines::{self, detect_a_solution, parity_check_solution, stay_machine};
    use crate::smoothstep::smooth_step;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(rng: &mut impl Rng, k: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    pub(crate) fn random_code(layout: &Arc<CodeLayout>, rng: &mut impl Rng) -> CodeParameter {
        let mut data = vec![0.0; layout.flat_len()];
        for (off, k) in layout.simplices() {
            data[off..off + k].copy_from_slice(&random_dist(rng, k));
        }
        CodeParameter::from_flat(layout.clone(), data).unwrap()
    }

    #[test]
    fn dimensions_match_the_examples() {
        assert_eq!(CodeParameter::encode(&detect_a_solution()).layout().dim(), 30);
        assert_eq!(CodeParameter::encode(&parity_check_solution()).layout().dim(), 240);
    }

    #[test]
    fn encode_decode_round_trips() {
        for m in [detect_a_solution(), parity_check_solution(), machines::shift_machine()] {
            let w = CodeParameter::encode(&m);
            let back = w.decode().unwrap();
            assert_eq!(back.transitions(), m.transitions());
            assert_eq!(back.initial(), m.initial());
        }
        let u = CodeParameter::uniform(CodeLayout::of_table(&detect_a_solution()));
        assert!(matches!(u.decode(), Err(Error::NotVertex(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lay = CodeLayout::of_table(&parity_check_solution());
        let w = random_code(&lay, &mut rng);
        let back = CodeParameter::from_checkpoint(&w.to_checkpoint()).unwrap();
        assert_eq!(back, w);
        assert!(back.flat().iter().zip(w.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_errors_carry_lines() {
        let w = CodeParameter::encode(&detect_a_solution());
        let text = w.to_checkpoint().replace("tuple A reject | 0.0 1.0 0.0", "tuple A reject | 0.0 one 0.0");
        assert!(matches!(CodeParameter::from_checkpoint(&text), Err(Error::Parse { line, .. }) if line > 0));
    }

    #[test]
    fn vertex_cycle_is_classical_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [detect_a_solution(), parity_check_solution()] {
            let w = CodeParameter::encode(&m);
            for _ in 0..20 {
                let len = rng.gen_range(0..6);
                let x: Vec<usize> = (0..len).map(|_| rng.gen_range(1..3)).collect();
                let c = SmoothConfig::for_input(&m, &x, 30);
                let mut a = c.clone();
                let mut b = c.clone();
                for _ in 0..30 {
                    a = direct_cycle(&a, &w).unwrap();
                    b = smooth_step(&m, &b).unwrap();
                    assert_eq!(a.max_abs_diff(&b), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_tuple_base_case() {
        let sigma = Alphabet::new(["□"]).unwrap();
        let states = Alphabet::new(["q"]).unwrap();
        let lay = CodeLayout::new(sigma.clone(), states.clone(), 0, 0).unwrap();
        let w = CodeParameter::uniform(lay);
        let y0 = Dist::vertex(sigma.clone(), 0);
        let s = Dist::vertex(states, 0);
        let st = staging_closed_form(&w, &y0, &s).unwrap();
        // λ₁ = 1 and the empty product is 1
        assert_eq!(st.s_hat.weights(), &[1.0, 0.0]);
        assert_eq!(st.d_hat.weights(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn staging_closed_form_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [detect_a_solution(), parity_check_solution()] {
            let lay = CodeLayout::of_table(&m);
            for _ in 0..100 {
                let w = random_code(&lay, &mut rng);
                let y0 = Dist::new(lay.sigma().clone(), random_dist(&mut rng, lay.sigma().len())).unwrap();
                let s = Dist::new(lay.states().clone(), random_dist(&mut rng, lay.states().len())).unwrap();
                let a = staging_closed_form(&w, &y0, &s).unwrap();
                let b = staging_recursive(&w, &y0, &s).unwrap();
                for (p, q) in [(&a.s_hat, &b.s_hat), (&a.q_hat, &b.q_hat), (&a.d_hat, &b.d_hat)] {
                    for (x, y) in p.weights().iter().zip(q.weights()) {
                        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
                    }
                }
                let total: f64 = match_weights(&w, &y0, &s).unwrap().iter().sum();
                assert!((total - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn skipping_unmatched_tuples_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lay = CodeLayout::of_table(&parity_check_solution());
        for _ in 0..50 {
            let w = random_code(&lay, &mut rng);
            let mut y0 = vec![0.0; 4];
            y0[rng.gen_range(0..4)] = 1.0;
            let s = random_dist(&mut rng, 6);
            let mut fast = Scratch::new(&lay);
            let mut slow = Scratch::new(&lay);
            fast.forward_impl(&lay, w.flat(), &y0, &s, true);
            slow.forward_impl(&lay, w.flat(), &y0, &s, false);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&fast.shat), bits(&slow.shat));
            assert_eq!(bits(&fast.qhat), bits(&slow.qhat));
            assert_eq!(bits(&fast.dhat), bits(&slow.dhat));
            assert_eq!(bits(&fast.a), bits(&slow.a));
        }
    }

    #[test]
    fn light_cone_simulator_matches_full_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = detect_a_solution();
        let lay = CodeLayout::of_table(&m);
        for _ in 0..20 {
            let w = random_code(&lay, &mut rng);
            let x: Vec<usize> = (0..rng.gen_range(0..8)).map(|_| rng.gen_range(1..3)).collect();
            let t = 10;
            let full = direct_run(&SmoothConfig::for_input(&m, &x, t), &w, t).unwrap();
            let fast = delta_step_t(&x, &w, t).unwrap();
            for (a, b) in full.state_weights().iter().zip(fast.weights()) {
                assert!((a - b).abs() <= 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stay_code_keeps_initial_state() {
        let d = detect_a_solution();
        let w = CodeParameter::encode(&stay_machine(d.sigma().clone(), d.states().clone()));
        for t in 0..5 {
            let out = delta_step_t(&[1, 2], &w, t).unwrap();
            assert_eq!(out.weights(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn uniform_code_output_has_entropy() {
        let lay = CodeLayout::of_table(&detect_a_solution());
        let out = delta_step_t(&[2, 1, 2], &CodeParameter::uniform(lay), 10).unwrap();
        assert!((out.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(crate::probkit::entropy(&out) > 0.0);
    }

    #[test]
    fn reference_utm_agrees_with_classical_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (m, t) in [(detect_a_solution(), 10), (parity_check_solution(), 42)] {
            let w = CodeParameter::encode(&m);
            for _ in 0..10 {
                let x: Vec<usize> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(1..3)).collect();
                let r = utm_reference_run(&w, &x, t).unwrap();
                assert_eq!(r.state, machines::final_state(&m, &x, t).unwrap());
                assert_eq!(r.period, utm_period(m.sigma().len() * m.states().len()));
            }
        }
    }

    #[test]
    fn reference_utm_zero_steps_and_period() {
        let m = detect_a_solution();
        let w = CodeParameter::encode(&m);
        let r0 = utm_reference_run(&w, &[1, 2], 0).unwrap();
        assert_eq!(r0.state, m.initial());
        let r = utm_reference_run(&w, &[2, 1], 10).unwrap();
        assert_eq!(r.period, 65);
        // the head comes back to the opening mark once per cycle, on the
        // last step before the cycle restarts
        let at_mark: Vec<usize> =
            (0..r.desc_head.len()).filter(|&k| r.desc_head[k] == 1 && (k + 1) % 65 == 0).collect();
        assert_eq!(at_mark.len(), 10);
        assert!(utm_reference_run(&CodeParameter::uniform(w.layout().clone()), &[1], 1).is_err());
    }

    #[test]
    fn log_volume_of_detect_a() {
        // 6 tuples × (1/2! · 1/1! · 1/2!)
        let lay = CodeLayout::of_table(&detect_a_solution());
        assert!((lay.log_volume() - 6.0 * (0.25f64).ln()).abs() < 1e-12);
    }

    fn fd_check(w: &CodeParameter, x: &[usize], y: usize, t: usize) -> f64 {
        let lay = w.layout().clone();
        let mut sim = Simulator::new(lay.clone(), t);
        let mut grad = vec![0.0; lay.flat_len()];
        sim.log_prob_grad(w.flat(), x, y, 1.0, &mut grad).unwrap();
        let free = lay.free_gradient(&grad);
        let mut worst: f64 = 0.0;
        let mut idx = 0;
        for (off, k) in lay.simplices() {
            for m in 0..k - 1 {
                let h = 1e-6;
                let mut plus = w.flat().to_vec();
                let mut minus = w.flat().to_vec();
                plus[off + m] += h;
                plus[off + k - 1] -= h;
                minus[off + m] -= h;
                minus[off + k - 1] += h;
                let fp = sim.log_prob(&plus, x, y).unwrap().value;
                let fm = sim.log_prob(&minus, x, y).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - free[idx]).abs() / fd.abs().max(free[idx].abs()).max(1e-6);
                worst = worst.max(err);
                idx += 1;
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lay = CodeLayout::of_table(&detect_a_solution());
        for _ in 0..5 {
            let w = random_code(&lay, &mut rng);
            let x: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(1..3)).collect();
            let err = fd_check(&w, &x, rng.gen_range(0..2), 6);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn cycle_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = detect_a_solution();
        let lay = CodeLayout::of_table(&m);
        let w = random_code(&lay, &mut rng);
        let mut c = SmoothConfig::for_input(&m, &[2, 1, 2], 3);
        c.set_state(&Dist::new(lay.states().clone(), random_dist(&mut rng, 2)).unwrap()).unwrap();
        let mut cot = ConfigCotangent::zeros(&c);
        cot.cells.iter_mut().for_each(|v| *v = rng.gen::<f64>() - 0.5);
        cot.state.iter_mut().for_each(|v| *v = rng.gen::<f64>() - 0.5);
        let g = direct_cycle_gradient(&c, &w, &cot).unwrap();
        let objective = |code: &CodeParameter| -> f64 {
            let out = direct_cycle(&c, code).unwrap();
            let cells = flat_cells(&out);
            cells.iter().zip(&cot.cells).map(|(a, b)| a * b).sum::<f64>()
                + out.state_weights().iter().zip(&cot.state).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..lay.flat_len() {
            let h = 1e-6;
            let mut plus = w.clone();
            plus.flat_mut()[i] += h;
            let mut minus = w.clone();
            minus.flat_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((fd - g.code[i]).abs() <= 1e-7, "entry {i}: {fd} vs {}", g.code[i]);
        }
    }

    #[test]
    fn unreachable_tuple_has_zero_gradient() {
        // Under the detectA solution from "B", the state never leaves reject
        // before the blank, so tuples with the accept state never match.
        let m = detect_a_solution();
        let w = CodeParameter::encode(&m);
        let lay = w.layout().clone();
        let mut sim = Simulator::new(lay.clone(), 10);
        let mut grad = vec![0.0; lay.flat_len()];
        let reject = lay.states().index_of("reject").unwrap();
        sim.log_prob_grad(w.flat(), &[2, 2], reject, 1.0, &mut grad).unwrap();
        let accept = lay.states().index_of("accept").unwrap();
        for a in 0..3 {
            let i = lay.tuple_index(a, accept);
            let st = lay.stride();
            assert!(grad[i * st..(i + 1) * st].iter().all(|&g| g == 0.0));
        }
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
