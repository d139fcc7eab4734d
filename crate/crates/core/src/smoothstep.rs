//! Smooth relaxation of a single-tape Turing machine.
//!
//! A [`SmoothConfig`] holds one distribution per tape cell and one over
//! states. [`smooth_step`] propagates these under the assumption that the
//! symbol under the head and the current state are independent, which is
//! the naive Bayesian observer. Restricted to vertex configurations it is
//! the classical step.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::machines::{TapeConfig, TransitionTable};
use crate::probkit::{Alphabet, Dist};

/// Tape of symbol distributions in head-relative coordinates plus a state
/// distribution. Cell `u` lives at offset `u` from the head; cells outside
/// the window `[-left, right]` are the blank vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothConfig {
    sigma: Arc<Alphabet>,
    states: Arc<Alphabet>,
    blank: usize,
    left: usize,
    cells: Vec<f64>,
    state: Vec<f64>,
}

impl SmoothConfig {
    /// A blank tape spanning `[-left, right]` around the head. Both margins
    /// are raised to at least one cell so a write never lands outside.
    pub fn blank(
        sigma: Arc<Alphabet>,
        states: Arc<Alphabet>,
        blank: usize,
        left: usize,
        right: usize,
        state: &Dist,
    ) -> Result<Self> {
        check_alphabet(&states, state)?;
        let (left, right) = (left.max(1), right.max(1));
        let ns = sigma.len();
        let mut cells = vec![0.0; (left + 1 + right) * ns];
        for row in cells.chunks_mut(ns) {
            row[blank] = 1.0;
        }
        Ok(Self { sigma, states, blank, left, cells, state: state.weights().to_vec() })
    }

    /// Embeds a classical configuration.
    pub fn from_tape(table: &TransitionTable, c: &TapeConfig) -> Self {
        let ns = table.sigma().len();
        let left = c.head.max(1);
        let right = (c.cells.len() - 1 - c.head).max(1);
        let mut out = Self::blank(
            table.sigma().clone(),
            table.states().clone(),
            table.blank(),
            left,
            right,
            &Dist::vertex(table.states().clone(), c.state),
        )
        .expect("alphabets come from the table");
        for (i, &s) in c.cells.iter().enumerate() {
            let row = out.left + i - c.head;
            let w = &mut out.cells[row * ns..(row + 1) * ns];
            w.iter_mut().for_each(|x| *x = 0.0);
            w[s] = 1.0;
        }
        out
    }

    /// The vertex configuration for `input` sized for a run of `t` steps.
    pub fn for_input(table: &TransitionTable, input: &[usize], t: usize) -> Self {
        Self::from_tape(table, &TapeConfig::for_input(table, input, t))
    }

    pub fn sigma(&self) -> &Arc<Alphabet> {
        &self.sigma
    }

    pub fn states(&self) -> &Arc<Alphabet> {
        &self.states
    }

    pub fn blank_symbol(&self) -> usize {
        self.blank
    }

    /// Inclusive head-relative bounds of the stored window.
    pub fn range(&self) -> (isize, isize) {
        let width = self.cells.len() / self.sigma.len();
        (-(self.left as isize), (width - 1 - self.left) as isize)
    }

    /// Stored weights of cell `u`, or `None` outside the window.
    pub fn cell_weights(&self, u: isize) -> Option<&[f64]> {
        let (lo, hi) = self.range();
        if u < lo || u > hi {
            return None;
        }
        let ns = self.sigma.len();
        let row = (u - lo) as usize;
        Some(&self.cells[row * ns..(row + 1) * ns])
    }

    pub fn cell(&self, u: isize) -> Dist {
        match self.cell_weights(u) {
            Some(w) => Dist::from_raw(self.sigma.clone(), w.to_vec()),
            None => Dist::vertex(self.sigma.clone(), self.blank),
        }
    }

    pub fn set_cell(&mut self, u: isize, d: &Dist) -> Result<()> {
        check_alphabet(&self.sigma, d)?;
        let (lo, hi) = self.range();
        if u < lo || u > hi {
            return Err(Error::InvalidParameter(format!("cell {u} outside window [{lo}, {hi}]")));
        }
        let ns = self.sigma.len();
        let row = (u - lo) as usize;
        self.cells[row * ns..(row + 1) * ns].copy_from_slice(d.weights());
        Ok(())
    }

    pub fn state(&self) -> Dist {
        Dist::from_raw(self.states.clone(), self.state.clone())
    }

    pub fn state_weights(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, d: &Dist) -> Result<()> {
        check_alphabet(&self.states, d)?;
        self.state.copy_from_slice(d.weights());
        Ok(())
    }

    /// Largest deviation from unit mass over the state and all cells.
    pub fn mass_error(&self) -> f64 {
        let ns = self.sigma.len();
        self.cells
            .chunks(ns)
            .chain(std::iter::once(self.state.as_slice()))
            .map(|w| (w.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest weight anywhere in the configuration.
    pub fn min_weight(&self) -> f64 {
        self.cells.iter().chain(&self.state).copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute difference between two configurations over the
    /// union of their windows.
    pub fn max_abs_diff(&self, other: &SmoothConfig) -> f64 {
        let (a, b) = (self.range(), other.range());
        let mut worst: f64 = self.state.iter().zip(&other.state).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        for u in a.0.min(b.0)..=a.1.max(b.1) {
            let (x, y) = (self.cell(u), other.cell(u));
            for (p, q) in x.weights().iter().zip(y.weights()) {
                worst = worst.max((p - q).abs());
            }
        }
        worst
    }

    /// True when every non-blank weight of cell `u` is exactly zero.
    fn is_blank_cell(&self, u: isize) -> bool {
        match self.cell_weights(u) {
            Some(w) => w.iter().enumerate().all(|(i, &p)| i == self.blank || p == 0.0),
            None => true,
        }
    }
}

fn check_alphabet(expected: &Arc<Alphabet>, d: &Dist) -> Result<()> {
    if d.alphabet() != expected {
        return Err(Error::AlphabetMismatch { expected: expected.to_string(), found: d.alphabet().to_string() });
    }
    Ok(())
}

/// Distributions of the symbol written and the move made in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteMove {
    pub write: Dist,
    pub movement: Dist,
}

/// Write, move and next-state marginals from the product of the head cell
/// and state distributions, rescaled to unit mass.
fn marginals(table: &TransitionTable, y0: &[f64], s: &[f64]) -> (Vec<f64>, [f64; 3], Vec<f64>) {
    let (ns, nq) = (table.sigma().len(), table.states().len());
    let mut wr = vec![0.0; ns];
    let mut mv = [0.0; 3];
    let mut next = vec![0.0; nq];
    for (sym, &ps) in y0.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (q, &pq) in s.iter().enumerate() {
            let p = ps * pq;
            if p == 0.0 {
                continue;
            }
            let tr = table.get(sym, q);
            wr[tr.write] += p;
            mv[tr.dir.index()] += p;
            next[tr.next] += p;
        }
    }
    // Rounding in the total mass of the head cell and state would otherwise
    // compound geometrically, since the product doubles it every step.
    let total: f64 = mv.iter().sum();
    if total > 0.0 && total != 1.0 {
        wr.iter_mut().chain(mv.iter_mut()).chain(next.iter_mut()).for_each(|x| *x /= total);
    }
    (wr, mv, next)
}

/// The write and move distributions the next step will use.
pub fn write_move(table: &TransitionTable, c: &SmoothConfig) -> Result<WriteMove> {
    check_tables(table, c)?;
    let y0 = c.cell(0);
    let (wr, mv, _) = marginals(table, y0.weights(), &c.state);
    Ok(WriteMove {
        write: Dist::from_raw(c.sigma.clone(), wr),
        movement: Dist::from_raw(Alphabet::directions(), mv.to_vec()),
    })
}

fn check_tables(table: &TransitionTable, c: &SmoothConfig) -> Result<()> {
    for (want, got) in [(table.sigma(), &c.sigma), (table.states(), &c.states)] {
        if want != got {
            return Err(Error::AlphabetMismatch { expected: want.to_string(), found: got.to_string() });
        }
    }
    Ok(())
}

/// One step of the smooth relaxation.
pub fn smooth_step(table: &TransitionTable, c: &SmoothConfig) -> Result<SmoothConfig> {
    check_tables(table, c)?;
    step_unchecked(table, c, 0)
}

fn step_unchecked(table: &TransitionTable, c: &SmoothConfig, steps_done: usize) -> Result<SmoothConfig> {
    let ns = c.sigma.len();
    let y0 = c.cell_weights(0).expect("window contains the head");
    let (wr, mv, next) = marginals(table, y0, &c.state);
    let [pl, ps, pr] = mv;
    let (lo, hi) = c.range();
    // Under L every cell shifts one place right in head coordinates, under R
    // one place left; non-blank mass may not be pushed out of the window.
    if (pl > 0.0 && !c.is_blank_cell(hi)) || (pr > 0.0 && !c.is_blank_cell(lo)) {
        return Err(Error::WindowOverflow { steps: steps_done + 1 });
    }
    let blank_row: Vec<f64> = (0..ns).map(|i| if i == c.blank { 1.0 } else { 0.0 }).collect();
    let get = |u: isize| -> &[f64] { c.cell_weights(u).unwrap_or(&blank_row) };
    let mut cells = Vec::with_capacity(c.cells.len());
    for u in lo..=hi {
        // The written symbol sits at the old head position, which is cell 1
        // after L, 0 after S and -1 after R.
        let l = if u == 1 { &wr[..] } else { get(u - 1) };
        let s = if u == 0 { &wr[..] } else { get(u) };
        let r = if u == -1 { &wr[..] } else { get(u + 1) };
        for i in 0..ns {
            cells.push(pl * l[i] + ps * s[i] + pr * r[i]);
        }
    }
    Ok(SmoothConfig {
        sigma: c.sigma.clone(),
        states: c.states.clone(),
        blank: c.blank,
        left: c.left,
        cells,
        state: next,
    })
}

/// `t` smooth steps.
pub fn smooth_run(table: &TransitionTable, c: &SmoothConfig, t: usize) -> Result<SmoothConfig> {
    check_tables(table, c)?;
    let mut cur = c.clone();
    for s in 0..t {
        cur = step_unchecked(table, &cur, s)?;
    }
    Ok(cur)
}

/// Movement probabilities in `{L, S, R}` order, for callers that only need
/// the head motion of the next step.
pub fn move_dist(table: &TransitionTable, c: &SmoothConfig) -> Result<[f64; 3]> {
    check_tables(table, c)?;
    let (_, mv, _) = marginals(table, c.cell_weights(0).expect("head cell"), &c.state);
    Ok(mv)
}
