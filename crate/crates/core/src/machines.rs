//! Classical single-tape Turing machines and the concrete machines used by the
//! experiments: a `detectA` solution, a `parityCheck` solution, and the shift
//! machine.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::probkit::Alphabet;

/// Head movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    L,
    S,
    R,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::L, Direction::S, Direction::R];

    /// Position in the `{L, S, R}` alphabet.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn offset(self) -> isize {
        match self {
            Direction::L => -1,
            Direction::S => 0,
            Direction::R => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Direction::L => "L",
            Direction::S => "S",
            Direction::R => "R",
        };
        f.write_str(c)
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "L" | "-1" => Ok(Direction::L),
            "S" | "0" => Ok(Direction::S),
            "R" | "1" | "+1" => Ok(Direction::R),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// Output of the transition function for one `(symbol, state)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub write: usize,
    pub next: usize,
    pub dir: Direction,
}

/// A total transition function `Σ × Q → Σ × Q × {L, S, R}` together with the
/// blank symbol and the designated initial state.
#[derive(Clone, PartialEq, Eq)]
pub struct TransitionTable {
    name: String,
    sigma: Arc<Alphabet>,
    states: Arc<Alphabet>,
    blank: usize,
    initial: usize,
    /// Indexed by `symbol * |Q| + state`.
    delta: Vec<Transition>,
}

impl TransitionTable {
    pub fn new(
        name: impl Into<String>,
        sigma: Arc<Alphabet>,
        states: Arc<Alphabet>,
        blank: usize,
        initial: usize,
        delta: Vec<Transition>,
    ) -> Result<Self> {
        let (ns, nq) = (sigma.len(), states.len());
        if delta.len() != ns * nq {
            return Err(Error::InvalidTable(format!("expected {} transitions, got {}", ns * nq, delta.len())));
        }
        if blank >= ns || initial >= nq {
            return Err(Error::InvalidTable("blank or initial state out of range".into()));
        }
        for (i, tr) in delta.iter().enumerate() {
            if tr.write >= ns || tr.next >= nq {
                return Err(Error::InvalidTable(format!(
                    "transition for ({}, {}) leaves the declared alphabets",
                    sigma.symbol(i / nq),
                    states.symbol(i % nq)
                )));
            }
        }
        Ok(Self { name: name.into(), sigma, states, blank, initial, delta })
    }

    /// Builds a table from named rules. Pairs without a rule get `default`.
    pub fn from_rules<F>(
        name: &str,
        sigma: Arc<Alphabet>,
        states: Arc<Alphabet>,
        initial: &str,
        rules: &[(&str, &str, &str, &str, Direction)],
        default: F,
    ) -> Result<Self>
    where
        F: Fn(usize, usize) -> Transition,
    {
        let nq = states.len();
        let mut delta: Vec<Option<Transition>> = vec![None; sigma.len() * nq];
        for &(s, q, w, n, dir) in rules {
            let idx = sigma.index_of(s)? * nq + states.index_of(q)?;
            if delta[idx].is_some() {
                return Err(Error::InvalidTable(format!("duplicate rule for ({s}, {q})")));
            }
            delta[idx] = Some(Transition { write: sigma.index_of(w)?, next: states.index_of(n)?, dir });
        }
        let delta = delta.into_iter().enumerate().map(|(i, t)| t.unwrap_or_else(|| default(i / nq, i % nq))).collect();
        let initial = states.index_of(initial)?;
        Self::new(name, sigma, states, 0, initial, delta)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma(&self) -> &Arc<Alphabet> {
        &self.sigma
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

    pub fn get(&self, symbol: usize, state: usize) -> Transition {
        self.delta[symbol * self.states.len() + state]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.delta
    }

    /// Parses a word over Σ. Single-character alphabets are read character by
    /// character, otherwise atoms are whitespace separated. `_` is accepted
    /// for the blank symbol.
    pub fn parse_word(&self, text: &str) -> Result<Vec<usize>> {
        parse_word(&self.sigma, self.blank, text)
    }

    pub fn render_word(&self, word: &[usize]) -> String {
        render_word(&self.sigma, word)
    }
}

pub(crate) fn parse_word(sigma: &Alphabet, blank: usize, text: &str) -> Result<Vec<usize>> {
    let lookup = |atom: &str| -> Result<usize> {
        if atom == "_" && sigma.get("_").is_none() {
            return Ok(blank);
        }
        sigma.index_of(atom)
    };
    if sigma.is_single_char() {
        text.chars().filter(|c| !c.is_whitespace()).map(|c| lookup(c.encode_utf8(&mut [0; 4]))).collect()
    } else {
        text.split_whitespace().map(lookup).collect()
    }
}

pub(crate) fn render_word(sigma: &Alphabet, word: &[usize]) -> String {
    let sep = if sigma.is_single_char() { "" } else { " " };
    word.iter().map(|&s| sigma.symbol(s)).collect::<Vec<_>>().join(sep)
}

impl fmt::Debug for TransitionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TransitionTable({}, Σ={}, Q={})", self.name, self.sigma, self.states)
    }
}

/// Human-readable machine description, one rule per line.
impl fmt::Display for TransitionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "symbols {}", self.sigma.symbols().join(" "))?;
        writeln!(f, "states {}", self.states.symbols().join(" "))?;
        writeln!(f, "blank {}", self.sigma.symbol(self.blank))?;
        writeln!(f, "initial {}", self.states.symbol(self.initial))?;
        let nq = self.states.len();
        for (i, tr) in self.delta.iter().enumerate() {
            writeln!(
                f,
                "{} {} -> {} {} {}",
                self.sigma.symbol(i / nq),
                self.states.symbol(i % nq),
                self.sigma.symbol(tr.write),
                self.states.symbol(tr.next),
                tr.dir
            )?;
        }
        Ok(())
    }
}

impl FromStr for TransitionTable {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut name = String::from("machine");
        let mut sigma: Option<Arc<Alphabet>> = None;
        let mut states: Option<Arc<Alphabet>> = None;
        let mut blank: Option<String> = None;
        let mut initial: Option<String> = None;
        let mut rules = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            match head {
                "name" => name = rest.join(" "),
                "symbols" => {
                    sigma = Some(Alphabet::new(rest.iter().copied()).map_err(|e| perr(line_no, e.to_string()))?)
                }
                "states" => {
                    states = Some(Alphabet::new(rest.iter().copied()).map_err(|e| perr(line_no, e.to_string()))?)
                }
                "blank" => blank = rest.first().map(|s| s.to_string()),
                "initial" => initial = rest.first().map(|s| s.to_string()),
                _ => {
                    // <symbol> <state> -> <write> <next> <dir>
                    if rest.len() != 5 || rest[1] != "->" {
                        return Err(perr(line_no, format!("malformed rule `{line}`")));
                    }
                    rules.push((line_no, head.to_string(), rest[0], rest[2], rest[3], rest[4]));
                }
            }
        }

        let sigma = sigma.ok_or_else(|| perr(0, "missing `symbols` declaration".into()))?;
        let states = states.ok_or_else(|| perr(0, "missing `states` declaration".into()))?;
        let nq = states.len();
        let blank = match blank {
            Some(b) => sigma.index_of(&b).map_err(|e| perr(0, e.to_string()))?,
            None => 0,
        };
        let initial = match initial {
            Some(q) => states.index_of(&q).map_err(|e| perr(0, e.to_string()))?,
            None => 0,
        };
        let mut delta: Vec<Option<Transition>> = vec![None; sigma.len() * nq];
        for (line_no, s, q, w, nx, d) in rules {
            let lookup = |a: &Alphabet, x: &str| a.index_of(x).map_err(|e| perr(line_no, e.to_string()));
            let idx = lookup(&sigma, &s)? * nq + lookup(&states, q)?;
            let dir = d.parse::<Direction>().map_err(|e| perr(line_no, e))?;
            if delta[idx].is_some() {
                return Err(perr(line_no, format!("duplicate rule for ({s}, {q})")));
            }
            delta[idx] = Some(Transition { write: lookup(&sigma, w)?, next: lookup(&states, nx)?, dir });
        }
        let mut full = Vec::with_capacity(delta.len());
        for (i, t) in delta.into_iter().enumerate() {
            match t {
                Some(t) => full.push(t),
                None => {
                    return Err(perr(
                        0,
                        format!(
                            "no rule for ({}, {}); the table must be total",
                            sigma.symbol(i / nq),
                            states.symbol(i % nq)
                        ),
                    ))
                }
            }
        }
        TransitionTable::new(name, sigma, states, blank, initial, full)
    }
}

/// A classical configuration on a finite window of tape.
///
/// Cells outside the window are blank. `origin` is the absolute position of
/// `cells[0]`; the input word starts at absolute position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapeConfig {
    pub cells: Vec<usize>,
    pub head: usize,
    pub state: usize,
    pub origin: isize,
}

impl TapeConfig {
    /// Places `input` at absolute positions `0..|input|` inside a window of
    /// `|input| + 2t + 2` cells, with the head on the leftmost non-blank cell
    /// and the machine in its initial state. A run of `t` steps cannot leave
    /// this window.
    pub fn for_input(table: &TransitionTable, input: &[usize], t: usize) -> Self {
        Self::with_state(table.blank(), input, table.initial(), t)
    }

    pub fn with_state(blank: usize, input: &[usize], state: usize, t: usize) -> Self {
        let pad = t + 1;
        let mut cells = vec![blank; input.len() + 2 * pad];
        cells[pad..pad + input.len()].copy_from_slice(input);
        let start = input.iter().position(|&s| s != blank).unwrap_or(0);
        Self { cells, head: pad + start, state, origin: -(pad as isize) }
    }

    pub fn head_position(&self) -> isize {
        self.origin + self.head as isize
    }

    pub fn read(&self) -> usize {
        self.cells[self.head]
    }

    /// Symbol at absolute position `pos`, blank outside the window.
    pub fn at(&self, pos: isize, blank: usize) -> usize {
        let i = pos - self.origin;
        if i < 0 || i as usize >= self.cells.len() {
            blank
        } else {
            self.cells[i as usize]
        }
    }

    /// The non-blank span of the tape plus the head, padded with one blank
    /// cell on each side.
    pub fn render(&self, table: &TransitionTable) -> String {
        let blank = table.blank();
        let nonblank: Vec<usize> = (0..self.cells.len()).filter(|&i| self.cells[i] != blank).collect();
        let lo = nonblank.first().copied().unwrap_or(self.head).min(self.head);
        let hi = nonblank.last().copied().unwrap_or(self.head).max(self.head);
        let lo = self.origin + lo as isize - 1;
        let hi = self.origin + hi as isize + 1;
        let word: Vec<usize> = (lo..=hi).map(|p| self.at(p, blank)).collect();
        table.render_word(&word)
    }
}

/// One classical step.
pub fn step(table: &TransitionTable, c: &TapeConfig) -> Result<TapeConfig> {
    let mut next = c.clone();
    step_in_place(table, &mut next, 0)?;
    Ok(next)
}

fn step_in_place(table: &TransitionTable, c: &mut TapeConfig, steps_done: usize) -> Result<()> {
    let tr = table.get(c.read(), c.state);
    c.cells[c.head] = tr.write;
    c.state = tr.next;
    let pos = c.head as isize + tr.dir.offset();
    if pos < 0 || pos as usize >= c.cells.len() {
        return Err(Error::WindowOverflow { steps: steps_done + 1 });
    }
    c.head = pos as usize;
    Ok(())
}

/// `t` classical steps.
pub fn run(table: &TransitionTable, c: &TapeConfig, t: usize) -> Result<TapeConfig> {
    let mut cur = c.clone();
    for s in 0..t {
        step_in_place(table, &mut cur, s)?;
    }
    Ok(cur)
}

/// Final state after running `t` steps on `input` from the initial state.
pub fn final_state(table: &TransitionTable, input: &[usize], t: usize) -> Result<usize> {
    Ok(run(table, &TapeConfig::for_input(table, input, t), t)?.state)
}

/// Pairs without an explicit rule rewrite the symbol, keep the state and stay.
fn stay_default(s: usize, q: usize) -> Transition {
    Transition { write: s, next: q, dir: Direction::S }
}

/// A solution of `detectA` over `Σ = {□, A, B}`, `Q = {reject, accept}`.
///
/// In `reject` the head scans right over `B`s; reading an `A` switches to
/// `accept`, reading a blank halts in `reject`. Both outcomes are absorbing.
pub fn detect_a_solution() -> TransitionTable {
    use Direction::*;
    let sigma = Alphabet::new(["□", "A", "B"]).expect("static");
    let states = Alphabet::new(["reject", "accept"]).expect("static");
    TransitionTable::from_rules(
        "detectA",
        sigma,
        states,
        "reject",
        &[
            ("□", "reject", "□", "reject", S),
            ("A", "reject", "A", "accept", R),
            ("B", "reject", "B", "reject", R),
            ("□", "accept", "□", "accept", S),
            ("A", "accept", "A", "accept", S),
            ("B", "accept", "B", "accept", S),
        ],
        stay_default,
    )
    .expect("static table")
}

/// A solution of `parityCheck` that cancels `A`/`B` pairs by overwriting them
/// with `X`, returning to the left end of the input between pairs.
pub fn parity_check_solution() -> TransitionTable {
    use Direction::*;
    let sigma = Alphabet::new(["□", "A", "B", "X"]).expect("static");
    let states = Alphabet::new(["reject", "accept", "getNextAB", "getNextA", "getNextB", "gotoStart"]).expect("static");
    TransitionTable::from_rules(
        "parityCheck",
        sigma,
        states,
        "getNextAB",
        &[
            ("X", "getNextAB", "X", "getNextAB", R),
            ("A", "getNextAB", "X", "getNextB", R),
            ("B", "getNextAB", "X", "getNextA", R),
            ("□", "getNextAB", "□", "accept", S),
            ("X", "getNextA", "X", "getNextA", R),
            ("B", "getNextA", "B", "getNextA", R),
            ("A", "getNextA", "X", "gotoStart", L),
            ("□", "getNextA", "□", "reject", S),
            ("X", "getNextB", "X", "getNextB", R),
            ("A", "getNextB", "A", "getNextB", R),
            ("B", "getNextB", "X", "gotoStart", L),
            ("□", "getNextB", "□", "reject", S),
            ("A", "gotoStart", "A", "gotoStart", L),
            ("B", "gotoStart", "B", "gotoStart", L),
            ("X", "gotoStart", "X", "gotoStart", L),
            ("□", "gotoStart", "□", "getNextAB", R),
        ],
        stay_default,
    )
    .expect("static table")
}

/// Steps for the shift machine to finish on `□ n a₁ a₂ a₃ □` with `n ≤ 2`.
pub const SHIFT_MACHINE_STEPS: usize = 12;

/// The shift machine over `Σ = {□, A, B, 0, 1, 2}`.
///
/// On `□ n a₁ a₂ a₃ □` (head on the counter) it makes two passes of six
/// steps. Each pass reads the counter; if it is nonzero the counter is
/// decremented and the letters are shifted one cell left with an `A` filling
/// the right end, otherwise the letters are rewritten unchanged. Head motion
/// is the same in both branches, so after `SHIFT_MACHINE_STEPS` steps the
/// head is back on the counter and the string has moved left `n` times.
pub fn shift_machine() -> TransitionTable {
    use Direction::*;
    let sigma = Alphabet::new(["□", "A", "B", "0", "1", "2"]).expect("static");
    let states = Alphabet::new([
        "start", "shift1", "shift2", "shift3", "carryA2", "carryB2", "carryA1", "carryB1", "keep1", "keep2", "keep3",
        "copy2", "copy1",
    ])
    .expect("static");
    let mut rules: Vec<(&str, &str, &str, &str, Direction)> =
        vec![("2", "start", "1", "shift1", R), ("1", "start", "0", "shift1", R), ("0", "start", "0", "keep1", R)];
    for a in ["A", "B"] {
        rules.extend([
            (a, "shift1", a, "shift2", R),
            (a, "shift2", a, "shift3", R),
            (a, "keep1", a, "keep2", R),
            (a, "keep2", a, "keep3", R),
            (a, "keep3", a, "copy2", L),
            (a, "copy2", a, "copy1", L),
            (a, "copy1", a, "start", L),
        ]);
    }
    // Rightmost letter: fill with A and carry the old letter left.
    rules.extend([
        ("A", "shift3", "A", "carryA2", L),
        ("B", "shift3", "A", "carryB2", L),
        ("A", "carryA2", "A", "carryA1", L),
        ("B", "carryA2", "A", "carryB1", L),
        ("A", "carryB2", "B", "carryA1", L),
        ("B", "carryB2", "B", "carryB1", L),
        ("A", "carryA1", "A", "start", L),
        ("B", "carryA1", "A", "start", L),
        ("A", "carryB1", "B", "start", L),
        ("B", "carryB1", "B", "start", L),
    ]);
    TransitionTable::from_rules("shiftMachine", sigma, states, "start", &rules, stay_default).expect("static table")
}

/// The machine that rewrites what it reads, keeps its state and stays.
pub fn stay_machine(sigma: Arc<Alphabet>, states: Arc<Alphabet>) -> TransitionTable {
    let nq = states.len();
    let delta = (0..sigma.len() * nq).map(|i| stay_default(i / nq, i % nq)).collect();
    TransitionTable::new("stay", sigma, states, 0, 0, delta).expect("stay table is total")
}

/// Looks up one of the built-in machines by name.
pub fn builtin(name: &str) -> Option<TransitionTable> {
    match name {
        "detectA" => Some(detect_a_solution()),
        "parityCheck" => Some(parity_check_solution()),
        "shiftMachine" => Some(shift_machine()),
        "stay" => {
            let t = detect_a_solution();
            Some(stay_machine(t.sigma().clone(), t.states().clone()))
        }
        _ => None,
    }
}

/// Default step budget for the built-in machines.
pub fn builtin_steps(name: &str) -> Option<usize> {
    match name {
        "detectA" => Some(10),
        "parityCheck" => Some(42),
        "shiftMachine" => Some(SHIFT_MACHINE_STEPS),
        "stay" => Some(0),
        _ => None,
    }
}
