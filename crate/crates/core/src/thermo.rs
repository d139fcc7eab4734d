//! Hamiltonian, energy and the two-term free-energy approximation, with a
//! scan for first-order phase transitions between candidate machines.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machines::{self, TapeConfig, TransitionTable};
use crate::synthesis::{neg_log_likelihood, DataLikelihood, Dataset};
use crate::utm::{CodeLayout, CodeParameter};

/// `H_n(w) = nK_n(w) + (1/β)·log vol(W)` under the uniform prior, for a
/// deterministic problem.
pub fn hamiltonian(w: &CodeParameter, data: &Dataset, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let mut lik = DataLikelihood::new(w.layout().clone(), data);
    let (nl, _) = lik.nll(w.flat())?;
    Ok(nl + w.layout().log_volume() / beta)
}

/// Energy `E[nL_n] + (1/β)·log vol(W)` from the recorded `n·L_n` draws.
pub fn energy_estimate(energies: &[f64], beta: f64, layout: &CodeLayout) -> Result<f64> {
    check_beta(beta)?;
    let e = crate::rlct::energy(beta, energies)?;
    Ok(e.mean + layout.log_volume() / beta)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("inverse temperature must be positive, got {beta}")))
    }
}

/// A machine competing for posterior mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCandidate {
    pub label: String,
    /// Per-sample loss `L_n` at the machine's code.
    pub loss: f64,
    /// RLCT (bound or estimate) supplied by the caller.
    pub lambda: f64,
    /// Used states times used symbols.
    pub length: usize,
}

impl PhaseCandidate {
    pub fn new(label: impl Into<String>, loss: f64, lambda: f64, length: usize) -> Result<Self> {
        if !(loss >= 0.0) || !(lambda > 0.0) || length == 0 {
            return Err(Error::InvalidParameter("candidate needs L ≥ 0, λ > 0 and length ≥ 1".into()));
        }
        Ok(Self { label: label.into(), loss, lambda, length })
    }

    /// Candidate for a classical machine: the loss is measured on `data`
    /// and the length counts symbols and states touched while running it.
    pub fn from_machine(table: &TransitionTable, data: &Dataset, lambda: f64) -> Result<Self> {
        let w = CodeParameter::encode(table);
        let loss = neg_log_likelihood(&w, data)?.nl_n / data.len() as f64;
        let (mut symbols, mut states) = (BTreeSet::new(), BTreeSet::new());
        for (x, _) in &data.pairs {
            let mut c = TapeConfig::for_input(table, x, data.t);
            for _ in 0..data.t {
                symbols.insert(c.read());
                states.insert(c.state);
                c = machines::step(table, &c)?;
            }
        }
        Self::new(table.name(), loss, lambda, symbols.len().max(1) * states.len().max(1))
    }
}

/// `F ≈ nβL + λ·log n`.
pub fn free_energy_approx(c: &PhaseCandidate, n: f64, beta: f64) -> f64 {
    n * beta * c.loss + c.lambda * n.ln()
}

/// Whether `nβL ≤ F ≤ nβL + c·l·log n` holds for the approximation.
pub fn within_bounds(cand: &PhaseCandidate, n: f64, beta: f64, c: f64) -> bool {
    let f = free_energy_approx(cand, n, beta);
    let base = n * beta * cand.loss;
    base <= f && f <= base + c * cand.length as f64 * n.ln()
}

/// A sign change of `F_i - F_j` on the integer grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub i: usize,
    pub j: usize,
    /// Integer bracket `[n_lo, n_hi]` containing the root.
    pub n_lo: u64,
    pub n_hi: u64,
    /// Root refined by bisection in continuous `n`.
    pub n_star: f64,
    /// Candidate with the lower free energy after the crossing.
    pub preferred_after: usize,
}

/// Result of [`phase_transition_scan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub beta: f64,
    pub n_lo: u64,
    pub n_hi: u64,
    pub crossings: Vec<Crossing>,
    /// Pairs whose curves agree on the whole range.
    pub ties: Vec<(usize, usize)>,
}

/// Reports every pairwise crossing of the approximate free energies on
/// `n_lo..=n_hi`, ordered by position.
pub fn phase_transition_scan(candidates: &[PhaseCandidate], n_lo: u64, n_hi: u64, beta: f64) -> Result<PhaseScan> {
    check_beta(beta)?;
    if n_lo < 2 || n_hi < n_lo {
        return Err(Error::InvalidParameter(format!("bad range {n_lo}..={n_hi}; need 2 ≤ lo ≤ hi")));
    }
    let mut crossings = Vec::new();
    let mut ties = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            let d = |n: f64| free_energy_approx(&candidates[i], n, beta) - free_energy_approx(&candidates[j], n, beta);
            let scale = |n: f64| {
                free_energy_approx(&candidates[i], n, beta)
                    .abs()
                    .max(free_energy_approx(&candidates[j], n, beta).abs())
                    .max(1.0)
            };
            let sign = |n: u64| {
                let v = d(n as f64);
                if v.abs() <= 1e-12 * scale(n as f64) {
                    0
                } else if v > 0.0 {
                    1
                } else {
                    -1
                }
            };
            let mut last: Option<(u64, i32)> = None;
            let mut any_nonzero = false;
            for n in n_lo..=n_hi {
                let s = sign(n);
                if s == 0 {
                    continue;
                }
                any_nonzero = true;
                if let Some((m, ls)) = last {
                    if ls != s {
                        let (mut a, mut b) = (m as f64, n as f64);
                        for _ in 0..100 {
                            let mid = 0.5 * (a + b);
                            if (d(mid) > 0.0) == (ls > 0) {
                                a = mid;
                            } else {
                                b = mid;
                            }
                        }
                        crossings.push(Crossing {
                            i,
                            j,
                            n_lo: m,
                            n_hi: n,
                            n_star: 0.5 * (a + b),
                            preferred_after: if s > 0 { j } else { i },
                        });
                    }
                }
                last = Some((n, s));
            }
            if !any_nonzero {
                ties.push((i, j));
            }
        }
    }
    crossings.sort_by(|a, b| a.n_star.total_cmp(&b.n_star));
    Ok(PhaseScan { beta, n_lo, n_hi, crossings, ties })
}

impl PhaseScan {
    /// `n,candidate,F` rows over `points` evenly spaced grid values,
    /// followed by a commented crossings summary.
    pub fn to_csv(&self, candidates: &[PhaseCandidate], points: usize) -> String {
        let mut out = String::from("n,candidate,F\n");
        for n in grid(self.n_lo, self.n_hi, points) {
            for c in candidates {
                let _ = writeln!(out, "{n},{},{:?}", c.label, free_energy_approx(c, n as f64, self.beta));
            }
        }
        out.push_str("# crossings: i,j,n_lo,n_hi,n_star,preferred_after\n");
        for x in &self.crossings {
            let _ = writeln!(
                out,
                "# {},{},{},{},{:?},{}",
                candidates[x.i].label,
                candidates[x.j].label,
                x.n_lo,
                x.n_hi,
                x.n_star,
                candidates[x.preferred_after].label
            );
        }
        for (i, j) in &self.ties {
            let _ = writeln!(out, "# tie {},{}", candidates[*i].label, candidates[*j].label);
        }
        out
    }
}

/// Up to `points` distinct integers spread evenly over `lo..=hi`.
fn grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let span = hi - lo;
    if points < 2 || span == 0 {
        return vec![lo];
    }
    let mut v: Vec<u64> =
        (0..points).map(|k| lo + (span as f64 * k as f64 / (points - 1) as f64).round() as u64).collect();
    v.dedup();
    v
}
