//! Finite alphabets and probability vectors over them.
//!
//! A [`Dist`] is a point of the simplex over an [`Alphabet`]. Vertex
//! distributions are produced by [`embed`]; everything downstream (smooth
//! machines, the direct UTM simulation, the shift-machine model) moves mass
//! around between such points.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`Dist`].
pub const SUM_TOL: f64 = 1e-12;
/// Negative round-off above this magnitude is treated as a logic error.
pub const NEG_CLAMP: f64 = 1e-15;
/// Tolerance on the weights passed to [`mix`].
pub const MIX_WEIGHT_TOL: f64 = 1e-9;

/// An ordered set of distinct atoms.
#[derive(Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new<I, S>(symbols: I) -> Result<Arc<Self>>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::InvalidAlphabet("alphabet is empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidAlphabet(format!("bad atom {s:?}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidAlphabet(format!("duplicate atom `{s}`")));
            }
        }
        Ok(Arc::new(Self { symbols, index }))
    }

    /// The head movements `L`, `S`, `R`, in that order.
    pub fn directions() -> Arc<Self> {
        static DIRS: OnceLock<Arc<Alphabet>> = OnceLock::new();
        DIRS.get_or_init(|| Alphabet::new(["L", "S", "R"]).expect("static alphabet")).clone()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize> {
        self.get(symbol).ok_or_else(|| Error::UnknownSymbol { symbol: symbol.to_string(), alphabet: self.to_string() })
    }

    /// True when every atom is a single character, so strings over the
    /// alphabet can be written without separators.
    pub fn is_single_char(&self) -> bool {
        self.symbols.iter().all(|s| s.chars().count() == 1)
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.symbols.join(","))
    }
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Alphabet{self}")
    }
}

/// A probability vector indexed by an alphabet.
#[derive(Clone, PartialEq)]
pub struct Dist {
    alphabet: Arc<Alphabet>,
    weights: Vec<f64>,
}

impl Dist {
    /// Validates `weights`, clamping tiny negative round-off to zero.
    pub fn new(alphabet: Arc<Alphabet>, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != alphabet.len() {
            return Err(Error::InvalidDist(format!(
                "{} weights for alphabet of size {}",
                weights.len(),
                alphabet.len()
            )));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::InvalidDist(format!("non-finite weight {w}")));
            }
            if *w < 0.0 {
                if *w < -NEG_CLAMP {
                    return Err(Error::InvalidDist(format!("negative weight {w}")));
                }
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDist(format!("weights sum to {total}")));
        }
        Ok(Self { alphabet, weights })
    }

    /// Builds a distribution from arbitrary nonnegative weights by rescaling
    /// them to unit mass.
    pub fn normalized(alphabet: Arc<Alphabet>, mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if *w < 0.0 && *w >= -NEG_CLAMP {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDist(format!("cannot normalize {weights:?}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(alphabet, weights)
    }

    /// Wraps weights produced by a mass-preserving kernel without rechecking.
    pub(crate) fn from_raw(alphabet: Arc<Alphabet>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(alphabet.len(), weights.len());
        Self { alphabet, weights }
    }

    pub fn uniform(alphabet: Arc<Alphabet>) -> Self {
        let k = alphabet.len();
        Self { alphabet, weights: vec![1.0 / k as f64; k] }
    }

    pub fn vertex(alphabet: Arc<Alphabet>, index: usize) -> Self {
        let mut weights = vec![0.0; alphabet.len()];
        weights[index] = 1.0;
        Self { alphabet, weights }
    }

    pub fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn prob(&self, symbol: &str) -> Result<f64> {
        Ok(self.weights[self.alphabet.index_of(symbol)?])
    }

    /// Index of the atom carrying all the mass, if this is a vertex.
    pub fn as_vertex(&self) -> Option<usize> {
        let mut found = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 1.0 {
                found = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        found
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

impl fmt::Debug for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.alphabet.symbols().iter().zip(&self.weights)).finish()
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, w) in self.alphabet.symbols().iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{w}·{s}")?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// The vertex distribution concentrated on `symbol`.
pub fn embed(symbol: &str, alphabet: &Arc<Alphabet>) -> Result<Dist> {
    let i = alphabet.index_of(symbol)?;
    Ok(Dist::vertex(alphabet.clone(), i))
}

/// Convex combination of distributions over a common alphabet.
pub fn mix(pairs: &[(f64, &Dist)]) -> Result<Dist> {
    let Some((_, first)) = pairs.first() else {
        return Err(Error::InvalidDist("mix of an empty list".into()));
    };
    let alphabet = first.alphabet.clone();
    let mut total_weight = 0.0;
    let mut acc = vec![0.0; alphabet.len()];
    for (w, d) in pairs {
        if *d.alphabet != *alphabet {
            return Err(Error::AlphabetMismatch { expected: alphabet.to_string(), found: d.alphabet.to_string() });
        }
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidDist(format!("mixture weight {w}")));
        }
        total_weight += w;
        for (a, p) in acc.iter_mut().zip(&d.weights) {
            *a += w * p;
        }
    }
    if (total_weight - 1.0).abs() > MIX_WEIGHT_TOL {
        return Err(Error::InvalidDist(format!("mixture weights sum to {total_weight}")));
    }
    Dist::normalized(alphabet, acc)
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(d: &Dist) -> f64 {
    -d.weights.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tape() -> Arc<Alphabet> {
        Alphabet::new(["□", "A", "B"]).unwrap()
    }

    #[test]
    fn embed_vertices() {
        let s = tape();
        assert_eq!(embed("A", &s).unwrap().weights(), &[0.0, 1.0, 0.0]);
        assert_eq!(embed("□", &s).unwrap().weights(), &[1.0, 0.0, 0.0]);
        let dirs = Alphabet::directions();
        assert_eq!(embed("L", &dirs).unwrap().weights(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn embed_unknown_symbol_names_it() {
        let err = embed("Z", &tape()).unwrap_err().to_string();
        assert!(err.contains('Z') && err.contains("□,A,B"), "{err}");
    }

    #[test]
    fn alphabet_rejects_duplicates_and_empty() {
        assert!(Alphabet::new(["A", "A"]).is_err());
        assert!(Alphabet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn mix_examples() {
        let s = tape();
        let a = embed("A", &s).unwrap();
        let b = embed("B", &s).unwrap();
        let blank = embed("□", &s).unwrap();
        assert_eq!(mix(&[(1.0, &a)]).unwrap(), a);
        let half = mix(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!(half.weights(), &[0.0, 0.5, 0.5]);
        let m = mix(&[(0.25, &blank), (0.75, &half)]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.375, 0.375]);
    }

    #[test]
    fn mix_errors() {
        let s = tape();
        let a = embed("A", &s).unwrap();
        assert!(mix(&[(0.5, &a)]).is_err());
        let other = Dist::uniform(Alphabet::new(["x", "y", "z"]).unwrap());
        assert!(matches!(mix(&[(0.5, &a), (0.5, &other)]), Err(Error::AlphabetMismatch { .. })));
    }

    #[test]
    fn entropy_examples() {
        let s = tape();
        assert_eq!(entropy(&embed("A", &s).unwrap()), 0.0);
        let two = Alphabet::new(["0", "1"]).unwrap();
        assert!((entropy(&Dist::uniform(two.clone())) - 2f64.ln()).abs() < 1e-15);
        let d = Dist::new(two, vec![0.25, 0.75]).unwrap();
        assert!((entropy(&d) - 0.562335144618808).abs() < 1e-12);
    }

    #[test]
    fn clamps_tiny_negatives_rejects_large() {
        let two = Alphabet::new(["0", "1"]).unwrap();
        let d = Dist::new(two.clone(), vec![-1e-16, 1.0]).unwrap();
        assert_eq!(d.weights()[0], 0.0);
        assert!(Dist::new(two, vec![-1e-6, 1.0 + 1e-6]).is_err());
    }

    fn simplex_point(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, k).prop_filter_map("zero mass", |v| {
            let t: f64 = v.iter().sum();
            (t > 1e-6).then(|| v.iter().map(|x| x / t).collect())
        })
    }

    proptest! {
        #[test]
        fn mix_is_permutation_invariant(
            p in simplex_point(3),
            q in simplex_point(3),
            r in simplex_point(3),
            w in simplex_point(3),
        ) {
            let s = tape();
            let dp = Dist::normalized(s.clone(), p).unwrap();
            let dq = Dist::normalized(s.clone(), q).unwrap();
            let dr = Dist::normalized(s.clone(), r).unwrap();
            let forward = mix(&[(w[0], &dp), (w[1], &dq), (w[2], &dr)]).unwrap();
            let backward = mix(&[(w[2], &dr), (w[1], &dq), (w[0], &dp)]).unwrap();
            for (a, b) in forward.weights().iter().zip(backward.weights()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
            let total: f64 = forward.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < SUM_TOL);
            prop_assert!(forward.weights().iter().all(|&x| x >= 0.0));
        }
    }
}
