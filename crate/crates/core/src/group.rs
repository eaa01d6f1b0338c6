//! Symmetric generating systems and words over them.

use std::fmt;

use serde::Serialize;

use crate::circle::{circle_dist, CircleMap, PrimitiveMap, TAU_ID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Generator {
    pub name: String,
    pub map: PrimitiveMap,
}

/// A symmetric finite set Γ of named maps with an involutive inverse pairing.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratingSystem {
    generators: Vec<Generator>,
    inverse: Vec<usize>,
}

/// One entry of a generating system before symmetrization.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub map: PrimitiveMap,
    /// Name of the paired inverse generator; `None` for a declared involution.
    pub inverse_name: Option<String>,
}

const VALIDATION_PROBES: usize = 97;

impl GeneratingSystem {
    /// Build Γ from one spec per pair; each non-involution contributes itself
    /// and its computed inverse.
    pub fn new(specs: Vec<GeneratorSpec>) -> Result<Self> {
        let mut generators = Vec::new();
        let mut inverse = Vec::new();
        for spec in specs {
            let i = generators.len();
            match spec.inverse_name {
                Some(inv_name) => {
                    let inv = spec.map.inverse();
                    generators.push(Generator {
                        name: spec.name,
                        map: spec.map,
                    });
                    generators.push(Generator {
                        name: inv_name,
                        map: inv,
                    });
                    inverse.push(i + 1);
                    inverse.push(i);
                }
                None => {
                    generators.push(Generator {
                        name: spec.name,
                        map: spec.map,
                    });
                    inverse.push(i);
                }
            }
        }
        let system = GeneratingSystem { generators, inverse };
        system.validate()?;
        Ok(system)
    }

    /// Convenience constructor: pairs `(name, inverse_name, map)`.
    pub fn from_pairs(pairs: &[(&str, &str, PrimitiveMap)]) -> Result<Self> {
        GeneratingSystem::new(
            pairs
                .iter()
                .map(|(n, i, m)| GeneratorSpec {
                    name: n.to_string(),
                    map: m.clone(),
                    inverse_name: Some(i.to_string()),
                })
                .collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        let q = self.generators.len();
        if q < 2 {
            let involution = q == 1 && self.inverse[0] == 0;
            if !involution {
                return Err(Error::InvalidGenerators(format!(
                    "need at least two generators, got {q}"
                )));
            }
        }
        let mut names: Vec<&str> = self.generators.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGenerators("duplicate generator names".into()));
        }
        for (i, g) in self.generators.iter().enumerate() {
            let j = self.inverse[i];
            if self.inverse[j] != i {
                return Err(Error::InvalidGenerators("inverse pairing is not involutive".into()));
            }
            let inv = &self.generators[j].map;
            for k in 0..VALIDATION_PROBES {
                let x = (k as f64 + 0.5) / VALIDATION_PROBES as f64;
                let back = inv.eval(g.map.eval(x));
                if circle_dist(back, x) > TAU_ID {
                    return Err(Error::InvalidGenerators(format!(
                        "generator {} is not inverted by {} at t = {x}",
                        g.name, self.generators[j].name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Number of generator pairs `p` (an involution counts as one pair).
    pub fn pairs(&self) -> usize {
        (0..self.len()).filter(|&i| self.inverse[i] >= i).count()
    }

    pub fn inverse_of(&self, letter: usize) -> usize {
        self.inverse[letter]
    }

    pub fn generator(&self, letter: usize) -> &Generator {
        &self.generators[letter]
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn letter(&self, name: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.name == name)
    }

    /// Common Lipschitz constant `L = max_Γ sup f′`.
    pub fn lipschitz(&self) -> f64 {
        self.generators.iter().map(|g| g.map.lipschitz()).fold(0.0, f64::max)
    }

    /// Parse a word written as generator names separated by spaces or
    /// dots, applied right to left (`"a b"` = `a ∘ b`). Single-character
    /// names may also be concatenated (`"abAB"`).
    pub fn parse_word(&self, text: &str) -> Result<Word> {
        let text = text.trim();
        if text.is_empty() || text == "e" || text == "id" {
            return Ok(Word::identity());
        }
        let tokens: Vec<String> = if text.contains([' ', '.']) {
            text.split([' ', '.'])
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        } else {
            text.chars().map(|c| c.to_string()).collect()
        };
        let mut letters = Vec::with_capacity(tokens.len());
        for tok in tokens.iter().rev() {
            letters.push(
                self.letter(tok)
                    .ok_or_else(|| Error::Config(format!("unknown generator `{tok}`")))?,
            );
        }
        Ok(Word::new(letters))
    }

    /// Render a word with the most recently applied letter first.
    pub fn format_word(&self, word: &Word) -> String {
        if word.is_empty() {
            return "e".to_string();
        }
        word.letters()
            .iter()
            .rev()
            .map(|&l| self.generators[l].name.as_str())
            .collect::<Vec<_>>()
            .join(".")
    }

    /// A word viewed as a composed circle map.
    pub fn word_map<'a>(&'a self, word: &'a Word) -> WordMap<'a> {
        WordMap { system: self, word }
    }
}

/// A word over Γ. `letters[0]` is applied first, so
/// `g_{i_m} ∘ … ∘ g_{i_1}` is stored as `[i_1, …, i_m]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Default)]
pub struct Word {
    letters: Vec<usize>,
}

impl Word {
    pub fn identity() -> Self {
        Word::default()
    }

    pub fn new(letters: Vec<usize>) -> Self {
        Word { letters }
    }

    pub fn letter(l: usize) -> Self {
        Word { letters: vec![l] }
    }

    pub fn letters(&self) -> &[usize] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self, system: &GeneratingSystem) -> bool {
        self.letters.windows(2).all(|w| system.inverse_of(w[0]) != w[1])
    }

    /// Cancel adjacent `g g⁻¹` pairs.
    pub fn reduced(&self, system: &GeneratingSystem) -> Word {
        let mut out: Vec<usize> = Vec::with_capacity(self.letters.len());
        for &l in &self.letters {
            match out.last() {
                Some(&last) if system.inverse_of(last) == l => {
                    out.pop();
                }
                _ => out.push(l),
            }
        }
        Word { letters: out }
    }

    /// `self` applied after `first`, i.e. the word of `self ∘ first`.
    pub fn after(&self, first: &Word) -> Word {
        let mut letters = first.letters.clone();
        letters.extend_from_slice(&self.letters);
        Word { letters }
    }

    pub fn inverse(&self, system: &GeneratingSystem) -> Word {
        Word {
            letters: self.letters.iter().rev().map(|&l| system.inverse_of(l)).collect(),
        }
    }

    pub fn pow(&self, r: i64, system: &GeneratingSystem) -> Word {
        let base = if r < 0 { self.inverse(system) } else { self.clone() };
        let mut letters = Vec::with_capacity(base.len() * r.unsigned_abs() as usize);
        for _ in 0..r.unsigned_abs() {
            letters.extend_from_slice(&base.letters);
        }
        Word { letters }
    }

    /// Prefix of the first `r` applied letters.
    pub fn prefix(&self, r: usize) -> Word {
        Word {
            letters: self.letters[..r.min(self.len())].to_vec(),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.letters.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// A word evaluated generator-by-generator.
#[derive(Clone, Copy)]
pub struct WordMap<'a> {
    system: &'a GeneratingSystem,
    word: &'a Word,
}

impl CircleMap for WordMap<'_> {
    fn eval(&self, t: f64) -> f64 {
        self.word
            .letters
            .iter()
            .fold(t, |x, &l| self.system.generators[l].map.eval(x))
    }

    /// Chain rule along the orbit.
    fn derivative(&self, t: f64) -> f64 {
        let mut x = t;
        let mut d = 1.0;
        for &l in &self.word.letters {
            let g = &self.system.generators[l].map;
            d *= g.derivative(x);
            x = g.eval(x);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::{log_derivative_variation, Arc};

    fn schottky_like() -> GeneratingSystem {
        let a = PrimitiveMap::hyperbolic(2.0).unwrap();
        let b = PrimitiveMap::mobius(1.25, 0.75, 0.75, 1.25).unwrap();
        GeneratingSystem::from_pairs(&[("a", "A", a), ("b", "B", b)]).unwrap()
    }

    #[test]
    fn symmetric_pairing() {
        let g = schottky_like();
        assert_eq!(g.len(), 4);
        assert_eq!(g.pairs(), 2);
        for l in 0..4 {
            assert_eq!(g.inverse_of(g.inverse_of(l)), l);
        }
    }

    #[test]
    fn rejects_bad_systems() {
        let bad = GeneratingSystem::new(vec![GeneratorSpec {
            name: "r".into(),
            map: PrimitiveMap::rotation(0.1),
            inverse_name: None,
        }]);
        assert!(bad.is_err(), "a rotation by 0.1 is not an involution");
        let half = GeneratingSystem::new(vec![GeneratorSpec {
            name: "r".into(),
            map: PrimitiveMap::rotation(0.5),
            inverse_name: None,
        }]);
        assert!(half.is_ok());
    }

    #[test]
    fn reduction_and_parsing() {
        let g = schottky_like();
        let w = g.parse_word("abAB").unwrap();
        assert_eq!(w.len(), 4);
        assert!(w.is_reduced(&g));
        let ww = w.after(&w.inverse(&g));
        assert!(ww.reduced(&g).is_empty());
        assert_eq!(g.format_word(&w), "a.b.A.B");
        assert_eq!(g.parse_word("a.b.A.B").unwrap(), w);
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let g = schottky_like();
        let w = g.parse_word("abAbba").unwrap();
        let m = g.word_map(&w);
        let h = 1e-6;
        for &x in &[0.11, 0.3, 0.61, 0.87] {
            let d = m.derivative(x);
            let fd = (m.eval(x + h) - m.eval(x - h)).rem_euclid(1.0) / (2.0 * h);
            assert!(((fd - d) / d).abs() < 1e-6, "x={x} d={d} fd={fd}");
        }
    }

    #[test]
    fn variation_subadditive_under_composition() {
        let g = schottky_like();
        let f = g.parse_word("ab").unwrap();
        let h = g.parse_word("Ba").unwrap();
        let comp = f.after(&h); // f ∘ h
        let arc = Arc::new(0.1, 0.2).unwrap();
        let n = 4096;
        let v_comp = log_derivative_variation(&g.word_map(&comp), &arc, n).unwrap().value;
        let v_h = log_derivative_variation(&g.word_map(&h), &arc, n).unwrap().value;
        let image = arc.image(&g.word_map(&h)).unwrap();
        let v_f = log_derivative_variation(&g.word_map(&f), &image, n).unwrap().value;
        assert!(v_comp <= (v_h + v_f) * (1.0 + 1e-6) + 1e-9);
    }
}
