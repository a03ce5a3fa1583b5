//! Multi-atom level structure, product-basis indexing and geometry.
//!
//! Units used throughout the crate: time in µs, angular frequency in rad/µs,
//! distance in µm. Atom 0 is the most significant digit of the product-basis
//! index, and by convention control atoms come first, followed by targets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ATOMS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelScheme {
    labels: Vec<String>,
    computational: [usize; 2],
    rydberg: usize,
    intermediate: Option<usize>,
}

impl LevelScheme {
    pub fn new(
        labels: Vec<String>,
        computational: [usize; 2],
        rydberg: usize,
        intermediate: Option<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidRegister(format!("duplicate level label `{l}`")));
            }
        }
        let in_range = |i: usize| i < n;
        if !in_range(computational[0]) || !in_range(computational[1]) || !in_range(rydberg) {
            return Err(Error::InvalidRegister("level index out of range".into()));
        }
        if computational[0] == computational[1] {
            return Err(Error::InvalidRegister(
                "computational levels must be two distinct levels".into(),
            ));
        }
        if computational.contains(&rydberg) {
            return Err(Error::InvalidRegister(
                "the Rydberg level cannot be a computational level".into(),
            ));
        }
        if let Some(p) = intermediate {
            if !in_range(p) || p == rydberg || computational.contains(&p) {
                return Err(Error::InvalidRegister("invalid intermediate level".into()));
            }
        }
        let expected = 3 + usize::from(intermediate.is_some());
        if n != expected {
            return Err(Error::InvalidRegister(format!(
                "scheme with {n} levels; expected {expected}"
            )));
        }
        Ok(LevelScheme {
            labels,
            computational,
            rydberg,
            intermediate,
        })
    }

    /// Qubit levels `0`, `1` plus a Rydberg level `r`.
    pub fn qubit_rydberg() -> Self {
        Self::new(vec!["0".into(), "1".into(), "r".into()], [0, 1], 2, None)
            .expect("static scheme")
    }

    /// Two-photon ladder `0`, `1`, intermediate `p`, Rydberg `r`.
    pub fn ladder() -> Self {
        Self::new(
            vec!["0".into(), "1".into(), "p".into(), "r".into()],
            [0, 1],
            3,
            Some(2),
        )
        .expect("static scheme")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_levels(&self) -> usize {
        self.labels.len()
    }

    pub fn computational(&self) -> [usize; 2] {
        self.computational
    }

    pub fn rydberg(&self) -> usize {
        self.rydberg
    }

    pub fn intermediate(&self) -> Option<usize> {
        self.intermediate
    }

    pub fn is_ladder(&self) -> bool {
        self.intermediate.is_some()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLevel(label.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Control,
    Target,
}

/// How pairwise Rydberg-Rydberg shifts are specified.
#[derive(Debug, Clone, PartialEq)]
pub enum PairInteraction {
    /// One shift for every pair, rad/µs.
    Uniform(f64),
    /// One shift per pair in [`AtomRegister::pairs`] order, rad/µs.
    PerPair(Vec<f64>),
    /// `V = C6 / R^6` with `c6` in rad/µs·µm⁶; requires positions.
    VanDerWaals { c6: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomRegister {
    scheme: LevelScheme,
    roles: Vec<Role>,
    positions: Option<Vec<[f64; 3]>>,
    pairs: Vec<(usize, usize)>,
    strengths: Vec<f64>,
}

impl AtomRegister {
    pub fn new(
        n_atoms: usize,
        scheme: LevelScheme,
        roles: Vec<Role>,
        positions: Option<Vec<[f64; 3]>>,
        interaction: PairInteraction,
    ) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidRegister("at least one atom is required".into()));
        }
        if n_atoms > MAX_ATOMS {
            return Err(Error::InvalidRegister(format!(
                "{n_atoms} atoms exceed the supported maximum of {MAX_ATOMS} (dimension {})",
                scheme.n_levels().pow(n_atoms as u32)
            )));
        }
        if roles.len() != n_atoms {
            return Err(Error::InvalidRegister(format!(
                "{} roles given for {n_atoms} atoms",
                roles.len()
            )));
        }
        if let Some(p) = &positions {
            if p.len() != n_atoms {
                return Err(Error::InvalidRegister(format!(
                    "{} positions given for {n_atoms} atoms",
                    p.len()
                )));
            }
            if p.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidRegister("non-finite atom position".into()));
            }
        }
        let pairs: Vec<(usize, usize)> = (0..n_atoms)
            .flat_map(|i| ((i + 1)..n_atoms).map(move |j| (i, j)))
            .collect();
        let strengths = match interaction {
            PairInteraction::Uniform(v) => vec![v; pairs.len()],
            PairInteraction::PerPair(v) => {
                if v.len() != pairs.len() {
                    return Err(Error::InvalidRegister(format!(
                        "{} pair interactions given for {} pairs",
                        v.len(),
                        pairs.len()
                    )));
                }
                v
            }
            PairInteraction::VanDerWaals { c6 } => {
                let pos = positions.as_ref().ok_or_else(|| {
                    Error::InvalidRegister("C6 interaction requires atom positions".into())
                })?;
                pairs
                    .iter()
                    .map(|&(i, j)| {
                        let r = distance(&pos[i], &pos[j]);
                        if r <= 0.0 {
                            Err(Error::InvalidRegister(format!(
                                "atoms {i} and {j} are at zero distance"
                            )))
                        } else {
                            Ok(c6 / r.powi(6))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        if let Some(v) = strengths.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidRegister(format!(
                "pair interaction must be positive and finite, got {v}"
            )));
        }
        Ok(AtomRegister {
            scheme,
            roles,
            positions,
            pairs,
            strengths,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.roles.len()
    }

    pub fn scheme(&self) -> &LevelScheme {
        &self.scheme
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn positions(&self) -> Option<&[[f64; 3]]> {
        self.positions.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.scheme.n_levels().pow(self.n_atoms() as u32)
    }

    /// Atom pairs `(i, j)` with `i < j`, lexicographic.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Pair shifts in [`Self::pairs`] order, rad/µs.
    pub fn pair_strengths(&self) -> &[f64] {
        &self.strengths
    }

    pub fn interaction(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.pairs
            .iter()
            .position(|&p| p == key)
            .map(|k| self.strengths[k])
    }

    pub fn atoms_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.n_atoms()).filter(|&a| self.roles[a] == role).collect()
    }

    /// Index of a product state given one level label per atom.
    pub fn basis_index(&self, labels: &[&str]) -> Result<usize> {
        if labels.len() != self.n_atoms() {
            return Err(Error::DimensionMismatch {
                expected: self.n_atoms(),
                found: labels.len(),
            });
        }
        let levels = labels
            .iter()
            .map(|l| self.scheme.index_of(l))
            .collect::<Result<Vec<_>>>()?;
        self.index_of_levels(&levels)
    }

    pub fn index_of_levels(&self, levels: &[usize]) -> Result<usize> {
        let d = self.scheme.n_levels();
        if levels.len() != self.n_atoms() {
            return Err(Error::DimensionMismatch {
                expected: self.n_atoms(),
                found: levels.len(),
            });
        }
        levels.iter().try_fold(0usize, |acc, &l| {
            if l >= d {
                Err(Error::UnknownLevel(l.to_string()))
            } else {
                Ok(acc * d + l)
            }
        })
    }

    /// Inverse of [`Self::index_of_levels`].
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let d = self.scheme.n_levels();
        let mut out = vec![0; self.n_atoms()];
        for slot in out.iter_mut().rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    pub fn labels_of(&self, index: usize) -> Vec<&str> {
        self.levels_of(index)
            .into_iter()
            .map(|l| self.scheme.labels[l].as_str())
            .collect()
    }

    pub fn level_of(&self, index: usize, atom: usize) -> usize {
        let d = self.scheme.n_levels();
        (index / d.pow((self.n_atoms() - 1 - atom) as u32)) % d
    }

    pub fn n_qubit_states(&self) -> usize {
        1 << self.n_atoms()
    }

    /// Full-basis index of the computational state whose bit string (atom 0
    /// most significant) encodes `bits`.
    pub fn computational_index(&self, bits: usize) -> usize {
        let [zero, one] = self.scheme.computational;
        let n = self.n_atoms();
        let levels: Vec<usize> = (0..n)
            .map(|a| if (bits >> (n - 1 - a)) & 1 == 1 { one } else { zero })
            .collect();
        self.index_of_levels(&levels).expect("valid levels")
    }

    pub fn computational_indices(&self) -> Vec<usize> {
        (0..self.n_qubit_states())
            .map(|b| self.computational_index(b))
            .collect()
    }

    pub fn bit_label(&self, bits: usize) -> String {
        let n = self.n_atoms();
        (0..n)
            .map(|a| if (bits >> (n - 1 - a)) & 1 == 1 { '1' } else { '0' })
            .collect()
    }

    /// Number of atoms in the Rydberg level for a basis state.
    pub fn rydberg_count(&self, index: usize) -> usize {
        let r = self.scheme.rydberg;
        self.levels_of(index).into_iter().filter(|&l| l == r).count()
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Vertices of an equilateral triangle with side `spacing` in the xy plane.
pub fn equilateral_triangle(spacing: f64) -> Vec<[f64; 3]> {
    vec![
        [0.0, 0.0, 0.0],
        [spacing, 0.0, 0.0],
        [spacing / 2.0, spacing * 3f64.sqrt() / 2.0, 0.0],
    ]
}

/// Atomic and optical constants for Doppler estimates, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Atomic mass, kg.
    pub mass: f64,
    /// First excitation wavelength, m.
    pub lambda_1: f64,
    /// Second excitation wavelength, m.
    pub lambda_2: f64,
}

pub const BOLTZMANN: f64 = 1.380649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const CS133_MASS_U: f64 = 132.905_451_961;

impl PhysicalConstants {
    /// ¹³³Cs excited through 7P with 459.4 nm and 1040 nm beams.
    pub fn cesium() -> Self {
        PhysicalConstants {
            k_b: BOLTZMANN,
            mass: CS133_MASS_U * ATOMIC_MASS_UNIT,
            lambda_1: 459.4e-9,
            lambda_2: 1040e-9,
        }
    }

    /// Effective two-photon wavevector for counterpropagating beams, rad/m.
    pub fn k_eff(&self) -> f64 {
        2.0 * PI * (1.0 / self.lambda_1 - 1.0 / self.lambda_2).abs()
    }

    /// RMS velocity along one axis at temperature `t_kelvin`, m/s.
    pub fn v_rms(&self, t_kelvin: f64) -> f64 {
        (self.k_b * t_kelvin / self.mass).sqrt()
    }

    /// Doppler detuning standard deviation, rad/s.
    pub fn doppler_sigma(&self, t_kelvin: f64) -> f64 {
        self.k_eff() * self.v_rms(t_kelvin)
    }
}
