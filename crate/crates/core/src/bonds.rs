//! Bond sign configurations `x_e` in {+1, -1}.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;

/// Sign of every Ising bond; the computational-basis label of the wavefunction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BondConfig(Vec<i8>);

impl BondConfig {
    pub fn ferromagnetic(n_bonds: usize) -> Self {
        BondConfig(vec![1; n_bonds])
    }

    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        if let Some(bad) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::ConfigMismatch(format!(
                "bond sign {bad} is not +1 or -1"
            )));
        }
        Ok(BondConfig(signs))
    }

    /// Bit `e` of `bits` set means bond `e` is antiferromagnetic.
    pub fn from_bits(bits: u64, n_bonds: usize) -> Self {
        BondConfig(
            (0..n_bonds)
                .map(|e| if bits >> e & 1 == 1 { -1 } else { 1 })
                .collect(),
        )
    }

    pub fn to_bits(&self) -> u64 {
        assert!(self.0.len() <= 64, "bit packing supports at most 64 bonds");
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (e, &s)| if s < 0 { acc | 1 << e } else { acc })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, bond: usize) -> i8 {
        self.0[bond]
    }

    pub fn check_matches(&self, geometry: &LatticeGeometry) -> Result<()> {
        if self.0.len() != geometry.n_bonds() {
            return Err(Error::ConfigMismatch(format!(
                "{} bond signs for a lattice with {} bonds",
                self.0.len(),
                geometry.n_bonds()
            )));
        }
        Ok(())
    }

    /// Copy with the listed bonds negated.
    pub fn flipped(&self, flips: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &b in flips {
            let s = out
                .0
                .get_mut(b)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown bond id {b}")))?;
            *s = -*s;
        }
        Ok(out)
    }

    /// Takes bonds where `mask` is set from `inside`, the rest from `outside`.
    pub fn splice(inside: &BondConfig, outside: &BondConfig, mask: &[bool]) -> BondConfig {
        debug_assert_eq!(inside.len(), mask.len());
        BondConfig(
            mask.iter()
                .zip(inside.0.iter().zip(&outside.0))
                .map(|(&m, (&a, &b))| if m { a } else { b })
                .collect(),
        )
    }

    /// Applies `x_e -> x_e * sigma_a * sigma_b` for every bond `e = (a, b)`.
    pub fn gauge_transform(&self, geometry: &LatticeGeometry, sigma: &[i8]) -> Result<Self> {
        self.check_matches(geometry)?;
        if sigma.len() != geometry.n_spins() {
            return Err(Error::ConfigMismatch(format!(
                "{} gauge signs for {} spins",
                sigma.len(),
                geometry.n_spins()
            )));
        }
        Ok(BondConfig(
            geometry
                .bonds()
                .iter()
                .zip(&self.0)
                .map(|(b, &x)| x * sigma[b.spins[0]] * sigma[b.spins[1]])
                .collect(),
        ))
    }

    pub fn n_antiferro(&self) -> usize {
        self.0.iter().filter(|&&s| s < 0).count()
    }

    pub fn to_sign_string(&self) -> String {
        self.0
            .iter()
            .map(|&s| if s > 0 { '+' } else { '-' })
            .collect()
    }

    pub fn parse_sign_string(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::ConfigMismatch(format!(
                    "unexpected character {other:?} in bond string"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BondConfig)
    }
}

impl Serialize for BondConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_sign_string())
    }
}

impl<'de> Deserialize<'de> for BondConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BondConfig::parse_sign_string(&s).map_err(serde::de::Error::custom)
    }
}
