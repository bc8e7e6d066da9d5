use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// The five parasitic egg classes of the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Ascaris lumbricoides
    AL,
    /// Hookworm
    HW,
    /// Opisthorchis viverrine
    OV,
    /// Taenia spp.
    TS,
    /// Trichuris trichiura
    Tri,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [Self::AL, Self::HW, Self::OV, Self::TS, Self::Tri];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AL => "AL",
            Self::HW => "HW",
            Self::OV => "OV",
            Self::TS => "TS",
            Self::Tri => "Tri",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            Self::AL => "Ascaris lumbricoides",
            Self::HW => "Hookworm",
            Self::OV => "Opisthorchis viverrine",
            Self::TS => "Taenia spp.",
            Self::Tri => "Trichuris trichiura",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_owned()))
    }
}

/// A value for every class, serialised as a `{"AL": .., ...}` map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PerClass<T>(pub [T; ClassLabel::COUNT]);

impl<T> PerClass<T> {
    pub fn from_fn(mut f: impl FnMut(ClassLabel) -> T) -> Self {
        PerClass(ClassLabel::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassLabel, &T)> {
        ClassLabel::ALL.into_iter().zip(self.0.iter())
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }
}

impl<T> Index<ClassLabel> for PerClass<T> {
    type Output = T;
    fn index(&self, c: ClassLabel) -> &T {
        &self.0[c.index()]
    }
}

impl<T> IndexMut<ClassLabel> for PerClass<T> {
    fn index_mut(&mut self, c: ClassLabel) -> &mut T {
        &mut self.0[c.index()]
    }
}

impl<T: Serialize> Serialize for PerClass<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<ClassLabel, &T> = self.iter().collect();
        map.serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for PerClass<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut map: BTreeMap<ClassLabel, T> = BTreeMap::deserialize(d)?;
        let mut missing = None;
        let values = ClassLabel::ALL.map(|c| {
            let v = map.remove(&c);
            if v.is_none() {
                missing = Some(c);
            }
            v
        });
        if let Some(c) = missing {
            return Err(serde::de::Error::custom(format!("missing class {c}")));
        }
        Ok(PerClass(values.map(|v| v.expect("checked above"))))
    }
}
