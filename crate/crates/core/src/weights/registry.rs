use serde::{Deserialize, Serialize};

use super::{
    constant_family, interval_family, lipschitz_basis, monomial_family, WeightFamily,
    DEFAULT_BASIS_CAP,
};
use crate::data::Space;
use crate::error::{domain, McError, Result};

/// JSON description of a weight family, e.g. `{"family": "degree", "k": 3, "l": 2}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDescriptor {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

impl FamilyDescriptor {
    pub fn named(family: &str) -> Self {
        Self {
            family: family.into(),
            ..Self::default()
        }
    }

    /// Fills `l` and `scalar` from a prediction space when they are absent.
    pub fn with_space_defaults(mut self, space: Space) -> Self {
        self.l.get_or_insert(space.classes());
        self.scalar.get_or_insert(space.is_scalar());
        self
    }

    pub fn space(&self) -> Result<Space> {
        let l = self.l.ok_or_else(|| {
            McError::Domain(format!("family {} needs the class count l", self.family))
        })?;
        Space::new(l, self.scalar.unwrap_or(false))
    }
}

/// Builds one kind of weight family from its descriptor.
pub trait FamilyBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn aliases(&self) -> &'static [&'static str] {
        &[]
    }

    fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily>;
}

struct Multiaccuracy;
struct Degree;
struct Interval;
struct Lipschitz;

impl FamilyBuilder for Multiaccuracy {
    fn name(&self) -> &'static str {
        "ma"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["constant"]
    }
    fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily> {
        Ok(constant_family(desc.space()?))
    }
}

impl FamilyBuilder for Degree {
    fn name(&self) -> &'static str {
        "degree"
    }
    fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily> {
        let k = desc
            .k
            .ok_or_else(|| McError::Domain("degree family needs k".into()))?;
        monomial_family(desc.space()?, k)
    }
}

impl FamilyBuilder for Interval {
    fn name(&self) -> &'static str {
        "interval"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["full"]
    }
    fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily> {
        let delta = desc
            .delta
            .ok_or_else(|| McError::Domain("interval family needs delta".into()))?;
        interval_family(desc.space()?, delta)
    }
}

impl FamilyBuilder for Lipschitz {
    fn name(&self) -> &'static str {
        "lipschitz"
    }
    fn aliases(&self) -> &'static [&'static str] {
        &["smooth"]
    }
    fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily> {
        let eta = desc
            .eta
            .ok_or_else(|| McError::Domain("lipschitz family needs eta".into()))?;
        lipschitz_basis(desc.space()?, eta, desc.cap.unwrap_or(DEFAULT_BASIS_CAP))
    }
}

/// Name-indexed collection of family builders.
pub struct FamilyRegistry {
    builders: Vec<Box<dyn FamilyBuilder>>,
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Box::new(Multiaccuracy));
        reg.register(Box::new(Degree));
        reg.register(Box::new(Interval));
        reg.register(Box::new(Lipschitz));
        reg
    }
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        Self {
            builders: Vec::new(),
        }
    }

    /// Adds a builder; a later registration shadows an earlier one with the same name.
    pub fn register(&mut self, builder: Box<dyn FamilyBuilder>) {
        self.builders.insert(0, builder);
    }

    pub fn get(&self, name: &str) -> Option<&dyn FamilyBuilder> {
        self.builders
            .iter()
            .find(|b| b.name() == name || b.aliases().contains(&name))
            .map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut names: Vec<_> = self.builders.iter().map(|b| b.name()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn build(&self, desc: &FamilyDescriptor) -> Result<WeightFamily> {
        match self.get(&desc.family) {
            Some(b) => b.build(desc),
            None => domain(format!(
                "unknown weight family {:?}; known: {}",
                desc.family,
                self.names().join(", ")
            )),
        }
    }
}
