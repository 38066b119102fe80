//! Object/affordance knowledge base.
//!
//! The ontology is a TOML document:
//!
//! ```toml
//! affordances = ["pick", "place", "pour", "accept_pouring"]
//!
//! [[objects]]
//! class = "cup"
//! manipulable = true
//! affordances = ["pick", "place", "pour"]
//! ```
//!
//! `pick`, `place`, `pour` and `accept_pouring` are always registered; the
//! `affordances` list may declare more. An optional `requires_manipulation`
//! list (default `pick`, `place`, `pour`) names affordances that a
//! non-manipulable class may not carry.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

pub const DEFAULT_AFFORDANCES: [&str; 4] = ["pick", "place", "pour", "accept_pouring"];
pub const DEFAULT_REQUIRES_MANIPULATION: [&str; 3] = ["pick", "place", "pour"];

/// Ontology shipped with the crate (the demonstration object sets).
pub const DEFAULT_ONTOLOGY: &str = include_str!("../data/ontology.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OntologyError {
    #[error("ontology parse error: {0}")]
    Parse(String),
    #[error("duplicate object class '{0}'")]
    DuplicateClass(String),
    #[error("duplicate affordance '{0}' in registry")]
    DuplicateAffordance(String),
    #[error("invalid name '{0}': expected [a-z0-9_]+")]
    InvalidName(String),
    #[error("object '{class}' references undeclared affordance '{affordance}'")]
    UndeclaredAffordance { class: String, affordance: String },
    #[error("object '{class}' is not manipulable but carries '{affordance}'")]
    RequiresManipulation { class: String, affordance: String },
    #[error("unknown object class '{0}'")]
    UnknownClass(String),
    #[error("unknown affordance '{0}'")]
    UnknownAffordance(String),
}

/// Canonical lower-case affordance name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Affordance(String);

impl Affordance {
    pub fn new(name: &str) -> Result<Self, OntologyError> {
        canonical_name(name).map(Affordance)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Affordance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn canonical_name(name: &str) -> Result<String, OntologyError> {
    let lower = name.trim().to_ascii_lowercase();
    let ok = !lower.is_empty()
        && lower.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
    if ok {
        Ok(lower)
    } else {
        Err(OntologyError::InvalidName(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSpec {
    pub class_name: String,
    pub manipulable: bool,
    pub affordances: BTreeSet<Affordance>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    objects: BTreeMap<String, ObjectSpec>,
    affordances: Vec<Affordance>,
    requires_manipulation: Vec<Affordance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyDoc {
    #[serde(default)]
    affordances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requires_manipulation: Option<Vec<String>>,
    #[serde(default)]
    objects: Vec<ObjectDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    class: String,
    manipulable: bool,
    #[serde(default)]
    affordances: Vec<String>,
}

pub fn load_ontology(source: &str) -> Result<Ontology, OntologyError> {
    let doc: OntologyDoc = toml::from_str(source).map_err(|e| OntologyError::Parse(e.to_string()))?;
    Ontology::from_doc(doc)
}

impl Ontology {
    pub fn builtin() -> Self {
        load_ontology(DEFAULT_ONTOLOGY).expect("shipped ontology is valid")
    }

    fn from_doc(doc: OntologyDoc) -> Result<Self, OntologyError> {
        let mut affordances: Vec<Affordance> = Vec::new();
        let mut declared = BTreeSet::new();
        for name in &doc.affordances {
            let a = Affordance::new(name)?;
            if !declared.insert(a.clone()) {
                return Err(OntologyError::DuplicateAffordance(a.0));
            }
        }
        for name in DEFAULT_AFFORDANCES {
            affordances.push(Affordance(name.to_string()));
        }
        for name in &doc.affordances {
            let a = Affordance::new(name)?;
            if !affordances.contains(&a) {
                affordances.push(a);
            }
        }

        let requires_manipulation = match &doc.requires_manipulation {
            Some(list) => list.iter().map(|n| Affordance::new(n)).collect::<Result<Vec<_>, _>>()?,
            None => DEFAULT_REQUIRES_MANIPULATION.iter().map(|n| Affordance(n.to_string())).collect(),
        };
        for a in &requires_manipulation {
            if !affordances.contains(a) {
                return Err(OntologyError::UnknownAffordance(a.0.clone()));
            }
        }

        let mut objects = BTreeMap::new();
        for o in doc.objects {
            let class_name = canonical_class(&o.class)?;
            let mut set = BTreeSet::new();
            for name in &o.affordances {
                let a = Affordance::new(name)?;
                if !affordances.contains(&a) {
                    return Err(OntologyError::UndeclaredAffordance {
                        class: class_name,
                        affordance: a.0,
                    });
                }
                set.insert(a);
            }
            if !o.manipulable {
                if let Some(a) = requires_manipulation.iter().find(|a| set.contains(*a)) {
                    return Err(OntologyError::RequiresManipulation {
                        class: class_name,
                        affordance: a.0.clone(),
                    });
                }
            }
            let spec = ObjectSpec { class_name: class_name.clone(), manipulable: o.manipulable, affordances: set };
            if objects.insert(class_name.clone(), spec).is_some() {
                return Err(OntologyError::DuplicateClass(class_name));
            }
        }
        Ok(Ontology { objects, affordances, requires_manipulation })
    }

    /// Number of object classes.
    pub fn n(&self) -> usize {
        self.objects.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(String::as_str)
    }

    pub fn affordance_registry(&self) -> &[Affordance] {
        &self.affordances
    }

    pub fn object(&self, class: &str) -> Result<&ObjectSpec, OntologyError> {
        self.objects.get(class).ok_or_else(|| OntologyError::UnknownClass(class.to_string()))
    }

    pub fn contains_class(&self, class: &str) -> bool {
        self.objects.contains_key(class)
    }

    pub fn affordance(&self, name: &str) -> Result<&Affordance, OntologyError> {
        self.affordances
            .iter()
            .find(|a| a.0 == name)
            .ok_or_else(|| OntologyError::UnknownAffordance(name.to_string()))
    }

    /// `g_m`: whether the class is manipulable (an active object).
    pub fn manipulable(&self, class: &str) -> Result<bool, OntologyError> {
        Ok(self.object(class)?.manipulable)
    }

    /// `g_l`: every affordance of the class.
    pub fn affordances_of(&self, class: &str) -> Result<&BTreeSet<Affordance>, OntologyError> {
        Ok(&self.object(class)?.affordances)
    }

    /// `g_a`: whether `affordance` is one of the class's affordances.
    pub fn has_affordance(&self, class: &str, affordance: &str) -> Result<bool, OntologyError> {
        let spec = self.object(class)?;
        let a = self.affordance(affordance)?;
        Ok(spec.affordances.contains(a))
    }

    pub fn to_toml(&self) -> String {
        let doc = OntologyDoc {
            affordances: self.affordances.iter().map(|a| a.0.clone()).collect(),
            requires_manipulation: Some(self.requires_manipulation.iter().map(|a| a.0.clone()).collect()),
            objects: self
                .objects
                .values()
                .map(|o| ObjectDoc {
                    class: o.class_name.clone(),
                    manipulable: o.manipulable,
                    affordances: o.affordances.iter().map(|a| a.0.clone()).collect(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("ontology document serializes")
    }
}

fn canonical_class(name: &str) -> Result<String, OntologyError> {
    let trimmed = name.trim();
    let ok = !trimmed.is_empty()
        && trimmed.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(trimmed.to_string())
    } else {
        Err(OntologyError::InvalidName(name.to_string()))
    }
}
