//! The three-level transition taxonomy: domain > subdomain > transition.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::assets;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Domain,
    Subdomain,
    Transition,
}

/// A flattened view of one taxonomy entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub level: Level,
    pub name: String,
    pub display: String,
    pub parent: Option<String>,
    pub object_pool: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawTransition {
    name: String,
    display: String,
    objects: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawSubdomain {
    name: String,
    display: String,
    transitions: Vec<RawTransition>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawDomain {
    name: String,
    display: String,
    subdomains: Vec<RawSubdomain>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawTaxonomy {
    version: u32,
    domains: Vec<RawDomain>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub version: u32,
    raw: Vec<RawDomain>,
}

impl Taxonomy {
    pub fn parse(json: &str) -> Result<Self> {
        let raw: RawTaxonomy = serde_json::from_str(json)?;
        let tax = Taxonomy {
            version: raw.version,
            raw: raw.domains,
        };
        for node in tax.transitions() {
            if node.object_pool.is_empty() {
                return Err(Error::Taxonomy(format!(
                    "transition `{}` has an empty object pool",
                    node.name
                )));
            }
        }
        Ok(tax)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> &'static Taxonomy {
        static TAX: OnceLock<Taxonomy> = OnceLock::new();
        TAX.get_or_init(|| Taxonomy::parse(assets::TAXONOMY_JSON).expect("shipped taxonomy"))
    }

    pub fn domains(&self) -> Vec<TaxonomyNode> {
        self.raw
            .iter()
            .map(|d| TaxonomyNode {
                level: Level::Domain,
                name: d.name.clone(),
                display: d.display.clone(),
                parent: None,
                object_pool: Vec::new(),
            })
            .collect()
    }

    pub fn subdomains(&self) -> Vec<TaxonomyNode> {
        self.raw
            .iter()
            .flat_map(|d| {
                d.subdomains.iter().map(move |s| TaxonomyNode {
                    level: Level::Subdomain,
                    name: s.name.clone(),
                    display: s.display.clone(),
                    parent: Some(d.name.clone()),
                    object_pool: Vec::new(),
                })
            })
            .collect()
    }

    pub fn transitions(&self) -> Vec<TaxonomyNode> {
        self.raw
            .iter()
            .flat_map(|d| d.subdomains.iter())
            .flat_map(|s| {
                s.transitions.iter().map(move |t| TaxonomyNode {
                    level: Level::Transition,
                    name: t.name.clone(),
                    display: t.display.clone(),
                    parent: Some(s.name.clone()),
                    object_pool: t.objects.clone(),
                })
            })
            .collect()
    }

    pub fn transition(&self, name: &str) -> Result<TaxonomyNode> {
        self.transitions()
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Taxonomy(format!("no transition named `{name}`")))
    }

    pub fn contains(&self, domain: &str, subdomain: &str, transition: &str) -> bool {
        self.raw.iter().any(|d| {
            d.name == domain
                && d.subdomains.iter().any(|s| {
                    s.name == subdomain && s.transitions.iter().any(|t| t.name == transition)
                })
        })
    }

    /// The (domain, subdomain) pair that owns a transition.
    pub fn locate(&self, transition: &str) -> Option<(String, String)> {
        self.raw.iter().find_map(|d| {
            d.subdomains.iter().find_map(|s| {
                s.transitions
                    .iter()
                    .any(|t| t.name == transition)
                    .then(|| (d.name.clone(), s.name.clone()))
            })
        })
    }

    /// Every word that appears in a name, display string or object pool.
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |s: &str| out.extend(crate::datapipe::vocab::split_words(s));
        for d in &self.raw {
            push(&d.name);
            push(&d.display);
            for s in &d.subdomains {
                push(&s.name);
                push(&s.display);
                for t in &s.transitions {
                    push(&t.name);
                    push(&t.display);
                    t.objects.iter().for_each(|o| push(o));
                }
            }
        }
        out
    }
}
