//! Incident taxonomy: nine hazard families and their numbered subcategories.
//!
//! Category ids are assigned in table reading order: families top to bottom,
//! categories left to right within a family. The built-in table ships embedded
//! in the crate; a user file with the same JSON shape can replace it.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EMBEDDED: &str = include_str!("../data/taxonomy.json");

pub type CategoryId = u32;
pub type FamilyId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardFamily {
    pub id: FamilyId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardCategory {
    pub id: CategoryId,
    pub family_id: FamilyId,
    pub name: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown category id {0}")]
    UnknownCategory(i64),
    #[error("invalid taxonomy definition: {0}")]
    Invalid(String),
    #[error("failed to read taxonomy file: {0}")]
    Io(String),
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    families: Vec<HazardFamily>,
    categories: Vec<HazardCategory>,
}

/// Immutable family/category table with total lookup over stored ids.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    families: Vec<HazardFamily>,
    categories: Vec<HazardCategory>,
    by_name: HashMap<String, CategoryId>,
}

impl Taxonomy {
    /// The built-in table.
    pub fn load() -> Self {
        Self::from_json(EMBEDDED).expect("embedded taxonomy is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Invalid(e.to_string()))?;
        Self::new(file.families, file.categories)
    }

    /// Validates contiguity, family membership, reading order and name uniqueness.
    pub fn new(
        families: Vec<HazardFamily>,
        categories: Vec<HazardCategory>,
    ) -> Result<Self, TaxonomyError> {
        if families.is_empty() {
            return Err(TaxonomyError::Invalid("no families".into()));
        }
        for (i, f) in families.iter().enumerate() {
            if f.id as usize != i + 1 {
                return Err(TaxonomyError::Invalid(format!(
                    "family ids must be contiguous from 1, found {} at position {}",
                    f.id,
                    i + 1
                )));
            }
            if f.name.trim().is_empty() {
                return Err(TaxonomyError::Invalid(format!("family {} has no name", f.id)));
            }
        }
        let mut by_name = HashMap::new();
        let mut last_family = 0;
        for (i, c) in categories.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(TaxonomyError::Invalid(format!(
                    "category ids must be contiguous from 1, found {} at position {}",
                    c.id,
                    i + 1
                )));
            }
            if c.family_id == 0 || c.family_id as usize > families.len() {
                return Err(TaxonomyError::Invalid(format!(
                    "category {} references unknown family {}",
                    c.id, c.family_id
                )));
            }
            if c.family_id < last_family {
                return Err(TaxonomyError::Invalid(format!(
                    "category {} breaks family reading order",
                    c.id
                )));
            }
            last_family = c.family_id;
            if by_name.insert(c.name.clone(), c.id).is_some() {
                return Err(TaxonomyError::Invalid(format!(
                    "duplicate category name {:?}",
                    c.name
                )));
            }
        }
        Ok(Self {
            families,
            categories,
            by_name,
        })
    }

    pub fn families(&self) -> &[HazardFamily] {
        &self.families
    }

    pub fn categories(&self) -> &[HazardCategory] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn resolve(&self, id: i64) -> Result<&HazardCategory, TaxonomyError> {
        if id < 1 || id as usize > self.categories.len() {
            return Err(TaxonomyError::UnknownCategory(id));
        }
        Ok(&self.categories[id as usize - 1])
    }

    pub fn family(&self, id: FamilyId) -> Option<&HazardFamily> {
        self.families.get((id as usize).checked_sub(1)?)
    }

    pub fn family_of(&self, category: CategoryId) -> Option<&HazardFamily> {
        let c = self.categories.get((category as usize).checked_sub(1)?)?;
        self.family(c.family_id)
    }

    pub fn categories_in(&self, family: FamilyId) -> impl Iterator<Item = &HazardCategory> {
        self.categories.iter().filter(move |c| c.family_id == family)
    }

    pub fn id_by_name(&self, name: &str) -> Option<CategoryId> {
        self.by_name.get(name).copied()
    }

    /// De-duplicates preserving first occurrence; fails on the first unknown id.
    pub fn validate_ids(&self, ids: &[i64]) -> Result<Vec<CategoryId>, TaxonomyError> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let c = self.resolve(id)?;
            if seen.insert(c.id) {
                out.push(c.id);
            }
        }
        Ok(out)
    }

    /// Numbered `id. name (family)` lines, one per category.
    pub fn render_numbered(&self) -> String {
        let mut out = String::new();
        for c in &self.categories {
            let fam = &self.families[c.family_id as usize - 1].name;
            out.push_str(&format!("{}. {} [{}]\n", c.id, c.name, fam));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TaxonomyFile {
            families: self.families.clone(),
            categories: self.categories.clone(),
        })
        .expect("taxonomy serializes")
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::load()
    }
}
