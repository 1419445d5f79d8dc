//! Concept/property tables, human correction overlays and the conceptual
//! minimal-pair builder.
//!
//! A table holds per-language concept surface forms and per-language property
//! templates containing exactly one [`SLOT_MARKER`]. Each relation entry names
//! an acceptable and an unacceptable concept for one property and becomes one
//! minimal pair. Negatives are never generated here; they come in with the
//! relation list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Duality, Level, MinimalPair};

pub const SLOT_MARKER: &str = "<C>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: String,
    /// language code -> surface form
    pub surface: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub property_id: String,
    /// language code -> sentence template with one slot marker
    pub templates: BTreeMap<String, String>,
    /// language code -> notes on verbatim agreement with the source template
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Taxonomy,
    PropertyNorms,
    CoOccurrence,
    Random,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Taxonomy => "taxonomy",
            RelationKind::PropertyNorms => "property_norms",
            RelationKind::CoOccurrence => "co_occurrence",
            RelationKind::Random => "random",
        }
    }

    /// Task id used for pairs built from this relation type.
    pub fn task_id(self) -> String {
        format!("comps_{}", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub concept_pos: String,
    pub concept_neg: String,
    pub relation: RelationKind,
    pub property_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPropertyTable {
    pub concepts: Vec<Concept>,
    pub properties: Vec<Property>,
    pub relations: Vec<Relation>,
}

fn check_template(property: &str, template: &str) -> Result<(), CorpusError> {
    let n = template.matches(SLOT_MARKER).count();
    if n != 1 {
        return Err(CorpusError::MalformedTemplate {
            property: property.to_string(),
            reason: format!("expected exactly one {SLOT_MARKER}, found {n}"),
        });
    }
    Ok(())
}

impl ConceptPropertyTable {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Structural checks that do not depend on a language.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut concept_ids = HashSet::new();
        for c in &self.concepts {
            if !concept_ids.insert(c.concept_id.as_str()) {
                return Err(CorpusError::InvalidTable(format!(
                    "duplicate concept_id `{}`",
                    c.concept_id
                )));
            }
        }
        let mut property_ids = HashSet::new();
        for p in &self.properties {
            if !property_ids.insert(p.property_id.as_str()) {
                return Err(CorpusError::InvalidTable(format!(
                    "duplicate property_id `{}`",
                    p.property_id
                )));
            }
            for template in p.templates.values() {
                check_template(&p.property_id, template)?;
            }
        }
        for (i, r) in self.relations.iter().enumerate() {
            for id in [&r.concept_pos, &r.concept_neg] {
                if !concept_ids.contains(id.as_str()) {
                    return Err(CorpusError::InvalidTable(format!(
                        "relation {i} references unknown concept `{id}`"
                    )));
                }
            }
            if !property_ids.contains(r.property_id.as_str()) {
                return Err(CorpusError::InvalidTable(format!(
                    "relation {i} references unknown property `{}`",
                    r.property_id
                )));
            }
            if r.concept_pos == r.concept_neg {
                return Err(CorpusError::InvalidTable(format!(
                    "relation {i} uses `{}` as both concepts",
                    r.concept_pos
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Concept,
    Property,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionEntry {
    pub entity_kind: EntityKind,
    pub entity_id: String,
    pub language: String,
    pub corrected_text: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOverlay {
    pub entries: Vec<CorrectionEntry>,
}

impl CorrectionOverlay {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut keys = HashSet::new();
        for e in &self.entries {
            if !keys.insert((e.entity_kind, e.entity_id.as_str(), e.language.as_str())) {
                return Err(CorpusError::InvalidOverlay(format!(
                    "duplicate entry for {:?} `{}` ({})",
                    e.entity_kind, e.entity_id, e.language
                )));
            }
            if e.corrected_text.trim().is_empty() {
                return Err(CorpusError::InvalidOverlay(format!(
                    "empty corrected_text for `{}` ({})",
                    e.entity_id, e.language
                )));
            }
            if e.entity_kind == EntityKind::Property {
                check_template(&e.entity_id, &e.corrected_text)?;
            }
        }
        Ok(())
    }
}

/// Replace surface forms / templates named by the overlay, for the overlay's
/// language only. Applying the same overlay twice equals applying it once.
pub fn apply_overlay(
    table: &ConceptPropertyTable,
    overlay: &CorrectionOverlay,
) -> Result<ConceptPropertyTable, CorpusError> {
    overlay.validate()?;
    let mut out = table.clone();
    let concept_index: HashMap<String, usize> = out
        .concepts
        .iter()
        .enumerate()
        .map(|(i, c)| (c.concept_id.clone(), i))
        .collect();
    let property_index: HashMap<String, usize> = out
        .properties
        .iter()
        .enumerate()
        .map(|(i, p)| (p.property_id.clone(), i))
        .collect();
    for e in &overlay.entries {
        match e.entity_kind {
            EntityKind::Concept => {
                let i = concept_index.get(&e.entity_id).ok_or_else(|| {
                    CorpusError::DanglingEntity {
                        kind: "concept",
                        id: e.entity_id.clone(),
                    }
                })?;
                out.concepts[*i]
                    .surface
                    .insert(e.language.clone(), e.corrected_text.clone());
            }
            EntityKind::Property => {
                let i = property_index.get(&e.entity_id).ok_or_else(|| {
                    CorpusError::DanglingEntity {
                        kind: "property",
                        id: e.entity_id.clone(),
                    }
                })?;
                out.properties[*i]
                    .templates
                    .insert(e.language.clone(), e.corrected_text.clone());
            }
        }
    }
    Ok(out)
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Fill the slot and upper-case the first character of the sentence.
pub fn instantiate(template: &str, concept: &str) -> String {
    capitalize_first(&template.replacen(SLOT_MARKER, concept, 1))
}

/// One pair per relation entry, in relation order.
pub fn build_comps(table: &ConceptPropertyTable, language: &str) -> Result<Dataset, CorpusError> {
    table.validate()?;
    let concepts: HashMap<&str, &Concept> = table
        .concepts
        .iter()
        .map(|c| (c.concept_id.as_str(), c))
        .collect();
    let properties: HashMap<&str, &Property> = table
        .properties
        .iter()
        .map(|p| (p.property_id.as_str(), p))
        .collect();

    let surface = |id: &str| -> Result<&str, CorpusError> {
        concepts[id]
            .surface
            .get(language)
            .map(String::as_str)
            .ok_or_else(|| CorpusError::MissingConceptTranslation {
                concept: id.to_string(),
                language: language.to_string(),
            })
    };

    let mut pairs = Vec::with_capacity(table.relations.len());
    for (i, rel) in table.relations.iter().enumerate() {
        let property = properties[rel.property_id.as_str()];
        let template =
            property
                .templates
                .get(language)
                .ok_or_else(|| CorpusError::MissingTemplate {
                    property: rel.property_id.clone(),
                    language: language.to_string(),
                })?;
        let good = surface(&rel.concept_pos)?;
        let bad = surface(&rel.concept_neg)?;
        pairs.push(MinimalPair {
            pair_id: format!("comps_{language}_{}", i + 1),
            task_id: rel.relation.task_id(),
            sentence_good: instantiate(template, good),
            sentence_bad: instantiate(template, bad),
            language: language.to_string(),
            duality: Duality::Meaning,
            phenomenon: rel.relation.as_str().to_string(),
            level: Level::Conceptual,
            concept_good: Some(good.to_string()),
            concept_bad: Some(bad.to_string()),
        });
    }
    Ok(Dataset::new(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept(id: &str, en: &str, de: &str) -> Concept {
        Concept {
            concept_id: id.into(),
            surface: [("en".to_string(), en.to_string()), ("de".to_string(), de.to_string())]
                .into_iter()
                .collect(),
        }
    }

    fn table() -> ConceptPropertyTable {
        ConceptPropertyTable {
            concepts: vec![
                concept("helmet", "helmet", "Helm"),
                concept("cap", "cap", "Mütze"),
                concept("cup", "cup", "Becher"),
            ],
            properties: vec![
                Property {
                    property_id: "absorb_shocks".into(),
                    templates: [
                        ("en".to_string(), "<C> can absorb shocks".to_string()),
                        ("de".to_string(), "<C> kann Stöße absorbieren".to_string()),
                    ]
                    .into_iter()
                    .collect(),
                    notes: BTreeMap::new(),
                },
                Property {
                    property_id: "holds_coffee".into(),
                    templates: [
                        ("en".to_string(), "a <C> holds coffee".to_string()),
                        ("de".to_string(), "ein <C> hält Kaffee".to_string()),
                    ]
                    .into_iter()
                    .collect(),
                    notes: BTreeMap::new(),
                },
            ],
            relations: vec![
                Relation {
                    concept_pos: "helmet".into(),
                    concept_neg: "cap".into(),
                    relation: RelationKind::Taxonomy,
                    property_id: "absorb_shocks".into(),
                },
                Relation {
                    concept_pos: "cup".into(),
                    concept_neg: "helmet".into(),
                    relation: RelationKind::Random,
                    property_id: "holds_coffee".into(),
                },
            ],
        }
    }

    #[test]
    fn helmet_cap_pair() {
        let ds = build_comps(&table(), "en").unwrap();
        assert_eq!(ds.pairs[0].sentence_good, "Helmet can absorb shocks");
        assert_eq!(ds.pairs[0].sentence_bad, "Cap can absorb shocks");
        assert_eq!(ds.pairs[0].phenomenon, "taxonomy");
        assert_eq!(ds.pairs[1].sentence_good, "A cup holds coffee");
        assert!(ds.pairs.iter().all(|p| p.violations().is_empty()));
    }

    #[test]
    fn overlay_touches_one_language() {
        let overlay = CorrectionOverlay {
            entries: vec![CorrectionEntry {
                entity_kind: EntityKind::Concept,
                entity_id: "cup".into(),
                language: "de".into(),
                corrected_text: "Tasse".into(),
                note: "Becher is a mug".into(),
            }],
        };
        let t = table();
        let corrected = apply_overlay(&t, &overlay).unwrap();
        assert_eq!(corrected.concepts[2].surface["de"], "Tasse");
        assert_eq!(corrected.concepts[2].surface["en"], "cup");
        assert_eq!(apply_overlay(&corrected, &overlay).unwrap(), corrected);
        assert_eq!(apply_overlay(&t, &CorrectionOverlay::default()).unwrap(), t);

        let de = build_comps(&corrected, "de").unwrap();
        assert_eq!(de.pairs[1].sentence_good, "Ein Tasse hält Kaffee");
        assert_eq!(build_comps(&corrected, "en").unwrap(), build_comps(&t, "en").unwrap());
    }

    #[test]
    fn dangling_overlay_entry() {
        let overlay = CorrectionOverlay {
            entries: vec![CorrectionEntry {
                entity_kind: EntityKind::Property,
                entity_id: "nope".into(),
                language: "de".into(),
                corrected_text: "<C> x".into(),
                note: String::new(),
            }],
        };
        assert!(matches!(
            apply_overlay(&table(), &overlay),
            Err(CorpusError::DanglingEntity { kind: "property", .. })
        ));
    }

    #[test]
    fn template_must_have_one_slot() {
        let mut t = table();
        t.properties[0]
            .templates
            .insert("en".into(), "<C> and <C>".into());
        assert!(matches!(
            build_comps(&t, "en"),
            Err(CorpusError::MalformedTemplate { .. })
        ));
    }

    #[test]
    fn missing_language() {
        assert!(matches!(
            build_comps(&table(), "zh"),
            Err(CorpusError::MissingTemplate { .. })
        ));
        let mut t = table();
        t.properties.iter_mut().for_each(|p| {
            p.templates.insert("fr".into(), "<C> x".into());
        });
        assert!(matches!(
            build_comps(&t, "fr"),
            Err(CorpusError::MissingConceptTranslation { .. })
        ));
    }

    #[test]
    fn relation_with_same_concepts_rejected() {
        let mut t = table();
        t.relations[0].concept_neg = "helmet".into();
        assert!(matches!(t.validate(), Err(CorpusError::InvalidTable(_))));
    }

    #[test]
    fn capitalization_is_unicode_aware() {
        assert_eq!(instantiate("<C> ist kalt", "äpfel"), "Äpfel ist kalt");
        assert_eq!(instantiate("<C>会飞", "鸟"), "鸟会飞");
    }
}
