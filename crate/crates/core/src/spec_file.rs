//! Bias-test specification documents (JSON) and dataset balance checks.
//!
//! A document holds one test plus the image manifest that labels every
//! image with the target category it depicts (`x` or `y`) and, for attribute
//! images, the attribute it depicts (`A` or `B`). Field names are frozen at
//! `schema_version` 1; see the README for the full schema.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttributeGroup, AttributeSets, GroundedBiasTest, StimulusKey, TargetElement, NO_IMAGE,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::X => "x",
            Category::Y => "y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeLabel {
    A,
    B,
}

impl fmt::Display for AttributeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributeLabel::A => "A",
            AttributeLabel::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeLabel>,
}

fn group_labels(group: AttributeGroup) -> (Category, AttributeLabel) {
    match group {
        AttributeGroup::Ax => (Category::X, AttributeLabel::A),
        AttributeGroup::Ay => (Category::Y, AttributeLabel::A),
        AttributeGroup::Bx => (Category::X, AttributeLabel::B),
        AttributeGroup::By => (Category::Y, AttributeLabel::B),
    }
}

fn group_field(group: AttributeGroup) -> &'static str {
    match group {
        AttributeGroup::Ax => "a_x",
        AttributeGroup::Ay => "a_y",
        AttributeGroup::Bx => "b_x",
        AttributeGroup::By => "b_y",
    }
}

/// A validated test plus its image manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecFile {
    test: GroundedBiasTest,
    images: BTreeMap<String, ImageInfo>,
}

impl SpecFile {
    /// Cross-checks every image reference of `test` against the manifest.
    pub fn new(test: GroundedBiasTest, images: BTreeMap<String, ImageInfo>) -> Result<Self> {
        for (side, field, elems) in [(Category::X, "x", test.x()), (Category::Y, "y", test.y())] {
            for (i, t) in elems.iter().enumerate() {
                for (j, img) in t.image_ids.iter().enumerate() {
                    let path = format!("test.targets.{field}[{i}].images[{j}]");
                    if img == NO_IMAGE {
                        continue;
                    }
                    let info = images.get(img).ok_or_else(|| Error::DanglingReference {
                        path: path.clone(),
                        image_id: img.clone(),
                    })?;
                    if info.category != side {
                        return Err(Error::CategoryMismatch {
                            path,
                            image_id: img.clone(),
                            expected: format!("category {side}"),
                            found: format!("category {}", info.category),
                        });
                    }
                }
            }
        }
        for group in AttributeGroup::ALL {
            let (category, label) = group_labels(group);
            for (i, key) in test.group(group).iter().enumerate() {
                let path = format!("test.attributes.{}[{i}].image", group_field(group));
                if !key.is_grounded() {
                    continue;
                }
                let img = key.image_id();
                let info = images.get(img).ok_or_else(|| Error::DanglingReference {
                    path: path.clone(),
                    image_id: img.to_string(),
                })?;
                let attribute_ok = info.attribute.is_none_or(|a| a == label);
                if info.category != category || !attribute_ok {
                    let found = match info.attribute {
                        Some(a) => format!("category {} attribute {a}", info.category),
                        None => format!("category {}", info.category),
                    };
                    return Err(Error::CategoryMismatch {
                        path,
                        image_id: img.to_string(),
                        expected: format!("category {category} attribute {label}"),
                        found,
                    });
                }
            }
        }
        Ok(SpecFile { test, images })
    }

    pub fn test(&self) -> &GroundedBiasTest {
        &self.test
    }

    pub fn images(&self) -> &BTreeMap<String, ImageInfo> {
        &self.images
    }

    /// Every store key any experiment of this test may read, sorted.
    pub fn required_keys(&self) -> Vec<StimulusKey> {
        let t = &self.test;
        let mut keys = std::collections::BTreeSet::new();
        for e in t.x().iter().chain(t.y()) {
            if t.has_grounded_attributes() {
                keys.extend(e.grounded_keys().expect("validated identifiers"));
            }
            if !t.a_text().is_empty() {
                keys.insert(e.ungrounded_key().expect("validated identifier"));
            }
        }
        for g in AttributeGroup::ALL {
            keys.extend(t.group(g).iter().cloned());
        }
        for text in t.a_text().iter().chain(t.b_text()) {
            keys.insert(StimulusKey::ungrounded(text.as_str()).expect("validated identifier"));
        }
        keys.into_iter().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    schema_version: u32,
    test: TestDoc,
    #[serde(default)]
    images: BTreeMap<String, ImageInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestDoc {
    name: String,
    targets: TargetsDoc,
    attributes: AttributesDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsDoc {
    x: Vec<TargetDoc>,
    y: Vec<TargetDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetDoc {
    text: String,
    images: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributesDoc {
    #[serde(default)]
    a_x: Vec<KeyDoc>,
    #[serde(default)]
    a_y: Vec<KeyDoc>,
    #[serde(default)]
    b_x: Vec<KeyDoc>,
    #[serde(default)]
    b_y: Vec<KeyDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    a_text: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    b_text: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyDoc {
    text: String,
    image: String,
}

fn keys_from_doc(docs: Vec<KeyDoc>, field: &str) -> Result<Vec<StimulusKey>> {
    docs.into_iter()
        .enumerate()
        .map(|(i, k)| {
            StimulusKey::new(k.text, k.image).map_err(|e| Error::SchemaError {
                path: format!("test.attributes.{field}[{i}]"),
                message: e.to_string(),
            })
        })
        .collect()
}

fn key_docs(keys: &[StimulusKey]) -> Vec<KeyDoc> {
    keys.iter()
        .map(|k| KeyDoc {
            text: k.text_id().to_string(),
            image: k.image_id().to_string(),
        })
        .collect()
}

fn target_docs(elems: &[TargetElement]) -> Vec<TargetDoc> {
    elems
        .iter()
        .map(|t| TargetDoc {
            text: t.text_id.clone(),
            images: t.image_ids.clone(),
        })
        .collect()
}

impl SpecDoc {
    fn into_spec(self) -> Result<SpecFile> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaError {
                path: "schema_version".into(),
                message: format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        let TestDoc {
            name,
            targets,
            attributes,
        } = self.test;
        let to_targets = |docs: Vec<TargetDoc>| -> Vec<TargetElement> {
            docs.into_iter()
                .map(|t| TargetElement::new(t.text, t.images))
                .collect()
        };
        let attrs = AttributeSets {
            a_x: keys_from_doc(attributes.a_x, "a_x")?,
            a_y: keys_from_doc(attributes.a_y, "a_y")?,
            b_x: keys_from_doc(attributes.b_x, "b_x")?,
            b_y: keys_from_doc(attributes.b_y, "b_y")?,
        };
        let test = GroundedBiasTest::new(
            name,
            to_targets(targets.x),
            to_targets(targets.y),
            attrs,
            attributes.a_text,
            attributes.b_text,
        )
        .map_err(|e| Error::SchemaError {
            path: "test".into(),
            message: e.to_string(),
        })?;
        SpecFile::new(test, self.images)
    }

    fn from_spec(spec: &SpecFile) -> Self {
        let t = spec.test();
        SpecDoc {
            schema_version: SCHEMA_VERSION,
            test: TestDoc {
                name: t.name().to_string(),
                targets: TargetsDoc {
                    x: target_docs(t.x()),
                    y: target_docs(t.y()),
                },
                attributes: AttributesDoc {
                    a_x: key_docs(t.group(AttributeGroup::Ax)),
                    a_y: key_docs(t.group(AttributeGroup::Ay)),
                    b_x: key_docs(t.group(AttributeGroup::Bx)),
                    b_y: key_docs(t.group(AttributeGroup::By)),
                    a_text: t.a_text().to_vec(),
                    b_text: t.b_text().to_vec(),
                },
            },
            images: spec.images().clone(),
        }
    }
}

pub fn parse_spec_str(text: &str) -> Result<SpecFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: SpecDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::SchemaError {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    doc.into_spec()
}

pub fn parse_spec(path: impl AsRef<Path>) -> Result<SpecFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec_str(&text)
}

pub fn serialize_spec(spec: &SpecFile) -> String {
    let mut s = serde_json::to_string_pretty(&SpecDoc::from_spec(spec))
        .expect("spec documents always serialize");
    s.push('\n');
    s
}

pub fn write_spec(spec: &SpecFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_spec(spec)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum GroupLabel {
    Attribute(AttributeGroup),
    Target(String),
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::Attribute(g) => write!(f, "{g}"),
            GroupLabel::Target(t) => write!(f, "target {t:?}"),
        }
    }
}

/// Two groups whose image counts differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceViolation {
    pub pair: (GroupLabel, GroupLabel),
    pub counts: (usize, usize),
}

impl fmt::Display for BalanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}) counts ({}, {})",
            self.pair.0, self.pair.1, self.counts.0, self.counts.1
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BalanceReport {
    pub violations: Vec<BalanceViolation>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.is_balanced() {
            return "balanced".into();
        }
        self.violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn unequal_pairs(groups: &[(GroupLabel, usize)], out: &mut Vec<BalanceViolation>) {
    for (i, (li, ci)) in groups.iter().enumerate() {
        for (lj, cj) in &groups[i + 1..] {
            if ci != cj {
                out.push(BalanceViolation {
                    pair: (li.clone(), lj.clone()),
                    counts: (*ci, *cj),
                });
            }
        }
    }
}

/// Checks equal image counts across the four grounded attribute groups and
/// across target elements. Every unequal pair is reported.
pub fn validate_balance(spec: &SpecFile) -> BalanceReport {
    let test = spec.test();
    let mut violations = Vec::new();
    if test.has_grounded_attributes() {
        let groups: Vec<_> = AttributeGroup::ALL
            .iter()
            .map(|&g| (GroupLabel::Attribute(g), test.group(g).len()))
            .collect();
        unequal_pairs(&groups, &mut violations);
    }
    let targets: Vec<_> = test
        .x()
        .iter()
        .chain(test.y())
        .map(|t| (GroupLabel::Target(t.text_id.clone()), t.image_ids.len()))
        .collect();
    unequal_pairs(&targets, &mut violations);
    BalanceReport { violations }
}
