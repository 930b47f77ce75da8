//! Domain vocabulary: embeddings, stimulus keys, grounded bias tests and
//! result records.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Image id reserved for ungrounded (text-only) stimuli.
pub const NO_IMAGE: &str = "-";

/// Separator between text id and image id in a serialized key.
pub const KEY_SEPARATOR: &str = "::";

/// Significance threshold used by the result tables.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// A finite, non-zero embedding held in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch { left: 0, right: 1 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation {
                keys: vec![],
                reason: "non-finite element".into(),
            });
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for EmbeddingVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_identifier(id: &str) -> Result<()> {
    // Leading/trailing ':' would make "a" + "::" + ":b" ambiguous on parse.
    if id.is_empty() || id.contains(KEY_SEPARATOR) || id.starts_with(':') || id.ends_with(':') {
        return Err(Error::InvalidIdentifier(id.to_string()));
    }
    Ok(())
}

/// Address of one embedding: a text stimulus, optionally grounded on an image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StimulusKey {
    text_id: String,
    image_id: String,
}

impl StimulusKey {
    pub fn new(text_id: impl Into<String>, image_id: impl Into<String>) -> Result<Self> {
        let text_id = text_id.into();
        let image_id = image_id.into();
        check_identifier(&text_id)?;
        check_identifier(&image_id)?;
        Ok(StimulusKey { text_id, image_id })
    }

    pub fn ungrounded(text_id: impl Into<String>) -> Result<Self> {
        Self::new(text_id, NO_IMAGE)
    }

    pub fn text_id(&self) -> &str {
        &self.text_id
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn is_grounded(&self) -> bool {
        self.image_id != NO_IMAGE
    }

    pub fn serialized(&self) -> String {
        self.to_string()
    }
}

/// Shorthand for [`StimulusKey::new`].
pub fn make_key(text_id: &str, image_id: &str) -> Result<StimulusKey> {
    StimulusKey::new(text_id, image_id)
}

impl fmt::Display for StimulusKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.text_id, KEY_SEPARATOR, self.image_id)
    }
}

impl FromStr for StimulusKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (text, image) = s
            .split_once(KEY_SEPARATOR)
            .ok_or_else(|| Error::InvalidIdentifier(s.to_string()))?;
        StimulusKey::new(text, image)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    /// Bare word embedding.
    W,
    /// Whole-sentence embedding.
    S,
    /// Word embedding taken in sentence context.
    C,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::W, Granularity::S, Granularity::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::W => "W",
            Granularity::S => "S",
            Granularity::C => "C",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" | "w" => Ok(Granularity::W),
            "S" | "s" => Ok(Granularity::S),
            "C" | "c" => Ok(Granularity::C),
            _ => Err(Error::InvalidConfig(format!("unknown granularity {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    /// Vision integrated out: every attribute image counts.
    E1,
    /// Only attribute images of the target's own category.
    E2,
    /// Stereotype-supporting vs. countering images, absolute-value combination.
    E3,
    /// Classic text-only association test.
    #[serde(rename = "UNGROUNDED")]
    Ungrounded,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::E1,
        Experiment::E2,
        Experiment::E3,
        Experiment::Ungrounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::E1 => "E1",
            Experiment::E2 => "E2",
            Experiment::E3 => "E3",
            Experiment::Ungrounded => "UNGROUNDED",
        }
    }

    pub fn is_grounded(self) -> bool {
        !matches!(self, Experiment::Ungrounded)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Experiment::E1),
            "E2" => Ok(Experiment::E2),
            "E3" => Ok(Experiment::E3),
            "UNGROUNDED" | "U" => Ok(Experiment::Ungrounded),
            _ => Err(Error::InvalidConfig(format!("unknown experiment {s:?}"))),
        }
    }
}

/// One target concept with the images of its own category it is grounded on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetElement {
    pub text_id: String,
    pub image_ids: Vec<String>,
}

impl TargetElement {
    pub fn new(text_id: impl Into<String>, image_ids: Vec<String>) -> Self {
        TargetElement {
            text_id: text_id.into(),
            image_ids,
        }
    }

    pub fn grounded_keys(&self) -> Result<Vec<StimulusKey>> {
        self.image_ids
            .iter()
            .map(|img| StimulusKey::new(self.text_id.as_str(), img.as_str()))
            .collect()
    }

    pub fn ungrounded_key(&self) -> Result<StimulusKey> {
        StimulusKey::ungrounded(self.text_id.as_str())
    }
}

/// The four grounded attribute groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeGroup {
    #[serde(rename = "A_x")]
    Ax,
    #[serde(rename = "A_y")]
    Ay,
    #[serde(rename = "B_x")]
    Bx,
    #[serde(rename = "B_y")]
    By,
}

impl AttributeGroup {
    pub const ALL: [AttributeGroup; 4] = [
        AttributeGroup::Ax,
        AttributeGroup::Ay,
        AttributeGroup::Bx,
        AttributeGroup::By,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeGroup::Ax => "A_x",
            AttributeGroup::Ay => "A_y",
            AttributeGroup::Bx => "B_x",
            AttributeGroup::By => "B_y",
        }
    }
}

impl fmt::Display for AttributeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A grounded bias test: targets X/Y, grounded attribute groups and optional
/// text-only attributes for the classic baseline.
///
/// Only constructible through [`GroundedBiasTest::new`], which checks every
/// structural invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedBiasTest {
    name: String,
    x: Vec<TargetElement>,
    y: Vec<TargetElement>,
    a_x: Vec<StimulusKey>,
    a_y: Vec<StimulusKey>,
    b_x: Vec<StimulusKey>,
    b_y: Vec<StimulusKey>,
    a_text: Vec<String>,
    b_text: Vec<String>,
}

/// Grounded attribute keys, grouped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeSets {
    pub a_x: Vec<StimulusKey>,
    pub a_y: Vec<StimulusKey>,
    pub b_x: Vec<StimulusKey>,
    pub b_y: Vec<StimulusKey>,
}

impl GroundedBiasTest {
    pub fn new(
        name: impl Into<String>,
        x: Vec<TargetElement>,
        y: Vec<TargetElement>,
        attributes: AttributeSets,
        a_text: Vec<String>,
        b_text: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidTest("test name is empty".into()));
        }
        if x.is_empty() || y.is_empty() {
            return Err(Error::EmptyTargetSet);
        }

        let mut seen_targets = BTreeSet::new();
        for (side, elems) in [("X", &x), ("Y", &y)] {
            for t in elems.iter() {
                check_identifier(&t.text_id)?;
                if !seen_targets.insert(t.text_id.as_str()) {
                    return Err(Error::InvalidTest(format!(
                        "target {:?} appears more than once across X and Y",
                        t.text_id
                    )));
                }
                if t.image_ids.is_empty() {
                    return Err(Error::InvalidTest(format!(
                        "target {:?} in {side} has no images",
                        t.text_id
                    )));
                }
                let mut imgs = BTreeSet::new();
                for img in &t.image_ids {
                    check_identifier(img)?;
                    if !imgs.insert(img) {
                        return Err(Error::InvalidTest(format!(
                            "target {:?} lists image {img:?} twice",
                            t.text_id
                        )));
                    }
                }
            }
        }

        let AttributeSets { a_x, a_y, b_x, b_y } = attributes;
        let groups = [
            (AttributeGroup::Ax, &a_x),
            (AttributeGroup::Ay, &a_y),
            (AttributeGroup::Bx, &b_x),
            (AttributeGroup::By, &b_y),
        ];
        let n_empty = groups.iter().filter(|(_, g)| g.is_empty()).count();
        if n_empty != 0 && n_empty != 4 {
            let empty: Vec<_> = groups
                .iter()
                .filter(|(_, g)| g.is_empty())
                .map(|(l, _)| l.as_str())
                .collect();
            return Err(Error::InvalidTest(format!(
                "grounded attribute groups must all be non-empty; empty: {}",
                empty.join(", ")
            )));
        }
        let mut owner: std::collections::BTreeMap<&StimulusKey, AttributeGroup> = Default::default();
        for (label, keys) in groups {
            for k in keys.iter() {
                if let Some(prev) = owner.insert(k, label) {
                    return Err(Error::InvalidTest(format!(
                        "attribute key {k} appears in both {prev} and {label}"
                    )));
                }
            }
        }

        if a_text.is_empty() != b_text.is_empty() {
            return Err(Error::InvalidTest(
                "text attributes A and B must be given together".into(),
            ));
        }
        for t in a_text.iter().chain(b_text.iter()) {
            check_identifier(t)?;
        }
        if n_empty == 4 && a_text.is_empty() {
            return Err(Error::EmptyAttributeSet);
        }

        Ok(GroundedBiasTest {
            name,
            x,
            y,
            a_x,
            a_y,
            b_x,
            b_y,
            a_text,
            b_text,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x(&self) -> &[TargetElement] {
        &self.x
    }

    pub fn y(&self) -> &[TargetElement] {
        &self.y
    }

    pub fn group(&self, group: AttributeGroup) -> &[StimulusKey] {
        match group {
            AttributeGroup::Ax => &self.a_x,
            AttributeGroup::Ay => &self.a_y,
            AttributeGroup::Bx => &self.b_x,
            AttributeGroup::By => &self.b_y,
        }
    }

    pub fn a_text(&self) -> &[String] {
        &self.a_text
    }

    pub fn b_text(&self) -> &[String] {
        &self.b_text
    }

    pub fn has_grounded_attributes(&self) -> bool {
        !self.a_x.is_empty()
    }

    /// Whether this test carries the attribute sets `experiment` needs.
    pub fn supports(&self, experiment: Experiment) -> bool {
        match experiment {
            Experiment::Ungrounded => !self.a_text.is_empty(),
            _ => self.has_grounded_attributes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    #[serde(rename = "EXACT")]
    Exact,
    #[serde(rename = "MONTE_CARLO")]
    MonteCarlo,
}

impl PMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PMethod::Exact => "EXACT",
            PMethod::MonteCarlo => "MONTE_CARLO",
        }
    }
}

impl fmt::Display for PMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EXACT" => Ok(PMethod::Exact),
            "MONTE_CARLO" => Ok(PMethod::MonteCarlo),
            _ => Err(Error::InvalidConfig(format!("unknown p-value method {s:?}"))),
        }
    }
}

/// Effect size, or the marker for an all-identical association distribution.
///
/// For E3 the zero-variance case means images do not move the associations
/// at all ("no visual contribution").
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectSize {
    Value(f64),
    ZeroVariance,
}

pub const ZERO_VARIANCE_LABEL: &str = "zero-variance";

impl EffectSize {
    pub fn value(self) -> Option<f64> {
        match self {
            EffectSize::Value(v) => Some(v),
            EffectSize::ZeroVariance => None,
        }
    }
}

impl Serialize for EffectSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EffectSize::Value(v) => s.serialize_f64(*v),
            EffectSize::ZeroVariance => s.serialize_str(ZERO_VARIANCE_LABEL),
        }
    }
}

/// One cell of a result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub test_name: String,
    pub experiment: Experiment,
    pub granularity: Granularity,
    pub statistic: f64,
    pub effect_size: EffectSize,
    pub p_value: f64,
    pub p_method: PMethod,
    pub n_permutations: u64,
    pub seed: Option<u64>,
    pub significant: bool,
    pub warnings: Vec<String>,
}

impl TestResult {
    /// E3 with identical per-target deltas: vision leaves the associations unchanged.
    pub fn no_visual_contribution(&self) -> bool {
        self.experiment == Experiment::E3 && self.effect_size == EffectSize::ZeroVariance
    }

    /// Recomputes the significance flag for threshold `alpha` (strict `<`).
    pub fn with_threshold(mut self, alpha: f64) -> Self {
        self.significant = self.p_value < alpha;
        self
    }
}
