//! Grounded association experiments.
//!
//! Attribute stimuli are split by the target category their image depicts:
//! `A_x`/`B_x` show attributes with the category of X, `A_y`/`B_y` with the
//! category of Y. Targets are always grounded on images of their own
//! category.
//!
//! * E1 pools all attribute images: `s(X, Y, A_x ∪ A_y, B_x ∪ B_y)`.
//! * E2 pairs each target with its own category's attribute images:
//!   `Σ_x s(x, A_x, B_x) − Σ_y s(y, A_y, B_y)`.
//! * E3 contrasts stereotype-supporting with countering images:
//!   `½(|Σ_x s(x, A_x, B_x) − Σ_x s(x, A_y, B_y)| + |Σ_y s(y, A_y, B_y) − Σ_y s(y, A_x, B_x)|)`.
//!
//! A target grounded on several images is represented by the mean of its
//! grounded vectors, so |X| stays the number of target concepts.

use std::collections::BTreeSet;

use crate::association::{
    associations, differential_association, effect_size_from_associations, mean, pooled_stddev,
    StdDevConvention, DEGENERATE_STDDEV,
};
use crate::error::{Error, Result};
use crate::model::{AttributeGroup, Experiment, GroundedBiasTest, StimulusKey, TargetElement};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVector {
    pub key: StimulusKey,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for ResolvedVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// One target concept: the keys it was built from and their mean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTarget {
    pub text_id: String,
    pub keys: Vec<StimulusKey>,
    pub vector: Vec<f64>,
}

impl AsRef<[f64]> for ResolvedTarget {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

/// The concrete vectors one experiment consumes. Every vector keeps its key.
///
/// Grounded experiments fill the four grounded groups; the text-only
/// experiment fills `a_text`/`b_text`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSets {
    pub experiment: Experiment,
    pub x: Vec<ResolvedTarget>,
    pub y: Vec<ResolvedTarget>,
    pub a_x: Vec<ResolvedVector>,
    pub a_y: Vec<ResolvedVector>,
    pub b_x: Vec<ResolvedVector>,
    pub b_y: Vec<ResolvedVector>,
    pub a_text: Vec<ResolvedVector>,
    pub b_text: Vec<ResolvedVector>,
}

/// Which part of a statistic an index term feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermRole {
    /// Added (X targets in E1/E2/text-only).
    Plus,
    /// Subtracted (Y targets in E1/E2/text-only).
    Minus,
    /// E3: X target against its own category's attribute images.
    XSupporting,
    /// E3: X target against the other category's attribute images.
    XCountering,
    YSupporting,
    YCountering,
}

/// One `s(target, A, B)` evaluation, by key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTerm {
    pub role: TermRole,
    pub target: Vec<StimulusKey>,
    pub a: Vec<StimulusKey>,
    pub b: Vec<StimulusKey>,
}

fn sort_by_serialized(keys: &mut [StimulusKey]) {
    keys.sort_by_cached_key(|k| k.serialized());
}

struct Lookup<'a> {
    store: &'a EmbeddingStore,
    missing: BTreeSet<String>,
}

impl Lookup<'_> {
    fn vector(&mut self, key: &StimulusKey) -> Option<Vec<f64>> {
        match self.store.get(key) {
            Some(v) => Some(v.to_vec()),
            None => {
                self.missing.insert(key.serialized());
                None
            }
        }
    }

    fn group(&mut self, keys: &[StimulusKey]) -> Vec<ResolvedVector> {
        let mut keys = keys.to_vec();
        sort_by_serialized(&mut keys);
        keys.into_iter()
            .filter_map(|key| self.vector(&key).map(|values| ResolvedVector { key, values }))
            .collect()
    }

    fn target(&mut self, keys: Vec<StimulusKey>, text_id: &str) -> Option<ResolvedTarget> {
        let mut keys = keys;
        sort_by_serialized(&mut keys);
        let vectors: Vec<Vec<f64>> = keys.iter().filter_map(|k| self.vector(k)).collect();
        if vectors.len() != keys.len() {
            return None;
        }
        let dim = vectors[0].len();
        let mut mean = vec![0.0; dim];
        for v in &vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = vectors.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(ResolvedTarget {
            text_id: text_id.to_string(),
            keys,
            vector: mean,
        })
    }

    fn targets(
        &mut self,
        elems: &[TargetElement],
        grounded: bool,
    ) -> Result<Vec<ResolvedTarget>> {
        let mut sorted: Vec<&TargetElement> = elems.iter().collect();
        sorted.sort_by(|a, b| a.text_id.cmp(&b.text_id));
        let mut out = Vec::with_capacity(sorted.len());
        for e in sorted {
            let keys = if grounded {
                e.grounded_keys()?
            } else {
                vec![e.ungrounded_key()?]
            };
            if let Some(t) = self.target(keys, &e.text_id) {
                out.push(t);
            }
        }
        Ok(out)
    }
}

/// Selects the vectors `experiment` consumes from `store`.
///
/// Reports every unresolved key at once.
pub fn resolve(
    test: &GroundedBiasTest,
    store: &EmbeddingStore,
    experiment: Experiment,
) -> Result<ResolvedSets> {
    if !test.supports(experiment) {
        return Err(Error::InvalidTest(format!(
            "test {:?} has no attribute sets for {experiment}",
            test.name()
        )));
    }
    let mut lookup = Lookup {
        store,
        missing: BTreeSet::new(),
    };
    let grounded = experiment.is_grounded();
    let x = lookup.targets(test.x(), grounded)?;
    let y = lookup.targets(test.y(), grounded)?;
    let empty = Vec::new;
    let (a_x, a_y, b_x, b_y, a_text, b_text) = if grounded {
        (
            lookup.group(test.group(AttributeGroup::Ax)),
            lookup.group(test.group(AttributeGroup::Ay)),
            lookup.group(test.group(AttributeGroup::Bx)),
            lookup.group(test.group(AttributeGroup::By)),
            empty(),
            empty(),
        )
    } else {
        let text_keys = |texts: &[String]| -> Result<Vec<StimulusKey>> {
            texts
                .iter()
                .map(|t| StimulusKey::ungrounded(t.as_str()))
                .collect()
        };
        let a = text_keys(test.a_text())?;
        let b = text_keys(test.b_text())?;
        (
            empty(),
            empty(),
            empty(),
            empty(),
            lookup.group(&a),
            lookup.group(&b),
        )
    };
    if !lookup.missing.is_empty() {
        return Err(Error::MissingEmbedding(lookup.missing.into_iter().collect()));
    }
    Ok(ResolvedSets {
        experiment,
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

fn keys_of(v: &[ResolvedVector]) -> Vec<StimulusKey> {
    v.iter().map(|r| r.key.clone()).collect()
}

fn union<'a>(first: &'a [ResolvedVector], second: &'a [ResolvedVector]) -> Vec<&'a [f64]> {
    first
        .iter()
        .chain(second)
        .map(|r| r.values.as_slice())
        .collect()
}

impl ResolvedSets {
    fn expect(&self, experiment: Experiment) -> Result<()> {
        if self.experiment != experiment {
            return Err(Error::InvalidTest(format!(
                "sets were resolved for {}, not {experiment}",
                self.experiment
            )));
        }
        Ok(())
    }

    /// The `s(target, A, B)` evaluations this experiment is built from, by key.
    pub fn index_terms(&self) -> Vec<IndexTerm> {
        let term = |role, t: &ResolvedTarget, a: Vec<StimulusKey>, b: Vec<StimulusKey>| IndexTerm {
            role,
            target: t.keys.clone(),
            a,
            b,
        };
        let cat = |p: &[ResolvedVector], q: &[ResolvedVector]| {
            let mut k = keys_of(p);
            k.extend(keys_of(q));
            k
        };
        let mut out = Vec::new();
        match self.experiment {
            Experiment::E1 => {
                let (a, b) = (cat(&self.a_x, &self.a_y), cat(&self.b_x, &self.b_y));
                out.extend(self.x.iter().map(|t| term(TermRole::Plus, t, a.clone(), b.clone())));
                out.extend(self.y.iter().map(|t| term(TermRole::Minus, t, a.clone(), b.clone())));
            }
            Experiment::E2 => {
                out.extend(self.x.iter().map(|t| {
                    term(TermRole::Plus, t, keys_of(&self.a_x), keys_of(&self.b_x))
                }));
                out.extend(self.y.iter().map(|t| {
                    term(TermRole::Minus, t, keys_of(&self.a_y), keys_of(&self.b_y))
                }));
            }
            Experiment::E3 => {
                let (ax, bx, ay, by) = (
                    keys_of(&self.a_x),
                    keys_of(&self.b_x),
                    keys_of(&self.a_y),
                    keys_of(&self.b_y),
                );
                for t in &self.x {
                    out.push(term(TermRole::XSupporting, t, ax.clone(), bx.clone()));
                    out.push(term(TermRole::XCountering, t, ay.clone(), by.clone()));
                }
                for t in &self.y {
                    out.push(term(TermRole::YSupporting, t, ay.clone(), by.clone()));
                    out.push(term(TermRole::YCountering, t, ax.clone(), bx.clone()));
                }
            }
            Experiment::Ungrounded => {
                let (a, b) = (keys_of(&self.a_text), keys_of(&self.b_text));
                out.extend(self.x.iter().map(|t| term(TermRole::Plus, t, a.clone(), b.clone())));
                out.extend(self.y.iter().map(|t| term(TermRole::Minus, t, a.clone(), b.clone())));
            }
        }
        out
    }

    /// Every store key consumed, as a sorted multiset.
    pub fn consumed_keys(&self) -> Vec<StimulusKey> {
        let mut keys: Vec<StimulusKey> = self
            .x
            .iter()
            .chain(&self.y)
            .flat_map(|t| t.keys.iter().cloned())
            .collect();
        for g in [
            &self.a_x,
            &self.a_y,
            &self.b_x,
            &self.b_y,
            &self.a_text,
            &self.b_text,
        ] {
            keys.extend(keys_of(g));
        }
        sort_by_serialized(&mut keys);
        keys
    }
}

pub fn exp1_statistic(r: &ResolvedSets) -> Result<f64> {
    r.expect(Experiment::E1)?;
    let a = union(&r.a_x, &r.a_y);
    let b = union(&r.b_x, &r.b_y);
    differential_association(&r.x, &r.y, &a, &b)
}

pub fn exp2_statistic(r: &ResolvedSets) -> Result<f64> {
    r.expect(Experiment::E2)?;
    if r.x.is_empty() || r.y.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let sx: f64 = associations(&r.x, &r.a_x, &r.b_x)?.iter().sum();
    let sy: f64 = associations(&r.y, &r.a_y, &r.b_y)?.iter().sum();
    Ok(sx - sy)
}

pub fn exp3_statistic(r: &ResolvedSets) -> Result<f64> {
    r.expect(Experiment::E3)?;
    if r.x.is_empty() || r.y.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let sum = |t: &[ResolvedTarget], a: &[ResolvedVector], b: &[ResolvedVector]| -> Result<f64> {
        Ok(associations(t, a, b)?.iter().sum())
    };
    let x_part = sum(&r.x, &r.a_x, &r.b_x)? - sum(&r.x, &r.a_y, &r.b_y)?;
    let y_part = sum(&r.y, &r.a_y, &r.b_y)? - sum(&r.y, &r.a_x, &r.b_x)?;
    Ok(0.5 * (x_part.abs() + y_part.abs()))
}

pub fn ungrounded_statistic(r: &ResolvedSets) -> Result<f64> {
    r.expect(Experiment::Ungrounded)?;
    differential_association(&r.x, &r.y, &r.a_text, &r.b_text)
}

/// The experiment's test statistic.
pub fn statistic(r: &ResolvedSets) -> Result<f64> {
    match r.experiment {
        Experiment::E1 => exp1_statistic(r),
        Experiment::E2 => exp2_statistic(r),
        Experiment::E3 => exp3_statistic(r),
        Experiment::Ungrounded => ungrounded_statistic(r),
    }
}

/// Per-element contribution to the statistic depending on which set the
/// element sits in. Elements are pooled X first, then Y.
///
/// E1/text-only: `s(e, A, B)` in either slot.
/// E1 and text-only: one association per element, whatever its slot.
/// E2: each element keeps its own category's groups, so `s(x, A_x, B_x)` for
/// an X target and `s(y, A_y, B_y)` for a Y target, in either slot.
/// E3: `δ = s(e, A_x, B_x) − s(e, A_y, B_y)` in the X slot and its negation in
/// the Y slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotScores {
    pub experiment: Experiment,
    pub nx: usize,
    pub ny: usize,
    pub as_x: Vec<f64>,
    pub as_y: Vec<f64>,
}

impl SlotScores {
    pub fn compute(r: &ResolvedSets) -> Result<Self> {
        if r.x.is_empty() || r.y.is_empty() {
            return Err(Error::EmptyTargetSet);
        }
        let pooled: Vec<&ResolvedTarget> = r.x.iter().chain(&r.y).collect();
        let (as_x, as_y) = match r.experiment {
            Experiment::E1 => {
                let a = union(&r.a_x, &r.a_y);
                let b = union(&r.b_x, &r.b_y);
                let s = associations(&pooled, &a, &b)?;
                (s.clone(), s)
            }
            Experiment::Ungrounded => {
                let s = associations(&pooled, &r.a_text, &r.b_text)?;
                (s.clone(), s)
            }
            Experiment::E2 => {
                let mut s = associations(&r.x, &r.a_x, &r.b_x)?;
                s.extend(associations(&r.y, &r.a_y, &r.b_y)?);
                (s.clone(), s)
            }
            Experiment::E3 => {
                let own_x = associations(&pooled, &r.a_x, &r.b_x)?;
                let own_y = associations(&pooled, &r.a_y, &r.b_y)?;
                let delta_x: Vec<f64> = own_x.iter().zip(&own_y).map(|(p, q)| p - q).collect();
                let delta_y: Vec<f64> = own_y.iter().zip(&own_x).map(|(p, q)| p - q).collect();
                (delta_x, delta_y)
            }
        };
        Ok(SlotScores {
            experiment: r.experiment,
            nx: r.x.len(),
            ny: r.y.len(),
            as_x,
            as_y,
        })
    }

    pub fn len(&self) -> usize {
        self.as_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.as_x.is_empty()
    }

    /// Statistic for the partition placing `x_slot` in X and `y_slot` in Y.
    pub fn statistic(&self, x_slot: &[usize], y_slot: &[usize]) -> f64 {
        let sx: f64 = x_slot.iter().map(|&i| self.as_x[i]).sum();
        let sy: f64 = y_slot.iter().map(|&i| self.as_y[i]).sum();
        match self.experiment {
            Experiment::E3 => 0.5 * (sx.abs() + sy.abs()),
            _ => sx - sy,
        }
    }

    /// Statistic for the observed assignment.
    pub fn observed(&self) -> f64 {
        let x: Vec<usize> = (0..self.nx).collect();
        let y: Vec<usize> = (self.nx..self.nx + self.ny).collect();
        self.statistic(&x, &y)
    }

    pub fn effect_size(&self, convention: StdDevConvention) -> Result<f64> {
        let sx = &self.as_x[..self.nx];
        let sy = &self.as_y[self.nx..];
        match self.experiment {
            Experiment::E3 => {
                let sd = pooled_stddev(sx, sy, convention)?;
                if sd < DEGENERATE_STDDEV {
                    return Err(Error::DegenerateVariance { stddev: sd });
                }
                Ok(0.5 * (mean(sx).abs() + mean(sy).abs()) / sd)
            }
            _ => effect_size_from_associations(sx, sy, convention),
        }
    }
}

/// Effect size for a resolved experiment.
///
/// E1, E2 and text-only: difference of mean X and Y associations (each
/// target scored against its experiment's attribute selection) over the
/// standard deviation of all target associations.
/// E3: `½(|mean δ_x| + |mean δ_y|)` over the standard deviation of all deltas.
pub fn grounded_effect_size(r: &ResolvedSets, convention: StdDevConvention) -> Result<f64> {
    SlotScores::compute(r)?.effect_size(convention)
}
