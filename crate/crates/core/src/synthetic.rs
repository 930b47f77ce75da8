//! Planted-bias fixtures and an independent reference implementation of the
//! association statistics.
//!
//! Geometry of [`generate`]: axis 0 is the A attribute direction, axis 1 the
//! B direction, axes 2 and 3 the visual signature of the x and y image
//! categories. Every vector is `direction + noise` renormalized to the unit
//! sphere, with isotropic Gaussian noise of unit expected squared norm.
//!
//! * X targets lean towards A and Y targets towards B with strength `λ`.
//! * Attribute embeddings grounded on an image of category c are shifted by
//!   `ν · (e_c + image noise)`. With `ν = 0` an attribute's x- and y-grounded
//!   embeddings are identical.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{make_key, AttributeSets, GroundedBiasTest, StimulusKey, TargetElement};
use crate::spec_file::{AttributeLabel, Category, ImageInfo, SpecFile};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedBiasParams {
    pub dimension: usize,
    pub n_targets_per_set: usize,
    pub n_attrs_per_group: usize,
    pub images_per_target: usize,
    /// Association strength λ.
    pub association_strength: f64,
    /// Vision effect ν.
    pub vision_effect: f64,
    pub seed: u64,
}

impl Default for PlantedBiasParams {
    fn default() -> Self {
        PlantedBiasParams {
            dimension: 16,
            n_targets_per_set: 6,
            n_attrs_per_group: 6,
            images_per_target: 2,
            association_strength: 0.0,
            vision_effect: 0.0,
            seed: 0,
        }
    }
}

impl PlantedBiasParams {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 4 {
            return Err(Error::InvalidParams(format!(
                "dimension must be at least 4, got {}",
                self.dimension
            )));
        }
        if self.n_targets_per_set == 0 || self.n_attrs_per_group == 0 || self.images_per_target == 0
        {
            return Err(Error::InvalidParams("set sizes must be at least 1".into()));
        }
        for (name, v) in [
            ("association strength", self.association_strength),
            ("vision effect", self.vision_effect),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

const AXIS_A: usize = 0;
const AXIS_B: usize = 1;
const AXIS_X: usize = 2;
const AXIS_Y: usize = 3;

fn noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

/// `normalize(strength·e_axis + base + vision·(e_vaxis + image_noise))`
fn compose(
    dim: usize,
    axis: usize,
    strength: f64,
    base: &[f64],
    vision: f64,
    vision_axis: usize,
    image_noise: &[f64],
) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| {
            let signal = if i == axis { strength } else { 0.0 };
            let visual = if i == vision_axis { 1.0 } else { 0.0 };
            signal + base[i] + vision * (visual + image_noise[i])
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Seeded planted-bias store with a balanced spec.
///
/// The noise draws do not depend on `λ` or `ν`, so varying only those keeps
/// every random perturbation fixed.
pub fn generate(params: &PlantedBiasParams) -> Result<(SpecFile, EmbeddingStore)> {
    params.validate()?;
    let dim = params.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let metadata = format!(
        "generator=planted-bias\nseed={}\nassociation_strength={}\nvision_effect={}\ndimension={}",
        params.seed, params.association_strength, params.vision_effect, dim
    );
    let mut store = EmbeddingStore::new(dim, metadata)?;
    let mut images = BTreeMap::new();
    let lambda = params.association_strength;
    let nu = params.vision_effect;

    let mut targets = |prefix: &str, category: Category, axis: usize, vaxis: usize, store: &mut EmbeddingStore, images: &mut BTreeMap<String, ImageInfo>| -> Result<Vec<TargetElement>> {
        let mut out = Vec::new();
        for j in 0..params.n_targets_per_set {
            let text = format!("{prefix}{j:03}");
            let base = noise(&mut rng, dim);
            let zero = vec![0.0; dim];
            store.insert(
                &StimulusKey::ungrounded(text.as_str())?,
                &compose(dim, axis, lambda, &base, 0.0, vaxis, &zero),
            )?;
            let mut image_ids = Vec::new();
            for k in 0..params.images_per_target {
                let img = format!("img_{prefix}{j:03}_{k}");
                let img_noise = noise(&mut rng, dim);
                store.insert(
                    &make_key(&text, &img)?,
                    &compose(dim, axis, lambda, &base, nu, vaxis, &img_noise),
                )?;
                images.insert(
                    img.clone(),
                    ImageInfo {
                        category,
                        attribute: None,
                    },
                );
                image_ids.push(img);
            }
            out.push(TargetElement::new(text, image_ids));
        }
        Ok(out)
    };
    let x = targets("tx", Category::X, AXIS_A, AXIS_X, &mut store, &mut images)?;
    let y = targets("ty", Category::Y, AXIS_B, AXIS_Y, &mut store, &mut images)?;

    let mut attrs = AttributeSets::default();
    let mut a_text = Vec::new();
    let mut b_text = Vec::new();
    for (label, axis, prefix) in [(AttributeLabel::A, AXIS_A, "a"), (AttributeLabel::B, AXIS_B, "b")] {
        for i in 0..params.n_attrs_per_group {
            let text = format!("{prefix}{i:03}");
            let base = noise(&mut rng, dim);
            let noise_x = noise(&mut rng, dim);
            let noise_y = noise(&mut rng, dim);
            let zero = vec![0.0; dim];
            store.insert(
                &StimulusKey::ungrounded(text.as_str())?,
                &compose(dim, axis, 1.0, &base, 0.0, AXIS_X, &zero),
            )?;
            for (category, vaxis, img_noise) in
                [(Category::X, AXIS_X, &noise_x), (Category::Y, AXIS_Y, &noise_y)]
            {
                let img = format!("img_{prefix}{category}{i:03}");
                let key = make_key(&text, &img)?;
                store.insert(&key, &compose(dim, axis, 1.0, &base, nu, vaxis, img_noise))?;
                images.insert(
                    img,
                    ImageInfo {
                        category,
                        attribute: Some(label),
                    },
                );
                let group = match (label, category) {
                    (AttributeLabel::A, Category::X) => &mut attrs.a_x,
                    (AttributeLabel::A, Category::Y) => &mut attrs.a_y,
                    (AttributeLabel::B, Category::X) => &mut attrs.b_x,
                    (AttributeLabel::B, Category::Y) => &mut attrs.b_y,
                };
                group.push(key);
            }
            match label {
                AttributeLabel::A => a_text.push(text),
                AttributeLabel::B => b_text.push(text),
            }
        }
    }

    let name = format!(
        "planted(lambda={lambda},nu={nu},seed={})",
        params.seed
    );
    let test = GroundedBiasTest::new(name, x, y, attrs, a_text, b_text)?;
    Ok((SpecFile::new(test, images)?, store))
}

/// Embedding numbers of the gender/occupation micro-dataset.
///
/// 1–4 are the targets `man`/`woman` on images of any man or any woman;
/// 5–12 are `lawyer`/`teacher` on images of a man or woman lawyer or teacher.
pub const MICRO_EMBEDDINGS: [(u8, &str, &str); 12] = [
    (1, "man", "any_man"),
    (2, "man", "any_woman"),
    (3, "woman", "any_man"),
    (4, "woman", "any_woman"),
    (5, "lawyer", "man_lawyer"),
    (6, "lawyer", "man_teacher"),
    (7, "lawyer", "woman_lawyer"),
    (8, "lawyer", "woman_teacher"),
    (9, "teacher", "man_lawyer"),
    (10, "teacher", "man_teacher"),
    (11, "teacher", "woman_lawyer"),
    (12, "teacher", "woman_teacher"),
];

/// Key of micro-dataset embedding `number` (1–12).
pub fn micro_key(number: u8) -> StimulusKey {
    let (_, text, image) = MICRO_EMBEDDINGS[number as usize - 1];
    make_key(text, image).expect("fixture identifiers are valid")
}

/// The complete two-target, two-attribute micro-dataset: a spec with X =
/// {man}, Y = {woman}, A = lawyer, B = teacher, and a store holding all twelve
/// grounded embeddings with hand-assigned vectors.
pub fn micro_fixture() -> (SpecFile, EmbeddingStore) {
    let images: BTreeMap<String, ImageInfo> = [
        ("any_man", Category::X, None),
        ("any_woman", Category::Y, None),
        ("man_lawyer", Category::X, Some(AttributeLabel::A)),
        ("woman_lawyer", Category::Y, Some(AttributeLabel::A)),
        ("man_teacher", Category::X, Some(AttributeLabel::B)),
        ("woman_teacher", Category::Y, Some(AttributeLabel::B)),
    ]
    .into_iter()
    .map(|(id, category, attribute)| (id.to_string(), ImageInfo { category, attribute }))
    .collect();
    let test = GroundedBiasTest::new(
        "micro: man/woman vs lawyer/teacher",
        vec![TargetElement::new("man", vec!["any_man".into()])],
        vec![TargetElement::new("woman", vec!["any_woman".into()])],
        AttributeSets {
            a_x: vec![micro_key(5)],
            a_y: vec![micro_key(7)],
            b_x: vec![micro_key(10)],
            b_y: vec![micro_key(12)],
        },
        vec![],
        vec![],
    )
    .expect("fixture test is valid");
    let spec = SpecFile::new(test, images).expect("fixture manifest is consistent");

    let vectors: [[f64; 4]; 12] = [
        [1.0, 0.2, 0.1, 0.0],
        [0.8, 0.3, 0.0, 0.5],
        [0.2, 1.0, 0.4, 0.1],
        [0.1, 0.9, 0.0, 0.6],
        [0.9, 0.1, 0.7, 0.2],
        [0.6, 0.2, 0.1, 0.9],
        [0.3, 0.8, 0.6, 0.1],
        [0.2, 0.7, 0.2, 0.8],
        [0.7, 0.3, 0.5, 0.4],
        [0.5, 0.1, 0.2, 1.0],
        [0.1, 0.6, 0.9, 0.3],
        [0.3, 0.5, 0.1, 0.9],
    ];
    let mut store = EmbeddingStore::new(4, "generator=micro").expect("dimension 4");
    for (n, v) in (1..=12u8).zip(vectors.iter()) {
        store.insert(&micro_key(n), v).expect("fixture vectors are valid");
    }
    (spec, store)
}

/// Plain vectors for one grounded instance. `a_text`/`b_text` serve the
/// text-only statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub a_x: Vec<Vec<f64>>,
    pub a_y: Vec<Vec<f64>>,
    pub b_x: Vec<Vec<f64>>,
    pub b_y: Vec<Vec<f64>>,
    pub a_text: Vec<Vec<f64>>,
    pub b_text: Vec<Vec<f64>>,
}

/// Random instance with entries uniform in [-1, 1], rounded to single
/// precision so that it survives a store round trip unchanged.
pub fn random_instance(seed: u64, dim: usize, n_targets: usize, n_attrs: usize) -> RawInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim)
                    .map(|_| rng.random_range(-1.0f32..=1.0) as f64)
                    .collect();
                if v.iter().any(|&c| c != 0.0) {
                    break v;
                }
            })
            .collect()
    };
    RawInstance {
        x: set(n_targets),
        y: set(n_targets),
        a_x: set(n_attrs),
        a_y: set(n_attrs),
        b_x: set(n_attrs),
        b_y: set(n_attrs),
        a_text: set(n_attrs),
        b_text: set(n_attrs),
    }
}

impl RawInstance {
    /// Store and test holding exactly these vectors, one image per target.
    /// Names are zero-padded so key order equals index order.
    pub fn to_fixture(&self) -> Result<(GroundedBiasTest, EmbeddingStore)> {
        let dim = self.x[0].len();
        let mut store = EmbeddingStore::new(dim, "generator=random-instance")?;
        let targets = |prefix: &str, vs: &[Vec<f64>], store: &mut EmbeddingStore| -> Result<Vec<TargetElement>> {
            let mut out = Vec::new();
            for (i, v) in vs.iter().enumerate() {
                let text = format!("{prefix}{i:04}");
                let img = format!("img_{prefix}{i:04}");
                store.insert(&make_key(&text, &img)?, v)?;
                store.insert(&StimulusKey::ungrounded(text.as_str())?, v)?;
                out.push(TargetElement::new(text, vec![img]));
            }
            Ok(out)
        };
        let x = targets("x", &self.x, &mut store)?;
        let y = targets("y", &self.y, &mut store)?;
        let group = |prefix: &str, vs: &[Vec<f64>], store: &mut EmbeddingStore| -> Result<Vec<StimulusKey>> {
            vs.iter()
                .enumerate()
                .map(|(i, v)| {
                    let key = make_key(&format!("{prefix}{i:04}"), &format!("img_{prefix}{i:04}"))?;
                    store.insert(&key, v)?;
                    Ok(key)
                })
                .collect()
        };
        let attrs = AttributeSets {
            a_x: group("ax", &self.a_x, &mut store)?,
            a_y: group("ay", &self.a_y, &mut store)?,
            b_x: group("bx", &self.b_x, &mut store)?,
            b_y: group("by", &self.b_y, &mut store)?,
        };
        let text = |prefix: &str, vs: &[Vec<f64>], store: &mut EmbeddingStore| -> Result<Vec<String>> {
            vs.iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = format!("{prefix}{i:04}");
                    store.insert(&StimulusKey::ungrounded(t.as_str())?, v)?;
                    Ok(t)
                })
                .collect()
        };
        let a_text = text("ta", &self.a_text, &mut store)?;
        let b_text = text("tb", &self.b_text, &mut store)?;
        let test = GroundedBiasTest::new("random", x, y, attrs, a_text, b_text)?;
        Ok((test, store))
    }
}

/// Literal nested-loop re-implementation of the association formulas.
///
/// Shares no code with the engine modules: it exists to check them.
#[allow(clippy::needless_range_loop)]
pub mod oracle {
    use super::RawInstance;
    use crate::model::Experiment;

    pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for i in 0..u.len() {
            dot += u[i] * v[i];
            uu += u[i] * u[i];
            vv += v[i] * v[i];
        }
        dot / (uu.sqrt() * vv.sqrt())
    }

    /// s(w, A, B)
    pub fn s(w: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut sa = 0.0;
        for i in 0..a.len() {
            sa += cosine(w, &a[i]);
        }
        let mut sb = 0.0;
        for i in 0..b.len() {
            sb += cosine(w, &b[i]);
        }
        sa / a.len() as f64 - sb / b.len() as f64
    }

    /// s(X, Y, A, B)
    pub fn differential(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for i in 0..x.len() {
            total += s(&x[i], a, b);
        }
        for i in 0..y.len() {
            total -= s(&y[i], a, b);
        }
        total
    }

    fn sample_sd(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mut m = 0.0;
        for v in values {
            m += v;
        }
        m /= n;
        let mut ss = 0.0;
        for v in values {
            ss += (v - m) * (v - m);
        }
        (ss / (n - 1.0)).sqrt()
    }

    fn avg(values: &[f64]) -> f64 {
        let mut t = 0.0;
        for v in values {
            t += v;
        }
        t / values.len() as f64
    }

    fn standardized(sx: &[f64], sy: &[f64]) -> f64 {
        let mut all = sx.to_vec();
        all.extend_from_slice(sy);
        (avg(sx) - avg(sy)) / sample_sd(&all)
    }

    /// Effect size with sample standard deviation.
    pub fn effect_size(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let sx: Vec<f64> = x.iter().map(|w| s(w, a, b)).collect();
        let sy: Vec<f64> = y.iter().map(|w| s(w, a, b)).collect();
        standardized(&sx, &sy)
    }

    fn concat(p: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out = p.to_vec();
        out.extend_from_slice(q);
        out
    }

    pub fn statistic(inst: &RawInstance, experiment: Experiment) -> f64 {
        let RawInstance {
            x,
            y,
            a_x,
            a_y,
            b_x,
            b_y,
            a_text,
            b_text,
        } = inst;
        match experiment {
            Experiment::Ungrounded => differential(x, y, a_text, b_text),
            Experiment::E1 => differential(x, y, &concat(a_x, a_y), &concat(b_x, b_y)),
            Experiment::E2 => {
                let mut t = 0.0;
                for w in x {
                    t += s(w, a_x, b_x);
                }
                for w in y {
                    t -= s(w, a_y, b_y);
                }
                t
            }
            Experiment::E3 => {
                let (mut x_own, mut x_other, mut y_own, mut y_other) = (0.0, 0.0, 0.0, 0.0);
                for w in x {
                    x_own += s(w, a_x, b_x);
                    x_other += s(w, a_y, b_y);
                }
                for w in y {
                    y_own += s(w, a_y, b_y);
                    y_other += s(w, a_x, b_x);
                }
                0.5 * ((x_own - x_other).abs() + (y_own - y_other).abs())
            }
        }
    }

    /// Per-experiment effect size (sample standard deviation).
    pub fn experiment_effect_size(inst: &RawInstance, experiment: Experiment) -> f64 {
        let RawInstance {
            x,
            y,
            a_x,
            a_y,
            b_x,
            b_y,
            a_text,
            b_text,
        } = inst;
        match experiment {
            Experiment::Ungrounded => effect_size(x, y, a_text, b_text),
            Experiment::E1 => effect_size(x, y, &concat(a_x, a_y), &concat(b_x, b_y)),
            Experiment::E2 => {
                let sx: Vec<f64> = x.iter().map(|w| s(w, a_x, b_x)).collect();
                let sy: Vec<f64> = y.iter().map(|w| s(w, a_y, b_y)).collect();
                standardized(&sx, &sy)
            }
            Experiment::E3 => {
                let dx: Vec<f64> = x.iter().map(|w| s(w, a_x, b_x) - s(w, a_y, b_y)).collect();
                let dy: Vec<f64> = y.iter().map(|w| s(w, a_y, b_y) - s(w, a_x, b_x)).collect();
                let mut all = dx.clone();
                all.extend_from_slice(&dy);
                0.5 * (avg(&dx).abs() + avg(&dy).abs()) / sample_sd(&all)
            }
        }
    }

    /// All size-preserving partitions of `0..n` into (X of size k, Y), by
    /// include/exclude recursion.
    pub fn partitions(n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        fn go(i: usize, n: usize, k: usize, xs: &mut Vec<usize>, ys: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Vec<usize>)>) {
            if i == n {
                if xs.len() == k {
                    out.push((xs.clone(), ys.clone()));
                }
                return;
            }
            xs.push(i);
            go(i + 1, n, k, xs, ys, out);
            xs.pop();
            ys.push(i);
            go(i + 1, n, k, xs, ys, out);
            ys.pop();
        }
        let mut out = Vec::new();
        go(0, n, k, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }
}
