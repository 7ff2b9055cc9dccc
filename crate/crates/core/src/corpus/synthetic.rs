//! Desk-scale compositional corpora: templated captions paired with symbolic
//! visual scenes built from noun and modifier prototype vectors.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::chunker::chunk_tags;
use super::instance::{CompositionKind, Instance, PosRole, Span, TaskId, Vocabulary};
use crate::error::{Error, Result};

/// Noun-phrase placeholder inside a template.
pub const NP_SLOT: &str = "{np}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub nouns: Vec<String>,
    pub adjectives: Vec<String>,
    /// Participle surface forms (tagged VBG), placed after the noun.
    pub verbs: Vec<String>,
    pub train_per_composition: usize,
    pub val_per_composition: usize,
    pub test_per_composition: usize,
    /// Standard deviation of the per-dimension Gaussian feature noise.
    pub noise: f32,
    pub feature_dim: usize,
    pub determiners: Vec<String>,
    /// Probability that a noun phrase opens with a determiner.
    pub determiner_prob: f64,
    /// `word/TAG` sequences with one `{np}` slot.
    pub templates: Vec<String>,
    pub max_text_len: usize,
    pub max_objects: usize,
    /// Extra random objects added to each scene.
    pub distractors: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        SyntheticSpec {
            nouns: s(&[
                "dog", "cat", "horse", "bird", "bus", "truck", "plane", "boat", "man", "woman",
                "child", "table", "car", "bear", "sheep", "cow", "elephant", "zebra", "giraffe",
                "train",
            ]),
            adjectives: s(&["black", "white", "brown", "red", "big", "small"]),
            verbs: s(&["eating", "standing", "lying", "riding"]),
            train_per_composition: 50,
            val_per_composition: 1,
            test_per_composition: 3,
            noise: 0.1,
            feature_dim: 32,
            determiners: s(&["a", "the"]),
            determiner_prob: 0.7,
            templates: s(&[
                "there/EX is/VBZ {np} here/RB",
                "we/PRP see/VBP {np} today/RB",
                "look/VB at/IN {np} now/RB",
                "{np} again/RB",
                "this/DT shows/VBZ {np} outside/RB",
            ]),
            max_text_len: 24,
            max_objects: 8,
            distractors: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn modifier_count(&self) -> usize {
        self.adjectives.len() + self.verbs.len()
    }

    /// Every (modifier surface, noun, kind) combination, noun-major.
    pub fn compositions(&self) -> Vec<(String, String, CompositionKind)> {
        let mut out = Vec::new();
        for n in &self.nouns {
            for a in &self.adjectives {
                out.push((a.clone(), n.clone(), CompositionKind::NounAdj));
            }
            for v in &self.verbs {
                out.push((v.clone(), n.clone(), CompositionKind::NounVerb));
            }
        }
        out
    }

    fn validate(&self) -> Result<Vec<Template>> {
        if self.nouns.is_empty() {
            return Err(Error::Spec("no nouns".into()));
        }
        if self.modifier_count() == 0 {
            return Err(Error::Spec("no adjectives or verbs".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Spec("feature_dim must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Spec(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if !(0.0..=1.0).contains(&self.determiner_prob) {
            return Err(Error::Spec("determiner_prob outside [0, 1]".into()));
        }
        if self.determiner_prob > 0.0 && self.determiners.is_empty() {
            return Err(Error::Spec("determiner_prob > 0 but no determiners".into()));
        }
        if 1 + self.distractors > self.max_objects {
            return Err(Error::Spec(format!(
                "{} objects per scene exceed max_objects {}",
                1 + self.distractors,
                self.max_objects
            )));
        }
        let mut atoms: Vec<&String> = self
            .nouns
            .iter()
            .chain(&self.adjectives)
            .chain(&self.verbs)
            .collect();
        atoms.sort();
        if let Some(w) = atoms.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Spec(format!("atom `{}` listed twice", w[0])));
        }
        if self.templates.is_empty() {
            return Err(Error::Spec("no templates".into()));
        }
        let templates = self
            .templates
            .iter()
            .map(|t| Template::parse(t))
            .collect::<Result<Vec<_>>>()?;
        // Longest noun phrase: determiner + modifier + noun.
        for t in &templates {
            let len = t.before.len() + 3 + t.after.len();
            if len > self.max_text_len {
                return Err(Error::Spec(format!(
                    "template `{}` expands to {len} tokens, over max_text_len {}",
                    t.source, self.max_text_len
                )));
            }
            for kind in [CompositionKind::NounAdj, CompositionKind::NounVerb] {
                for det in [true, false] {
                    let (tags, span) = t.expand_tags(kind, det);
                    let chunks = chunk_tags(&tags);
                    if !chunks.contains(&span) {
                        return Err(Error::Spec(format!(
                            "template `{}` does not chunk its noun phrase cleanly",
                            t.source
                        )));
                    }
                }
            }
        }
        Ok(templates)
    }
}

#[derive(Debug, Clone)]
struct Template {
    source: String,
    before: Vec<(String, String)>,
    after: Vec<(String, String)>,
}

impl Template {
    fn parse(s: &str) -> Result<Self> {
        let mut before = Vec::new();
        let mut after = Vec::new();
        let mut seen_slot = false;
        for item in s.split_whitespace() {
            if item == NP_SLOT {
                if seen_slot {
                    return Err(Error::Spec(format!(
                        "template `{s}` has two {NP_SLOT} slots"
                    )));
                }
                seen_slot = true;
                continue;
            }
            let (w, t) = item
                .rsplit_once('/')
                .filter(|(w, t)| !w.is_empty() && !t.is_empty())
                .ok_or_else(|| Error::Spec(format!("template token `{item}` lacks /TAG")))?;
            let pair = (w.to_string(), t.to_string());
            if seen_slot {
                after.push(pair);
            } else {
                before.push(pair);
            }
        }
        if !seen_slot {
            return Err(Error::Spec(format!("template `{s}` has no {NP_SLOT} slot")));
        }
        Ok(Template {
            source: s.to_string(),
            before,
            after,
        })
    }

    fn np_tags(kind: CompositionKind, det: bool) -> Vec<&'static str> {
        let mut v = Vec::new();
        if det {
            v.push("DT");
        }
        match kind {
            CompositionKind::NounAdj => v.extend(["JJ", "NN"]),
            CompositionKind::NounVerb => v.extend(["NN", "VBG"]),
        }
        v
    }

    fn expand_tags(&self, kind: CompositionKind, det: bool) -> (Vec<&str>, Span) {
        let np = Self::np_tags(kind, det);
        let start = self.before.len();
        let span = Span::new(start, start + np.len());
        let tags = self
            .before
            .iter()
            .map(|(_, t)| t.as_str())
            .chain(np)
            .chain(self.after.iter().map(|(_, t)| t.as_str()))
            .collect();
        (tags, span)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    pub vocab: Vocabulary,
}

fn unit_prototype(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

struct Scene<'a> {
    noun_protos: &'a [Vec<f32>],
    modifier_protos: &'a [Vec<f32>],
}

impl Scene<'_> {
    fn object(&self, noun: usize, modifier: usize, noise: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
        self.noun_protos[noun]
            .iter()
            .zip(&self.modifier_protos[modifier])
            .map(|(a, b)| {
                let eps = if noise > 0.0 {
                    noise * rng.sample::<f32, _>(StandardNormal)
                } else {
                    0.0
                };
                a + b + eps
            })
            .collect()
    }
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    let templates = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut vocab = Vocabulary::new();
    for t in &templates {
        for (w, tag) in t.before.iter().chain(&t.after) {
            let id = vocab.insert(w);
            vocab.set_role(id, PosRole::from_tag(tag));
        }
    }
    for d in &spec.determiners {
        let id = vocab.insert(d);
        vocab.set_role(id, PosRole::Other);
    }
    for (words, role) in [
        (&spec.nouns, PosRole::Noun),
        (&spec.adjectives, PosRole::Adjective),
        (&spec.verbs, PosRole::Verb),
    ] {
        for w in words {
            let id = vocab.insert(w);
            vocab.set_role(id, role);
        }
    }

    let d = spec.feature_dim;
    let noun_protos: Vec<Vec<f32>> = (0..spec.nouns.len())
        .map(|_| unit_prototype(&mut rng, d))
        .collect();
    let modifier_protos: Vec<Vec<f32>> = (0..spec.modifier_count())
        .map(|_| unit_prototype(&mut rng, d))
        .collect();
    let scene = Scene {
        noun_protos: &noun_protos,
        modifier_protos: &modifier_protos,
    };

    let make = |noun: usize, modifier: usize, rng: &mut ChaCha8Rng| -> Result<Instance> {
        let kind = if modifier < spec.adjectives.len() {
            CompositionKind::NounAdj
        } else {
            CompositionKind::NounVerb
        };
        let template = templates.choose(rng).expect("validated non-empty");
        let det = spec.determiner_prob > 0.0 && rng.random_bool(spec.determiner_prob);

        let mut words: Vec<(&str, &str)> = template
            .before
            .iter()
            .map(|(w, t)| (w.as_str(), t.as_str()))
            .collect();
        let start = words.len();
        if det {
            let d = spec.determiners.choose(rng).expect("validated non-empty");
            words.push((d, "DT"));
        }
        let noun_word = spec.nouns[noun].as_str();
        match kind {
            CompositionKind::NounAdj => {
                words.push((&spec.adjectives[modifier], "JJ"));
                words.push((noun_word, "NN"));
            }
            CompositionKind::NounVerb => {
                words.push((noun_word, "NN"));
                words.push((&spec.verbs[modifier - spec.adjectives.len()], "VBG"));
            }
        }
        let end = words.len();
        words.extend(template.after.iter().map(|(w, t)| (w.as_str(), t.as_str())));

        let mut objects = vec![scene.object(noun, modifier, spec.noise, rng)];
        for _ in 0..spec.distractors {
            let n = rng.random_range(0..spec.nouns.len());
            let m = rng.random_range(0..spec.modifier_count());
            objects.push(scene.object(n, m, spec.noise, rng));
        }
        if spec.distractors > 0 {
            let target = rng.random_range(0..objects.len());
            objects.swap(0, target);
        }
        let image: Vec<f32> = (0..d)
            .map(|k| objects.iter().map(|o| o[k]).sum::<f32>() / objects.len() as f32)
            .collect();

        let tokens = words.iter().map(|(w, _)| vocab.id(w)).collect();
        let pos = words.iter().map(|(_, t)| t.to_string()).collect();
        Instance::new(
            image,
            objects,
            tokens,
            pos,
            Span::new(start, end),
            TaskId::new(noun_word),
        )
    };

    let mut splits: [Vec<Instance>; 3] = Default::default();
    let counts = [
        spec.train_per_composition,
        spec.val_per_composition,
        spec.test_per_composition,
    ];
    for noun in 0..spec.nouns.len() {
        for modifier in 0..spec.modifier_count() {
            for (split, &count) in splits.iter_mut().zip(&counts) {
                for _ in 0..count {
                    split.push(make(noun, modifier, &mut rng)?);
                }
            }
        }
    }
    let [train, val, test] = splits;
    Ok(SyntheticCorpus {
        train,
        val,
        test,
        vocab,
    })
}
