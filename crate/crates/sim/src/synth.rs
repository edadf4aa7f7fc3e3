//! Deterministic stand-in for the 20 Newsgroups collection.
//!
//! Messages are bags of pseudo-words. Each mid-frequency word belongs to a
//! home group with a random strength of association (weaker association
//! with the home group's cluster), and each message has its own degree of
//! focus on its topic, so most words are only weak evidence for a group.
//! Very common and rare words fill out the text and are removed by the
//! document-frequency thresholds, as in the real collection.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relfeed_core::corpus::RawDocument;
use relfeed_core::{Error, Result};

/// Group names and the cluster each belongs to.
pub const GROUPS: [(&str, usize); 20] = [
    ("alt.atheism", 0),
    ("comp.graphics", 1),
    ("comp.os.ms-windows.misc", 1),
    ("comp.sys.ibm.pc.hardware", 1),
    ("comp.sys.mac.hardware", 1),
    ("comp.windows.x", 1),
    ("misc.forsale", 2),
    ("rec.autos", 3),
    ("rec.motorcycles", 3),
    ("rec.sport.baseball", 3),
    ("rec.sport.hockey", 3),
    ("sci.crypt", 4),
    ("sci.electronics", 4),
    ("sci.med", 4),
    ("sci.space", 4),
    ("soc.religion.christian", 0),
    ("talk.politics.guns", 5),
    ("talk.politics.mideast", 5),
    ("talk.politics.misc", 5),
    ("talk.religion.misc", 0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub groups: usize,
    pub per_group: usize,
    pub seed: u64,
    /// Words carrying (graded) topical signal.
    pub topical_words: usize,
    pub common_words: usize,
    pub rare_words: usize,
    /// Mean boost of a word inside its home group, relative to elsewhere.
    pub strength: f64,
    /// Fraction of the home-group boost a word gets in related groups.
    pub cluster_affinity: f64,
    /// Token count range per message, inclusive.
    pub length: (usize, usize),
    /// Mixture over topical, common and rare words.
    pub mix: [f64; 3],
    /// Chance that a message also discusses a second group's topic.
    pub crosspost: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 20,
            per_group: 100,
            seed: 20,
            topical_words: 3000,
            common_words: 60,
            rare_words: 6000,
            strength: 2.0,
            cluster_affinity: 0.3,
            length: (60, 300),
            mix: [0.60, 0.25, 0.15],
            crosspost: 0.25,
        }
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, seen: &mut HashSet<String>) -> String {
    const ONSETS: [&str; 18] = [
        "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "st", "tr",
    ];
    const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
    loop {
        let syllables = rng.random_range(2..=4);
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if seen.insert(word.clone()) {
            return word;
        }
    }
}

fn words(n: usize, rng: &mut ChaCha8Rng, seen: &mut HashSet<String>) -> Vec<String> {
    (0..n).map(|_| pseudo_word(rng, seen)).collect()
}

fn zipf(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

fn weighted(weights: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(weights).expect("positive weights")
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = (1..=GROUPS.len()).contains(&self.groups)
            && self.per_group > 0
            && self.length.0 > 0
            && self.length.0 <= self.length.1
            && self.mix.iter().all(|p| *p >= 0.0)
            && (self.mix.iter().sum::<f64>() - 1.0).abs() < 1e-9
            && (0.0..=1.0).contains(&self.crosspost)
            && self.strength >= 0.0
            && self.cluster_affinity >= 0.0
            && [self.topical_words, self.common_words, self.rare_words]
                .iter()
                .all(|n| *n > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid synthetic corpus settings: {self:?}")))
        }
    }

    /// Generates `groups × per_group` labelled messages, headers included.
    pub fn generate(&self) -> Result<Vec<RawDocument>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seen = HashSet::new();
        let topical = words(self.topical_words, &mut rng, &mut seen);
        let common = words(self.common_words, &mut rng, &mut seen);
        let rare = words(self.rare_words, &mut rng, &mut seen);

        // Every topical word has a home group and an exponentially
        // distributed affinity to it.
        let base = zipf(self.topical_words, 0.7);
        let home: Vec<usize> = (0..self.topical_words).map(|_| rng.random_range(0..self.groups)).collect();
        let affinity: Vec<f64> = (0..self.topical_words)
            .map(|_| -self.strength * (1.0 - rng.random::<f64>()).ln())
            .collect();
        let group_weights = |g: usize, focus: f64| -> Vec<f64> {
            (0..self.topical_words)
                .map(|w| {
                    let h = home[w];
                    let boost = if h == g {
                        1.0
                    } else if GROUPS[h].1 == GROUPS[g].1 {
                        self.cluster_affinity
                    } else {
                        0.0
                    };
                    base[w] * (1.0 + focus * affinity[w] * boost * self.groups as f64 / 4.0)
                })
                .collect()
        };
        let common_dist = weighted(&zipf(self.common_words, 0.5));
        let rare_dist = weighted(&zipf(self.rare_words, 1.0));
        let mix = weighted(&self.mix);

        let mut docs = Vec::with_capacity(self.groups * self.per_group);
        for (g, (name, _)) in GROUPS.iter().take(self.groups).enumerate() {
            for i in 0..self.per_group {
                let focus = rng.random::<f64>();
                let own = weighted(&group_weights(g, focus));
                let other = (rng.random::<f64>() < self.crosspost)
                    .then(|| rng.random_range(0..self.groups))
                    .filter(|&h| h != g)
                    .map(|h| weighted(&group_weights(h, rng.random::<f64>())));
                let len = rng.random_range(self.length.0..=self.length.1);
                let mut body = Vec::with_capacity(len);
                for _ in 0..len {
                    let word = match mix.sample(&mut rng) {
                        0 => {
                            let dist = match &other {
                                Some(o) if rng.random::<f64>() < 0.4 => o,
                                _ => &own,
                            };
                            &topical[dist.sample(&mut rng)]
                        }
                        1 => &common[common_dist.sample(&mut rng)],
                        _ => &rare[rare_dist.sample(&mut rng)],
                    };
                    body.push(word.as_str());
                }
                let text = format!(
                    "From: user{i}@{host}.example\nSubject: {subject}\nLines: {len}\n\n{}\n",
                    body.join(" "),
                    host = name.replace('.', "-"),
                    subject = body[..3.min(body.len())].join(" "),
                );
                docs.push(RawDocument {
                    name: format!("{name}/{}", 50_000 + i),
                    label: Some(name.to_string()),
                    text,
                });
            }
        }
        Ok(docs)
    }

    /// Writes the collection as `root/<group>/<message>` files.
    pub fn write_tree(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for doc in self.generate()? {
            let path = root.join(&doc.name);
            let dir = path.parent().expect("group directory");
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            fs::write(&path, doc.text).map_err(|e| io_error(&path, e))?;
        }
        Ok(())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
