//! Synthetic labeled token-sequence corpus with controllable class separability.
//!
//! Each concept draws tokens from a class-conditional unigram distribution
//! built by mixing a shared uniform base distribution with a concept-specific
//! Dirichlet draw over a concept-private slice of the vocabulary. At
//! `separation = 0` every class distribution collapses to the base; at
//! `separation = 1` the class supports are disjoint.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Dirichlet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the corpus concept-label list.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ConceptId(pub u16);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ConceptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Full recipe for a synthetic corpus. Identical specs produce identical corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub num_concepts: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub samples_per_concept: usize,
    /// Mixing weight in [0, 1] between the shared base distribution (0) and
    /// the concept-specific distribution (1).
    pub separation: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_concepts < 2 {
            return Err(Error::InvalidSpec {
                field: "num_concepts",
                message: format!("must be >= 2, got {}", self.num_concepts),
            });
        }
        if self.num_concepts > u16::MAX as usize {
            return Err(Error::InvalidSpec {
                field: "num_concepts",
                message: format!("must fit in u16, got {}", self.num_concepts),
            });
        }
        if self.vocab_size < 8 {
            return Err(Error::InvalidSpec {
                field: "vocab_size",
                message: format!("must be >= 8, got {}", self.vocab_size),
            });
        }
        if self.vocab_size < self.num_concepts {
            return Err(Error::InvalidSpec {
                field: "vocab_size",
                message: format!(
                    "must be >= num_concepts ({}) so concept supports are non-empty, got {}",
                    self.num_concepts, self.vocab_size
                ),
            });
        }
        if self.seq_len < 4 {
            return Err(Error::InvalidSpec {
                field: "seq_len",
                message: format!("must be >= 4, got {}", self.seq_len),
            });
        }
        // 80/20 stratified split needs at least one train and one eval sample
        // per concept; with fewer than 5 one side would be empty.
        if self.samples_per_concept < 5 {
            return Err(Error::InvalidSpec {
                field: "samples_per_concept",
                message: format!("must be >= 5, got {}", self.samples_per_concept),
            });
        }
        if !(0.0..=1.0).contains(&self.separation) || !self.separation.is_finite() {
            return Err(Error::InvalidSpec {
                field: "separation",
                message: format!("must lie in [0, 1], got {}", self.separation),
            });
        }
        Ok(())
    }

    /// Concept labels are synthesized from the index; no duplicates by construction.
    pub fn concept_labels(&self) -> Vec<String> {
        (0..self.num_concepts)
            .map(|c| format!("concept_{c}"))
            .collect()
    }

    /// Half-open token range privately owned by concept `c` (balanced partition
    /// of the vocabulary).
    pub fn concept_support(&self, c: usize) -> std::ops::Range<u32> {
        let lo = (c * self.vocab_size / self.num_concepts) as u32;
        let hi = ((c + 1) * self.vocab_size / self.num_concepts) as u32;
        lo..hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<u32>,
    pub concept: ConceptId,
}

/// Generated corpus: stratified 80/20 train/eval splits plus the spec that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<LabeledSequence>,
    pub eval: Vec<LabeledSequence>,
}

impl Corpus {
    pub fn num_concepts(&self) -> usize {
        self.spec.num_concepts
    }

    pub fn concept_labels(&self) -> Vec<String> {
        self.spec.concept_labels()
    }
}

/// Class-conditional unigram distributions, one row per concept.
///
/// Row `c` is `(1 - separation) * uniform + separation * dirichlet_c`, where
/// `dirichlet_c` is a symmetric Dirichlet draw supported only on concept `c`'s
/// private vocabulary slice.
pub fn class_conditional_distributions(spec: &CorpusSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = 1.0 / spec.vocab_size as f64;
    let mut rows = Vec::with_capacity(spec.num_concepts);
    for c in 0..spec.num_concepts {
        let support = spec.concept_support(c);
        let width = (support.end - support.start) as usize;
        let specific: Vec<f64> = if width == 1 {
            vec![1.0]
        } else {
            let dir = Dirichlet::new_with_size(1.0, width)
                .expect("dirichlet dimension >= 2 and alpha > 0");
            dir.sample(&mut rng)
        };
        let mut row = vec![(1.0 - spec.separation) * base; spec.vocab_size];
        for (offset, p) in specific.iter().enumerate() {
            row[support.start as usize + offset] += spec.separation * p;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Generate the corpus described by `spec`. Pure function of the spec.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    let distributions = class_conditional_distributions(spec)?;
    // Distribution construction consumed a seed-derived stream; token sampling
    // gets its own stream so support tweaks never shift sampled tokens.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    let train_per_concept = spec.samples_per_concept * 4 / 5;
    let mut train = Vec::with_capacity(train_per_concept * spec.num_concepts);
    let mut eval =
        Vec::with_capacity((spec.samples_per_concept - train_per_concept) * spec.num_concepts);
    for (c, row) in distributions.iter().enumerate() {
        let sampler = WeightedIndex::new(row).expect("distribution rows are positive");
        let concept = ConceptId(c as u16);
        for i in 0..spec.samples_per_concept {
            let tokens: Vec<u32> = (0..spec.seq_len)
                .map(|_| sampler.sample(&mut rng) as u32)
                .collect();
            let seq = LabeledSequence { tokens, concept };
            if i < train_per_concept {
                train.push(seq);
            } else {
                eval.push(seq);
            }
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        train,
        eval,
    })
}

/// Fraction of samples per concept. Fractions sum to 1 within 1e-12.
pub fn class_prior(sequences: &[LabeledSequence]) -> Result<BTreeMap<ConceptId, f64>> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("class_prior over empty corpus"));
    }
    let mut counts: BTreeMap<ConceptId, usize> = BTreeMap::new();
    for seq in sequences {
        *counts.entry(seq.concept).or_insert(0) += 1;
    }
    let total = sequences.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / total))
        .collect())
}

/// One `LabeledSequence` per line: `{"tokens":[...],"concept":k}`.
pub fn write_jsonl(sequences: &[LabeledSequence], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for seq in sequences {
        let line = serde_json::to_string(seq).map_err(|e| Error::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sequences = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        sequences.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(sequences)
}

/// Sidecar manifest holding the full corpus spec.
pub fn write_manifest(spec: &CorpusSpec, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, spec).map_err(|e| Error::json(path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<CorpusSpec> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let spec: CorpusSpec =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?;
    spec.validate()?;
    Ok(spec)
}
