//! Persistence and partitioning of recorded hidden-state vectors.
//!
//! Binary layout: magic `NLNS`, format version (u16 LE), length-prefixed JSON
//! manifest, little-endian f32 vectors in record order, trailing CRC32 over
//! every preceding byte. A JSONL encoding (manifest line followed by one
//! record per line) is provided for interoperability with externally produced
//! activation dumps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ConceptId, LabeledSequence};
use crate::error::{Error, Result};
use crate::intervention::SplitTag;
use crate::model::{Model, ReadoutMode};

pub const MAGIC: [u8; 4] = *b"NLNS";
pub const FORMAT_VERSION: u16 = 1;

/// One captured hidden-state vector at the readout token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub sample_id: u64,
    pub concept: ConceptId,
    pub layer: usize,
    pub vector: Vec<f32>,
}

/// All records of one concept at one layer, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMatrix {
    pub concept: ConceptId,
    pub sample_ids: Vec<u64>,
    pub rows: Vec<Vec<f32>>,
}

impl ConceptMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        self.rows.iter().map(|row| row[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordHeader {
    sample_id: u64,
    concept: ConceptId,
    layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BinaryManifest {
    hidden_dim: usize,
    layers: Vec<usize>,
    concept_labels: Vec<String>,
    model_checksum: u32,
    readout_mode: ReadoutMode,
    split: SplitTag,
    records: Vec<RecordHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonlManifest {
    hidden_dim: usize,
    layers: Vec<usize>,
    concept_labels: Vec<String>,
    model_checksum: u32,
    readout_mode: ReadoutMode,
    split: SplitTag,
}

/// Immutable set of activation records grouped by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    hidden_dim: usize,
    concept_labels: Vec<String>,
    model_checksum: u32,
    readout_mode: ReadoutMode,
    split: SplitTag,
    by_layer: BTreeMap<usize, Vec<ActivationRecord>>,
}

impl ActivationSet {
    /// Build a set from loose records, validating dimension, finiteness, and
    /// the per-layer requirement that every concept has at least two records
    /// (so sigma is defined downstream).
    pub fn new(
        hidden_dim: usize,
        concept_labels: Vec<String>,
        model_checksum: u32,
        readout_mode: ReadoutMode,
        split: SplitTag,
        records: Vec<ActivationRecord>,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for label in &concept_labels {
            if !seen.insert(label) {
                return Err(Error::Config(format!("duplicate concept label {label:?}")));
            }
        }
        let mut by_layer: BTreeMap<usize, Vec<ActivationRecord>> = BTreeMap::new();
        for record in records {
            if record.vector.len() != hidden_dim {
                return Err(Error::SizeMismatch {
                    context: "activation vector length vs manifest hidden_dim",
                    expected: hidden_dim,
                    found: record.vector.len(),
                });
            }
            if record.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptActivation {
                    sample_id: record.sample_id,
                });
            }
            if record.concept.index() >= concept_labels.len() {
                return Err(Error::UnknownConcept {
                    concept: record.concept.index(),
                });
            }
            by_layer.entry(record.layer).or_default().push(record);
        }
        for (layer, records) in &by_layer {
            let mut counts = vec![0usize; concept_labels.len()];
            for r in records {
                counts[r.concept.index()] += 1;
            }
            if let Some(concept) = counts.iter().position(|&c| c < 2) {
                return Err(Error::Config(format!(
                    "layer {layer}: concept {concept} has fewer than 2 records"
                )));
            }
        }
        Ok(ActivationSet {
            hidden_dim,
            concept_labels,
            model_checksum,
            readout_mode,
            split,
            by_layer,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn concept_labels(&self) -> &[String] {
        &self.concept_labels
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_labels.len()
    }

    pub fn model_checksum(&self) -> u32 {
        self.model_checksum
    }

    pub fn readout_mode(&self) -> ReadoutMode {
        self.readout_mode
    }

    /// Which corpus split the records were captured from.
    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn layers(&self) -> Vec<usize> {
        self.by_layer.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.by_layer.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records_at(&self, layer: usize) -> Result<&[ActivationRecord]> {
        self.by_layer
            .get(&layer)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownLayer { layer })
    }

    /// Partition a layer's records by concept. Disjoint and exhaustive by
    /// construction: every record lands in exactly one matrix.
    pub fn partition(&self, layer: usize) -> Result<BTreeMap<ConceptId, ConceptMatrix>> {
        let records = self.records_at(layer)?;
        let mut partitions: BTreeMap<ConceptId, ConceptMatrix> = BTreeMap::new();
        for record in records {
            let entry = partitions
                .entry(record.concept)
                .or_insert_with(|| ConceptMatrix {
                    concept: record.concept,
                    sample_ids: Vec::new(),
                    rows: Vec::new(),
                });
            entry.sample_ids.push(record.sample_id);
            entry.rows.push(record.vector.clone());
        }
        Ok(partitions)
    }

    /// Arithmetic column mean of a concept's activations at `layer`.
    pub fn class_mean(&self, layer: usize, concept: ConceptId) -> Result<Vec<f64>> {
        let records = self.records_at(layer)?;
        let mut sum = vec![0.0f64; self.hidden_dim];
        let mut count = 0usize;
        for record in records.iter().filter(|r| r.concept == concept) {
            for (acc, &v) in sum.iter_mut().zip(&record.vector) {
                *acc += v as f64;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::UnknownConcept {
                concept: concept.index(),
            });
        }
        for acc in &mut sum {
            *acc /= count as f64;
        }
        Ok(sum)
    }

    /// Column mean over all records at `layer`, pooled across concepts.
    /// Used as the generic reference value for mean-replacement policies.
    pub fn pooled_mean(&self, layer: usize) -> Result<Vec<f64>> {
        let records = self.records_at(layer)?;
        if records.is_empty() {
            return Err(Error::EmptyInput("pooled_mean over empty layer"));
        }
        let mut sum = vec![0.0f64; self.hidden_dim];
        for record in records {
            for (acc, &v) in sum.iter_mut().zip(&record.vector) {
                *acc += v as f64;
            }
        }
        for acc in &mut sum {
            *acc /= records.len() as f64;
        }
        Ok(sum)
    }

    fn manifest(&self) -> BinaryManifest {
        BinaryManifest {
            hidden_dim: self.hidden_dim,
            layers: self.layers(),
            concept_labels: self.concept_labels.clone(),
            model_checksum: self.model_checksum,
            readout_mode: self.readout_mode,
            split: self.split,
            records: self
                .by_layer
                .values()
                .flatten()
                .map(|r| RecordHeader {
                    sample_id: r.sample_id,
                    concept: r.concept,
                    layer: r.layer,
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest =
            serde_json::to_vec(&self.manifest()).expect("manifest serialization cannot fail");
        let payload_len: usize = self.len() * self.hidden_dim * 4;
        let mut bytes = Vec::with_capacity(14 + manifest.len() + payload_len);
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&manifest);
        for record in self.by_layer.values().flatten() {
            for &v in &record.vector {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 2 + 4;
        if bytes.len() < HEADER + 4 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: HEADER + 4 - bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().expect("length checked"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("length checked"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let manifest_len =
            u32::from_le_bytes(bytes[6..10].try_into().expect("length checked")) as usize;
        if body.len() < HEADER + manifest_len {
            return Err(Error::Truncated {
                offset: body.len(),
                needed: HEADER + manifest_len - body.len(),
            });
        }
        let manifest: BinaryManifest = serde_json::from_slice(&body[HEADER..HEADER + manifest_len])
            .map_err(|e| Error::json("<activation manifest>", e))?;
        let payload = &body[HEADER + manifest_len..];
        let expected = manifest.records.len() * manifest.hidden_dim * 4;
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                context: "activation payload bytes",
                expected,
                found: payload.len(),
            });
        }
        let mut records = Vec::with_capacity(manifest.records.len());
        for (i, header) in manifest.records.iter().enumerate() {
            let start = i * manifest.hidden_dim * 4;
            let vector: Vec<f32> = payload[start..start + manifest.hidden_dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            records.push(ActivationRecord {
                sample_id: header.sample_id,
                concept: header.concept,
                layer: header.layer,
                vector,
            });
        }
        let set = ActivationSet::new(
            manifest.hidden_dim,
            manifest.concept_labels,
            manifest.model_checksum,
            manifest.readout_mode,
            manifest.split,
            records,
        )?;
        if set.layers() != manifest.layers {
            return Err(Error::Config(
                "manifest layer list does not match records".into(),
            ));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// JSONL encoding: manifest line, then one record per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let manifest = JsonlManifest {
            hidden_dim: self.hidden_dim,
            layers: self.layers(),
            concept_labels: self.concept_labels.clone(),
            model_checksum: self.model_checksum,
            readout_mode: self.readout_mode,
            split: self.split,
        };
        let line = serde_json::to_string(&manifest).map_err(|e| Error::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        for record in self.by_layer.values().flatten() {
            let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let manifest_line = lines
            .next()
            .ok_or(Error::EmptyInput("jsonl activation file"))?
            .map_err(|e| Error::io(path, e))?;
        let manifest: JsonlManifest =
            serde_json::from_str(&manifest_line).map_err(|e| Error::json(path, e))?;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
        }
        ActivationSet::new(
            manifest.hidden_dim,
            manifest.concept_labels,
            manifest.model_checksum,
            manifest.readout_mode,
            manifest.split,
            records,
        )
    }
}

/// Traverse `sequences`, capturing the readout hidden state at each layer in
/// `layers`. Produces exactly one record per (sample, layer); sample ids are
/// positions within `sequences`.
pub fn record_corpus(
    model: &Model,
    sequences: &[LabeledSequence],
    concept_labels: &[String],
    layers: &[usize],
    split: SplitTag,
) -> Result<ActivationSet> {
    if layers.is_empty() {
        return Err(Error::EmptyInput("record_corpus with no layers"));
    }
    let mut sorted = layers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != layers.len() {
        return Err(Error::Config("duplicate layers in record request".into()));
    }
    for &layer in &sorted {
        if layer == 0 || layer > model.num_layers() {
            return Err(Error::UnknownLayer { layer });
        }
    }
    let mut records = Vec::with_capacity(sequences.len() * sorted.len());
    for (i, seq) in sequences.iter().enumerate() {
        let states = model.readout_states(&seq.tokens)?;
        for &layer in &sorted {
            let vector = states[layer - 1].clone();
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptActivation {
                    sample_id: i as u64,
                });
            }
            records.push(ActivationRecord {
                sample_id: i as u64,
                concept: seq.concept,
                layer,
                vector,
            });
        }
    }
    ActivationSet::new(
        model.hidden_dim(),
        concept_labels.to_vec(),
        model.checksum(),
        model.readout_mode(),
        split,
        records,
    )
}
