//! Activation-condition tuples, their `UAFC1` file format, condition
//! verbalization, and a seeded synthetic generator with known ground truth.
//!
//! # `UAFC1` layout
//!
//! Everything is little-endian.
//!
//! ```text
//! magic            5 bytes  "UAFC1"
//! activation_dim   u32
//! condition_dim    u32
//! record_count     u64
//! condition_count  u32
//! has_norm         u8       0 or 1
//!   norm_layers    u32      (only if has_norm = 1)
//!   per entry:     layer u32, mean f32[activation_dim], std f32[activation_dim]
//! conditions       condition_count x (id u32, embedding f32[condition_dim],
//!                                     text_len u32, text utf-8[text_len])
//! records          record_count x (layer u32, position u32, condition_id u32,
//!                                  activation f32[activation_dim])
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{widen, Rng};
use crate::{Error, Result};

pub const CORPUS_MAGIC: &[u8; 5] = b"UAFC1";

/// Placeholder used by the compositional template in [`verbalize_requirements`].
pub const REQUIREMENTS_TEMPLATE: &str = "The response should be [requirements].";

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub layer: u32,
    pub position: u32,
    pub condition_id: u32,
    pub activation: Vec<f32>,
}

impl ActivationRecord {
    pub fn activation_f64(&self) -> Vec<f64> {
        widen(&self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEntry {
    pub id: u32,
    pub text: String,
    pub embedding: Vec<f32>,
}

impl ConditionEntry {
    pub fn embedding_f64(&self) -> Vec<f64> {
        widen(&self.embedding)
    }
}

/// Per-layer standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: u32,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Normalization {
    pub layers: Vec<LayerStats>,
}

impl Normalization {
    /// Per-layer mean and standard deviation over `records`. Coordinates with
    /// a standard deviation below `1e-6` get a unit scale so constant
    /// coordinates pass through centered rather than blowing up.
    pub fn from_records(records: &[ActivationRecord], dim: usize) -> Self {
        let mut layers: Vec<u32> = records.iter().map(|r| r.layer).collect();
        layers.sort_unstable();
        layers.dedup();
        let layers = layers
            .into_iter()
            .map(|layer| {
                let mut sum = vec![0.0f64; dim];
                let mut sum_sq = vec![0.0f64; dim];
                let mut n = 0usize;
                for r in records.iter().filter(|r| r.layer == layer) {
                    for (k, &x) in r.activation.iter().enumerate() {
                        let x = f64::from(x);
                        sum[k] += x;
                        sum_sq[k] += x * x;
                    }
                    n += 1;
                }
                let n = n as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
                let std = sum_sq
                    .iter()
                    .zip(&mean)
                    .map(|(sq, m)| {
                        let var = (sq / n - m * m).max(0.0);
                        let s = var.sqrt();
                        if s < 1e-6 {
                            1.0
                        } else {
                            s as f32
                        }
                    })
                    .collect();
                LayerStats {
                    layer,
                    mean: mean.iter().map(|&m| m as f32).collect(),
                    std,
                }
            })
            .collect();
        Self { layers }
    }

    fn stats(&self, layer: u32) -> Result<&LayerStats> {
        self.layers
            .iter()
            .find(|s| s.layer == layer)
            .ok_or_else(|| Error::Config(format!("no normalization statistics for layer {layer}")))
    }

    pub fn standardize(&self, layer: u32, a: &mut [f64]) -> Result<()> {
        let s = self.stats(layer)?;
        for ((x, m), sd) in a.iter_mut().zip(&s.mean).zip(&s.std) {
            *x = (*x - f64::from(*m)) / f64::from(*sd);
        }
        Ok(())
    }

    pub fn destandardize(&self, layer: u32, a: &mut [f64]) -> Result<()> {
        let s = self.stats(layer)?;
        for ((x, m), sd) in a.iter_mut().zip(&s.mean).zip(&s.std) {
            *x = *x * f64::from(*sd) + f64::from(*m);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHeader {
    pub activation_dim: u32,
    pub condition_dim: u32,
    pub record_count: u64,
    pub condition_count: u32,
    pub normalization: Option<Normalization>,
}

/// An in-memory corpus. Construction validates every cross-field invariant,
/// so a `Corpus` value is always writable.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    header: CorpusHeader,
    conditions: Vec<ConditionEntry>,
    records: Vec<ActivationRecord>,
}

impl Corpus {
    pub fn new(
        activation_dim: usize,
        condition_dim: usize,
        conditions: Vec<ConditionEntry>,
        records: Vec<ActivationRecord>,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        if activation_dim == 0 {
            return Err(Error::InvalidDimension("activation_dim must be >= 1".into()));
        }
        if condition_dim == 0 {
            return Err(Error::InvalidDimension("condition_dim must be >= 1".into()));
        }
        let header = CorpusHeader {
            activation_dim: to_u32(activation_dim, "activation_dim")?,
            condition_dim: to_u32(condition_dim, "condition_dim")?,
            record_count: records.len() as u64,
            condition_count: to_u32(conditions.len(), "condition_count")?,
            normalization,
        };
        let corpus = Self {
            header,
            conditions,
            records,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let d = self.activation_dim();
        let e = self.condition_dim();
        for (i, c) in self.conditions.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Argument(format!(
                    "condition ids must be dense 0..m-1; entry {i} has id {}",
                    c.id
                )));
            }
            if c.embedding.len() != e {
                return Err(Error::shape("condition embedding", e, c.embedding.len()));
            }
        }
        for r in &self.records {
            if r.activation.len() != d {
                return Err(Error::shape("record activation", d, r.activation.len()));
            }
            if r.condition_id as usize >= self.conditions.len() {
                return Err(Error::Argument(format!(
                    "record condition_id {} out of range (have {} conditions)",
                    r.condition_id,
                    self.conditions.len()
                )));
            }
        }
        if let Some(norm) = &self.header.normalization {
            for s in &norm.layers {
                if s.mean.len() != d || s.std.len() != d {
                    return Err(Error::shape("normalization statistics", d, s.mean.len().min(s.std.len())));
                }
            }
        }
        Ok(())
    }

    pub fn header(&self) -> &CorpusHeader {
        &self.header
    }

    pub fn activation_dim(&self) -> usize {
        self.header.activation_dim as usize
    }

    pub fn condition_dim(&self) -> usize {
        self.header.condition_dim as usize
    }

    pub fn conditions(&self) -> &[ConditionEntry] {
        &self.conditions
    }

    pub fn condition(&self, id: u32) -> Result<&ConditionEntry> {
        self.conditions
            .get(id as usize)
            .ok_or_else(|| Error::Argument(format!("unknown condition id {id}")))
    }

    pub fn records(&self) -> &[ActivationRecord] {
        &self.records
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.header.normalization.as_ref()
    }

    /// Returns a copy with per-layer statistics computed from the records.
    pub fn with_normalization(mut self) -> Self {
        self.header.normalization = Some(Normalization::from_records(&self.records, self.activation_dim()));
        self
    }

    /// Replaces the records, keeping the header and condition table.
    pub fn with_records(&self, records: Vec<ActivationRecord>) -> Result<Self> {
        Self::new(
            self.activation_dim(),
            self.condition_dim(),
            self.conditions.clone(),
            records,
            self.header.normalization.clone(),
        )
    }

    pub fn into_parts(self) -> (CorpusHeader, Vec<ConditionEntry>, Vec<ActivationRecord>) {
        (self.header, self.conditions, self.records)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.activation_dim();
        let e = self.condition_dim();
        let mut out = Vec::with_capacity(64 + self.records.len() * (12 + 4 * d));
        out.extend_from_slice(CORPUS_MAGIC);
        out.extend_from_slice(&self.header.activation_dim.to_le_bytes());
        out.extend_from_slice(&self.header.condition_dim.to_le_bytes());
        out.extend_from_slice(&self.header.record_count.to_le_bytes());
        out.extend_from_slice(&self.header.condition_count.to_le_bytes());
        match &self.header.normalization {
            None => out.push(0),
            Some(norm) => {
                out.push(1);
                out.extend_from_slice(&(norm.layers.len() as u32).to_le_bytes());
                for s in &norm.layers {
                    out.extend_from_slice(&s.layer.to_le_bytes());
                    put_f32s(&mut out, &s.mean);
                    put_f32s(&mut out, &s.std);
                }
            }
        }
        for c in &self.conditions {
            out.extend_from_slice(&c.id.to_le_bytes());
            debug_assert_eq!(c.embedding.len(), e);
            put_f32s(&mut out, &c.embedding);
            out.extend_from_slice(&(c.text.len() as u32).to_le_bytes());
            out.extend_from_slice(c.text.as_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&r.layer.to_le_bytes());
            out.extend_from_slice(&r.position.to_le_bytes());
            out.extend_from_slice(&r.condition_id.to_le_bytes());
            put_f32s(&mut out, &r.activation);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(5, "magic")?;
        if magic != CORPUS_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected \"UAFC1\""),
            });
        }
        let activation_dim = r.u32("activation_dim")? as usize;
        let condition_dim = r.u32("condition_dim")? as usize;
        let record_count = r.u64("record_count")?;
        let condition_count = r.u32("condition_count")? as usize;
        if activation_dim == 0 || condition_dim == 0 {
            return Err(Error::Format {
                offset: 5,
                message: "zero dimension in header".into(),
            });
        }
        let normalization = match r.u8("normalization flag")? {
            0 => None,
            1 => {
                let n = r.u32("normalization layer count")? as usize;
                let mut layers = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let layer = r.u32("normalization layer")?;
                    let mean = r.f32s(activation_dim, "normalization mean")?;
                    let std = r.f32s(activation_dim, "normalization std")?;
                    layers.push(LayerStats { layer, mean, std });
                }
                Some(Normalization { layers })
            }
            flag => {
                return Err(Error::Format {
                    offset: r.pos as u64 - 1,
                    message: format!("normalization flag must be 0 or 1, got {flag}"),
                })
            }
        };
        let mut conditions = Vec::with_capacity(condition_count.min(1 << 16));
        for i in 0..condition_count {
            let at = r.pos;
            let id = r.u32("condition id")?;
            if id as usize != i {
                return Err(Error::Format {
                    offset: at as u64,
                    message: format!("condition ids must be dense; entry {i} has id {id}"),
                });
            }
            let embedding = r.f32s(condition_dim, "condition embedding")?;
            let len = r.u32("condition text length")? as usize;
            let at = r.pos;
            let text = String::from_utf8(r.take(len, "condition text")?.to_vec()).map_err(|_| Error::Format {
                offset: at as u64,
                message: "condition text is not valid UTF-8".into(),
            })?;
            conditions.push(ConditionEntry { id, text, embedding });
        }
        let record_size = 12 + 4 * activation_dim;
        let remaining = bytes.len() - r.pos;
        if (remaining as u64) < record_count.saturating_mul(record_size as u64) {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: format!(
                    "truncated: header announces {record_count} records of {record_size} bytes, {remaining} bytes left"
                ),
            });
        }
        let mut records = Vec::with_capacity(record_count as usize);
        for _ in 0..record_count {
            let layer = r.u32("record layer")?;
            let position = r.u32("record position")?;
            let at = r.pos;
            let condition_id = r.u32("record condition id")?;
            if condition_id as usize >= condition_count {
                return Err(Error::Format {
                    offset: at as u64,
                    message: format!("condition id {condition_id} out of range ({condition_count} conditions)"),
                });
            }
            let activation = r.f32s(activation_dim, "record activation")?;
            records.push(ActivationRecord {
                layer,
                position,
                condition_id,
                activation,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes after last record", bytes.len() - r.pos),
            });
        }
        Self::new(activation_dim, condition_dim, conditions, records, normalization)
    }
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, corpus.to_bytes())?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_bytes(&fs::read(path)?)
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Argument(format!("{what} {n} does not fit in u32")))
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked little-endian cursor that reports the failing offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what} ({n} bytes needed)"),
            }),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Fills the single `[name]` placeholder of `template` with `label`.
///
/// ```
/// use flowsteer::corpus::verbalize;
/// assert_eq!(verbalize("evil", "Be [trait].").unwrap(), "Be evil.");
/// ```
pub fn verbalize(label: &str, template: &str) -> Result<String> {
    let spans = placeholder_spans(template);
    match spans.as_slice() {
        [(start, end)] => Ok(format!("{}{}{}", &template[..*start], label, &template[*end..])),
        [] => Err(Error::Template(format!("no [placeholder] in template {template:?}"))),
        many => Err(Error::Template(format!(
            "template {template:?} has {} placeholders, expected exactly one",
            many.len()
        ))),
    }
}

/// Byte spans of `[identifier]` tokens, identifiers being ASCII letters,
/// digits or underscores.
fn placeholder_spans(template: &str) -> Vec<(usize, usize)> {
    let bytes = template.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b']' {
                spans.push((i, j + 1));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

/// Joins requirements into one English list: `a`, `a and b`, `a, b, and c`.
pub fn join_requirements<S: AsRef<str>>(items: &[S]) -> String {
    match items {
        [] => String::new(),
        [one] => one.as_ref().to_string(),
        [a, b] => format!("{} and {}", a.as_ref(), b.as_ref()),
        [init @ .., last] => {
            let head: Vec<&str> = init.iter().map(AsRef::as_ref).collect();
            format!("{}, and {}", head.join(", "), last.as_ref())
        }
    }
}

/// Merges several requirements into a single condition string.
pub fn verbalize_requirements<S: AsRef<str>>(items: &[S]) -> Result<String> {
    if items.is_empty() {
        return Err(Error::Argument("no requirements to verbalize".into()));
    }
    verbalize(&join_requirements(items), REQUIREMENTS_TEMPLATE)
}

/// One condition of a synthetic corpus: activations are drawn as
/// `mean + scale * N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCondition {
    pub text: String,
    pub mean: Vec<f64>,
    pub scale: f64,
}

/// An additive offset planted on one condition's records at early positions
/// (`position < before_position`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOffset {
    pub condition: u32,
    pub before_position: u32,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub activation_dim: usize,
    /// Embedding width; must be at least the number of conditions so each
    /// condition gets its own basis vector.
    pub condition_dim: usize,
    pub conditions: Vec<SynthCondition>,
    pub records_per_condition: usize,
    pub layers: Vec<u32>,
    pub positions_per_record: u32,
    #[serde(default)]
    pub planted: Vec<PlantedOffset>,
    pub seed: u64,
}

impl SynthSpec {
    /// Conditions with means `+separation` and `-separation` on every
    /// coordinate.
    pub fn two_clusters(activation_dim: usize, separation: f64, scale: f64, records_per_condition: usize, seed: u64) -> Self {
        Self {
            activation_dim,
            condition_dim: 2,
            conditions: vec![
                SynthCondition {
                    text: "Be positive.".into(),
                    mean: vec![separation; activation_dim],
                    scale,
                },
                SynthCondition {
                    text: "Be negative.".into(),
                    mean: vec![-separation; activation_dim],
                    scale,
                },
            ],
            records_per_condition,
            layers: vec![0],
            positions_per_record: 1,
            planted: Vec::new(),
            seed,
        }
    }

    fn effective_mean(&self, condition: usize, position: u32) -> Vec<f64> {
        let mut mean = self.conditions[condition].mean.clone();
        for p in &self.planted {
            if p.condition as usize == condition && position < p.before_position {
                for (m, o) in mean.iter_mut().zip(&p.offset) {
                    *m += o;
                }
            }
        }
        mean
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.activation_dim;
        if d == 0 {
            return Err(Error::InvalidDimension("activation_dim must be >= 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("at least one condition is required".into()));
        }
        if self.condition_dim < self.conditions.len() {
            return Err(Error::Config(format!(
                "condition_dim {} cannot hold {} orthogonal embeddings",
                self.condition_dim,
                self.conditions.len()
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.positions_per_record == 0 {
            return Err(Error::Config("positions_per_record must be >= 1".into()));
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::shape("condition mean", d, c.mean.len()));
            }
            if !(c.scale >= 0.0 && c.scale.is_finite()) {
                return Err(Error::Config(format!("condition {i} scale must be finite and >= 0")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config(format!("condition {i} mean is not finite")));
            }
        }
        for p in &self.planted {
            if p.offset.len() != d {
                return Err(Error::shape("planted offset", d, p.offset.len()));
            }
            if p.condition as usize >= self.conditions.len() {
                return Err(Error::Config(format!("planted offset targets unknown condition {}", p.condition)));
            }
        }
        // Conditions must be distinguishable at some position.
        for i in 0..self.conditions.len() {
            for j in i + 1..self.conditions.len() {
                let differ = (0..self.positions_per_record)
                    .any(|pos| self.effective_mean(i, pos) != self.effective_mean(j, pos));
                if !differ {
                    return Err(Error::Config(format!("conditions {i} and {j} have identical means")));
                }
            }
        }
        Ok(())
    }
}

/// Draws a corpus from `spec`.
///
/// Record `r` of each condition sits at position `r % positions_per_record`
/// and layer `layers[(r / positions_per_record) % layers.len()]`. Condition
/// `c` is embedded as the `c`-th standard basis vector.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let d = spec.activation_dim;
    let conditions = spec
        .conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut embedding = vec![0.0f32; spec.condition_dim];
            embedding[i] = 1.0;
            ConditionEntry {
                id: i as u32,
                text: c.text.clone(),
                embedding,
            }
        })
        .collect();
    let mut rng = Rng::new(spec.seed);
    let mut records = Vec::with_capacity(spec.conditions.len() * spec.records_per_condition);
    for (ci, cond) in spec.conditions.iter().enumerate() {
        for r in 0..spec.records_per_condition {
            let position = (r % spec.positions_per_record as usize) as u32;
            let layer = spec.layers[(r / spec.positions_per_record as usize) % spec.layers.len()];
            let mean = spec.effective_mean(ci, position);
            let activation = (0..d)
                .map(|k| {
                    let z = rng.gaussian();
                    (mean[k] + cond.scale * z) as f32
                })
                .collect();
            records.push(ActivationRecord {
                layer,
                position,
                condition_id: ci as u32,
                activation,
            });
        }
    }
    Corpus::new(d, spec.condition_dim, conditions, records, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Corpus {
        Corpus::new(
            4,
            2,
            vec![ConditionEntry {
                id: 0,
                text: "Be evil.".into(),
                embedding: vec![1.0, 0.0],
            }],
            vec![ActivationRecord {
                layer: 3,
                position: 7,
                condition_id: 0,
                activation: vec![0.1, -2.5, f32::MIN_POSITIVE, 1e30],
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn verbalize_examples() {
        assert_eq!(verbalize("evil", "Be [trait].").unwrap(), "Be evil.");
        assert_eq!(verbalize("X", "[trait]").unwrap(), "X");
        assert_eq!(
            verbalize_requirements(&["concise", "harmless", "end with the specified phrase"]).unwrap(),
            "The response should be concise, harmless, and end with the specified phrase."
        );
    }

    #[test]
    fn verbalize_rejects_bad_templates() {
        assert!(matches!(verbalize("x", "no placeholder"), Err(Error::Template(_))));
        assert!(matches!(verbalize("x", "[a] and [b]"), Err(Error::Template(_))));
        // Brackets that are not identifiers do not count.
        assert_eq!(verbalize("x", "[trait] [not one]").unwrap(), "x [not one]");
    }

    #[test]
    fn join_small_lists() {
        assert_eq!(join_requirements(&["a"]), "a");
        assert_eq!(join_requirements(&["a", "b"]), "a and b");
        assert_eq!(join_requirements::<&str>(&[]), "");
    }

    #[test]
    fn empty_corpus_round_trips() {
        let c = Corpus::new(
            3,
            1,
            vec![ConditionEntry {
                id: 0,
                text: String::new(),
                embedding: vec![0.5],
            }],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(Corpus::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn single_record_round_trips_byte_identical() {
        let c = tiny();
        let bytes = c.to_bytes();
        let back = Corpus::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let mut bytes = tiny().to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(Corpus::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));

        let bytes = tiny().to_bytes();
        let err = Corpus::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        let mut bytes = tiny().to_bytes();
        bytes.push(0);
        assert!(matches!(Corpus::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn record_condition_out_of_range_is_rejected() {
        let err = Corpus::new(
            1,
            1,
            vec![],
            vec![ActivationRecord {
                layer: 0,
                position: 0,
                condition_id: 0,
                activation: vec![1.0],
            }],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn normalization_round_trips_and_inverts() {
        let spec = SynthSpec::two_clusters(3, 2.0, 0.5, 50, 1);
        let c = synth_corpus(&spec).unwrap().with_normalization();
        let back = Corpus::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let norm = c.normalization().unwrap();
        let mut a = c.records()[0].activation_f64();
        let orig = a.clone();
        norm.standardize(0, &mut a).unwrap();
        norm.destandardize(0, &mut a).unwrap();
        for (x, y) in a.iter().zip(&orig) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(norm.standardize(9, &mut a).is_err());
    }

    #[test]
    fn synth_degenerate_scale_is_exact() {
        let mut spec = SynthSpec::two_clusters(4, 3.0, 0.0, 20, 9);
        spec.conditions[1].mean = vec![0.25, -1.5, 2.0, 0.0];
        let c = synth_corpus(&spec).unwrap();
        for r in c.records() {
            let mean = &spec.conditions[r.condition_id as usize].mean;
            let expect: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
            assert_eq!(r.activation, expect);
        }
    }

    #[test]
    fn synth_sample_means_converge() {
        let spec = SynthSpec::two_clusters(4, 3.0, 1.0, 1000, 42);
        let c = synth_corpus(&spec).unwrap();
        for ci in 0..2u32 {
            let rows: Vec<_> = c.records().iter().filter(|r| r.condition_id == ci).collect();
            assert_eq!(rows.len(), 1000);
            for k in 0..4 {
                let m: f64 = rows.iter().map(|r| f64::from(r.activation[k])).sum::<f64>() / 1000.0;
                let target = spec.conditions[ci as usize].mean[k];
                // 3 sigma / sqrt(n) with sigma = 1 is ~0.095.
                assert!((m - target).abs() < 0.15, "cond {ci} coord {k}: {m} vs {target}");
            }
        }
    }

    #[test]
    fn synth_is_deterministic_and_orthogonal() {
        let spec = SynthSpec::two_clusters(2, 1.0, 0.3, 10, 5);
        let a = synth_corpus(&spec).unwrap();
        let b = synth_corpus(&spec).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.conditions()[0].embedding, vec![1.0, 0.0]);
        assert_eq!(a.conditions()[1].embedding, vec![0.0, 1.0]);
    }

    #[test]
    fn synth_positions_round_robin_and_planting() {
        let mut spec = SynthSpec::two_clusters(2, 0.0, 0.0, 12, 5);
        spec.conditions[1].mean = vec![0.0, 0.0];
        spec.positions_per_record = 4;
        spec.layers = vec![2, 5];
        spec.planted = vec![PlantedOffset {
            condition: 1,
            before_position: 2,
            offset: vec![1.0, 0.0],
        }];
        let c = synth_corpus(&spec).unwrap();
        let positions: Vec<u32> = c.records()[..8].iter().map(|r| r.position).collect();
        assert_eq!(positions, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        let layers: Vec<u32> = c.records()[..8].iter().map(|r| r.layer).collect();
        assert_eq!(layers, vec![2, 2, 2, 2, 5, 5, 5, 5]);
        for r in c.records() {
            let planted = r.condition_id == 1 && r.position < 2;
            assert_eq!(r.activation[0], if planted { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn synth_rejects_indistinguishable_conditions() {
        let spec = SynthSpec::two_clusters(2, 0.0, 1.0, 4, 0);
        assert!(matches!(synth_corpus(&spec), Err(Error::Config(_))));
    }
}
