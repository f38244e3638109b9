//! Reference directions and the token-level edit alignment diagnostic.
//!
//! Two classical direction estimates are provided: the normalized mean
//! difference between positive and negative activations ([`caa_direction`])
//! and the leading principal axis of paired differences
//! ([`repe_direction`]). [`position_alignment_profile`] then measures how well
//! each flow edit lines up with such a direction, bucketed by token position.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{ActivationRecord, ByteReader, Normalization};
use crate::flow::{edit, EditSpec};
use crate::model::{ModelConfig, Site, VelocityField};
use crate::numerics::{dot, norm, sub};
use crate::{Error, Result};

pub const DIRECTION_MAGIC: &[u8; 5] = b"UADR1";

const POWER_ITERATION_TOL: f64 = 1e-8;
const POWER_ITERATION_MAX: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionMethod {
    Caa,
    RepE,
}

impl DirectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectionMethod::Caa => "caa",
            DirectionMethod::RepE => "repe",
        }
    }
}

/// One unit direction per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub method: DirectionMethod,
    pub label: String,
    pub directions: Vec<(u32, Vec<f64>)>,
}

impl DirectionSet {
    pub fn for_layer(&self, layer: u32) -> Option<&[f64]> {
        self.directions
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, d)| d.as_slice())
    }

    /// Per-layer directions from records split into positive and negative
    /// sets; layers missing either side are skipped.
    pub fn from_records(
        method: DirectionMethod,
        label: impl Into<String>,
        positive: &[&ActivationRecord],
        negative: &[&ActivationRecord],
    ) -> Result<Self> {
        let mut layers: Vec<u32> = positive.iter().map(|r| r.layer).collect();
        layers.sort_unstable();
        layers.dedup();
        let mut directions = Vec::new();
        for layer in layers {
            let pos: Vec<Vec<f64>> = positive
                .iter()
                .filter(|r| r.layer == layer)
                .map(|r| r.activation_f64())
                .collect();
            let neg: Vec<Vec<f64>> = negative
                .iter()
                .filter(|r| r.layer == layer)
                .map(|r| r.activation_f64())
                .collect();
            if neg.is_empty() {
                continue;
            }
            let dir = match method {
                DirectionMethod::Caa => caa_direction(&pos, &neg)?,
                DirectionMethod::RepE => {
                    let n = pos.len().min(neg.len());
                    repe_direction(&pos[..n], &neg[..n])?
                }
            };
            directions.push((layer, dir));
        }
        Ok(Self {
            method,
            label: label.into(),
            directions,
        })
    }
}

fn check_sets(positive: &[Vec<f64>], negative: &[Vec<f64>]) -> Result<usize> {
    let first = positive
        .first()
        .or(negative.first())
        .ok_or_else(|| Error::Argument("direction needs nonempty positive and negative sets".into()))?;
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Argument("direction needs nonempty positive and negative sets".into()));
    }
    let dim = first.len();
    for v in positive.iter().chain(negative) {
        if v.len() != dim {
            return Err(Error::shape("direction input", dim, v.len()));
        }
    }
    Ok(dim)
}

fn mean(vs: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (mi, x) in m.iter_mut().zip(v) {
            *mi += x;
        }
    }
    let n = vs.len() as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

fn normalized(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let n = norm(&v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Degenerate(format!("{what} has zero norm")));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// `normalize(mean(positive) - mean(negative))`
pub fn caa_direction(positive: &[Vec<f64>], negative: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_sets(positive, negative)?;
    normalized(sub(&mean(positive, dim), &mean(negative, dim)), "mean difference")
}

/// Leading eigenvector of the (uncentered) second-moment matrix of the paired
/// differences `positive[i] - negative[i]`, by power iteration. The sign is
/// chosen so the direction has a nonnegative dot product with the mean
/// difference (or, if that is zero, a positive first nonzero coordinate).
pub fn repe_direction(positive: &[Vec<f64>], negative: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = check_sets(positive, negative)?;
    if positive.len() != negative.len() {
        return Err(Error::Argument(format!(
            "repe needs paired examples, got {} positive and {} negative",
            positive.len(),
            negative.len()
        )));
    }
    if positive.len() < 2 {
        return Err(Error::Argument("repe needs at least two paired differences".into()));
    }
    let diffs: Vec<Vec<f64>> = positive.iter().zip(negative).map(|(p, n)| sub(p, n)).collect();
    let mut moment = vec![0.0; dim * dim];
    for d in &diffs {
        for i in 0..dim {
            for j in 0..dim {
                moment[i * dim + j] += d[i] * d[j];
            }
        }
    }
    let scale = (0..dim).map(|i| moment[i * dim + i]).sum::<f64>();
    if scale == 0.0 {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let mean_diff = mean(&diffs, dim);
    // Start from the mean difference nudged by a fixed, non-symmetric vector so
    // the start is never exactly orthogonal to the leading axis by accident.
    let mut v: Vec<f64> = (0..dim).map(|i| mean_diff[i] + 1e-3 * (1.0 + i as f64).recip()).collect();
    v = normalized(v, "power iteration start")?;
    for _ in 0..POWER_ITERATION_MAX {
        let w: Vec<f64> = (0..dim).map(|i| dot(&moment[i * dim..(i + 1) * dim], &v)).collect();
        let w = normalized(w, "power iteration iterate")?;
        let change = norm(&sub(&w, &v));
        v = w;
        if change < POWER_ITERATION_TOL {
            break;
        }
    }
    let alignment = dot(&v, &mean_diff);
    let flip = if alignment != 0.0 {
        alignment < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

/// `a_edit - a_src`
pub fn edit_delta(a_edit: &[f64], a_src: &[f64]) -> Result<Vec<f64>> {
    if a_edit.len() != a_src.len() {
        return Err(Error::shape("edit delta", a_src.len(), a_edit.len()));
    }
    Ok(sub(a_edit, a_src))
}

/// Cosine similarity; zero-norm inputs are an error rather than 0.
pub fn alignment_score(delta: &[f64], direction: &[f64]) -> Result<f64> {
    if delta.len() != direction.len() {
        return Err(Error::shape("alignment direction", delta.len(), direction.len()));
    }
    let (nd, nr) = (norm(delta), norm(direction));
    if nd == 0.0 || nr == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(delta, direction) / (nd * nr)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub bucket: usize,
    pub mean_cosine: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProfile {
    pub rows: Vec<ProfileRow>,
    /// Records whose edit left the activation unchanged.
    pub skipped: usize,
}

impl AlignmentProfile {
    pub fn bucket(&self, bucket: usize) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }
}

/// Edits every record, then averages the cosine between its edit delta and
/// the reference direction of its layer, per position bucket (the model's own
/// bucketing). Deltas are measured in the corpus' activation space: when
/// `normalization` is given, records are standardized before editing and
/// de-standardized after.
pub fn position_alignment_profile<F: VelocityField + ?Sized>(
    field: &F,
    bucketing: &ModelConfig,
    records: &[ActivationRecord],
    normalization: Option<&Normalization>,
    spec: &EditSpec,
    directions: &DirectionSet,
) -> Result<AlignmentProfile> {
    let cosines = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let dir = directions
                .for_layer(r.layer)
                .ok_or_else(|| Error::Argument(format!("record {i}: no direction for layer {}", r.layer)))?;
            let src = r.activation_f64();
            let site = Site::new(r.layer, r.position);
            let edited = edit_record(field, site, &src, normalization, spec).map_err(|e| record_error(e, i))?;
            let delta = edit_delta(&edited, &src)?;
            if delta.iter().all(|x| *x == 0.0) {
                return Ok(None);
            }
            alignment_score(&delta, dir).map(Some).map_err(|e| record_error(e, i))
        })
        .collect::<Result<Vec<Option<f64>>>>()?;

    let mut sums: Vec<(f64, usize)> = vec![(0.0, 0); bucketing.position_buckets];
    let mut skipped = 0;
    for (r, c) in records.iter().zip(&cosines) {
        match c {
            Some(c) => {
                let b = bucketing.position_bucket(r.position);
                sums[b].0 += c;
                sums[b].1 += 1;
            }
            None => skipped += 1,
        }
    }
    let rows = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(bucket, (s, n))| ProfileRow {
            bucket,
            mean_cosine: s / n as f64,
            count: n,
        })
        .collect();
    Ok(AlignmentProfile { rows, skipped })
}

/// Edits one activation given in raw (unstandardized) space.
pub fn edit_record<F: VelocityField + ?Sized>(
    field: &F,
    site: Site,
    activation: &[f64],
    normalization: Option<&Normalization>,
    spec: &EditSpec,
) -> Result<Vec<f64>> {
    if spec.strength == 0.0 {
        spec.validate()?;
        return Ok(activation.to_vec());
    }
    match normalization {
        None => edit(field, activation, spec, site),
        Some(norm) => {
            let mut a = activation.to_vec();
            norm.standardize(site.layer, &mut a)?;
            let mut out = edit(field, &a, spec, site)?;
            norm.destandardize(site.layer, &mut out)?;
            Ok(out)
        }
    }
}

fn record_error(err: Error, index: usize) -> Error {
    match err {
        Error::Numeric { context, .. } => Error::Numeric {
            context: format!("record {index}: {context}"),
            index,
        },
        Error::Degenerate(m) => Error::Degenerate(format!("record {index}: {m}")),
        other => other,
    }
}

/// Serializes directions as consecutive `UADR1` entries:
/// `magic, layer u32, dim u32, f32[dim]`.
pub fn directions_to_bytes(set: &DirectionSet) -> Vec<u8> {
    let mut out = Vec::new();
    for (layer, dir) in &set.directions {
        out.extend_from_slice(DIRECTION_MAGIC);
        out.extend_from_slice(&layer.to_le_bytes());
        out.extend_from_slice(&(dir.len() as u32).to_le_bytes());
        for x in dir {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    out
}

pub fn directions_from_bytes(bytes: &[u8]) -> Result<Vec<(u32, Vec<f32>)>> {
    let mut r = ByteReader::new(bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let at = r.pos;
        if r.take(5, "direction magic")? != DIRECTION_MAGIC {
            return Err(Error::Format {
                offset: at as u64,
                message: "bad magic, expected \"UADR1\"".into(),
            });
        }
        let layer = r.u32("direction layer")?;
        let dim = r.u32("direction dim")? as usize;
        out.push((layer, r.f32s(dim, "direction payload")?));
    }
    Ok(out)
}

pub fn write_directions(set: &DirectionSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, directions_to_bytes(set))?;
    Ok(())
}

pub fn read_directions(path: impl AsRef<Path>) -> Result<Vec<(u32, Vec<f32>)>> {
    directions_from_bytes(&fs::read(path)?)
}
