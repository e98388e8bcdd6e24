//! The general model: embedding tables, K expert MLPs, the SQL-aware
//! gating network, and dynamic slicing into per-query sub-models.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::entmax;
use crate::error::{Error, Result};
use crate::query::QueryEncoding;
use crate::schema::{AttrKind, AttributeSpec, BinningRule, Schema};
use crate::tensor::{sigmoid, Tensor};

pub const ALPHA_MIN: f64 = 1.0 + 1e-3;
pub const ALPHA_MAX: f64 = 4.0;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of experts.
    pub k: usize,
    /// Embedding width.
    pub n_e: usize,
    /// Gating hidden width.
    pub n_z: usize,
    /// Expert hidden width.
    pub h_expert: usize,
    /// Initial entmax sparsity parameter.
    pub alpha0: f64,
    pub alpha_learnable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 16,
            n_e: 10,
            n_z: 32,
            h_expert: 16,
            alpha0: 2.5,
            alpha_learnable: true,
        }
    }
}

/// Per-attribute embedding tables.
///
/// `data` rows cover the domain plus one shared OOV/default row;
/// `query` rows cover the domain (or bins) plus the default token.
/// Numeric data-side attributes instead scale a learnable vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub data: Vec<Option<Tensor>>,
    pub numeric: Vec<Option<Tensor>>,
    pub query: Vec<Tensor>,
}

/// Two-layer MLP expert emitting one logit.
#[derive(Debug, Clone)]
pub struct Expert {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Two-layer MLP mapping the encoded query to K expert scores.
#[derive(Debug, Clone)]
pub struct GatingNetwork {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub alpha: f64,
    pub alpha_learnable: bool,
}

/// The trained (or initialized) K-expert general model.
#[derive(Debug, Clone)]
pub struct GeneralModel {
    pub schema: Schema,
    pub config: ModelConfig,
    pub embeddings: EmbeddingTables,
    pub experts: Vec<Expert>,
    pub gating: GatingNetwork,
}

/// Experts with nonzero gating weight for one query, borrowing the
/// general model's parameters.
#[derive(Debug, Clone)]
pub struct SlicedModel {
    pub model: Arc<GeneralModel>,
    pub expert_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl GeneralModel {
    /// Random initialization against a fitted schema (every numeric
    /// attribute must carry a binning rule to size its query table).
    pub fn new(schema: Schema, config: ModelConfig, seed: u64) -> Result<GeneralModel> {
        if config.k < 1 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !(1.0..=ALPHA_MAX).contains(&config.alpha0) {
            return Err(Error::InvalidArgument(format!(
                "alpha0 {} outside [1, {ALPHA_MAX}]",
                config.alpha0
            )));
        }
        for a in &schema.attrs {
            if a.kind == AttrKind::Numerical && a.binning.is_none() {
                return Err(Error::MissingBinning(a.name.clone()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_e = config.n_e;
        let m = schema.len();

        let mut data = Vec::with_capacity(m);
        let mut numeric = Vec::with_capacity(m);
        let mut query = Vec::with_capacity(m);
        for a in &schema.attrs {
            match a.kind {
                AttrKind::Categorical => {
                    data.push(Some(Tensor::gaussian(a.cardinality() + 1, n_e, 0.01, &mut rng)));
                    numeric.push(None);
                }
                AttrKind::Numerical => {
                    data.push(None);
                    numeric.push(Some(Tensor::gaussian(1, n_e, 0.01, &mut rng)));
                }
            }
            query.push(Tensor::gaussian(a.query_vocab(), n_e, 0.01, &mut rng));
        }

        let in_dim = m * n_e;
        let experts = (0..config.k)
            .map(|_| Expert {
                w1: Tensor::glorot(in_dim, config.h_expert, &mut rng),
                b1: Tensor::zeros(1, config.h_expert),
                w2: Tensor::glorot(config.h_expert, 1, &mut rng),
                b2: Tensor::zeros(1, 1),
            })
            .collect();
        let gating = GatingNetwork {
            w1: Tensor::glorot(in_dim, config.n_z, &mut rng),
            b1: Tensor::zeros(1, config.n_z),
            w2: Tensor::glorot(config.n_z, config.k, &mut rng),
            b2: Tensor::zeros(1, config.k),
            alpha: config.alpha0.max(ALPHA_MIN),
            alpha_learnable: config.alpha_learnable,
        };

        Ok(GeneralModel {
            schema,
            config,
            embeddings: EmbeddingTables {
                data,
                numeric,
                query,
            },
            experts,
            gating,
        })
    }

    /// All trainable tensors in a stable order (embeddings, experts,
    /// gating). The same order is used by the optimizer and the file
    /// format.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        out.extend(self.embeddings.data.iter().flatten());
        out.extend(self.embeddings.numeric.iter().flatten());
        out.extend(self.embeddings.query.iter());
        for e in &self.experts {
            out.extend([&e.w1, &e.b1, &e.w2, &e.b2]);
        }
        out.extend([
            &self.gating.w1,
            &self.gating.b1,
            &self.gating.w2,
            &self.gating.b2,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.embeddings.data.iter_mut().flatten());
        out.extend(self.embeddings.numeric.iter_mut().flatten());
        out.extend(self.embeddings.query.iter_mut());
        for e in &mut self.experts {
            out.push(&mut e.w1);
            out.push(&mut e.b1);
            out.push(&mut e.w2);
            out.push(&mut e.b2);
        }
        out.push(&mut self.gating.w1);
        out.push(&mut self.gating.b1);
        out.push(&mut self.gating.w2);
        out.push(&mut self.gating.b2);
        out
    }

    /// Per-attribute id for a categorical cell, clamping unseen ids to the
    /// shared OOV/default row.
    fn data_id(attr: &AttributeSpec, raw: f64) -> usize {
        (raw as usize).min(attr.cardinality())
    }

    /// Build the M·n_e input matrix for a flat buffer of rows: embedding
    /// lookup per categorical cell, `standardized(x_j) * ê_j` per numeric
    /// cell.
    pub fn preprocess_rows(&self, values: &[f64], n_rows: usize) -> Result<Tensor> {
        let m = self.schema.len();
        if values.len() != n_rows * m {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} rows x {} attrs",
                values.len(),
                n_rows,
                m
            )));
        }
        let n_e = self.config.n_e;
        let mut out = Tensor::zeros(n_rows, m * n_e);
        for (j, attr) in self.schema.attrs.iter().enumerate() {
            match attr.kind {
                AttrKind::Categorical => {
                    let table = self.embeddings.data[j].as_ref().expect("categorical table");
                    for i in 0..n_rows {
                        let id = Self::data_id(attr, values[i * m + j]);
                        let src = table.row(id);
                        let dst_start = i * m * n_e + j * n_e;
                        out.data_mut()[dst_start..dst_start + n_e].copy_from_slice(src);
                    }
                }
                AttrKind::Numerical => {
                    let vec = self.embeddings.numeric[j].as_ref().expect("numeric vector");
                    for i in 0..n_rows {
                        let z = attr.standardize(values[i * m + j]);
                        let dst_start = i * m * n_e + j * n_e;
                        for (d, &e) in out.data_mut()[dst_start..dst_start + n_e]
                            .iter_mut()
                            .zip(vec.data())
                        {
                            *d = z * e;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Concatenated query-table rows in schema order (1 x M·n_e).
    pub fn query_embedding(&self, q: &QueryEncoding) -> Result<Tensor> {
        let m = self.schema.len();
        if q.ids.len() != m {
            return Err(Error::InvalidArgument(format!(
                "encoding length {} for schema width {}",
                q.ids.len(),
                m
            )));
        }
        let n_e = self.config.n_e;
        let mut out = Tensor::zeros(1, m * n_e);
        for (j, &id) in q.ids.iter().enumerate() {
            let table = &self.embeddings.query[j];
            if id >= table.rows() {
                return Err(Error::InvalidArgument(format!(
                    "query id {} out of {} rows for attribute '{}'",
                    id,
                    table.rows(),
                    self.schema.attrs[j].name
                )));
            }
            out.data_mut()[j * n_e..(j + 1) * n_e].copy_from_slice(table.row(id));
        }
        Ok(out)
    }

    /// Raw gating scores `W2·ReLU(W1·q̃ + b1) + b2`, one row per input row.
    pub fn gate(&self, qtilde: &Tensor) -> Result<Tensor> {
        let z = qtilde
            .matmul(&self.gating.w1)?
            .add_bias(&self.gating.b1)?
            .relu();
        z.matmul(&self.gating.w2)?.add_bias(&self.gating.b2)
    }

    /// Recalibrated gating weights w̃ = entmax(gate(q̃), α) for one query.
    pub fn gating_weights(&self, q: &QueryEncoding) -> Result<Vec<f64>> {
        let qtilde = self.query_embedding(q)?;
        let w = self.gate(&qtilde)?;
        entmax::entmax(w.data(), self.gating.alpha)
    }

    /// Logits of the chosen experts: one column per expert index.
    ///
    /// Fused row-major kernel: weights are transposed once per call so each
    /// hidden unit is a contiguous dot product, no intermediates allocated.
    pub fn expert_logits(&self, xhat: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let n = xhat.rows();
        let in_dim = xhat.cols();
        let n_h = self.config.h_expert;
        let mut out = Tensor::zeros(n, indices.len());
        let mut w1t = vec![0.0; in_dim * n_h];
        for (c, &k) in indices.iter().enumerate() {
            let e = &self.experts[k];
            if e.w1.shape() != (in_dim, n_h) {
                return Err(Error::ShapeMismatch {
                    op: "expert_logits",
                    left: (in_dim, n_h),
                    right: e.w1.shape(),
                });
            }
            for r in 0..in_dim {
                for h in 0..n_h {
                    w1t[h * in_dim + r] = e.w1.at(r, h);
                }
            }
            let b1 = e.b1.data();
            let w2 = e.w2.data();
            let b2 = e.b2.data()[0];
            for i in 0..n {
                let x = xhat.row(i);
                let mut z = b2;
                for h in 0..n_h {
                    let w_row = &w1t[h * in_dim..(h + 1) * in_dim];
                    let acc = b1[h] + dot(x, w_row);
                    if acc > 0.0 {
                        z += acc * w2[h];
                    }
                }
                out.data_mut()[i * indices.len() + c] = z;
            }
        }
        Ok(out)
    }

    /// Full-model forward for a batch of rows under one query: evaluates
    /// every expert and takes the w̃-weighted sum. Returns pre-sigmoid
    /// logits.
    pub fn forward_general_rows(
        &self,
        values: &[f64],
        n_rows: usize,
        q: &QueryEncoding,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let weights = self.gating_weights(q)?;
        let xhat = self.preprocess_rows(values, n_rows)?;
        let all: Vec<usize> = (0..self.config.k).collect();
        let f = self.expert_logits(&xhat, &all)?;
        let mut logits = vec![0.0; n_rows];
        for i in 0..n_rows {
            let mut acc = 0.0;
            for (k, &w) in weights.iter().enumerate() {
                acc += w * f.at(i, k);
            }
            logits[i] = acc;
        }
        Ok((logits, weights))
    }

    /// Single-tuple convenience wrapper.
    pub fn forward_general(&self, row: &[f64], q: &QueryEncoding) -> Result<(f64, Vec<f64>)> {
        let (logits, w) = self.forward_general_rows(row, 1, q)?;
        Ok((logits[0], w))
    }

    /// Static multiply-add count. Affine in->out costs `2*in*out + out`;
    /// per-tuple expert cost scales with the number of active experts,
    /// gating is paid once per query.
    pub fn count_flops(&self, active_experts: usize) -> FlopsReport {
        let affine = |i: usize, o: usize| (2 * i * o + o) as u64;
        let in_dim = self.schema.len() * self.config.n_e;
        let expert = affine(in_dim, self.config.h_expert) + affine(self.config.h_expert, 1);
        FlopsReport {
            per_tuple_expert: active_experts as u64 * expert,
            per_query_gating: affine(in_dim, self.config.n_z)
                + affine(self.config.n_z, self.config.k),
        }
    }

    pub fn check_schema(&self, serving: &Schema) -> Result<()> {
        if self.schema.structural_hash() != serving.structural_hash() {
            return Err(Error::SchemaMismatch(format!(
                "model was trained against a different schema (hash {:#x} vs {:#x})",
                self.schema.structural_hash(),
                serving.structural_hash()
            )));
        }
        Ok(())
    }
}

/// Dot product with eight independent accumulators so the float adds
/// pipeline instead of serializing. Summation order is fixed, keeping
/// results deterministic across call sites.
fn dot(x: &[f64], w: &[f64]) -> f64 {
    let mut sums = [0.0f64; 8];
    let mut xc = x.chunks_exact(8);
    let mut wc = w.chunks_exact(8);
    for (xs, ws) in (&mut xc).zip(&mut wc) {
        for l in 0..8 {
            sums[l] += xs[l] * ws[l];
        }
    }
    let mut tail = 0.0;
    for (&a, &b) in xc.remainder().iter().zip(wc.remainder()) {
        tail += a * b;
    }
    ((sums[0] + sums[1]) + (sums[2] + sums[3])) + ((sums[4] + sums[5]) + (sums[6] + sums[7])) + tail
}

/// Static FLOP counts; expert work is per tuple, gating per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsReport {
    pub per_tuple_expert: u64,
    pub per_query_gating: u64,
}

/// Derive the sliced model for a query: gate, recalibrate with α-entmax,
/// and keep the strictly positive entries.
pub fn slice(model: &Arc<GeneralModel>, q: &QueryEncoding) -> Result<SlicedModel> {
    let weights = model.gating_weights(q)?;
    let mut expert_indices = Vec::new();
    let mut kept = Vec::new();
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            expert_indices.push(k);
            kept.push(w);
        }
    }
    debug_assert!(!expert_indices.is_empty());
    Ok(SlicedModel {
        model: Arc::clone(model),
        expert_indices,
        weights: kept,
    })
}

impl SlicedModel {
    pub fn n_active(&self) -> usize {
        self.expert_indices.len()
    }

    /// Pre-sigmoid logits, evaluating only the active experts.
    pub fn forward_rows(&self, values: &[f64], n_rows: usize) -> Result<Vec<f64>> {
        let xhat = self.model.preprocess_rows(values, n_rows)?;
        self.logits_from_xhat(&xhat)
    }

    /// Same, starting from an already preprocessed input matrix.
    pub fn logits_from_xhat(&self, xhat: &Tensor) -> Result<Vec<f64>> {
        let f = self.model.expert_logits(xhat, &self.expert_indices)?;
        let n_rows = xhat.rows();
        let mut logits = vec![0.0; n_rows];
        for i in 0..n_rows {
            let mut acc = 0.0;
            for (c, &w) in self.weights.iter().enumerate() {
                acc += w * f.at(i, c);
            }
            logits[i] = acc;
        }
        Ok(logits)
    }

    /// Predicted probabilities.
    pub fn predict_rows(&self, values: &[f64], n_rows: usize) -> Result<Vec<f64>> {
        Ok(self
            .forward_rows(values, n_rows)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Serialization. Versioned little-endian binary: magic `LEADS1`, format
// version, structural schema hash, the fitted schema, hyper-parameters,
// then every tensor (rows, cols, row-major f64 payload) in params order.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 6] = b"LEADS1";
const FORMAT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn string(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.0.write_all(s.as_bytes())?;
        Ok(())
    }
    fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.u32(t.rows() as u32)?;
        self.u32(t.cols() as u32)?;
        for &v in t.data() {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|_| Error::ModelFormat("truncated file".into()))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(Error::ModelFormat("implausible string length".into()));
        }
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| Error::ModelFormat("invalid utf-8 string".into()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows * cols > 1 << 28 {
            return Err(Error::ModelFormat("implausible tensor size".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Tensor::from_vec(rows, cols, data).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

fn write_schema<W: Write>(w: &mut Writer<W>, schema: &Schema) -> Result<()> {
    w.string(&schema.label)?;
    w.u32(schema.len() as u32)?;
    for a in &schema.attrs {
        w.string(&a.name)?;
        w.u8(match a.kind {
            AttrKind::Categorical => 0,
            AttrKind::Numerical => 1,
        })?;
        w.u32(a.domain.len() as u32)?;
        for t in &a.domain {
            w.string(t)?;
        }
        w.f64(a.value_range.0)?;
        w.f64(a.value_range.1)?;
        w.f64(a.mean)?;
        w.f64(a.std)?;
        match &a.binning {
            None => w.u8(0)?,
            Some(rule) => {
                w.u8(1)?;
                w.u32(rule.cut_points().len() as u32)?;
                for &c in rule.cut_points() {
                    w.f64(c)?;
                }
            }
        }
    }
    Ok(())
}

fn read_schema<R: Read>(r: &mut Reader<R>) -> Result<Schema> {
    let label = r.string()?;
    let m = r.u32()? as usize;
    let mut attrs = Vec::with_capacity(m);
    for _ in 0..m {
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => AttrKind::Categorical,
            1 => AttrKind::Numerical,
            other => return Err(Error::ModelFormat(format!("bad attribute kind {other}"))),
        };
        let n_tokens = r.u32()? as usize;
        let mut domain = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            domain.push(r.string()?);
        }
        let range = (r.f64()?, r.f64()?);
        let mean = r.f64()?;
        let std = r.f64()?;
        let binning = match r.u8()? {
            0 => None,
            1 => {
                let n_cuts = r.u32()? as usize;
                let mut cuts = Vec::with_capacity(n_cuts);
                for _ in 0..n_cuts {
                    cuts.push(r.f64()?);
                }
                Some(BinningRule::new(cuts).map_err(|e| Error::ModelFormat(e.to_string()))?)
            }
            other => return Err(Error::ModelFormat(format!("bad binning flag {other}"))),
        };
        let mut spec = match kind {
            AttrKind::Categorical => AttributeSpec::categorical(name, domain),
            AttrKind::Numerical => AttributeSpec::numerical(name, range),
        };
        spec.value_range = range;
        spec.mean = mean;
        spec.std = std;
        spec.binning = binning;
        attrs.push(spec);
    }
    Ok(Schema { attrs, label })
}

pub fn save_model<W: Write>(model: &GeneralModel, sink: W) -> Result<()> {
    let mut w = Writer(sink);
    w.0.write_all(MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u64(model.schema.structural_hash())?;
    write_schema(&mut w, &model.schema)?;
    w.u32(model.config.k as u32)?;
    w.u32(model.config.n_e as u32)?;
    w.u32(model.config.n_z as u32)?;
    w.u32(model.config.h_expert as u32)?;
    w.f64(model.config.alpha0)?;
    w.u8(model.config.alpha_learnable as u8)?;
    w.f64(model.gating.alpha)?;
    let params = model.params();
    w.u32(params.len() as u32)?;
    for t in params {
        w.tensor(t)?;
    }
    Ok(())
}

pub fn load_model<R: Read>(source: R) -> Result<GeneralModel> {
    let mut r = Reader(source);
    let magic = r.bytes(6)?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let stored_hash = r.u64()?;
    let schema = read_schema(&mut r)?;
    if schema.structural_hash() != stored_hash {
        return Err(Error::ModelFormat(
            "stored schema hash does not match embedded schema".into(),
        ));
    }
    let config = ModelConfig {
        k: r.u32()? as usize,
        n_e: r.u32()? as usize,
        n_z: r.u32()? as usize,
        h_expert: r.u32()? as usize,
        alpha0: r.f64()?,
        alpha_learnable: r.u8()? != 0,
    };
    let alpha = r.f64()?;

    let mut model = GeneralModel::new(schema, config, 0)?;
    model.gating.alpha = alpha;
    let n_tensors = r.u32()? as usize;
    {
        let mut slots = model.params_mut();
        if n_tensors != slots.len() {
            return Err(Error::ModelFormat(format!(
                "{} tensors in file, model needs {}",
                n_tensors,
                slots.len()
            )));
        }
        for slot in slots.iter_mut() {
            let t = r.tensor()?;
            if t.shape() != slot.shape() {
                return Err(Error::ModelFormat(format!(
                    "tensor shape {:?} does not match expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{encode_query, PrimitiveQuery};
    use rand::Rng;

    pub(crate) fn fitted_test_schema() -> Schema {
        let mut age = AttributeSpec::numerical("age", (18.0, 90.0));
        age.binning = Some(BinningRule::new(vec![30.0, 50.0]).unwrap());
        age.mean = 40.0;
        age.std = 12.0;
        let mut score = AttributeSpec::numerical("score", (0.0, 1.0));
        score.binning = Some(BinningRule::new(vec![0.5]).unwrap());
        score.mean = 0.5;
        score.std = 0.25;
        Schema {
            attrs: vec![
                AttributeSpec::categorical("gender", vec!["M".into(), "F".into()]),
                age,
                AttributeSpec::categorical("city", vec!["NYC".into(), "LA".into(), "SF".into()]),
                score,
            ],
            label: "label".into(),
        }
    }

    fn small_model(k: usize, seed: u64) -> GeneralModel {
        let config = ModelConfig {
            k,
            n_e: 4,
            n_z: 6,
            h_expert: 5,
            alpha0: 2.0,
            alpha_learnable: false,
        };
        GeneralModel::new(fitted_test_schema(), config, seed).unwrap()
    }

    fn random_row(rng: &mut impl Rng) -> Vec<f64> {
        vec![
            rng.random_range(0..2) as f64,
            rng.random_range(18.0..90.0),
            rng.random_range(0..3) as f64,
            rng.random_range(0.0..1.0),
        ]
    }

    #[test]
    fn numeric_embedding_is_linear_in_standardized_value() {
        let model = small_model(2, 3);
        // Rows identical except the numeric 'score'; compare x̂ slices.
        let attr = &model.schema.attrs[3];
        let v1 = attr.mean + attr.std; // standardized 1.0
        let v2 = attr.mean + 2.0 * attr.std; // standardized 2.0
        let r1 = vec![0.0, 40.0, 1.0, v1];
        let r2 = vec![0.0, 40.0, 1.0, v2];
        let x1 = model.preprocess_rows(&r1, 1).unwrap();
        let x2 = model.preprocess_rows(&r2, 1).unwrap();
        let n_e = model.config.n_e;
        for c in 3 * n_e..4 * n_e {
            assert!((x2.at(0, c) - 2.0 * x1.at(0, c)).abs() < 1e-12);
        }
        // standardized zero gives a zero block
        let r0 = vec![0.0, 40.0, 1.0, attr.mean];
        let x0 = model.preprocess_rows(&r0, 1).unwrap();
        for c in 3 * n_e..4 * n_e {
            assert_eq!(x0.at(0, c), 0.0);
        }
    }

    #[test]
    fn categorical_lookup_returns_table_row() {
        let model = small_model(2, 5);
        let row = vec![1.0, 40.0, 2.0, 0.5];
        let x = model.preprocess_rows(&row, 1).unwrap();
        let n_e = model.config.n_e;
        let table = model.embeddings.data[0].as_ref().unwrap();
        assert_eq!(&x.row(0)[0..n_e], table.row(1));
    }

    #[test]
    fn query_embedding_locality() {
        let model = small_model(2, 7);
        let s = &model.schema;
        let q1 = encode_query(&PrimitiveQuery::empty(), s).unwrap();
        let mut q2 = q1.clone();
        q2.ids[2] = 0; // city = NYC instead of default
        let e1 = model.query_embedding(&q1).unwrap();
        let e2 = model.query_embedding(&q2).unwrap();
        let n_e = model.config.n_e;
        assert_eq!(e1.cols(), s.len() * n_e);
        for c in 0..e1.cols() {
            let same = e1.at(0, c) == e2.at(0, c);
            let in_changed_slice = (2 * n_e..3 * n_e).contains(&c);
            assert_eq!(same, !in_changed_slice, "col {c}");
        }
    }

    #[test]
    fn gate_matches_direct_arithmetic() {
        let model = small_model(3, 11);
        let q = encode_query(&PrimitiveQuery::empty(), &model.schema).unwrap();
        let qt = model.query_embedding(&q).unwrap();
        let got = model.gate(&qt).unwrap();
        // independent dense recomputation
        let g = &model.gating;
        for k in 0..model.config.k {
            let mut z = vec![0.0; model.config.n_z];
            for (h, zh) in z.iter_mut().enumerate() {
                let mut acc = g.b1.at(0, h);
                for c in 0..qt.cols() {
                    acc += qt.at(0, c) * g.w1.at(c, h);
                }
                *zh = acc.max(0.0);
            }
            let mut w = g.b2.at(0, k);
            for (h, &zh) in z.iter().enumerate() {
                w += zh * g.w2.at(h, k);
            }
            assert!((got.at(0, k) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_forward_ignores_gating() {
        let model = small_model(1, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row = random_row(&mut rng);
        let q = encode_query(&PrimitiveQuery::empty(), &model.schema).unwrap();
        let (logit, w) = model.forward_general(&row, &q).unwrap();
        assert_eq!(w, vec![1.0]);
        let xhat = model.preprocess_rows(&row, 1).unwrap();
        let f = model.expert_logits(&xhat, &[0]).unwrap();
        assert_eq!(logit, f.at(0, 0));
    }

    #[test]
    fn sliced_equals_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..20 {
            let model = Arc::new(small_model(6, seed));
            let q = QueryEncoding {
                ids: vec![
                    rng.random_range(0..3),
                    rng.random_range(0..3),
                    rng.random_range(0..4),
                    rng.random_range(0..2),
                ],
            };
            let row = random_row(&mut rng);
            let (general, w) = model.forward_general(&row, &q).unwrap();
            let sliced = slice(&model, &q).unwrap();
            assert_eq!(sliced.n_active(), w.iter().filter(|&&v| v > 0.0).count());
            let got = sliced.forward_rows(&row, 1).unwrap()[0];
            assert!((general - got).abs() <= 1e-9);
        }
    }

    #[test]
    fn identical_encodings_slice_identically() {
        let model = Arc::new(small_model(4, 23));
        let q = QueryEncoding {
            ids: vec![0, 1, 2, 0],
        };
        let a = slice(&model, &q).unwrap();
        let b = slice(&model, &q.clone()).unwrap();
        assert_eq!(a.expert_indices, b.expert_indices);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn flops_hand_count() {
        // single affine 4 -> 2 is 2*4*2 + 2 = 18
        let model = small_model(2, 29);
        let in_dim = model.schema.len() * model.config.n_e;
        let expert = 2 * in_dim * model.config.h_expert
            + model.config.h_expert
            + 2 * model.config.h_expert
            + 1;
        let r = model.count_flops(1);
        assert_eq!(r.per_tuple_expert, expert as u64);
        // proportionality in the number of active experts
        assert_eq!(model.count_flops(2).per_tuple_expert, 2 * r.per_tuple_expert);
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let model = small_model(3, 31);
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        let loaded = load_model(buf.as_slice()).unwrap();
        assert_eq!(model.config, loaded.config);
        assert_eq!(model.gating.alpha, loaded.gating.alpha);
        let a = model.params();
        let b = loaded.params();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.shape(), y.shape());
            for (u, v) in x.data().iter().zip(y.data()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_is_clean_error() {
        let model = small_model(2, 37);
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        for cut in [3usize, 10, buf.len() / 2, buf.len() - 1] {
            let err = load_model(&buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::ModelFormat(_)), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn schema_mismatch_detected() {
        let model = small_model(2, 41);
        let mut other = fitted_test_schema();
        other.attrs[0].name = "sex".into();
        assert!(matches!(
            model.check_schema(&other),
            Err(Error::SchemaMismatch(_))
        ));
        assert!(model.check_schema(&fitted_test_schema()).is_ok());
    }

    #[test]
    fn bad_magic_rejected() {
        let err = load_model(&b"NOTLEADS-----"[..]).unwrap_err();
        assert!(matches!(err, Error::ModelFormat(_)));
    }
}
