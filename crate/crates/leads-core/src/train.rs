//! Loss terms, per-tuple query simulation, and the Adam training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::Cell;
use std::rc::Rc;

use crate::entmax;
use crate::error::{Error, Result};
use crate::model::{GeneralModel, ALPHA_MAX, ALPHA_MIN};
use crate::query::{encode_query, Literal, Predicate, PrimitiveQuery};
use crate::schema::{AttrKind, Schema, Table};
use crate::tensor::{softplus, Graph, NodeId, Tensor};

/// Optimization hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Balance-loss coefficient λ1.
    pub lambda1: f64,
    /// Sparsity-loss coefficient λ2.
    pub lambda2: f64,
    /// Max predicates per simulated training query.
    pub max_col: usize,
    pub seed: u64,
    pub alpha_learnable: bool,
    /// Held-out fraction split off before training.
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 1024,
            epochs: 20,
            lambda1: 1e-3,
            lambda2: 1e-3,
            max_col: 3,
            seed: 42,
            alpha_learnable: true,
            valid_fraction: 0.1,
        }
    }
}

/// Loss components for one batch or epoch. `total` is always the exact
/// combination `logloss + λ1·balance + λ2·sparsity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub logloss: f64,
    pub balance: f64,
    pub sparsity: f64,
    pub total: f64,
    pub mean_active_experts: f64,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Entropy of the epoch's aggregate expert-usage distribution.
    pub usage_entropy: f64,
}

/// Mean binary cross-entropy of logits, in the stable softplus form
/// (`softplus(-z)` for positives, `softplus(z)` for negatives).
pub fn logloss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(if y == 1 { -z } else { z }))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Squared coefficient of variation of the per-expert gating mass
/// Φ_j = Σ_i w̃_ij (population variance). Zero iff the mass is uniform.
pub fn balance_loss(gating: &Tensor) -> Result<f64> {
    let k = gating.cols();
    if k == 0 {
        return Err(Error::InvalidArgument("no experts".into()));
    }
    let phi = gating.col_sum();
    let mean = phi.sum_all() / k as f64;
    let var = phi
        .data()
        .iter()
        .map(|&p| (p - mean) * (p - mean))
        .sum::<f64>()
        / k as f64;
    Ok(var / (mean * mean))
}

/// −mean‖w̃_i‖²: −1 at one-hot rows, −1/K at uniform rows.
pub fn sparsity_loss(gating: &Tensor) -> f64 {
    let n = gating.rows();
    let sum: f64 = gating.data().iter().map(|&v| v * v).sum();
    -(sum / n as f64)
}

/// Deterministic train/validation split by seeded shuffle.
pub fn split_indices(n: usize, valid_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_valid = ((n as f64) * valid_fraction).round() as usize;
    let valid = order.split_off(n.saturating_sub(n_valid));
    (order, valid)
}

/// Build an equality query from `max_col`-bounded random attributes of a
/// tuple; the tuple always satisfies its own query.
pub fn simulate_query_for_tuple(
    row: &[f64],
    schema: &Schema,
    rng: &mut impl Rng,
    max_col: usize,
) -> PrimitiveQuery {
    let m_attrs = schema.len();
    let m = rng.random_range(1..=max_col.max(1).min(m_attrs));
    let chosen = rand::seq::index::sample(rng, m_attrs, m);
    let predicates = chosen
        .iter()
        .map(|j| {
            let attr = &schema.attrs[j];
            let literal = match attr.kind {
                AttrKind::Categorical => Literal::Str(attr.domain[row[j] as usize].clone()),
                AttrKind::Numerical => Literal::Num {
                    text: format!("{}", row[j]),
                    value: row[j],
                },
            };
            Predicate {
                attr_index: j,
                attr_name: attr.name.clone(),
                literal,
            }
        })
        .collect();
    PrimitiveQuery::from_predicates(predicates).expect("sampled attributes are distinct")
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    alpha_m: f64,
    alpha_v: f64,
}

impl Adam {
    fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            alpha_m: 0.0,
            alpha_v: 0.0,
        }
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, idx: usize, param: &mut Tensor, grad: &Tensor) {
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let m = &mut self.m[idx];
        let v = &mut self.v[idx];
        for ((p, &g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    fn update_alpha(&mut self, alpha: &mut f64, grad: f64) {
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        self.alpha_m = self.beta1 * self.alpha_m + (1.0 - self.beta1) * grad;
        self.alpha_v = self.beta2 * self.alpha_v + (1.0 - self.beta2) * grad * grad;
        let mhat = self.alpha_m / bc1;
        let vhat = self.alpha_v / bc2;
        *alpha = (*alpha - self.lr * mhat / (vhat.sqrt() + self.eps)).clamp(ALPHA_MIN, ALPHA_MAX);
    }
}

struct BatchOutcome {
    n: usize,
    loss: LossBreakdown,
    sum_active: usize,
    phi: Vec<f64>,
}

/// Node handles for the per-batch graph, in [`GeneralModel::params`] order.
struct GraphParams {
    nodes: Vec<NodeId>,
    data: Vec<Option<NodeId>>,
    numeric: Vec<Option<NodeId>>,
    query: Vec<NodeId>,
    experts: Vec<[NodeId; 4]>,
    gating: [NodeId; 4],
}

fn register_params(g: &mut Graph, model: &GeneralModel) -> GraphParams {
    let mut nodes = Vec::new();
    let mut reg = |g: &mut Graph, t: &Tensor| -> NodeId {
        let id = g.param(t.clone());
        nodes.push(id);
        id
    };
    let data: Vec<Option<NodeId>> = model
        .embeddings
        .data
        .iter()
        .map(|t| t.as_ref().map(|t| reg(g, t)))
        .collect();
    let numeric: Vec<Option<NodeId>> = model
        .embeddings
        .numeric
        .iter()
        .map(|t| t.as_ref().map(|t| reg(g, t)))
        .collect();
    let query: Vec<NodeId> = model.embeddings.query.iter().map(|t| reg(g, t)).collect();
    let experts: Vec<[NodeId; 4]> = model
        .experts
        .iter()
        .map(|e| [reg(g, &e.w1), reg(g, &e.b1), reg(g, &e.w2), reg(g, &e.b2)])
        .collect();
    let gating = [
        reg(g, &model.gating.w1),
        reg(g, &model.gating.b1),
        reg(g, &model.gating.w2),
        reg(g, &model.gating.b2),
    ];
    GraphParams {
        nodes,
        data,
        numeric,
        query,
        experts,
        gating,
    }
}

/// Forward pass of the whole objective for one batch. Returns the loss
/// node plus the pieces needed for bookkeeping.
struct BatchGraph {
    total: NodeId,
    logloss: NodeId,
    balance: NodeId,
    sparsity: NodeId,
    sum_active: usize,
    phi: Vec<f64>,
    alpha_grad: Rc<Cell<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn build_batch_graph(
    g: &mut Graph,
    params: &GraphParams,
    model: &GeneralModel,
    table: &Table,
    batch_rows: &[usize],
    query_ids: &[Vec<usize>],
    lambda1: f64,
    lambda2: f64,
) -> Result<BatchGraph> {
    let n = batch_rows.len();
    let m = model.schema.len();
    let k = model.config.k;
    let alpha = model.gating.alpha;
    let alpha_learnable = model.gating.alpha_learnable;

    // x̂ blocks per attribute.
    let mut x_parts = Vec::with_capacity(m);
    for (j, attr) in model.schema.attrs.iter().enumerate() {
        match attr.kind {
            AttrKind::Categorical => {
                let ids: Vec<usize> = batch_rows
                    .iter()
                    .map(|&r| (table.row(r)[j] as usize).min(attr.cardinality()))
                    .collect();
                x_parts.push(g.gather_rows(params.data[j].unwrap(), &ids)?);
            }
            AttrKind::Numerical => {
                let col: Vec<f64> = batch_rows
                    .iter()
                    .map(|&r| attr.standardize(table.row(r)[j]))
                    .collect();
                let col = g.constant(Tensor::from_vec(n, 1, col)?);
                x_parts.push(g.matmul(col, params.numeric[j].unwrap())?);
            }
        }
    }
    let xhat = g.concat(&x_parts)?;

    // q̃ blocks per attribute.
    let mut q_parts = Vec::with_capacity(m);
    for j in 0..m {
        let ids: Vec<usize> = query_ids.iter().map(|enc| enc[j]).collect();
        q_parts.push(g.gather_rows(params.query[j], &ids)?);
    }
    let qtilde = g.concat(&q_parts)?;

    // Gating scores then α-entmax row-wise (custom gradient).
    let [gw1, gb1, gw2, gb2] = params.gating;
    let gz = g.matmul(qtilde, gw1)?;
    let gz = g.add_bias(gz, gb1)?;
    let gz = g.relu(gz);
    let scores = g.matmul(gz, gw2)?;
    let scores = g.add_bias(scores, gb2)?;

    let mut wtilde_data = Vec::with_capacity(n * k);
    let mut sum_active = 0usize;
    {
        let sv = g.value(scores);
        for i in 0..n {
            let p = entmax::entmax(sv.row(i), alpha)?;
            sum_active += p.iter().filter(|&&v| v > 0.0).count();
            wtilde_data.extend_from_slice(&p);
        }
    }
    let wtilde_value = Tensor::from_vec(n, k, wtilde_data)?;
    let alpha_grad = Rc::new(Cell::new(0.0));
    let alpha_grad_hook = Rc::clone(&alpha_grad);
    let wtilde = g.custom(
        &[scores],
        wtilde_value,
        Box::new(move |up, parents, out| {
            let scores = parents[0];
            let n = out.rows();
            let k = out.cols();
            let mut grad = Tensor::zeros(n, k);
            for i in 0..n {
                let row_grad = entmax::vjp(out.row(i), alpha, up.row(i));
                grad.data_mut()[i * k..(i + 1) * k].copy_from_slice(&row_grad);
                if alpha_learnable {
                    if let Ok(da) = entmax::alpha_grad_fd(scores.row(i), alpha, up.row(i), 1e-4) {
                        alpha_grad_hook.set(alpha_grad_hook.get() + da);
                    }
                }
            }
            vec![grad]
        }),
    );

    // Expert logits, one column each.
    let mut f_cols = Vec::with_capacity(k);
    for e in &params.experts {
        let [w1, b1, w2, b2] = *e;
        let h = g.matmul(xhat, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h);
        let z = g.matmul(h, w2)?;
        let z = g.add_bias(z, b2)?;
        f_cols.push(z);
    }
    let f = g.concat(&f_cols)?;

    let yhat = g.weighted_sum(wtilde, f)?;
    let labels: Vec<f64> = batch_rows
        .iter()
        .map(|&r| f64::from(table.label(r).unwrap_or(0)))
        .collect();
    let l_log = g.logistic_loss(yhat, &labels)?;

    // cv²(Φ) = K·Σφ² / (Σφ)² − 1
    let phi = g.col_sum(wtilde);
    let phi_vec = g.value(phi).data().to_vec();
    let s1 = g.sum(phi);
    let phi_sq = g.mul(phi, phi)?;
    let s2 = g.sum(phi_sq);
    let s2k = g.scale(s2, k as f64);
    let s1sq = g.mul(s1, s1)?;
    let ratio = g.div(s2k, s1sq)?;
    let l_baln = g.add_const(ratio, -1.0);

    let w_sq = g.mul(wtilde, wtilde)?;
    let w_sq_sum = g.sum(w_sq);
    let l_sprs = g.scale(w_sq_sum, -1.0 / n as f64);

    let baln_scaled = g.scale(l_baln, lambda1);
    let sprs_scaled = g.scale(l_sprs, lambda2);
    let partial = g.add(l_log, baln_scaled)?;
    let total = g.add(partial, sprs_scaled)?;

    Ok(BatchGraph {
        total,
        logloss: l_log,
        balance: l_baln,
        sparsity: l_sprs,
        sum_active,
        phi: phi_vec,
        alpha_grad,
    })
}

fn train_step(
    model: &mut GeneralModel,
    table: &Table,
    batch_rows: &[usize],
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    step: usize,
) -> Result<BatchOutcome> {
    // Fresh simulated query per tuple, every epoch.
    let mut query_ids = Vec::with_capacity(batch_rows.len());
    for &r in batch_rows {
        let q = simulate_query_for_tuple(table.row(r), &model.schema, rng, cfg.max_col);
        query_ids.push(encode_query(&q, &model.schema)?.ids);
    }

    let mut g = Graph::new();
    let params = register_params(&mut g, model);
    let built = build_batch_graph(
        &mut g,
        &params,
        model,
        table,
        batch_rows,
        &query_ids,
        cfg.lambda1,
        cfg.lambda2,
    )?;

    let loss = LossBreakdown {
        logloss: g.value(built.logloss).item(),
        balance: g.value(built.balance).item(),
        sparsity: g.value(built.sparsity).item(),
        total: g.value(built.total).item(),
        mean_active_experts: built.sum_active as f64 / batch_rows.len() as f64,
    };
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, step });
    }

    let mut grads = g.backward(built.total)?;
    adam.begin_step();
    {
        let mut slots = model.params_mut();
        for (idx, (slot, &node)) in slots.iter_mut().zip(&params.nodes).enumerate() {
            let grad = grads.take(node, slot.shape());
            adam.update(idx, slot, &grad);
        }
    }
    if model.gating.alpha_learnable {
        adam.update_alpha(&mut model.gating.alpha, built.alpha_grad.get());
    }

    Ok(BatchOutcome {
        n: batch_rows.len(),
        loss,
        sum_active: built.sum_active,
        phi: built.phi,
    })
}

/// Train the model in place. Rows are split 90/10 (seeded) and only the
/// training side is optimized; each epoch reshuffles and re-simulates one
/// query per tuple. Returns the per-epoch history.
pub fn train(model: &mut GeneralModel, table: &Table, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    let labels = table
        .labels()
        .ok_or_else(|| Error::InvalidArgument("table has no label column".into()))?;
    if !labels.contains(&1) || !labels.contains(&0) {
        return Err(Error::SingleClass);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    model.gating.alpha_learnable = cfg.alpha_learnable;

    let (train_rows, _valid) = split_indices(table.n_rows(), cfg.valid_fraction, cfg.seed);
    if train_rows.is_empty() {
        return Err(Error::InvalidArgument("no training rows after split".into()));
    }

    let shapes: Vec<(usize, usize)> = model.params().iter().map(|t| t.shape()).collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_rows;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut n_total = 0usize;
        let mut agg = [0.0f64; 4]; // logloss, balance, sparsity, total
        let mut active_total = 0usize;
        let mut usage = vec![0.0f64; model.config.k];

        let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(|c| c.to_vec()).collect();
        for (step, batch) in batches.iter().enumerate() {
            let out = train_step(model, table, batch, cfg, &mut adam, &mut rng, epoch, step)?;
            let w = out.n as f64;
            agg[0] += out.loss.logloss * w;
            agg[1] += out.loss.balance * w;
            agg[2] += out.loss.sparsity * w;
            agg[3] += out.loss.total * w;
            n_total += out.n;
            active_total += out.sum_active;
            for (u, p) in usage.iter_mut().zip(&out.phi) {
                *u += p;
            }
        }

        let nf = n_total as f64;
        let usage_sum: f64 = usage.iter().sum();
        let usage_entropy = usage
            .iter()
            .map(|&u| {
                let p = u / usage_sum;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum();
        history.push(EpochStats {
            epoch,
            loss: LossBreakdown {
                logloss: agg[0] / nf,
                balance: agg[1] / nf,
                sparsity: agg[2] / nf,
                total: agg[3] / nf,
                mean_active_experts: active_total as f64 / nf,
            },
            usage_entropy,
        });
    }
    Ok(history)
}

/// History CSV: `epoch,logloss,balance,sparsity,total,mean_active_experts`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,logloss,balance,sparsity,total,mean_active_experts\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch,
            h.loss.logloss,
            h.loss.balance,
            h.loss.sparsity,
            h.loss.total,
            h.loss.mean_active_experts
        ));
    }
    out
}
