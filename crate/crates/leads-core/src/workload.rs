//! Synthetic workload generation, effectiveness metrics, and the
//! base-vs-sliced comparison harness.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GeneralModel, ModelConfig};
use crate::query::{encode_query, parse_where, PrimitiveQuery};
use crate::schema::{AttrKind, AttributeSpec, Schema, Table};
use crate::store::{select_from_table, NumericMatch, RowBuffer};
use crate::tensor::sigmoid;
use crate::train::{simulate_query_for_tuple, train, TrainConfig};

/// A set of inference queries drawn from real tuples.
#[derive(Debug, Clone)]
pub struct Workload {
    pub queries: Vec<PrimitiveQuery>,
    pub seed: u64,
    pub max_col: usize,
}

/// Draw `n` queries: pick a tuple, pick 1..=max_col distinct attributes,
/// equate them to the tuple's values. Every query selects at least its
/// source tuple.
pub fn generate_workload(table: &Table, n: usize, max_col: usize, seed: u64) -> Result<Workload> {
    if table.n_rows() == 0 {
        return Err(Error::InvalidArgument("empty table".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(n);
    for _ in 0..n {
        let row = rng.random_range(0..table.n_rows());
        queries.push(simulate_query_for_tuple(
            table.row(row),
            &table.schema,
            &mut rng,
            max_col,
        ));
    }
    Ok(Workload {
        queries,
        seed,
        max_col,
    })
}

/// One WHERE clause per line.
pub fn workload_to_text(workload: &Workload) -> String {
    let mut out = String::new();
    for q in &workload.queries {
        out.push_str(&q.text());
        out.push('\n');
    }
    out
}

pub fn workload_from_text(text: &str, schema: &Schema) -> Result<Workload> {
    let mut queries = Vec::new();
    for line in text.lines() {
        queries.push(parse_where(line, schema)?);
    }
    Ok(Workload {
        queries,
        seed: 0,
        max_col: 0,
    })
}

/// ROC AUC as the Mann–Whitney statistic with tie-averaged ranks:
/// (concordant + 0.5·ties) / (P·N). `None` when a class is missing.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let p = labels.iter().filter(|&&y| y == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank over the tie group [i, j]
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Some(u / (p as f64 * n as f64))
}

/// What to do with queries whose selected rows are single-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UndefinedAucPolicy {
    /// Drop them from the mean and report the count.
    #[default]
    Exclude,
    /// Score them as 0.5.
    Half,
}

/// Per-workload effectiveness results.
#[derive(Debug, Clone)]
pub struct WorkloadReport {
    pub per_query: Vec<Option<f64>>,
    pub workload_auc: f64,
    pub worst_auc: f64,
    pub defined: usize,
    pub excluded: usize,
    pub mean_active_experts: f64,
    /// How many workload queries activate each expert.
    pub expert_activation: Vec<usize>,
}

/// Slice the model per query, score that query's rows from `eval_table`,
/// and aggregate AUC (Workload-AUC is the mean, Worst-AUC the min).
pub fn evaluate_on_workload(
    model: &Arc<GeneralModel>,
    workload: &Workload,
    eval_table: &Table,
    policy: UndefinedAucPolicy,
) -> Result<WorkloadReport> {
    if workload.queries.is_empty() {
        return Err(Error::InvalidArgument("empty workload".into()));
    }
    let labels = eval_table
        .labels()
        .ok_or_else(|| Error::InvalidArgument("eval table has no labels".into()))?;
    let mut per_query = Vec::with_capacity(workload.queries.len());
    let mut activation = vec![0usize; model.config.k];
    let mut active_sum = 0usize;
    let mut buf = RowBuffer::with_capacity(eval_table.n_rows(), eval_table.width());
    for q in &workload.queries {
        let enc = encode_query(q, &model.schema)?;
        let sliced = crate::model::slice(model, &enc)?;
        for &k in &sliced.expert_indices {
            activation[k] += 1;
        }
        active_sum += sliced.n_active();

        let n = select_from_table(eval_table, q, &model.schema, NumericMatch::BinEquality, &mut buf)?;
        if n == 0 {
            per_query.push(None);
            continue;
        }
        let scores = sliced.predict_rows(&buf.values, n)?;
        let ys: Vec<u8> = buf.indices.iter().map(|&i| labels[i]).collect();
        per_query.push(auc(&scores, &ys));
    }

    let effective: Vec<f64> = per_query
        .iter()
        .filter_map(|v| match (v, policy) {
            (Some(a), _) => Some(*a),
            (None, UndefinedAucPolicy::Half) => Some(0.5),
            (None, UndefinedAucPolicy::Exclude) => None,
        })
        .collect();
    if effective.is_empty() {
        return Err(Error::InvalidArgument(
            "every workload query had an undefined AUC".into(),
        ));
    }
    let workload_auc = effective.iter().sum::<f64>() / effective.len() as f64;
    let worst_auc = effective.iter().cloned().fold(f64::INFINITY, f64::min);
    let defined = per_query.iter().filter(|v| v.is_some()).count();
    Ok(WorkloadReport {
        excluded: per_query.len() - defined,
        per_query,
        workload_auc,
        worst_auc,
        defined,
        mean_active_experts: active_sum as f64 / workload.queries.len() as f64,
        expert_activation: activation,
    })
}

/// One synthetic attribute.
#[derive(Debug, Clone)]
pub struct SyntheticAttr {
    pub name: String,
    pub kind: AttrKind,
    /// Token count (categorical).
    pub cardinality: usize,
    /// Value range (numerical).
    pub range: (f64, f64),
}

impl SyntheticAttr {
    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        SyntheticAttr {
            name: name.into(),
            kind: AttrKind::Categorical,
            cardinality,
            range: (0.0, 0.0),
        }
    }

    pub fn numerical(name: impl Into<String>, range: (f64, f64)) -> Self {
        SyntheticAttr {
            name: name.into(),
            kind: AttrKind::Numerical,
            cardinality: 0,
            range,
        }
    }
}

/// A planted subgroup: rows matching all predicates get the logit offset
/// plus subgroup-specific feature weights. The extra weights flip or bend
/// feature effects inside the subgroup, which a single global model tends
/// to average away while query-gated experts can specialize.
#[derive(Debug, Clone, Default)]
pub struct SubgroupRule {
    /// (attribute name, token) equality predicates; categorical attrs only.
    pub predicates: Vec<(String, String)>,
    pub offset: f64,
    /// (attribute name, extra weight) applied to the feature score in-group.
    pub interaction: Vec<(String, f64)>,
    /// (attr, attr, weight) product terms active in-group; these are the
    /// patterns a single compact model struggles to fit across subgroups.
    pub pair_interaction: Vec<(String, String, f64)>,
}

/// Generator spec for a labeled synthetic table.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub attrs: Vec<SyntheticAttr>,
    pub rules: Vec<SubgroupRule>,
    pub base_weights: Vec<f64>,
    pub noise: f64,
    pub rows: usize,
}

impl SyntheticSpec {
    /// The desk-scale subgroup dataset used by the acceptance suite:
    /// M=8 (4 categorical, 4 numeric), 4 planted subgroups that reverse
    /// numeric feature effects.
    pub fn subgroup_default(rows: usize) -> Self {
        SyntheticSpec {
            attrs: vec![
                SyntheticAttr::categorical("c0", 5),
                SyntheticAttr::categorical("c1", 4),
                SyntheticAttr::categorical("c2", 6),
                SyntheticAttr::categorical("c3", 3),
                SyntheticAttr::numerical("n0", (0.0, 1.0)),
                SyntheticAttr::numerical("n1", (-1.0, 1.0)),
                SyntheticAttr::numerical("n2", (0.0, 10.0)),
                SyntheticAttr::numerical("n3", (0.0, 1.0)),
            ],
            rules: vec![
                SubgroupRule {
                    predicates: vec![("c0".into(), "v0".into())],
                    offset: 0.6,
                    interaction: vec![("n0".into(), -2.4)],
                    pair_interaction: vec![
                        ("n0".into(), "n1".into(), 3.2),
                        ("n2".into(), "n3".into(), -2.6),
                    ],
                },
                SubgroupRule {
                    predicates: vec![("c1".into(), "v1".into())],
                    offset: -0.6,
                    interaction: vec![("n1".into(), 1.8)],
                    pair_interaction: vec![
                        ("n0".into(), "n2".into(), -3.2),
                        ("n1".into(), "n3".into(), 2.6),
                    ],
                },
                SubgroupRule {
                    predicates: vec![("c2".into(), "v2".into())],
                    offset: 0.8,
                    interaction: vec![("n2".into(), -1.6)],
                    pair_interaction: vec![
                        ("n1".into(), "n2".into(), 3.2),
                        ("n0".into(), "n3".into(), 2.6),
                    ],
                },
                SubgroupRule {
                    predicates: vec![("c0".into(), "v2".into()), ("c3".into(), "v1".into())],
                    offset: -0.8,
                    interaction: vec![("n0".into(), -3.2), ("n3".into(), 1.6)],
                    pair_interaction: vec![("n0".into(), "n1".into(), -3.8)],
                },
            ],
            base_weights: vec![0.4, -0.3, 0.3, 0.2, 1.2, -0.9, 0.8, -0.7],
            noise: 0.15,
            rows,
        }
    }
}

fn feature_score(attr: &SyntheticAttr, raw: f64) -> f64 {
    match attr.kind {
        AttrKind::Categorical => {
            if attr.cardinality <= 1 {
                0.0
            } else {
                -1.0 + 2.0 * raw / (attr.cardinality - 1) as f64
            }
        }
        AttrKind::Numerical => {
            let (lo, hi) = attr.range;
            let mean = 0.5 * (lo + hi);
            let std = (hi - lo) / 12f64.sqrt();
            if std > 0.0 {
                (raw - mean) / std
            } else {
                0.0
            }
        }
    }
}

/// Sample a labeled table: uniform attribute values, label drawn from
/// `Bernoulli(σ(base + subgroup offsets/interactions + noise))`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Table> {
    if spec.base_weights.len() != spec.attrs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} base weights for {} attributes",
            spec.base_weights.len(),
            spec.attrs.len()
        )));
    }
    let attr_idx = |name: &str| -> Result<usize> {
        spec.attrs
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    };
    // Pre-resolve rule attribute indices.
    let mut rules = Vec::with_capacity(spec.rules.len());
    for r in &spec.rules {
        let mut preds = Vec::with_capacity(r.predicates.len());
        for (name, token) in &r.predicates {
            let j = attr_idx(name)?;
            if spec.attrs[j].kind != AttrKind::Categorical {
                return Err(Error::TypeMismatch(format!(
                    "subgroup predicate on non-categorical attribute '{name}'"
                )));
            }
            let id = token
                .strip_prefix('v')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&id| id < spec.attrs[j].cardinality)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("token '{token}' outside attribute '{name}'"))
                })?;
            preds.push((j, id));
        }
        let mut inter = Vec::with_capacity(r.interaction.len());
        for (name, w) in &r.interaction {
            inter.push((attr_idx(name)?, *w));
        }
        let mut pairs = Vec::with_capacity(r.pair_interaction.len());
        for (a, b, w) in &r.pair_interaction {
            pairs.push((attr_idx(a)?, attr_idx(b)?, *w));
        }
        rules.push((preds, r.offset, inter, pairs));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.attrs.len();
    let mut values = Vec::with_capacity(spec.rows * m);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let start = values.len();
        for a in &spec.attrs {
            let v = match a.kind {
                AttrKind::Categorical => rng.random_range(0..a.cardinality.max(1)) as f64,
                AttrKind::Numerical => rng.random_range(a.range.0..a.range.1),
            };
            values.push(v);
        }
        let row = &values[start..start + m];
        let mut logit: f64 = row
            .iter()
            .zip(&spec.attrs)
            .zip(&spec.base_weights)
            .map(|((&v, a), &w)| w * feature_score(a, v))
            .sum();
        for (preds, offset, inter, pairs) in &rules {
            if preds.iter().all(|&(j, id)| row[j] as usize == id) {
                logit += offset;
                for &(j, w) in inter {
                    logit += w * feature_score(&spec.attrs[j], row[j]);
                }
                for &(a, b, w) in pairs {
                    logit += w
                        * feature_score(&spec.attrs[a], row[a])
                        * feature_score(&spec.attrs[b], row[b]);
                }
            }
        }
        if spec.noise > 0.0 {
            let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            logit += spec.noise * z;
        }
        labels.push(u8::from(rng.random::<f64>() < sigmoid(logit)));
    }

    let attrs: Vec<AttributeSpec> = spec
        .attrs
        .iter()
        .map(|a| match a.kind {
            AttrKind::Categorical => AttributeSpec::categorical(
                a.name.clone(),
                (0..a.cardinality).map(|i| format!("v{i}")).collect(),
            ),
            AttrKind::Numerical => AttributeSpec::numerical(a.name.clone(), a.range),
        })
        .collect();
    let schema = Schema {
        attrs,
        label: "label".into(),
    };
    Table::from_parts("synthetic", schema, values, Some(labels))
}

/// Results for one trained arm of the comparison.
#[derive(Debug, Clone)]
pub struct ArmReport {
    pub name: String,
    pub workload_auc: f64,
    pub worst_auc: f64,
    pub excluded: usize,
    pub mean_active_experts: f64,
    pub per_tuple_expert_flops: f64,
    pub per_query_gating_flops: u64,
    pub usage_entropy: f64,
    pub expert_activation: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub base: ArmReport,
    pub leads: ArmReport,
}

fn run_arm(
    name: &str,
    table: &Table,
    fitted: &Schema,
    eval_table: &Table,
    workload: &Workload,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<ArmReport> {
    let mut model = GeneralModel::new(fitted.clone(), model_cfg, train_cfg.seed)?;
    let history = train(&mut model, table, train_cfg)?;
    let usage_entropy = history
        .iter()
        .map(|h| h.usage_entropy)
        .sum::<f64>()
        / history.len().max(1) as f64;
    let model = Arc::new(model);
    let report = evaluate_on_workload(&model, workload, eval_table, UndefinedAucPolicy::Exclude)?;
    // Mean sliced expert cost over the workload (full cost when dense).
    let per_expert = model.count_flops(1).per_tuple_expert as f64;
    let per_tuple_expert_flops = per_expert * report.mean_active_experts;
    Ok(ArmReport {
        name: name.to_string(),
        workload_auc: report.workload_auc,
        worst_auc: report.worst_auc,
        excluded: report.excluded,
        mean_active_experts: report.mean_active_experts,
        per_tuple_expert_flops,
        per_query_gating_flops: model.count_flops(1).per_query_gating,
        usage_entropy,
        expert_activation: report.expert_activation,
    })
}

/// Train the K=1 base DNN (regularizers off) and the sliced-MoE model on
/// the same data, split, and workload; report both arms.
pub fn compare_base_vs_leads(
    table: &Table,
    leads_cfg: ModelConfig,
    base_hidden: usize,
    train_cfg: &TrainConfig,
    workload_n: usize,
    max_bins: usize,
) -> Result<CompareOutcome> {
    let (train_rows, valid_rows) = crate::train::split_indices(
        table.n_rows(),
        train_cfg.valid_fraction,
        train_cfg.seed,
    );
    let fitted = crate::schema::fit_schema(table, &train_rows, max_bins)?;
    let eval_table = table.subset("heldout", &valid_rows);
    let workload = generate_workload(&eval_table, workload_n, train_cfg.max_col, train_cfg.seed)?;

    let base_cfg = ModelConfig {
        k: 1,
        n_e: leads_cfg.n_e,
        n_z: leads_cfg.n_z,
        h_expert: base_hidden,
        alpha0: 2.0,
        alpha_learnable: false,
    };
    let base_train = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        alpha_learnable: false,
        ..*train_cfg
    };
    let base = run_arm(
        "base_dnn",
        table,
        &fitted,
        &eval_table,
        &workload,
        base_cfg,
        &base_train,
    )?;
    let leads = run_arm(
        "leads",
        table,
        &fitted,
        &eval_table,
        &workload,
        leads_cfg,
        train_cfg,
    )?;
    Ok(CompareOutcome { base, leads })
}

/// CSV rendering of a comparison, one arm per row.
pub fn compare_csv(outcome: &CompareOutcome) -> String {
    let mut out = String::from(
        "method,workload_auc,worst_auc,excluded,mean_active_experts,per_tuple_expert_flops,per_query_gating_flops\n",
    );
    for arm in [&outcome.base, &outcome.leads] {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            arm.name,
            arm.workload_auc,
            arm.worst_auc,
            arm.excluded,
            arm.mean_active_experts,
            arm.per_tuple_expert_flops,
            arm.per_query_gating_flops
        ));
    }
    out
}
