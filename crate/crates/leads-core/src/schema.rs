//! Table schemas, CSV ingestion, and supervised discretization.
//!
//! Numeric attributes are discretized with an information-value (IV)
//! maximizing binning: equal-frequency pre-binning followed by greedy
//! adjacent merges that keep the most informative cut points.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;

use crate::error::{Error, Result};

/// Attribute kind as stored in a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Categorical,
    Numerical,
}

/// Discretization rule for one numeric attribute.
///
/// `cut_points` are strictly increasing. A value `v` lands in bin
/// `|{c : c <= v}|`, i.e. intervals are left-closed on the upper side and
/// out-of-range values clamp to the edge bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningRule {
    cut_points: Vec<f64>,
}

impl BinningRule {
    pub fn new(cut_points: Vec<f64>) -> Result<Self> {
        for w in cut_points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "cut points not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if cut_points.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite cut point".into()));
        }
        Ok(BinningRule { cut_points })
    }

    pub fn single_bin() -> Self {
        BinningRule { cut_points: Vec::new() }
    }

    pub fn cut_points(&self) -> &[f64] {
        &self.cut_points
    }

    pub fn bin_count(&self) -> usize {
        self.cut_points.len() + 1
    }

    /// Bin index for `value`; NaN is rejected.
    pub fn apply(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::InvalidArgument("cannot bin NaN".into()));
        }
        Ok(self.cut_points.iter().take_while(|&&c| c <= value).count())
    }
}

/// Metadata for one table attribute.
#[derive(Debug, Clone)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttrKind,
    /// Categorical domain; token id equals its position. Empty for numeric.
    pub domain: Vec<String>,
    /// Observed [min, max] for numeric attributes.
    pub value_range: (f64, f64),
    /// Fitted discretization rule (numeric only).
    pub binning: Option<BinningRule>,
    /// Standardization statistics fitted on training data (numeric only).
    pub mean: f64,
    pub std: f64,
    token_index: HashMap<String, usize>,
}

impl AttributeSpec {
    pub fn categorical(name: impl Into<String>, domain: Vec<String>) -> Self {
        let token_index = domain
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        AttributeSpec {
            name: name.into(),
            kind: AttrKind::Categorical,
            domain,
            value_range: (0.0, 0.0),
            binning: None,
            mean: 0.0,
            std: 1.0,
            token_index,
        }
    }

    pub fn numerical(name: impl Into<String>, value_range: (f64, f64)) -> Self {
        AttributeSpec {
            name: name.into(),
            kind: AttrKind::Numerical,
            domain: Vec::new(),
            value_range,
            binning: None,
            mean: 0.0,
            std: 1.0,
            token_index: HashMap::new(),
        }
    }

    /// Number of distinct observed category tokens.
    pub fn cardinality(&self) -> usize {
        self.domain.len()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.token_index.get(token).copied()
    }

    /// Id of the out-of-vocabulary row. Shares the default-token embedding.
    pub fn oov_id(&self) -> usize {
        self.cardinality()
    }

    /// Reserved id encoding "no predicate on this attribute" on the query
    /// side: `cardinality` for categorical, `bin_count` for numeric.
    pub fn default_token(&self) -> usize {
        match self.kind {
            AttrKind::Categorical => self.cardinality(),
            AttrKind::Numerical => self.binning.as_ref().map(|b| b.bin_count()).unwrap_or(0),
        }
    }

    /// Row count of the query-side embedding table for this attribute.
    pub fn query_vocab(&self) -> usize {
        self.default_token() + 1
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / if self.std > 0.0 { self.std } else { 1.0 }
    }
}

/// Ordered attribute list plus the designated label column.
#[derive(Debug, Clone)]
pub struct Schema {
    pub attrs: Vec<AttributeSpec>,
    pub label: String,
}

impl Schema {
    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    /// Case-insensitive attribute lookup.
    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attrs
            .iter()
            .position(|a| a.name.eq_ignore_ascii_case(name))
    }

    /// Hash over the structural parts (names, kinds, domains, label).
    /// Fitted state (binning, standardization) is deliberately excluded so a
    /// model trained on a table keeps matching that table.
    pub fn structural_hash(&self) -> u64 {
        let mut canon = String::new();
        let _ = write!(canon, "label={}\x1f", self.label);
        for a in &self.attrs {
            let kind = match a.kind {
                AttrKind::Categorical => "c",
                AttrKind::Numerical => "n",
            };
            let _ = write!(canon, "{}\x1e{}\x1e", a.name, kind);
            for t in &a.domain {
                let _ = write!(canon, "{}\x1d", t);
            }
            canon.push('\x1f');
        }
        fnv1a(canon.as_bytes())
    }

    /// Line-oriented manifest: `name kind cardinality|range default_token cuts...`
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for a in &self.attrs {
            match a.kind {
                AttrKind::Categorical => {
                    let _ = writeln!(
                        out,
                        "{} categorical {} {}",
                        a.name,
                        a.cardinality(),
                        a.default_token()
                    );
                }
                AttrKind::Numerical => {
                    let _ = write!(
                        out,
                        "{} numerical {}..{} {}",
                        a.name, a.value_range.0, a.value_range.1, a.default_token()
                    );
                    if let Some(rule) = &a.binning {
                        for c in rule.cut_points() {
                            let _ = write!(out, " {}", c);
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Immutable table: flat row-major values plus an optional binary label
/// column. Categorical cells hold their domain id encoded as `f64`.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub schema: Schema,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
    n_rows: usize,
}

impl Table {
    pub fn from_parts(
        name: impl Into<String>,
        schema: Schema,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let m = schema.len();
        if m == 0 && !values.is_empty() {
            return Err(Error::InvalidArgument("values for empty schema".into()));
        }
        let n_rows = if m == 0 { 0 } else { values.len() / m };
        if m != 0 && values.len() != n_rows * m {
            return Err(Error::InvalidArgument(format!(
                "ragged value buffer: {} values for width {}",
                values.len(),
                m
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n_rows {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} rows",
                    l.len(),
                    n_rows
                )));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
            }
        }
        Ok(Table {
            name: name.into(),
            schema,
            values,
            labels,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.schema.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// New table holding the given rows (same schema, preserved order).
    pub fn subset(&self, name: impl Into<String>, rows: &[usize]) -> Table {
        let m = self.schema.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Table {
            name: name.into(),
            schema: self.schema.clone(),
            values,
            labels,
            n_rows: rows.len(),
        }
    }
}

/// Parse an RFC-4180 CSV byte stream into a [`Table`].
///
/// Column kinds are inferred (every value parses as a finite number =>
/// numeric) unless overridden through `hints`. The `label` column must hold
/// only `0`/`1`.
pub fn ingest_csv<R: io::Read>(
    name: &str,
    source: R,
    label: &str,
    hints: &HashMap<String, AttrKind>,
) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);

    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(label))
        .ok_or_else(|| Error::MissingLabel(label.to_string()))?;

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(csv_error)?);
    }

    // Kind inference per data column.
    let data_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    let mut kinds = Vec::with_capacity(data_cols.len());
    for &c in &data_cols {
        let hinted = hints
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(&headers[c]))
            .map(|(_, &v)| v);
        let kind = hinted.unwrap_or_else(|| {
            let numeric = !records.is_empty()
                && records.iter().all(|r| {
                    r[c].trim()
                        .parse::<f64>()
                        .map(|v| v.is_finite())
                        .unwrap_or(false)
                });
            if numeric {
                AttrKind::Numerical
            } else {
                AttrKind::Categorical
            }
        });
        kinds.push(kind);
    }

    // Assemble specs and the flat value buffer.
    let mut attrs: Vec<AttributeSpec> = Vec::with_capacity(data_cols.len());
    let mut domains: Vec<Vec<String>> = vec![Vec::new(); data_cols.len()];
    let mut indices: Vec<HashMap<String, usize>> = vec![HashMap::new(); data_cols.len()];
    let mut ranges: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY); data_cols.len()];

    let m = data_cols.len();
    let mut values = Vec::with_capacity(records.len() * m);
    let mut labels = Vec::with_capacity(records.len());

    for rec in &records {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (j, &c) in data_cols.iter().enumerate() {
            let raw = &rec[c];
            match kinds[j] {
                AttrKind::Numerical => {
                    let v = raw.trim().parse::<f64>().map_err(|_| Error::Csv {
                        line,
                        msg: format!("column '{}': cannot parse '{}' as number", headers[c], raw),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Csv {
                            line,
                            msg: format!("column '{}': non-finite value '{}'", headers[c], raw),
                        });
                    }
                    ranges[j].0 = ranges[j].0.min(v);
                    ranges[j].1 = ranges[j].1.max(v);
                    values.push(v);
                }
                AttrKind::Categorical => {
                    let id = match indices[j].get(raw) {
                        Some(&id) => id,
                        None => {
                            let id = domains[j].len();
                            domains[j].push(raw.to_string());
                            indices[j].insert(raw.to_string(), id);
                            id
                        }
                    };
                    values.push(id as f64);
                }
            }
        }
        let raw_label = rec[label_idx].trim();
        let y = match raw_label {
            "0" => 0u8,
            "1" => 1u8,
            _ => {
                return Err(Error::NonBinaryLabel {
                    column: headers[label_idx].clone(),
                    value: raw_label.to_string(),
                    line,
                })
            }
        };
        labels.push(y);
    }

    for (j, &c) in data_cols.iter().enumerate() {
        let spec = match kinds[j] {
            AttrKind::Categorical => {
                AttributeSpec::categorical(headers[c].clone(), std::mem::take(&mut domains[j]))
            }
            AttrKind::Numerical => {
                let range = if records.is_empty() {
                    (0.0, 0.0)
                } else {
                    ranges[j]
                };
                AttributeSpec::numerical(headers[c].clone(), range)
            }
        };
        attrs.push(spec);
    }

    let schema = Schema {
        attrs,
        label: headers[label_idx].clone(),
    };
    Table::from_parts(name, schema, values, Some(labels))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        line,
        msg: e.to_string(),
    }
}

/// Write the table back out as CSV (header row, label column last).
pub fn emit_csv(table: &Table) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = table.schema.attrs.iter().map(|a| a.name.as_str()).collect();
    header.push(table.schema.label.as_str());
    wtr.write_record(&header)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for i in 0..table.n_rows() {
        let row = table.row(i);
        let mut rec: Vec<String> = Vec::with_capacity(row.len() + 1);
        for (a, &v) in table.schema.attrs.iter().zip(row) {
            match a.kind {
                AttrKind::Categorical => rec.push(a.domain[v as usize].clone()),
                AttrKind::Numerical => rec.push(format!("{}", v)),
            }
        }
        rec.push(format!("{}", table.label(i).unwrap_or(0)));
        wtr.write_record(&rec)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Information value of a bin assignment against binary labels.
///
/// Per-bin class counts get +0.5 smoothing only when a class is absent in
/// that bin, which keeps WoE finite for empty cells without perturbing
/// fully-populated bins (a single bin is exactly 0). Denominators stay at
/// the raw class totals. Empty bins contribute nothing.
pub fn compute_iv(bin_assignments: &[usize], labels: &[u8]) -> Result<f64> {
    if bin_assignments.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments vs {} labels",
            bin_assignments.len(),
            labels.len()
        )));
    }
    let n_bins = bin_assignments.iter().copied().max().map_or(0, |b| b + 1);
    let mut pos = vec![0.0f64; n_bins];
    let mut neg = vec![0.0f64; n_bins];
    for (&b, &y) in bin_assignments.iter().zip(labels) {
        if y == 1 {
            pos[b] += 1.0;
        } else {
            neg[b] += 1.0;
        }
    }
    iv_from_counts(&pos, &neg)
}

fn iv_from_counts(pos: &[f64], neg: &[f64]) -> Result<f64> {
    let total_pos: f64 = pos.iter().sum();
    let total_neg: f64 = neg.iter().sum();
    if total_pos == 0.0 || total_neg == 0.0 {
        return Err(Error::SingleClass);
    }
    let mut iv = 0.0;
    for (&p, &n) in pos.iter().zip(neg) {
        if p + n == 0.0 {
            continue;
        }
        let (p, n) = if p == 0.0 || n == 0.0 {
            (p + 0.5, n + 0.5)
        } else {
            (p, n)
        };
        let dp = p / total_pos;
        let dn = n / total_neg;
        iv += (dp - dn) * (dp / dn).ln();
    }
    Ok(iv)
}

fn rule_iv(rule: &BinningRule, values: &[f64], labels: &[u8]) -> Result<f64> {
    let mut assignments = Vec::with_capacity(values.len());
    for &v in values {
        assignments.push(rule.apply(v)?);
    }
    compute_iv(&assignments, labels)
}

/// Fit an IV-maximizing binning rule with at most `max_bins` bins.
///
/// Equal-frequency pre-binning into `4 * max_bins` micro-bins, then greedy
/// merging of the adjacent pair whose merge loses the least IV (leftmost on
/// ties) until the budget is met. The result is guaranteed to score at
/// least as well as equal-width binning with the same budget on the
/// training data.
pub fn fit_binning(values: &[f64], labels: &[u8], max_bins: usize) -> Result<BinningRule> {
    if values.len() != labels.len() || values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 2 paired samples, got {} values / {} labels",
            values.len(),
            labels.len()
        )));
    }
    if max_bins < 2 {
        return Err(Error::InvalidArgument("max_bins must be >= 2".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in values".into()));
    }
    let has_pos = labels.iter().any(|&y| y == 1);
    let has_neg = labels.iter().any(|&y| y == 0);
    if !has_pos || !has_neg {
        return Err(Error::SingleClass);
    }

    let mut pairs: Vec<(f64, u8)> = values.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.first().map(|p| p.0) == pairs.last().map(|p| p.0) {
        return Ok(BinningRule::single_bin());
    }

    // Equal-frequency micro-bins; a bin only closes between distinct values
    // so ties never straddle a cut.
    let n = pairs.len();
    let target = (n + 4 * max_bins - 1) / (4 * max_bins);
    let mut cuts: Vec<f64> = Vec::new();
    let mut pos_counts: Vec<f64> = vec![0.0];
    let mut neg_counts: Vec<f64> = vec![0.0];
    let mut in_bin = 0usize;
    for (i, &(v, y)) in pairs.iter().enumerate() {
        if in_bin >= target && i > 0 && pairs[i - 1].0 < v {
            cuts.push(v);
            pos_counts.push(0.0);
            neg_counts.push(0.0);
            in_bin = 0;
        }
        if y == 1 {
            *pos_counts.last_mut().unwrap() += 1.0;
        } else {
            *neg_counts.last_mut().unwrap() += 1.0;
        }
        in_bin += 1;
    }

    // Greedy merging down to the budget.
    while pos_counts.len() > max_bins {
        let mut best_i = 0;
        let mut best_iv = f64::NEG_INFINITY;
        for i in 0..pos_counts.len() - 1 {
            let mut p = pos_counts.clone();
            let mut q = neg_counts.clone();
            p[i] += p[i + 1];
            q[i] += q[i + 1];
            p.remove(i + 1);
            q.remove(i + 1);
            let iv = iv_from_counts(&p, &q)?;
            if iv > best_iv {
                best_iv = iv;
                best_i = i;
            }
        }
        pos_counts[best_i] += pos_counts[best_i + 1];
        neg_counts[best_i] += neg_counts[best_i + 1];
        pos_counts.remove(best_i + 1);
        neg_counts.remove(best_i + 1);
        cuts.remove(best_i);
    }
    let greedy = BinningRule::new(cuts)?;

    // Equal-width fallback with the same budget; keep whichever scores
    // higher so the contract holds on adversarial distributions too.
    let lo = pairs.first().unwrap().0;
    let hi = pairs.last().unwrap().0;
    let width = (hi - lo) / max_bins as f64;
    let mut ew_cuts = Vec::with_capacity(max_bins - 1);
    for k in 1..max_bins {
        let c = lo + width * k as f64;
        if ew_cuts.last().map_or(true, |&prev| prev < c) {
            ew_cuts.push(c);
        }
    }
    let equal_width = BinningRule::new(ew_cuts)?;

    let greedy_iv = rule_iv(&greedy, values, labels)?;
    let ew_iv = rule_iv(&equal_width, values, labels)?;
    Ok(if greedy_iv >= ew_iv { greedy } else { equal_width })
}

/// Apply a rule to one value. See [`BinningRule::apply`].
pub fn apply_binning(rule: &BinningRule, value: f64) -> Result<usize> {
    rule.apply(value)
}

/// Clone the table's schema and fit per-attribute state (binning rules and
/// standardization statistics) on the given training rows.
pub fn fit_schema(table: &Table, train_rows: &[usize], max_bins: usize) -> Result<Schema> {
    let labels = table
        .labels()
        .ok_or_else(|| Error::InvalidArgument("table has no label column".into()))?;
    let mut schema = table.schema.clone();
    for (j, attr) in schema.attrs.iter_mut().enumerate() {
        if attr.kind != AttrKind::Numerical {
            continue;
        }
        let mut vals = Vec::with_capacity(train_rows.len());
        let mut ys = Vec::with_capacity(train_rows.len());
        for &r in train_rows {
            vals.push(table.row(r)[j]);
            ys.push(labels[r]);
        }
        if vals.is_empty() {
            return Err(Error::InvalidArgument("no training rows".into()));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        attr.mean = mean;
        attr.std = var.sqrt();
        let distinct = {
            let mut s = vals.clone();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s.len()
        };
        attr.binning = Some(if distinct < 2 {
            BinningRule::single_bin()
        } else {
            fit_binning(&vals, &ys, max_bins)?
        });
    }
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ingest(csv: &str, label: &str) -> Result<Table> {
        ingest_csv("t", csv.as_bytes(), label, &HashMap::new())
    }

    #[test]
    fn ingest_basic_csv() {
        let t = ingest("gender,age,label\nM,24,1\nF,30,0\nM,41,1\n", "label").unwrap();
        assert_eq!(t.width(), 2);
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.schema.attrs[0].kind, AttrKind::Categorical);
        assert_eq!(t.schema.attrs[0].cardinality(), 2);
        assert_eq!(t.schema.attrs[1].kind, AttrKind::Numerical);
        assert_eq!(t.labels().unwrap(), &[1, 0, 1]);
    }

    #[test]
    fn ingest_header_only() {
        let t = ingest("a,b,label\n", "label").unwrap();
        assert_eq!(t.n_rows(), 0);
        assert_eq!(t.width(), 2);
        assert_eq!(t.schema.attrs[0].name, "a");
    }

    #[test]
    fn mixed_tokens_stay_categorical() {
        let t = ingest("c,label\n1,0\n2,1\nx,0\n", "label").unwrap();
        assert_eq!(t.schema.attrs[0].kind, AttrKind::Categorical);
        assert_eq!(t.schema.attrs[0].cardinality(), 3);
    }

    #[test]
    fn hint_overrides_inference() {
        let mut hints = HashMap::new();
        hints.insert("c".to_string(), AttrKind::Categorical);
        let t = ingest_csv("t", "c,label\n1,0\n2,1\n".as_bytes(), "label", &hints).unwrap();
        assert_eq!(t.schema.attrs[0].kind, AttrKind::Categorical);
    }

    #[test]
    fn missing_label_errors() {
        assert!(matches!(
            ingest("a,b\n1,2\n", "label"),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn non_binary_label_errors() {
        let err = ingest("a,label\nx,2\n", "label").unwrap_err();
        assert!(matches!(err, Error::NonBinaryLabel { line: 2, .. }));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = ingest("a,b,label\n1,2,0\n1,0\n", "label").unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let src = "city,temp,label\nParis,12.5,1\n\"Rio, BR\",30,0\nParis,-3.25,1\n";
        let t1 = ingest(src, "label").unwrap();
        let emitted = emit_csv(&t1).unwrap();
        let t2 = ingest(&emitted, "label").unwrap();
        assert_eq!(t1.values(), t2.values());
        assert_eq!(t1.labels(), t2.labels());
        assert_eq!(t1.schema.structural_hash(), t2.schema.structural_hash());
    }

    #[test]
    fn binning_boundaries() {
        let rule = BinningRule::new(vec![2.5]).unwrap();
        assert_eq!(rule.apply(24.0).unwrap(), 1);

        let rule = BinningRule::new(vec![10.0, 20.0]).unwrap();
        assert_eq!(rule.apply(-5.0).unwrap(), 0);
        assert_eq!(rule.apply(10.0).unwrap(), 1);
        assert_eq!(rule.apply(1e9).unwrap(), 2);
        assert!(rule.apply(f64::NAN).is_err());
    }

    #[test]
    fn binning_is_monotone() {
        let rule = BinningRule::new(vec![-1.0, 0.5, 3.0, 7.25]).unwrap();
        let mut prev = 0;
        for i in 0..1000 {
            let v = -5.0 + i as f64 * 0.015;
            let b = rule.apply(v).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn iv_perfect_separation() {
        // [50+/0-] and [0+/50-] with +0.5 smoothing in both bins.
        let mut bins = vec![0usize; 50];
        bins.extend(vec![1usize; 50]);
        let mut labels = vec![1u8; 50];
        labels.extend(vec![0u8; 50]);
        let iv = compute_iv(&bins, &labels).unwrap();
        let expected = 2.0 * 101.0f64.ln();
        assert!((iv - expected).abs() < 1e-12, "iv={iv} expected={expected}");
    }

    #[test]
    fn iv_uniform_and_single_bin_are_zero() {
        // Same class mix in both bins.
        let bins = vec![0, 0, 0, 1, 1, 1];
        let labels = vec![1, 0, 1, 1, 0, 1];
        assert_eq!(compute_iv(&bins, &labels).unwrap(), 0.0);
        // One bin, unbalanced labels: exactly zero (no smoothing kicks in).
        let bins = vec![0; 7];
        let labels = vec![1, 1, 1, 1, 1, 0, 0];
        assert_eq!(compute_iv(&bins, &labels).unwrap(), 0.0);
    }

    #[test]
    fn iv_permutation_invariant() {
        let bins = vec![0, 1, 2, 0, 1, 2, 0, 1];
        let labels = vec![1, 0, 1, 1, 0, 0, 1, 0];
        let a = compute_iv(&bins, &labels).unwrap();
        let perm = [3, 1, 4, 0, 7, 5, 6, 2];
        let bins2: Vec<usize> = perm.iter().map(|&i| bins[i]).collect();
        let labels2: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let b = compute_iv(&bins2, &labels2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_binning_simple_split() {
        let values = [1.0, 2.0, 3.0, 4.0];
        let labels = [0, 0, 1, 1];
        let rule = fit_binning(&values, &labels, 2).unwrap();
        assert_eq!(rule.bin_count(), 2);
        let c = rule.cut_points()[0];
        assert!(c > 2.0 && c <= 3.0, "cut at {c}");
        // Both bins are pure, so IV is the smoothed perfect-separation value.
        let iv = rule_iv(&rule, &values, &labels).unwrap();
        let expected = 2.0 * ((2.5f64 / 2.0) / (0.5 / 2.0)).ln() * (2.5 / 2.0 - 0.5 / 2.0);
        assert!((iv - expected).abs() < 1e-12);
    }

    #[test]
    fn fit_binning_constant_column() {
        let values = [5.0; 8];
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        let rule = fit_binning(&values, &labels, 4).unwrap();
        assert_eq!(rule.bin_count(), 1);
    }

    #[test]
    fn fit_binning_single_class_errors() {
        let values = [1.0, 2.0, 3.0];
        let labels = [1, 1, 1];
        assert!(matches!(
            fit_binning(&values, &labels, 2),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn fit_binning_checkerboard_near_zero() {
        // Labels independent of values: no split should help.
        let values: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let rule = fit_binning(&values, &labels, 2).unwrap();
        let iv = rule_iv(&rule, &values, &labels).unwrap();
        // Brute-force best 2-bin split for reference.
        let mut best = 0.0f64;
        for c in 1..200 {
            let r = BinningRule::new(vec![c as f64]).unwrap();
            best = best.max(rule_iv(&r, &values, &labels).unwrap());
        }
        assert!(iv <= best + 1e-12);
        assert!(iv < 0.05, "checkerboard iv should be tiny, got {iv}");
    }

    proptest! {
        #[test]
        fn fitted_iv_beats_equal_width(seed in 0u64..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let mut values = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            let pivot = rng.random_range(-1.0..1.0);
            for _ in 0..n {
                let v: f64 = rng.random_range(-2.0..2.0);
                let p = if v > pivot { 0.8 } else { 0.3 };
                labels.push(u8::from(rng.random::<f64>() < p));
                values.push(v);
            }
            if !labels.contains(&0) || !labels.contains(&1) {
                return Ok(());
            }
            let max_bins = 5;
            let rule = fit_binning(&values, &labels, max_bins).unwrap();
            prop_assert!(rule.bin_count() <= max_bins);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / max_bins as f64;
            let ew = BinningRule::new((1..max_bins).map(|k| lo + width * k as f64).collect()).unwrap();
            let fitted_iv = rule_iv(&rule, &values, &labels).unwrap();
            let ew_iv = rule_iv(&ew, &values, &labels).unwrap();
            prop_assert!(fitted_iv >= ew_iv - 1e-12, "fitted {} < equal-width {}", fitted_iv, ew_iv);
        }

        #[test]
        fn apply_binning_monotone_prop(mut cuts in proptest::collection::vec(-100.0f64..100.0, 1..6),
                                       v1 in -150.0f64..150.0, v2 in -150.0f64..150.0) {
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let rule = BinningRule::new(cuts).unwrap();
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            prop_assert!(rule.apply(lo).unwrap() <= rule.apply(hi).unwrap());
        }
    }
}
