//! The `infer` pipeline (load → retrieve → preprocess → infer), the LRU
//! state cache, and the two deployment strategies: in-process inference
//! (IIS) and a socket-decoupled inference server (IDS).

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;
use std::io::{BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{load_model, slice, GeneralModel, SlicedModel};
use crate::query::{parse_where, PrimitiveQuery};
use crate::schema::{AttrKind, Schema};
use crate::store::{self, select_where, NumericMatch, RowBuffer, TableStore};
use crate::tensor::{sigmoid, Tensor};

/// Plain LRU map: `get` refreshes recency, `put` evicts the least recently
/// used entry once full.
#[derive(Debug)]
pub struct LruCache<K: Eq + Hash + Clone, V> {
    capacity: usize,
    map: HashMap<K, V>,
    order: VecDeque<K>,
}

impl<K: Eq + Hash + Clone, V> LruCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            capacity: capacity.max(1),
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn touch(&mut self, key: &K) {
        if let Some(pos) = self.order.iter().position(|k| k == key) {
            let k = self.order.remove(pos).unwrap();
            self.order.push_back(k);
        }
    }

    pub fn get(&mut self, key: &K) -> Option<&V> {
        if self.map.contains_key(key) {
            self.touch(key);
            self.map.get(key)
        } else {
            None
        }
    }

    pub fn put(&mut self, key: K, value: V) {
        if self.map.insert(key.clone(), value).is_some() {
            self.touch(&key);
            return;
        }
        self.order.push_back(key);
        if self.map.len() > self.capacity {
            if let Some(evicted) = self.order.pop_front() {
                self.map.remove(&evicted);
            }
        }
    }
}

/// Maps task names to model files.
#[derive(Debug, Default, Clone)]
pub struct ModelRegistry {
    paths: HashMap<String, PathBuf>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry::default()
    }

    pub fn register(&mut self, task: impl Into<String>, path: impl Into<PathBuf>) {
        self.paths.insert(task.into(), path.into());
    }

    pub fn resolve(&self, task: &str) -> Result<&Path> {
        self.paths
            .get(task)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }
}

/// Session-lifetime general models plus an LRU of sliced models keyed by
/// (task, canonical WHERE).
pub struct StateCache {
    pub general: HashMap<String, Arc<GeneralModel>>,
    pub sliced: LruCache<(String, String), Arc<SlicedModel>>,
}

impl StateCache {
    pub fn new(sliced_capacity: usize) -> Self {
        StateCache {
            general: HashMap::new(),
            sliced: LruCache::new(sliced_capacity),
        }
    }
}

/// Serving knobs; ablations flip the two optimization flags.
#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    pub state_caching: bool,
    pub zero_copy: bool,
    pub numeric_match: NumericMatch,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            state_caching: true,
            zero_copy: true,
            numeric_match: NumericMatch::BinEquality,
        }
    }
}

/// Monotonic per-stage latencies in nanoseconds. `total` covers the whole
/// request, so it is at least the sum of the stages.
#[derive(Debug, Clone, Copy, Default)]
pub struct TimingBreakdown {
    pub model_load_ns: u64,
    pub data_retrieval_ns: u64,
    pub preprocessing_ns: u64,
    pub inference_ns: u64,
    pub total_ns: u64,
}

impl TimingBreakdown {
    pub fn stage_sum(&self) -> u64 {
        self.model_load_ns + self.data_retrieval_ns + self.preprocessing_ns + self.inference_ns
    }
}

/// `SELECT infer(<table>, <task>, <where>)`, deconstructed.
#[derive(Debug, Clone)]
pub struct InferenceRequest {
    pub table: String,
    pub task: String,
    pub where_text: String,
}

/// Predictions (original row id, probability) plus stage timings.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub predictions: Vec<(usize, f64)>,
    pub timing: TimingBreakdown,
}

fn resolve_model(
    registry: &ModelRegistry,
    cache: &mut StateCache,
    task: &str,
    caching: bool,
) -> Result<Arc<GeneralModel>> {
    if caching {
        if let Some(m) = cache.general.get(task) {
            return Ok(Arc::clone(m));
        }
    }
    let path = registry.resolve(task)?;
    let file = std::fs::File::open(path)?;
    let model = Arc::new(load_model(std::io::BufReader::new(file))?);
    if caching {
        cache.general.insert(task.to_string(), Arc::clone(&model));
    }
    Ok(model)
}

fn resolve_sliced(
    cache: &mut StateCache,
    model: &Arc<GeneralModel>,
    task: &str,
    query: &PrimitiveQuery,
    caching: bool,
) -> Result<Arc<SlicedModel>> {
    let key = (task.to_string(), query.canonical_key(&model.schema)?);
    if caching {
        if let Some(s) = cache.sliced.get(&key) {
            return Ok(Arc::clone(s));
        }
    }
    let enc = crate::query::encode_query(query, &model.schema)?;
    let sliced = Arc::new(slice(model, &enc)?);
    if caching {
        cache.sliced.put(key, Arc::clone(&sliced));
    }
    Ok(sliced)
}

/// In-process inference: resolve and slice the model (cache-aware), select
/// rows into a [`RowBuffer`], preprocess, and evaluate the sliced model.
pub fn infer(
    request: &InferenceRequest,
    store: &TableStore,
    registry: &ModelRegistry,
    cache: &mut StateCache,
    opts: &ServeOptions,
) -> Result<InferOutcome> {
    let t_total = Instant::now();

    // Stage 1: model resolution and slicing.
    let t0 = Instant::now();
    let model = resolve_model(registry, cache, &request.task, opts.state_caching)?;
    let table = store.get(&request.table)?;
    model.check_schema(&table.schema)?;
    let query = parse_where(&request.where_text, &model.schema)?;
    let sliced = resolve_sliced(cache, &model, &request.task, &query, opts.state_caching)?;
    let model_load_ns = t0.elapsed().as_nanos() as u64;

    // Stage 2: data retrieval into the shared buffer.
    let t1 = Instant::now();
    let mut buffer = RowBuffer::with_capacity(table.n_rows(), table.width());
    let n = select_where(
        store,
        &request.table,
        &query,
        &model.schema,
        opts.numeric_match,
        &mut buffer,
    )?;
    let data_retrieval_ns = t1.elapsed().as_nanos() as u64;

    // Stage 3: preprocessing (zero-copy handoff unless ablated).
    let t2 = Instant::now();
    let owned_buf;
    let work_buf: &RowBuffer = if opts.zero_copy {
        &buffer
    } else {
        owned_buf = buffer.duplicate();
        &owned_buf
    };
    let xhat = model.preprocess_rows(&work_buf.values, n)?;
    let preprocessing_ns = t2.elapsed().as_nanos() as u64;

    // Stage 4: inference over the active experts.
    let t3 = Instant::now();
    let owned_x;
    let work_x: &Tensor = if opts.zero_copy {
        &xhat
    } else {
        store::record_stage_copy();
        owned_x = xhat.clone();
        &owned_x
    };
    let logits = sliced.logits_from_xhat(work_x)?;
    let predictions: Vec<(usize, f64)> = work_buf
        .indices
        .iter()
        .zip(&logits)
        .map(|(&i, &z)| (i, sigmoid(z)))
        .collect();
    let inference_ns = t3.elapsed().as_nanos() as u64;

    Ok(InferOutcome {
        predictions,
        timing: TimingBreakdown {
            model_load_ns,
            data_retrieval_ns,
            preprocessing_ns,
            inference_ns,
            total_ns: t_total.elapsed().as_nanos() as u64,
        },
    })
}

// ---------------------------------------------------------------------------
// Decoupled strategy: length-prefixed binary protocol over TCP. The client
// ships selected rows (one frame per row, like row-oriented database wire
// protocols); the server preprocesses, infers, and returns probabilities
// plus its own stage timings.
// ---------------------------------------------------------------------------

const WIRE_MAGIC: &[u8; 10] = b"LEADSWIRE1";

fn read_exact_n(stream: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    stream
        .read_exact(&mut buf)
        .map_err(|e| Error::Protocol(format!("short read: {e}")))?;
    Ok(buf)
}

fn read_u32(stream: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact_n(stream, 4)?.try_into().unwrap()))
}

fn read_u64(stream: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact_n(stream, 8)?.try_into().unwrap()))
}

fn encode_row(row: &[f64], schema: &Schema, out: &mut [u8]) {
    for (j, (&v, attr)) in row.iter().zip(&schema.attrs).enumerate() {
        let bytes = match attr.kind {
            AttrKind::Categorical => (v as u64).to_le_bytes(),
            AttrKind::Numerical => v.to_le_bytes(),
        };
        out[j * 8..(j + 1) * 8].copy_from_slice(&bytes);
    }
}

fn decode_row(bytes: &[u8], schema: &Schema, out: &mut Vec<f64>) {
    for (j, attr) in schema.attrs.iter().enumerate() {
        let chunk: [u8; 8] = bytes[j * 8..(j + 1) * 8].try_into().unwrap();
        let v = match attr.kind {
            AttrKind::Categorical => u64::from_le_bytes(chunk) as f64,
            AttrKind::Numerical => f64::from_le_bytes(chunk),
        };
        out.push(v);
    }
}

/// Client half of the decoupled strategy: select rows locally, stream them
/// to the inference server, and collect predictions. Retrieval timing
/// includes connection and transfer; preprocessing/inference come from the
/// server's own clock.
pub fn client_infer_decoupled(
    addr: &str,
    request: &InferenceRequest,
    store: &TableStore,
    fitted: &Schema,
    opts: &ServeOptions,
) -> Result<InferOutcome> {
    let t_total = Instant::now();
    let query = parse_where(&request.where_text, fitted)?;
    let table = store.get(&request.table)?;

    // Retrieval: local selection plus moving the rows out.
    let t1 = Instant::now();
    let mut buffer = RowBuffer::with_capacity(table.n_rows(), table.width());
    let n = select_where(
        store,
        &request.table,
        &query,
        fitted,
        opts.numeric_match,
        &mut buffer,
    )?;
    let mut stream =
        TcpStream::connect(addr).map_err(|e| Error::Protocol(format!("connect {addr}: {e}")))?;
    stream.set_nodelay(true).ok();
    let where_bytes = request.where_text.as_bytes();
    let m = fitted.len();
    let row_bytes = m * 8;
    stream.write_all(WIRE_MAGIC)?;
    stream.write_all(&(where_bytes.len() as u32).to_le_bytes())?;
    stream.write_all(where_bytes)?;
    stream.write_all(&(n as u32).to_le_bytes())?;
    stream.write_all(&(row_bytes as u32).to_le_bytes())?;
    let mut frame = vec![0u8; row_bytes];
    for i in 0..n {
        let row = &buffer.values[i * m..(i + 1) * m];
        encode_row(row, fitted, &mut frame);
        // One write per row: the decoupled path pays row-oriented protocol
        // costs, like a real database connection.
        stream.write_all(&frame)?;
    }
    stream.flush()?;
    let data_retrieval_ns = t1.elapsed().as_nanos() as u64;

    // Response: status, probabilities, server-side stage timings.
    let status = read_exact_n(&mut stream, 1)?[0];
    if status != 0 {
        let len = read_u32(&mut stream)? as usize;
        let msg = String::from_utf8_lossy(&read_exact_n(&mut stream, len)?).into_owned();
        return Err(Error::Protocol(format!("server error: {msg}")));
    }
    let n_preds = read_u32(&mut stream)? as usize;
    if n_preds != n {
        return Err(Error::Protocol(format!(
            "{n_preds} predictions for {n} rows"
        )));
    }
    let mut probs = Vec::with_capacity(n_preds);
    let payload = read_exact_n(&mut stream, n_preds * 8)?;
    for chunk in payload.chunks_exact(8) {
        probs.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let model_load_ns = read_u64(&mut stream)?;
    let preprocessing_ns = read_u64(&mut stream)?;
    let inference_ns = read_u64(&mut stream)?;

    let predictions = buffer.indices.iter().copied().zip(probs).collect();
    Ok(InferOutcome {
        predictions,
        timing: TimingBreakdown {
            model_load_ns,
            data_retrieval_ns,
            preprocessing_ns,
            inference_ns,
            total_ns: t_total.elapsed().as_nanos() as u64,
        },
    })
}

fn handle_connection(
    stream: &mut TcpStream,
    model: &Arc<GeneralModel>,
    cache: &Mutex<StateCache>,
    opts: &ServeOptions,
) -> Result<()> {
    stream.set_nodelay(true).ok();
    let magic = read_exact_n(stream, WIRE_MAGIC.len())?;
    if magic != WIRE_MAGIC {
        return Err(Error::Protocol("bad wire magic (version mismatch?)".into()));
    }
    let where_len = read_u32(stream)? as usize;
    if where_len > 1 << 20 {
        return Err(Error::Protocol("implausible where length".into()));
    }
    let where_text = String::from_utf8(read_exact_n(stream, where_len)?)
        .map_err(|_| Error::Protocol("where clause is not utf-8".into()))?;
    let n_rows = read_u32(stream)? as usize;
    let row_bytes = read_u32(stream)? as usize;
    let m = model.schema.len();
    if row_bytes != m * 8 {
        return Err(Error::Protocol(format!(
            "row length {row_bytes} does not match schema width {}",
            m * 8
        )));
    }

    let t_load = Instant::now();
    let query = parse_where(&where_text, &model.schema)?;
    let sliced = {
        let mut cache = cache.lock().expect("cache lock");
        resolve_sliced(&mut cache, model, "serve", &query, opts.state_caching)?
    };
    let model_load_ns = t_load.elapsed().as_nanos() as u64;

    let mut values = Vec::with_capacity(n_rows * m);
    let mut frame = vec![0u8; row_bytes];
    for _ in 0..n_rows {
        stream
            .read_exact(&mut frame)
            .map_err(|e| Error::Protocol(format!("short row read: {e}")))?;
        decode_row(&frame, &model.schema, &mut values);
    }

    let t_pre = Instant::now();
    let xhat = model.preprocess_rows(&values, n_rows)?;
    let preprocessing_ns = t_pre.elapsed().as_nanos() as u64;

    let t_inf = Instant::now();
    let logits = sliced.logits_from_xhat(&xhat)?;
    let inference_ns = t_inf.elapsed().as_nanos() as u64;

    let mut out = BufWriter::new(&mut *stream);
    out.write_all(&[0u8])?;
    out.write_all(&(n_rows as u32).to_le_bytes())?;
    for z in logits {
        out.write_all(&sigmoid(z).to_le_bytes())?;
    }
    out.write_all(&model_load_ns.to_le_bytes())?;
    out.write_all(&preprocessing_ns.to_le_bytes())?;
    out.write_all(&inference_ns.to_le_bytes())?;
    out.flush()?;
    Ok(())
}

fn report_error(stream: &mut TcpStream, err: &Error) {
    let msg = err.to_string();
    let _ = stream.write_all(&[1u8]);
    let _ = stream.write_all(&(msg.len() as u32).to_le_bytes());
    let _ = stream.write_all(msg.as_bytes());
    let _ = stream.flush();
}

/// Run the decoupled inference server. Handles one request per connection,
/// sequentially by default; `max_requests` bounds the loop for tests and
/// benchmarks. With `concurrent`, each connection gets its own thread over
/// the shared model and a mutex-guarded cache.
pub fn serve_decoupled(
    listener: TcpListener,
    model: Arc<GeneralModel>,
    opts: ServeOptions,
    max_requests: Option<usize>,
    concurrent: bool,
) -> Result<()> {
    let cache = Arc::new(Mutex::new(StateCache::new(64)));
    let mut handled = 0usize;
    let mut workers = Vec::new();
    for conn in listener.incoming() {
        let mut stream = conn?;
        if concurrent {
            let model = Arc::clone(&model);
            let cache = Arc::clone(&cache);
            workers.push(std::thread::spawn(move || {
                if let Err(e) = handle_connection(&mut stream, &model, &cache, &opts) {
                    report_error(&mut stream, &e);
                }
            }));
        } else if let Err(e) = handle_connection(&mut stream, &model, &cache, &opts) {
            report_error(&mut stream, &e);
        }
        handled += 1;
        if max_requests.is_some_and(|max| handled >= max) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Benchmark harness.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Iis,
    Ids,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchMode::Iis => write!(f, "iis"),
            BenchMode::Ids => write!(f, "ids"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    /// Passes over the request list excluded from the records.
    pub warmup_passes: usize,
    /// Measured passes.
    pub measured_passes: usize,
    pub opts: ServeOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup_passes: 3,
            measured_passes: 10,
            opts: ServeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchRecord {
    pub mode: BenchMode,
    pub request_id: usize,
    pub rows: usize,
    pub timing: TimingBreakdown,
}

/// Benchmark the in-process strategy over a request list, preserving the
/// cache across requests (session behavior).
pub fn bench_iis(
    store: &TableStore,
    registry: &ModelRegistry,
    table: &str,
    task: &str,
    wheres: &[String],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>> {
    let mut cache = StateCache::new(64);
    let mut records = Vec::new();
    let mut request_id = 0usize;
    for pass in 0..cfg.warmup_passes + cfg.measured_passes {
        for w in wheres {
            let req = InferenceRequest {
                table: table.to_string(),
                task: task.to_string(),
                where_text: w.clone(),
            };
            let outcome = infer(&req, store, registry, &mut cache, &cfg.opts)?;
            if pass >= cfg.warmup_passes {
                records.push(BenchRecord {
                    mode: BenchMode::Iis,
                    request_id,
                    rows: outcome.predictions.len(),
                    timing: outcome.timing,
                });
                request_id += 1;
            }
        }
    }
    Ok(records)
}

/// Benchmark the decoupled strategy: spawns the server on a loopback port,
/// then drives it with one connection per request.
pub fn bench_ids(
    store: &TableStore,
    model_path: &Path,
    table: &str,
    task: &str,
    wheres: &[String],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>> {
    let file = std::fs::File::open(model_path)?;
    let model = Arc::new(load_model(std::io::BufReader::new(file))?);
    let fitted = model.schema.clone();
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    let total_requests = wheres.len() * (cfg.warmup_passes + cfg.measured_passes);
    let server_opts = cfg.opts;
    let server = std::thread::spawn(move || {
        serve_decoupled(listener, model, server_opts, Some(total_requests), false)
    });

    let mut records = Vec::new();
    let mut request_id = 0usize;
    for pass in 0..cfg.warmup_passes + cfg.measured_passes {
        for w in wheres {
            let req = InferenceRequest {
                table: table.to_string(),
                task: task.to_string(),
                where_text: w.clone(),
            };
            let outcome = client_infer_decoupled(&addr, &req, store, &fitted, &cfg.opts)?;
            if pass >= cfg.warmup_passes {
                records.push(BenchRecord {
                    mode: BenchMode::Ids,
                    request_id,
                    rows: outcome.predictions.len(),
                    timing: outcome.timing,
                });
                request_id += 1;
            }
        }
    }
    server
        .join()
        .map_err(|_| Error::Protocol("server thread panicked".into()))??;
    Ok(records)
}

/// CSV rendering:
/// `mode,request_id,rows,model_load_ns,retrieval_ns,preprocess_ns,inference_ns,total_ns`.
pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(
        "mode,request_id,rows,model_load_ns,retrieval_ns,preprocess_ns,inference_ns,total_ns\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mode,
            r.request_id,
            r.rows,
            r.timing.model_load_ns,
            r.timing.data_retrieval_ns,
            r.timing.preprocessing_ns,
            r.timing.inference_ns,
            r.timing.total_ns
        ));
    }
    out
}

/// Mean / p50 / p95 over one stage extractor.
pub fn stage_stats(records: &[BenchRecord], stage: impl Fn(&TimingBreakdown) -> u64) -> (f64, u64, u64) {
    let mut values: Vec<u64> = records.iter().map(|r| stage(&r.timing)).collect();
    values.sort_unstable();
    let mean = values.iter().sum::<u64>() as f64 / values.len().max(1) as f64;
    let p50 = values[values.len() / 2];
    let p95 = values[((values.len() * 95) / 100).min(values.len() - 1)];
    (mean, p50, p95)
}

/// Median of total request latencies.
pub fn median_total(records: &[BenchRecord]) -> u64 {
    let mut totals: Vec<u64> = records.iter().map(|r| r.timing.total_ns).collect();
    totals.sort_unstable();
    totals[totals.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lru_eviction_order() {
        let mut lru: LruCache<&str, i32> = LruCache::new(2);
        lru.put("a", 1);
        lru.put("b", 2);
        assert_eq!(lru.get(&"a"), Some(&1));
        lru.put("c", 3);
        // b was least recently used
        assert_eq!(lru.get(&"b"), None);
        assert_eq!(lru.get(&"a"), Some(&1));
        assert_eq!(lru.get(&"c"), Some(&3));
    }

    #[test]
    fn lru_get_on_empty_is_miss() {
        let mut lru: LruCache<u32, u32> = LruCache::new(4);
        assert_eq!(lru.get(&7), None);
    }

    /// Reference model: vector of (key, value), front = LRU.
    struct RefLru {
        capacity: usize,
        items: Vec<(u32, u32)>,
    }

    impl RefLru {
        fn get(&mut self, k: u32) -> Option<u32> {
            let pos = self.items.iter().position(|&(key, _)| key == k)?;
            let item = self.items.remove(pos);
            self.items.push(item);
            Some(item.1)
        }
        fn put(&mut self, k: u32, v: u32) {
            if let Some(pos) = self.items.iter().position(|&(key, _)| key == k) {
                self.items.remove(pos);
            }
            self.items.push((k, v));
            if self.items.len() > self.capacity {
                self.items.remove(0);
            }
        }
    }

    #[test]
    fn lru_matches_reference_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for capacity in [1usize, 2, 3, 8] {
            let mut lru: LruCache<u32, u32> = LruCache::new(capacity);
            let mut reference = RefLru {
                capacity,
                items: Vec::new(),
            };
            for _ in 0..1000 {
                let k = rng.random_range(0..12u32);
                if rng.random::<f64>() < 0.5 {
                    let v = rng.random::<u32>();
                    lru.put(k, v);
                    reference.put(k, v);
                } else {
                    assert_eq!(lru.get(&k).copied(), reference.get(k), "cap {capacity}");
                }
                assert!(lru.len() <= capacity);
                assert_eq!(lru.len(), reference.items.len());
            }
        }
    }

    #[test]
    fn unknown_task_is_clean_error() {
        let registry = ModelRegistry::new();
        assert!(matches!(
            registry.resolve("ctr"),
            Err(Error::UnknownTask(_))
        ));
    }
}
