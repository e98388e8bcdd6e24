// temporary tuning harness, removed before finalizing
use leads_core::model::{save_model, GeneralModel, ModelConfig};
use leads_core::schema::fit_schema;
use leads_core::serving::*;
use leads_core::store::TableStore;
use leads_core::workload::{generate_synthetic_dataset, SyntheticSpec};

#[test]
#[ignore]
fn probe_serving_speed() {
    let rows: usize = std::env::var("ROWS").ok().and_then(|v| v.parse().ok()).unwrap_or(100_000);
    let spec = SyntheticSpec::subgroup_default(rows);
    let table = generate_synthetic_dataset(&spec, 7).unwrap();
    let all: Vec<usize> = (0..table.n_rows()).collect();
    let fitted = fit_schema(&table, &all, 5).unwrap();
    let model = GeneralModel::new(fitted, ModelConfig::default(), 7).unwrap();
    let dir = std::env::temp_dir().join("leads_probe");
    std::fs::create_dir_all(&dir).unwrap();
    let model_path = dir.join("m.bin");
    save_model(&model, std::fs::File::create(&model_path).unwrap()).unwrap();

    let mut store = TableStore::new();
    store.register_table(table).unwrap();
    let mut registry = ModelRegistry::new();
    registry.register("ctr", &model_path);

    let wheres = vec![String::new()]; // select all rows
    let cfg = BenchConfig { warmup_passes: 3, measured_passes: 10, opts: ServeOptions::default() };

    let t = std::time::Instant::now();
    let iis = bench_iis(&store, &registry, "synthetic", "ctr", &wheres, &cfg).unwrap();
    println!("iis bench wall: {:.1}s", t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let ids = bench_ids(&store, &model_path, "synthetic", "ctr", &wheres, &cfg).unwrap();
    println!("ids bench wall: {:.1}s", t.elapsed().as_secs_f64());

    let mi = median_total(&iis) as f64;
    let md = median_total(&ids) as f64;
    println!("IIS median total: {:.1} ms", mi / 1e6);
    println!("IDS median total: {:.1} ms", md / 1e6);
    println!("speedup: {:.2}x", md / mi);
    for r in iis.iter().take(2).chain(ids.iter().take(2)) {
        println!(
            "{:?} load={:.2}ms retr={:.2}ms pre={:.2}ms inf={:.2}ms total={:.2}ms",
            r.mode,
            r.timing.model_load_ns as f64 / 1e6,
            r.timing.data_retrieval_ns as f64 / 1e6,
            r.timing.preprocessing_ns as f64 / 1e6,
            r.timing.inference_ns as f64 / 1e6,
            r.timing.total_ns as f64 / 1e6
        );
    }
}
