use std::fs;

use mrt::checkpoint;
use mrt::config::{Needs, Precision, RunConfig};
use mrt::dataset::{dataset_hash, parse_timestamp, read_dataset, write_dataset};
use mrt_core::model::{build_model, ModelConfig};
use mrt_core::pipeline::PipelineSpec;
use mrt_core::synth::{generate_markdown, MarkdownParams};
use mrt_core::{Timestamp, Value};

#[test]
fn dataset_round_trip_keeps_values_and_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = generate_markdown(12, 3, &MarkdownParams::default()).unwrap();
    g.series[0].tvk[0][1][3] = Value::Missing;
    g.series[1].statics[1][0] = Value::Missing;
    g.series[2].tvk[1][0][0] = Value::Missing;
    write_dataset(dir.path(), &g.schema, &g.series).unwrap();
    let (schema, series) = read_dataset(dir.path()).unwrap();
    assert_eq!(schema, g.schema);
    assert_eq!(series, g.series);
}

#[test]
fn hash_is_deterministic_and_sensitive() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let g = generate_markdown(10, 0, &MarkdownParams::default()).unwrap();
    write_dataset(a.path(), &g.schema, &g.series).unwrap();
    write_dataset(b.path(), &g.schema, &g.series).unwrap();
    assert_eq!(dataset_hash(a.path()).unwrap(), dataset_hash(b.path()).unwrap());
    let g1 = generate_markdown(10, 1, &MarkdownParams::default()).unwrap();
    write_dataset(c.path(), &g1.schema, &g1.series).unwrap();
    assert_ne!(dataset_hash(a.path()).unwrap(), dataset_hash(c.path()).unwrap());
}

#[test]
fn malformed_files_are_rejected_with_the_file_named() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_markdown(4, 0, &MarkdownParams::default()).unwrap();
    write_dataset(dir.path(), &g.schema, &g.series).unwrap();
    let obs = dir.path().join("observed.csv");
    let text = fs::read_to_string(&obs).unwrap();

    // empty observed cell
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    cells[2] = "";
    lines[1] = cells.join(",");
    fs::write(&obs, lines.join("\n")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("observed.csv") && err.contains("full_price_sales"), "{err}");

    // unknown column
    fs::write(&obs, text.replacen("reduced_price_sales", "reduced_sales", 1)).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("missing column `reduced_price_sales`"), "{err}");

    // tvk rows out of step with observed rows
    fs::write(&obs, &text).unwrap();
    let tvk = dir.path().join("tvk.csv");
    let t = fs::read_to_string(&tvk).unwrap();
    let mut lines: Vec<&str> = t.lines().collect();
    lines.swap(1, 2);
    fs::write(&tvk, lines.join("\n")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("does not line up"), "{err}");
}

#[test]
fn timestamps_accept_common_iso_forms() {
    let want = Timestamp(1_700_000_000);
    for s in ["2023-11-14T22:13:20Z", "2023-11-14T23:13:20+01:00", "2023-11-14T22:13:20", "2023-11-14 22:13:20"] {
        assert_eq!(parse_timestamp(s), Some(want), "{s}");
    }
    assert_eq!(parse_timestamp("2023-11-14"), Some(Timestamp(1_699_920_000)));
    assert_eq!(parse_timestamp("14/11/2023"), None);
}

fn checkpoint_round_trip<T: mrt_core::Real>() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_markdown(2, 0, &MarkdownParams::default()).unwrap();
    let cfg = ModelConfig { seed: 9, ..ModelConfig::toy() };
    let model = build_model::<T>(&cfg, &g.schema).unwrap();
    checkpoint::save(dir.path(), &model, &PipelineSpec::default()).unwrap();
    let (back, spec) = checkpoint::load::<T>(dir.path()).unwrap();
    assert_eq!(spec, PipelineSpec::default());
    assert_eq!(back.config, model.config);
    assert_eq!(back.layout, model.layout);
    for id in model.store.ids() {
        let (a, b) = (model.store.value(id), back.store.value(id));
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits()));
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    checkpoint_round_trip::<f64>();
    checkpoint_round_trip::<f32>();
}

#[test]
fn checkpoint_rejects_mismatched_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_markdown(2, 0, &MarkdownParams::default()).unwrap();
    let model = build_model::<f64>(&ModelConfig::toy(), &g.schema).unwrap();
    checkpoint::save(dir.path(), &model, &PipelineSpec::default()).unwrap();
    let other = build_model::<f64>(&ModelConfig { d_model: 12, ..ModelConfig::toy() }, &g.schema).unwrap();
    let mut store = other.store.clone();
    let err = checkpoint::load_params(dir.path(), &mut store).unwrap_err().to_string();
    assert!(err.contains("shape"), "{err}");
}

#[test]
fn config_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.run.precision = Precision::F64;
    cfg.paths.dataset = Some("data/x".into());
    cfg.model.resolutions = vec![1, 2, 4];
    cfg.train.max_steps = Some(17);
    cfg.train.lr = 1.2345678901234567e-4;
    cfg.data.stride = Some(3);
    cfg.gradcheck.model = Some(ModelConfig::toy());
    cfg.gradcheck.corrupt = Some(1e-3);
    cfg.set_seed(77);
    let text = cfg.to_toml().unwrap();
    let back = RunConfig::parse(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(RunConfig::parse(&back.to_toml().unwrap()).unwrap(), cfg);
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
}

#[test]
fn config_errors_name_the_field() {
    let err = RunConfig::parse("[model]\nd_modle = 3\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("d_modle"), "{err}");

    let cfg = RunConfig::parse("[model]\nheads = 5\n").unwrap();
    let err = cfg.validate(Needs::Nothing).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("model.heads"), "{err}");

    let err = RunConfig::default().validate(Needs::Dataset).unwrap_err();
    assert!(err.to_string().contains("paths.dataset"), "{err}");

    let cfg = RunConfig::parse("[data]\nlookback = 10\n").unwrap();
    assert!(cfg.validate(Needs::Nothing).unwrap_err().to_string().contains("data.lookback"));

    let cfg = RunConfig::parse("[gradcheck]\nmodules = [\"mrp\", \"nope\"]\n").unwrap();
    assert!(cfg.validate(Needs::Nothing).unwrap_err().to_string().contains("nope"));

    assert!(RunConfig::parse("[run]\nprecision = 16\n").is_err());
}
