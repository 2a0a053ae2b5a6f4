use flowbench::bench::{run_variant, BenchConfig};
use flowbench::device::BackendRegistry;
use flowbench::pipeline::PipelineVariant;
use flowbench::tracer::{export, read_csv, TraceFormat};

fn dump_of(variant: PipelineVariant) -> flowbench::tracer::TraceDump {
    let mut cfg = BenchConfig::from_toml_str(
        "[source]\nwidth = 32\nheight = 24\n[camera]\nfx = 30.0\nfy = 30.0\ncx = 15.5\ncy = 11.5\n[resize]\nout_width = 16\nout_height = 12\n",
    )
    .unwrap();
    cfg.set_messages(8);
    run_variant(&cfg, variant, &BackendRegistry::builtin()).unwrap().dump.unwrap()
}

#[test]
fn csv_export_round_trips_a_pipeline_trace() {
    let dir = tempfile::tempdir().unwrap();
    for v in PipelineVariant::ALL {
        let dump = dump_of(v);
        let path = dir.path().join(format!("{v}.csv"));
        export(&dump, TraceFormat::Csv, &path).unwrap();
        let rows = read_csv(&path).unwrap();
        assert_eq!(rows.len(), dump.events.len(), "{v}");
        for (r, e) in rows.iter().zip(&dump.events) {
            assert_eq!((r.ts_ns, Some(r.tp), r.node, r.seq, r.arg), (e.ts, e.tracepoint(), e.node, e.seq, e.arg));
        }
    }
}

#[test]
fn chrome_export_is_a_loadable_event_array() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dump_of(PipelineVariant::AccelPerNode);
    let path = dir.path().join("t.json");
    export(&dump, TraceFormat::ChromeJson, &path).unwrap();
    let events: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(!events.is_empty());
    for e in &events {
        let ph = e["ph"].as_str().unwrap();
        assert!(["X", "i", "B", "M"].contains(&ph), "{ph}");
        assert!(e["name"].is_string() && e["pid"].is_number());
        if ph == "X" {
            assert!(e["dur"].as_f64().unwrap() >= 0.0);
        }
    }
    let names: Vec<&str> = events.iter().filter_map(|e| e["name"].as_str()).collect();
    for expected in ["callback rectify", "h2d", "kernel", "d2h", "client_publish"] {
        assert!(names.contains(&expected), "{expected}");
    }
}
