use super::*;

fn small(variants: &[PipelineVariant], messages: u64) -> BenchConfig {
    let mut cfg = BenchConfig::from_toml_str(
        r#"
        [source]
        width = 64
        height = 48
        rate_hz = 100.0
        [camera]
        fx = 50.0
        fy = 50.0
        cx = 31.5
        cy = 23.5
        k1 = -0.2
        [resize]
        out_width = 32
        out_height = 24
        "#,
    )
    .unwrap();
    cfg.run.variants = variants.to_vec();
    cfg.set_messages(messages);
    cfg
}

#[test]
fn speedup_definition() {
    assert!((speedup(10_000_000.0, 7_558_000.0).unwrap() - 24.42).abs() < 1e-9);
    assert_eq!(speedup(5.0, 5.0).unwrap(), 0.0);
    assert_eq!(speedup(100.0, 150.0).unwrap(), -50.0);
    assert!(speedup(0.0, 1.0).is_err());
}

#[test]
fn warmup_is_excluded() {
    let cfg = small(&[PipelineVariant::CpuBaseline], 100);
    let r = run(&cfg).unwrap();
    let v = &r.variants[0];
    assert_eq!(v.frames, 95);
    assert_eq!(v.breakdown.as_ref().unwrap().frames, 95);
    assert_eq!(r.speedup_pct(PipelineVariant::CpuBaseline), Some(0.0));
}

#[test]
fn tracing_disabled_reports_sink_latency_only() {
    let mut cfg = small(&[PipelineVariant::AccelFused], 20);
    cfg.tracing.enabled = false;
    let r = run(&cfg).unwrap();
    let v = &r.variants[0];
    assert_eq!(v.frames, 15);
    assert!(v.breakdown.is_none() && v.messaging_fraction.is_none());
    assert!(v.end_to_end.mean_ns > 0.0);
    assert!(r.comparisons.is_empty());
}

#[test]
fn fractions_are_a_partition() {
    let r = run(&small(&PipelineVariant::ALL, 12)).unwrap();
    for v in &r.variants {
        let (m, c) = (v.messaging_fraction.unwrap(), v.compute_fraction.unwrap());
        assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&c));
        assert!((m + c - 1.0).abs() < 1e-12);
        assert!((v.transfers_per_frame - v.variant.transfers_per_frame() as f64).abs() < 1e-12);
    }
}

#[test]
fn model_runs_are_deterministic() {
    let cfg = small(&PipelineVariant::ALL, 10);
    let mut a = run(&cfg).unwrap();
    let mut b = run(&cfg).unwrap();
    a.metadata.generated_at = 0;
    b.metadata.generated_at = 0;
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn all_variants_produce_the_same_output() {
    let r = run(&small(&PipelineVariant::ALL, 8)).unwrap();
    let d = &r.variants[0].output_digest;
    assert!(r.variants.iter().all(|v| &v.output_digest == d));
}

#[test]
fn too_much_warmup_is_a_runtime_error() {
    let mut cfg = small(&[PipelineVariant::CpuBaseline], 3);
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, BenchError::Trace(TraceError::NoCompleteChains { .. })), "{err}");
    assert_eq!(err.exit_code(), 3);
    cfg.tracing.enabled = false;
    assert_eq!(run(&cfg).unwrap_err().exit_code(), 3);
}

#[test]
fn report_round_trips_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&PipelineVariant::ALL, 8);
    cfg.run.out = Some(dir.path().join("r.json"));
    cfg.run.trace_out = Some(dir.path().join("traces"));
    let r = run(&cfg).unwrap();
    for v in &r.variants {
        assert!(v.trace_file.as_ref().unwrap().exists());
    }
    let loaded = BenchmarkReport::load(&dir.path().join("r.json")).unwrap();
    assert_eq!(loaded, r);
    let t = compare(&r, &loaded).unwrap();
    assert_eq!(t.rows.len(), 4);
    for row in &t.rows {
        assert_eq!(row.delta_ns, 0.0);
        assert_eq!(row.speedup_pct, 0.0);
        assert!(!row.segments.is_empty());
        assert!(row.segments.iter().all(|s| s.delta_ns == 0.0));
    }
    assert!(!format_comparison(&t).is_empty());
    assert!(format_report(&r).contains("streaming"));
}

#[test]
fn compare_errors() {
    let cpu = run(&small(&[PipelineVariant::CpuBaseline], 8)).unwrap();
    let fused = run(&small(&[PipelineVariant::AccelFused], 8)).unwrap();
    assert!(compare(&cpu, &fused).is_err());
    let pair = compare_pair(&cpu, PipelineVariant::CpuBaseline, &fused, PipelineVariant::AccelFused).unwrap();
    assert!(pair.rows[0].speedup_pct > 0.0);
    assert!(compare_pair(&cpu, PipelineVariant::AccelFused, &fused, PipelineVariant::AccelFused).is_err());

    let mut json: serde_json::Value = serde_json::from_str(&cpu.to_json()).unwrap();
    json["schema_version"] = 99.into();
    assert!(BenchmarkReport::from_json(&json.to_string()).is_err());
    assert!(BenchmarkReport::from_json("{\"schema_version\": 1}").is_err());
    assert!(BenchmarkReport::from_json("nope").is_err());
}

#[test]
fn duration_stop_in_model_mode() {
    let mut cfg = small(&[PipelineVariant::CpuBaseline], 1);
    cfg.set_duration_s(0.2);
    let r = run(&cfg).unwrap();
    // 100 Hz for 0.2 s, minus warm-up
    assert!((14..=16).contains(&r.variants[0].frames), "{}", r.variants[0].frames);
}

#[test]
fn calibrated_preset_hits_the_target_speedups() {
    let mut cfg = BenchConfig::default();
    cfg.set_messages(10);
    let r = run(&cfg).unwrap();
    let sp = |v| r.speedup_pct(v).unwrap();
    for (v, target) in [
        (PipelineVariant::AccelPerNode, 6.22),
        (PipelineVariant::AccelFused, 26.96),
        (PipelineVariant::AccelStreaming, 24.42),
    ] {
        assert!((sp(v) - target).abs() <= 0.1, "{v}: {}", sp(v));
    }
}

#[test]
fn rounds_pool_frames() {
    let mut cfg = small(&[PipelineVariant::CpuBaseline, PipelineVariant::AccelFused], 10);
    cfg.run.rounds = 3;
    let r = run(&cfg).unwrap();
    for v in &r.variants {
        assert_eq!(v.frames, 15);
        assert_eq!(v.breakdown.as_ref().unwrap().frames, 15);
    }
    assert_eq!(r.variants[0].output_digest, r.variants[1].output_digest);
    let one = run_variant(&cfg, PipelineVariant::CpuBaseline, &BackendRegistry::builtin()).unwrap();
    assert_eq!(one.chains.len(), 15);
    assert_eq!(one.report.end_to_end, r.variants[0].end_to_end);
}
