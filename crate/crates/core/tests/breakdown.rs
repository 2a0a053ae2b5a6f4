use flowbench::bench::{run_variant, BenchConfig};
use flowbench::clock::ClockMode;
use flowbench::device::BackendRegistry;
use flowbench::pipeline::PipelineVariant;
use flowbench::tracer::{Chain, SegmentClass};
use proptest::prelude::*;

fn small(variant: PipelineVariant) -> BenchConfig {
    let mut cfg = BenchConfig::from_toml_str(
        r#"
        [source]
        width = 48
        height = 32
        rate_hz = 200.0
        [camera]
        fx = 40.0
        fy = 40.0
        cx = 23.5
        cy = 15.5
        k1 = -0.2
        [resize]
        out_width = 24
        out_height = 16
        "#,
    )
    .unwrap();
    cfg.run.variants = vec![variant];
    cfg
}

fn check_partition(chains: &[Chain]) -> Result<(), TestCaseError> {
    prop_assert!(!chains.is_empty());
    for c in chains {
        let sum: u64 = c.segments.iter().map(|s| s.duration_ns).sum();
        prop_assert_eq!(sum, c.end_to_end_ns, "frame {}", c.seq);
        prop_assert_eq!(
            c.total(SegmentClass::Messaging) + c.total(SegmentClass::Compute),
            c.end_to_end_ns
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segments_partition_every_model_chain(
        v in 0usize..4,
        layer_fixed in 0u64..200_000,
        layer_per_byte in 0.0f64..5.0,
        h2d_per_byte in 0.0f64..5.0,
        launch_fixed in 0u64..100_000,
        host_rectify in 0.0f64..100.0,
        beat in 0.0f64..500.0,
        zero_copy in any::<bool>(),
        messages in 6u64..20,
    ) {
        let variant = PipelineVariant::ALL[v];
        let mut cfg = small(variant);
        cfg.set_messages(messages);
        cfg.run.zero_copy = zero_copy;
        let c = &mut cfg.cost_model;
        c.layer_fixed_ns = layer_fixed;
        c.layer_per_byte_ns = layer_per_byte;
        c.h2d_per_byte_ns = h2d_per_byte;
        c.launch_fixed_ns = launch_fixed;
        c.host_per_pixel_ns.insert("rectify".into(), host_rectify);
        c.stream_per_beat_ns = beat;
        let run = run_variant(&cfg, variant, &BackendRegistry::builtin()).unwrap();
        prop_assert_eq!(run.chains.len() as u64, messages - 5);
        check_partition(&run.chains)?;
        let m = run.report.messaging_fraction.unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn segments_partition_every_real_chain() {
    for variant in PipelineVariant::ALL {
        let mut cfg = small(variant);
        cfg.run.mode = ClockMode::Real;
        cfg.set_messages(25);
        let run = run_variant(&cfg, variant, &BackendRegistry::builtin()).unwrap();
        assert_eq!(run.chains.len(), 20, "{variant}");
        check_partition(&run.chains).unwrap();
    }
}
