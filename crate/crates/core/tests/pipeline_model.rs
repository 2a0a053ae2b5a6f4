//! Model-mode latencies against closed forms written from the cost model's
//! documented semantics.

use flowbench::bench::{run, BenchConfig};
use flowbench::device::CostModel;
use flowbench::kernels::IMAGE_HEADER_LEN;
use flowbench::pipeline::PipelineVariant;
use proptest::prelude::*;

const RAW_PX: f64 = 640.0 * 480.0;
const OUT_PX: f64 = 320.0 * 240.0;

fn fixed(ns: u64) -> f64 {
    ns as f64
}

/// Six layer crossings of one message of `px` mono pixels.
fn hop(c: &CostModel, px: f64) -> f64 {
    6.0 * (fixed(c.layer_fixed_ns) + (c.layer_per_byte_ns * (px + IMAGE_HEADER_LEN as f64)).round())
}

fn h2d(c: &CostModel, px: f64) -> f64 {
    fixed(c.h2d_fixed_ns) + (c.h2d_per_byte_ns * px).round()
}

fn d2h(c: &CostModel, px: f64) -> f64 {
    fixed(c.d2h_fixed_ns) + (c.d2h_per_byte_ns * px).round()
}

fn launch(c: &CostModel, kernel: &str, px: f64) -> f64 {
    fixed(c.launch_fixed_ns) + (c.per_pixel_ns[kernel] * px).round()
}

fn host(c: &CostModel, kernel: &str, px: f64) -> f64 {
    (c.host_per_pixel_ns[kernel] * px).round()
}

fn stream(c: &CostModel, px: f64) -> f64 {
    let width = c.stream_beat_bytes as f64;
    let beats = (8.0 / width).ceil() + (px / width).ceil();
    (c.stream_per_beat_ns * beats).round()
}

fn closed_form(c: &CostModel, v: PipelineVariant) -> f64 {
    let raw = hop(c, RAW_PX);
    let out = hop(c, OUT_PX);
    match v {
        PipelineVariant::CpuBaseline => {
            raw + host(c, "rectify", RAW_PX) + hop(c, RAW_PX) + host(c, "resize", OUT_PX) + out
        }
        PipelineVariant::AccelPerNode => {
            raw + h2d(c, RAW_PX)
                + launch(c, "rectify", RAW_PX)
                + d2h(c, RAW_PX)
                + hop(c, RAW_PX)
                + h2d(c, RAW_PX)
                + launch(c, "resize", OUT_PX)
                + d2h(c, OUT_PX)
                + out
        }
        PipelineVariant::AccelFused => {
            raw + h2d(c, RAW_PX) + launch(c, "rectify_resize", OUT_PX) + d2h(c, OUT_PX) + out
        }
        PipelineVariant::AccelStreaming => {
            raw + h2d(c, RAW_PX)
                + launch(c, "rectify", RAW_PX)
                + stream(c, RAW_PX)
                + launch(c, "resize", OUT_PX)
                + d2h(c, OUT_PX)
                + out
        }
    }
}

fn model_config(messages: u64) -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.set_messages(messages);
    cfg
}

#[test]
fn every_frame_matches_the_closed_form() {
    let cfg = model_config(12);
    let r = run(&cfg).unwrap();
    for v in &r.variants {
        let want = closed_form(&cfg.cost_model, v.variant);
        let e = &v.end_to_end;
        assert_eq!(e.mean_ns, want, "{}", v.variant);
        assert_eq!((e.p50_ns as f64, e.max_ns as f64), (want, want), "{}", v.variant);
    }
}

#[test]
fn calibrated_speedups_and_ordering() {
    let c = CostModel::preset("paper-calibrated").unwrap();
    let t = |v| closed_form(&c, v);
    let base = t(PipelineVariant::CpuBaseline);
    let sp = |v| (base - t(v)) / base * 100.0;
    for (v, target) in [
        (PipelineVariant::AccelPerNode, 6.22),
        (PipelineVariant::AccelFused, 26.96),
        (PipelineVariant::AccelStreaming, 24.42),
    ] {
        assert!((sp(v) - target).abs() <= 0.1, "{v}: {}", sp(v));
    }
    assert!(t(PipelineVariant::AccelFused) < t(PipelineVariant::AccelStreaming));
    assert!(t(PipelineVariant::AccelStreaming) < t(PipelineVariant::AccelPerNode));
    assert!(t(PipelineVariant::AccelPerNode) < base);
}

#[test]
fn messaging_bottleneck_preset_is_messaging_bound() {
    let mut cfg = BenchConfig::from_toml_str("[cost_model]\npreset = \"messaging-bottleneck\"\n[run]\nvariants = [\"cpu\"]\n")
        .unwrap();
    cfg.set_messages(10);
    let r = run(&cfg).unwrap();
    let v = &r.variants[0];
    assert!(v.messaging_fraction.unwrap() >= 0.70, "{:?}", v.messaging_fraction);
    assert_eq!(v.end_to_end.mean_ns, closed_form(&cfg.cost_model, PipelineVariant::CpuBaseline));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn slower_uploads_never_speed_up_per_node_offload(a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let time = |rate: f64| {
            let mut cfg = model_config(6);
            cfg.run.variants = vec![PipelineVariant::AccelPerNode];
            cfg.cost_model.h2d_per_byte_ns = rate;
            run(&cfg).unwrap().variants[0].end_to_end.mean_ns
        };
        prop_assert!(time(lo) <= time(hi));
    }
}
