use mrha_core::model::{init_parameters, ModelConfig};
use mrha_core::skeleton::{generate_sequence, ActivityClass, SynthOptions};
use mrha_core::stream::{run_stream, ReplaySource, StreamConfig};

fn falling(seconds: f64, index: usize) -> mrha_core::skeleton::SkeletonSequence {
    let mut opts = SynthOptions::new(1, 77);
    opts.duration = seconds;
    generate_sequence(ActivityClass::A43, index, &opts)
}

/// Paced replay at 24 fps through the reduced model at G = 64.
#[test]
fn tick_latency_budget_at_grid_64() {
    let mut model = ModelConfig::desk();
    model.input_grid = 64;
    let params = init_parameters(&model, 0).unwrap();
    let seq = falling(5.0, 2);
    let cfg = StreamConfig::default();
    let s = run_stream(ReplaySource::from_frames(seq.frames, true), &params, &cfg, |_| {}).unwrap();
    let p95 = s.p95_latency_ms.unwrap();
    println!("ticks {} p95 {p95:.1} ms max {:.1} ms", s.ticks, s.max_latency_ms.unwrap());
    assert!(s.ticks >= 6);
    assert!(p95 < 100.0, "p95 tick latency {p95} ms");
}
