//! Benchmark-mode behavior on a loopback pair: the timing decomposition must
//! show gradient compute dominating server latency, and latency must grow
//! with the parameter count. Both checks live in one test function so the
//! measurements never run concurrently.

use ddq::harness::{bench_size, parse_arch, RunConfig};

fn sized_cfg(arch: &str, batch: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid_size = 5;
    cfg.input_width = 5;
    cfg.frame_count = 4;
    cfg.arch = parse_arch(arch).unwrap();
    cfg.hp.batch_size = batch;
    cfg.replay_capacity = 2000;
    cfg.warmup = 100;
    cfg.parallel = false;
    cfg
}

#[test]
fn timing_decomposition_and_latency_scaling() {
    // Desk-scale network: one worker's minibatch gradient takes far longer
    // than the server's apply. The margin is enormous (conv nets cost many
    // flops per parameter), so a factor of 10 is a safe floor.
    let desk = sized_cfg("conv:16x3s1,relu,fc:128,relu", 32);
    let row = bench_size("desk", &desk, 120).unwrap();
    let factor = row.gradient_us / row.latency_us;
    assert!(
        factor >= 10.0,
        "gradient {}us vs latency {}us: factor {factor:.1}",
        row.gradient_us,
        row.latency_us
    );
    assert!(row.predicted_saturation >= 10.0);

    // Apply latency grows with the model size: sweep three fc widths with
    // big parameter-count gaps so timing noise cannot reorder them.
    let mut last = (0usize, 0.0f64);
    for (label, arch) in [
        ("h64", "fc:64,relu"),
        ("h512", "fc:512,relu"),
        ("h2048", "fc:2048,relu"),
    ] {
        let cfg = sized_cfg(arch, 8);
        let row = bench_size(label, &cfg, 120).unwrap();
        assert!(
            row.params > last.0 && row.latency_us > last.1,
            "latency did not grow: {label} has {} params, {:.1}us after {:.1}us",
            row.params,
            row.latency_us,
            last.1
        );
        last = (row.params, row.latency_us);
    }
}
