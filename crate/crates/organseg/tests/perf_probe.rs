// temporary perf probe
use organseg::shapenet::{default_architecture, train, LabeledShape, Tensor, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn perf_probe() {
    let net = default_architecture(1);
    let side = 128usize;
    let data: Vec<f32> = (0..side * side).map(|i| ((i * 31) % 97) as f32 / 97.0).collect();
    let batch = Tensor::new(vec![1, side, side, 1], data.clone()).unwrap();

    // warmup
    for _ in 0..3 { net.forward_eval(&batch).unwrap(); }

    let n = 40;
    let t = Instant::now();
    for _ in 0..n { net.forward_eval(&batch).unwrap(); }
    let fwd = t.elapsed().as_secs_f64() / n as f64;
    println!("forward(batch=1): {:.2} ms  ({:.1} GFLOP/s at 127 MFLOP)", fwd * 1e3, 0.127 / fwd);

    // batched forward
    let bsz = 16usize;
    let bigः: Vec<f32> = (0..bsz * side * side).map(|i| ((i * 31) % 97) as f32 / 97.0).collect();
    let bigt = Tensor::new(vec![bsz, side, side, 1], bigः).unwrap();
    let t = Instant::now();
    for _ in 0..4 { net.forward_eval(&bigt).unwrap(); }
    let fwd16 = t.elapsed().as_secs_f64() / (4 * bsz) as f64;
    println!("forward(batch=16): {:.2} ms/sample", fwd16 * 1e3);

    // train step throughput: 32 samples, 2 epochs
    let samples: Vec<LabeledShape> = (0..32)
        .map(|i| LabeledShape { pixels: data.clone(), label: i % 6 })
        .collect();
    let cfg = TrainConfig { epochs: 2, seed: 1, ..TrainConfig::default() };
    let t = Instant::now();
    train(&net, &samples, &cfg).unwrap();
    let per_sample_step = t.elapsed().as_secs_f64() / 64.0;
    println!("train step: {:.2} ms/sample-epoch", per_sample_step * 1e3);
}
