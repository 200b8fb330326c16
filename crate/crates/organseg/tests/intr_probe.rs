use std::time::Instant;

#[inline(never)]
#[target_feature(enable = "avx512f")]
unsafe fn axpy512(dst: &mut [f32], src: &[f32], a: f32) {
    use std::arch::x86_64::*;
    let n = dst.len();
    let va = _mm512_set1_ps(a);
    let mut i = 0;
    while i + 64 <= n {
        for k in 0..4 {
            let d = _mm512_loadu_ps(dst.as_ptr().add(i + k * 16));
            let s = _mm512_loadu_ps(src.as_ptr().add(i + k * 16));
            _mm512_storeu_ps(dst.as_mut_ptr().add(i + k * 16), _mm512_fmadd_ps(va, s, d));
        }
        i += 64;
    }
    while i < n {
        dst[i] += a * src[i];
        i += 1;
    }
}

#[test]
#[ignore]
fn intr_probe() {
    if !is_x86_feature_detected!("avx512f") { println!("no avx512"); return; }
    let w = 128usize;
    let reps = 4_000_000u64;
    let src: Vec<f32> = (0..w).map(|i| i as f32 * 0.001).collect();
    let mut dst = vec![0.0f32; w];
    let t = Instant::now();
    for r in 0..reps {
        unsafe { axpy512(&mut dst, &src, (r & 7) as f32 * 1e-9) };
    }
    let dt = t.elapsed().as_secs_f64();
    println!("axpy512 row128: {:.2} GFLOP/s", (reps as f64 * w as f64 * 2.0) / dt / 1e9);

    // long rows to test streaming
    let big = 1usize << 20;
    let srcb: Vec<f32> = (0..big).map(|i| i as f32 * 1e-6).collect();
    let mut dstb = vec![0.0f32; big];
    let t = Instant::now();
    for r in 0..200u64 {
        unsafe { axpy512(&mut dstb, &srcb, (r & 7) as f32 * 1e-9) };
    }
    let dt = t.elapsed().as_secs_f64();
    println!("axpy512 1M: {:.2} GFLOP/s", (200f64 * big as f64 * 2.0) / dt / 1e9);
}
