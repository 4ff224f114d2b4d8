// temporary benchmark — measures the sinc-shaped conv1d and block-1-shaped conv2d
use std::time::Instant;
use spoofmamba::numerics::kernels;

fn main() {
    let l = 64600 - 128; // 64472
    let x: Vec<f32> = (0..l).map(|i| ((i as f32) * 0.001).sin()).collect();
    let w: Vec<f32> = (0..70 * 129).map(|i| ((i as f32) * 0.01).cos()).collect();

    // sinc-shaped conv1d: Cin=1, L=64472... actually input L=64600, K=129, out 64472
    let xin: Vec<f32> = (0..64600).map(|i| ((i as f32) * 0.001).sin()).collect();
    let t0 = Instant::now();
    let mut out = Vec::new();
    let iters = 5;
    for _ in 0..iters {
        out = kernels::conv1d(&xin, &w, 1, 64600, 70, 129, 1, 0, 0, 1);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    let macs = 70.0 * 129.0 * 64472.0;
    println!("sinc conv1d fwd: {:.1} ms, {:.2} GMAC/s ({:.2} GFLOP/s)", dt * 1e3, macs / dt / 1e9, 2.0 * macs / dt / 1e9);
    std::hint::black_box(&out);

    // grad_w for sinc (argmax-pruned in real use; here full for bound)
    let g: Vec<f32> = (0..70 * 64472).map(|i| (i as f32 * 1e-6).sin()).collect();
    let t0 = Instant::now();
    let dw = kernels::conv1d_grad_w(&xin, &g, 1, 64600, 70, 129, 1, 0, 0, 1);
    let dt = t0.elapsed().as_secs_f64();
    println!("sinc conv1d grad_w: {:.1} ms, {:.2} GMAC/s", dt * 1e3, macs / dt / 1e9);
    std::hint::black_box(&dw);

    // B1-shaped conv2d: 32ch 3x3 over 23x238
    let (c, h, wd) = (32usize, 23usize, 238usize);
    let x2: Vec<f32> = (0..c * h * wd).map(|i| (i as f32 * 1e-4).sin()).collect();
    let w2: Vec<f32> = (0..32 * c * 9).map(|i| (i as f32 * 1e-3).cos()).collect();
    let t0 = Instant::now();
    let iters = 20;
    let mut o2 = Vec::new();
    for _ in 0..iters {
        o2 = kernels::conv2d(&x2, &w2, c, h, wd, 32, 3, 3, 1);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    let macs2 = 32.0 * (c as f64) * 9.0 * (h as f64) * (wd as f64);
    println!("conv2d 32->32 @23x238 fwd: {:.2} ms, {:.2} GMAC/s", dt * 1e3, macs2 / dt / 1e9);
    std::hint::black_box(&o2);

    // res2net-ish conv2d: w=58 3x3 over 23x29
    let (c3, h3, w3) = (58usize, 23usize, 29usize);
    let x3: Vec<f32> = (0..c3 * h3 * w3).map(|i| (i as f32 * 1e-4).sin()).collect();
    let wt3: Vec<f32> = (0..c3 * c3 * 9).map(|i| (i as f32 * 1e-3).cos()).collect();
    let t0 = Instant::now();
    let iters = 100;
    let mut o3 = Vec::new();
    for _ in 0..iters {
        o3 = kernels::conv2d(&x3, &wt3, c3, h3, w3, c3, 3, 3, 1);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    let macs3 = (c3 as f64) * (c3 as f64) * 9.0 * (h3 as f64) * (w3 as f64);
    println!("conv2d 58->58 @23x29 fwd: {:.2} ms, {:.2} GMAC/s", dt * 1e3, macs3 / dt / 1e9);
    std::hint::black_box(&o3);
}
