// conv kernel throughput at each layer shape of the reduced preset
use conrec::numerics::ops::{conv2d, conv2d_backward, Padding};
use conrec::Tensor;
use std::time::Instant;

fn bench(name: &str, n: usize, s: usize, cin: usize, cout: usize) {
    let x = Tensor::<f32>::from_fn(&[n, s, s, cin], |i| ((i * 2654435761) % 1000) as f32 / 1000.0 - 0.3);
    let k = Tensor::<f32>::from_fn(&[3, 3, cin, cout], |i| ((i * 40503) % 1000) as f32 / 1000.0 - 0.5);
    let b = Tensor::<f32>::zeros(&[cout]);
    let macs = (n * s * s * 9 * cin * cout) as f64;

    let t = Instant::now();
    let mut reps = 0;
    while t.elapsed().as_secs_f64() < 0.3 {
        let y = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        std::hint::black_box(&y);
        reps += 1;
    }
    let fwd = t.elapsed().as_secs_f64() / reps as f64;

    let dout = Tensor::<f32>::from_fn(&[n, s, s, cout], |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5);
    let t = Instant::now();
    let mut reps_b = 0;
    while t.elapsed().as_secs_f64() < 0.3 {
        let g = conv2d_backward(&x, &k, 1, Padding::Same, &dout);
        std::hint::black_box(&g);
        reps_b += 1;
    }
    let bwd = t.elapsed().as_secs_f64() / reps_b as f64;
    println!(
        "{name:<24} fwd {:>7.2} ms ({:>5.1} GF/s)   bwd {:>7.2} ms ({:>5.1} GF/s)",
        fwd * 1e3,
        2.0 * macs / fwd / 1e9,
        bwd * 1e3,
        2.0 * 3.0 * macs / bwd / 1e9
    );
}

fn main() {
    bench("enc.s0 (64px 1->4)", 32, 64, 1, 4);
    bench("enc.s0 (64px 4->4)", 32, 64, 4, 4);
    bench("enc.s1 (32px 8->8)", 32, 32, 8, 8);
    bench("enc.s2 (16px 16->16)", 32, 16, 16, 16);
    bench("enc.s3 (8px 32->32)", 32, 8, 32, 32);
    bench("bott  (4px 64->64)", 32, 4, 64, 64);
    bench("dec.s3 (8px 64->32)", 32, 8, 64, 32);
    bench("dec.s0 (64px 8->4)", 32, 64, 8, 4);
}
