use criterion::{criterion_group, criterion_main, Criterion};
use instenc_core::exec;
use instenc_tensor::{ops, seeded_init, Init};

fn kernels(c: &mut Criterion) {
    let g = Init::Gaussian { mean: 0.0, std: 1.0 };
    let a = seeded_init(&[512, 256], g, 1).unwrap();
    let b = seeded_init(&[256, 256], g, 2).unwrap();
    let x = seeded_init(&[64, 1, 32, 32], g, 3).unwrap();
    let k = seeded_init(&[64, 1, 4, 4], g, 4).unwrap();
    let p = seeded_init(&[1024, 32], g, 5).unwrap();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    group.bench_function("matmul_512x256x256/parallel", |bn| bn.iter(|| ops::matmul(&a, &b).unwrap()));
    group.bench_function("matmul_512x256x256/sequential", |bn| {
        bn.iter(|| exec::sequential(|| ops::matmul(&a, &b).unwrap()))
    });
    group.bench_function("conv_64x32x32_p4/parallel", |bn| bn.iter(|| ops::conv_nonoverlap(&x, &k).unwrap()));
    group.bench_function("conv_64x32x32_p4/sequential", |bn| {
        bn.iter(|| exec::sequential(|| ops::conv_nonoverlap(&x, &k).unwrap()))
    });
    group.bench_function("sq_dist_1024x32/parallel", |bn| bn.iter(|| ops::sq_dist(&p, &p).unwrap()));
    group.bench_function("sq_dist_1024x32/sequential", |bn| {
        bn.iter(|| exec::sequential(|| ops::sq_dist(&p, &p).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
