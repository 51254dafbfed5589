use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use fb4_bench::outlier_tensor;
use fb4_core::baselines::{fake_quantize, Fp4Scheme};
use fb4_core::quant::{self, pack, unpack};
use fb4_core::{BlockLayout, Formatbook, LutSet, Selection};

fn tensors(c: &mut Criterion) {
    let fb = Formatbook::canonical();
    let luts = LutSet::build(&fb);
    let t = outlier_tensor(1024, 1024, 1);
    let mut g = c.benchmark_group("tensor_1m");
    g.throughput(Throughput::Elements(t.len() as u64));
    g.sample_size(20);
    for b in [16, 32] {
        let layout = BlockLayout::new(b, 8).unwrap();
        g.bench_with_input(BenchmarkId::new("fb4_grouped", b), &layout, |bch, l| {
            bch.iter(|| {
                quant::quantize_tensor(black_box(&t), l, &fb, &luts, Selection::Grouped).unwrap()
            })
        });
        g.bench_with_input(BenchmarkId::new("mxfp4", b), &b, |bch, &b| {
            bch.iter(|| fake_quantize(black_box(&t), b, Fp4Scheme::Mxfp4).unwrap())
        });
    }
    let layout = BlockLayout::default();
    g.bench_function("fb4_exact_32", |bch| {
        bch.iter(|| {
            quant::quantize_tensor(black_box(&t), &layout, &fb, &luts, Selection::Exact).unwrap()
        })
    });
    let qt = quant::quantize_tensor(&t, &layout, &fb, &luts, Selection::Grouped).unwrap();
    g.bench_function("dequantize_32", |bch| {
        bch.iter(|| quant::dequantize_tensor(black_box(&qt), &fb).unwrap())
    });
    let bytes = pack(&qt);
    g.bench_function("pack_32", |bch| bch.iter(|| pack(black_box(&qt))));
    g.bench_function("unpack_32", |bch| {
        bch.iter(|| unpack(black_box(&bytes), &fb).unwrap())
    });
    g.finish();
}

fn blocks(c: &mut Criterion) {
    let fb = Formatbook::canonical();
    let luts = LutSet::build(&fb);
    let t = outlier_tensor(1, 32, 2);
    let layout = BlockLayout::default();
    c.bench_function("block_grouped_32", |b| {
        b.iter(|| {
            quant::quantize_block(
                black_box(t.data()),
                &layout,
                &fb,
                &luts,
                Selection::Grouped,
                None,
            )
            .unwrap()
        })
    });
    let q = quant::quantize_block(t.data(), &layout, &fb, &luts, Selection::Grouped, None).unwrap();
    c.bench_function("int_dot_32", |b| {
        b.iter(|| quant::int_dot(black_box(&q), black_box(&q), &fb).unwrap())
    });
    c.bench_function("lut_build", |b| b.iter(|| LutSet::build(black_box(&fb))));
}

criterion_group!(benches, tensors, blocks);
criterion_main!(benches);
