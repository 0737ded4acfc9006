use criterion::{criterion_group, criterion_main, Criterion};

use nerfedit::config::CoeffRanges;
use nerfedit::exec::{map_range, ExecPolicy};
use nerfedit::scene::{render_reference_with, sample_scene_coeffs, RenderOptions};

fn render(c: &mut Criterion) {
    let specs = sample_scene_coeffs(3, 8, 8, &CoeffRanges::default()).unwrap();
    let mut g = c.benchmark_group("render");
    g.sample_size(10);
    for (label, exec) in [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)] {
        let opts = RenderOptions { samples_per_ray: 48, exec };
        g.bench_function(format!("one_image_64px/{label}"), |b| {
            b.iter(|| render_reference_with(&specs[0].coeffs, 64, opts).unwrap())
        });
        let inner = RenderOptions { exec: ExecPolicy::Sequential, ..opts };
        g.bench_function(format!("batch_of_8_32px/{label}"), |b| {
            b.iter(|| map_range(exec, specs.len(), |i| render_reference_with(&specs[i].coeffs, 32, inner).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, render);
criterion_main!(benches);
