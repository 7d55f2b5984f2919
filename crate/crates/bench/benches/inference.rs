use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use roadwatch::bench::synthetic_window;
use roadwatch::flow::flow_stack;
use roadwatch::{Model, ModelConfig, Tensor};

fn window(c: &mut Criterion) {
    let mut g = c.benchmark_group("window");
    g.sample_size(10);
    for name in ["rgb_only", "trainable_twostream"] {
        let model = Model::build(ModelConfig::preset(name).unwrap(), 0).unwrap();
        let frames = synthetic_window(&model, 0).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| {
                let flow = model.two_stream().then(|| flow_stack(&frames, &model.config.flow).unwrap());
                let rgb = Tensor::stack(&frames).unwrap();
                model.predict(black_box(&rgb), flow.as_ref()).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, window);
criterion_main!(benches);
