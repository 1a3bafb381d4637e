use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddl_vad::clipio::FrameSequence;
use ddl_vad::losses::LossConfig;
use ddl_vad::masking::full_frame_fallback;
use ddl_vad::model::{init_params, ModelConfig};
use ddl_vad::nn::conv3x3_forward;
use ddl_vad::par::{self, Exec};
use ddl_vad::pseudo::{sample_noise, AnomalyWeight};
use ddl_vad::scoring::{score_video, ScoringConfig};
use ddl_vad::training::{loss_and_grads, Sample};
use ddl_vad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[8, 16, 64, 64], &mut rng);
    let w = random(&[16, 16, 3, 3], &mut rng);
    let b = Tensor::zeros(&[16]);
    let mut g = c.benchmark_group("conv3x3_8x16x64x64");
    for (name, exec) in MODES {
        par::set_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |bch| bch.iter(|| conv3x3_forward(&x, &w, &b)));
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = init_params(&ModelConfig { base_channels: 8, ..ModelConfig::default() }).unwrap();
    let samples: Vec<Sample> = (0..4)
        .map(|_| {
            let clip = random(&[1, 3, 64, 64], &mut rng);
            let noise = sample_noise(&[1, 3, 64, 64], &mut rng);
            Sample { clip, pseudo: Some((noise, full_frame_fallback((1, 3, 64, 64)))) }
        })
        .collect();
    let cfg = LossConfig::default();
    let mut g = c.benchmark_group("loss_and_grads_b4_64x64");
    g.sample_size(10);
    for (name, exec) in MODES {
        par::set_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| loss_and_grads(&model, Some(AnomalyWeight::dynamic()), &samples, &cfg).unwrap())
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = init_params(&ModelConfig { base_channels: 8, ..ModelConfig::default() }).unwrap();
    let seq = FrameSequence::new(random(&[1, 24, 64, 64], &mut rng), "bench").unwrap();
    let cfg = ScoringConfig::default();
    let mut g = c.benchmark_group("score_video_24x64x64");
    g.sample_size(10);
    for (name, exec) in MODES {
        par::set_exec(exec);
        g.bench_function(BenchmarkId::from_parameter(name), |bch| bch.iter(|| score_video(&model, &seq, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, train_step, scoring);
criterion_main!(benches);
