//! Parallel and sequential execution must agree bit for bit. The mode is a
//! process-wide switch, so this file holds a single test.

use ddl_vad::clipio::FrameSequence;
use ddl_vad::losses::LossConfig;
use ddl_vad::masking::full_frame_fallback;
use ddl_vad::model::{init_params, ModelConfig};
use ddl_vad::par::{self, Exec};
use ddl_vad::pseudo::{sample_noise, AnomalyWeight};
use ddl_vad::scoring::{score_video, ScoringConfig};
use ddl_vad::training::{loss_and_grads, Sample};
use ddl_vad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sequential_and_parallel_results_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = init_params(&ModelConfig { base_channels: 4, depth: 2, seed: 2, ..ModelConfig::default() }).unwrap();
    let samples: Vec<Sample> = (0..3)
        .map(|_| {
            let clip = Tensor::from_vec(&[1, 3, 32, 32], (0..3 * 32 * 32).map(|_| rng.random()).collect()).unwrap();
            let noise = sample_noise(&[1, 3, 32, 32], &mut rng);
            Sample { clip, pseudo: Some((noise, full_frame_fallback((1, 3, 32, 32)))) }
        })
        .collect();
    let frames = Tensor::from_vec(&[1, 12, 32, 32], (0..12 * 32 * 32).map(|_| rng.random()).collect()).unwrap();
    let seq = FrameSequence::new(frames, "v").unwrap();

    let run = |exec: Exec| {
        par::set_exec(exec);
        par::with_threads(Some(3), || {
            let g = loss_and_grads(&model, Some(AnomalyWeight::dynamic()), &samples, &LossConfig::default()).unwrap();
            let s = score_video(&model, &seq, &ScoringConfig::default()).unwrap();
            (g.loss, g.grads, g.d_ell, s)
        })
    };
    let seq_out = run(Exec::Sequential);
    let par_out = run(Exec::Parallel);
    par::set_exec(Exec::Parallel);
    assert_eq!(seq_out.0, par_out.0);
    assert_eq!(seq_out.1, par_out.1);
    assert_eq!(seq_out.2, par_out.2);
    assert_eq!(seq_out.3, par_out.3);
}
