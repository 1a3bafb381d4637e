//! Finite-difference checks of every analytic gradient in the training path.

use ddl_vad::losses::{distinction_loss, LossConfig};
use ddl_vad::masking::MaskSequence;
use ddl_vad::model::{init_params, ModelConfig, ModelState};
use ddl_vad::pseudo::{blend_noise, compose_pseudo, sample_noise, weight_sensitivity, AnomalyWeight};
use ddl_vad::training::{loss_and_grads, Sample};
use ddl_vad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig { base_channels: 4, depth: 2, frames: 3, seed: 11, ..ModelConfig::default() }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Box mask over `y0..y1, x0..x1` on every frame of a `(1, T, H, W)` clip.
fn box_mask(t: usize, h: usize, w: usize, (y0, y1, x0, x1): (usize, usize, usize, usize)) -> MaskSequence {
    let mut m = Tensor::zeros(&[1, t, h, w]);
    for f in 0..t {
        for y in y0..y1 {
            for x in x0..x1 {
                m.data_mut()[(f * h + y) * w + x] = 1.0;
            }
        }
    }
    MaskSequence { mask: m, object_id: Some(0) }
}

fn samples(rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let boxes = [(2, 9, 3, 11), (6, 14, 5, 13)];
    boxes
        .iter()
        .map(|&b| {
            let clip = uniform(&[1, 3, 16, 16], rng);
            let noise = sample_noise(&[1, 3, 16, 16], rng);
            Sample { clip, pseudo: Some((noise, box_mask(3, 16, 16, b))) }
        })
        .collect()
}

fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + 1e-9
}

fn total(model: &ModelState, w: AnomalyWeight, s: &[Sample], cfg: &LossConfig) -> f64 {
    loss_and_grads(model, Some(w), s, cfg).unwrap().loss.total
}

#[test]
fn total_loss_gradient_wrt_ell() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = init_params(&tiny()).unwrap();
    let s = samples(&mut rng);
    let cfg = LossConfig::default();
    for ell in [-1.3, 0.0, 0.8] {
        let w = AnomalyWeight { ell, trainable: true };
        let analytic = loss_and_grads(&model, Some(w), &s, &cfg).unwrap().d_ell;
        let h = 1e-4;
        let up = total(&model, AnomalyWeight { ell: ell + h, ..w }, &s, &cfg);
        let dn = total(&model, AnomalyWeight { ell: ell - h, ..w }, &s, &cfg);
        let numeric = (up - dn) / (2.0 * h);
        assert!(close(analytic, numeric, 1e-3), "ell={ell}: analytic {analytic} vs numeric {numeric}");
        assert!(analytic != 0.0);
    }
}

#[test]
fn total_loss_gradient_wrt_sampled_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = init_params(&tiny()).unwrap();
    let s = samples(&mut rng);
    let cfg = LossConfig::default();
    let w = AnomalyWeight::dynamic();
    let grads = loss_and_grads(&model, Some(w), &s, &cfg).unwrap().grads;
    let trainable: Vec<usize> = (0..model.params.len()).filter(|&i| model.params[i].trainable).collect();
    let h = 1e-5;
    let mut checked = 0;
    let mut pick = ChaCha8Rng::seed_from_u64(3);
    while checked < 20 {
        let p = trainable[pick.random_range(0..trainable.len())];
        let j = pick.random_range(0..model.params[p].value.len());
        let orig = model.params[p].value.data()[j];
        model.params[p].value.data_mut()[j] = orig + h;
        let up = total(&model, w, &s, &cfg);
        model.params[p].value.data_mut()[j] = orig - h;
        let dn = total(&model, w, &s, &cfg);
        model.params[p].value.data_mut()[j] = orig;
        let numeric = (up - dn) / (2.0 * h);
        let analytic = grads[p].data()[j];
        assert!(
            close(analytic, numeric, 1e-2),
            "{}[{j}]: analytic {analytic} vs numeric {numeric}",
            model.params[p].name
        );
        checked += 1;
    }
}

#[test]
fn reconstruction_only_gradient_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = init_params(&tiny()).unwrap();
    let s: Vec<Sample> = samples(&mut rng).into_iter().map(|x| Sample { pseudo: None, ..x }).collect();
    let cfg = LossConfig::default();
    let sg = loss_and_grads(&model, None, &s, &cfg).unwrap();
    assert!(sg.loss.dist.is_none());
    assert_eq!(sg.d_ell, 0.0);
    let idx = model.params.iter().position(|p| p.name == "head.weight").unwrap();
    let h = 1e-5;
    for j in [0, 7, 20] {
        let orig = model.params[idx].value.data()[j];
        model.params[idx].value.data_mut()[j] = orig + h;
        let up = loss_and_grads(&model, None, &s, &cfg).unwrap().loss.total;
        model.params[idx].value.data_mut()[j] = orig - h;
        let dn = loss_and_grads(&model, None, &s, &cfg).unwrap().loss.total;
        model.params[idx].value.data_mut()[j] = orig;
        assert!(close(sg.grads[idx].data()[j], (up - dn) / (2.0 * h), 1e-2));
    }
}

/// `sum(out * r)` for a fixed random `r`: checks the network backward pass
/// w.r.t. inputs and parameters independently of the loss code.
#[test]
fn network_gradient_wrt_inputs_and_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = init_params(&tiny()).unwrap();
    let mut clips = vec![uniform(&[1, 3, 16, 16], &mut rng), uniform(&[1, 3, 16, 16], &mut rng)];
    let r = uniform(&[2, 1, 16, 16], &mut rng).map(|v| v - 0.5);
    let objective = |m: &ModelState, c: &[Tensor]| -> f64 {
        let (out, _) = m.forward_batch(c, true).unwrap();
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = model.forward_batch(&clips, true).unwrap();
    let (grads, dclips) = model.backward(&cache.unwrap(), &r);
    let h = 1e-5;
    for (i, j) in [(0, 5), (0, 400), (1, 131), (1, 700)] {
        let orig = clips[i].data()[j];
        clips[i].data_mut()[j] = orig + h;
        let up = objective(&model, &clips);
        clips[i].data_mut()[j] = orig - h;
        let dn = objective(&model, &clips);
        clips[i].data_mut()[j] = orig;
        let numeric = (up - dn) / (2.0 * h);
        assert!(close(dclips[i].data()[j], numeric, 1e-2), "input {i}[{j}]: {} vs {numeric}", dclips[i].data()[j]);
    }
    let mut pick = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let p = loop {
            let p = pick.random_range(0..model.params.len());
            if model.params[p].trainable {
                break p;
            }
        };
        let j = pick.random_range(0..model.params[p].value.len());
        let orig = model.params[p].value.data()[j];
        model.params[p].value.data_mut()[j] = orig + h;
        let up = objective(&model, &clips);
        model.params[p].value.data_mut()[j] = orig - h;
        let dn = objective(&model, &clips);
        model.params[p].value.data_mut()[j] = orig;
        let numeric = (up - dn) / (2.0 * h);
        assert!(close(grads[p].data()[j], numeric, 1e-2), "{}[{j}]: {} vs {numeric}", model.params[p].name, grads[p].data()[j]);
    }
}

/// d/d ell of `sum(g * X_A)` through the sigmoid and both blend steps.
#[test]
fn pseudo_anomaly_gradient_wrt_ell() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = uniform(&[1, 3, 8, 8], &mut rng);
    let a = sample_noise(&[1, 3, 8, 8], &mut rng);
    let g = uniform(&[1, 3, 8, 8], &mut rng);
    let mask = box_mask(3, 8, 8, (1, 6, 2, 7));
    let scalar = |ell: f64| {
        let w = AnomalyWeight { ell, trainable: true }.value();
        let xa = compose_pseudo(&x, &blend_noise(&x, &a, w).unwrap(), &mask).unwrap();
        xa.data().iter().zip(g.data()).map(|(p, q)| p * q).sum::<f64>()
    };
    for ell in [-2.0, 0.0, 1.5] {
        let w = AnomalyWeight { ell, trainable: true };
        let analytic = weight_sensitivity(&x, &a, &mask, &g) * w.slope();
        let numeric = (scalar(ell + 1e-4) - scalar(ell - 1e-4)) / 2e-4;
        assert!(close(analytic, numeric, 1e-3), "{analytic} vs {numeric}");
    }
}

/// A small step of the reconstruction toward the normal frame lowers dist
/// when it lies strictly between the normal and pseudo-anomalous values.
#[test]
fn distinction_gradient_points_toward_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let x: f64 = rng.random();
        let xa: f64 = rng.random();
        if (x - xa).abs() < 0.05 {
            continue;
        }
        let f = x + rng.random_range(0.1..0.9) * (xa - x);
        let t = |v: f64| Tensor::from_vec(&[1], vec![v]).unwrap();
        let d = |fv: f64| distinction_loss(&t(x), &t(xa), &t(fv), &t(1.0), 1e-6).unwrap().dist;
        let step = 1e-4 * (x - f).signum();
        assert!(d(f + step) < d(f), "x={x} xa={xa} f={f}");
    }
}
