use medmark_core::codec::{train_extractor, Message};
use medmark_core::optimize::{loss_total, EmbedConfig};
use medmark_core::{ImageBuf, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_image(size: usize, seed: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.5;
            for &(fy, fx, phase, amp) in &modes {
                v += amp
                    * (std::f64::consts::TAU * (fy * y as f64 / size as f64 + fx * x as f64 / size as f64)
                        + phase)
                        .cos();
            }
            data.push(v);
        }
    }
    ImageBuf::from_clamped(size, size, 1, data).unwrap()
}

#[test]
fn isolate_gradient_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let io = smooth_image(32, 61);
    let iw_data: Vec<f64> = io
        .data()
        .iter()
        .map(|v| {
            let mag = rng.gen_range(0.005..0.03);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (v + sign * mag).clamp(0.05, 0.95)
        })
        .collect();
    let iw = ImageBuf::new(32, 32, 1, iw_data).unwrap();
    let corpus: Vec<ImageBuf> = (0..32).map(|i| smooth_image(32, 7002 + i)).collect();
    let model = train_extractor(&corpus, 8, &[], 100, 2).unwrap();
    let m = Message::random(8, &mut rng);
    let map = ScalarField::from_fn(32, 32, |y, x| {
        0.1 + 0.8 * (-((y as f64 - 16.0).powi(2) + (x as f64 - 16.0).powi(2)) / 60.0).exp()
    })
    .unwrap();

    for (name, li, lm, lt, lp) in [
        ("img", 1.0, 0.0, 0.0, 0.0),
        ("msg", 0.0, 1.0, 0.0, 0.0),
        ("tv", 0.0, 0.0, 1.0, 0.0),
        ("pre", 0.0, 0.0, 0.0, 1.0),
    ] {
        let cfg = EmbedConfig {
            lambda_img: li,
            lambda_msg: lm,
            lambda_tv: lt,
            lambda_pre: lp,
            ..Default::default()
        };
        let (_, _, grad) = loss_total(&iw, &io, &map, &model, &m, &cfg).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; 32 * 32];
        for i in 0..32 * 32 {
            let mut plus = iw.data().to_vec();
            plus[i] += h;
            let mut minus = iw.data().to_vec();
            minus[i] -= h;
            let ip = ImageBuf::new(32, 32, 1, plus).unwrap();
            let im = ImageBuf::new(32, 32, 1, minus).unwrap();
            fd[i] = (loss_total(&ip, &io, &map, &model, &m, &cfg).unwrap().0
                - loss_total(&im, &io, &map, &model, &m, &cfg).unwrap().0)
                / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|y| y * y).sum::<f64>().sqrt();
        println!("{name}: rel err {}", diff / (norm + 1e-12));
    }
}
