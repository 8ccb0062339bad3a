use medmark_core::attacks::AttackSpec;
use medmark_core::codec::{train_extractor, whiten_fit, Message};
use medmark_core::metrics::{mask_leakage, psnr, ssim};
use medmark_core::optimize::{embed, EmbedConfig};
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



fn noisy_image(size: usize, seed: u64, noise: f64) -> ImageBuf {
    let base = smooth_image(size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let data = base
        .data()
        .iter()
        .map(|v| (v + rng.gen_range(-noise..noise)).clamp(0.0, 1.0))
        .collect();
    ImageBuf::new(size, size, 1, data).unwrap()
}

#[test]
fn realistic_pilot() {
    let steps: usize = std::env::var("PILOT_STEPS").unwrap().parse().unwrap();
    let lr: f64 = std::env::var("PILOT_LR").unwrap().parse().unwrap();
    let size = 128;
    let corpus: Vec<ImageBuf> = (0..600).map(|i| noisy_image(size, 9000 + i, 0.03)).collect();
    let transforms = AttackSpec::standard_suite()[1..].to_vec();
    let model = train_extractor(&corpus[..64], 48, &transforms, 4000, 11).unwrap();
    let model = whiten_fit(&model, &corpus[100..600]).unwrap();

    // Localization map: bright blob center, low background.
    let map = ScalarField::from_fn(size, size, |y, x| {
        let d2 = (y as f64 - 50.0).powi(2) + (x as f64 - 70.0).powi(2);
        let core = (-d2 / (2.0 * 15.0f64.powi(2))).exp();
        (0.08 + 0.9 * core).min(0.99)
    })
    .unwrap();
    let mask = ScalarField::from_fn(size, size, |y, x| {
        let d2 = (y as f64 - 50.0).powi(2) + (x as f64 - 70.0).powi(2);
        if d2 < 14.0 * 14.0 {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..6 {
        let io = smooth_image(size, 20_000 + trial);
        let m = Message::random(48, &mut rng);
        let cfg = EmbedConfig { steps, learning_rate: lr, ..Default::default() };
        let t_start = std::time::Instant::now();
        let r = embed(&io, &map, &m, &model, &cfg).unwrap();
        let embed_ms = t_start.elapsed().as_millis();
        let p = psnr(&r.watermarked, &io).unwrap();
        let s = ssim(&r.watermarked, &io).unwrap();
        let leak = mask_leakage(&r.watermarked, &io, &mask).unwrap();
        let t0 = r.trace.first().unwrap();
        let tl = r.trace.last().unwrap();
        println!(
            "trial {trial} [{embed_ms}ms]: psnr {p:.2} ssim {s:.4} leak {leak:.4} bits_ok {} msg {:.3}->{:.3} in/out {:.5}/{:.5}",
            r.achieved_bits == m,
            t0.msg,
            tl.msg,
            r.in_mask_energy,
            r.out_mask_energy,
        );

        // no_pre comparison
        let cfg_nopre = EmbedConfig { lambda_pre: 0.0, steps, learning_rate: lr, ..Default::default() };
        let r2 = embed(&io, &map, &m, &model, &cfg_nopre).unwrap();
        let leak2 = mask_leakage(&r2.watermarked, &io, &mask).unwrap();
        let p2 = psnr(&r2.watermarked, &io).unwrap();
        println!("   no_pre: psnr {p2:.2} leak {leak2:.4} bits_ok {}", r2.achieved_bits == m);

        // no_tv comparison
        let cfg_notv = EmbedConfig { lambda_tv: 0.0, steps, learning_rate: lr, ..Default::default() };
        let r3 = embed(&io, &map, &m, &model, &cfg_notv).unwrap();
        let p3 = psnr(&r3.watermarked, &io).unwrap();
        println!("   no_tv:  psnr {p3:.2} bits_ok {}", r3.achieved_bits == m);

        // attacks on the full embed
        for spec in AttackSpec::standard_suite() {
            let decoded =
                medmark_core::attacks::attack_then_decode(&r.watermarked, &spec, &model).unwrap();
            let acc = medmark_core::codec::bit_accuracy(&decoded, &m).unwrap();
            print!(" {}={acc:.3}", spec.name());
        }
        println!();
    }
}
