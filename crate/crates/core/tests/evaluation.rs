use image::{ImageBuffer, Rgb};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainloop_core::evaluation::*;
use stainloop_core::harmonize::TissueMask;
use stainloop_core::image::{CoreImage, StainState};
use stainloop_core::registration::{EccParams, RigidTransform};
use stainloop_core::synth::{render, Scene, REFERENCE_STAINS};
use stainloop_core::Error;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

fn noise_core(rng: &mut impl Rng, w: u32, h: u32) -> CoreImage {
    let img = ImageBuffer::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    CoreImage::new(img, 0.5, "n", StainState::Stained).unwrap()
}

fn samples(c: &CoreImage) -> Vec<f64> {
    c.pixels.pixels().flat_map(|p| p.0).map(|v| f64::from(v) / 255.0).collect()
}

fn oracle_mse(a: &CoreImage, b: &CoreImage) -> f64 {
    let (x, y) = (samples(a), samples(b));
    x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64
}

fn oracle_pcc(a: &CoreImage, b: &CoreImage) -> f64 {
    let (x, y) = (samples(a), samples(b));
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
    let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Direct windowed SSIM: every window position, 2-D Gaussian weights,
/// variances as weighted squared deviations.
fn oracle_ssim(a: &CoreImage, b: &CoreImage, window: usize) -> Option<f64> {
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < window || h < window {
        return None;
    }
    let luma = |c: &CoreImage, x: usize, y: usize| {
        let p = c.pixels.get_pixel(x as u32, y as u32).0;
        (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])) / 255.0
    };
    let r = (window - 1) as f64 / 2.0;
    let mut weights = vec![vec![0.0; window]; window];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
            *v = (-d2 / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - window {
        for x0 in 0..=w - window {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = weights[i][j] / total;
                    ma += k * luma(a, x0 + j, y0 + i);
                    mb += k * luma(b, x0 + j, y0 + i);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = weights[i][j] / total;
                    let (da, db) = (luma(a, x0 + j, y0 + i) - ma, luma(b, x0 + j, y0 + i) - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Some(sum / f64::from(count))
}

fn sum_of_squares(groups: &[Vec<f64>]) -> (f64, f64) {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = all.iter().sum::<f64>() / all.len() as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    (ssb, ssw)
}

fn named(groups: &[Vec<f64>]) -> Vec<SampleGroup> {
    groups.iter().enumerate().map(|(i, g)| SampleGroup::new(format!("g{i}"), g.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>(), w in 8u32..=32, h in 8u32..=32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = noise_core(&mut rng, w, h);
        let b = noise_core(&mut rng, w, h);
        let m = mse(&a, &b).unwrap();
        prop_assert!((m - oracle_mse(&a, &b)).abs() <= 1e-10);
        prop_assert!((psnr(&a, &b).unwrap() - (-10.0 * oracle_mse(&a, &b).log10())).abs() <= 1e-10);
        prop_assert!((pcc(&a, &b).unwrap() - oracle_pcc(&a, &b)).abs() <= 1e-10);
        match (ssim(&a, &b, SsimParams::default()), oracle_ssim(&a, &b, 11)) {
            (Ok(s), Some(o)) => prop_assert!((s - o).abs() <= 1e-10, "{} vs {}", s, o),
            (Err(Error::TooSmall { .. }), None) => {}
            (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
        }
        let small = SsimParams { window: 7, ..SsimParams::default() };
        let s7 = ssim(&a, &b, small).unwrap();
        prop_assert!((s7 - oracle_ssim(&a, &b, 7).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn metric_symmetries(seed in any::<u64>(), w in 11u32..=24, h in 11u32..=24, scale in 0.2f64..1.0, shift in 0.0f64..40.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = noise_core(&mut rng, w, h);
        let b = noise_core(&mut rng, w, h);
        let p = SsimParams::default();
        prop_assert!((pcc(&a, &b).unwrap() - pcc(&b, &a).unwrap()).abs() <= 1e-12);
        let sab = ssim(&a, &b, p).unwrap();
        prop_assert!((sab - ssim(&b, &a, p).unwrap()).abs() <= 1e-9);
        prop_assert!(sab <= 1.0);
        prop_assert_eq!(ssim(&a, &a, p).unwrap(), 1.0);
        // re-quantized to 8 bits, an affine map only moves PCC by rounding noise
        let mut b2 = b.clone();
        for v in b2.pixels.as_mut() {
            *v = (scale * f64::from(*v) + shift).round() as u8;
        }
        prop_assert!((pcc(&a, &b2).unwrap() - pcc(&a, &b).unwrap()).abs() <= 0.05);
        let m = mse(&a, &b).unwrap();
        prop_assert!((psnr(&a, &b).unwrap() + 10.0 * m.log10()).abs() <= 1e-9);
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        a in prop::collection::vec(0.0f64..1.0, 4..300), seed in any::<u64>(), scale in 0.01f64..100.0, shift in -10.0f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let base = pearson(&a, &b).unwrap();
        let b2: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
        let a2: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        prop_assert!((pearson(&a, &b2).unwrap() - base).abs() <= 1e-9);
        prop_assert!((pearson(&a2, &b).unwrap() - base).abs() <= 1e-9);
        prop_assert!((pearson(&b, &a).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn masked_intensity_overall_is_channel_mean(seed in any::<u64>(), w in 1u32..40, h in 1u32..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let core = noise_core(&mut rng, w, h);
        let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        let mask = TissueMask::from_bits(w, h, bits, stainloop_core::harmonize::MaskStrategy::LuminanceThreshold, 0.88);
        let s = masked_intensity(&core, &mask).unwrap();
        prop_assert!((s.overall - (s.r + s.g + s.b) / 3.0).abs() <= 1e-9);
        prop_assert!([s.r, s.g, s.b].iter().all(|v| (0.0..=255.0).contains(v)));
        let d = intensity_difference(&s, &s);
        prop_assert_eq!((d.overall, d.r, d.g, d.b), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn aggregate_matches_two_pass(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        let ms = mean_sd(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        prop_assert!((ms.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((ms.sd - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1.0));
        } else {
            prop_assert_eq!(ms.sd, 0.0);
        }
    }

    #[test]
    fn anova_matches_sum_of_squares_and_ignores_shift(
        groups in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..12), 2..6),
        shift in -1e3f64..1e3,
    ) {
        let (ssb, ssw) = sum_of_squares(&groups);
        prop_assume!(ssw > 1e-6);
        let r = anova_oneway(&named(&groups)).unwrap();
        let k = groups.len() as f64;
        let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
        let f = (ssb / (k - 1.0)) / (ssw / (n - k));
        prop_assert!((r.f_stat - f).abs() <= 1e-9 * f.max(1.0));
        let p = FisherSnedecor::new(k - 1.0, n - k).unwrap().sf(f);
        prop_assert!((r.p_value - p).abs() <= 1e-8, "{} vs {}", r.p_value, p);
        let shifted: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v + shift).collect()).collect();
        let rs = anova_oneway(&named(&shifted)).unwrap();
        prop_assert!((rs.f_stat - r.f_stat).abs() <= 1e-9 * r.f_stat.max(1e-3));
    }

    #[test]
    fn f_tail_matches_reference(f in 0.0f64..60.0, d1 in 1u32..40, d2 in 1u32..200) {
        let (d1, d2) = (f64::from(d1), f64::from(d2));
        let expect = FisherSnedecor::new(d1, d2).unwrap().sf(f);
        prop_assert!((special::f_sf(f, d1, d2) - expect).abs() <= 1e-8);
        let via_beta = statrs::function::beta::beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
        prop_assert!((special::f_sf(f, d1, d2) - via_beta).abs() <= 1e-8);
    }

    #[test]
    fn t_quantile_matches_reference(alpha in 0.001f64..0.5, df in 1u32..300) {
        let df = f64::from(df);
        let expect = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(1.0 - alpha / 2.0);
        let got = special::t_quantile_two_sided(alpha, df);
        prop_assert!((got - expect).abs() <= 1e-6 * expect.max(1.0), "{} vs {}", got, expect);
        prop_assert!((special::t_sf_two_sided(got, df) - alpha).abs() <= 1e-9);
    }
}

#[test]
fn textbook_anova() {
    let groups = vec![
        vec![6.0, 8.0, 4.0, 5.0, 3.0, 4.0],
        vec![8.0, 12.0, 9.0, 11.0, 6.0, 8.0],
        vec![13.0, 9.0, 11.0, 8.0, 7.0, 12.0],
    ];
    let r = anova_oneway(&named(&groups)).unwrap();
    let (ssb, ssw) = sum_of_squares(&groups);
    let f = (ssb / 2.0) / (ssw / 15.0);
    assert!(((r.f_stat - f) / f).abs() <= 1e-6);
    assert!((r.f_stat - 9.26).abs() < 0.01);
    let p = FisherSnedecor::new(2.0, 15.0).unwrap().sf(f);
    assert!(((r.p_value - p) / p).abs() <= 1e-6);
    assert!((r.p_value - 0.0024).abs() < 5e-5);
}

#[test]
fn lsd_flags_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut significant = 0;
    let mut total = 0;
    for _ in 0..20 {
        let k = rng.random_range(2..6);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let centre = rng.random_range(0.0..4.0);
                (0..rng.random_range(3..10)).map(|_| centre + rng.random_range(-1.5..1.5)).collect()
            })
            .collect();
        let r = fisher_lsd(&named(&groups), 0.05).unwrap();
        let (_, ssw) = sum_of_squares(&groups);
        let n: usize = groups.iter().map(Vec::len).sum();
        let df = (n - k) as f64;
        let msw = ssw / df;
        let t = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        let mut idx = 0;
        for i in 0..k {
            for j in i + 1..k {
                let mean = |g: &Vec<f64>| g.iter().sum::<f64>() / g.len() as f64;
                let diff = mean(&groups[i]) - mean(&groups[j]);
                let thr = t * (msw * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
                let pair = &r.pairwise[idx];
                assert!((pair.mean_diff - diff).abs() < 1e-12);
                assert!((pair.lsd_threshold - thr).abs() < 1e-6 * thr);
                assert_eq!(pair.significant, diff.abs() > thr);
                assert_eq!(pair.significant, pair.p_value < 0.05);
                significant += usize::from(pair.significant);
                total += 1;
                idx += 1;
            }
        }
        assert_eq!(idx, r.pairwise.len());
    }
    // the sets exercise both outcomes
    assert!(significant > 0 && significant < total);
}

#[test]
fn constant_images_ssim() {
    let a = CoreImage::filled(16, 16, [51, 51, 51], 0.5, "a").unwrap();
    let b = CoreImage::filled(16, 16, [204, 204, 204], 0.5, "b").unwrap();
    let c1 = 1e-4;
    let expect = (2.0 * 0.2 * 0.8 + c1) / (0.04 + 0.64 + c1);
    let got = ssim(&a, &b, SsimParams::default()).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert!((got - 0.4709).abs() < 5e-4);
}

#[test]
fn ssim_under_small_noise() {
    let scene = Scene::new(4, 96.0, 96.0);
    let img = render(96, 96, &RigidTransform::identity(), |x, y| scene.stained_pixel(x, y, &REFERENCE_STAINS));
    let a = CoreImage::new(img, 0.5, "a", StainState::Stained).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut b = a.clone();
    for v in b.pixels.as_mut() {
        // sigma 0.01 on the [0, 1] scale
        let n: f64 = (0..12).map(|_| rng.random_range(0.0..1.0)).sum::<f64>() - 6.0;
        *v = (f64::from(*v) + 2.55 * n).round().clamp(0.0, 255.0) as u8;
    }
    let s = ssim(&a, &b, SsimParams::default()).unwrap();
    assert!(s > 0.9 && s < 1.0, "{s}");
}

#[test]
fn alignment_improves_shifted_pair() {
    let scene = Scene::new(12, 200.0, 200.0);
    let f = |x: f64, y: f64| scene.stained_pixel(x, y, &REFERENCE_STAINS);
    let fixed = render(200, 200, &RigidTransform::identity(), f);
    let shift = RigidTransform::new(0.0, 5.0, 0.0);
    let moved = render(200, 200, &shift.inverse(), f);
    let a = CoreImage::new(fixed, 0.5, "c", StainState::Stained).unwrap();
    let b = CoreImage::new(moved, 0.5, "c", StainState::Stained).unwrap();
    let aligned = evaluate_pair(&a, &b, Some(EccParams::default()), "x", SsimParams::default()).unwrap();
    let raw = evaluate_pair(&a, &b, None, "x", SsimParams::default()).unwrap();
    assert!(aligned.alignment.converged);
    assert!((aligned.alignment.tx - 5.0).abs() < 0.1, "{:?}", aligned.alignment);
    assert!(aligned.mse <= 1e-4, "{}", aligned.mse);
    assert!(raw.mse > aligned.mse && raw.pcc < aligned.pcc);
    assert!(!raw.alignment.attempted);
}

#[test]
fn mismatched_sizes_are_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = noise_core(&mut rng, 30, 20);
    let b = noise_core(&mut rng, 24, 26);
    let r = evaluate_pair(&a, &b, None, "x", SsimParams::default()).unwrap();
    let pa = pad_to(&a, 30, 26, [255; 3]);
    let pb = pad_to(&b, 30, 26, [255; 3]);
    assert!((r.mse - oracle_mse(&pa, &pb)).abs() < 1e-12);
}

#[test]
fn masked_intensity_and_shift() {
    let img = ImageBuffer::from_fn(4, 2, |x, _| if x < 2 { Rgb([100, 50, 10]) } else { Rgb([255, 255, 255]) });
    let core = CoreImage::new(img, 0.5, "c", StainState::Stained).unwrap();
    let bits = (0..8).map(|i| i % 4 < 2).collect();
    let mask = TissueMask::from_bits(4, 2, bits, stainloop_core::harmonize::MaskStrategy::LuminanceThreshold, 0.88);
    let s = masked_intensity(&core, &mask).unwrap();
    assert_eq!((s.r, s.g, s.b), (100.0, 50.0, 10.0));
    assert!((s.overall - 160.0 / 3.0).abs() < 1e-12);
    let other = IntensitySummary { r: 90.0, g: 60.0, b: 0.0, overall: 50.0, ..s.clone() };
    let d = intensity_difference(&s, &other);
    assert_eq!((d.r, d.g, d.b), (10.0, -10.0, 10.0));
    let ds = domain_shift_summary(&s, &[other.clone(), other]).unwrap();
    assert!((ds.mean_diff - (160.0 / 3.0 - 50.0)).abs() < 1e-12);
    assert_eq!(ds.median_diff, ds.mean_diff);
}

#[test]
fn worked_examples() {
    let agg = mean_sd(&[0.8, 0.9]).unwrap();
    assert!((agg.mean - 0.85).abs() < 1e-12 && (agg.sd - 0.005f64.sqrt()).abs() < 1e-12);
    assert!((psnr_from_mse(0.015) - 18.239).abs() < 5e-4);
    assert!(psnr_from_mse(0.0).is_infinite());

    let board = ImageBuffer::from_fn(6, 6, |x, y| if (x + y) % 2 == 0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
    let board = CoreImage::new(board, 0.5, "b", StainState::Stained).unwrap();
    let s = masked_intensity(&board, &TissueMask::full(6, 6)).unwrap();
    assert_eq!((s.r, s.g, s.b, s.overall), (127.5, 127.5, 127.5, 127.5));

    let at = |v: f64| IntensitySummary { core_id: "c".into(), overall: v, r: v, g: v, b: v, tissue_fraction: 1.0 };
    let d = domain_shift_summary(&at(100.0), &[at(90.0), at(110.0)]).unwrap();
    assert_eq!((d.mean_diff, d.median_diff), (0.0, 0.0));
    let d = domain_shift_summary(&at(100.0), &[at(80.0), at(90.0), at(120.0)]).unwrap();
    assert!((d.mean_diff - 10.0 / 3.0).abs() < 1e-12 && d.median_diff == 10.0);
    assert!(domain_shift_summary(&at(1.0), &[]).is_err());

    let x = IntensitySummary { r: 10.0, g: 40.0, b: 7.0, overall: 19.0, ..at(0.0) };
    let y = at(20.0);
    let (dxy, dyx) = (intensity_difference(&x, &y), intensity_difference(&y, &x));
    assert_eq!((dxy.r, dxy.g, dxy.b, dxy.overall), (-dyx.r, -dyx.g, -dyx.b, -dyx.overall));
}

#[test]
fn anova_and_lsd_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut jitter = |c: f64| (0..4).map(|_| c + rng.random_range(-1e-3..1e-3)).collect::<Vec<_>>();
    let r = anova_oneway(&named(&[jitter(0.0), jitter(10.0)])).unwrap();
    assert!(r.p_value < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut unit = |c: f64| (0..10).map(|_| c + rng.random_range(-1.7..1.7)).collect::<Vec<_>>();
    let r = fisher_lsd(&named(&[unit(0.0), unit(100.0)]), 0.05).unwrap();
    assert!(r.pairwise[0].significant);

    // only g2 sits apart
    let groups = vec![
        vec![5.0, 5.2, 4.8, 5.1, 4.9],
        vec![5.1, 4.9, 5.0, 5.2, 4.8],
        vec![9.0, 9.2, 8.8, 9.1, 8.9],
    ];
    let r = fisher_lsd(&named(&groups), 0.05).unwrap();
    let flags: Vec<_> = r.pairwise.iter().map(|p| (p.group_a.as_str(), p.group_b.as_str(), p.significant)).collect();
    assert_eq!(flags, [("g0", "g1", false), ("g0", "g2", true), ("g1", "g2", true)]);
    assert!(r.pairwise.iter().all(|p| p.significant == (p.mean_diff.abs() > p.lsd_threshold)));
}
