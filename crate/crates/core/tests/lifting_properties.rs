use fragto::fragmap::{
    block_mean, cover_counts, defragment, estimate_normalization, fragment, FragmentSpec, NormalizationFactors,
    ScaleSpec,
};
use fragto::mapnet::{build_model, default_layers, parameter_count};
use fragto::ScalarField;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rows: usize, cols: usize, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0))
}

#[test]
fn block_means_match_a_double_loop() {
    let fine = random_field(64, 96, 3);
    let coarse = block_mean(&fine, 16).unwrap();
    for br in 0..4 {
        for bc in 0..6 {
            let mut s = 0.0;
            for r in 0..16 {
                for c in 0..16 {
                    s += fine.get(br * 16 + r, bc * 16 + c);
                }
            }
            assert!((coarse.get(br, bc) - s / 256.0).abs() < 1e-15);
        }
    }
}

#[test]
fn bridge_and_cantilever_fragment_counts() {
    let wide = ScaleSpec::new(768, 384, 16).unwrap();
    let f = FragmentSpec::with_patch(&wide, 2, true).unwrap();
    assert_eq!(f.fragment_count(48, 24), 47 * 23);
    let square = ScaleSpec::new(512, 512, 16).unwrap();
    assert_eq!(
        FragmentSpec::new(&square, 16, false).unwrap().fragment_count(32, 32),
        256
    );
    assert_eq!(
        FragmentSpec::with_patch(&square, 2, true)
            .unwrap()
            .fragment_count(32, 32),
        31 * 31
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fragmentation_roundtrips(
        cw in 1usize..5,
        ch in 1usize..5,
        patch in 1usize..4,
        ratio_pow in 1u32..4,
        overlap: bool,
        seed: u64,
    ) {
        let ratio = 1usize << ratio_pow;
        let (cw, ch) = (cw * patch, ch * patch);
        prop_assume!(cw * ratio >= 2 && ch * ratio >= 2);
        let scale = ScaleSpec::new(cw * ratio, ch * ratio, ratio).unwrap();
        let fspec = FragmentSpec::with_patch(&scale, patch, overlap).unwrap();
        let coarse = random_field(ch, cw, seed);
        let dens = random_field(ch * ratio, cw * ratio, seed ^ 1);
        let fine = random_field(ch * ratio, cw * ratio, seed ^ 2);
        let batch = fragment(&coarse, &dens, Some(&fine), &fspec).unwrap();

        let expected = if overlap {
            (cw - patch + 1) * (ch - patch + 1)
        } else {
            (cw / patch) * (ch / patch)
        };
        prop_assert_eq!(batch.len(), expected);
        prop_assert_eq!(fspec.fragment_count(cw, ch), expected);

        let back = defragment(batch.fine.as_ref().unwrap(), &batch.origins, &fspec, cw * ratio, ch * ratio).unwrap();
        if overlap {
            prop_assert!(back.max_abs_diff(&fine) <= 1e-12);
        } else {
            prop_assert_eq!(back.as_slice(), fine.as_slice());
        }
        let dback = defragment(&batch.density, &batch.origins, &fspec, cw * ratio, ch * ratio).unwrap();
        prop_assert!(dback.max_abs_diff(&dens) <= 1e-12);
    }

    #[test]
    fn interior_cover_count_is_patch_squared(c in 4usize..9, patch in 1usize..4, seed: u64) {
        prop_assume!(patch < c);
        let ratio = 4;
        let scale = ScaleSpec::new(c * ratio, c * ratio, ratio).unwrap();
        let fspec = FragmentSpec::with_patch(&scale, patch, true).unwrap();
        let coarse = random_field(c, c, seed);
        let dens = random_field(c * ratio, c * ratio, seed);
        let batch = fragment(&coarse, &dens, None, &fspec).unwrap();
        let counts = cover_counts(&batch.origins, &fspec, c * ratio, c * ratio);
        let n = c * ratio;
        // Pixels at least (patch - 1) coarse cells from every edge.
        let lo = (patch - 1) * ratio;
        for r in lo..n - lo {
            for col in lo..n - lo {
                prop_assert_eq!(counts[r * n + col] as usize, patch * patch);
            }
        }
        // Brute-force count at a corner and the centre.
        for (r, col) in [(0, 0), (n / 2, n / 2)] {
            let brute = batch
                .origins
                .iter()
                .filter(|&&(or, oc)| {
                    (or * ratio..(or + patch) * ratio).contains(&r) && (oc * ratio..(oc + patch) * ratio).contains(&col)
                })
                .count();
            prop_assert_eq!(counts[r * n + col] as usize, brute);
        }
    }

    #[test]
    fn block_mean_preserves_the_global_mean(rows in 1usize..5, cols in 1usize..5, seed: u64) {
        let fine = random_field(rows * 8, cols * 8, seed);
        let coarse = block_mean(&fine, 8).unwrap();
        prop_assert!((coarse.mean() - fine.mean()).abs() < 1e-12);
    }

    #[test]
    fn normalization_shifts_by_decades(seed: u64, decades in -3i32..4) {
        let f = random_field(8, 8, seed).map(|v| v * 3e-5 + 1e-9);
        let scaled = f.map(|v| v * 10f64.powi(decades));
        let a = estimate_normalization(std::slice::from_ref(&f)).unwrap();
        let b = estimate_normalization(std::slice::from_ref(&scaled)).unwrap();
        prop_assert!((b / a / 10f64.powi(decades) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mapnet_output_is_nonnegative(seed: u64, patch in 1usize..3, gain in 0.1f64..50.0) {
        let scale = ScaleSpec::new(64, 64, 8).unwrap();
        let fspec = FragmentSpec::with_patch(&scale, patch, true).unwrap();
        let norm = NormalizationFactors::new(1.0, 1.0).unwrap();
        let model = build_model(&fspec, 4, norm, seed).unwrap();
        prop_assert_eq!(model.params().len(), parameter_count(&default_layers(&fspec, 4).unwrap()));
        let coarse = random_field(patch, patch, seed).map(|v| v * gain);
        let dens = random_field(patch * 8, patch * 8, seed ^ 5);
        let out = model.forward(&coarse, &dens).unwrap();
        prop_assert_eq!(out.shape(), (patch * 8, patch * 8));
        prop_assert!(out.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
