//! Property tests for the structural invariants: permutation behavior,
//! metric properties of the feature distances, normalization, batching,
//! and sampling density.

use proptest::prelude::*;

use fad_core::data::{
    generate_synthetic, normalize, off::Mesh, sample::sample_surface, shapes::ShapeFamily, Batch,
    PointCloud,
};
use fad_core::losses::{fad_loss, softmax, FadAxis, FadVariant};
use fad_core::rng::{stream, PURPOSE_MESH};
use fad_core::tape::Tape;
use fad_core::tensor::Tensor;

/// Dyadic rationals (multiples of 1/64): every partial sum in a reduction is
/// exact, so order-of-summation effects cannot masquerade as permutation
/// sensitivity.
fn dyadic() -> impl Strategy<Value = f64> {
    (-128i32..=128).prop_map(|k| k as f64 / 64.0)
}

fn dyadic_map(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(dyadic(), n * d)
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn permute_rows(vals: &[f64], perm: &[usize], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(vals.len());
    for &i in perm {
        out.extend_from_slice(&vals[i * d..(i + 1) * d]);
    }
    out
}

fn fad_value(t: &[f64], s: &[f64], shape: &[usize], variant: FadVariant) -> f64 {
    let teacher = Tensor::new(t.to_vec(), shape).unwrap();
    let mut tape = Tape::new();
    let sv = tape.constant(s.to_vec(), shape).unwrap();
    let loss = fad_loss(&mut tape, &teacher, sv, variant, FadAxis::Dims).unwrap();
    tape.value(loss).item()
}

proptest! {
    /// Applying the same point permutation to both maps leaves every FAD
    /// variant bit-identical. (D = 4 keeps the mean division exact.)
    #[test]
    fn fad_is_permutation_consistent(
        (n, tv, sv, perm) in (2usize..=8).prop_flat_map(|n| {
            (Just(n), dyadic_map(n, 4), dyadic_map(n, 4), permutation(n))
        })
    ) {
        let shape = [1, n, 4];
        for variant in FadVariant::ALL {
            let base = fad_value(&tv, &sv, &shape, variant);
            let permuted = fad_value(
                &permute_rows(&tv, &perm, 4),
                &permute_rows(&sv, &perm, 4),
                &shape,
                variant,
            );
            prop_assert_eq!(base.to_bits(), permuted.to_bits(), "{} changed under permutation", variant);
        }
    }

    /// FAD distances are symmetric in their two arguments.
    #[test]
    fn fad_is_symmetric(
        (n, tv, sv) in (2usize..=6).prop_flat_map(|n| {
            (Just(n), dyadic_map(n, 3), dyadic_map(n, 3))
        })
    ) {
        let shape = [1, n, 3];
        for variant in FadVariant::ALL {
            let ab = fad_value(&tv, &sv, &shape, variant);
            let ba = fad_value(&sv, &tv, &shape, variant);
            prop_assert!((ab - ba).abs() <= 1e-12);
        }
    }

    /// The mean variant satisfies the triangle inequality.
    #[test]
    fn fad_mean_triangle_inequality(
        (n, f, g, h) in (2usize..=6).prop_flat_map(|n| {
            (Just(n), dyadic_map(n, 3), dyadic_map(n, 3), dyadic_map(n, 3))
        })
    ) {
        let shape = [1, n, 3];
        let d_fh = fad_value(&f, &h, &shape, FadVariant::Mean);
        let d_fg = fad_value(&f, &g, &shape, FadVariant::Mean);
        let d_gh = fad_value(&g, &h, &shape, FadVariant::Mean);
        prop_assert!(d_fh <= d_fg + d_gh + 1e-12);
    }

    /// Scaling both maps by c > 0 scales every variant's value by exactly c.
    #[test]
    fn fad_is_positively_homogeneous(
        (n, tv, sv) in (2usize..=6).prop_flat_map(|n| {
            (Just(n), dyadic_map(n, 3), dyadic_map(n, 3))
        }),
        c in 1u32..=16,
    ) {
        // powers of two keep the scaling exact, so the assertion can be tight
        let c = c as f64;
        let shape = [1, n, 3];
        for variant in FadVariant::ALL {
            let base = fad_value(&tv, &sv, &shape, variant);
            let ts: Vec<f64> = tv.iter().map(|v| v * c).collect();
            let ss: Vec<f64> = sv.iter().map(|v| v * c).collect();
            let scaled = fad_value(&ts, &ss, &shape, variant);
            prop_assert!((scaled - c * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }

    /// Softmax rows always sum to 1 within 1e-12 and respect monotonicity.
    #[test]
    fn softmax_rows_are_distributions(
        vals in prop::collection::vec(-50.0f64..50.0, 6),
        tau in prop::sample::select(vec![1.0f64, 2.0, 4.0, 10.0]),
    ) {
        let t = Tensor::new(vals.clone(), &[2, 3]).unwrap();
        let p = softmax(&t, tau);
        for row in p.data().chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        // raising one logit cannot lower its probability
        let mut bumped = vals.clone();
        bumped[0] += 1.0;
        let p2 = softmax(&Tensor::new(bumped, &[2, 3]).unwrap(), tau);
        prop_assert!(p2.data()[0] >= p.data()[0]);
    }

    /// normalize(normalize(x)) == normalize(x) within 1e-12 per coordinate.
    #[test]
    fn normalization_is_idempotent(
        raw in prop::collection::vec(-100.0f64..100.0, 9..60),
    ) {
        let n = raw.len() / 3;
        let mut pts: Vec<[f64; 3]> = (0..n)
            .map(|i| [raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]])
            .collect();
        normalize(&mut pts);
        let once = pts.clone();
        normalize(&mut pts);
        for (a, b) in once.iter().zip(&pts) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    /// Batching is a pure reshape: flattening reproduces the clouds exactly.
    #[test]
    fn batching_is_pure_reshaping(
        raw in prop::collection::vec(-10.0f64..10.0, 24),
        labels in prop::collection::vec(0usize..5, 2),
    ) {
        let clouds: Vec<PointCloud> = (0..2)
            .map(|i| PointCloud {
                points: (0..4)
                    .map(|j| {
                        let b = (i * 4 + j) * 3;
                        [raw[b], raw[b + 1], raw[b + 2]]
                    })
                    .collect(),
                label: labels[i],
            })
            .collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let back = Batch::from_clouds(&refs).clouds();
        prop_assert_eq!(&clouds, &back);
    }
}

/// Per-point maxima can agree while the maps differ, so FAD-MAX is only a
/// pseudo-metric: zero distance does not imply equal feature maps.
#[test]
fn fad_max_zero_does_not_imply_equality() {
    let shape = [1, 2, 2];
    let f = vec![1.0, 0.0, 2.0, -1.0];
    let g = vec![0.0, 1.0, -3.0, 2.0];
    assert_ne!(f, g);
    assert_eq!(fad_value(&f, &g, &shape, FadVariant::Max), 0.0);
    // the mean variant does separate them
    assert!(fad_value(&f, &g, &shape, FadVariant::Mean) > 0.0);
    // and min differs as well for this pair
    assert!(fad_value(&f, &g, &shape, FadVariant::Min) > 0.0);
}

/// Chi-square goodness-of-fit of per-face sample counts against the
/// area-proportional law, 10k draws, p > 0.01.
#[test]
fn surface_sampling_density_matches_areas() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    // four disjoint triangles in distinct x-bands with areas 0.5, 1, 2, 4
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, base) in [1.0f64, 2.0, 4.0, 8.0].iter().enumerate() {
        let x0 = 10.0 * i as f64;
        let v0 = vertices.len();
        vertices.push([x0, 0.0, 0.0]);
        vertices.push([x0 + base, 0.0, 0.0]);
        vertices.push([x0, 1.0, 0.0]);
        faces.push([v0, v0 + 1, v0 + 2]);
    }
    let mesh = Mesh { vertices, faces };
    let n = 10_000usize;
    let pts = sample_surface(&mesh, n, &mut stream(17, PURPOSE_MESH, 0)).unwrap();
    let mut counts = [0usize; 4];
    for p in &pts {
        counts[(p[0] / 10.0).floor() as usize] += 1;
    }
    let total_area = 0.5 + 1.0 + 2.0 + 4.0;
    let expected = [0.5, 1.0, 2.0, 4.0].map(|a| a / total_area * n as f64);
    let stat: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    assert!(
        stat < critical,
        "chi-square statistic {stat:.2} exceeds the p=0.01 critical value {critical:.2}"
    );
}

/// The generator's per-sample randomness is stable against split position.
#[test]
fn dataset_regeneration_is_bitwise_stable() {
    let a = generate_synthetic(
        &[ShapeFamily::Cylinder, ShapeFamily::Torus, ShapeFamily::Cube],
        10,
        16,
        21,
    )
    .unwrap();
    let b = generate_synthetic(
        &[ShapeFamily::Cylinder, ShapeFamily::Torus, ShapeFamily::Cube],
        10,
        16,
        21,
    )
    .unwrap();
    let dump = |ds: &fad_core::data::Dataset| -> Vec<u64> {
        ds.train
            .iter()
            .chain(ds.test.iter())
            .flat_map(|pc| pc.points.iter().flatten().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(dump(&a), dump(&b));
}

/// OFF text written from a parsed mesh reparses to the identical mesh.
#[test]
fn off_round_trip_through_serializer() {
    use fad_core::data::off::{parse_off, write_off};
    let source = "OFF\n5 3 0\n0.125 -3.5 2.25\n1 0 0\n0 1 0\n0 0 1\n0.5 0.5 0.5\n3 0 1 2\n4 0 1 2 3\n3 2 3 4\n";
    let mesh = parse_off(source.as_bytes()).unwrap();
    // the quad face fan-triangulates, so the round trip is over triangles
    let again = parse_off(write_off(&mesh).as_bytes()).unwrap();
    assert_eq!(mesh, again);
}
