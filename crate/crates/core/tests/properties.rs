use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use stkr_core::data::{self, compute_score, Dataset, SamplePoint, ScoreRule};
use stkr_core::gp::{log_marginal_likelihood, GpHyperparams};
use stkr_core::index::{Metric, PointIndex};
use stkr_core::kernel::{
    cross_validate, CvGrid, KernelConfig, KernelKind, KernelModel, RegionParams,
};
use stkr_core::metrics::{classify_service, metrics};
use stkr_core::optim::NelderMead;
use stkr_core::preprocess::{knn_average, segment_grid, split, stratified_downsample};
use stkr_core::quadkey::Tile;
use stkr_core::synth::{generate, SynthParams};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn coord() -> impl Strategy<Value = f64> {
    (-1000i32..1000).prop_map(|v| v as f64 * 0.013)
}

/// Distinct points, so they can be indexed.
fn points(min: usize, max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((coord(), coord()), min..max).prop_map(|v| {
        let mut seen = HashSet::new();
        v.into_iter()
            .filter(|(x, y)| seen.insert((x.to_bits(), y.to_bits())))
            .map(|(x, y)| [x, y])
            .collect::<Vec<_>>()
    })
}

fn dataset(locs: &[[f64; 2]], speeds: &[(f64, f64, u64)]) -> Dataset {
    let rule = ScoreRule::default();
    let pts = locs
        .iter()
        .zip(speeds.iter().cycle())
        .enumerate()
        .map(|(i, (p, &(d, u, t)))| SamplePoint {
            id: i,
            lon: p[0],
            lat: p[1],
            download_kbps: d,
            upload_kbps: u,
            tests: t,
            devices: t,
            score: compute_score(d, u, &rule),
        })
        .collect();
    Dataset::from_points(pts).unwrap()
}

fn speeds() -> impl Strategy<Value = Vec<(f64, f64, u64)>> {
    prop::collection::vec((0.0..5e5f64, 0.0..1e5f64, 1u64..50), 1..20)
}

fn brute_knn(locs: &[[f64; 2]], q: [f64; 2], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = locs
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter()
        .take(k)
        .map(|(d2, i)| (i, d2.sqrt()))
        .collect()
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn canonical_csv_round_trip(locs in points(1, 40), sp in speeds()) {
        let ds = dataset(&locs, &sp);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = data::read_canonical(&buf[..]).unwrap();
        prop_assert_eq!(&back, &ds);
        let reparsed = data::parse_records(&buf[..], &ScoreRule::default()).unwrap();
        prop_assert_eq!(reparsed, ds);
    }

    #[test]
    fn score_is_homogeneous(d in 0.0..1e6f64, u in 0.0..1e6f64, lambda in 0.0..100.0f64,
                            wd in 0.0..5.0f64, wu in 0.0..5.0f64) {
        let rule = ScoreRule::new(wd, wu).unwrap();
        let base = compute_score(d, u, &rule);
        let scaled = compute_score(lambda * d, lambda * u, &rule);
        prop_assert!((scaled - lambda * base).abs() <= 1e-12 * (1.0 + lambda * base));
    }

    #[test]
    fn centroid_inside_tile(digits in prop::collection::vec(0u8..4, 1..24)) {
        let q: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
        let t = Tile::parse(&q).unwrap();
        let (lon, lat) = t.centroid();
        let (lo0, la0, lo1, la1) = t.bounds();
        prop_assert!(lo0 < lon && lon < lo1);
        prop_assert!(la0 < lat && lat < la1);
        prop_assert_eq!(Tile::from_lon_lat(lon, lat, t.zoom), t);
    }

    #[test]
    fn merging_duplicates_keeps_test_total(
        rows in prop::collection::vec((0u8..6, 0u8..6, 0u32..400_000, 0u32..80_000, 1u64..30), 1..60)
    ) {
        let mut csv = String::from("lon,lat,avg_d_kbps,avg_u_kbps,tests,devices\n");
        let mut total = 0;
        for (x, y, d, u, t) in &rows {
            csv.push_str(&format!("{},{},{d},{u},{t},1\n", -84.0 + *x as f64, 33.0 + *y as f64));
            total += t;
        }
        let ds = data::parse_records(csv.as_bytes(), &ScoreRule::default()).unwrap();
        prop_assert_eq!(ds.points.iter().map(|p| p.tests).sum::<u64>(), total);
        let distinct: BTreeSet<(u8, u8)> = rows.iter().map(|r| (r.0, r.1)).collect();
        prop_assert_eq!(ds.len(), distinct.len());
    }

    #[test]
    fn knn_matches_scan(locs in points(1, 300), qx in coord(), qy in coord(), k in 1usize..40) {
        let index = PointIndex::build(&locs).unwrap();
        let k = k.min(locs.len());
        let got: Vec<(usize, f64)> =
            index.knn([qx, qy], k).unwrap().iter().map(|n| (n.id, n.dist)).collect();
        prop_assert_eq!(got, brute_knn(&locs, [qx, qy], k));
    }

    #[test]
    fn kth_distance_monotone_and_self_zero(locs in points(2, 120), qx in coord(), qy in coord()) {
        let index = PointIndex::build_with(&locs, Metric::Equirectangular).unwrap();
        let mut prev = 0.0;
        for k in 1..=locs.len() {
            let r = index.kth_distance([qx, qy], k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        for p in &locs {
            prop_assert_eq!(index.kth_distance(*p, 1).unwrap(), 0.0);
        }
    }

    #[test]
    fn knn_average_bounds_and_limits(locs in points(2, 80), sp in speeds(), k in 1usize..10) {
        let ds = dataset(&locs, &sp);
        let index = PointIndex::build(&ds.locations()).unwrap();
        let scores = ds.scores();
        let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

        let smoothed = knn_average(&ds, &index, k.min(ds.len())).unwrap();
        for p in &smoothed.points {
            prop_assert!(p.score >= lo && p.score <= hi);
        }
        prop_assert_eq!(&knn_average(&ds, &index, 1).unwrap(), &ds);

        let n = ds.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let mean = mean.clamp(lo, hi);
        let global = knn_average(&ds, &index, n).unwrap();
        prop_assert!(global.points.iter().all(|p| p.score == mean));
    }

    #[test]
    fn grid_counts_sum_to_n(locs in points(1, 400), rows in 1usize..20, cols in 1usize..20) {
        let seg = segment_grid(&locs, rows, cols).unwrap();
        prop_assert_eq!(seg.total(), locs.len() as u64);
    }

    #[test]
    fn downsample_subset_touching_every_cell(locs in points(10, 400), frac in 0.01..1.0f64, seed in 0u64..1000) {
        let seg = segment_grid(&locs, 15, 15).unwrap();
        let sp = split(locs.len(), 0.8, seed).unwrap();
        let picked = stratified_downsample(&sp.train_ids, &locs, &seg, frac, seed).unwrap();
        let train: HashSet<usize> = sp.train_ids.iter().copied().collect();
        prop_assert!(picked.iter().all(|i| train.contains(i)));
        let cells = |ids: &mut dyn Iterator<Item = usize>| -> BTreeSet<(usize, usize)> {
            ids.map(|i| seg.cell_of(locs[i])).collect()
        };
        prop_assert_eq!(
            cells(&mut picked.iter().copied()),
            cells(&mut sp.train_ids.iter().copied())
        );
    }

    #[test]
    fn k1_at_training_location_returns_target(locs in points(1, 100), c in 1e-6..10.0f64, self_tuning: bool) {
        let y: Vec<f64> = (0..locs.len()).map(|i| (i as f64 * 1.7).sin() * 40.0).collect();
        let kind = if self_tuning { KernelKind::SelfTuning } else { KernelKind::Fixed };
        let seg = segment_grid(&locs, 15, 15).unwrap();
        let model = KernelModel::fit(
            &locs, &y, RegionParams::uniform(KernelConfig::new(kind, c, 1).unwrap()), seg, Metric::Planar,
        ).unwrap();
        for (p, want) in locs.iter().zip(&y) {
            prop_assert_eq!(model.predict(*p).value, *want);
        }
    }

    #[test]
    fn losses_are_ordered(pairs in prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64), 1..200)) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let l = metrics(&t, &p).unwrap();
        prop_assert!(l.mae <= l.mne * (1.0 + 1e-12));
        prop_assert!(l.mse <= l.mne * l.mne * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(config(10_000))]

    #[test]
    fn tiers_monotone(d in 0.0..300.0f64, u in 0.0..60.0f64, dd in 0.0..100.0f64, du in 0.0..30.0f64) {
        let base = classify_service(d, u).unwrap();
        prop_assert!(classify_service(d + dd, u).unwrap() >= base);
        prop_assert!(classify_service(d, u + du).unwrap() >= base);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn cv_is_deterministic(seed in 0u64..100) {
        let ds = generate(
            &SynthParams { n_dense: 300, n_sparse: 200, seed, ..SynthParams::default() },
            &ScoreRule::default(),
        ).unwrap();
        let locs = ds.locations();
        let y = ds.scores();
        let seg = segment_grid(&locs, 15, 15).unwrap();
        let run = || cross_validate(&locs, &y, KernelKind::SelfTuning, &CvGrid::default(), 5, seed, &seg, Metric::Planar).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.params, b.params);
        prop_assert_eq!(a.scores, b.scores);
    }

    // Central differences of the LML point the same way the simplex moves.
    #[test]
    fn lml_gradient_agrees_with_simplex(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<[f64; 2]> = (0..40).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|p| (4.0 * p[0]).sin() + p[1] + rng.random_range(-0.1..0.1)).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let lml = |p: &[f64]| {
            let h = GpHyperparams { sigma2: p[0].exp(), theta1: p[1].exp(), theta2: p[2].exp(), noise2: p[3].exp() };
            log_marginal_likelihood(&x, &y, mean, &h).unwrap_or(f64::NEG_INFINITY)
        };
        // deliberately far from the optimum
        let p0 = [rng.random_range(1.0..2.0), rng.random_range(-1.0..0.0), rng.random_range(-1.0..0.0), rng.random_range(-1.0..0.0)];
        let step = 1e-5;
        let grad: Vec<f64> = (0..4).map(|i| {
            let (mut a, mut b) = (p0, p0);
            a[i] += step;
            b[i] -= step;
            (lml(&a) - lml(&b)) / (2.0 * step)
        }).collect();
        let nm = NelderMead { step: 0.05, max_evals: 30, ..NelderMead::default() };
        let best = nm.minimize(|p| -lml(p), &p0);
        prop_assert!(-best.f > lml(&p0));
        let dot: f64 = best.x.iter().zip(&p0).zip(&grad).map(|((b, a), g)| (b - a) * g).sum();
        prop_assert!(dot > 0.0, "gradient {grad:?} vs move {:?}", best.x);
    }
}
