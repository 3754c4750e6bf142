use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relay_scope::dataset::{LabeledSample, PIXELS};
use relay_scope::discretize::bin_trace;
use relay_scope::network::{argmax, build_composite};
use relay_scope::perturb::{fit_regression, knockout_sweep, student_t_cdf, two_sided_p, KnockoutProbe};
use relay_scope::search::greedy_ssa;
use relay_scope::{BinningStrategy, Dataset, DenseNet, KnockoutMask, NodeSet, RelayKernel, Split};
use statrs::function::gamma::ln_gamma;

/// `0.5 + integral_0^t density` by composite Simpson with 10^6 intervals.
fn t_cdf_by_integration(t: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 1_000_000;
    let h = t / n as f64;
    let mut sum = density(0.0) + density(t);
    for i in 1..n {
        sum += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + sum * h / 3.0
}

#[test]
fn t_cdf_matches_numeric_integration() {
    for df in [5.0, 17.0, 197.0] {
        for t in [-4.0, -1.3, 0.2, 0.9, 2.5, 6.0] {
            let exact = student_t_cdf(t, df);
            let numeric = t_cdf_by_integration(t, df);
            assert!((exact - numeric).abs() < 1e-8, "df {df} t {t}: {exact} vs {numeric}");
        }
        let p = two_sided_p(2.0, df);
        assert!((p - 2.0 * (1.0 - t_cdf_by_integration(2.0, df))).abs() < 1e-8);
    }
}

fn dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            let pixels = (0..PIXELS)
                .map(|p| {
                    let base: f64 = rng.random_range(-1.0..1.0);
                    if p / 78 == label as usize {
                        base.abs()
                    } else {
                        base
                    }
                })
                .collect();
            LabeledSample::new(pixels, label).unwrap()
        })
        .collect();
    Dataset::new(samples, Split::Test)
}

#[test]
fn knockout_identities() {
    let net = DenseNet::random(PIXELS, 6, 10, 3);
    let data = dataset(200, 1);
    let probe = KnockoutProbe::new(&net, &data).unwrap();
    for c in [0, 4, 9] {
        assert_eq!(probe.effect(c, NodeSet::EMPTY).unwrap(), 0.0);
        // matches a full forward pass with the mask
        let mask = NodeSet::from_nodes([1, 4]);
        assert_eq!(
            probe.accuracy(c, mask).unwrap(),
            net.accuracy(&data, KnockoutMask(mask), Some(c)).unwrap()
        );
    }
    // whole layer knocked out: the constant predictor argmax(tanh(b2))
    let constant = argmax(&net.b2().iter().map(|b| b.tanh()).collect::<Vec<_>>());
    for c in 0..10 {
        let expected = data.labels().filter(|&l| (l as usize == c) == (constant == c)).count() as f64 / 200.0;
        assert_eq!(probe.accuracy(c, NodeSet::full(6)).unwrap(), expected);
    }
    assert!(probe.accuracy(10, NodeSet::EMPTY).is_err());
    assert!(probe.accuracy(0, NodeSet::from_nodes([6])).is_err());
}

#[test]
fn sweep_follows_the_chain() {
    let net = DenseNet::random(PIXELS, 5, 10, 8);
    let data = dataset(300, 2);
    let trace = net.record_trace(&data, KnockoutMask::NONE).unwrap();
    let (binned, _) = bin_trace(&trace, BinningStrategy::Kmeans).unwrap();
    let chain = greedy_ssa(&binned, 3).unwrap();
    let records = knockout_sweep(&net, &data, &chain).unwrap();
    assert_eq!(records.len(), 5);
    for (r, size) in records.iter().zip((1..=5).rev()) {
        assert_eq!(r.size, size);
        assert_eq!(r.set, chain.set_of_size(size));
        assert_eq!(r.relay_information, chain.information_of_size(size));
        assert!((-1.0..=1.0).contains(&r.effect));
    }
    let kernel = RelayKernel::new(&binned, 3).unwrap();
    let probe = KnockoutProbe::new(&net, &data).unwrap();
    let direct = probe.records(&kernel, &chain.nested_sets()).unwrap();
    for (a, b) in direct.iter().zip(&records) {
        assert_eq!(a.effect, b.effect);
        assert!((a.relay_information - b.relay_information).abs() < 1e-12);
    }

    let other = DenseNet::random(PIXELS, 4, 10, 0);
    assert!(knockout_sweep(&other, &data, &chain).is_err());
}

#[test]
fn composite_knockouts_stay_inside_their_block() {
    // detectors with disjoint input support: knocking out one detector's
    // nodes leaves the other detectors' outputs untouched
    let subnets: Vec<DenseNet> = (0..10).map(|c| DenseNet::random(PIXELS, 2, 1, 40 + c)).collect();
    let composite = build_composite(&subnets).unwrap();
    let data = dataset(100, 3);
    let probe = KnockoutProbe::new(&composite, &data).unwrap();
    let trace = composite.record_trace(&data, KnockoutMask::NONE).unwrap();
    let mut out = vec![0.0; 10];
    let mut masked = vec![0.0; 10];
    for i in 0..data.len() {
        composite.readout(trace.row(i), NodeSet::EMPTY, &mut out);
        composite.readout(trace.row(i), NodeSet::from_nodes([6, 7]), &mut masked);
        for c in (0..10).filter(|&c| c != 3) {
            assert_eq!(out[c], masked[c]);
        }
    }
    assert!(probe.effect(3, NodeSet::from_nodes([6, 7])).is_ok());
}

#[test]
fn regression_reads_records() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<_> = (0..60)
        .map(|i| {
            let size = 1 + i % 20;
            let info: f64 = rng.random_range(0.0..0.5);
            relay_scope::perturb::KnockoutRecord {
                numeral: 0,
                set: NodeSet::EMPTY,
                size,
                relay_information: info,
                effect: 0.8 * info + 0.001 * size as f64 + rng.random_range(-0.01..0.01),
            }
        })
        .collect();
    let r = fit_regression(&records).unwrap();
    assert_eq!(r.degrees_of_freedom, 57);
    assert!(r.information.standardized > 2.0 * r.set_size.standardized.abs());
    assert!(r.information.p < 1e-10);
    assert!(r.r_squared > 0.9 && r.r_squared <= 1.0);
    assert!(r.f_p_value < 1e-10);
}
