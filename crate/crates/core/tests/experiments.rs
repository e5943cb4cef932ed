mod common;

use common::*;
use dtwgi::experiments::*;
use dtwgi::forecast::Backend;
use dtwgi::io::ResultTable;
use dtwgi::synth::{generate, GeneratorSpec, Kind};
use dtwgi::transforms::{ChromaTransposition, Transform};
use dtwgi::SolverConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn quantiles_and_slopes() {
    let v = [5.0, 1.0, 3.0, 2.0, 4.0];
    assert_eq!(median(&v), 3.0);
    let s = spread(&v);
    assert!((s.p20 - 1.8).abs() < 1e-12 && (s.p80 - 4.2).abs() < 1e-12);
    let x = [2.0, 4.0, 8.0, 16.0];
    let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powi(2)).collect();
    assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
}

#[test]
fn global_oti_recovers_a_circular_shift() {
    let song = generate(
        &GeneratorSpec::new(Kind::ChromaLike, 40)
            .with_dims(12)
            .with_seed(9),
    )
    .unwrap();
    let moved = Transform::Transposition(ChromaTransposition::new(5, 12).unwrap())
        .apply(&song)
        .unwrap();
    // Shifting `moved` by the returned index brings it back onto `song`.
    let k = global_oti(&song, &moved).unwrap();
    let back = Transform::Transposition(k).apply(&moved).unwrap();
    assert!((back.values() - song.values()).abs().max() < 1e-12);
}

#[test]
fn transposed_pair_costs_more_under_plain_dtw() {
    let song = generate(
        &GeneratorSpec::new(Kind::ChromaLike, 30)
            .with_dims(12)
            .with_seed(4),
    )
    .unwrap();
    let cover = Transform::Transposition(ChromaTransposition::new(3, 12).unwrap())
        .apply(&song)
        .unwrap();
    let cfg = SolverConfig {
        restarts: 12,
        ..SolverConfig::default()
    };
    let plain = retrieval_distance(&song, &cover, RetrievalMethod::Dtw, &cfg).unwrap();
    let gi = retrieval_distance(&song, &cover, RetrievalMethod::DtwGiOti, &cfg).unwrap();
    assert!(gi < 1e-20 && plain > gi, "{plain} vs {gi}");
}

#[test]
fn exact_transpositions_are_always_retrieved() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut queries = Vec::new();
    let mut corpus = Vec::new();
    for i in 0..8u64 {
        let song = generate(
            &GeneratorSpec::new(Kind::ChromaLike, 30)
                .with_dims(12)
                .with_seed(i),
        )
        .unwrap();
        let k = rand::Rng::random_range(&mut rng, 1..12);
        let cover = Transform::Transposition(ChromaTransposition::new(k, 12).unwrap())
            .apply(&song)
            .unwrap();
        queries.push(NamedSeries {
            name: format!("s{i}"),
            series: song,
        });
        corpus.push(NamedSeries {
            name: format!("s{i}"),
            series: cover,
        });
    }
    let cfg = SolverConfig {
        restarts: 12,
        ..SolverConfig::default()
    };
    let ks = [1, 2, 4, 8];
    let gi = retrieval(&queries, &corpus, RetrievalMethod::DtwGiOti, &cfg, &ks).unwrap();
    assert_eq!(gi.mr1(), 1.0);
    let plain = retrieval(&queries, &corpus, RetrievalMethod::Dtw, &cfg, &ks).unwrap();
    assert!(plain.mr1() > 1.0);
    for r in [&gi, &plain] {
        let recall: Vec<f64> = ks.iter().map(|&k| r.recall_at(k)).collect();
        assert!(recall.windows(2).all(|w| w[0] <= w[1]));
        let table = ResultTable::read_from(r.table().to_csv_string().as_bytes()).unwrap();
        assert_eq!(table, r.table());
    }
}

#[test]
fn unmatched_queries_are_reported() {
    let (q, c) = cover_corpus(&CoverCorpusSpec {
        pairs: 3,
        length: 20,
        ..CoverCorpusSpec::default()
    })
    .unwrap();
    let report = retrieval(
        &q,
        &c[..2],
        RetrievalMethod::Dtw,
        &SolverConfig::default(),
        &[1],
    )
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.diagnostics.len(), 1);
}

#[test]
fn load_dir_skips_bad_files() {
    let tmp = tempdir();
    write_cover_corpus(
        &tmp,
        &CoverCorpusSpec {
            pairs: 3,
            length: 16,
            ..CoverCorpusSpec::default()
        },
    )
    .unwrap();
    std::fs::write(tmp.join("queries/zzz.csv"), "# dims=2 length=3\n1,2\n").unwrap();
    let (items, diag) = load_dir(&tmp.join("queries")).unwrap();
    assert_eq!(items.len(), 3);
    assert_eq!(diag.len(), 1);
    assert!(diag[0].contains("zzz.csv"));
    std::fs::remove_dir_all(&tmp).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("dtwgi-exp-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn forecast_rows_follow_the_grid() {
    let spec = ForecastStudySpec {
        trials: 2,
        lambdas: vec![0.5, 0.01],
        backends: vec![Backend::L2, Backend::L2Procrustes],
        ..ForecastStudySpec::default()
    };
    let rows = forecast_study(&spec).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    assert_eq!(lambdas, vec![0.01, 0.5]);
    assert_eq!(rows, forecast_study(&spec).unwrap());
    let table = forecast_table(&rows);
    assert_eq!(
        ResultTable::read_from(table.to_csv_string().as_bytes()).unwrap(),
        table
    );
}

#[test]
fn flat_weights_approach_the_corpus_mean() {
    // With tiny lambda every backend without a map predicts the plain mean of the futures.
    let (corpus, queries) = forecast_trial_data(&ForecastStudySpec::default(), 0).unwrap();
    let begin = queries[0].slice(0, corpus.split()).unwrap();
    let cfg = ForecastStudySpec::default().backend;
    let mean = {
        let mut m = corpus.end(0).into_values() * 0.0;
        for i in 0..corpus.len() {
            m += corpus.end(i).values();
        }
        m / corpus.len() as f64
    };
    for b in [Backend::L2, Backend::SoftDtw] {
        let out = dtwgi::forecast::forecast(&begin, &corpus, b, 1e-9, &cfg).unwrap();
        assert!((out.values() - &mean).abs().max() < 1e-6);
    }
}

#[test]
fn rotation_rows_are_normalized_per_method() {
    let spec = RotationBenchSpec {
        trials: 3,
        angles: 4,
        ..RotationBenchSpec::default()
    };
    let rows = bench_rotation(&spec).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 4);
    for m in [Method::Dtw, Method::DtwGi] {
        let base: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == m && r.angle_index == 0)
            .map(|r| r.ratio_to_theta0)
            .collect();
        assert!((base.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn timing_rows_are_rectangular_and_positive() {
    let spec = TimingSpec {
        lengths: vec![8, 16],
        dims: vec![2, 3],
        trials: 2,
        ..TimingSpec::default()
    };
    let rows = bench_timing(&spec).unwrap();
    assert_eq!(rows.len(), 4 * 4 * 2);
    assert!(rows.iter().all(|r| r.seconds > 0.0));
    let table = timing_table(&rows);
    assert!(table.rows().iter().all(|r| r.len() == 5));
    assert_eq!(timing_summary(&rows).len(), 4 * 4);
}

#[test]
fn pair_distance_checks_spaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_series(&mut rng, 10, 3);
    let y = random_series(&mut rng, 12, 2);
    let cfg = PairConfig::default();
    assert!(pair_distance(&x, &y, Method::Dtw, &cfg).is_err());
    assert!(pair_distance(&x, &y, Method::SoftDtw, &cfg).is_err());
    assert!(pair_distance(&x, &y, Method::DtwGi, &cfg).is_ok());
    assert!(pair_distance(&y, &x, Method::DtwGi, &cfg).is_err());
    let warm = PairConfig {
        warm_start: true,
        ..PairConfig::default()
    };
    let a = pair_distance(&x, &y, Method::SoftDtwGi, &warm).unwrap();
    assert!(a.cost.is_finite() && a.path.is_none());
}
