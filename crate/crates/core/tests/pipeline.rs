use std::path::Path;

use ion_hom::config::MAX_SPAN;
use ion_hom::correlator::NormalizedCurve;
use ion_hom::fitkit::FitModel;
use ion_hom::pipeline::{
    model_csv_path, run_correlate, run_fit, run_simulate, simulate, CorrelateOptions, CurveTable, FitOptions,
};
use ion_hom::tagfile::TimeTagFile;
use ion_hom::{Error, ExperimentConfig, Mode, TimeTagRecord};

fn small_cw(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::reference(Mode::Cw, 2, seed);
    c.span = 0.01;
    c.optics.path_efficiency = 0.05;
    c
}

#[test]
fn simulation_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a.itg"),
        dir.path().join("b.itg"),
        dir.path().join("c.itg"),
    );
    run_simulate(&small_cw(5), &a).unwrap();
    run_simulate(&small_cw(5), &b).unwrap();
    run_simulate(&small_cw(6), &c).unwrap();
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);

    let (x, y) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    run_correlate(&dir.path().join("a.itg"), &x, CorrelateOptions::default()).unwrap();
    run_correlate(&dir.path().join("b.itg"), &y, CorrelateOptions::default()).unwrap();
    let strip = |p: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# source="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&x), strip(&y));
}

#[test]
fn one_ion_cw_count_follows_rate_times_efficiency() {
    let mut cfg = ExperimentConfig::reference(Mode::Cw, 1, 8);
    cfg.span = 0.5;
    let tags = simulate(&cfg).unwrap();
    let ions = cfg.atom.emission_rate() * cfg.span * cfg.optics.path_efficiency * cfg.detector.qe;
    let expected = ions + 2.0 * cfg.detector.dark_rate * cfg.span;
    let n = tags.len() as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
    assert!(tags.windows(2).all(|w| w[0].time <= w[1].time));
    assert!(tags.iter().all(|t| t.time <= 500_000_000_000));
}

#[test]
fn pulsed_rate_composes_excitation_duty_and_efficiency() {
    let cfg = ExperimentConfig::reference(Mode::Pulsed, 1, 4);
    let duty = cfg.duty.unwrap();
    let live = duty.fraction() * cfg.span;
    let p = cfg.pulse;
    let per_pulse = p.p_exc * cfg.optics.path_efficiency * cfg.detector.qe + p.scatter_per_pulse;
    let expected = per_pulse * live / p.rep_period + 2.0 * cfg.detector.dark_rate * live;
    let n = simulate(&cfg).unwrap().len() as f64;
    assert!((n - expected).abs() < 3.0 * expected.sqrt(), "{n} vs {expected}");
}

#[test]
fn invalid_config_never_touches_the_file_system() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.itg");
    let mut cfg = small_cw(1);
    cfg.detector.qe = 1.5;
    match run_simulate(&cfg, &out).unwrap_err() {
        Error::Config { field, .. } => assert_eq!(field, "detector.qe"),
        e => panic!("{e}"),
    }
    assert!(!out.exists());
    cfg.detector.qe = 0.2;
    cfg.span = MAX_SPAN * 2.0;
    assert_eq!(run_simulate(&cfg, &out).unwrap_err().exit_code(), 1);
    assert!(!out.exists());
}

#[test]
fn missing_directory_is_an_io_error() {
    let err = run_simulate(&small_cw(1), Path::new("/nonexistent/dir/x.itg")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("/nonexistent/dir"));
}

#[test]
fn tag_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.itg");
    run_simulate(&small_cw(2), &a).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    let file = TimeTagFile::read(&a).unwrap();
    assert_eq!(file.to_bytes(), bytes);
    let b = dir.path().join("b.itg");
    file.write(&b).unwrap();
    assert_eq!(std::fs::read(b).unwrap(), bytes);
    assert_eq!(TimeTagFile::from_bytes(&bytes, &a).unwrap(), file);
}

#[test]
fn corrupt_files_name_the_offset() {
    let file = TimeTagFile::new(2, vec![TimeTagRecord::new(0, 5), TimeTagRecord::new(1, 9)]).unwrap();
    let good = file.to_bytes();
    let p = Path::new("t.itg");
    let offset = |bytes: &[u8]| match TimeTagFile::from_bytes(bytes, p).unwrap_err() {
        Error::TagFile { offset, .. } => offset,
        e => panic!("{e}"),
    };
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(offset(&bad), 0);
    assert_eq!(offset(&good[..good.len() - 1]), 16);
    let mut swapped = good.clone();
    swapped[24 + 1..24 + 9].copy_from_slice(&100u64.to_le_bytes());
    assert_eq!(offset(&swapped), 24 + 9 + 1);
}

#[test]
fn empty_file_gives_a_csv_of_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.itg");
    TimeTagFile::new(2, Vec::new()).unwrap().write(&input).unwrap();
    let out = dir.path().join("empty.csv");
    let t = run_correlate(&input, &out, CorrelateOptions::default()).unwrap();
    assert_eq!(t.len(), 200);
    assert!(t.counts.iter().all(|&c| c == Some(0)));
    let back = CurveTable::read(&out).unwrap();
    assert_eq!(back.meta("normalization"), Some("undefined"));
    assert!(back.normalized.iter().all(|&v| v == 0.0));
}

#[test]
fn oracle_flag_checks_small_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.itg");
    run_simulate(&small_cw(3), &input).unwrap();
    let out = dir.path().join("s.csv");
    let opts = CorrelateOptions {
        oracle: true,
        ..CorrelateOptions::default()
    };
    let t = run_correlate(&input, &out, opts).unwrap();
    assert_eq!(t.meta("oracle_checked"), Some("true"));
    let unsorted = dir.path().join("bad.itg");
    let mut bytes = TimeTagFile::new(2, vec![TimeTagRecord::new(0, 5), TimeTagRecord::new(1, 9)])
        .unwrap()
        .to_bytes();
    bytes[24 + 1..24 + 9].copy_from_slice(&100u64.to_le_bytes());
    std::fs::write(&unsorted, bytes).unwrap();
    assert_eq!(run_correlate(&unsorted, &out, opts).unwrap_err().exit_code(), 2);
}

#[test]
fn fit_reports_exact_recovery_on_synthetic_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = 5.3 / (2.0 * 2f64.ln()).sqrt();
    let delays: Vec<f64> = (0..100).map(|i| (i as f64 - 49.5) * 1e-9).collect();
    let curve = NormalizedCurve {
        values: delays
            .iter()
            .map(|&t| 1.0 - 0.57 * (-(t * 1e9).powi(2) / (2.0 * s * s)).exp())
            .collect(),
        stat_err: vec![0.01; 100],
        delays,
    };
    let input = dir.path().join("dip.csv");
    CurveTable::from_curve(&curve, 1000).write(&input).unwrap();
    let out = dir.path().join("dip.txt");
    let r = run_fit(&input, FitModel::GaussianDip, &out, &FitOptions::default()).unwrap();
    assert!(r.result.converged);
    assert!((r.result.value("depth").unwrap() - 0.57).abs() < 1e-6);
    assert!((r.result.value("half_width").unwrap() - 5.3e-9).abs() < 1e-14);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, r.text);
    assert!(text.contains("depth") && text.contains("half_width") && text.contains("converged"));
    assert_eq!(r.model_csv, model_csv_path(&out));
    let model = CurveTable::read(&r.model_csv).unwrap();
    assert_eq!(model.len(), 100);
    assert!(model.counts.iter().all(Option::is_none));
}

#[test]
fn peak_fit_needs_raw_counts() {
    let dir = tempfile::tempdir().unwrap();
    let curve = NormalizedCurve {
        delays: vec![-0.5e-9, 0.5e-9],
        values: vec![1.0, 1.0],
        stat_err: vec![0.1, 0.1],
    };
    let input = dir.path().join("derived.csv");
    CurveTable::from_curve(&curve, 1000).write(&input).unwrap();
    let err = run_fit(
        &input,
        FitModel::ExponentialPeak,
        &dir.path().join("r.txt"),
        &FitOptions::default(),
    );
    assert_eq!(err.unwrap_err().exit_code(), 1);
}
