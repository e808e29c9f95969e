use std::io::Write;

use msvade::eeg::*;
use msvade::Error;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_channel_montage() -> Vec<Electrode> {
    default_montage()[..2].to_vec()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn load_small_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rec.csv");
    let montage = dir.path().join("montage.json");
    std::fs::write(&data, "Fp2,Fp1\n1.0,2.0\n3.5,-1\n0,0\n-2.25,4\n").unwrap();
    save_montage(&two_channel_montage(), &montage).unwrap();
    let rec = load_recording(&data, &montage, 250.0).unwrap();
    assert_eq!((rec.n_channels(), rec.n_samples()), (2, 4));
    assert_eq!(rec.channel_names(), vec!["Fp2", "Fp1"]);
    assert_eq!(rec.data.row(0).to_vec(), vec![1.0, 3.5, 0.0, -2.25]);
    assert_eq!(rec.montage[0].name, "Fp2");
}

#[test]
fn montage_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rec.csv");
    let montage = dir.path().join("montage.json");
    std::fs::write(&data, "Fp1,Fp2\n1,2\n").unwrap();
    save_montage(&default_montage()[..3], &montage).unwrap();
    let err = load_recording(&data, &montage, 250.0).unwrap_err();
    assert!(matches!(err, Error::MontageMismatch { data: 2, montage: 3 }));
    assert!(err.to_string().starts_with("montage mismatch"));
    assert!(err.is_validation());
}

#[test]
fn non_numeric_cell_and_bad_norm() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rec.csv");
    let montage = dir.path().join("montage.json");
    std::fs::write(&data, "Fp1,Fp2\n1,abc\n").unwrap();
    save_montage(&two_channel_montage(), &montage).unwrap();
    assert!(matches!(load_recording(&data, &montage, 250.0), Err(Error::Parse { .. })));

    let mut m = two_channel_montage();
    m[0].x *= 1.01;
    let mut f = std::fs::File::create(&montage).unwrap();
    f.write_all(serde_json::to_string(&m).unwrap().as_bytes()).unwrap();
    std::fs::write(&data, "Fp1,Fp2\n1,2\n").unwrap();
    assert!(load_recording(&data, &montage, 250.0).is_err());
}

#[test]
fn csv_round_trip_61_channels() {
    let spec = SyntheticSpec { duration: 1.0, ..Default::default() };
    let syn = generate_synthetic(&spec, &default_montage()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rec.csv");
    let montage = dir.path().join("montage.json");
    syn.recording.write_csv(&data).unwrap();
    save_montage(&default_montage(), &montage).unwrap();
    let back = load_recording(&data, &montage, 250.0).unwrap();
    assert_eq!(back.n_channels(), 61);
    assert_eq!(back, syn.recording);
}

#[test]
fn synthetic_is_deterministic_and_dwell_matches() {
    let spec = SyntheticSpec { seed: 7, ..Default::default() };
    let a = generate_synthetic(&spec, &default_montage()).unwrap();
    let b = generate_synthetic(&spec, &default_montage()).unwrap();
    assert_eq!(a.recording.data, b.recording.data);

    let spec = SyntheticSpec { seed: 1, ..Default::default() };
    let s = generate_synthetic(&spec, &default_montage()).unwrap();
    let runs = run_lengths(&s.states);
    let mean_ms = runs.iter().sum::<usize>() as f64 / runs.len() as f64 * 1000.0 / spec.fs;
    assert!((mean_ms - 80.0).abs() <= 0.15 * 80.0, "mean dwell {mean_ms} ms");
    let g = s.templates.dot(&s.templates.t());
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g[[i, j]] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn noiseless_peaks_match_active_template() {
    let spec = SyntheticSpec { snr: f64::INFINITY, duration: 10.0, ..Default::default() };
    let s = generate_synthetic(&spec, &default_montage()).unwrap();
    let car = common_average_reference(&s.recording);
    let peaks = extract_gfp_peaks(&gfp(&car), 3).unwrap();
    assert!(peaks.peak_indices.len() > 150);
    let maps = maps_at(&car, &peaks.peak_indices);
    for (row, &t) in maps.outer_iter().zip(&peaks.peak_indices) {
        let r = pearson(&row.to_vec(), &s.templates.row(s.states[t]).to_vec());
        assert!((r.abs() - 1.0).abs() < 1e-6, "peak {t}: r = {r}");
    }
}

#[test]
fn car_examples() {
    let m = two_channel_montage();
    let rec = EegRecording::new(array![[1.0, 5.0], [3.0, -5.0]], 250.0, m).unwrap();
    let car = common_average_reference(&rec);
    assert_eq!(car.data, array![[-1.0, 5.0], [1.0, -5.0]]);
    assert_eq!(common_average_reference(&car).data, car.data);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = Array2::from_shape_simple_fn((61, 1000), || rng.gen_range(-50.0..50.0));
    let rec = EegRecording::new(data, 250.0, default_montage()).unwrap();
    let car = common_average_reference(&rec);
    for col in car.data.columns() {
        assert!(col.sum().abs() / 61.0 < 1e-10);
    }
    let twice = common_average_reference(&car);
    assert!((&twice.data - &car.data).iter().all(|d| d.abs() < 1e-10));
}

fn sine_recording(freq: f64, n: usize) -> EegRecording {
    let data = Array2::from_shape_fn((2, n), |(c, t)| (c as f64 + 1.0) * (2.0 * std::f64::consts::PI * freq * t as f64 / 250.0).sin());
    EegRecording::new(data, 250.0, two_channel_montage()).unwrap()
}

fn rms(x: ndarray::ArrayView1<f64>) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn bandpass_pass_and_stop() {
    let n = 5000;
    let mid = 1000..4000;
    let pass = bandpass_filter(&sine_recording(10.0, n), 2.0, 20.0).unwrap();
    let src = sine_recording(10.0, n);
    let ratio = rms(pass.data.row(0).slice(ndarray::s![mid.clone()])) / rms(src.data.row(0).slice(ndarray::s![mid.clone()]));
    assert!((ratio - 1.0).abs() < 0.05, "10 Hz gain {ratio}");
    let stop = bandpass_filter(&sine_recording(0.5, n), 2.0, 20.0).unwrap();
    let src = sine_recording(0.5, n);
    let ratio = rms(stop.data.row(0).slice(ndarray::s![mid.clone()])) / rms(src.data.row(0).slice(ndarray::s![mid]));
    assert!(ratio < 0.1, "0.5 Hz gain {ratio}");
}

#[test]
fn bandpass_is_zero_phase() {
    let mut data = Array2::zeros((2, 2001));
    data[[0, 1000]] = 1.0;
    data[[1, 700]] = -3.0;
    let rec = EegRecording::new(data, 250.0, two_channel_montage()).unwrap();
    let out = bandpass_filter(&rec, 2.0, 20.0).unwrap();
    let argmax = |r: ndarray::ArrayView1<f64>| r.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    assert_eq!(argmax(out.data.row(0)), 1000);
    assert_eq!(argmax(out.data.row(1)), 700);
    assert!(bandpass_filter(&rec, 30.0, 20.0).is_err());
}

#[test]
fn bandpass_commutes_with_channel_permutation() {
    let spec = SyntheticSpec { duration: 4.0, ..Default::default() };
    let rec = generate_synthetic(&spec, &default_montage()).unwrap().recording;
    let perm: Vec<usize> = (0..61).rev().collect();
    let permuted = EegRecording::new(
        rec.data.select(ndarray::Axis(0), &perm),
        rec.fs,
        perm.iter().map(|&i| rec.montage[i].clone()).collect(),
    )
    .unwrap();
    let a = bandpass_filter(&rec, 2.0, 20.0).unwrap();
    let b = bandpass_filter(&permuted, 2.0, 20.0).unwrap();
    assert_eq!(a.data.select(ndarray::Axis(0), &perm), b.data);
}

#[test]
fn gfp_examples() {
    let rec = EegRecording::new(array![[1.0, 2.0], [-1.0, 2.0]], 250.0, two_channel_montage()).unwrap();
    let g = gfp(&rec);
    assert_eq!(g.values.to_vec(), vec![1.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = Array2::from_shape_simple_fn((61, 20), || rng.gen_range(-10.0..10.0));
    let rec = EegRecording::new(data, 250.0, default_montage()).unwrap();
    let g = gfp(&rec);
    for t in 0..20 {
        let col = rec.data.column(t);
        let m = col.sum() / 61.0;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 61.0).sqrt();
        assert!((g.values[t] - sd).abs() < 1e-12);
    }
}

fn peaks_of(v: &[f64], d: usize) -> Vec<usize> {
    let s = GfpSeries { values: Array1::from(v.to_vec()), peak_indices: vec![] };
    extract_gfp_peaks(&s, d).unwrap().peak_indices
}

#[test]
fn peak_examples() {
    assert!(peaks_of(&[0.0, 1.0, 2.0, 3.0, 4.0], 1).is_empty());
    assert_eq!(peaks_of(&[0.0, 1.0, 0.0, 2.0, 0.0], 1), vec![1, 3]);
    assert_eq!(peaks_of(&[0.0, 5.0, 0.0, 4.0, 0.0], 3), vec![1]);
    assert_eq!(peaks_of(&[0.0, 4.0, 0.0, 4.0, 0.0], 3), vec![1]);
    let s = GfpSeries { values: array![1.0, 2.0], peak_indices: vec![] };
    assert!(extract_gfp_peaks(&s, 3).is_err());
}

proptest! {
    #[test]
    fn peak_invariants(v in prop::collection::vec(0.0f64..10.0, 3..200), d in 1usize..6, scale in 0.1f64..100.0) {
        let p = peaks_of(&v, d);
        for w in p.windows(2) {
            prop_assert!(w[1] > w[0] && w[1] - w[0] >= d);
        }
        for &t in &p {
            prop_assert!(t > 0 && t + 1 < v.len() && v[t - 1] < v[t] && v[t] > v[t + 1]);
        }
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert_eq!(peaks_of(&scaled, d), p);
    }
}
