use gausspred::ecdq::{dither_uniformity, ecdq_encode, vq_dpcm_run, DitherMode, Lattice, LatticeKind};
use gausspred::filters::{apply_fir, design_prefilter_mag2, realize_filter_pair};
use gausspred::spectra::PowerSpectrum;
use gausspred::stats::{psd_deviation, sample_corr};
use gausspred::testchannel::{run_predictive_channel, synthesize_source, SimConfig};
use gausspred::verify::{verify_all, Tolerances, VerifyConfig};
use gausspred::waterfill::rdf;

const G: usize = 4096;

fn ar1() -> PowerSpectrum<f64> {
    PowerSpectrum::ar(vec![0.9], 1.0, G).unwrap()
}

#[test]
fn prefiltered_source_has_the_designed_spectrum() {
    let s = ar1();
    let theta = rdf(&s, 0.5).unwrap().theta;
    let pair = realize_filter_pair(&design_prefilter_mag2(&s, theta), 257).unwrap();
    let x = synthesize_source(&s, 1_000_000, 3);
    let u = apply_fir(&pair.pre_taps, pair.delay, &x).unwrap();
    let realized = pair.realized_mag2();
    let target = PowerSpectrum::tabulated(realized.iter().zip(s.values()).map(|(h, v)| h * v).collect()).unwrap();
    assert!(psd_deviation(&u.samples[u.valid.clone()], &target, 256, 4).unwrap() < 0.05);
}

#[test]
fn channel_noise_is_independent_of_the_present_input_only() {
    let mut cfg = SimConfig::new(ar1(), 0.1, 1_000_000, 9);
    cfg.record_traces = true;
    let r = run_predictive_channel(&cfg).unwrap();
    let bound = 3.0 / (r.window.len() as f64).sqrt();
    assert!(r.noise_input_corr.abs() < bound);
    assert!(r.noise_past_input_corr.abs() > 10.0 * bound);
    assert!(r.z_lag1_autocorr.abs() > 5.0 / (r.window.len() as f64).sqrt());
    assert!((r.var_zq / r.zq_variance_theory - 1.0).abs() < 0.02);
}

#[test]
fn open_loop_dither_is_independent_of_the_input() {
    let x = synthesize_source(&ar1(), 1_000_000, 4);
    let run = ecdq_encode(&x, &Lattice::with_second_moment(LatticeKind::Scalar, 0.25).unwrap(), 4, DitherMode::Subtractive).unwrap();
    let bound = 3.0 / (x.len() as f64).sqrt();
    assert!(sample_corr(&run.input, &run.dither, 0).unwrap().abs() < bound);
    assert!(dither_uniformity(&run).unwrap().pass);
    assert!(run.noise_in_cell());
}

#[test]
fn d4_beats_scalar_on_parallel_sources() {
    let cfgs: Vec<_> = (0..4).map(|i| SimConfig::new(ar1(), 0.25, 1_000_000, 20 + i)).collect();
    let d4 = vq_dpcm_run(&cfgs, LatticeKind::D4, 1, 0).unwrap();
    let scalar = vq_dpcm_run(&cfgs[..1], LatticeKind::Scalar, 1, 0).unwrap();
    assert!(d4.per_source.iter().all(|s| (s.measured_d / 0.25 - 1.0).abs() < 0.03));
    assert!(d4.rate.bits_per_sample <= scalar.rate.bits_per_sample, "{} vs {}", d4.rate.bits_per_sample, scalar.rate.bits_per_sample);
    assert!(d4.ecdq.noise_in_cell());
}

#[test]
fn interleaved_d4_loop_meets_the_target() {
    let cfg = SimConfig::new(ar1(), 0.25, 2_000_000, 30);
    let rep = vq_dpcm_run(std::slice::from_ref(&cfg), LatticeKind::D4, 4, 0).unwrap();
    assert_eq!(rep.per_source.len(), 4);
    assert!(rep.per_source.iter().all(|s| (s.measured_d / 0.25 - 1.0).abs() < 0.03));
    assert!(rep.rate.bits_per_sample < rep.rate_theory_bits + 0.304);
}

#[test]
fn single_precision_channel_tracks_double() {
    let s32 = PowerSpectrum::<f32>::ar(vec![0.9], 1.0, G).unwrap();
    let r32 = run_predictive_channel(&SimConfig::new(s32, 0.25, 200_000, 5)).unwrap();
    let r64 = run_predictive_channel(&SimConfig::new(ar1(), 0.25, 200_000, 5)).unwrap();
    assert!((r32.measured_d as f64 - r64.measured_d).abs() < 1e-3);
    assert!((r32.mi_scalar_bits as f64 - r64.mi_scalar_bits).abs() < 1e-3);
}

#[test]
fn reduced_suite_is_deterministic() {
    let cfg = VerifyConfig {
        samples: 100_000,
        distortions: vec![0.25, 1.0],
        ladder_orders: vec![1, 8],
        oracle_trials: 5,
        lattice_trials: 200,
        tolerances: Tolerances::default(),
        ..VerifyConfig::default()
    };
    let a = verify_all(&cfg).unwrap();
    let b = verify_all(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.criteria.len(), 11);
}
