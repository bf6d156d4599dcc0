//! Command handlers.

use gausspred::dfe::{backward_spectrum_check, channel_waterfill, dfe_simulate, equivalent_noise, slicer_snr_theory, ChannelModel, DfeConfig};
use gausspred::ecdq::{dither_uniformity, ecdq_encode, ecdq_rate, vq_dpcm_run, DitherMode, Lattice, LatticeKind};
use gausspred::spectra::{PowerSpectrum, SpectrumKind};
use gausspred::stats::{directed_info_estimate, sample_corr, DirectedInfoMethod};
use gausspred::testchannel::{run_predictive_channel, synthesize_source, SimConfig};
use gausspred::verify::verify_all;
use gausspred::waterfill::{prediction_gains, rdf, slb, WaterFillSolution};
use serde_json::{json, Value};

use crate::config::{DfeParams, EcdqParams, Experiment, ExperimentConfig, GainsParams, RdfCurveParams, SimulateParams};
use crate::error::CliError;
use crate::output::{num, OutputDir};

pub fn execute(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let out = OutputDir::create(&cfg.out)?;
    let result = match &cfg.experiment {
        Experiment::RdfCurve(p) => rdf_curve(cfg, p, &out)?,
        Experiment::Simulate(p) => simulate(cfg, p, &out)?,
        Experiment::Ecdq(p) => ecdq(cfg, p, &out)?,
        Experiment::Dfe(p) => dfe(cfg, p, &out)?,
        Experiment::Gains(p) => gains(cfg, p)?,
        Experiment::VerifyAll(v) => {
            let report = verify_all(v)?;
            for c in &report.criteria {
                println!("{}", c.summary_line());
            }
            out.report(cfg, &report)?;
            if !report.pass {
                let failed: Vec<String> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
                return Err(CliError::verification(format!("criteria failed: {}", failed.join(", "))));
            }
            return Ok(());
        }
    };
    out.report(cfg, result)?;
    Ok(())
}

fn spectrum(kind: &SpectrumKind<f64>, grid_size: usize, path: &str) -> Result<PowerSpectrum<f64>, CliError> {
    PowerSpectrum::new(kind.clone(), grid_size).map_err(|e| CliError::from(e).at(path))
}

fn waterfill_table(out: &OutputDir, spec: &PowerSpectrum<f64>, sol: &WaterFillSolution<f64>) -> Result<(), CliError> {
    let rows = (0..spec.grid_size())
        .map(|i| vec![num(spec.frequency(i)), num(spec.values()[i]), num(sol.distortion_spectrum[i]), num(sol.theta)]);
    out.table("waterfill.csv", &["f", "S", "D_of_f", "theta"], rows)?;
    Ok(())
}

fn rdf_curve(cfg: &ExperimentConfig, p: &RdfCurveParams, out: &OutputDir) -> Result<Value, CliError> {
    let spec = spectrum(&p.source, cfg.grid_size, "params.source")?;
    if !(p.d_min > 0.0 && p.d_max >= p.d_min) {
        return Err(CliError::config(Some("params.d_min".into()), format!("need 0 < d_min <= d_max (got {}, {})", p.d_min, p.d_max)));
    }
    let ds: Vec<f64> = (0..p.points)
        .map(|i| {
            let t = if p.points > 1 { i as f64 / (p.points - 1) as f64 } else { 0.0 };
            if p.log_spacing {
                p.d_min * (p.d_max / p.d_min).powf(t)
            } else {
                p.d_min + (p.d_max - p.d_min) * t
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(ds.len());
    for (i, &d) in ds.iter().enumerate() {
        let at = || format!("params.points[{i}]");
        let sol = rdf(&spec, d).map_err(|e| CliError::from(e).at(at()))?;
        let lower = slb(&spec, d).map_err(|e| CliError::from(e).at(at()))?;
        rows.push(vec![
            num(d),
            num(sol.theta),
            num(sol.rate_bits()),
            num(lower / std::f64::consts::LN_2),
            sol.slb_tight.to_string(),
        ]);
    }
    out.table("rdf_curve.csv", &["D", "theta", "rate_bits", "slb_bits", "slb_tight"], rows)?;
    let overlay = match p.overlay_distortion {
        Some(d) => {
            let sol = rdf(&spec, d).map_err(|e| CliError::from(e).at("params.overlay_distortion"))?;
            waterfill_table(out, &spec, &sol)?;
            Some(json!({ "D": d, "theta": sol.theta, "rate_bits": sol.rate_bits() }))
        }
        None => None,
    };
    Ok(json!({ "variance": spec.variance(), "points": ds.len(), "overlay": overlay }))
}

fn simulate(cfg: &ExperimentConfig, p: &SimulateParams, out: &OutputDir) -> Result<Value, CliError> {
    let spec = spectrum(&p.source, cfg.grid_size, "params.source")?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (i, &d) in p.distortions.iter().enumerate() {
        let at = format!("params.distortions[{i}]");
        let mut sc = SimConfig::new(spec.clone(), d, p.samples, cfg.seed);
        sc.predictor_order = p.predictor_order;
        sc.fir_taps = p.fir_taps;
        sc.burn_in = p.burn_in;
        sc.record_traces = i == 0 && p.trace_samples > 0;
        sc.validate().map_err(|e| CliError::from(e).at(at.clone()))?;
        let r = run_predictive_channel(&sc).map_err(|e| CliError::from(e).at(at))?;
        if i == 0 {
            waterfill_table(out, &spec, &rdf(&spec, d)?)?;
        }
        if let Some(t) = &r.traces {
            let n = p.trace_samples.min(t.x.len());
            let rows = (0..n).map(|k| {
                vec![k.to_string(), num(t.x[k]), num(t.u[k]), num(t.z[k]), num(t.zq[k]), num(t.noise[k]), num(t.v[k]), num(t.y[k])]
            });
            out.table("traces.csv", &["n", "x", "u", "z", "zq", "noise", "v", "y"], rows)?;
        }
        rows.push(vec![
            num(d),
            num(r.theta),
            num(r.measured_d),
            num(r.rate_theory_bits),
            num(r.mi_scalar_bits),
            num(r.slb_bits),
            num(r.var_z),
            num(r.var_zq),
            num(r.zq_variance_theory),
            num(r.zq_whiteness.max_abs),
            num(r.zq_whiteness.threshold),
            num(r.z_lag1_autocorr),
        ]);
        runs.push(json!({
            "D": d,
            "theta": r.theta,
            "measured_d": r.measured_d,
            "rate_bits": r.rate_theory_bits,
            "mi_scalar_bits": r.mi_scalar_bits,
            "slb_bits": r.slb_bits,
            "var_z": r.var_z,
            "var_zq": r.var_zq,
            "zq_variance_theory": r.zq_variance_theory,
            "zq_whiteness_max": r.zq_whiteness.max_abs,
            "zq_whiteness_threshold": r.zq_whiteness.threshold,
            "zq_white": r.zq_whiteness.pass,
            "z_lag1_autocorr": r.z_lag1_autocorr,
            "noise_input_corr": r.noise_input_corr,
            "noise_past_input_corr": r.noise_past_input_corr,
            "window": [r.window.start, r.window.end],
        }));
    }
    out.table(
        "simulate.csv",
        &[
            "D",
            "theta",
            "measured_d",
            "rate_bits",
            "mi_scalar_bits",
            "slb_bits",
            "var_z",
            "var_zq",
            "zq_variance_theory",
            "zq_whiteness_max",
            "zq_whiteness_threshold",
            "z_lag1_autocorr",
        ],
        rows,
    )?;
    Ok(json!({ "variance": spec.variance(), "runs": runs }))
}

const ECDQ_COLUMNS: [&str; 13] = [
    "mode",
    "D",
    "delta",
    "second_moment",
    "noise_var",
    "measured_d",
    "rate_bits",
    "rate_theory_bits",
    "directed_bits",
    "ordinary_bits",
    "dither_chi2",
    "dither_pass",
    "entropy_reliable",
];

fn ecdq(cfg: &ExperimentConfig, p: &EcdqParams, out: &OutputDir) -> Result<Value, CliError> {
    let spec = spectrum(&p.source, cfg.grid_size, "params.source")?;
    let kind: LatticeKind = p.lattice.parse().map_err(|e| CliError::from(e).at("params.lattice"))?;
    let k = Lattice::new(kind, 1.0)?.dimension();
    let c = p.context_order;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    if let Some(delta) = p.delta {
        let lattice = Lattice::new(kind, delta).map_err(|e| CliError::from(e).at("params.delta"))?;
        let mut x = synthesize_source(&spec, p.samples, cfg.seed);
        x.truncate(x.len() / k * k);
        let run = ecdq_encode(&x, &lattice, cfg.seed, DitherMode::Subtractive)?;
        let rate = ecdq_rate(&run, c)?;
        let m = lattice.second_moment_per_dim();
        let noise_var = run.noise.iter().map(|v| v * v).sum::<f64>() / run.noise.len() as f64;
        let corr = sample_corr(&run.input, &run.noise, 0)?;
        let di = directed_info_estimate(&run.input, &run.reconstruction, k, c, DirectedInfoMethod::PlugIn)?;
        let chi = dither_uniformity(&run)?;
        let theory = (m <= spec.variance()).then(|| rdf(&spec, m)).transpose()?.map(|s| s.rate_bits());
        rows.push(vec![
            "open-loop".into(),
            String::new(),
            num(delta),
            num(m),
            num(noise_var),
            num(noise_var),
            num(rate.bits_per_sample),
            theory.map(num).unwrap_or_default(),
            num(di.directed_bits()),
            num(di.ordinary_bits()),
            num(chi.statistic),
            chi.pass.to_string(),
            rate.entropy.reliable.to_string(),
        ]);
        runs.push(json!({
            "mode": "open-loop",
            "delta": delta,
            "second_moment": m,
            "noise_var": noise_var,
            "noise_in_cell": run.noise_in_cell(),
            "input_noise_corr": corr,
            "independence_threshold": 3.0 / (run.input.len() as f64).sqrt(),
            "rate": rate,
            "rate_theory_bits": theory,
            "directed_info": di,
            "gap_bits": di.gap_bits(),
            "dither_uniformity": chi,
        }));
    } else {
        for (i, &d) in p.distortions.iter().enumerate() {
            let at = format!("params.distortions[{i}]");
            let sources = if p.interleave == 1 { k } else { 1 };
            let configs = (0..sources)
                .map(|j| {
                    let mut sc = SimConfig::new(spec.clone(), d, p.samples, cfg.seed + j as u64);
                    sc.predictor_order = p.predictor_order;
                    sc.fir_taps = p.fir_taps;
                    sc.validate().map_err(|e| CliError::from(e).at(at.clone()))?;
                    Ok(sc)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let rep = vq_dpcm_run(&configs, kind, p.interleave, c).map_err(|e| CliError::from(e).at("params.interleave"))?;
            let run = &rep.ecdq;
            let di = directed_info_estimate(&run.input, &run.reconstruction, k, c, DirectedInfoMethod::PlugIn)?;
            let chi = dither_uniformity(run)?;
            let per = rep.per_source.len() as f64;
            let measured_d = rep.per_source.iter().map(|s| s.measured_d).sum::<f64>() / per;
            let noise_var = rep.per_source.iter().map(|s| s.var_noise).sum::<f64>() / per;
            let m = rep.per_source[0].theta;
            rows.push(vec![
                "loop".into(),
                num(d),
                num(rep.lattice.scale),
                num(m),
                num(noise_var),
                num(measured_d),
                num(rep.rate.bits_per_sample),
                num(rep.rate_theory_bits),
                num(di.directed_bits()),
                num(di.ordinary_bits()),
                num(chi.statistic),
                chi.pass.to_string(),
                rep.rate.entropy.reliable.to_string(),
            ]);
            runs.push(json!({
                "mode": "loop",
                "D": d,
                "delta": rep.lattice.scale,
                "interleave": rep.interleave_depth,
                "per_source": rep.per_source,
                "rate": rep.rate,
                "rate_theory_bits": rep.rate_theory_bits,
                "rate_gap_bits": rep.rate.bits_per_sample - rep.rate_theory_bits,
                "noise_in_cell": run.noise_in_cell(),
                "directed_info": di,
                "gap_bits": di.gap_bits(),
                "dither_uniformity": chi,
            }));
        }
    }
    out.table("ecdq.csv", &ECDQ_COLUMNS, rows)?;
    Ok(json!({ "lattice": kind.to_string(), "dimension": k, "context_order": c, "runs": runs }))
}

fn dfe(cfg: &ExperimentConfig, p: &DfeParams, out: &OutputDir) -> Result<Value, CliError> {
    let noise = spectrum(&p.channel.noise, cfg.grid_size, "params.channel.noise")?;
    let channel = ChannelModel::new(p.channel.isi_taps.clone(), noise, p.channel.power).map_err(|e| CliError::from(e).at("params.channel"))?;
    let s_n = equivalent_noise(&channel).map_err(|e| CliError::from(e).at("params.channel.isi_taps"))?;
    let mut dc = DfeConfig::new(channel, p.samples, cfg.seed);
    dc.predictor_order = p.predictor_order;
    dc.fir_taps = p.fir_taps;
    dc.record_traces = true;
    let sol = dfe_simulate(&dc)?;
    let backward = backward_spectrum_check(&sol)?;
    let wf = &sol.waterfill;
    let rows = (0..s_n.grid_size()).map(|i| {
        let (n, a2) = (s_n.values()[i], wf.shaping_mag2[i]);
        let s_d = wf.theta * (1.0 - a2) * (1.0 - a2) + a2 * n;
        vec![num(s_n.frequency(i)), num(n), num(wf.input_spectrum[i]), num(wf.theta), num(s_d)]
    });
    out.table("dfe_spectra.csv", &["f", "S_N", "S_X", "theta", "S_D_theory"], rows)?;
    let pe_n = s_n.entropy_power()?;
    let mut curve = Vec::new();
    for (i, &power) in p.power_sweep.iter().enumerate() {
        let w = channel_waterfill(&s_n, power).map_err(|e| CliError::from(e).at(format!("params.power_sweep[{i}]")))?;
        let snr = slicer_snr_theory(&w.input_spectrum, s_n.values())?;
        let sub = 0.5 * ((power + s_n.variance()) / pe_n).log2();
        curve.push(vec![
            num(power),
            num(w.theta),
            num(w.capacity_bits()),
            num(snr),
            num(10.0 * snr.log10()),
            num(sub),
            w.full_band.to_string(),
        ]);
    }
    out.table(
        "snr_curve.csv",
        &["P", "theta", "capacity_bits", "slicer_snr_theory", "slicer_snr_db", "shannon_upper_bound_bits", "full_band"],
        curve,
    )?;
    Ok(json!({
        "theta": wf.theta,
        "full_band": wf.full_band,
        "capacity_bits": sol.capacity_bits,
        "scalar_mi_bits": sol.scalar_mi_bits,
        "shannon_upper_bound_bits": sol.shannon_upper_bound_bits,
        "sigma_u2": sol.sigma_u2,
        "error_entropy_power": sol.error_entropy_power,
        "slicer_error_variance": sol.slicer_error_variance,
        "slicer_error_rel": sol.slicer_error_variance / sol.error_entropy_power - 1.0,
        "slicer_snr_theory": sol.slicer_snr_theory,
        "slicer_snr_measured": sol.slicer_snr_measured,
        "input_power": sol.input_power,
        "error_past_corr": sol.error_past_corr,
        "error_future_corr": sol.error_future_corr,
        "backward_spectrum_deviation": backward,
        "predictor": sol.predictor,
        "window": [sol.window.start, sol.window.end],
    }))
}

fn gains(cfg: &ExperimentConfig, p: &GainsParams) -> Result<Value, CliError> {
    let spec = spectrum(&p.source, cfg.grid_size, "params.source")?;
    let g = prediction_gains(&spec).map_err(|e| CliError::from(e).at("params.source"))?;
    let db = |x: f64| 10.0 * x.log10();
    Ok(json!({
        "variance": spec.variance(),
        "entropy_power": spec.entropy_power()?,
        "dpcm": g.dpcm,
        "dpcm_db": db(g.dpcm),
        "dstar_pcm": g.dstar_pcm,
        "dstar_pcm_db": db(g.dstar_pcm),
        "ratio": g.ratio,
        "ratio_half_whitened": g.ratio_half_whitened,
    }))
}
