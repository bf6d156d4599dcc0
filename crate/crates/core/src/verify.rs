//! Numerical acceptance suite: every closed-form claim checked against
//! quadrature, an independent oracle, or a seeded Monte Carlo run.
//!
//! Reports contain only values derived from the configuration, so a fixed
//! seed gives identical reports. Independent runs are evaluated in parallel
//! and collected in order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfe::{dfe_simulate, ChannelModel, DfeConfig, DfeSolution};
use crate::ecdq::{
    d4_nearest_exhaustive, ecdq_encode, ecdq_rate, vq_dpcm_run, DitherMode, EcdqRun, Lattice, LatticeKind,
    VqDpcmReport,
};
use crate::error::Result;
use crate::filters::DEFAULT_FIR_TAPS;
use crate::prediction::{levinson, solve_normal_equations, DEFAULT_PREDICTOR_ORDER};
use crate::spectra::{PowerSpectrum, DEFAULT_GRID_SIZE};
use crate::stats::{directed_info_estimate, sample_corr, DirectedInfoMethod};
use crate::testchannel::{
    channel_noise, design_channel, finite_order_mi, run_forward_equivalent, run_predictive_channel,
    run_predictive_channel_with_noise, synthesize_source, SimConfig, SimResult,
};
use crate::waterfill::{prediction_gains, rdf};

/// Acceptance thresholds with their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// White source, `D = 1/4`: rate error in bits.
    pub rdf_white_bits: f64,
    /// AR(1), `D = 0.1`: rate error against the Shannon lower bound in bits.
    pub rdf_slb_bits: f64,
    /// Relative error of the measured distortion.
    pub distortion_rel: f64,
    /// `|1/2 log2(1 + var Z / theta) - R(D)|` in bits.
    pub rate_gap_bits: f64,
    /// Largest sample deviation between the loop and the forward channel.
    pub dpcm_identity: f64,
    /// Relative error of `var Zq` against `Pe(max(theta, S))`.
    pub zq_variance_rel: f64,
    /// Whiteness and independence thresholds are this many `1/sqrt(N)`.
    pub z_score: f64,
    /// Finite-order information at the largest order against `R(D)`, bits.
    pub ladder_final_bits: f64,
    /// Scalar ECDQ space-filling loss in bits.
    pub scalar_loss_bits: f64,
    /// Margin on top of the space-filling loss in bits.
    pub ecdq_margin_bits: f64,
    /// Relative error of the dither noise variance against `Delta^2 / 12`.
    pub ecdq_noise_rel: f64,
    /// Allowed shortfall of the directed estimate below the measured rate, bits.
    pub directed_slack_bits: f64,
    /// Directed versus ordinary estimate without feedback, bits.
    pub no_feedback_bits: f64,
    /// `|1/2 log2(sigma_U^2 / sigma_E^2) - C|` in bits.
    pub dfe_capacity_bits: f64,
    /// Relative error of the slicer error variance against `Pe(D)`.
    pub dfe_error_rel: f64,
    /// Relative disagreement of the two gain ratio computations.
    pub gains_rel: f64,
    /// Levinson against the direct solve, absolute.
    pub levinson_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rdf_white_bits: 1e-6,
            rdf_slb_bits: 1e-4,
            distortion_rel: 0.02,
            rate_gap_bits: 0.03,
            dpcm_identity: 1e-9,
            zq_variance_rel: 0.02,
            z_score: 3.0,
            ladder_final_bits: 0.01,
            scalar_loss_bits: 0.254,
            ecdq_margin_bits: 0.05,
            ecdq_noise_rel: 0.01,
            directed_slack_bits: 0.05,
            no_feedback_bits: 0.02,
            dfe_capacity_bits: 0.03,
            dfe_error_rel: 0.03,
            gains_rel: 1e-9,
            levinson_abs: 1e-9,
        }
    }
}

/// Shared parameters of the suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub samples: usize,
    pub predictor_order: usize,
    pub fir_taps: usize,
    pub grid_size: usize,
    /// AR(1) coefficient of the colored test source.
    pub ar_coefficient: f64,
    /// Distortion ladder of the Monte Carlo runs.
    pub distortions: Vec<f64>,
    /// Orders of the finite-order information ladder.
    pub ladder_orders: Vec<usize>,
    /// Context order of the directed-information comparison.
    pub context_order: usize,
    pub oracle_trials: usize,
    pub oracle_max_order: usize,
    pub lattice_trials: usize,
    pub tolerances: Tolerances,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: 1_000_000,
            predictor_order: DEFAULT_PREDICTOR_ORDER,
            fir_taps: DEFAULT_FIR_TAPS,
            grid_size: DEFAULT_GRID_SIZE,
            ar_coefficient: 0.9,
            distortions: vec![0.05, 0.1, 0.25, 1.0, 3.0],
            ladder_orders: vec![1, 2, 4, 8, 16, 32, 64, 128],
            context_order: 2,
            oracle_trials: 100,
            oracle_max_order: 16,
            lattice_trials: 10_000,
            tolerances: Tolerances::default(),
        }
    }
}

impl VerifyConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn ar_source(&self) -> Result<PowerSpectrum<f64>> {
        PowerSpectrum::ar(vec![self.ar_coefficient], 1.0, self.grid_size)
    }

    pub fn sim_config(&self, distortion: f64) -> Result<SimConfig<f64>> {
        let mut cfg = SimConfig::new(self.ar_source()?, distortion, self.samples, self.seed);
        cfg.predictor_order = self.predictor_order;
        cfg.fir_taps = self.fir_taps;
        Ok(cfg)
    }

    fn threshold(&self, n: usize) -> f64 {
        self.tolerances.z_score / (n as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

/// One quantity against its bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtMost, bound, pass: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtLeast, bound, pass: value >= bound }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl CriterionReport {
    fn new(id: u32, title: impl Into<String>, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { id, title: title.into(), pass, checks }
    }

    /// Largest violation, or the tightest check when all pass, by margin
    /// relative to the bound.
    pub fn worst(&self) -> Option<&Check> {
        let margin = |c: &Check| {
            let m = match c.relation {
                Relation::AtMost => c.bound - c.value,
                Relation::AtLeast => c.value - c.bound,
            };
            if c.bound != 0.0 { m / c.bound.abs() } else { m }
        };
        self.checks.iter().min_by(|a, b| margin(a).total_cmp(&margin(b)))
    }

    /// `PASS`/`FAIL` line with the tightest check.
    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match self.worst() {
            Some(c) => format!(
                "criterion {:>2} {verdict}: {} [tightest: {} = {:.6e} {} {:.6e}]",
                self.id,
                self.title,
                c.name,
                c.value,
                if c.relation == Relation::AtMost { "<=" } else { ">=" },
                c.bound
            ),
            None => format!("criterion {:>2} {verdict}: {}", self.id, self.title),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub pass: bool,
    pub criteria: Vec<CriterionReport>,
}

/// Exact rate-distortion values from water-filling.
pub fn criterion_1(cfg: &VerifyConfig) -> Result<CriterionReport> {
    let tol = &cfg.tolerances;
    let white = PowerSpectrum::<f64>::white(1.0, cfg.grid_size)?;
    let r_white = rdf(&white, 0.25)?.rate_bits();
    let r_ar = rdf(&cfg.ar_source()?, 0.1)?.rate_bits();
    let slb = 0.5 * 10f64.log2();
    Ok(CriterionReport::new(
        1,
        "water-filling exactness",
        vec![
            Check::at_most("|R_white(0.25) - 1| bits", (r_white - 1.0).abs(), tol.rdf_white_bits),
            Check::at_most("|R_ar(0.1) - log2(10)/2| bits", (r_ar - slb).abs(), tol.rdf_slb_bits),
        ],
    ))
}

/// Predictive test-channel runs over the distortion ladder.
pub fn predictive_ladder(cfg: &VerifyConfig) -> Result<Vec<SimResult<f64>>> {
    cfg.distortions
        .par_iter()
        .map(|&d| run_predictive_channel(&cfg.sim_config(d)?))
        .collect()
}

/// Measured distortion of the predictive test channel.
pub fn criterion_2(cfg: &VerifyConfig, runs: &[SimResult<f64>]) -> CriterionReport {
    let checks = cfg
        .distortions
        .iter()
        .zip(runs)
        .map(|(&d, r)| Check::at_most(format!("D={d}: |D_meas/D - 1|"), (r.measured_d / d - 1.0).abs(), cfg.tolerances.distortion_rel))
        .collect();
    CriterionReport::new(2, "test channel meets the target distortion", checks)
}

/// Scalar mutual information of the loop against `R(D)`.
pub fn criterion_3(cfg: &VerifyConfig, runs: &[SimResult<f64>]) -> CriterionReport {
    let checks = cfg
        .distortions
        .iter()
        .zip(runs)
        .map(|(&d, r)| {
            Check::at_most(
                format!("D={d}: |I_scalar - R(D)| bits"),
                (r.mi_scalar_bits - r.rate_theory_bits).abs(),
                cfg.tolerances.rate_gap_bits,
            )
        })
        .collect();
    CriterionReport::new(3, "scalar loop information equals R(D)", checks)
}

/// Loop and forward channel driven by the same noise agree sample by sample.
pub fn criterion_4(cfg: &VerifyConfig) -> Result<CriterionReport> {
    let d = cfg.distortions.get(1).copied().unwrap_or(0.1);
    let mut sim = cfg.sim_config(d)?;
    sim.record_traces = true;
    let noise = channel_noise(&sim, design_channel(&sim)?.theta());
    let looped = run_predictive_channel_with_noise(&sim, &noise)?;
    let forward = run_forward_equivalent(&sim, &noise)?;
    let (a, b) = (looped.traces()?, forward.traces()?);
    let dev = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let tol = cfg.tolerances.dpcm_identity;
    Ok(CriterionReport::new(
        4,
        "closed loop equals forward channel V = U + N",
        vec![
            Check::at_most(format!("D={d}: max |V_loop - V_fwd|"), dev(&a.v, &b.v), tol),
            Check::at_most(format!("D={d}: max |Z_loop - Z_fwd|"), dev(&a.z, &b.z), tol),
            Check::at_most(format!("D={d}: max |Zq_loop - Zq_fwd|"), dev(&a.zq, &b.zq), tol),
            Check::at_most(format!("D={d}: max |Y_loop - Y_fwd|"), dev(&a.y, &b.y), tol),
        ],
    ))
}

/// Spectral claims: `var Zq = Pe(max(theta, S))`, white `Zq`, colored `Z`.
pub fn criterion_5(cfg: &VerifyConfig, runs: &[SimResult<f64>]) -> Result<CriterionReport> {
    let (s_min, _) = cfg.ar_source()?.extrema();
    let mut checks = Vec::new();
    for (&d, r) in cfg.distortions.iter().zip(runs) {
        checks.push(Check::at_most(
            format!("D={d}: |var Zq / Pe - 1|"),
            (r.var_zq / r.zq_variance_theory - 1.0).abs(),
            cfg.tolerances.zq_variance_rel,
        ));
        checks.push(Check::at_most(
            format!("D={d}: max |rho_Zq(1..20)|"),
            r.zq_whiteness.max_abs,
            r.zq_whiteness.threshold,
        ));
        if d <= s_min {
            checks.push(Check::at_least(
                format!("D={d}: |rho_Z(1)|"),
                r.z_lag1_autocorr.abs(),
                r.zq_whiteness.threshold,
            ));
        }
    }
    Ok(CriterionReport::new(5, "white channel output, colored prediction error", checks))
}

/// Finite-order information decreases to `R(D)`.
pub fn criterion_6(cfg: &VerifyConfig) -> Result<CriterionReport> {
    let src = cfg.ar_source()?;
    let d = 0.1;
    let rate = rdf(&src, d)?.rate_bits();
    let mi: Vec<f64> = cfg.ladder_orders.iter().map(|&l| finite_order_mi(&src, d, l)).collect::<Result<_>>()?;
    let mut checks: Vec<Check> = cfg
        .ladder_orders
        .windows(2)
        .zip(mi.windows(2))
        .map(|(l, m)| Check::at_most(format!("I_{} - I_{} bits", l[1], l[0]), m[1] - m[0], 1e-12))
        .collect();
    if let (Some(&l), Some(&last)) = (cfg.ladder_orders.last(), mi.last()) {
        checks.push(Check::at_most(format!("|I_{l} - R(D)| bits"), (last - rate).abs(), cfg.tolerances.ladder_final_bits));
    }
    Ok(CriterionReport::new(6, "finite-order ladder converges to R(D)", checks))
}

/// Scalar ECDQ inside the prediction loop over the distortion ladder.
pub fn ecdq_ladder(cfg: &VerifyConfig) -> Result<Vec<VqDpcmReport<f64>>> {
    cfg.distortions
        .par_iter()
        .map(|&d| vq_dpcm_run(std::slice::from_ref(&cfg.sim_config(d)?), LatticeKind::Scalar, 1, 0))
        .collect()
}

/// ECDQ runs without feedback: a white and an AR(1) input quantized directly.
pub fn open_loop_ecdq(cfg: &VerifyConfig) -> Result<Vec<(String, EcdqRun<f64>)>> {
    let theta = 0.25;
    let inputs = [("white", PowerSpectrum::<f64>::white(1.0, cfg.grid_size)?), ("ar", cfg.ar_source()?)];
    inputs
        .par_iter()
        .map(|(name, spec)| {
            let x = synthesize_source(spec, cfg.samples, cfg.seed);
            let lattice = Lattice::with_second_moment(LatticeKind::Scalar, theta)?;
            Ok((name.to_string(), ecdq_encode(&x, &lattice, cfg.seed, DitherMode::Subtractive)?))
        })
        .collect()
}

/// Operational rate, noise variance and independence of scalar ECDQ.
pub fn criterion_7(
    cfg: &VerifyConfig,
    looped: &[VqDpcmReport<f64>],
    open: &[(String, EcdqRun<f64>)],
) -> Result<CriterionReport> {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    for (&d, rep) in cfg.distortions.iter().zip(looped) {
        checks.push(Check::at_most(
            format!("D={d}: H - R(D) bits"),
            rep.rate.bits_per_sample - rep.rate_theory_bits,
            tol.scalar_loss_bits + tol.ecdq_margin_bits,
        ));
        let s = &rep.per_source[0];
        checks.push(Check::at_most(format!("D={d}: |var N / (Delta^2/12) - 1|"), (s.var_noise / s.theta - 1.0).abs(), tol.ecdq_noise_rel));
    }
    for (name, run) in open {
        let m = run.lattice.second_moment_per_dim();
        let var = run.noise.iter().map(|v| v * v).sum::<f64>() / run.noise.len() as f64;
        checks.push(Check::at_most(format!("{name} open loop: |var N / (Delta^2/12) - 1|"), (var / m - 1.0).abs(), tol.ecdq_noise_rel));
        let corr = sample_corr(&run.input, &run.noise, 0)?;
        checks.push(Check::at_most(format!("{name} open loop: |corr(Z, N)|"), corr.abs(), cfg.threshold(run.input.len())));
    }
    Ok(CriterionReport::new(7, "scalar ECDQ within 0.254 bit of R(D)", checks))
}

/// Directed versus ordinary information of the quantizer.
pub fn criterion_8(
    cfg: &VerifyConfig,
    looped: &[VqDpcmReport<f64>],
    open: &[(String, EcdqRun<f64>)],
) -> Result<CriterionReport> {
    let c = cfg.context_order;
    let tol = &cfg.tolerances;
    let estimates: Vec<_> = looped
        .par_iter()
        .map(|rep| {
            let di = directed_info_estimate(&rep.ecdq.input, &rep.ecdq.reconstruction, 1, c, DirectedInfoMethod::PlugIn)?;
            Ok((di, ecdq_rate(&rep.ecdq, c)?))
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for (&d, (di, rate)) in cfg.distortions.iter().zip(&estimates) {
        checks.push(Check::at_least(format!("D={d}, c={c}: ordinary - directed bits"), di.gap_bits(), 0.0));
        checks.push(Check::at_least(
            format!("D={d}, c={c}: directed - measured rate bits"),
            di.directed_bits() - rate.bits_per_sample,
            -tol.directed_slack_bits,
        ));
    }
    for (name, run) in open {
        let di = directed_info_estimate(&run.input, &run.reconstruction, 1, c, DirectedInfoMethod::PlugIn)?;
        checks.push(Check::at_most(format!("{name} open loop, c={c}: |ordinary - directed| bits"), di.gap_bits().abs(), tol.no_feedback_bits));
    }
    Ok(CriterionReport::new(8, format!("directed information ordering (context truncated to {c} blocks)"), checks))
}

/// The two shipped equalizer channels: flat and `c = [1, 0.5]`.
pub fn dfe_cases(cfg: &VerifyConfig) -> Result<Vec<(String, DfeSolution<f64>)>> {
    let white = PowerSpectrum::<f64>::white(1.0, cfg.grid_size)?;
    let cases = [
        ("flat P=3", ChannelModel::new(vec![1.0], white.clone(), 3.0)?),
        ("c=[1,0.5] P=4", ChannelModel::new(vec![1.0, 0.5], white, 4.0)?),
    ];
    cases
        .par_iter()
        .map(|(name, ch)| {
            let mut dc = DfeConfig::new(ch.clone(), cfg.samples, cfg.seed);
            dc.predictor_order = cfg.predictor_order;
            dc.fir_taps = cfg.fir_taps;
            Ok((name.to_string(), dfe_simulate(&dc)?))
        })
        .collect()
}

/// Information optimality of noise prediction.
pub fn criterion_9(cfg: &VerifyConfig, cases: &[(String, DfeSolution<f64>)]) -> CriterionReport {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    for (name, sol) in cases {
        checks.push(Check::at_most(format!("{name}: |I_scalar - C| bits"), (sol.scalar_mi_bits - sol.capacity_bits).abs(), tol.dfe_capacity_bits));
        if sol.waterfill.full_band {
            checks.push(Check::at_most(
                format!("{name}: |sigma_E^2 / Pe(N) - 1|"),
                (sol.slicer_error_variance / sol.error_entropy_power - 1.0).abs(),
                tol.dfe_error_rel,
            ));
        }
    }
    CriterionReport::new(9, "noise-prediction DFE reaches capacity", checks)
}

/// Prediction-gain ratio, closed form against the quotient of the gains.
pub fn criterion_10(cfg: &VerifyConfig) -> Result<CriterionReport> {
    let g = prediction_gains(&cfg.ar_source()?)?;
    let quotient = g.dpcm / g.dstar_pcm;
    Ok(CriterionReport::new(
        10,
        "DPCM over D*PCM gain ratio",
        vec![
            Check::at_most("|ratio / (G_DPCM / G_D*PCM) - 1|", (g.ratio / quotient - 1.0).abs(), cfg.tolerances.gains_rel),
            Check::at_least("ratio - 1", g.ratio - 1.0, f64::EPSILON),
        ],
    ))
}

/// Levinson and D4 decoding against independent oracles.
pub fn criterion_11(cfg: &VerifyConfig) -> Result<CriterionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    for _ in 0..cfg.oracle_trials {
        let order = rng.random_range(1..=cfg.oracle_max_order);
        // biased sample autocorrelation of a random sequence is positive definite
        let x: Vec<f64> = (0..4 * cfg.oracle_max_order).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..=order).map(|k| x.iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64).collect();
        let fast = levinson(&r)?;
        let (a, mse) = solve_normal_equations(&r);
        let dev = fast.coeffs.iter().zip(&a).fold((fast.mse - mse).abs(), |m, (p, q)| m.max((p - q).abs()));
        worst = worst.max(dev);
    }
    let lattice = Lattice::new(LatticeKind::D4, 1.0)?;
    let dist = |p: &[i64], x: &[f64]| p.iter().zip(x).map(|(&a, &b)| (a as f64 - b).powi(2)).sum::<f64>();
    let mismatches = (0..cfg.lattice_trials)
        .filter(|_| {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            (dist(&lattice.nearest_coords(&x), &x) - dist(&d4_nearest_exhaustive(&x), &x)).abs() > 1e-12
        })
        .count();
    Ok(CriterionReport::new(
        11,
        "oracle equivalence",
        vec![
            Check::at_most(format!("Levinson vs direct solve, {} trials", cfg.oracle_trials), worst, cfg.tolerances.levinson_abs),
            Check::at_most(format!("D4 mismatches in {} points", cfg.lattice_trials), mismatches as f64, 0.0),
        ],
    ))
}

/// Runs criteria 1 to 11.
pub fn verify_all(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let runs = predictive_ladder(cfg)?;
    let looped = ecdq_ladder(cfg)?;
    let open = open_loop_ecdq(cfg)?;
    let dfe = dfe_cases(cfg)?;
    let criteria = vec![
        criterion_1(cfg)?,
        criterion_2(cfg, &runs),
        criterion_3(cfg, &runs),
        criterion_4(cfg)?,
        criterion_5(cfg, &runs)?,
        criterion_6(cfg)?,
        criterion_7(cfg, &looped, &open)?,
        criterion_8(cfg, &looped, &open)?,
        criterion_9(cfg, &dfe),
        criterion_10(cfg)?,
        criterion_11(cfg)?,
    ];
    let pass = criteria.iter().all(|c| c.pass);
    Ok(VerifyReport { config: cfg.clone(), pass, criteria })
}
