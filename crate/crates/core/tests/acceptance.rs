//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset; 9 and 10 reuse whatever 5 to 8 produced.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use cpfree::detection::{
    oamp_detect, oamp_net_forward, OampConfig, OampNetParams, OampTrainConfig, TrainingSample,
};
use cpfree::estimation::{ce_net_init, CeNetParams, CeTrainConfig, FreqChannelEstimate};
use cpfree::harness::config::{Csi, Detector, Estimator};
use cpfree::harness::dataset::split_validation;
use cpfree::harness::sim::{
    channel_mse, channel_pairs, detection_problem, detection_samples, run_point, trial_rng,
    Receiver, Setup,
};
use cpfree::harness::train::{train_cenet, train_oampnet};
use cpfree::harness::{to_csv, MetricsRecord, SimConfig};
use cpfree::numerics::{posterior_mean, Constellation, Modulation};
use cpfree::C64;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Pinned thresholds.
const UNFOLD_SYSTEMS: usize = 100;
const UNFOLD_MAX_SECONDS: f64 = 60.0;
const INIT_INPUTS: usize = 100;
const INIT_TOL: f64 = 1e-12;
const DENOISER_GRID: usize = 100;
const DENOISER_TOL: f64 = 1e-12;
const ML_TRIALS: u64 = 10_000;
const ML_MAX_RATIO: f64 = 2.0;
const MIN_ERRORS: u64 = 1000;
const REF_OAMP_25: f64 = 5.4e-3;
const REF_OAMP_40: f64 = 1.6e-3;
const REF_NET_40: f64 = 1.9e-4;
const MAGNITUDE: f64 = 10.0;
const MAX_RATIO_25: f64 = 0.8;
const MAX_RATIO_40: f64 = 0.33;
const MSE_GRID: [f64; 8] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];
const COMB_MARGIN_DB: f64 = 3.0;

// Experiment setup.
const BASE: &str = "channel = urban16
urban16_decay = 2
modulation = qam16
subcarriers = 64
min_errors = 1000
max_bits = 10000000
batch_frames = 64
covariance_samples = 10000
seed = 1
";
const CE_SEED: u64 = 101;
const CE_PAIRS: usize = 10_000;
const NET_SEED: u64 = 202;
const NET_SAMPLES: usize = 10_000;
const MSE_SAMPLES: usize = 2000;
const VALID_FRACTION: f64 = 0.1;

fn ce_hyper() -> CeTrainConfig {
    CeTrainConfig {
        lr: 1e-3,
        batch: 50,
        epochs: 20,
        seed: CE_SEED,
    }
}

fn net_hyper() -> OampTrainConfig {
    OampTrainConfig {
        lr: 0.05,
        batch: 128,
        epochs: 40,
        seed: NET_SEED,
        fd_step: 1e-4,
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn setup(extra: &str) -> Setup {
    Setup::new(SimConfig::from_text(&format!("{BASE}{extra}")).expect("config")).expect("setup")
}

fn within_magnitude(value: f64, reference: f64) -> bool {
    value > 0.0 && (value / reference).log10().abs() <= MAGNITUDE.log10()
}

fn fmt_ber(r: &MetricsRecord) -> String {
    format!("{:.3e} ({} errors)", r.ber, r.errors)
}

/// Trained models and records shared between criteria.
#[derive(Default)]
struct Bench {
    cenets: HashMap<(String, i64), CeNetParams>,
    nets: HashMap<(String, usize, i64), OampNetParams>,
    records: Vec<MetricsRecord>,
    csv: HashMap<&'static str, String>,
}

impl Bench {
    fn cenet(&mut self, pilots: &str, snr: f64) -> CeNetParams {
        self.cenets
            .entry((pilots.to_string(), snr as i64))
            .or_insert_with(|| train_ce(&setup(&format!("pilots = {pilots}\n")), snr))
            .clone()
    }

    fn estimated(&mut self, s: &Setup, snr: f64, detector: Detector) -> Receiver {
        let mut rx = Receiver::new(Some(Estimator::CeNet), detector, Csi::Estimated);
        rx.cenet = Some(self.cenet(&s.cfg.pilots.to_string(), snr));
        rx
    }

    /// OAMP-NET trained on CE-NET-estimated systems of `s` at `snr`.
    fn net(&mut self, s: &Setup, snr: f64) -> OampNetParams {
        let key = (s.cfg.modulation.to_string(), s.oamp.layers, snr as i64);
        if let Some(p) = self.nets.get(&key) {
            return p.clone();
        }
        let rx = self.estimated(s, snr, Detector::Oamp);
        let samples = detection_samples(s, &rx, snr, NET_SAMPLES, NET_SEED).expect("samples");
        let (train, valid) = split_validation(samples, VALID_FRACTION).expect("split");
        let out = train_oampnet(s, &train, &valid, &net_hyper()).expect("training");
        println!(
            "    trained OAMP-NET {} L={} at {snr} dB: validation loss {:.4} -> {:.4}",
            key.0, key.1, out.initial_loss, out.best_loss
        );
        self.nets.insert(key, out.params.clone());
        out.params
    }

    fn ber(
        &mut self,
        s: &Setup,
        snr: f64,
        detector: Detector,
        net_from: Option<(&Setup, f64)>,
    ) -> MetricsRecord {
        let mut rx = self.estimated(s, snr, detector);
        if let Some((ts, tsnr)) = net_from {
            rx.oampnet = Some(self.net(ts, tsnr));
        }
        let r = run_point(s, &rx, snr).expect("run point");
        self.records.push(r.clone());
        r
    }
}

fn train_ce(s: &Setup, snr: f64) -> CeNetParams {
    let pairs = channel_pairs(s, snr, CE_PAIRS, CE_SEED).expect("pairs");
    let (train, valid) = split_validation(pairs, VALID_FRACTION).expect("split");
    train_cenet(s, snr, &train, &valid, &ce_hyper())
        .expect("training")
        .params
}

fn unfolding() -> Verdict {
    let start = Instant::now();
    let s = setup("layers = 10\n");
    let rx = Receiver::new(None, Detector::Oamp, Csi::Perfect);
    let mut undamped = s.oamp.clone();
    undamped.damping = 1.0;
    let ones = OampNetParams::ones(undamped.layers);
    let mut mismatches = 0;
    for i in 0..UNFOLD_SYSTEMS as u64 {
        let snr = 5.0 + (i % 8) as f64 * 5.0;
        let p = detection_problem(&s, &rx, snr, &mut trial_rng(7, i)).expect("problem");
        let sys = p.training_sample(&s).expect("system").sys;
        for solver in [
            cpfree::detection::LinearSolver::Spectral,
            cpfree::detection::LinearSolver::Direct,
        ] {
            let cfg = OampConfig {
                solver,
                ..undamped.clone()
            };
            let a = oamp_detect(&sys, &cfg, &s.constellation).expect("oamp");
            let b = oamp_net_forward(&sys, &ones, &cfg, &s.constellation).expect("net");
            let same = a
                .u_hat
                .iter()
                .zip(b.u_hat.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
                && a.trace.iter().zip(&b.trace).all(|(x, y)| {
                    x.tau2.to_bits() == y.tau2.to_bits() && x.v2.to_bits() == y.v2.to_bits()
                });
            if !same {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < UNFOLD_MAX_SECONDS,
        format!("{UNFOLD_SYSTEMS} N=64 16-QAM systems, both solvers: {mismatches} mismatches, {secs:.1} s (limit {UNFOLD_MAX_SECONDS} s)"),
    )
}

fn initialization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for pilots in ["continuous", "comb16"] {
        let s = setup(&format!("pilots = {pilots}\n"));
        for snr in [5.0, 25.0, 40.0] {
            let w = s.lmmse(snr).expect("lmmse");
            let net = ce_net_init(&w);
            for _ in 0..INIT_INPUTS {
                let ls = FreqChannelEstimate::new(DVector::from_fn(64, |_, _| {
                    C64::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    )
                }));
                let diff = (net.estimate(&ls).expect("forward").h - w.apply(&ls).h).camax();
                worst = worst.max(diff);
            }
        }
    }
    verdict(
        worst <= INIT_TOL,
        format!("{INIT_INPUTS} inputs x 3 SNRs x 2 pilot layouts: max deviation {worst:.2e} (limit {INIT_TOL:.0e})"),
    )
}

/// Direct weighted sum with Gaussian densities, no rescaling.
fn literal_posterior_mean(r: f64, tau2: f64, alphabet: &[f64]) -> f64 {
    let pdf = |a: f64| {
        (-(a - r) * (a - r) / (2.0 * tau2)).exp() / (2.0 * std::f64::consts::PI * tau2).sqrt()
    };
    let num: f64 = alphabet.iter().map(|&a| a * pdf(a)).sum();
    let den: f64 = alphabet.iter().map(|&a| pdf(a)).sum();
    num / den
}

fn denoiser() -> Verdict {
    let mut worst: f64 = 0.0;
    for m in [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
        let c = Constellation::new(m);
        let a = c.real_alphabet();
        let span = 1.5 * a[a.len() - 1];
        for i in 0..DENOISER_GRID {
            let r = -span + 2.0 * span * i as f64 / (DENOISER_GRID - 1) as f64;
            for j in 0..DENOISER_GRID {
                let tau2 = 10f64.powf(-3.0 + 4.0 * j as f64 / (DENOISER_GRID - 1) as f64);
                let got = posterior_mean(r, tau2, a).expect("denoiser");
                worst = worst.max((got - literal_posterior_mean(r, tau2, a)).abs());
            }
        }
    }
    verdict(
        worst <= DENOISER_TOL,
        format!("{0}x{0} (r, tau2) grid, 3 constellations: max deviation {worst:.2e} (limit {DENOISER_TOL:.0e})", DENOISER_GRID),
    )
}

/// Exhaustive joint ML over all candidate blocks, built from the taps alone.
fn ml_block(y: &DVector<C64>, taps: &[C64], q_prev: &DVector<C64>, points: &[C64]) -> Vec<C64> {
    let n = y.len();
    let tap = |d: usize| taps.get(d).copied().unwrap_or_default();
    let j = DMatrix::from_fn(
        n,
        n,
        |i, k| if i >= k { tap(i - k) } else { C64::default() },
    );
    let a = DMatrix::from_fn(n, n, |i, k| {
        if k > i {
            tap(n + i - k)
        } else {
            C64::default()
        }
    });
    let f_inv = DMatrix::from_fn(n, n, |i, k| {
        C64::from_polar(
            1.0 / (n as f64).sqrt(),
            2.0 * std::f64::consts::PI * (i * k) as f64 / n as f64,
        )
    });
    let h = &j * &f_inv;
    let clean = y - &a * q_prev;
    let mut best = (f64::INFINITY, vec![]);
    let total = points.len().pow(n as u32);
    for idx in 0..total {
        let mut rest = idx;
        let cand: Vec<C64> = (0..n)
            .map(|_| {
                let p = points[rest % points.len()];
                rest /= points.len();
                p
            })
            .collect();
        let metric = (&clean - &h * DVector::from_column_slice(&cand)).norm_squared();
        if metric < best.0 {
            best = (metric, cand);
        }
    }
    best.1
}

fn ml_oracle() -> Verdict {
    let s = Setup::new(
        SimConfig::from_text("subcarriers = 4\nmodulation = qpsk\nchannel = exp\nexp_taps = 3\nexp_decay = 1\nlayers = 10\nsnr = 30").expect("config"),
    )
    .expect("setup");
    let snr = 30.0;
    let rx = Receiver::new(None, Detector::Oamp, Csi::Perfect);
    let samples = detection_samples(&s, &rx, snr, NET_SAMPLES, NET_SEED).expect("samples");
    let (train, valid) = split_validation(samples, VALID_FRACTION).expect("split");
    let net = train_oampnet(&s, &train, &valid, &net_hyper())
        .expect("training")
        .params;
    let points = s.constellation.points().to_vec();
    assert_eq!(points.len().pow(4), 256);
    let (mut net_err, mut ml_err) = (0u64, 0u64);
    for t in 0..ML_TRIALS {
        let p = detection_problem(&s, &rx, snr, &mut trial_rng(9, t)).expect("problem");
        let TrainingSample { sys, u } = p.training_sample(&s).expect("system");
        let out = oamp_net_forward(&sys, &net, &s.oamp, &s.constellation)
            .expect("net")
            .u_hat;
        if out
            .iter()
            .zip(u.iter())
            .any(|(x, y)| s.constellation.slice(*x) != *y)
        {
            net_err += 1;
        }
        let ml = ml_block(&p.y, p.taps.taps(), &p.q_prev, &points);
        if ml
            .iter()
            .zip(p.u.iter())
            .any(|(a, b)| (a - b).norm() > 1e-9)
        {
            ml_err += 1;
        }
    }
    let (net_rate, ml_rate) = (
        net_err as f64 / ML_TRIALS as f64,
        ml_err as f64 / ML_TRIALS as f64,
    );
    verdict(
        net_rate <= ML_MAX_RATIO * ml_rate,
        format!("N=4 QPSK 30 dB, {ML_TRIALS} trials: OAMP-NET vector error {net_rate:.2e} vs ML {ml_rate:.2e} (limit {ML_MAX_RATIO}x)"),
    )
}

fn layer_trend(bench: &mut Bench) -> Vec<Verdict> {
    let snr = 25.0;
    let mut oamp = Vec::new();
    let mut net = Vec::new();
    for layers in [1, 3, 5] {
        let s = setup(&format!("layers = {layers}\nmin_bits = 300000\n"));
        oamp.push(bench.ber(&s, snr, Detector::Oamp, None));
        net.push(bench.ber(&s, snr, Detector::OampNet, Some((&s, snr))));
    }
    let falls = |r: &[MetricsRecord]| r[0].ber > r[1].ber && r[1].ber > r[2].ber;
    let budget = oamp.iter().chain(&net).all(|r| r.errors >= MIN_ERRORS);
    let list = |r: &[MetricsRecord]| {
        r.iter()
            .map(|x| format!("{:.3e}", x.ber))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    let (o5, n5) = (&oamp[2], &net[2]);
    let ratio = n5.ber / o5.ber;
    vec![
        verdict(
            falls(&oamp) && falls(&net) && budget,
            format!(
                "25 dB L=1,3,5: OAMP {} ; OAMP-NET {} (>= {MIN_ERRORS} errors each: {budget})",
                list(&oamp),
                list(&net)
            ),
        ),
        verdict(
            ratio <= MAX_RATIO_25,
            format!(
                "25 dB L=5: OAMP-NET {} / OAMP {} = {ratio:.3} (limit {MAX_RATIO_25})",
                fmt_ber(n5),
                fmt_ber(o5)
            ),
        ),
        verdict(
            within_magnitude(o5.ber, REF_OAMP_25),
            format!(
                "25 dB L=5 OAMP BER {:.3e} vs reference {REF_OAMP_25:.1e} (within {MAGNITUDE}x)",
                o5.ber
            ),
        ),
    ]
}

fn high_snr(bench: &mut Bench) -> Verdict {
    let snr = 40.0;
    let s = setup("layers = 5\n");
    let o = bench.ber(&s, snr, Detector::Oamp, None);
    let n = bench.ber(&s, snr, Detector::OampNet, Some((&s, snr)));
    let ratio = n.ber / o.ber;
    bench
        .csv
        .insert("high_snr", to_csv(&[o.clone(), n.clone()]));
    verdict(
        ratio <= MAX_RATIO_40
            && within_magnitude(o.ber, REF_OAMP_40)
            && within_magnitude(n.ber, REF_NET_40)
            && o.errors >= MIN_ERRORS
            && n.errors >= MIN_ERRORS,
        format!(
            "40 dB L=5: OAMP-NET {} / OAMP {} = {ratio:.3} (limit {MAX_RATIO_40}); references {REF_NET_40:.1e} / {REF_OAMP_40:.1e} within {MAGNITUDE}x",
            fmt_ber(&n),
            fmt_ber(&o)
        ),
    )
}

fn estimation_mse(bench: &mut Bench) -> Vec<Verdict> {
    let mut worse = Vec::new();
    let mut comb30 = (f64::NAN, f64::NAN);
    for pilots in ["continuous", "comb16"] {
        let s = setup(&format!("pilots = {pilots}\n"));
        for snr in MSE_GRID {
            let ls = channel_mse(
                &s,
                &Receiver::new(Some(Estimator::Ls), Detector::Oamp, Csi::Estimated),
                snr,
                MSE_SAMPLES,
                5,
            )
            .expect("ls");
            let ce = channel_mse(
                &s,
                &bench.estimated(&s, snr, Detector::Oamp),
                snr,
                MSE_SAMPLES,
                5,
            )
            .expect("cenet");
            if ce > ls {
                worse.push(format!("{pilots}@{snr}: {ce:.3e} > {ls:.3e}"));
            }
            if pilots == "comb16" && snr == 30.0 {
                let mut rx = Receiver::new(Some(Estimator::Lmmse), Detector::Oamp, Csi::Estimated);
                rx.lmmse = Some(s.lmmse(snr).expect("lmmse"));
                comb30 = (
                    channel_mse(&s, &rx, snr, MSE_SAMPLES, 5).expect("lmmse"),
                    ce,
                );
            }
        }
    }
    let gain_db = 10.0 * (comb30.0 / comb30.1).log10();
    vec![
        verdict(
            worse.is_empty(),
            if worse.is_empty() {
                format!("CE-NET MSE <= LS MSE at all {} points, both pilot layouts", MSE_GRID.len())
            } else {
                format!("CE-NET worse than LS at {}", worse.join(", "))
            },
        ),
        verdict(
            gain_db >= COMB_MARGIN_DB,
            format!(
                "comb 30 dB: LMMSE {:.3e} vs CE-NET {:.3e} = {gain_db:.2} dB (limit {COMB_MARGIN_DB} dB)",
                comb30.0, comb30.1
            ),
        ),
    ]
}

fn transfer(bench: &mut Bench) -> Verdict {
    let trained_on = setup("modulation = qam64\nlayers = 5\n");
    let s = setup("layers = 5\nmin_bits = 300000\n");
    let o = bench.ber(&s, 25.0, Detector::Oamp, None);
    let n = bench.ber(&s, 25.0, Detector::OampNet, Some((&trained_on, 40.0)));
    verdict(
        n.ber <= o.ber,
        format!(
            "64-QAM/40 dB OAMP-NET on 16-QAM/25 dB: {} vs OAMP {}",
            fmt_ber(&n),
            fmt_ber(&o)
        ),
    )
}

fn divergence_free(bench: &mut Bench) -> Verdict {
    for pilots in ["continuous", "comb16"] {
        let s = setup(&format!("pilots = {pilots}\nlayers = 5\n"));
        for snr in MSE_GRID {
            bench.ber(&s, snr, Detector::Oamp, None);
        }
    }
    let failed: Vec<String> = bench
        .records
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("{} dB: {f}", r.snr_db)))
        .collect();
    verdict(
        failed.is_empty(),
        format!("{} BER points (OAMP grid 5-40 dB both layouts plus all trained points): {} non-finite aborts", bench.records.len(), failed.len()),
    )
}

fn determinism(bench: &mut Bench) -> Verdict {
    let s = setup("layers = 5\n");
    let first = match bench.csv.get("high_snr") {
        Some(csv) => csv.clone(),
        None => {
            let o = bench.ber(&s, 40.0, Detector::Oamp, None);
            let n = bench.ber(&s, 40.0, Detector::OampNet, Some((&s, 40.0)));
            to_csv(&[o, n])
        }
    };
    let mut rx_o = bench.estimated(&s, 40.0, Detector::Oamp);
    let again_o = run_point(&s, &rx_o, 40.0).expect("rerun");
    rx_o.detector = Detector::OampNet;
    rx_o.oampnet = Some(bench.net(&s, 40.0));
    let again_n = run_point(&s, &rx_o, 40.0).expect("rerun");
    let csv_same = to_csv(&[again_o, again_n]) == first;
    let ce_same = train_ce(&setup("pilots = continuous\n"), 25.0).to_text()
        == bench.cenet("continuous", 25.0).to_text();
    verdict(
        csv_same && ce_same,
        format!(
            "40 dB rerun CSV identical: {csv_same}; retrained CE-NET file identical: {ce_same}"
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut bench = Bench::default();
    let mut failed = 0;
    let mut report = |label: &str, v: Verdict, started: Instant| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!(
            "{status} {label:<4} {} [{:.0} s]",
            v.detail,
            started.elapsed().as_secs_f64()
        );
    };
    let t = Instant::now();
    if run(1) {
        report("1", unfolding(), t);
    }
    if run(2) {
        let t = Instant::now();
        report("2", initialization(), t);
    }
    if run(3) {
        let t = Instant::now();
        report("3", denoiser(), t);
    }
    if run(4) {
        let t = Instant::now();
        report("4", ml_oracle(), t);
    }
    if run(5) {
        let t = Instant::now();
        for (v, label) in layer_trend(&mut bench).into_iter().zip(["5a", "5b", "5c"]) {
            report(label, v, t);
        }
    }
    if run(6) {
        let t = Instant::now();
        report("6", high_snr(&mut bench), t);
    }
    if run(7) {
        let t = Instant::now();
        for (v, label) in estimation_mse(&mut bench).into_iter().zip(["7a", "7b"]) {
            report(label, v, t);
        }
    }
    if run(8) {
        let t = Instant::now();
        report("8", transfer(&mut bench), t);
    }
    if run(9) {
        let t = Instant::now();
        report("9", divergence_free(&mut bench), t);
    }
    if run(10) {
        let t = Instant::now();
        report("10", determinism(&mut bench), t);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
