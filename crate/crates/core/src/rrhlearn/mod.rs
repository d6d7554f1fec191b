//! Sleeping-RRH selection experiment.
//!
//! A user sees only its channel to the CBS array; the task is to name the
//! sleeping RRH with the best gain. Four predictors are compared: uniform
//! random selection, KNN and a neural net on quantized channel features, and
//! a neural net given the true user location.

pub mod features;
pub mod knn;
pub mod mlp;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::radio::{self, ChannelSample, ScattererScene};
use crate::rng::derive_seed;

use features::{lloyd_train, DftMagnitude, LloydCodebook};
use knn::KnnIndex;
use mlp::{mlp_train, Mlp, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub scatterer_counts: Vec<usize>,
    pub rrhs: usize,
    pub antennas: usize,
    pub radius_m: f64,
    pub scatter_ref_m: f64,
    pub carrier_freq_hz: f64,
    pub pathloss_exponent: f64,
    pub n_samples: usize,
    pub train_fraction: f64,
    pub log_floor: f64,
    pub lloyd_levels: usize,
    pub lloyd_max_iters: usize,
    pub lloyd_tol: f64,
    pub knn_k: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Passes of random selection over the test set.
    pub rs_trials: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            scatterer_counts: vec![10, 15, 20, 25, 30, 35],
            rrhs: 5,
            antennas: 80,
            radius_m: radio::DEFAULT_SCENE_RADIUS_M,
            scatter_ref_m: 100.0,
            carrier_freq_hz: 2.0e9,
            pathloss_exponent: 2.0,
            n_samples: 50_000,
            train_fraction: 0.8,
            log_floor: 1e-12,
            lloyd_levels: 64,
            lloyd_max_iters: 100,
            lloyd_tol: 1e-9,
            knn_k: 5,
            hidden: vec![128, 64],
            lr: 0.01,
            batch: 32,
            epochs: 100,
            rs_trials: 10,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, msg: &str| {
            Err(Error::Range {
                key: format!("learn.{key}"),
                msg: msg.into(),
            })
        };
        if self.scatterer_counts.is_empty() || self.scatterer_counts.contains(&0) {
            return range("scatterer_counts", "must list at least one positive count");
        }
        if self.rrhs < 2 {
            return range("rrhs", "must be >= 2");
        }
        if self.antennas < 1 {
            return range("antennas", "must be >= 1");
        }
        if !(self.radius_m > 0.0) {
            return range("radius", "must be > 0");
        }
        if !(self.scatter_ref_m > 0.0) {
            return range("scatter_ref", "must be > 0");
        }
        if !(self.carrier_freq_hz > 0.0) {
            return range("carrier_freq", "must be > 0");
        }
        if !(self.pathloss_exponent > 0.0) {
            return range("pathloss_exponent", "must be > 0");
        }
        if self.n_samples < 10 {
            return range("n_samples", "must be >= 10");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return range("train_fraction", "must lie in (0, 1)");
        }
        if !(self.log_floor > 0.0) {
            return range("log_floor", "must be > 0");
        }
        if self.lloyd_levels < 2 {
            return range("lloyd_levels", "must be >= 2");
        }
        if self.knn_k < 1 {
            return range("knn_k", "must be >= 1");
        }
        if self.hidden.contains(&0) {
            return range("hidden", "layer sizes must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return range("lr", "must be finite and >= 0");
        }
        if self.batch < 1 {
            return range("batch", "must be >= 1");
        }
        if self.rs_trials < 1 {
            return range("rs_trials", "must be >= 1");
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        radio::wavelength_m(self.carrier_freq_hz)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            seed,
        }
    }

    fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(self.rrhs);
        s
    }
}

/// Samples split by position: the first `n_train` form the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ChannelSample>,
    pub n_train: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn train(&self) -> &[ChannelSample] {
        &self.samples[..self.n_train]
    }

    pub fn test(&self) -> &[ChannelSample] {
        &self.samples[self.n_train..]
    }

    pub fn to_csv(&self) -> String {
        let (m, n) = self
            .samples
            .first()
            .map_or((0, 0), |s| (s.cbs_channel.len(), s.rrh_gains.len()));
        let mut out = radio::dataset_csv_header(m, n);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.to_csv_row());
            out.push('\n');
        }
        out
    }
}

/// Users dropped uniformly over the scene disc (kept clear of scatterers and
/// RRHs), one channel sample each.
pub fn gen_dataset(
    scene: &ScattererScene,
    wavelength_m: f64,
    n_samples: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples < 10 {
        return Err(Error::InvalidParameter(format!(
            "dataset needs at least 10 samples, got {n_samples}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter("train fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut avoid = scene.scatterers.clone();
    avoid.extend(&scene.rrhs);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let user = radio::draw_separated(&mut rng, scene.region_radius_m, &avoid);
        samples.push(radio::sample_channel(scene, user, wavelength_m)?);
    }
    let n_train = ((n_samples as f64 * train_fraction).round() as usize).clamp(1, n_samples - 1);
    Ok(Dataset {
        samples,
        n_train,
        train_fraction,
        seed,
    })
}

/// Uniform random selection scored over `passes` sweeps of `samples`.
pub fn random_selection(samples: &[ChannelSample], passes: usize, rng: &mut impl Rng) -> Result<EvalResult> {
    let mut correct = 0usize;
    let mut rel = 0.0;
    for _ in 0..passes.max(1) {
        let r = evaluate(samples, |_, s| Ok(random_select(s.rrh_gains.len(), rng)))?;
        correct += r.correct;
        rel += r.relative_error;
    }
    let total = passes.max(1) * samples.len();
    Ok(EvalResult {
        accuracy: correct as f64 / total as f64,
        relative_error: rel / passes.max(1) as f64,
        correct,
        total,
    })
}

pub fn random_select(n: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(0..n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub relative_error: f64,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy and mean relative gain shortfall `(g_best - g_pred) / g_best`.
pub fn evaluate<F>(test: &[ChannelSample], mut predict: F) -> Result<EvalResult>
where
    F: FnMut(usize, &ChannelSample) -> Result<usize>,
{
    if test.is_empty() {
        return Err(Error::InvalidParameter("evaluation set is empty".into()));
    }
    let mut correct = 0;
    let mut rel = 0.0;
    for (i, s) in test.iter().enumerate() {
        let p = predict(i, s)?;
        if p >= s.rrh_gains.len() {
            return Err(Error::InvalidParameter(format!("predicted label {p} out of range")));
        }
        if p == s.best_rrh {
            correct += 1;
        }
        let best = s.rrh_gains[s.best_rrh];
        rel += (best - s.rrh_gains[p]) / best;
    }
    Ok(EvalResult {
        accuracy: correct as f64 / test.len() as f64,
        relative_error: rel / test.len() as f64,
        correct,
        total: test.len(),
    })
}

/// Fitted channel-feature transform: DFT magnitude, log, Lloyd quantization,
/// then one pooled affine standardisation (which leaves Euclidean neighbour
/// ranks untouched).
#[derive(Debug, Clone)]
pub struct ChannelFeatures {
    pub codebook: LloydCodebook,
    pub lloyd_distortion: Vec<f64>,
    pub log_floor: f64,
    pub mean: f64,
    pub scale: f64,
}

fn log_dft_rows(samples: &[ChannelSample], floor: f64) -> Result<Vec<f64>> {
    let m = samples.first().map_or(0, |s| s.cbs_channel.len());
    let mut dft = DftMagnitude::new(m);
    let mut buf = Vec::with_capacity(m);
    let mut out = Vec::with_capacity(samples.len() * m);
    for s in samples {
        dft.apply(&s.cbs_channel, &mut buf)?;
        out.extend(buf.iter().map(|v| v.max(floor).ln()));
    }
    Ok(out)
}

impl ChannelFeatures {
    pub fn fit(train: &[ChannelSample], cfg: &LearnConfig) -> Result<Self> {
        let logs = log_dft_rows(train, cfg.log_floor)?;
        let lloyd = lloyd_train(&logs, cfg.lloyd_levels, cfg.lloyd_max_iters, cfg.lloyd_tol)?;
        let q: Vec<f64> = logs.iter().map(|v| lloyd.codebook.quantize_value(*v)).collect();
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        let var = q.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / q.len() as f64;
        Ok(Self {
            codebook: lloyd.codebook,
            lloyd_distortion: lloyd.distortion,
            log_floor: cfg.log_floor,
            mean,
            scale: if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 },
        })
    }

    /// Row-major feature matrix, one row per sample.
    pub fn transform(&self, samples: &[ChannelSample]) -> Result<Vec<f64>> {
        let mut rows = log_dft_rows(samples, self.log_floor)?;
        for v in rows.iter_mut() {
            *v = (self.codebook.quantize_value(*v) - self.mean) * self.scale;
        }
        Ok(rows)
    }
}

/// User location scaled into [-1, 1]^2.
pub fn location_features(samples: &[ChannelSample], radius_m: f64) -> Vec<f64> {
    samples
        .iter()
        .flat_map(|s| [s.user_pos.x / radius_m, s.user_pos.y / radius_m])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Rs,
    Knn,
    NnCr,
    NnLo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rs, Method::Knn, Method::NnCr, Method::NnLo];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rs => "RS",
            Method::Knn => "KNN",
            Method::NnCr => "NN-CR",
            Method::NnLo => "NN-LO",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Row {
    pub method: Method,
    pub scatterers: usize,
    pub accuracy: f64,
    pub relative_error: f64,
    pub seed: u64,
}

const STREAM_SCENE: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_NN_CR: u64 = 3;
const STREAM_NN_LO: u64 = 4;
const STREAM_RS: u64 = 5;
const STREAM_INIT: u64 = 6;
const STREAM_PILOT: u64 = 7;

/// Every method for one scatterer count under one seed.
/// Pilot size and minimum label share used to reject lopsided scenes.
const PILOT_USERS: usize = 4000;
const MIN_LABEL_SHARE: f64 = 0.07;
const MAX_SCENE_DRAWS: u64 = 64;

/// Scene for one seed, redrawn until a pilot of users gives every RRH a
/// share of best-RRH labels of at least `MIN_LABEL_SHARE`.
pub fn build_scene(scatterers: usize, cfg: &LearnConfig, seed: u64) -> Result<ScattererScene> {
    let root = derive_seed(seed, STREAM_SCENE);
    for attempt in 0..MAX_SCENE_DRAWS {
        let scene_seed = if attempt == 0 { root } else { derive_seed(root, attempt) };
        let mut scene = radio::gen_scatterer_scene(
            scatterers,
            cfg.rrhs,
            cfg.antennas,
            cfg.radius_m,
            cfg.scatter_ref_m,
            scene_seed,
        )?;
        scene.pathloss_exponent = cfg.pathloss_exponent;
        let pilot = gen_dataset(&scene, cfg.wavelength_m(), PILOT_USERS, 0.5, derive_seed(scene_seed, STREAM_PILOT))?;
        let mut counts = vec![0usize; cfg.rrhs];
        for x in &pilot.samples {
            counts[x.best_rrh] += 1;
        }
        let min = counts.iter().copied().min().unwrap_or(0) as f64 / PILOT_USERS as f64;
        if min >= MIN_LABEL_SHARE {
            return Ok(scene);
        }
    }
    Err(Error::DegenerateGeometry(format!(
        "no scene with every RRH label share >= {MIN_LABEL_SHARE} after {MAX_SCENE_DRAWS} draws (S={scatterers}, seed {seed})"
    )))
}

pub fn run_single(scatterers: usize, cfg: &LearnConfig, seed: u64) -> Result<Vec<Table3Row>> {
    cfg.validate()?;
    let base = derive_seed(seed, scatterers as u64);
    let scene = build_scene(scatterers, cfg, seed)?;
    let data = gen_dataset(
        &scene,
        cfg.wavelength_m(),
        cfg.n_samples,
        cfg.train_fraction,
        derive_seed(seed, STREAM_USERS),
    )?;
    let (train, test) = (data.train(), data.test());
    let train_labels: Vec<usize> = train.iter().map(|s| s.best_rrh).collect();

    let feats = ChannelFeatures::fit(train, cfg)?;
    let x_train = feats.transform(train)?;
    let x_test = feats.transform(test)?;
    let dim = cfg.antennas;

    let mut rows = Vec::with_capacity(4);
    let mut push = |method, r: EvalResult| {
        rows.push(Table3Row {
            method,
            scatterers,
            accuracy: r.accuracy,
            relative_error: r.relative_error,
            seed,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, STREAM_RS));
    push(Method::Rs, random_selection(test, cfg.rs_trials, &mut rng)?);

    let index = KnnIndex::new(&x_train, &train_labels, dim)?;
    let knn_labels = index.predict_batch(&x_test, cfg.knn_k)?;
    push(Method::Knn, evaluate(test, |i, _| Ok(knn_labels[i]))?);

    let cr = mlp_train(
        Mlp::new(&cfg.layer_sizes(dim), derive_seed(base, STREAM_INIT))?,
        &x_train,
        &train_labels,
        &cfg.train_config(derive_seed(base, STREAM_NN_CR)),
    )?;
    let cr_labels = cr.net.predict_batch(&x_test)?;
    push(Method::NnCr, evaluate(test, |i, _| Ok(cr_labels[i]))?);

    let loc_train = location_features(train, cfg.radius_m);
    let loc_test = location_features(test, cfg.radius_m);
    let lo = mlp_train(
        Mlp::new(&cfg.layer_sizes(2), derive_seed(base, STREAM_INIT + 1))?,
        &loc_train,
        &train_labels,
        &cfg.train_config(derive_seed(base, STREAM_NN_LO)),
    )?;
    let lo_labels = lo.net.predict_batch(&loc_test)?;
    push(Method::NnLo, evaluate(test, |i, _| Ok(lo_labels[i]))?);

    Ok(rows)
}

/// All methods over every scatterer count in `counts` for one seed.
pub fn run_table3(counts: &[usize], cfg: &LearnConfig, seed: u64) -> Result<Vec<Table3Row>> {
    let mut rows = Vec::with_capacity(4 * counts.len());
    for &s in counts {
        rows.extend(run_single(s, cfg, seed)?);
    }
    Ok(rows)
}

pub const TABLE3_HEADER: &str = "method,scatterers,accuracy,relative_error,seed";

pub fn table3_csv(rows: &[Table3Row]) -> String {
    let mut out = format!("{TABLE3_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.scatterers,
            sig9(r.accuracy),
            sig9(r.relative_error),
            r.seed
        ));
    }
    out
}

pub fn parse_table3_csv(text: &str) -> Result<Vec<Table3Row>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TABLE3_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{TABLE3_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            break;
        }
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.into(),
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(err("expected 5 columns"));
        }
        rows.push(Table3Row {
            method: c[0].parse().map_err(|_| err("bad method"))?,
            scatterers: c[1].parse().map_err(|_| err("bad scatterer count"))?,
            accuracy: c[2].parse().map_err(|_| err("bad accuracy"))?,
            relative_error: c[3].parse().map_err(|_| err("bad relative error"))?,
            seed: c[4].parse().map_err(|_| err("bad seed"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub scatterers: usize,
    pub seeds: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub err_mean: f64,
    pub err_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation over seeds, keyed by (method, S).
pub fn summarize(rows: &[Table3Row]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.scatterers)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, scatterers)| {
            let sel: Vec<&Table3Row> = rows
                .iter()
                .filter(|r| r.method == method && r.scatterers == scatterers)
                .collect();
            let acc: Vec<f64> = sel.iter().map(|r| r.accuracy).collect();
            let err: Vec<f64> = sel.iter().map(|r| r.relative_error).collect();
            let (acc_mean, acc_std) = mean_std(&acc);
            let (err_mean, err_std) = mean_std(&err);
            SummaryRow {
                method,
                scatterers,
                seeds: sel.len(),
                acc_mean,
                acc_std,
                err_mean,
                err_std,
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out =
        String::from("method,scatterers,seeds,accuracy_mean,accuracy_std,relative_error_mean,relative_error_std\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.method,
            s.scatterers,
            s.seeds,
            sig9(s.acc_mean),
            sig9(s.acc_std),
            sig9(s.err_mean),
            sig9(s.err_std)
        ));
    }
    out
}

/// Methods as rows, scatterer counts as columns, cells `accuracy/relative_error`.
pub fn grid_csv(summary: &[SummaryRow]) -> String {
    let mut counts: Vec<usize> = summary.iter().map(|s| s.scatterers).collect();
    counts.sort();
    counts.dedup();
    let mut out = String::from("method");
    for c in &counts {
        out.push_str(&format!(",S{c}"));
    }
    out.push('\n');
    for m in Method::ALL {
        if !summary.iter().any(|s| s.method == m) {
            continue;
        }
        out.push_str(&m.to_string());
        for c in &counts {
            match summary.iter().find(|s| s.method == m && s.scatterers == *c) {
                Some(s) => out.push_str(&format!(",{:.4}/{:.4}", s.acc_mean, s.err_mean)),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
