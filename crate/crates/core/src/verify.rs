//! Built-in property suite: uncertainty identities on random ensembles,
//! layer outputs against naive loop references, and a finite-difference
//! gradient check through the full network.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CnnParams, IMAGE_LEN, IMAGE_SIDE, IN_CHANNELS, PARAM_NAMES};
use crate::tensor::{Tape, Tensor};
use crate::uq::{
    self, bin_histogram, decompose, entropy_of, kl_divergence, mean_rows, EnsemblePrediction, FirstOrderDist,
};

/// Tolerance for the entropy identities.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Tolerance for layer outputs against the loop references.
pub const ORACLE_TOL: f64 = 1e-12;
/// Largest accepted relative error of an analytic gradient coordinate.
pub const GRAD_TOL: f64 = 1e-3;

/// Deliberately broken inputs, used to show that a check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds an ensemble whose first member has a negative entry (it still sums to 1).
    Simplex,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(Fault::Simplex),
            other => Err(Error::Config(format!("unknown fault {other:?} (known: simplex)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error (or the measured value, for value checks).
    pub value: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, value: f64, detail: impl Into<String>) -> Self {
        Self { name, passed, value, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<28} {}", self.name, self.detail)
    }
}

/// A random distribution over `k` classes. Mixes smooth draws with sharp
/// ones and exact zeros so that the `0 ln 0` paths are exercised.
pub fn random_dist<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    match rng.gen_range(0..10) {
        0 => {
            let mut p = vec![0.0; k];
            p[rng.gen_range(0..k)] = 1.0;
            p
        }
        1 => {
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            p[rng.gen_range(0..k)] = 0.0;
            normalise(p)
        }
        2 => normalise((0..k).map(|_| (rng.gen::<f64>() * 30.0).exp()).collect()),
        _ => normalise((0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect()),
    }
}

fn normalise(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `members` random member distributions over `k` classes.
pub fn random_ensemble<R: Rng>(rng: &mut R, members: usize, k: usize) -> Vec<Vec<f64>> {
    (0..members).map(|_| random_dist(rng, k)).collect()
}

/// Between `min_members` and 5 random members over 3 classes.
fn random_members<R: Rng>(rng: &mut R, min_members: usize) -> Vec<Vec<f64>> {
    let m = rng.gen_range(min_members..=5);
    random_ensemble(rng, m, 3)
}

fn prediction(rows: &[Vec<f64>]) -> Result<EnsemblePrediction> {
    Ok(EnsemblePrediction::from_rows(rows.iter().map(Vec::as_slice))?)
}

/// `|H(mean) - mean H - mean KL(member || mean)|`, computed straight from the
/// rows without validating them.
pub fn additivity_residual(rows: &[Vec<f64>]) -> f64 {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let mean = mean_rows(&refs);
    let m = rows.len() as f64;
    let tu = entropy_of(&mean);
    let au = refs.iter().map(|r| entropy_of(r)).sum::<f64>() / m;
    let eu = refs.iter().map(|r| kl_divergence(r, &mean)).sum::<f64>() / m;
    (tu - au - eu).abs()
}

pub fn check_additivity(cases: usize, seed: u64, fault: Option<Fault>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut population: Vec<Vec<Vec<f64>>> = (0..cases).map(|_| random_members(&mut rng, 1)).collect();
    if fault == Some(Fault::Simplex) {
        population.push(vec![vec![1.2, -0.2, 0.0], vec![0.2, 0.4, 0.4]]);
    }
    let residuals: Vec<f64> = population.iter().map(|rows| additivity_residual(rows)).collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let failing = residuals.iter().filter(|r| !(**r < IDENTITY_TOL)).count();
    Check::new(
        "uq.additivity",
        failing == 0,
        worst,
        format!("{failing}/{} ensembles violate |TU-AU-EU| < {IDENTITY_TOL:e}; worst {worst:.3e}", population.len()),
    )
}

pub fn check_eu_formulas(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut error = None;
    for _ in 0..cases {
        let rows = random_members(&mut rng, 1);
        let result = prediction(&rows).and_then(|e| Ok((uq::epistemic_uncertainty(&e)?, uq::eu_via_kl(&e))));
        match result {
            Ok((gap, kl)) => worst = worst.max((gap - kl).abs()),
            Err(e) => error = Some(e.to_string()),
        }
    }
    let passed = error.is_none() && worst < IDENTITY_TOL;
    let detail = error.unwrap_or_else(|| format!("max |EU_gap - EU_kl| = {worst:.3e} over {cases} ensembles"));
    Check::new("uq.eu_two_formulas", passed, worst, detail)
}

pub fn check_bounds(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln3 = 3f64.ln();
    let mut bad = 0;
    for _ in 0..cases {
        let rows = random_members(&mut rng, 1);
        let ok = prediction(&rows).and_then(|e| Ok(decompose(&e)?)).is_ok_and(|r| {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            r.eu >= 0.0
                && r.tu <= ln3 + IDENTITY_TOL
                && r.au <= ln3 + IDENTITY_TOL
                && unit(r.tu_norm)
                && unit(r.au_norm)
                && unit(r.eu_norm)
        });
        bad += usize::from(!ok);
    }
    Check::new("uq.bounds", bad == 0, bad as f64, format!("{bad}/{cases} records out of bounds"))
}

pub fn check_permutation_invariance(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let rows = random_members(&mut rng, 2);
        let mut shuffled = rows.clone();
        shuffled.rotate_left(1);
        let relabel: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        let records: Vec<_> = [&rows, &shuffled, &relabel]
            .into_iter()
            .map(|r| decompose(&prediction(r).expect("valid")).expect("valid"))
            .collect();
        for other in &records[1..] {
            worst = worst
                .max((other.tu - records[0].tu).abs())
                .max((other.au - records[0].au).abs())
                .max((other.eu - records[0].eu).abs());
        }
    }
    Check::new("uq.permutation_invariance", worst < IDENTITY_TOL, worst, format!("max deviation {worst:.3e}"))
}

/// Normalised `(tu, au, eu)` of one-hot members with the given classes.
pub fn one_hot_ensemble(classes: &[usize], k: usize) -> Result<uq::UncertaintyRecord> {
    let e = EnsemblePrediction::new(classes.iter().map(|&c| FirstOrderDist::one_hot(k, c)).collect())?;
    Ok(decompose(&e)?)
}

pub fn check_five_member_cap() -> Check {
    let r = one_hot_ensemble(&[0, 1, 1, 2, 2], 3).expect("valid one-hot ensemble");
    let passed = (r.tu_norm - 0.960).abs() <= 0.005 && (r.eu_norm - 0.960).abs() <= 0.005 && r.au_norm == 0.0;
    Check::new(
        "uq.five_member_cap",
        passed,
        r.eu_norm,
        format!("one-hot (1,2,2): TU {:.6} AU {:.6} EU {:.6}", r.tu_norm, r.au_norm, r.eu_norm),
    )
}

pub fn check_extremes() -> Check {
    let split = one_hot_ensemble(&[0, 1, 2], 3).expect("valid");
    let split_err = (split.tu_norm - 1.0).abs().max(split.au_norm).max((split.eu_norm - 1.0).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut same_err = 0.0f64;
    for m in 1..=5 {
        let p = random_dist(&mut rng, 3);
        let e = prediction(&vec![p; m]).expect("valid");
        same_err = same_err.max(decompose(&e).expect("valid").eu);
    }
    let worst = split_err.max(same_err);
    Check::new(
        "uq.extremes",
        worst <= 1e-12,
        worst,
        format!("full disagreement off (1,0,1) by {split_err:.1e}; identical members EU {same_err:.1e}"),
    )
}

pub fn check_histogram_bins() -> Check {
    let h = bin_histogram(&[0.0, 0.05, 0.0500001, 0.95, 0.9500001, 1.0], 20).expect("values in range");
    let expected = [(0, 2.0), (1, 1.0), (18, 1.0), (19, 2.0)];
    let ok =
        expected.iter().all(|&(k, c)| (h[k] * 6.0 - c).abs() < 1e-12) && (h.iter().sum::<f64>() - 1.0).abs() < 1e-12;
    Check::new("uq.histogram_bins", ok, 0.0, "boundary values land in right-closed bins")
}

/// `[N,C,H,W] * [F,C,3,3] + [F]`, stride 1, zero padding 1, by direct summation.
pub fn naive_conv2d(x: &[f64], xs: [usize; 4], w: &[f64], f: usize, b: &[f64]) -> Vec<f64> {
    let [n, c, h, wd] = xs;
    let mut out = vec![0.0; n * f * h * wd];
    for i in 0..n {
        for o in 0..f {
            for y in 0..h {
                for x0 in 0..wd {
                    let mut acc = b[o];
                    for ch in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (y as isize + ky as isize - 1, x0 as isize + kx as isize - 1);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((i * c + ch) * h + iy as usize) * wd + ix as usize];
                                acc += w[((o * c + ch) * 3 + ky) * 3 + kx] * xv;
                            }
                        }
                    }
                    out[((i * f + o) * h + y) * wd + x0] = acc;
                }
            }
        }
    }
    out
}

/// 2x2, stride 2 max pooling by direct comparison.
pub fn naive_maxpool2(x: &[f64], xs: [usize; 4]) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let mut out = Vec::with_capacity(n * c * h * w / 4);
    for plane in x.chunks(h * w).take(n * c) {
        for y in (0..h).step_by(2) {
            for x0 in (0..w).step_by(2) {
                let v =
                    [plane[y * w + x0], plane[y * w + x0 + 1], plane[(y + 1) * w + x0], plane[(y + 1) * w + x0 + 1]];
                out.push(v.into_iter().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    out
}

/// `[N,D] x [D,E] + [E]` by direct summation.
pub fn naive_linear(x: &[f64], n: usize, d: usize, w: &[f64], e: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * e];
    for i in 0..n {
        for j in 0..e {
            out[i * e + j] = b[j] + (0..d).map(|k| x[i * d + k] * w[k * e + j]).sum::<f64>();
        }
    }
    out
}

fn uniform_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_check(
    name: &'static str,
    cases: usize,
    seed: u64,
    mut case: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        match case(&mut rng) {
            Ok(err) => worst = worst.max(err),
            Err(e) => return Check::new(name, false, f64::INFINITY, e.to_string()),
        }
    }
    Check::new(name, worst <= ORACLE_TOL, worst, format!("max abs error {worst:.3e} over {cases} cases"))
}

pub fn check_conv2d_oracle(cases: usize, seed: u64) -> Check {
    oracle_check("oracle.conv2d", cases, seed, |rng| {
        let xs = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=7), rng.gen_range(1..=7)];
        let f = rng.gen_range(1..=5);
        let x = uniform_vec(rng, xs.iter().product());
        let w = uniform_vec(rng, f * xs[1] * 9);
        let b = uniform_vec(rng, f);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(xs.to_vec(), x.clone())?);
        let wv = tape.leaf(Tensor::new(vec![f, xs[1], 3, 3], w.clone())?);
        let bv = tape.leaf(Tensor::new(vec![f], b.clone())?);
        let out = tape.conv2d(xv, wv, bv)?;
        Ok(max_abs_diff(tape.value(out).data(), &naive_conv2d(&x, xs, &w, f, &b)))
    })
}

pub fn check_maxpool2_oracle(cases: usize, seed: u64) -> Check {
    oracle_check("oracle.maxpool2", cases, seed, |rng| {
        let xs = [rng.gen_range(1..=3), rng.gen_range(1..=4), 2 * rng.gen_range(1..=4), 2 * rng.gen_range(1..=4)];
        let x = uniform_vec(rng, xs.iter().product());
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(xs.to_vec(), x.clone())?);
        let out = tape.maxpool2(xv)?;
        Ok(max_abs_diff(tape.value(out).data(), &naive_maxpool2(&x, xs)))
    })
}

pub fn check_linear_oracle(cases: usize, seed: u64) -> Check {
    oracle_check("oracle.linear", cases, seed, |rng| {
        let (n, d, e) = (rng.gen_range(1..=6), rng.gen_range(1..=24), rng.gen_range(1..=10));
        let x = uniform_vec(rng, n * d);
        let w = uniform_vec(rng, d * e);
        let b = uniform_vec(rng, e);
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![n, d], x.clone())?);
        let wv = tape.leaf(Tensor::new(vec![d, e], w.clone())?);
        let bv = tape.leaf(Tensor::new(vec![e], b.clone())?);
        let out = tape.linear(xv, wv, bv)?;
        Ok(max_abs_diff(tape.value(out).data(), &naive_linear(&x, n, d, &w, e, &b)))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter tensor name and flat index of the worst coordinate.
    pub worst: (&'static str, usize),
    pub coordinates: usize,
}

fn batch_loss(params: &CnnParams, images: &[f64], labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let x = Tensor::new(vec![labels.len(), IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], images.to_vec())?;
    let fwd = params.forward(&mut tape, x, false)?;
    let loss = tape.cross_entropy(fwd.probs, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares backprop gradients of the mean cross-entropy on a random
/// `batch`-image batch with central differences (step `h`) on `coords`
/// coordinates spread over all six parameter tensors.
pub fn gradient_check(seed: u64, batch: usize, coords: usize, h: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = CnnParams::init(&mut rng);
    for t in [1, 3, 5] {
        params.tensors[t].iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    let images: Vec<f64> = (0..batch * IMAGE_LEN).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..3)).collect();
    let x = Tensor::new(vec![batch, IN_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], images.clone())?;
    let (_, grads) = params.loss_and_grads(x, &labels)?;

    let tensors = params.tensors.len();
    let mut worst = (0.0f64, (PARAM_NAMES[0], 0));
    for t in 0..tensors {
        let share = coords / tensors + usize::from(t < coords % tensors);
        let len = params.tensors[t].len();
        for i in sample(&mut rng, len, share.min(len)) {
            let orig = params.tensors[t][i];
            params.tensors[t][i] = orig + h;
            let up = batch_loss(&params, &images, &labels)?;
            params.tensors[t][i] = orig - h;
            let down = batch_loss(&params, &images, &labels)?;
            params.tensors[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            if rel > worst.0 || !rel.is_finite() {
                worst = (rel, (PARAM_NAMES[t], i));
            }
        }
    }
    Ok(GradCheck { max_rel_error: worst.0, worst: worst.1, coordinates: coords })
}

pub fn check_gradients(seed: u64) -> Check {
    match gradient_check(seed, 4, 50, 1e-5) {
        Ok(g) => Check::new(
            "grad.full_network",
            g.max_rel_error < GRAD_TOL,
            g.max_rel_error,
            format!(
                "max rel error {:.3e} over {} coordinates (worst {}[{}])",
                g.max_rel_error, g.coordinates, g.worst.0, g.worst.1
            ),
        ),
        Err(e) => Check::new("grad.full_network", false, f64::INFINITY, e.to_string()),
    }
}

/// Every property, in a fixed order.
pub fn run_suite(fault: Option<Fault>) -> Vec<Check> {
    vec![
        check_additivity(10_000, 1, fault),
        check_eu_formulas(10_000, 2),
        check_bounds(10_000, 3),
        check_permutation_invariance(2_000, 4),
        check_five_member_cap(),
        check_extremes(),
        check_histogram_bins(),
        check_conv2d_oracle(100, 5),
        check_maxpool2_oracle(100, 6),
        check_linear_oracle(100, 7),
        check_gradients(8),
    ]
}
