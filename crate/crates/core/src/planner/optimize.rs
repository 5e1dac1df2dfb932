use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EXHAUSTIVE_LIMIT: u128 = 1_000_000;
const SHOOTING_BUDGET: usize = 10_000;

/// Result of one optimizer call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome<A> {
    pub best: Vec<A>,
    pub cost: f64,
    pub evaluations: usize,
    /// Random shooting replaced enumeration.
    pub fallback: bool,
    /// Best-ever cost after each iteration.
    pub best_history: Vec<f64>,
}

/// Zero-order minimizer over action sequences of a fixed length.
pub trait SequenceOptimizer<A>: Sync {
    fn optimize<R: Rng + ?Sized>(
        &self,
        horizon: usize,
        objective: &(dyn Fn(&[A]) -> f64 + Sync),
        warm_start: Option<&[A]>,
        rng: &mut R,
    ) -> OptimizeOutcome<A>;
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Index of the smallest cost, lowest index on ties.
fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = i;
        }
    }
    best
}

/// Full enumeration of discrete sequences in lexicographic order, with a
/// random-shooting fallback past one million sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhaustive {
    pub n_actions: usize,
}

impl Exhaustive {
    fn decode(&self, mut index: usize, horizon: usize) -> Vec<usize> {
        let mut seq = vec![0; horizon];
        for slot in seq.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        seq
    }
}

impl SequenceOptimizer<usize> for Exhaustive {
    fn optimize<R: Rng + ?Sized>(
        &self,
        horizon: usize,
        objective: &(dyn Fn(&[usize]) -> f64 + Sync),
        _warm_start: Option<&[usize]>,
        rng: &mut R,
    ) -> OptimizeOutcome<usize> {
        let total = (self.n_actions as u128).checked_pow(horizon as u32);
        let fallback = total.is_none_or(|t| t > EXHAUSTIVE_LIMIT);
        let candidates: Vec<Vec<usize>> = if fallback {
            (0..SHOOTING_BUDGET)
                .map(|_| (0..horizon).map(|_| rng.gen_range(0..self.n_actions)).collect())
                .collect()
        } else {
            (0..total.unwrap() as usize).map(|i| self.decode(i, horizon)).collect()
        };
        let costs: Vec<f64> = candidates.par_iter().map(|seq| finite_or_inf(objective(seq))).collect();
        let best = argmin(&costs);
        OptimizeOutcome {
            best: candidates[best].clone(),
            cost: costs[best],
            evaluations: candidates.len(),
            fallback,
            best_history: vec![costs[best]],
        }
    }
}

/// iCEM hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcemConfig {
    pub num_iterations: usize,
    pub population_size: usize,
    pub elite_ratio: f64,
    pub population_decay_factor: f64,
    pub colored_noise_exponent: f64,
    pub keep_elite_frac: f64,
    pub alpha: f64,
    pub horizon: usize,
}

impl Default for IcemConfig {
    fn default() -> Self {
        Self {
            num_iterations: 4,
            population_size: 512,
            elite_ratio: 0.01,
            population_decay_factor: 1.0,
            colored_noise_exponent: 2.0,
            keep_elite_frac: 1.0,
            alpha: 0.1,
            horizon: 16,
        }
    }
}

impl IcemConfig {
    pub fn n_elites(&self) -> usize {
        ((self.population_size as f64 * self.elite_ratio).floor() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_iterations == 0 || self.horizon == 0 {
            return Err(Error::Config("iCEM needs at least one iteration and horizon >= 1".into()));
        }
        if self.population_size < self.n_elites() || !(self.elite_ratio > 0.0 && self.elite_ratio <= 1.0) {
            return Err(Error::Config("iCEM needs population >= elites >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.keep_elite_frac) {
            return Err(Error::Config("iCEM alpha and keep_elite_frac must lie in [0, 1]".into()));
        }
        if !(self.population_decay_factor >= 1.0) {
            return Err(Error::Config("iCEM population_decay_factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Population at iteration `i`.
    pub fn population_at(&self, i: usize) -> usize {
        let n = (self.population_size as f64 / self.population_decay_factor.powi(i as i32)).floor() as usize;
        n.max(self.n_elites())
    }
}

/// Gaussian noise with power spectrum `1/f^beta` along a sequence of length
/// `n`, using the usual powerlaw-PSD construction: random half spectrum,
/// inverse FFT, division by the non-DC spectral norm.
pub struct ColoredNoise {
    n: usize,
    scale: Vec<f64>,
    sigma: f64,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl ColoredNoise {
    pub fn new(beta: f64, n: usize) -> Self {
        let n_freq = n / 2 + 1;
        let f_min = 1.0 / n as f64;
        let scale: Vec<f64> = (0..n_freq)
            .map(|k| {
                let f = (k as f64 / n as f64).max(f_min);
                f.powf(-beta / 2.0)
            })
            .collect();
        let mut w: Vec<f64> = scale.iter().skip(1).copied().collect();
        if n.is_multiple_of(2) {
            if let Some(last) = w.last_mut() {
                *last *= (1.0 + (n % 2) as f64) / 2.0;
            }
        }
        let sigma = 2.0 * w.iter().map(|x| x * x).sum::<f64>().sqrt() / n as f64;
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        Self { n, scale, sigma, ifft }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        if n == 1 || self.sigma == 0.0 {
            return (0..n).map(|_| rng.sample(StandardNormal)).collect();
        }
        let n_freq = self.scale.len();
        let mut half: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(re * s, im * s)
            })
            .collect();
        if n.is_multiple_of(2) {
            half[n_freq - 1].im = 0.0;
            half[n_freq - 1].re *= std::f64::consts::SQRT_2;
        }
        half[0].im = 0.0;
        half[0].re *= std::f64::consts::SQRT_2;
        let mut full = vec![Complex::new(0.0, 0.0); n];
        full[..n_freq].copy_from_slice(&half);
        for k in n_freq..n {
            full[k] = half[n - k].conj();
        }
        self.ifft.process(&mut full);
        full.iter().map(|c| c.re / n as f64 / self.sigma).collect()
    }
}

/// iCEM over a box-constrained continuous action space.
#[derive(Clone, Debug, PartialEq)]
pub struct Icem {
    pub cfg: IcemConfig,
    pub bounds: Vec<(f64, f64)>,
}

impl Icem {
    pub fn new(cfg: IcemConfig, bounds: Vec<(f64, f64)>) -> Result<Self> {
        cfg.validate()?;
        if bounds.is_empty() || bounds.iter().any(|(l, h)| !(l < h)) {
            return Err(Error::Config("action box needs lo < hi in every dimension".into()));
        }
        Ok(Self { cfg, bounds })
    }

    fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect()
    }

    fn initial_mean(&self, horizon: usize, warm_start: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let center = self.center();
        (0..horizon)
            .map(|t| {
                warm_start
                    .and_then(|w| w.get(t + 1))
                    .filter(|a| a.len() == center.len())
                    .cloned()
                    .unwrap_or_else(|| center.clone())
            })
            .collect()
    }
}

impl SequenceOptimizer<Vec<f64>> for Icem {
    fn optimize<R: Rng + ?Sized>(
        &self,
        horizon: usize,
        objective: &(dyn Fn(&[Vec<f64>]) -> f64 + Sync),
        warm_start: Option<&[Vec<f64>]>,
        rng: &mut R,
    ) -> OptimizeOutcome<Vec<f64>> {
        let dim = self.bounds.len();
        let cfg = &self.cfg;
        let n_elites = cfg.n_elites();
        let n_keep = (cfg.keep_elite_frac * n_elites as f64).floor() as usize;
        let noise = ColoredNoise::new(cfg.colored_noise_exponent, horizon);

        let mut mean = self.initial_mean(horizon, warm_start);
        let mut std: Vec<Vec<f64>> = vec![self.bounds.iter().map(|(l, h)| (h - l) / 4.0).collect(); horizon];
        let mut kept: Vec<(Vec<Vec<f64>>, f64)> = Vec::new();
        let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
        let mut history = Vec::with_capacity(cfg.num_iterations);
        let mut evaluations = 0;

        for i in 0..cfg.num_iterations {
            let n = cfg.population_at(i);
            let mut population: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
            for _ in 0..n {
                let per_dim: Vec<Vec<f64>> = (0..dim).map(|_| noise.sample(rng)).collect();
                let seq = (0..horizon)
                    .map(|t| {
                        (0..dim)
                            .map(|j| {
                                let (lo, hi) = self.bounds[j];
                                (mean[t][j] + std[t][j] * per_dim[j][t]).clamp(lo, hi)
                            })
                            .collect()
                    })
                    .collect();
                population.push(seq);
            }
            let mut costs: Vec<f64> = population.par_iter().map(|seq| finite_or_inf(objective(seq))).collect();
            evaluations += population.len();
            for (seq, c) in kept.drain(..) {
                population.push(seq);
                costs.push(c);
            }

            let mut order: Vec<usize> = (0..population.len()).collect();
            order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
            let elites: Vec<usize> = order.iter().take(n_elites).copied().collect();

            let top = elites[0];
            if best.as_ref().is_none_or(|(_, c)| costs[top] < *c) {
                best = Some((population[top].clone(), costs[top]));
            }
            history.push(best.as_ref().map(|(_, c)| *c).unwrap_or(f64::INFINITY));

            let k = elites.len() as f64;
            for t in 0..horizon {
                for j in 0..dim {
                    let m = elites.iter().map(|&e| population[e][t][j]).sum::<f64>() / k;
                    let v = elites.iter().map(|&e| (population[e][t][j] - m).powi(2)).sum::<f64>() / k;
                    mean[t][j] = cfg.alpha * mean[t][j] + (1.0 - cfg.alpha) * m;
                    std[t][j] = cfg.alpha * std[t][j] + (1.0 - cfg.alpha) * v.sqrt();
                }
            }
            kept = elites.iter().take(n_keep).map(|&e| (population[e].clone(), costs[e])).collect();
        }

        let (best, cost) = best.expect("at least one iteration");
        OptimizeOutcome { best, cost, evaluations, fallback: false, best_history: history }
    }
}

/// Standalone iCEM call using `cfg.horizon`.
pub fn icem_optimize<R: Rng + ?Sized>(
    objective: &(dyn Fn(&[Vec<f64>]) -> f64 + Sync),
    action_box: &[(f64, f64)],
    cfg: &IcemConfig,
    rng: &mut R,
    shift_init: Option<&[Vec<f64>]>,
) -> Result<OptimizeOutcome<Vec<f64>>> {
    let icem = Icem::new(cfg.clone(), action_box.to_vec())?;
    Ok(icem.optimize(cfg.horizon, objective, shift_init, rng))
}

/// Standalone exhaustive call.
pub fn exhaustive_optimize<R: Rng + ?Sized>(
    objective: &(dyn Fn(&[usize]) -> f64 + Sync),
    n_actions: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<OptimizeOutcome<usize>> {
    if n_actions == 0 || horizon == 0 {
        return Err(Error::Config("exhaustive search needs actions and horizon >= 1".into()));
    }
    Ok(Exhaustive { n_actions }.optimize(horizon, objective, None, rng))
}
