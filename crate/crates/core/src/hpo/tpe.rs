use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::hpo::space::{ParamKind, ParamSpec, ParamValue, Params, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpeSettings {
    /// Completed trials sampled uniformly before the model takes over.
    pub n_startup: usize,
    /// Fraction of observations treated as good.
    pub gamma: f64,
    /// Draws from the good density scored per parameter.
    pub n_candidates: usize,
    /// Kernel width is at least `range / (n + 1)` for `n` observations and
    /// never below this fraction of the range.
    pub bandwidth_floor: f64,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self {
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
            bandwidth_floor: 0.01,
        }
    }
}

/// A finished trial's assignment and its objective (higher is better).
#[derive(Clone, Debug)]
pub struct Observation<'a> {
    pub params: &'a Params,
    pub value: f64,
}

/// Independent uniform draw over every active parameter.
pub fn sample_uniform<R: Rng>(space: &SearchSpace, rng: &mut R) -> Params {
    let mut params = Params::new();
    for spec in &space.params {
        if spec.is_active(&params) {
            params.insert(spec.name.clone(), uniform_value(spec, rng));
        }
    }
    params
}

fn uniform_value<R: Rng>(spec: &ParamSpec, rng: &mut R) -> ParamValue {
    match &spec.kind {
        ParamKind::FloatLinear { low, high } => ParamValue::Float(rng.random_range(*low..=*high)),
        ParamKind::FloatLog { low, high } => ParamValue::Float(rng.random_range(low.ln()..=high.ln()).exp().clamp(*low, *high)),
        ParamKind::Int { low, high } => ParamValue::Int(rng.random_range(*low..=*high)),
        ParamKind::Categorical { choices } => ParamValue::Choice(choices[rng.random_range(0..choices.len())].clone()),
    }
}

/// Tree-structured Parzen estimator suggestion. Falls back to uniform
/// sampling until `n_startup` observations exist.
pub fn suggest<R: Rng>(space: &SearchSpace, history: &[Observation], settings: &TpeSettings, rng: &mut R) -> Params {
    if history.len() < settings.n_startup.max(1) {
        return sample_uniform(space, rng);
    }
    let mut ranked: Vec<&Observation> = history.iter().collect();
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value));
    let n_good = ((settings.gamma * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
    let (good, bad) = ranked.split_at(n_good);

    let mut params = Params::new();
    for spec in &space.params {
        if !spec.is_active(&params) {
            continue;
        }
        let good_values = values_of(good, &spec.name);
        let bad_values = values_of(bad, &spec.name);
        let value = suggest_one(spec, &good_values, &bad_values, settings, rng);
        params.insert(spec.name.clone(), value);
    }
    params
}

fn values_of<'a>(set: &[&Observation<'a>], name: &str) -> Vec<&'a ParamValue> {
    set.iter().filter_map(|o| o.params.get(name)).collect()
}

fn suggest_one<R: Rng>(
    spec: &ParamSpec,
    good: &[&ParamValue],
    bad: &[&ParamValue],
    settings: &TpeSettings,
    rng: &mut R,
) -> ParamValue {
    if let ParamKind::Categorical { choices } = &spec.kind {
        let l = CategoricalDensity::fit(choices, good);
        let g = CategoricalDensity::fit(choices, bad);
        let best = (0..settings.n_candidates.max(1))
            .map(|_| l.sample(rng))
            .max_by(|&a, &b| (l.p[a].ln() - g.p[a].ln()).total_cmp(&(l.p[b].ln() - g.p[b].ln())))
            .unwrap_or(0);
        return ParamValue::Choice(choices[best].clone());
    }
    let domain = Domain::of(&spec.kind);
    let to_internal = |v: &&ParamValue| domain.internal(v, &spec.kind);
    let l = Parzen::fit(&good.iter().filter_map(to_internal).collect::<Vec<_>>(), domain, settings);
    let g = Parzen::fit(&bad.iter().filter_map(to_internal).collect::<Vec<_>>(), domain, settings);
    let mut best = (f64::NEG_INFINITY, domain.mid());
    for _ in 0..settings.n_candidates.max(1) {
        let x = l.sample(rng);
        let score = l.log_density(x) - g.log_density(x);
        if score > best.0 {
            best = (score, x);
        }
    }
    domain.external(best.1, &spec.kind)
}

struct CategoricalDensity {
    p: Vec<f64>,
}

impl CategoricalDensity {
    /// Observed counts plus one per choice.
    fn fit(choices: &[String], values: &[&ParamValue]) -> Self {
        let mut counts = vec![1.0; choices.len()];
        for v in values {
            if let ParamValue::Choice(c) = v {
                if let Some(i) = choices.iter().position(|x| x == c) {
                    counts[i] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        Self {
            p: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.p.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.p.len() - 1
    }
}

/// Continuous working interval: log scale for log-uniform parameters and
/// half-unit padding for integers.
#[derive(Clone, Copy, Debug)]
struct Domain {
    low: f64,
    high: f64,
}

impl Domain {
    fn of(kind: &ParamKind) -> Self {
        match kind {
            ParamKind::FloatLinear { low, high } => Self { low: *low, high: *high },
            ParamKind::FloatLog { low, high } => Self {
                low: low.ln(),
                high: high.ln(),
            },
            ParamKind::Int { low, high } => Self {
                low: *low as f64 - 0.5,
                high: *high as f64 + 0.5,
            },
            ParamKind::Categorical { .. } => Self { low: 0.0, high: 1.0 },
        }
    }

    fn width(&self) -> f64 {
        self.high - self.low
    }

    fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    fn internal(&self, v: &ParamValue, kind: &ParamKind) -> Option<f64> {
        match (kind, v) {
            (ParamKind::FloatLog { .. }, ParamValue::Float(x)) if *x > 0.0 => Some(x.ln()),
            (ParamKind::FloatLinear { .. }, ParamValue::Float(x)) => Some(*x),
            (ParamKind::Int { .. }, ParamValue::Int(x)) => Some(*x as f64),
            _ => None,
        }
        .map(|x| x.clamp(self.low, self.high))
    }

    fn external(&self, x: f64, kind: &ParamKind) -> ParamValue {
        match kind {
            ParamKind::FloatLinear { low, high } => ParamValue::Float(x.clamp(*low, *high)),
            ParamKind::FloatLog { low, high } => ParamValue::Float(x.exp().clamp(*low, *high)),
            ParamKind::Int { low, high } => ParamValue::Int((x.round() as i64).clamp(*low, *high)),
            ParamKind::Categorical { .. } => unreachable!("categorical parameters use their own density"),
        }
    }
}

/// Equal-weight mixture of truncated Gaussians at the observations plus a
/// prior kernel spanning the domain.
struct Parzen {
    centres: Vec<f64>,
    sigmas: Vec<f64>,
    domain: Domain,
}

impl Parzen {
    /// Each observation's kernel is as wide as its larger gap to a sorted
    /// neighbour (or domain edge), clipped to `[floor, range]`.
    fn fit(points: &[f64], domain: Domain, settings: &TpeSettings) -> Self {
        let w = domain.width();
        let n = points.len();
        let floor = w * settings.bandwidth_floor.max(1.0 / (n as f64 + 1.0));
        let mut centres = points.to_vec();
        centres.push(domain.mid());
        let mut order: Vec<usize> = (0..centres.len()).collect();
        order.sort_by(|&i, &j| centres[i].total_cmp(&centres[j]));
        let mut sigmas = vec![w; centres.len()];
        for (r, &i) in order.iter().enumerate() {
            if i == n {
                continue;
            }
            let left = if r > 0 { centres[i] - centres[order[r - 1]] } else { centres[i] - domain.low };
            let right = if r + 1 < order.len() {
                centres[order[r + 1]] - centres[i]
            } else {
                domain.high - centres[i]
            };
            sigmas[i] = left.max(right).clamp(floor, w);
        }
        Self { centres, sigmas, domain }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..self.centres.len());
        let (mu, s) = (self.centres[k], self.sigmas[k]);
        for _ in 0..64 {
            let z: f64 = StandardNormal.sample(rng);
            let x = mu + s * z;
            if x >= self.domain.low && x <= self.domain.high {
                return x;
            }
        }
        mu.clamp(self.domain.low, self.domain.high)
    }

    fn log_density(&self, x: f64) -> f64 {
        let (a, b) = (self.domain.low, self.domain.high);
        let sum: f64 = self
            .centres
            .iter()
            .zip(&self.sigmas)
            .map(|(&mu, &s)| {
                let mass = (normal_cdf((b - mu) / s) - normal_cdf((a - mu) / s)).max(1e-300);
                let z = (x - mu) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt() * mass)
            })
            .sum();
        (sum / self.centres.len() as f64).max(1e-300).ln()
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / SQRT_2))
}
