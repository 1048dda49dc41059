//! Monte Carlo for `dX = -∇V(X) dt + √(2/β) dW` with absorption on leaving a
//! domain: plain exit sampling, Fleming–Viot estimation of the
//! quasi-stationary rate, and the convergence of the conditioned law.
//!
//! Absorption is detected after each Euler–Maruyama step only, which biases
//! exit times upwards by `O(√Δt)`; rate estimates at two step sizes are
//! extrapolated linearly in `√Δt`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdsolver::{DomainSpec, Region};
use crate::potential::PotentialModel;
use crate::quadrature::halton;
use crate::stats::{extrapolate_linear, g_test, jackknife_ratio, ks_exponential, ks_p_value, linear_fit};

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), one stream per replica";
const RESURRECTION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub beta: f64,
    pub dt: f64,
    pub domain: DomainSpec,
    pub replicas: usize,
    pub t_burn: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl SimConfig {
    fn validate(&self, model: &PotentialModel) -> Result<()> {
        if !(self.beta > 0.0 && self.dt > 0.0 && self.t_max > 0.0 && self.t_burn >= 0.0) {
            return Err(Error::InvalidArgument("beta, dt, t_max must be positive and t_burn non-negative".into()));
        }
        if self.domain.dim() != model.dim() {
            return Err(Error::InvalidArgument("domain and potential dimensions differ".into()));
        }
        if !matches!(self.domain.region, Region::Box { .. }) {
            return Err(Error::InvalidArgument("Monte Carlo supports box regions with cuts only".into()));
        }
        Ok(())
    }

    /// `Δt · max |∇V|²` over quasi-random points of the domain box; the scheme
    /// is trustworthy when this is small.
    pub fn stability_number(&self, model: &PotentialModel) -> f64 {
        let b = self.domain.region.bounds();
        let d = b.len();
        let mut u = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut worst: f64 = 0.0;
        for i in 1..=1024u64 {
            halton(i, d, &mut u);
            let x: Vec<f64> = (0..d).map(|k| b[k][0] + u[k] * (b[k][1] - b[k][0])).collect();
            model.gradient_into(&x, &mut g);
            worst = worst.max(g.iter().map(|v| v * v).sum());
        }
        self.dt * worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartTag {
    Deterministic,
    QsdApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub time: f64,
    pub location: Vec<f64>,
    /// Violated face: box faces `2k`, `2k + 1` along axis `k`, then cuts.
    pub face: usize,
    pub start: StartTag,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

struct Stepper<'a> {
    model: &'a PotentialModel,
    drift_dt: f64,
    noise: f64,
    grad: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a PotentialModel, cfg: &SimConfig) -> Self {
        Self { model, drift_dt: cfg.dt, noise: (2.0 * cfg.dt / cfg.beta).sqrt(), grad: vec![0.0; model.dim()] }
    }

    fn step(&mut self, x: &mut [f64], rng: &mut ChaCha8Rng) {
        self.model.gradient_into(x, &mut self.grad);
        for (xi, gi) in x.iter_mut().zip(&self.grad) {
            let xi_noise: f64 = rng.sample(StandardNormal);
            *xi += -gi * self.drift_dt + self.noise * xi_noise;
        }
    }
}

fn exit_with(model: &PotentialModel, cfg: &SimConfig, x0: &[f64], rng: &mut ChaCha8Rng, start: StartTag) -> Result<ExitSample> {
    if cfg.domain.exit_face(x0, cfg.beta)?.is_some() {
        return Err(Error::InvalidArgument(format!("start {x0:?} lies outside the domain")));
    }
    let mut st = Stepper::new(model, cfg);
    let mut x = x0.to_vec();
    let max_steps = (cfg.t_max / cfg.dt).ceil() as u64;
    for n in 1..=max_steps {
        st.step(&mut x, rng);
        if let Some(face) = cfg.domain.exit_face(&x, cfg.beta)? {
            return Ok(ExitSample { time: n as f64 * cfg.dt, location: x, face, start });
        }
    }
    Err(Error::HorizonExceeded)
}

/// One exit from `x0` on random stream `stream_id`.
pub fn simulate_exit(model: &PotentialModel, cfg: &SimConfig, x0: &[f64], stream_id: u64) -> Result<ExitSample> {
    cfg.validate(model)?;
    exit_with(model, cfg, x0, &mut stream(cfg.seed, stream_id), StartTag::Deterministic)
}

/// Independent exits, one per start point; censored runs are returned as
/// `Err(HorizonExceeded)` in place.
pub fn simulate_exits(model: &PotentialModel, cfg: &SimConfig, starts: &[Vec<f64>], tag: StartTag) -> Result<Vec<Result<ExitSample>>> {
    cfg.validate(model)?;
    Ok(starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| exit_with(model, cfg, x0, &mut stream(cfg.seed, i as u64), tag))
        .collect())
}

/// Histogram on the domain box, `bins` cells per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bounds: Vec<[f64; 2]>,
    pub bins: usize,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(bounds: &[[f64; 2]], bins: usize) -> Self {
        Self { bounds: bounds.to_vec(), bins, counts: vec![0.0; bins.pow(bounds.len() as u32)] }
    }

    pub fn add(&mut self, x: &[f64]) {
        let mut idx = 0;
        for (xk, [lo, hi]) in x.iter().zip(&self.bounds).rev() {
            let c = (((xk - lo) / (hi - lo)) * self.bins as f64).floor().clamp(0.0, (self.bins - 1) as f64) as usize;
            idx = idx * self.bins + c;
        }
        self.counts[idx] += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        self.counts.iter().map(|c| c / t).collect()
    }

    pub fn total_variation(&self, other: &Histogram) -> f64 {
        0.5 * self.normalized().iter().zip(other.normalized()).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlemingViotResult {
    pub dt: f64,
    pub rate: f64,
    pub std_error: f64,
    pub absorptions: u64,
    /// Replica positions at the end of the run.
    pub positions: Vec<Vec<f64>>,
    /// Time-averaged occupation after burn-in.
    pub occupation: Histogram,
    pub stability_number: f64,
    pub rng: String,
}

const BATCHES: usize = 20;
const HISTOGRAM_BINS: usize = 20;

struct Swarm<'a> {
    model: &'a PotentialModel,
    cfg: &'a SimConfig,
    x: Vec<Vec<f64>>,
    rngs: Vec<ChaCha8Rng>,
    master: ChaCha8Rng,
}

impl<'a> Swarm<'a> {
    fn new(model: &'a PotentialModel, cfg: &'a SimConfig, starts: Vec<Vec<f64>>) -> Result<Self> {
        for s in &starts {
            if cfg.domain.exit_face(s, cfg.beta)?.is_some() {
                return Err(Error::InvalidArgument(format!("start {s:?} lies outside the domain")));
            }
        }
        let rngs = (0..starts.len() as u64).map(|i| stream(cfg.seed, i)).collect();
        Ok(Self { model, cfg, x: starts, rngs, master: stream(cfg.seed, RESURRECTION_STREAM) })
    }

    /// Advances every replica one step and resurrects the absorbed ones on
    /// uniformly chosen survivors; returns the number absorbed.
    fn step(&mut self) -> Result<usize> {
        let (model, cfg) = (self.model, self.cfg);
        let dead: Vec<bool> = self
            .x
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .map_init(
                || Stepper::new(model, cfg),
                |st, (x, rng)| {
                    st.step(x, rng);
                    matches!(cfg.domain.exit_face(x, cfg.beta), Ok(Some(_)))
                },
            )
            .collect();
        let alive: Vec<usize> = (0..dead.len()).filter(|&i| !dead[i]).collect();
        let n_dead = dead.len() - alive.len();
        if alive.is_empty() {
            return Err(Error::Extinction);
        }
        for i in (0..dead.len()).filter(|&i| dead[i]) {
            let j = alive[self.master.random_range(0..alive.len())];
            self.x[i] = self.x[j].clone();
        }
        Ok(n_dead)
    }

    fn histogram(&self) -> Histogram {
        let mut h = Histogram::new(self.cfg.domain.region.bounds(), HISTOGRAM_BINS);
        for x in &self.x {
            h.add(x);
        }
        h
    }
}

/// Fleming–Viot estimate of `λ₁,β` as absorptions per replica-time after
/// `t_burn`, with delete-one jackknife errors over time batches.
pub fn fleming_viot(model: &PotentialModel, cfg: &SimConfig, x0: &[f64]) -> Result<FlemingViotResult> {
    cfg.validate(model)?;
    if cfg.replicas < 100 {
        return Err(Error::InvalidArgument("Fleming–Viot needs at least 100 replicas".into()));
    }
    if cfg.t_max <= cfg.t_burn {
        return Err(Error::InvalidArgument("t_max must exceed t_burn".into()));
    }
    let mut swarm = Swarm::new(model, cfg, vec![x0.to_vec(); cfg.replicas])?;
    let burn_steps = (cfg.t_burn / cfg.dt).round() as usize;
    let per_batch = (((cfg.t_max - cfg.t_burn) / cfg.dt) / BATCHES as f64).ceil() as usize;
    for _ in 0..burn_steps {
        swarm.step()?;
    }
    let mut counts = [0.0; BATCHES];
    let mut occupation = Histogram::new(cfg.domain.region.bounds(), HISTOGRAM_BINS);
    let stride = (per_batch / 50).max(1);
    for (b, c) in counts.iter_mut().enumerate() {
        for s in 0..per_batch {
            *c += swarm.step()? as f64;
            if (b * per_batch + s) % stride == 0 {
                for x in &swarm.x {
                    occupation.add(x);
                }
            }
        }
    }
    let exposure = vec![cfg.replicas as f64 * per_batch as f64 * cfg.dt; BATCHES];
    let (rate, std_error) = jackknife_ratio(&counts, &exposure);
    Ok(FlemingViotResult {
        dt: cfg.dt,
        rate,
        std_error,
        absorptions: counts.iter().sum::<f64>() as u64,
        positions: swarm.x,
        occupation,
        stability_number: cfg.stability_number(model),
        rng: RNG_ALGORITHM.into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtrapolatedRate {
    pub rate: f64,
    pub std_error: f64,
    pub runs: Vec<FlemingViotResult>,
}

/// Fleming–Viot at `dt` and `dt/2` with linear extrapolation in `√Δt`.
pub fn extrapolated_rate(model: &PotentialModel, cfg: &SimConfig, x0: &[f64]) -> Result<ExtrapolatedRate> {
    let coarse = fleming_viot(model, cfg, x0)?;
    let half = SimConfig { dt: cfg.dt / 2.0, seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15, ..cfg.clone() };
    let fine = fleming_viot(model, &half, x0)?;
    let (rate, std_error) = extrapolate_linear(
        [cfg.dt.sqrt(), half.dt.sqrt()],
        [coarse.rate, fine.rate],
        [coarse.std_error, fine.std_error],
    );
    Ok(ExtrapolatedRate { rate, std_error, runs: vec![coarse, fine] })
}

/// Exit-law checks from quasi-stationary starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitLawTest {
    pub samples: usize,
    pub censored: usize,
    pub fitted_rate: f64,
    pub ks_statistic: f64,
    pub ks_critical_5pct: f64,
    pub ks_p_value: f64,
    pub g_statistic: f64,
    pub g_dof: usize,
    pub independence_p_value: f64,
}

impl ExitLawTest {
    pub fn exponential_passes(&self) -> bool {
        self.ks_statistic < self.ks_critical_5pct
    }

    pub fn independence_passes(&self) -> bool {
        self.independence_p_value > 0.05
    }
}

/// Exponentiality of the exit time and its independence from the exit face,
/// for exits started from the given (quasi-stationary) positions.
pub fn exit_law_test(model: &PotentialModel, cfg: &SimConfig, starts: &[Vec<f64>]) -> Result<(ExitLawTest, Vec<ExitSample>)> {
    let runs = simulate_exits(model, cfg, starts, StartTag::QsdApprox)?;
    let censored = runs.iter().filter(|r| matches!(r, Err(Error::HorizonExceeded))).count();
    let samples: Vec<ExitSample> = runs.into_iter().filter_map(|r| r.ok()).collect();
    if samples.len() < 20 {
        return Err(Error::InsufficientSurvivors(samples.len()));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let fitted_rate = times.len() as f64 / times.iter().sum::<f64>();
    let ks = ks_exponential(&times, fitted_rate);
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() as f64 * p) as usize).min(sorted.len() - 1)];
    let cuts = [q(0.25), q(0.5), q(0.75)];
    let faces = 2 * cfg.domain.dim() + cfg.domain.cuts.len();
    let mut table = vec![vec![0.0; 4]; faces];
    for s in &samples {
        let col = cuts.iter().filter(|&&c| s.time > c).count();
        table[s.face][col] += 1.0;
    }
    let (g, dof, p) = g_test(&table);
    let n = samples.len();
    Ok((
        ExitLawTest {
            samples: n,
            censored,
            fitted_rate,
            ks_statistic: ks,
            ks_critical_5pct: 1.36 / (n as f64).sqrt(),
            ks_p_value: ks_p_value(ks, n),
            g_statistic: g,
            g_dof: dof,
            independence_p_value: p,
        },
        samples,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecorrelationEstimate {
    pub rate: f64,
    /// 95% interval from the regression slope.
    pub interval: [f64; 2],
    pub noise_floor: f64,
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
    pub fitted_points: usize,
}

/// Fits `TV(t) ≈ C e^{-rt}` between the conditioned law started at `x0`
/// (a Fleming–Viot swarm without burn-in) and the reference occupation
/// histogram, using the points below `0.5` and above four times the
/// late-time noise floor.
pub fn decorrelation_estimate(
    model: &PotentialModel,
    cfg: &SimConfig,
    x0: &[f64],
    reference: &Histogram,
    samples: usize,
) -> Result<DecorrelationEstimate> {
    cfg.validate(model)?;
    let mut swarm = Swarm::new(model, cfg, vec![x0.to_vec(); cfg.replicas])?;
    let total_steps = (cfg.t_max / cfg.dt).round() as usize;
    let stride = (total_steps / samples.max(2)).max(1);
    let (mut times, mut tv) = (Vec::new(), Vec::new());
    for n in 1..=total_steps {
        swarm.step()?;
        if n % stride == 0 {
            times.push(n as f64 * cfg.dt);
            tv.push(swarm.histogram().total_variation(reference));
        }
    }
    let tail = &tv[tv.len() * 2 / 3..];
    let mut t2 = tail.to_vec();
    t2.sort_by(f64::total_cmp);
    let noise_floor = t2[t2.len() / 2];
    let start = tv.iter().position(|&v| v < 0.5).unwrap_or(tv.len());
    let end = tv[start..].iter().position(|&v| v < 4.0 * noise_floor).map_or(tv.len(), |k| start + k);
    if end < start + 4 {
        return Err(Error::InsufficientSurvivors(end.saturating_sub(start)));
    }
    let y: Vec<f64> = tv[start..end].iter().map(|v| v.ln()).collect();
    let (_, slope, se) = linear_fit(&times[start..end], &y);
    let rate = -slope;
    Ok(DecorrelationEstimate {
        rate,
        interval: [rate - 1.96 * se, rate + 1.96 * se],
        noise_floor,
        times,
        tv,
        fitted_points: end - start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdsolver::{Grid, Region};
    use crate::potential::Family;

    fn flat() -> PotentialModel {
        PotentialModel::new("flat", Family::Poly1d { coeffs: vec![0.0] }, vec![[-2.0, 2.0]]).unwrap()
    }

    fn cfg(dt: f64, replicas: usize, t_burn: f64, t_max: f64, seed: u64) -> SimConfig {
        SimConfig {
            beta: 1.0,
            dt,
            domain: DomainSpec { region: Region::Box { bounds: vec![[-1.0, 1.0]] }, cuts: vec![], grid: Grid::Intervals(vec![200]) },
            replicas,
            t_burn,
            t_max,
            seed,
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = flat();
        let c = cfg(1e-3, 100, 0.2, 0.6, 5);
        let a = fleming_viot(&m, &c, &[0.0]).unwrap();
        let b = fleming_viot(&m, &c, &[0.0]).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.absorptions, b.absorptions);
        assert_eq!(simulate_exit(&m, &c, &[0.3], 7).unwrap(), simulate_exit(&m, &c, &[0.3], 7).unwrap());
        assert!(a.positions.iter().all(|x| x[0].abs() < 1.0));
        assert!((a.occupation.normalized().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_is_near_boundary_and_mirror_symmetric() {
        let m = flat();
        let c = cfg(1e-4, 100, 0.0, 50.0, 11);
        let e = simulate_exit(&m, &c, &[0.2], 3).unwrap();
        assert!(e.location[0].abs() >= 1.0 && e.location[0].abs() < 1.0 + 6.0 * (2e-4f64).sqrt());
        // V(x) = x against its mirror image V(-x): same exit-time law, faces swapped
        let tilt = PotentialModel::new("tilt", Family::Poly1d { coeffs: vec![0.0, 1.0] }, vec![[-2.0, 2.0]]).unwrap();
        let mirror = PotentialModel::new("tilt-", Family::Poly1d { coeffs: vec![0.0, -1.0] }, vec![[-2.0, 2.0]]).unwrap();
        let c = cfg(1e-3, 100, 0.0, 50.0, 11);
        let run = |m: &PotentialModel, x0: f64| {
            let s: Vec<ExitSample> =
                simulate_exits(m, &c, &vec![vec![x0]; 4000], StartTag::Deterministic).unwrap().into_iter().map(|r| r.unwrap()).collect();
            let mean = s.iter().map(|e| e.time).sum::<f64>() / s.len() as f64;
            let sd = (s.iter().map(|e| (e.time - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
            let right = s.iter().filter(|e| e.face == 1).count() as f64 / s.len() as f64;
            (mean, sd / (s.len() as f64).sqrt(), right)
        };
        let (ma, sa, ra) = run(&tilt, 0.25);
        let (mb, sb, rb) = run(&mirror, -0.25);
        assert!((ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{ma} vs {mb}");
        assert!((ra - (1.0 - rb)).abs() < 0.04, "{ra} vs {rb}");
    }

    #[test]
    fn start_outside_is_rejected() {
        let c = cfg(1e-3, 100, 0.0, 1.0, 1);
        assert!(matches!(simulate_exit(&flat(), &c, &[1.5], 0), Err(Error::InvalidArgument(_))));
        let huge = SimConfig { dt: 1e10, t_max: 1e11, ..c };
        assert_eq!(fleming_viot(&flat(), &huge, &[0.0]).unwrap_err(), Error::Extinction);
    }
}
