//! Tandem-queue production line.
//!
//! Parts arrive as a Poisson stream at station 0 and pass through `N`
//! single-server FCFS stations with exponential service. Stations after the
//! first hold at most `K` parts, counting the one in service. A part finishing
//! service while the next station is full stays on its server, blocking it,
//! until a slot opens downstream.

use rand::{Rng, RngCore};
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Revenue {
    pub h: f64,
    pub c0: f64,
    pub c1: f64,
    /// Per-station service-rate cost.
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionLineSpec {
    pub stations: usize,
    pub capacity: usize,
    /// Poisson arrival rate of each context.
    pub arrival_rates: Vec<f64>,
    /// Service-rate vector of each design.
    pub service_rates: Vec<Vec<f64>>,
    pub horizon: f64,
    pub warmup: f64,
    pub revenue: Revenue,
}

impl ProductionLineSpec {
    /// Two stations, `K = 10`, arrival rates 0.3, 0.5, 0.8 and the 6×6 mesh
    /// of service rates in `[0.1, 1.1]²`.
    pub fn preset() -> Self {
        let rates: Vec<f64> = (0..6).map(|t| f64::from(1 + 2 * t) / 10.0).collect();
        ProductionLineSpec {
            stations: 2,
            capacity: 10,
            arrival_rates: vec![0.3, 0.5, 0.8],
            service_rates: rates
                .iter()
                .flat_map(|&a| rates.iter().map(move |&b| vec![a, b]))
                .collect(),
            horizon: 1000.0,
            warmup: 100.0,
            revenue: Revenue {
                h: 10.0,
                c0: 1.0,
                c1: 0.0,
                c: vec![1.0, 1.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.stations == 0 {
            return Err(CrsError::config("stations", "need at least one station"));
        }
        if self.capacity == 0 {
            return Err(CrsError::config("capacity", "must be at least 1"));
        }
        if self.arrival_rates.is_empty() || !self.arrival_rates.iter().all(|&x| positive(x)) {
            return Err(CrsError::config("arrival_rates", "need one or more positive rates"));
        }
        if self.service_rates.len() < 2 {
            return Err(CrsError::config("service_rates", "need at least two designs"));
        }
        for (i, mu) in self.service_rates.iter().enumerate() {
            if mu.len() != self.stations || !mu.iter().all(|&x| positive(x)) {
                return Err(CrsError::config(
                    "service_rates",
                    format!("design {i} needs {} positive rates", self.stations),
                ));
            }
        }
        if !(self.warmup >= 0.0 && self.horizon > self.warmup && self.horizon.is_finite()) {
            return Err(CrsError::config("horizon", "need horizon > warmup ≥ 0"));
        }
        if self.revenue.c.len() != self.stations {
            return Err(CrsError::config("revenue.c", format!("need {} cost coefficients", self.stations)));
        }
        Ok(())
    }

    /// Completions per unit time after warmup in one simulated run.
    pub fn throughput(&self, design: usize, context: usize, rng: &mut dyn RngCore) -> f64 {
        simulate_line(
            self.arrival_rates[context],
            &self.service_rates[design],
            self.capacity,
            self.horizon,
            self.warmup,
            rng,
        )
    }

    pub fn revenue_from_throughput(&self, design: usize, throughput: f64) -> f64 {
        let r = &self.revenue;
        let cost: f64 = r.c.iter().zip(&self.service_rates[design]).map(|(c, mu)| c * mu).sum();
        r.h * throughput / (r.c0 + cost) - r.c1
    }

    /// One revenue sample.
    pub fn simulate(&self, design: usize, context: usize, rng: &mut dyn RngCore) -> f64 {
        self.revenue_from_throughput(design, self.throughput(design, context, rng))
    }
}

struct Line<'a> {
    mu: &'a [f64],
    capacity: usize,
    parts: Vec<usize>,
    serving: Vec<bool>,
    blocked: Vec<bool>,
    finish: Vec<f64>,
}

impl Line<'_> {
    fn start(&mut self, l: usize, now: f64, rng: &mut dyn RngCore) {
        if !self.serving[l] && !self.blocked[l] && self.parts[l] > 0 {
            self.serving[l] = true;
            self.finish[l] = now + rng.sample(Exp::new(self.mu[l]).expect("positive rate"));
        }
    }

    fn has_room(&self, l: usize) -> bool {
        self.parts[l] < self.capacity
    }

    /// Station `l` lost a part; pull blocked parts down the chain.
    fn release(&mut self, mut l: usize, now: f64, rng: &mut dyn RngCore) {
        while l > 0 && self.blocked[l - 1] && self.has_room(l) {
            self.blocked[l - 1] = false;
            self.parts[l - 1] -= 1;
            self.parts[l] += 1;
            self.start(l, now, rng);
            self.start(l - 1, now, rng);
            l -= 1;
        }
    }
}

fn simulate_line(arrival: f64, mu: &[f64], capacity: usize, horizon: f64, warmup: f64, rng: &mut dyn RngCore) -> f64 {
    let n = mu.len();
    let mut line = Line {
        mu,
        capacity,
        parts: vec![0; n],
        serving: vec![false; n],
        blocked: vec![false; n],
        finish: vec![f64::INFINITY; n],
    };
    let inter = Exp::new(arrival).expect("positive rate");
    let mut next_arrival = rng.sample(inter);
    let mut completed = 0u64;

    loop {
        let (mut l, mut t) = (n, next_arrival);
        for (s, &f) in line.finish.iter().enumerate() {
            if f < t {
                l = s;
                t = f;
            }
        }
        if t > horizon {
            break;
        }
        if l == n {
            line.parts[0] += 1;
            line.start(0, t, rng);
            next_arrival = t + rng.sample(inter);
            continue;
        }
        line.serving[l] = false;
        line.finish[l] = f64::INFINITY;
        if l + 1 == n {
            line.parts[l] -= 1;
            if t >= warmup {
                completed += 1;
            }
        } else if line.has_room(l + 1) {
            line.parts[l] -= 1;
            line.parts[l + 1] += 1;
            line.start(l + 1, t, rng);
        } else {
            line.blocked[l] = true;
            continue;
        }
        line.start(l, t, rng);
        line.release(l, t, rng);
    }
    completed as f64 / (horizon - warmup)
}
