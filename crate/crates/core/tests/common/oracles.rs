//! Reference computations written independently of the library.

use scenario_forge::dispatch::BatteryParams;

/// All monotone, contiguous warping paths from (0,0) to (n-1,m-1) whose
/// cells satisfy |i - j| <= window.
pub fn warping_paths(n: usize, m: usize, window: Option<usize>) -> Vec<Vec<(usize, usize)>> {
    let ok = |i: usize, j: usize| window.is_none_or(|w| i.abs_diff(j) <= w);
    let mut done = Vec::new();
    if !ok(0, 0) {
        return done;
    }
    let mut stack = vec![vec![(0usize, 0usize)]];
    while let Some(path) = stack.pop() {
        let (i, j) = *path.last().unwrap();
        if (i, j) == (n - 1, m - 1) {
            done.push(path);
            continue;
        }
        for (ni, nj) in [(i + 1, j), (i, j + 1), (i + 1, j + 1)] {
            if ni < n && nj < m && ok(ni, nj) {
                let mut next = path.clone();
                next.push((ni, nj));
                stack.push(next);
            }
        }
    }
    done
}

/// Minimum over all band-respecting paths of the summed quantile-weighted
/// absolute deviation; `None` when no path exists.
pub fn path_min_dtw(
    x: &[f64],
    rows: &[Vec<f64>],
    weights: &[f64],
    window: Option<usize>,
) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    let cell = |i: usize, j: usize| -> f64 {
        rows[j]
            .iter()
            .zip(weights)
            .map(|(y, w)| (w / total) * (x[i] - y).abs())
            .sum()
    };
    warping_paths(x.len(), rows.len(), window)
        .iter()
        .map(|p| p.iter().map(|&(i, j)| cell(i, j)).sum::<f64>())
        .min_by(f64::total_cmp)
}

/// Battery on an energy grid of `steps` equal steps, enumerated directly
/// from the physical limits.
pub struct BruteBattery {
    step: f64,
    lo: usize,
    hi: usize,
    p: BatteryParams,
}

impl BruteBattery {
    pub fn new(p: &BatteryParams, steps: usize) -> Self {
        let step = p.energy_capacity / steps as f64;
        BruteBattery {
            step,
            lo: (p.soc_min / step).round() as usize,
            hi: (p.soc_max / step).round() as usize,
            p: p.clone(),
        }
    }

    pub fn index(&self, soc: f64) -> usize {
        (soc / self.step).round() as usize
    }

    /// Moves whose grid-side power stays within the charge/discharge limits.
    pub fn moves(&self, i: usize) -> Vec<i64> {
        let slack = 1.0 + 1e-9;
        (-((i - self.lo) as i64)..=(self.hi - i) as i64)
            .filter(|&d| {
                let e = d.unsigned_abs() as f64 * self.step;
                match d.signum() {
                    1 => e / self.p.charge_efficiency <= self.p.max_charge * slack,
                    -1 => e * self.p.discharge_efficiency <= self.p.max_discharge * slack,
                    _ => true,
                }
            })
            .collect()
    }

    /// Cash flow of one hour: pay for grid energy drawn, earn on energy
    /// delivered, pay throughput on energy moved.
    pub fn reward(&self, price: f64, d: i64) -> f64 {
        let e = d.unsigned_abs() as f64 * self.step;
        match d.signum() {
            1 => -(price * e / self.p.charge_efficiency) - self.p.throughput_cost * e,
            -1 => price * e * self.p.discharge_efficiency - self.p.throughput_cost * e,
            _ => 0.0,
        }
    }

    /// Every feasible action sequence of length `len` from state `i`.
    pub fn sequences(&self, i: usize, len: usize) -> Vec<Vec<i64>> {
        if len == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for d in self.moves(i) {
            let next = (i as i64 + d) as usize;
            for mut tail in self.sequences(next, len - 1) {
                tail.insert(0, d);
                out.push(tail);
            }
        }
        out
    }

    /// Value of a sequence, accumulated from the last hour backwards.
    pub fn sequence_value(&self, prices: &[f64], seq: &[i64]) -> f64 {
        seq.iter()
            .zip(prices)
            .rev()
            .fold(0.0, |acc, (d, p)| self.reward(*p, *d) + acc)
    }

    /// Best expected value when the first action is shared by all scenarios
    /// and the rest is chosen per scenario with hindsight of its prices.
    /// Returns the value and the set of maximizing first moves.
    pub fn best_first_action(
        &self,
        scenarios: &[Vec<f64>],
        probs: &[f64],
        start: usize,
    ) -> (f64, Vec<i64>) {
        let mut best = f64::NEG_INFINITY;
        let mut argmax = Vec::new();
        for d in self.moves(start) {
            let next = (start as i64 + d) as usize;
            let mut ev = 0.0;
            for (prices, p) in scenarios.iter().zip(probs) {
                let tail = self
                    .sequences(next, prices.len() - 1)
                    .iter()
                    .map(|s| self.sequence_value(&prices[1..], s))
                    .fold(f64::NEG_INFINITY, f64::max);
                ev += p * (self.reward(prices[0], d) + tail);
            }
            if ev > best {
                best = ev;
                argmax = vec![d];
            } else if ev == best {
                argmax.push(d);
            }
        }
        (best, argmax)
    }

    pub fn step(&self) -> f64 {
        self.step
    }
}
