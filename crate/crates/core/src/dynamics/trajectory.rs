use serde::Serialize;

use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};

/// A primal orbit `u_0 .. u_N` with `u_{n+1} = f(u_n, S)`.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub params: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Largest one-step replay defect `|u_{n+1} - f(u_n)|_inf`.
    pub fn replay_defect<S: DynamicalSystem>(&self, system: &S) -> Result<f64> {
        let mut worst = 0.0f64;
        for (n, w) in self.states.windows(2).enumerate() {
            let next = system.step_at(&w[0], &self.params, n)?;
            for (a, b) in next.iter().zip(&w[1]) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Finite-time average `<J>_N = (1/N) sum_{n<N} J(u_n)`.
#[derive(Clone, Debug, Serialize)]
pub struct TimeAverage {
    pub observable: String,
    pub window: usize,
    pub value: f64,
    /// Batch-means estimate of the standard error of `value`.
    pub std_error: f64,
}

const BATCHES: usize = 20;

impl TimeAverage {
    pub fn from_series(observable: &str, series: &[f64]) -> Self {
        let n = series.len();
        let value = if n == 0 { f64::NAN } else { series.iter().sum::<f64>() / n as f64 };
        TimeAverage { observable: observable.to_string(), window: n, value, std_error: std_error(series) }
    }
}

/// Standard error of the mean of a correlated series via non-overlapping
/// batch means; falls back to the i.i.d. estimate for short series.
pub fn std_error(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let (means, count): (Vec<f64>, usize) = if n >= 2 * BATCHES {
        let size = n / BATCHES;
        (
            (0..BATCHES).map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect(),
            BATCHES,
        )
    } else {
        (series.to_vec(), n)
    };
    let mean = means.iter().sum::<f64>() / count as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    (var / count as f64).sqrt()
}

/// What [`evolve`] keeps.
#[derive(Clone, Debug, Default)]
pub struct Record {
    pub states: bool,
    /// Observable indices to average.
    pub observables: Vec<usize>,
    pub series: bool,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    /// `N + 1` states when `Record::states` is set.
    pub trajectory: Option<Trajectory>,
    pub averages: Vec<TimeAverage>,
    /// Per-step observable values `J(u_n)`, `n < N`, when `Record::series` is set.
    pub series: Vec<Vec<f64>>,
    pub final_state: Vec<f64>,
}

/// Run `N` steps from `u0`, averaging the requested observables over
/// `u_0 .. u_{N-1}`.
pub fn evolve<S: DynamicalSystem>(system: &S, u0: &[f64], steps: usize, record: &Record) -> Result<Evolution> {
    if steps == 0 {
        return Err(Error::Input("evolve needs N >= 1".into()));
    }
    if u0.len() != system.dim() {
        return Err(Error::Dimension { expected: system.dim(), got: u0.len() });
    }
    let names = system.observable_names();
    for &k in &record.observables {
        if k >= names.len() {
            return Err(Error::Input(format!("observable index {k} out of range")));
        }
    }
    let mut states = if record.states { Vec::with_capacity(steps + 1) } else { Vec::new() };
    let mut series: Vec<Vec<f64>> = record.observables.iter().map(|_| Vec::with_capacity(steps)).collect();
    let mut u = u0.to_vec();
    for n in 0..steps {
        for (s, &k) in series.iter_mut().zip(&record.observables) {
            s.push(system.observe(k, &u));
        }
        let next = system.step_at(&u, system.params(), n)?;
        if record.states {
            states.push(std::mem::replace(&mut u, next));
        } else {
            u = next;
        }
    }
    let averages = record
        .observables
        .iter()
        .zip(&series)
        .map(|(&k, s)| TimeAverage::from_series(names[k], s))
        .collect();
    let trajectory = record.states.then(|| {
        states.push(u.clone());
        Trajectory { states, dt: system.dt(), params: system.params().to_vec() }
    });
    Ok(Evolution {
        trajectory,
        averages,
        series: if record.series { series } else { Vec::new() },
        final_state: u,
    })
}

/// Full orbit of `N` steps (`N + 1` states).
pub fn orbit<S: DynamicalSystem>(system: &S, u0: &[f64], steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Ok(Trajectory { states: vec![u0.to_vec()], dt: system.dt(), params: system.params().to_vec() });
    }
    let ev = evolve(system, u0, steps, &Record { states: true, ..Default::default() })?;
    Ok(ev.trajectory.expect("states recorded"))
}

/// Number of map applications covering `time` time units.
pub fn steps_for(system: &impl DynamicalSystem, time: f64) -> usize {
    (time / system.dt()).round().max(0.0) as usize
}

/// Integrate for `runup` time units and return the end state.
pub fn spin_up<S: DynamicalSystem>(system: &S, u: &[f64], runup: f64) -> Result<Vec<f64>> {
    if runup < 0.0 || !runup.is_finite() {
        return Err(Error::Input(format!("run-up time must be non-negative, got {runup}")));
    }
    if u.len() != system.dim() {
        return Err(Error::Dimension { expected: system.dim(), got: u.len() });
    }
    let steps = steps_for(system, runup);
    let mut x = u.to_vec();
    for n in 0..steps {
        x = system.step_at(&x, system.params(), n)?;
    }
    Ok(x)
}
