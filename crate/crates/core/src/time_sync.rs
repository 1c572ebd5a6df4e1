//! One-way clock translation: map a sensor's own timestamps onto the host
//! clock with a skew/offset model `t_c = α·t_s + β`, tracked by a small
//! Kalman filter fed with host arrival times.

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

/// Skew outside this open interval is treated as a fault.
pub const ALPHA_BOUNDS: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeFilterConfig {
    /// Skew random-walk density, 1/s.
    pub q_alpha: f64,
    /// Offset random-walk density, s²/s.
    pub q_beta: f64,
    /// Arrival-time noise variance, s².
    pub r: f64,
    pub initial_var_alpha: f64,
    pub initial_var_beta: f64,
}

impl Default for TimeFilterConfig {
    fn default() -> Self {
        Self { q_alpha: 1e-12, q_beta: 1e-9, r: 1e-6, initial_var_alpha: 1e-6, initial_var_beta: 1e-4 }
    }
}

impl TimeFilterConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let check = |name, v: f64, strictly: bool| {
            let ok = v.is_finite() && if strictly { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(crate::Error::OutOfRange { name, value: v })
            }
        };
        check("q_alpha", self.q_alpha, false)?;
        check("q_beta", self.q_beta, false)?;
        check("r", self.r, true)?;
        check("initial_var_alpha", self.initial_var_alpha, true)?;
        check("initial_var_beta", self.initial_var_beta, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUpdate {
    Initialized,
    Updated,
    /// Sensor time went backwards; the sample was ignored.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTranslationFilter {
    alpha: f64,
    beta: f64,
    cov: Matrix2<f64>,
    config: TimeFilterConfig,
    last_t_s: f64,
    dropped: usize,
    updates: usize,
    fault: bool,
}

impl TimeTranslationFilter {
    /// Start from the first observed pair: unit skew, offset `t_c0 − t_s0`.
    pub fn init(t_s0: f64, t_c0: f64, config: TimeFilterConfig) -> Self {
        Self {
            alpha: 1.0,
            beta: t_c0 - t_s0,
            cov: Matrix2::new(config.initial_var_alpha, 0.0, 0.0, config.initial_var_beta),
            config,
            last_t_s: t_s0,
            dropped: 0,
            updates: 0,
            fault: false,
        }
    }

    /// Filter with a fixed mapping; used for sensors synchronised by other means.
    pub fn fixed(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            cov: Matrix2::zeros(),
            config: TimeFilterConfig::default(),
            last_t_s: f64::NEG_INFINITY,
            dropped: 0,
            updates: 0,
            fault: false,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn covariance(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Set once the skew estimate leaves [`ALPHA_BOUNDS`]; never cleared.
    pub fn fault(&self) -> bool {
        self.fault
    }

    #[inline]
    pub fn translate(&self, t_s: f64) -> f64 {
        self.alpha * t_s + self.beta
    }

    pub fn update(&mut self, t_s: f64, t_arrival: f64) -> TimeUpdate {
        if !(t_s >= self.last_t_s) || !t_arrival.is_finite() {
            self.dropped += 1;
            return TimeUpdate::Dropped;
        }
        let elapsed = t_s - self.last_t_s;
        self.last_t_s = t_s;
        self.cov[(0, 0)] += self.config.q_alpha * elapsed;
        self.cov[(1, 1)] += self.config.q_beta * elapsed;

        let h = RowVector2::new(t_s, 1.0);
        let ph = self.cov * h.transpose();
        let s = (h * ph)[0] + self.config.r;
        let k = ph / s;
        let y = t_arrival - self.translate(t_s);
        self.alpha += k[0] * y;
        self.beta += k[1] * y;
        let i_kh = Matrix2::identity() - k * h;
        let cov = i_kh * self.cov * i_kh.transpose() + k * k.transpose() * self.config.r;
        self.cov = 0.5 * (cov + cov.transpose());
        self.updates += 1;
        if !(self.alpha > ALPHA_BOUNDS.0 && self.alpha < ALPHA_BOUNDS.1) && !self.fault {
            log::warn!("clock skew estimate {} outside sanity bounds", self.alpha);
            self.fault = true;
        }
        TimeUpdate::Updated
    }

    pub fn state(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.beta)
    }
}

/// Per-sensor wrapper that defers initialisation to the first sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorClock {
    /// Timestamps already on the host clock (e.g. PTP); used verbatim.
    Synchronized,
    Pending(TimeFilterConfig),
    Tracking(TimeTranslationFilter),
}

impl SensorClock {
    pub fn new(enabled: bool, config: TimeFilterConfig) -> Self {
        if enabled {
            SensorClock::Pending(config)
        } else {
            SensorClock::Synchronized
        }
    }

    /// Feed one sample and return its host-clock time.
    pub fn observe(&mut self, t_s: f64, t_arrival: f64) -> (f64, TimeUpdate) {
        match self {
            SensorClock::Synchronized => (t_s, TimeUpdate::Updated),
            SensorClock::Pending(config) => {
                let f = TimeTranslationFilter::init(t_s, t_arrival, *config);
                let t = f.translate(t_s);
                *self = SensorClock::Tracking(f);
                (t, TimeUpdate::Initialized)
            }
            SensorClock::Tracking(f) => {
                let outcome = f.update(t_s, t_arrival);
                (f.translate(t_s), outcome)
            }
        }
    }

    pub fn filter(&self) -> Option<&TimeTranslationFilter> {
        match self {
            SensorClock::Tracking(f) => Some(f),
            _ => None,
        }
    }
}
