//! Nearest-reference and threshold classification of RGB readings.
//!
//! Everything here is generic over the scalar type. Raw sensor counts are
//! classified exactly with `i64`; `f64` is convenient for analysis.

use std::fmt::Debug;

use num_traits::{Num, NumCast};

use super::{IndicatorState, OracleError};
use crate::ChannelId;

/// Numeric type usable for RGB geometry.
pub trait Scalar: Num + Copy + PartialOrd + NumCast + Debug {}

impl<T> Scalar for T where T: Num + Copy + PartialOrd + NumCast + Debug {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Rgb<T> {
    pub r: T,
    pub g: T,
    pub b: T,
}

impl<T: Scalar> Rgb<T> {
    pub fn new(r: T, g: T, b: T) -> Self {
        Rgb { r, g, b }
    }

    pub fn add(self, o: Self) -> Self {
        Rgb::new(self.r + o.r, self.g + o.g, self.b + o.b)
    }

    pub fn sub(self, o: Self) -> Self {
        Rgb::new(self.r - o.r, self.g - o.g, self.b - o.b)
    }

    pub fn scale(self, k: T) -> Self {
        Rgb::new(self.r * k, self.g * k, self.b * k)
    }

    pub fn dot(self, o: Self) -> T {
        self.r * o.r + self.g * o.g + self.b * o.b
    }

    pub fn dist_sq(self, o: Self) -> T {
        let d = self.sub(o);
        d.dot(d)
    }

    pub fn max_component(self) -> T {
        let m = if self.g > self.r { self.g } else { self.r };
        if self.b > m {
            self.b
        } else {
            m
        }
    }

    /// Converts component-wise; `None` if a value does not fit.
    pub fn cast<U: Scalar>(self) -> Option<Rgb<U>> {
        Some(Rgb::new(
            U::from(self.r)?,
            U::from(self.g)?,
            U::from(self.b)?,
        ))
    }
}

/// Reference readings for one channel with the indicator on and off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPair<T> {
    pub channel: ChannelId,
    pub on_ref: Rgb<T>,
    pub off_ref: Rgb<T>,
}

/// Pairs on/off references; identical references cannot separate anything.
pub fn calibrate<T: Scalar>(
    channel: ChannelId,
    on_reading: Rgb<T>,
    off_reading: Rgb<T>,
) -> Result<CalibrationPair<T>, OracleError> {
    if on_reading == off_reading {
        return Err(OracleError::DegenerateCalibration(channel));
    }
    Ok(CalibrationPair {
        channel,
        on_ref: on_reading,
        off_ref: off_reading,
    })
}

impl<T: Scalar> CalibrationPair<T> {
    /// On iff strictly closer (Euclidean) to the on reference; exact ties keep `previous`.
    pub fn classify(&self, reading: Rgb<T>, previous: IndicatorState) -> IndicatorState {
        let to_on = reading.dist_sq(self.on_ref);
        let to_off = reading.dist_sq(self.off_ref);
        if to_on < to_off {
            IndicatorState::On
        } else if to_off < to_on {
            IndicatorState::Off
        } else {
            previous
        }
    }

    /// `on_ref - off_ref`, the normal of the decision plane.
    pub fn axis(&self) -> Rgb<T> {
        self.on_ref.sub(self.off_ref)
    }
}

/// Fallback when no on reference can be captured: compare the brightest component to a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold<T> {
    pub level: T,
    pub band: T,
}

impl<T: Scalar> Threshold<T> {
    pub fn new(level: T, band: T) -> Result<Self, OracleError> {
        if level <= T::zero() {
            return Err(OracleError::BadThreshold);
        }
        Ok(Threshold { level, band })
    }

    pub fn classify(&self, reading: Rgb<T>, previous: IndicatorState) -> IndicatorState {
        let half = self.band / (T::one() + T::one());
        let m = reading.max_component();
        if m > self.level + half {
            IndicatorState::On
        } else if m < self.level - half {
            IndicatorState::Off
        } else {
            previous
        }
    }
}

/// Either classifier, chosen per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classifier<T> {
    Calibrated(CalibrationPair<T>),
    Threshold(Threshold<T>),
}

impl<T: Scalar> Classifier<T> {
    pub fn classify(&self, reading: Rgb<T>, previous: IndicatorState) -> IndicatorState {
        match self {
            Classifier::Calibrated(p) => p.classify(reading, previous),
            Classifier::Threshold(t) => t.classify(reading, previous),
        }
    }
}
