use crate::error::{Error, Result};
use crate::scalar::Real;

/// Blowup time extrapolated from the sup-norm history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupEstimate<T> {
    pub t_hat: T,
    pub fit_window: (T, T),
    /// RMS of the fit residual relative to the mean of `1/sup` in the window.
    pub fit_residual: T,
    /// Fitted `c` in `1/sup ≈ c (T̂ − t)`.
    pub rate: T,
}

impl<T: Real> BlowupEstimate<T> {
    /// Parabolic radius `R(t) = (T̂ − t)^{1/2}`.
    pub fn radius_at(&self, t: T) -> Result<T> {
        if t < self.t_hat {
            Ok((self.t_hat - t).sqrt())
        } else {
            Err(Error::InvalidEstimate(format!("t = {t} is not before the estimated blowup time {}", self.t_hat)))
        }
    }

    /// Same fit with `T̂` replaced by `factor · T̂`.
    pub fn scaled(&self, factor: T) -> Self {
        Self { t_hat: self.t_hat * factor, ..*self }
    }
}

pub const MIN_SAMPLES: usize = 5;

/// Fits `1/sup ≈ c (T̂ − t)` over the last decade of sup-norm growth.
pub fn estimate_blowup_time<T: Real>(samples: &[(T, T)]) -> Result<BlowupEstimate<T>> {
    estimate_blowup_time_back(samples, 0)
}

/// Like [`estimate_blowup_time`], with the fit window moved `decades_back`
/// decades of growth towards the start of the series.
pub fn estimate_blowup_time_back<T: Real>(samples: &[(T, T)], decades_back: u32) -> Result<BlowupEstimate<T>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::NoBlowupTrend(format!("{} samples, need at least {MIN_SAMPLES}", samples.len())));
    }
    if samples.iter().any(|&(t, s)| !t.is_finite() || !(s > T::zero()) || !s.is_finite()) {
        return Err(Error::InvalidArgument("sup-norm samples must be finite and positive".into()));
    }
    let ten = T::lit(10.0);
    let first_min = samples.iter().map(|s| s.1).fold(T::infinity(), T::min);
    let (t_last, sup_last) = *samples.last().unwrap();
    let top = sup_last / ten.powi(decades_back as i32);
    // Relative slack so that exactly tenfold growth passes despite rounding.
    let need = ten * first_min * (T::one() - T::lit(1e-9));
    if !(sup_last >= need) || !(top >= need) {
        return Err(Error::NoBlowupTrend(format!(
            "sup-norm grew from {first_min} to {sup_last}, need a factor of at least 10 per fitted decade"
        )));
    }
    let bottom = top / ten * (T::one() - T::lit(1e-9));
    // Contiguous tail ending at the last sample with sup ≤ top, cut where sup first drops below bottom.
    let end = samples.iter().rposition(|s| s.1 <= top).unwrap();
    let mut start = end;
    while start > 0 && samples[start - 1].1 >= bottom {
        start -= 1;
    }
    let window = &samples[start..=end];
    if window.len() < MIN_SAMPLES {
        return Err(Error::NoBlowupTrend(format!("only {} samples in the fit window", window.len())));
    }
    let m = T::from_usize_lossy(window.len());
    let mt = window.iter().map(|s| s.0).sum::<T>() / m;
    let my = window.iter().map(|s| T::one() / s.1).sum::<T>() / m;
    let sxx: T = window.iter().map(|s| (s.0 - mt) * (s.0 - mt)).sum();
    let sxy: T = window.iter().map(|s| (s.0 - mt) * (T::one() / s.1 - my)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::InvalidEstimate("fit window has no time extent".into()));
    }
    let slope = sxy / sxx;
    if !(slope < T::zero()) {
        return Err(Error::NoBlowupTrend("1/sup is not decreasing over the fit window".into()));
    }
    let intercept = my - slope * mt;
    let t_hat = -intercept / slope;
    let rss: T = window.iter().map(|s| (T::one() / s.1 - (intercept + slope * s.0)).powi(2)).sum();
    let fit_residual = (rss / m).sqrt() / my;
    if !(t_hat > t_last) || !t_hat.is_finite() {
        return Err(Error::InvalidEstimate(format!("extrapolated T̂ = {t_hat} does not exceed the last sample t = {t_last}")));
    }
    Ok(BlowupEstimate { t_hat, fit_window: (window[0].0, window[window.len() - 1].0), fit_residual, rate: -slope })
}
