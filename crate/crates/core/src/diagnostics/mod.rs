//! Observables of a run: free energy and dissipation, blowup-time
//! extrapolation, collapse balls with their quantization verdicts, and
//! circular averages.

mod blowup;
mod collapse;
mod energy;
mod radial;

pub use blowup::{estimate_blowup_time, estimate_blowup_time_back, BlowupEstimate, MIN_SAMPLES};
pub use collapse::{detect_collapses, detect_collapses_at_scale, mass_window_sweep, CollapseBall, CollapseConfig, CollapseReport};
pub use energy::{energy_of, energy_trend_check, free_energy, free_energy_radial, EnergyRecord, TrendVerdict, TREND_TOLERANCE, U_FLOOR};
pub use radial::{radial_average, shell_mass, AVERAGE_ANGLES};
