//! Shipped scenarios, one per experiment.

use anyhow::{bail, Result};

pub const NAMES: [&str; 5] = ["subcritical-neumann", "subcritical-dirichlet", "supercritical-radial", "two-bump", "envelope-study"];

/// Below the Neumann threshold: λ = 0.9·4π.
const SUBCRITICAL_NEUMANN: &str = "\
domain = square
n = 64
model = neumann
initial = gaussian
width = 0.1
lambda = 11.309733552923255
t_end = 10
sample_every = 200
snapshot_every = 50000
";

const SUBCRITICAL_DIRICHLET: &str = "\
domain = square
n = 64
model = dirichlet
initial = gaussian
width = 0.1
lambda = 4
max_steps = 1000
sample_every = 10
snapshot_every = 500
";

/// λ = 10π concentrated at the origin, Δr = 0.5/16384.
const SUPERCRITICAL_RADIAL: &str = "\
domain = radial-disk
n = 16384
length = 0.5
model = dirichlet
initial = gaussian
width = 0.03
lambda = 31.41592653589793
oracle_kappa = 0.005
oracle_dt_max = 0.001
density_growth_cap = 10000
sample_every = 20
snapshot_growth = 1.25
";

/// Two separated bumps of 24π each. Both collapse in place before their
/// mutual attraction moves them, and the cap stops the run while the grid
/// still resolves the growth.
const TWO_BUMP: &str = "\
domain = square
n = 128
model = dirichlet
initial = two-bumps
centers = 0.3,0.5;0.7,0.5
width = 0.07
lambda = 150.79644737231007
density_growth_cap = 15
sample_every = 5
snapshot_growth = 1.2
";

/// The radial run with denser snapshots for the rescaled frames.
const ENVELOPE_STUDY: &str = "\
domain = radial-disk
n = 16384
length = 0.5
model = dirichlet
initial = gaussian
width = 0.03
lambda = 31.41592653589793
oracle_kappa = 0.005
oracle_dt_max = 0.001
density_growth_cap = 10000
sample_every = 20
snapshot_growth = 1.1
";

pub fn text(name: &str) -> Result<&'static str> {
    Ok(match name {
        "subcritical-neumann" => SUBCRITICAL_NEUMANN,
        "subcritical-dirichlet" => SUBCRITICAL_DIRICHLET,
        "supercritical-radial" => SUPERCRITICAL_RADIAL,
        "two-bump" => TWO_BUMP,
        "envelope-study" => ENVELOPE_STUDY,
        other => bail!("unknown preset `{other}` (known: {})", NAMES.join(", ")),
    })
}
