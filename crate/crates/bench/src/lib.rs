//! Shared inputs for the benchmarks.

use mvstack::{simulate, CvConfig, Dataset, Family, LevelPlan, SimSpec, Simulated};

/// The two-level simulation design at the given seed.
pub fn two_level(seed: u64) -> Simulated {
    simulate(&SimSpec::two_level(seed)).expect("valid preset")
}

/// A single view of the two-level design with a gaussian outcome.
pub fn gaussian_view(seed: u64) -> Dataset {
    let sim = simulate(&SimSpec {
        family: Family::Gaussian,
        signal: 1.0,
        ..SimSpec::two_level(seed)
    })
    .expect("valid preset");
    let rows: Vec<usize> = (0..sim.data.n()).collect();
    let cols: Vec<usize> = (0..45).collect();
    sim.data.subset(&rows, &cols)
}

pub fn quick_cv(seed: u64) -> CvConfig {
    CvConfig {
        k_outer: 5,
        k_lambda: 5,
        ..CvConfig::with_seed(seed)
    }
}

pub fn staplr() -> LevelPlan {
    LevelPlan::staplr(2)
}
