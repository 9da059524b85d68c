//! Named source/target pairs and training-scale profiles used by the CLI
//! and the test suites.

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::hrf::TrainConfig;

/// Component std of the two-mode 1D target.
pub const TWO_MODE_STD: f64 = 0.14;

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub source: DistributionSpec,
    pub target: DistributionSpec,
}

/// `0.5 N(-1, s^2) + 0.5 N(1, s^2)` with `s = TWO_MODE_STD`.
pub fn two_modes() -> DistributionSpec {
    DistributionSpec::mixture_1d(&[0.5, 0.5], &[-1.0, 1.0], &[TWO_MODE_STD, TWO_MODE_STD])
}

/// Five equal-weight modes at -4, -2, 0, 2, 4 with std 0.2.
pub fn five_modes() -> DistributionSpec {
    DistributionSpec::mixture_1d(&[0.2; 5], &[-4.0, -2.0, 0.0, 2.0, 4.0], &[0.2; 5])
}

pub const NAMES: &[&str] = &["1n-2n", "2n-2n", "1n-5n", "1n-6n", "8n-moons"];

pub fn by_name(name: &str) -> Result<Fixture> {
    let g1 = DistributionSpec::gaussian(1);
    let g2 = DistributionSpec::gaussian(2);
    let (name, source, target) = match name {
        "1n-2n" => ("1n-2n", g1, two_modes()),
        "2n-2n" => ("2n-2n", two_modes(), two_modes()),
        "1n-5n" => ("1n-5n", g1, five_modes()),
        "1n-6n" => (
            "1n-6n",
            g2,
            DistributionSpec::GaussianRing {
                count: 6,
                radius: 4.0,
                component_std: 0.4,
            },
        ),
        "8n-moons" => (
            "8n-moons",
            DistributionSpec::GaussianRing {
                count: 8,
                radius: 4.0,
                component_std: 0.4,
            },
            DistributionSpec::Moons { noise_std: 0.1 },
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown fixture '{other}', expected one of {}",
                NAMES.join(", ")
            )))
        }
    };
    Ok(Fixture { name, source, target })
}

/// Training scale presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 4000 iterations at batch 4096.
    #[default]
    Desk,
    /// 15000 iterations at batch 51200.
    Full,
}

impl Profile {
    pub fn iterations(self) -> usize {
        match self {
            Profile::Desk => 4000,
            Profile::Full => 15_000,
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Profile::Desk => 4096,
            Profile::Full => 51_200,
        }
    }

    pub fn train_config(self, fixture: &Fixture, depth: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(depth, fixture.target.clone());
        cfg.source = Some(fixture.source.clone());
        cfg.iterations = self.iterations();
        cfg.batch_size = self.batch_size();
        cfg
    }
}
