use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const HBAR_SI: f64 = 1.054_571_817e-34;
pub const C_SI: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub c: f64,
    pub description: String,
}

impl UnitSystem {
    pub fn new(hbar: f64, c: f64, description: impl Into<String>) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!(
                "unit system needs hbar > 0 and c > 0, got hbar={hbar}, c={c}"
            )));
        }
        Ok(Self {
            hbar,
            c,
            description: description.into(),
        })
    }

    pub fn natural() -> Self {
        Self {
            hbar: 1.0,
            c: 1.0,
            description: "natural (hbar = c = 1)".into(),
        }
    }

    pub fn si() -> Self {
        Self {
            hbar: HBAR_SI,
            c: C_SI,
            description: "SI".into(),
        }
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::natural()
    }
}
