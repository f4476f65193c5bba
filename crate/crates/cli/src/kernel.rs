use std::fmt;
use std::str::FromStr;

use deltamem_core::kernels::KernelSpec;

use crate::error::CliError;

/// Kernel names accepted on the command line. Each command accepts a subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelName {
    Linear,
    Exp,
    Relu,
    Solu,
    Round,
    Softmax,
    SoftmaxZ,
}

impl KernelName {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelName::Linear => "linear",
            KernelName::Exp => "exp",
            KernelName::Relu => "relu",
            KernelName::Solu => "solu",
            KernelName::Round => "round",
            KernelName::Softmax => "softmax",
            KernelName::SoftmaxZ => "softmaxz",
        }
    }

    pub fn require(self, flag: &str, allowed: &[KernelName]) -> Result<Self, CliError> {
        if allowed.contains(&self) {
            Ok(self)
        } else {
            let names: Vec<_> = allowed.iter().map(|k| k.as_str()).collect();
            Err(CliError::Usage(format!(
                "--{flag} {} is not supported here; expected one of {}",
                self.as_str(),
                names.join(", ")
            )))
        }
    }

    /// `tau` applies to exp and solu; `decimals` to round.
    pub fn spec(self, tau: Option<f64>, decimals: i32) -> KernelSpec {
        match self {
            KernelName::Linear => KernelSpec::Linear,
            KernelName::Exp => KernelSpec::Exp { tau },
            KernelName::Relu => KernelSpec::Relu,
            KernelName::Solu => KernelSpec::Solu { tau },
            KernelName::Round => KernelSpec::Round { decimals },
            KernelName::Softmax | KernelName::SoftmaxZ => KernelSpec::SoftmaxRow { tau },
        }
    }
}

impl FromStr for KernelName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "linear" => KernelName::Linear,
            "exp" => KernelName::Exp,
            "relu" => KernelName::Relu,
            "solu" => KernelName::Solu,
            "round" => KernelName::Round,
            "softmax" => KernelName::Softmax,
            "softmaxz" => KernelName::SoftmaxZ,
            other => return Err(format!("unknown kernel {other:?}")),
        })
    }
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
