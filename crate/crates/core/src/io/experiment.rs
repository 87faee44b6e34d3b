use std::fmt;
use std::str::FromStr;

use crate::fedrl::FedTopology;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    ScbcV0,
    ScbcV1,
    ScbcV2,
    RceV0,
    Rce17V0,
    EbmV0,
    EbmV1,
    EbmV2,
    EbmV3,
}

impl EnvName {
    pub const ALL: [EnvName; 9] = [
        EnvName::ScbcV0,
        EnvName::ScbcV1,
        EnvName::ScbcV2,
        EnvName::RceV0,
        EnvName::Rce17V0,
        EnvName::EbmV0,
        EnvName::EbmV1,
        EnvName::EbmV2,
        EnvName::EbmV3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvName::ScbcV0 => "scbc-v0",
            EnvName::ScbcV1 => "scbc-v1",
            EnvName::ScbcV2 => "scbc-v2",
            EnvName::RceV0 => "rce-v0",
            EnvName::Rce17V0 => "rce17-v0",
            EnvName::EbmV0 => "ebm-v0",
            EnvName::EbmV1 => "ebm-v1",
            EnvName::EbmV2 => "ebm-v2",
            EnvName::EbmV3 => "ebm-v3",
        }
    }

    pub fn family(self) -> Family {
        match self {
            EnvName::ScbcV0 | EnvName::ScbcV1 | EnvName::ScbcV2 => Family::Scbc,
            EnvName::RceV0 | EnvName::Rce17V0 => Family::Rce,
            _ => Family::Ebm,
        }
    }

    pub fn topology(self) -> Option<FedTopology> {
        match self {
            EnvName::EbmV2 => Some(FedTopology::V2),
            EnvName::EbmV3 => Some(FedTopology::V3),
            _ => None,
        }
    }

    pub fn episode_length(self) -> usize {
        match self.family() {
            Family::Scbc => crate::scbc::EPISODE_LENGTH,
            Family::Rce => crate::rce::EPISODE_LENGTH,
            Family::Ebm => crate::ebm::EPISODE_LENGTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Scbc,
    Rce,
    Ebm,
}

impl Family {
    /// Steps of the short and the extended budget.
    pub fn budgets(self) -> (usize, usize) {
        match self {
            Family::Scbc => (2_000, 60_000),
            Family::Rce => (5_000, 10_000),
            Family::Ebm => (10_000, 20_000),
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Family::Scbc => "60k",
            Family::Rce => "10k",
            Family::Ebm => "20k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Per-environment network sizes.
    OptimL,
    /// 64 units in every hidden layer.
    Homo64L,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::OptimL => "optim-L",
            Arch::Homo64L => "homo-64L",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FedMode {
    Fed05,
    Fed10,
    NoFed,
}

impl FedMode {
    pub fn name(self) -> &'static str {
        match self {
            FedMode::Fed05 => "fed05",
            FedMode::Fed10 => "fed10",
            FedMode::NoFed => "nofed",
        }
    }

    /// Episodes between synchronisations.
    pub fn period(self) -> Option<usize> {
        match self {
            FedMode::Fed05 => Some(5),
            FedMode::Fed10 => Some(10),
            FedMode::NoFed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FedSpec {
    pub n_agents: usize,
    pub mode: FedMode,
}

/// Parsed experiment code such as `ebm-v2-optim-L-20k-a6-fed05`. The
/// architecture may be omitted (it defaults to `optim-L`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExperimentId {
    pub env: EnvName,
    pub arch: Arch,
    pub extended: bool,
    pub fed: Option<FedSpec>,
}

impl ExperimentId {
    pub fn total_steps(&self) -> usize {
        let (short, long) = self.env.family().budgets();
        if self.extended {
            long
        } else {
            short
        }
    }
}

fn strip<'a>(rest: &'a str, token: &str) -> Option<&'a str> {
    rest.strip_prefix('-')?
        .strip_prefix(token)
        .filter(|r| r.is_empty() || r.starts_with('-'))
}

pub fn parse_experiment_id(id: &str) -> Result<ExperimentId> {
    let fail = |reason: &str| Error::ExperimentId {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    let env = EnvName::ALL
        .into_iter()
        .filter(|e| id == e.name() || id.starts_with(&format!("{}-", e.name())))
        .max_by_key(|e| e.name().len())
        .ok_or_else(|| fail("unknown environment"))?;
    let mut rest = &id[env.name().len()..];

    let mut arch = Arch::OptimL;
    for a in [Arch::OptimL, Arch::Homo64L] {
        if let Some(r) = strip(rest, a.name()) {
            arch = a;
            rest = r;
        }
    }
    let mut extended = false;
    for suffix in ["60k", "10k", "20k"] {
        if let Some(r) = strip(rest, suffix) {
            if suffix != env.family().suffix() {
                return Err(fail(&format!("budget {suffix} does not apply to {}", env.name())));
            }
            extended = true;
            rest = r;
        }
    }
    let mut n_agents = None;
    for (token, n) in [("a2", 2), ("a6", 6)] {
        if let Some(r) = strip(rest, token) {
            n_agents = Some(n);
            rest = r;
        }
    }
    let mut mode = None;
    for m in [FedMode::Fed05, FedMode::Fed10, FedMode::NoFed] {
        if let Some(r) = strip(rest, m.name()) {
            mode = Some(m);
            rest = r;
        }
    }
    if !rest.is_empty() {
        return Err(fail(&format!("unexpected `{}`", rest.trim_start_matches('-'))));
    }
    let fed = match (env.topology(), n_agents, mode) {
        (Some(_), Some(n_agents), Some(mode)) => Some(FedSpec { n_agents, mode }),
        (Some(_), _, _) => return Err(fail("federated environments need an agent count and a fed mode")),
        (None, None, None) => None,
        (None, _, _) => return Err(fail("agent and fed tokens only apply to ebm-v2 and ebm-v3")),
    };
    Ok(ExperimentId {
        env,
        arch,
        extended,
        fed,
    })
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_experiment_id(s)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.env.name(), self.arch.name())?;
        if self.extended {
            write!(f, "-{}", self.env.family().suffix())?;
        }
        if let Some(fed) = self.fed {
            write!(f, "-a{}-{}", fed.n_agents, fed.mode.name())?;
        }
        Ok(())
    }
}
