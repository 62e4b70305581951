use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::window::validate_lead_list;
use crate::error::{Error, Result};
use crate::leads::LeadLabel;

/// Which leads a model sees and which it reconstructs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub input_leads: Vec<LeadLabel>,
    pub output_leads: Vec<LeadLabel>,
}

impl ExperimentSpec {
    /// Spec that reconstructs every precordial lead not among `inputs`,
    /// in V1..V6 order.
    pub fn new(inputs: &[LeadLabel]) -> Result<Self> {
        let outputs: Vec<LeadLabel> = LeadLabel::PRECORDIAL
            .iter()
            .copied()
            .filter(|l| !inputs.contains(l))
            .collect();
        Self::with_outputs(inputs, &outputs)
    }

    /// Spec with explicit outputs; inputs and outputs must be disjoint.
    pub fn with_outputs(inputs: &[LeadLabel], outputs: &[LeadLabel]) -> Result<Self> {
        validate_lead_list(inputs)?;
        validate_lead_list(outputs)
            .map_err(|_| Error::InvalidExperiment("output lead list must be non-empty and distinct".into()))?;
        if let Some(l) = inputs.iter().find(|l| outputs.contains(l)) {
            return Err(Error::InvalidExperiment(format!("{l} is both an input and an output")));
        }
        Ok(Self {
            experiment_id: format_id(inputs),
            input_leads: inputs.to_vec(),
            output_leads: outputs.to_vec(),
        })
    }

    pub fn ch_in(&self) -> usize {
        self.input_leads.len()
    }

    pub fn ch_out(&self) -> usize {
        self.output_leads.len()
    }

    pub fn group(&self) -> Option<ExperimentGroup> {
        use LeadLabel::{I, II};
        let pre = self.input_leads.iter().filter(|l| l.is_precordial()).count();
        let limb: Vec<_> = self.input_leads.iter().filter(|l| !l.is_precordial()).copied().collect();
        match (limb.as_slice(), pre) {
            ([l], 0) if l.is_limb() => Some(ExperimentGroup::SingleLimb),
            ([I, II], 0) => Some(ExperimentGroup::LimbPair),
            ([I, II], 1) => Some(ExperimentGroup::PairPlusOne),
            ([I, II], 2) => Some(ExperimentGroup::PairPlusTwo),
            _ => None,
        }
    }

    /// Seed for this experiment derived from a shared global seed.
    pub fn derived_seed(&self, global: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(global.to_le_bytes());
        h.update(self.experiment_id.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

fn format_id(inputs: &[LeadLabel]) -> String {
    inputs.iter().map(|l| l.name()).collect::<Vec<_>>().join("+")
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.experiment_id)
    }
}

impl FromStr for ExperimentSpec {
    type Err = Error;

    /// Parses a `+`-joined input list such as `I+II+V2+V4`.
    fn from_str(s: &str) -> Result<Self> {
        let inputs = s
            .split('+')
            .map(str::parse::<LeadLabel>)
            .collect::<Result<Vec<_>>>()?;
        Self::new(&inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentGroup {
    /// {I}, {II}, {III}
    SingleLimb,
    /// {I, II}
    LimbPair,
    /// {I, II, Vx}
    PairPlusOne,
    /// {I, II, Vx, Vy}
    PairPlusTwo,
}

impl ExperimentGroup {
    pub const ALL: [ExperimentGroup; 4] = [
        ExperimentGroup::SingleLimb,
        ExperimentGroup::LimbPair,
        ExperimentGroup::PairPlusOne,
        ExperimentGroup::PairPlusTwo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentGroup::SingleLimb => "singles",
            ExperimentGroup::LimbPair => "pair",
            ExperimentGroup::PairPlusOne => "pair-plus-one",
            ExperimentGroup::PairPlusTwo => "pair-plus-two",
        }
    }

    pub fn table(self) -> TableGroup {
        match self {
            ExperimentGroup::PairPlusTwo => TableGroup::PairPlusTwo,
            _ => TableGroup::LimbAndOne,
        }
    }
}

impl FromStr for ExperimentGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown group {s:?} (expected singles, pair, pair-plus-one or pair-plus-two)")))
    }
}

/// The two summary tables: limb-only and limb+one-chest models together,
/// and the limb+two-chest models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableGroup {
    LimbAndOne,
    PairPlusTwo,
}

impl TableGroup {
    pub const ALL: [TableGroup; 2] = [TableGroup::LimbAndOne, TableGroup::PairPlusTwo];

    pub fn name(self) -> &'static str {
        match self {
            TableGroup::LimbAndOne => "limb-and-one-precordial",
            TableGroup::PairPlusTwo => "limb-and-two-precordial",
        }
    }
}

/// The 25 lead configurations, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentRegistry {
    specs: Vec<ExperimentSpec>,
}

impl ExperimentRegistry {
    pub fn specs(&self) -> &[ExperimentSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ExperimentSpec> {
        self.specs.iter().find(|s| s.experiment_id == id)
    }

    pub fn group(&self, group: ExperimentGroup) -> Vec<&ExperimentSpec> {
        self.specs.iter().filter(|s| s.group() == Some(group)).collect()
    }

    pub fn table_group(&self, group: TableGroup) -> Vec<&ExperimentSpec> {
        self.specs
            .iter()
            .filter(|s| s.group().map(ExperimentGroup::table) == Some(group))
            .collect()
    }
}

/// {I}, {II}, {III}; {I,II}; {I,II,Vx} for x in 1..=6; {I,II,Vx,Vy} for x < y.
pub fn enumerate_lead_configs() -> ExperimentRegistry {
    use LeadLabel::{I, II, III};
    let mut inputs: Vec<Vec<LeadLabel>> = vec![vec![I], vec![II], vec![III], vec![I, II]];
    for v in LeadLabel::PRECORDIAL {
        inputs.push(vec![I, II, v]);
    }
    for (a, va) in LeadLabel::PRECORDIAL.iter().enumerate() {
        for vb in &LeadLabel::PRECORDIAL[a + 1..] {
            inputs.push(vec![I, II, *va, *vb]);
        }
    }
    ExperimentRegistry {
        specs: inputs
            .iter()
            .map(|i| ExperimentSpec::new(i).expect("registry inputs are valid"))
            .collect(),
    }
}
