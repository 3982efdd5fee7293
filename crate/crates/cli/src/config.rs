//! Scenario file format.
//!
//! ```toml
//! message = "0xC0FFEE"          # hex, or a string of 0/1
//! seed = 42                     # optional; --seed and K06_SEED take priority
//!
//! [source]
//! mu = 1000.0
//! attenuation = 1.0             # per-hop transmission, (0, 1]
//!
//! [monitor]
//! tap_budget = 250              # default round(mu / 4)
//! z_threshold = 5.0
//! bob_stage2_check = true
//! policy = "abort"              # or "record"
//! abort_after = 1               # alarms at one stage before aborting
//! hash = "always"               # or "on_impersonation"
//! hash_timing = "before"        # or "after"
//! hash_algorithm = "sha256"     # or "sha512"
//! eve_read_floor = 40           # default: photons Eve needs for 0.1 rad RMSE
//!
//! [eve]
//! mode = "siphon"               # "none", "siphon" or "impersonate"
//! fraction = 0.25               # or count = 100
//! stages = ["S1", "S2", "S3"]
//! substitute = "0xBAD"          # impersonate only
//!
//! [secrets]                     # optional, radians; drawn from the seed otherwise
//! alice = 0.5
//! bob = 1.25
//! eve = 2.0
//!
//! [output]
//! transcript = "transcript.csv"
//! ```

use std::path::PathBuf;

use k06_core::adversary::{EveStrategy, SiphonAmount, HOPS};
use k06_core::protocol::auth::DigestAlgorithm;
use k06_core::protocol::{
    nominal_tap_budget, AlarmPolicy, DetectionRule, HashPolicy, HashTiming, PartyConfig,
    SessionConfig,
};
use k06_core::rng::SimRng;
use k06_core::{BitString, Rotation, SourceModel, Stage};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub message: BitString,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub source: SourceSection,
    #[serde(default)]
    pub monitor: MonitorSection,
    #[serde(default)]
    pub eve: EveSection,
    #[serde(default, skip_serializing_if = "SecretsSection::is_empty")]
    pub secrets: SecretsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn five() -> f64 {
    5.0
}
fn yes() -> bool {
    true
}
fn one_alarm() -> usize {
    1
}
fn sha256() -> String {
    DigestAlgorithm::default().id().to_owned()
}
fn all_hops() -> Vec<Stage> {
    HOPS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub mu: f64,
    #[serde(default = "one")]
    pub attenuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    #[default]
    Abort,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashWhen {
    #[default]
    Always,
    OnImpersonation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_budget: Option<u64>,
    #[serde(default = "five")]
    pub z_threshold: f64,
    #[serde(default = "yes")]
    pub bob_stage2_check: bool,
    #[serde(default)]
    pub policy: PolicyName,
    #[serde(default = "one_alarm")]
    pub abort_after: usize,
    #[serde(default)]
    pub hash: HashWhen,
    #[serde(default)]
    pub hash_timing: HashTiming,
    #[serde(default = "sha256")]
    pub hash_algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve_read_floor: Option<u64>,
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            tap_budget: None,
            z_threshold: five(),
            bob_stage2_check: true,
            policy: PolicyName::default(),
            abort_after: one_alarm(),
            hash: HashWhen::default(),
            hash_timing: HashTiming::default(),
            hash_algorithm: sha256(),
            eve_read_floor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EveModeName {
    #[default]
    None,
    Siphon,
    Impersonate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveSection {
    #[serde(default)]
    pub mode: EveModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default = "all_hops")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitute: Option<BitString>,
}

impl Default for EveSection {
    fn default() -> Self {
        Self {
            mode: EveModeName::None,
            fraction: None,
            count: None,
            stages: all_hops(),
            substitute: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecretsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve: Option<f64>,
}

impl SecretsSection {
    fn is_empty(&self) -> bool {
        self.alice.is_none() && self.bob.is_none() && self.eve.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

fn domain(msg: impl Into<String>) -> CliError {
    CliError::Domain(msg.into())
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Parse(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn source(&self) -> Result<SourceModel, CliError> {
        SourceModel::new(self.source.mu, self.source.attenuation).map_err(|e| domain(e.to_string()))
    }

    pub fn tap_budget(&self) -> Result<u64, CliError> {
        Ok(self
            .monitor
            .tap_budget
            .unwrap_or(nominal_tap_budget(&self.source()?)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.message.is_empty() {
            return Err(domain("message must contain at least one bit"));
        }
        let src = self.source()?;
        let m = &self.monitor;
        if m.tap_budget.is_some_and(|t| t as f64 > src.mean_photons()) {
            return Err(domain(format!(
                "tap_budget {} exceeds mu {}",
                self.tap_budget()?,
                self.source.mu
            )));
        }
        if m.z_threshold.is_nan() || m.z_threshold < 0.0 {
            return Err(domain(format!(
                "z_threshold must be non-negative, got {}",
                m.z_threshold
            )));
        }
        if m.abort_after == 0 {
            return Err(domain("abort_after must be at least 1"));
        }
        DigestAlgorithm::from_id(&m.hash_algorithm).map_err(|e| domain(e.to_string()))?;

        let e = &self.eve;
        match e.mode {
            EveModeName::Siphon => {
                if e.fraction.is_some() == e.count.is_some() {
                    return Err(domain(
                        "siphon needs exactly one of eve.fraction and eve.count",
                    ));
                }
                if let Some(f) = e.fraction.filter(|f| !(0.0..=1.0).contains(f)) {
                    return Err(domain(format!("eve.fraction must lie in [0, 1], got {f}")));
                }
                if e.stages.is_empty() {
                    return Err(domain("eve.stages must name at least one leg"));
                }
                if let Some(s) = e.stages.iter().find(|s| !HOPS.contains(s)) {
                    return Err(domain(format!(
                        "eve.stages: {s} is not a leg Eve can sit on"
                    )));
                }
            }
            EveModeName::Impersonate => {
                if e.substitute.as_ref().is_none_or(|b| b.is_empty()) {
                    return Err(domain("impersonate needs a non-empty eve.substitute"));
                }
            }
            EveModeName::None => {}
        }
        if e.mode != EveModeName::Siphon && (e.fraction.is_some() || e.count.is_some()) {
            return Err(domain(
                "eve.fraction and eve.count apply only to mode = \"siphon\"",
            ));
        }
        if e.mode != EveModeName::Impersonate && e.substitute.is_some() {
            return Err(domain(
                "eve.substitute applies only to mode = \"impersonate\"",
            ));
        }
        for (name, v) in [
            ("alice", self.secrets.alice),
            ("bob", self.secrets.bob),
            ("eve", self.secrets.eve),
        ] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(domain(format!("secrets.{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn strategy(&self) -> EveStrategy {
        let e = &self.eve;
        match e.mode {
            EveModeName::None => EveStrategy::none(),
            EveModeName::Siphon => {
                let amount = match (e.fraction, e.count) {
                    (Some(f), _) => SiphonAmount::Fraction(f),
                    (None, n) => SiphonAmount::Count(n.unwrap_or(0)),
                };
                EveStrategy::siphon(e.stages.iter().map(|&s| (s, amount)))
            }
            EveModeName::Impersonate => EveStrategy::impersonate(
                e.substitute
                    .clone()
                    .unwrap_or_else(|| BitString::new(vec![])),
            ),
        }
    }

    /// The full session setup. Secret rotations not fixed in the file are
    /// drawn from `rng`, so the same seed gives the same secrets.
    pub fn session_config(
        &self,
        read_floor: Option<u64>,
        rng: &mut SimRng,
    ) -> Result<SessionConfig, CliError> {
        let src = self.source()?;
        let tap = self.tap_budget()?;
        let m = &self.monitor;
        let mut checked = vec![Stage::S3, Stage::Final];
        if m.bob_stage2_check {
            checked.push(Stage::S2);
        }
        let policy = match m.policy {
            PolicyName::Abort => AlarmPolicy::AbortAfter(m.abort_after),
            PolicyName::Record => AlarmPolicy::RecordOnly,
        };
        let rule = DetectionRule::from_ledger(&src, tap, m.z_threshold)
            .and_then(|r| r.with_policy(policy))
            .map_err(|e| domain(e.to_string()))?
            .with_checked(checked)
            .with_read_floor(m.eve_read_floor.or(read_floor));
        let mut secret = |fixed: Option<f64>| {
            fixed
                .map(Rotation::new)
                .unwrap_or_else(|| Rotation::random(rng))
        };
        let alice = secret(self.secrets.alice);
        let bob = secret(self.secrets.bob);
        let eve = secret(self.secrets.eve);
        Ok(SessionConfig {
            source: src,
            alice: PartyConfig::new(alice, tap),
            bob: PartyConfig::new(bob, tap),
            rule,
            eve: self.strategy(),
            eve_rotation: eve,
            hash: HashPolicy {
                always: m.hash == HashWhen::Always,
                timing: m.hash_timing,
                algorithm: DigestAlgorithm::from_id(&m.hash_algorithm)
                    .map_err(|e| domain(e.to_string()))?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
message = "0xC0FFEE"
seed = 9

[source]
mu = 1000.0
attenuation = 0.95

[monitor]
tap_budget = 200
z_threshold = 4.5
bob_stage2_check = false
policy = "record"
abort_after = 3
hash = "on_impersonation"
hash_timing = "after"
hash_algorithm = "sha512"
eve_read_floor = 40

[eve]
mode = "siphon"
count = 12
stages = ["S1", "S3"]

[secrets]
alice = 0.5
bob = 1.25

[output]
transcript = "out.csv"
"#;

    #[test]
    fn full_config_round_trips() {
        let cfg = ScenarioConfig::parse(FULL).unwrap();
        assert_eq!(cfg.message.len(), 24);
        assert_eq!(cfg.monitor.policy, PolicyName::Record);
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::parse("message = \"101\"\n[source]\nmu = 1000.0\n").unwrap();
        assert_eq!(cfg.tap_budget().unwrap(), 250);
        assert_eq!(cfg.monitor.z_threshold, 5.0);
        assert_eq!(cfg.eve.mode, EveModeName::None);
        assert_eq!(ScenarioConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let e = ScenarioConfig::parse("message = \"1\"\nmu = 3.0\n[source]\nmu = 1000.0\n")
            .unwrap_err();
        assert!(matches!(e, CliError::Parse(_)), "{e}");
        let e = ScenarioConfig::parse("message = \"1\"\n[source]\nmu = 1000.0\nlambda = 1\n")
            .unwrap_err();
        assert!(matches!(e, CliError::Parse(_)), "{e}");
        let e = ScenarioConfig::parse("message = \"12\"\n[source]\nmu = 1000.0\n").unwrap_err();
        assert!(matches!(e, CliError::Parse(_)), "{e}");
    }

    #[test]
    fn out_of_range_values_are_domain_errors() {
        let base = "message = \"1\"\n[source]\n";
        for body in [
            "mu = -1.0\n",
            "mu = 1000.0\nattenuation = 1.5\n",
            "mu = 1000.0\n[monitor]\nz_threshold = -1.0\n",
            "mu = 1000.0\n[monitor]\nabort_after = 0\n",
            "mu = 1000.0\n[monitor]\ntap_budget = 2000\n",
            "mu = 1000.0\n[monitor]\nhash_algorithm = \"md5\"\n",
            "mu = 1000.0\n[eve]\nmode = \"siphon\"\nfraction = 1.5\n",
            "mu = 1000.0\n[eve]\nmode = \"siphon\"\n",
            "mu = 1000.0\n[eve]\nmode = \"siphon\"\ncount = 3\nstages = [\"FINAL\"]\n",
            "mu = 1000.0\n[eve]\nmode = \"impersonate\"\n",
            "mu = 1000.0\n[eve]\ncount = 3\n",
        ] {
            let e = ScenarioConfig::parse(&format!("{base}{body}")).unwrap_err();
            assert!(matches!(e, CliError::Domain(_)), "{body}: {e}");
        }
        let e = ScenarioConfig::parse("message = \"\"\n[source]\nmu = 1000.0\n").unwrap_err();
        assert!(matches!(e, CliError::Domain(_)));
    }

    #[test]
    fn secrets_come_from_the_seed_unless_fixed() {
        let cfg = ScenarioConfig::parse(FULL).unwrap();
        let a = cfg
            .session_config(None, &mut k06_core::rng::from_seed(1))
            .unwrap();
        let b = cfg
            .session_config(None, &mut k06_core::rng::from_seed(2))
            .unwrap();
        assert_eq!(a.alice.secret_rotation, Rotation::new(0.5));
        assert_eq!(a.alice, b.alice);
        assert_ne!(a.eve_rotation, b.eve_rotation);
        assert!(!a.rule.is_checked(Stage::S2));
        assert_eq!(a.rule.eve_read_floor(), Some(40));
    }
}
