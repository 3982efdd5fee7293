//! End-to-end orchestration of one session with optional adversary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    eve_impersonate, eve_intercept, eve_relay_stage3, EveKnowledge, EveMode, EveStrategy,
};
use crate::channel::{attenuate, Pulse, SourceModel, Stage};
use crate::message::BitString;
use crate::quantum::Rotation;

use super::auth::{publish_hash_with, verify_hash, DigestAlgorithm, HashCheck};
use super::transcript::{Decision, SessionTranscript, TranscriptEvent};
use super::{
    alice_stage1, alice_stage3, bob_finalize, bob_stage2, DetectionRule, PartyConfig,
    ProtocolError, StageOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HashTiming {
    #[default]
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashPolicy {
    /// Verify on every session; otherwise only when Eve impersonates.
    pub always: bool,
    pub timing: HashTiming,
    pub algorithm: DigestAlgorithm,
}

impl Default for HashPolicy {
    fn default() -> Self {
        Self {
            always: true,
            timing: HashTiming::Before,
            algorithm: DigestAlgorithm::Sha256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub source: SourceModel,
    pub alice: PartyConfig,
    pub bob: PartyConfig,
    pub rule: DetectionRule,
    pub eve: EveStrategy,
    /// Eve's own rotation when she impersonates Alice.
    pub eve_rotation: Rotation,
    pub hash: HashPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub transcript: SessionTranscript,
    /// Present when Eve siphoned.
    pub eve: Option<EveKnowledge>,
}

struct Runner<'a, R: Rng + ?Sized> {
    cfg: &'a SessionConfig,
    rng: &'a mut R,
    t: SessionTranscript,
    knowledge: Option<EveKnowledge>,
}

impl<R: Rng + ?Sized> Runner<'_, R> {
    fn event(&mut self, stage: Stage, decision: Decision) {
        self.t
            .push(TranscriptEvent::session(self.t.session_id, stage, decision));
    }

    fn readings(&mut self, out: &StageOutput) {
        let id = self.t.session_id;
        for (i, (r, &a)) in out.readings.iter().zip(&out.alarms).enumerate() {
            self.t.push(TranscriptEvent::reading(id, i, r, a));
        }
    }

    /// One leg of the channel: Eve at the sender's exit, then benign loss.
    fn hop(&mut self, train: Vec<Pulse>, stage: Stage) -> Vec<Pulse> {
        let train = match &mut self.knowledge {
            Some(k) => {
                let (fwd, captured) = eve_intercept(train, stage, &self.cfg.eve, self.rng)
                    .expect("siphon strategy validated before the session");
                k.absorb(stage, &captured, self.rng);
                let id = self.t.session_id;
                for (i, c) in captured.iter().enumerate() {
                    self.t.push(TranscriptEvent {
                        session_id: id,
                        bit_index: Some(i),
                        stage,
                        consumed: c.photon_count,
                        forwarded: fwd[i].photon_count,
                        expected: None,
                        alarm: false,
                        decision: Decision::EveCapture,
                    });
                }
                fwd
            }
            None => train,
        };
        train
            .iter()
            .map(|p| attenuate(p, &self.cfg.source, self.rng))
            .collect()
    }

    fn abort(&mut self, err: ProtocolError) -> Result<(), ProtocolError> {
        match err {
            ProtocolError::Aborted(sig) => {
                let id = self.t.session_id;
                for (i, (r, &a)) in sig.readings.iter().zip(&sig.alarms).enumerate() {
                    self.t.push(TranscriptEvent::reading(id, i, r, a));
                }
                self.event(sig.stage, Decision::Abort);
                self.t.aborted = Some(sig.stage);
                Ok(())
            }
            other => Err(other),
        }
    }

    fn run(&mut self, message: &BitString) -> Result<(), ProtocolError> {
        let cfg = self.cfg;
        let impersonating = cfg.eve.mode == EveMode::Impersonate;
        let auth = publish_hash_with(message, cfg.hash.algorithm);
        if cfg.hash.timing == HashTiming::Before {
            self.event(Stage::S1, Decision::HashPublished);
        }

        let s1 = if impersonating {
            let eve = PartyConfig::new(cfg.eve_rotation, cfg.alice.tap_budget);
            eve_impersonate(&cfg.eve, &eve, &cfg.source, self.rng)
                .expect("impersonation strategy carries substitute bits")
        } else {
            alice_stage1(message, &cfg.alice, &cfg.source, self.rng)?
        };
        let s1 = self.hop(s1, Stage::S1);

        let s2 = match bob_stage2(s1, &cfg.bob, &cfg.rule) {
            Ok(out) => out,
            Err(e) => return self.abort(e),
        };
        self.readings(&s2);
        let s2 = self.hop(s2.train, Stage::S2);

        let s3 = if impersonating {
            let eve = PartyConfig::new(cfg.eve_rotation, cfg.alice.tap_budget);
            let (train, readings) = eve_relay_stage3(s2, &eve);
            let id = self.t.session_id;
            for (i, r) in readings.iter().enumerate() {
                let mut e = TranscriptEvent::reading(id, i, r, false);
                e.expected = None;
                e.decision = Decision::EveRelay;
                self.t.push(e);
            }
            train
        } else {
            let out = match alice_stage3(s2, &cfg.alice, &cfg.rule) {
                Ok(out) => out,
                Err(e) => return self.abort(e),
            };
            self.readings(&out.output);
            if out.continue_low_power {
                self.event(Stage::S3, Decision::ContinueLowPower);
            }
            out.output.train
        };
        let s3 = self.hop(s3, Stage::S3);

        let fin = match bob_finalize(s3, &cfg.bob, &cfg.rule, self.rng) {
            Ok(f) => f,
            Err(e) => return self.abort(e),
        };
        let id = self.t.session_id;
        for (i, (r, &a)) in fin.readings.iter().zip(&fin.alarms).enumerate() {
            self.t.push(TranscriptEvent::reading(id, i, r, a));
        }
        match fin.decoded {
            Ok(bits) => {
                for (i, &b) in bits.bits().iter().enumerate() {
                    let mut e = TranscriptEvent::session(
                        id,
                        Stage::Final,
                        if b {
                            Decision::Decoded1
                        } else {
                            Decision::Decoded0
                        },
                    );
                    e.bit_index = Some(i);
                    e.consumed = fin.outcomes[i].total();
                    self.t.push(e);
                }
                if cfg.hash.timing == HashTiming::After {
                    self.event(Stage::Final, Decision::HashPublished);
                }
                if cfg.hash.always || impersonating {
                    let check = verify_hash(&bits, &auth).expect("digest algorithm is known");
                    self.t.hash_check = check;
                    self.event(
                        Stage::Final,
                        if check == HashCheck::Match {
                            Decision::HashMatch
                        } else {
                            Decision::HashMismatch
                        },
                    );
                }
                self.t.decoded_bits = Some(bits);
            }
            Err(err) => {
                let mut e = TranscriptEvent::session(id, Stage::Final, Decision::DecodeError);
                e.bit_index = Some(err.index);
                self.t.push(e);
                self.t.decode_error = Some(err);
            }
        }
        Ok(())
    }
}

/// Runs stages 1 → 2 → 3 → finalize with Eve injected between hops.
///
/// Stage aborts end up in `transcript.aborted`; only malformed input is an error.
pub fn run_session<R: Rng + ?Sized>(
    session_id: u64,
    message: &BitString,
    cfg: &SessionConfig,
    rng: &mut R,
) -> Result<SessionOutcome, ProtocolError> {
    if message.is_empty() {
        return Err(ProtocolError::EmptyMessage);
    }
    cfg.eve.validate()?;
    let knowledge = (cfg.eve.mode == EveMode::Siphon).then(|| EveKnowledge::new(message.len()));
    let mut runner = Runner {
        cfg,
        rng,
        t: SessionTranscript::new(session_id),
        knowledge,
    };
    runner.run(message)?;
    Ok(SessionOutcome {
        transcript: runner.t,
        eve: runner.knowledge,
    })
}
