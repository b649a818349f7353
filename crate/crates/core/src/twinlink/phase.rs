//! Twin-side control phases and the recorded message trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twinlink::protocol::TwinMessage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinPhase {
    Bootstrapping,
    Navigating,
    DangerPaused,
    Retraining,
    Returning,
    Resuming,
    Done,
}

impl TwinPhase {
    pub fn can_transition_to(self, next: TwinPhase) -> bool {
        use TwinPhase::*;
        matches!(
            (self, next),
            (Bootstrapping, Navigating)
                | (Navigating, DangerPaused)
                | (Navigating, Done)
                | (DangerPaused, Retraining)
                | (Retraining, Returning)
                | (Returning, Resuming)
                | (Resuming, Navigating)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TwinPhase::Bootstrapping => "bootstrapping",
            TwinPhase::Navigating => "navigating",
            TwinPhase::DangerPaused => "danger_paused",
            TwinPhase::Retraining => "retraining",
            TwinPhase::Returning => "returning",
            TwinPhase::Resuming => "resuming",
            TwinPhase::Done => "done",
        }
    }

    /// Phases in which the physical robot must not be driven.
    pub fn is_frozen(self) -> bool {
        matches!(self, TwinPhase::DangerPaused | TwinPhase::Retraining)
    }
}

/// True when `phases` starts at `Bootstrapping` and every step is legal.
pub fn is_legal_path(phases: &[TwinPhase]) -> bool {
    phases.first() == Some(&TwinPhase::Bootstrapping) && phases.windows(2).all(|w| w[0].can_transition_to(w[1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Sent { phase: TwinPhase, msg: TwinMessage },
    Received { phase: TwinPhase, msg: TwinMessage },
    Phase { from: TwinPhase, to: TwinPhase },
}

/// Message and phase history of one twin session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn phases(&self) -> Vec<TwinPhase> {
        let mut out = vec![TwinPhase::Bootstrapping];
        for e in &self.entries {
            if let TraceEntry::Phase { to, .. } = e {
                out.push(*to);
            }
        }
        out
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { entries })
    }

    /// Checks the safety and ordering invariants of a recorded session:
    /// no motion command between a Pause and its Resume or in a frozen
    /// phase, a legal phase path, and strict request/response alternation.
    pub fn check(&self) -> Result<()> {
        let fail = |i: usize, what: String| Err(Error::Validation(format!("trace entry {i}: {what}")));
        let mut paused = false;
        let mut phase = TwinPhase::Bootstrapping;
        // replies still owed by the server for the last request
        let mut owed: Vec<&'static str> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            match e {
                TraceEntry::Phase { from, to } => {
                    if *from != phase || !from.can_transition_to(*to) {
                        return fail(i, format!("illegal transition {} -> {}", from.as_str(), to.as_str()));
                    }
                    phase = *to;
                }
                TraceEntry::Sent { phase: p, msg } => {
                    if *p != phase {
                        return fail(i, "phase label out of step".into());
                    }
                    if !owed.is_empty() {
                        return fail(i, format!("sent {} while awaiting {}", msg.tag(), owed[0]));
                    }
                    if msg.is_motion() && (paused || p.is_frozen()) {
                        return fail(i, "motion command while paused".into());
                    }
                    match msg {
                        TwinMessage::CmdVel { .. } => owed = vec!["scan", "status"],
                        TwinMessage::Pause => {
                            paused = true;
                            owed = vec!["status"];
                        }
                        TwinMessage::Resume => {
                            paused = false;
                            owed = vec!["status"];
                        }
                        TwinMessage::Bye => {}
                        other => return fail(i, format!("client sent {}", other.tag())),
                    }
                }
                TraceEntry::Received { msg, .. } => {
                    if owed.is_empty() || owed[0] != msg.tag() {
                        return fail(i, format!("unexpected {}", msg.tag()));
                    }
                    owed.remove(0);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TwinPhase::*;

    const ALL: [TwinPhase; 7] = [Bootstrapping, Navigating, DangerPaused, Retraining, Returning, Resuming, Done];

    #[test]
    fn transition_graph() {
        let legal: usize = ALL.iter().map(|a| ALL.iter().filter(|b| a.can_transition_to(**b)).count()).sum();
        assert_eq!(legal, 7);
        assert!(is_legal_path(&[Bootstrapping, Navigating, DangerPaused, Retraining, Returning, Resuming, Navigating, Done]));
        assert!(is_legal_path(&[Bootstrapping, Navigating, DangerPaused, Retraining]));
        assert!(!is_legal_path(&[Navigating, Done]));
        assert!(!is_legal_path(&[Bootstrapping, Navigating, DangerPaused, Navigating]));
        assert!(!Done.can_transition_to(Done));
    }

    fn sent(phase: TwinPhase, msg: TwinMessage) -> TraceEntry {
        TraceEntry::Sent { phase, msg }
    }

    fn recv(phase: TwinPhase, msg: TwinMessage) -> TraceEntry {
        TraceEntry::Received { phase, msg }
    }

    fn status() -> TwinMessage {
        TwinMessage::Status {
            event: crate::worldsim::StepEvent::None,
            pose: crate::worldsim::Pose::new(0.0, 0.0, 0.0),
            goal: crate::worldsim::Point2::new(1.0, 0.0),
        }
    }

    fn scan() -> TwinMessage {
        TwinMessage::Scan { pose: crate::worldsim::Pose::new(0.0, 0.0, 0.0), ranges: vec![None, None], angle_min: 0.0, angle_max: 1.0, max_range: 5.0 }
    }

    #[test]
    fn trace_checks() {
        let mut t = Trace::default();
        t.entries.push(sent(Bootstrapping, TwinMessage::CmdVel { v: 0.0, w: 0.0 }));
        t.entries.push(recv(Bootstrapping, scan()));
        t.entries.push(recv(Bootstrapping, status()));
        t.entries.push(TraceEntry::Phase { from: Bootstrapping, to: Navigating });
        t.entries.push(sent(Navigating, TwinMessage::Pause));
        t.entries.push(recv(Navigating, status()));
        t.entries.push(TraceEntry::Phase { from: Navigating, to: DangerPaused });
        assert!(t.check().is_ok());
        assert_eq!(t.phases(), vec![Bootstrapping, Navigating, DangerPaused]);

        let mut moving = t.clone();
        moving.entries.push(sent(DangerPaused, TwinMessage::CmdVel { v: 0.5, w: 0.0 }));
        assert!(moving.check().is_err());

        let mut idle = t.clone();
        idle.entries.push(sent(DangerPaused, TwinMessage::CmdVel { v: 0.0, w: 0.0 }));
        idle.entries.push(recv(DangerPaused, scan()));
        idle.entries.push(recv(DangerPaused, status()));
        assert!(idle.check().is_ok());

        let mut double = t.clone();
        double.entries.push(sent(DangerPaused, TwinMessage::CmdVel { v: 0.0, w: 0.0 }));
        double.entries.push(recv(DangerPaused, scan()));
        double.entries.push(recv(DangerPaused, scan()));
        assert!(double.check().is_err());

        let mut jump = t.clone();
        jump.entries.push(TraceEntry::Phase { from: DangerPaused, to: Navigating });
        assert!(jump.check().is_err());

        let text = t.to_ndjson().unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"kind\":\"sent\",\"phase\":\"bootstrapping\",\"msg\":{\"type\":\"cmd_vel\""));
        assert_eq!(Trace::from_ndjson(&text).unwrap(), t);
    }
}
