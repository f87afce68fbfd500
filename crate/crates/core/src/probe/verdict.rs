use serde::{Deserialize, Serialize};

/// Default absolute accuracy gain required for a benign verdict.
pub const DEFAULT_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotMemorized,
    Benign,
    Malign,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NotMemorized => "not_memorized",
            Verdict::Benign => "benign",
            Verdict::Malign => "malign",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Verdict::NotMemorized, Verdict::Benign, Verdict::Malign].into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorizationVerdict {
    pub verdict: Verdict,
    pub train_acc: f64,
    pub probe_init: f64,
    pub probe_final: f64,
    pub margin: f64,
}

/// Memorization requires perfect unaugmented training accuracy; it is benign
/// when clean probing beats probing at initialization by more than `margin`.
pub fn classify_memorization(train_acc: f64, probe_init: f64, probe_final: f64, margin: f64) -> MemorizationVerdict {
    let verdict = if train_acc < 1.0 {
        Verdict::NotMemorized
    } else if probe_final > probe_init + margin {
        Verdict::Benign
    } else {
        Verdict::Malign
    };
    MemorizationVerdict { verdict, train_acc, probe_init, probe_final, margin }
}
