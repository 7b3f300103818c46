use serde::{Deserialize, Serialize};

/// The four emotion classes, in logit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Angry,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Self::Neutral, Self::Happy, Self::Sad, Self::Angry];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Neutral => "neutral",
            Self::Happy => "happy",
            Self::Sad => "sad",
            Self::Angry => "angry",
        }
    }

    /// Parses a label. `excited` is folded into `happy` (the usual
    /// four-class merge); any other label is rejected.
    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "neutral" | "neu" => Some(Self::Neutral),
            "happy" | "hap" | "excited" | "exc" => Some(Self::Happy),
            "sad" => Some(Self::Sad),
            "angry" | "ang" => Some(Self::Angry),
            _ => None,
        }
    }
}

impl std::fmt::Display for Emotion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
