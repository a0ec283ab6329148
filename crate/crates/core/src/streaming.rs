//! Token-reveal schedule tied to simulator steps, and training prefixes.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypingSchedule {
    pub steps_per_token: usize,
    pub wpm: f64,
    pub chars_per_word: f64,
    pub control_hz: f64,
}

impl Default for TypingSchedule {
    fn default() -> Self {
        Self {
            steps_per_token: 12,
            wpm: 52.24,
            chars_per_word: 5.0,
            control_hz: 13.0,
        }
    }
}

impl TypingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_token == 0 {
            return Err(Error::Config("steps_per_token must be at least 1".into()));
        }
        for (name, v) in [
            ("wpm", self.wpm),
            ("chars_per_word", self.chars_per_word),
            ("control_hz", self.control_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(alloc::format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of revealed tokens at step `t`.
    pub fn revealed(&self, full_length: usize, t: usize) -> usize {
        (t / self.steps_per_token).min(full_length)
    }

    /// First step at which all `full_length` tokens are visible.
    pub fn completion_step(&self, full_length: usize) -> usize {
        self.steps_per_token * full_length
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPrefix {
    pub tokens: Vec<String>,
    pub full_length: usize,
}

impl TokenPrefix {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.tokens.len() == self.full_length
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Whitespace word split.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(ToString::to_string).collect()
}

pub fn prefix_at_step<S: AsRef<str>>(instruction: &[S], t: usize, sched: &TypingSchedule) -> TokenPrefix {
    let k = sched.revealed(instruction.len(), t);
    TokenPrefix {
        tokens: instruction[..k].iter().map(|w| w.as_ref().to_string()).collect(),
        full_length: instruction.len(),
    }
}

/// `round(chars_per_token / (wpm·chars_per_word/60) · control_hz)`.
pub fn derive_steps_per_token(wpm: f64, chars_per_word: f64, chars_per_token: f64, control_hz: f64) -> usize {
    let chars_per_second = wpm * chars_per_word / 60.0;
    libm::round(chars_per_token / chars_per_second * control_hz) as usize
}

/// Prefix lengths `ceil(q·W/4)` for `q = 1..4`, duplicates removed.
pub fn training_prefix_lengths(w: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(4);
    for q in 1..=4 {
        let len = (q * w).div_ceil(4);
        if len > 0 && out.last() != Some(&len) {
            out.push(len);
        }
    }
    out
}

pub fn training_prefixes<S: AsRef<str>>(instruction: &[S]) -> Result<Vec<TokenPrefix>> {
    if instruction.is_empty() {
        return Err(Error::Config("instruction has no words".into()));
    }
    Ok(training_prefix_lengths(instruction.len())
        .into_iter()
        .map(|k| TokenPrefix {
            tokens: instruction[..k].iter().map(|w| w.as_ref().to_string()).collect(),
            full_length: instruction.len(),
        })
        .collect())
}

pub fn steps_to_seconds(steps: usize, control_hz: f64) -> f64 {
    steps as f64 / control_hz
}
