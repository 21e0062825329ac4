use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::PreferencePair;

pub const TOY_PROMPTS: usize = 4;
pub const TOY_RESPONSES: usize = 4;

/// How preference pairs are laid out per prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// One pair per prompt; the two remaining responses are OOD.
    #[default]
    MainText,
    /// Two disjoint pairs per prompt covering all four responses.
    AppendixB1,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::MainText => "main-text",
            TaskMode::AppendixB1 => "appendix-b1",
        })
    }
}

impl FromStr for TaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "main-text" | "main" | "one-pair" => Ok(TaskMode::MainText),
            "appendix-b1" | "b1" | "two-pair" => Ok(TaskMode::AppendixB1),
            other => Err(format!("unknown task mode `{other}` (expected main-text or appendix-b1)")),
        }
    }
}

/// Seeded toy preference dataset over a handful of prompts and responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTask {
    pub num_prompts: usize,
    pub num_responses: usize,
    pub mode: TaskMode,
    pub pairs: Vec<PreferencePair>,
    /// Per prompt, the responses that appear in no pair, ascending.
    pub ood_indices: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Role a response plays for its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseRole {
    Chosen,
    Rejected,
    Ood,
}

impl fmt::Display for ResponseRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseRole::Chosen => "chosen",
            ResponseRole::Rejected => "rejected",
            ResponseRole::Ood => "ood",
        })
    }
}

impl ToyTask {
    pub fn pairs_for(&self, prompt: usize) -> impl Iterator<Item = &PreferencePair> {
        self.pairs.iter().filter(move |p| p.prompt == prompt)
    }

    pub fn role(&self, prompt: usize, response: usize) -> ResponseRole {
        for pair in self.pairs_for(prompt) {
            if pair.chosen == response {
                return ResponseRole::Chosen;
            }
            if pair.rejected == response {
                return ResponseRole::Rejected;
            }
        }
        ResponseRole::Ood
    }
}

/// Main-text task for `seed`.
pub fn generate_toy_task(seed: u64) -> ToyTask {
    generate_toy_task_with_mode(seed, TaskMode::MainText)
}

/// Shuffles the responses of every prompt with a ChaCha8 stream seeded by
/// `seed` and cuts the permutation into pairs.
pub fn generate_toy_task_with_mode(seed: u64, mode: TaskMode) -> ToyTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut ood_indices = Vec::with_capacity(TOY_PROMPTS);
    for prompt in 0..TOY_PROMPTS {
        let mut perm: Vec<usize> = (0..TOY_RESPONSES).collect();
        perm.shuffle(&mut rng);
        match mode {
            TaskMode::MainText => {
                pairs.push(PreferencePair { prompt, chosen: perm[0], rejected: perm[1] });
                let mut rest = perm[2..].to_vec();
                rest.sort_unstable();
                ood_indices.push(rest);
            }
            TaskMode::AppendixB1 => {
                pairs.push(PreferencePair { prompt, chosen: perm[0], rejected: perm[2] });
                pairs.push(PreferencePair { prompt, chosen: perm[1], rejected: perm[3] });
                ood_indices.push(Vec::new());
            }
        }
    }
    ToyTask { num_prompts: TOY_PROMPTS, num_responses: TOY_RESPONSES, mode, pairs, ood_indices, seed }
}
