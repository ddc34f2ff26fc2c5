//! Text-label vocabulary shared by the synthetic world and the denoiser.
//!
//! Labels form a small closed vocabulary: id 0 is "none", and each of the
//! three text families (instruction, scene description, action description)
//! contributes one id per ego maneuver. A sample's label under a given text
//! mode is a pure function of its ego maneuver.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    Forward,
    Stop,
    TurnLeft,
    TurnRight,
    Reverse,
}

pub const MANEUVERS: [Maneuver; 5] = [
    Maneuver::Forward,
    Maneuver::Stop,
    Maneuver::TurnLeft,
    Maneuver::TurnRight,
    Maneuver::Reverse,
];

impl Maneuver {
    pub fn index(self) -> usize {
        MANEUVERS.iter().position(|&m| m == self).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    None,
    Instruction,
    SceneDescription,
    ActionDescription,
}

pub const TEXT_MODES: [TextMode; 4] = [
    TextMode::None,
    TextMode::Instruction,
    TextMode::SceneDescription,
    TextMode::ActionDescription,
];

/// id 0 = none, then 3 families x 5 maneuvers.
pub const VOCAB_SIZE: usize = 1 + 3 * MANEUVERS.len();

pub const LABEL_NONE: usize = 0;

/// The label a scene carries under a text mode; pure in the ego maneuver.
pub fn label_id(mode: TextMode, maneuver: Maneuver) -> usize {
    let family = match mode {
        TextMode::None => return LABEL_NONE,
        TextMode::Instruction => 0,
        TextMode::SceneDescription => 1,
        TextMode::ActionDescription => 2,
    };
    1 + family * MANEUVERS.len() + maneuver.index()
}

/// Invert [`label_id`] for labeled ids; `None` for id 0.
pub fn maneuver_from_label(label: usize) -> Option<Maneuver> {
    if label == LABEL_NONE || label >= VOCAB_SIZE {
        return None;
    }
    Some(MANEUVERS[(label - 1) % MANEUVERS.len()])
}

impl std::fmt::Display for Maneuver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Maneuver::Forward => "forward",
            Maneuver::Stop => "stop",
            Maneuver::TurnLeft => "turn-left",
            Maneuver::TurnRight => "turn-right",
            Maneuver::Reverse => "reverse",
        };
        f.write_str(s)
    }
}

impl std::fmt::Display for TextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TextMode::None => "none",
            TextMode::Instruction => "instruction",
            TextMode::SceneDescription => "scene-description",
            TextMode::ActionDescription => "action-description",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_distinct_and_cover_vocab() {
        let mut seen = std::collections::HashSet::new();
        seen.insert(LABEL_NONE);
        for mode in [
            TextMode::Instruction,
            TextMode::SceneDescription,
            TextMode::ActionDescription,
        ] {
            for m in MANEUVERS {
                let id = label_id(mode, m);
                assert!(id < VOCAB_SIZE);
                assert!(seen.insert(id), "duplicate label id {id}");
            }
        }
        assert_eq!(seen.len(), VOCAB_SIZE);
    }

    #[test]
    fn none_mode_collapses_everything_to_zero() {
        for m in MANEUVERS {
            assert_eq!(label_id(TextMode::None, m), LABEL_NONE);
        }
    }

    #[test]
    fn labels_invert_to_maneuvers() {
        for m in MANEUVERS {
            let id = label_id(TextMode::SceneDescription, m);
            assert_eq!(maneuver_from_label(id), Some(m));
        }
        assert_eq!(maneuver_from_label(LABEL_NONE), None);
    }
}
