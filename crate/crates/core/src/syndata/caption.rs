//! Templated captions over a fixed word vocabulary.

use serde::{Deserialize, Serialize};

use super::attrs::{DescribedMask, Direction, Gait, MotionAttributes, Posture, Speed};
use crate::error::{Error, Result};

pub const MAX_CAPTION_LEN: usize = 16;

/// Word list; a token id is an index into it. Id 0 is padding and never
/// appears inside a caption.
pub const VOCABULARY: &[&str] = &[
    "<pad>", "a", "person", "moves", "walks", "jumps", "waves", "wipes", "to", "the", "left",
    "right", "forward", "slowly", "steadily", "quickly", "while", "standing", "leaning",
    "bending", "over", "upright",
];

pub const VOCAB_SIZE: usize = 64;

/// Number of caption template variants `caption_of` chooses between.
pub const TEMPLATE_COUNT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CaptionTokens {
    pub tokens: Vec<u16>,
    pub described: DescribedMask,
}

/// Attributes recovered from a caption; `None` where it is silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PartialAttributes {
    pub gait: Option<Gait>,
    pub direction: Option<Direction>,
    pub speed: Option<Speed>,
    pub posture: Option<Posture>,
}

fn id(word: &str) -> u16 {
    VOCABULARY
        .iter()
        .position(|w| *w == word)
        .unwrap_or_else(|| panic!("word {word:?} missing from vocabulary")) as u16
}

fn gait_words(g: Gait) -> &'static [&'static str] {
    match g {
        Gait::Walk => &["walks"],
        Gait::Jump => &["jumps"],
        Gait::Wave => &["waves"],
        Gait::Wipe => &["wipes"],
    }
}

fn direction_words(d: Direction) -> &'static [&'static str] {
    match d {
        Direction::Left => &["to", "the", "left"],
        Direction::Right => &["to", "the", "right"],
        Direction::Forward => &["forward"],
    }
}

fn speed_words(s: Speed) -> &'static [&'static str] {
    match s {
        Speed::Slow => &["slowly"],
        Speed::Normal => &["steadily"],
        Speed::Fast => &["quickly"],
    }
}

fn posture_words(p: Posture) -> &'static [&'static str] {
    match p {
        Posture::Standing => &["while", "standing", "upright"],
        Posture::Leaning => &["while", "leaning"],
        Posture::Bending => &["while", "bending", "over"],
    }
}

/// Caption of a motion, mentioning exactly the attributes in `described`.
/// `seed` picks the template (word order); the empty mask always yields the
/// generic caption.
pub fn caption_of(attrs: &MotionAttributes, described: DescribedMask, seed: u64) -> CaptionTokens {
    let template = crate::rng::derive_seed(seed, 0xCA) % TEMPLATE_COUNT;
    caption_with_template(attrs, described, template)
}

pub fn caption_with_template(
    attrs: &MotionAttributes,
    described: DescribedMask,
    template: u64,
) -> CaptionTokens {
    let verb: &[&str] = if described.contains(DescribedMask::GAIT) {
        gait_words(attrs.gait)
    } else {
        &["moves"]
    };
    let dir: &[&str] = if described.contains(DescribedMask::DIRECTION) {
        direction_words(attrs.direction)
    } else {
        &[]
    };
    let speed: &[&str] = if described.contains(DescribedMask::SPEED) {
        speed_words(attrs.speed)
    } else {
        &[]
    };
    let posture: &[&str] = if described.contains(DescribedMask::POSTURE) {
        posture_words(attrs.posture)
    } else {
        &[]
    };
    let parts: [&[&str]; 6] = if template == 0 {
        [&["a", "person"], verb, dir, speed, posture, &[]]
    } else {
        [speed, &["a", "person"], verb, posture, dir, &[]]
    };
    let tokens = parts.iter().flat_map(|p| p.iter().map(|w| id(w))).collect();
    CaptionTokens { tokens, described }
}

pub fn generic_caption() -> CaptionTokens {
    CaptionTokens {
        tokens: vec![id("a"), id("person"), id("moves")],
        described: DescribedMask::NONE,
    }
}

impl CaptionTokens {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() > MAX_CAPTION_LEN {
            return Err(Error::Argument(format!(
                "caption has {} tokens, limit is {MAX_CAPTION_LEN}",
                self.tokens.len()
            )));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::Argument(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|&t| VOCABULARY.get(t as usize).copied().unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokenize free text with the caption vocabulary. Unknown words are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text
            .split_whitespace()
            .map(|w| {
                let w = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                VOCABULARY
                    .iter()
                    .skip(1)
                    .position(|v| *v == w)
                    .map(|p| (p + 1) as u16)
                    .ok_or_else(|| Error::Argument(format!("word {w:?} not in caption vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut caption = CaptionTokens {
            tokens,
            described: DescribedMask::NONE,
        };
        caption.validate()?;
        caption.described = caption.decode().mask();
        Ok(caption)
    }

    /// Recover the attributes the caption mentions.
    pub fn decode(&self) -> PartialAttributes {
        let mut out = PartialAttributes::default();
        for &t in &self.tokens {
            match VOCABULARY.get(t as usize).copied().unwrap_or("") {
                "walks" => out.gait = Some(Gait::Walk),
                "jumps" => out.gait = Some(Gait::Jump),
                "waves" => out.gait = Some(Gait::Wave),
                "wipes" => out.gait = Some(Gait::Wipe),
                "left" => out.direction = Some(Direction::Left),
                "right" => out.direction = Some(Direction::Right),
                "forward" => out.direction = Some(Direction::Forward),
                "slowly" => out.speed = Some(Speed::Slow),
                "steadily" => out.speed = Some(Speed::Normal),
                "quickly" => out.speed = Some(Speed::Fast),
                "standing" => out.posture = Some(Posture::Standing),
                "leaning" => out.posture = Some(Posture::Leaning),
                "bending" => out.posture = Some(Posture::Bending),
                _ => {}
            }
        }
        out
    }
}

impl PartialAttributes {
    pub fn mask(&self) -> DescribedMask {
        let mut m = DescribedMask::NONE;
        if self.gait.is_some() {
            m = m.with(DescribedMask::GAIT);
        }
        if self.direction.is_some() {
            m = m.with(DescribedMask::DIRECTION);
        }
        if self.speed.is_some() {
            m = m.with(DescribedMask::SPEED);
        }
        if self.posture.is_some() {
            m = m.with(DescribedMask::POSTURE);
        }
        m
    }
}
