//! User instructions: structured payload plus a canonical token phrasing.
//!
//! An instruction is written as five clauses, each opened by a marker word:
//!
//! ```text
//! <verb> room:<type>                 e.g. design room:bedroom
//! <with> num:<count> <noun>          e.g. with num:12 objects
//! <emph> <dim> lvl:<k>   (x3)        e.g. emphasize real lvl:3
//! ```
//!
//! Marker words come from small synonym tables and the clauses may appear in
//! any order, so several token phrasings decode to the same payload.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROOM_TYPES: [&str; 15] = [
    "bedroom",
    "living_room",
    "kitchen",
    "bathroom",
    "dining_room",
    "office",
    "kids_room",
    "classroom",
    "gym",
    "library",
    "restaurant",
    "laundry",
    "studio",
    "meeting_room",
    "game_room",
];

/// Room types used for training instructions.
pub const SEEN_ROOMS: &[&str] = ROOM_TYPES.split_at(10).0;
/// Room types that never appear in training instructions.
pub const UNSEEN_ROOMS: &[&str] = ROOM_TYPES.split_at(10).1;

pub const MAX_TARGET: u32 = 48;
pub const EMPHASIS_LEVELS: u8 = 5;

pub const VERBS: [&str; 4] = ["design", "create", "build", "make"];
pub const WITHS: [&str; 3] = ["with", "containing", "including"];
pub const NOUNS: [&str; 3] = ["objects", "items", "pieces"];
pub const EMPHS: [&str; 3] = ["emphasize", "prioritize", "stress"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Real,
    Func,
    Lay,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Real, Dimension::Func, Dimension::Lay];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Real => "real",
            Dimension::Func => "func",
            Dimension::Lay => "lay",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Dimension::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

/// Per-dimension emphasis, quantized to quarter steps in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Emphasis {
    levels: [u8; 3],
}

impl Emphasis {
    pub fn from_levels(levels: [u8; 3]) -> Result<Self> {
        if let Some(l) = levels.iter().find(|&&l| l >= EMPHASIS_LEVELS) {
            return Err(Error::Instruction(format!(
                "emphasis level {l} outside 0..{EMPHASIS_LEVELS}"
            )));
        }
        Ok(Self { levels })
    }

    pub fn level(&self, dim: Dimension) -> u8 {
        self.levels[dim as usize]
    }

    pub fn weight(&self, dim: Dimension) -> f64 {
        f64::from(self.level(dim)) / f64::from(EMPHASIS_LEVELS - 1)
    }

    fn level_from_weight(w: f64) -> Result<u8> {
        let scaled = w * f64::from(EMPHASIS_LEVELS - 1);
        let rounded = scaled.round();
        if !(0.0..=1.0).contains(&w) || (scaled - rounded).abs() > 1e-9 {
            return Err(Error::Instruction(format!(
                "emphasis weight {w} is not a quarter step in [0, 1]"
            )));
        }
        Ok(rounded as u8)
    }
}

#[derive(Serialize, Deserialize)]
struct EmphasisWire {
    real: f64,
    func: f64,
    lay: f64,
}

impl Serialize for Emphasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EmphasisWire {
            real: self.weight(Dimension::Real),
            func: self.weight(Dimension::Func),
            lay: self.weight(Dimension::Lay),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Emphasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = EmphasisWire::deserialize(d)?;
        let lv = |x| Emphasis::level_from_weight(x).map_err(serde::de::Error::custom);
        Ok(Emphasis {
            levels: [lv(w.real)?, lv(w.func)?, lv(w.lay)?],
        })
    }
}

/// Choice of marker synonyms and clause order for one phrasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phrasing {
    pub verb: usize,
    pub with: usize,
    pub noun: usize,
    pub emph: [usize; 3],
    /// Permutation of the clause indices 0 (room), 1 (count), 2..=4 (emphasis).
    pub order: [usize; 5],
}

impl Phrasing {
    pub const CANONICAL: Phrasing = Phrasing {
        verb: 0,
        with: 0,
        noun: 0,
        emph: [0; 3],
        order: [0, 1, 2, 3, 4],
    };

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut order = [0, 1, 2, 3, 4];
        order.shuffle(rng);
        Phrasing {
            verb: rng.gen_range(0..VERBS.len()),
            with: rng.gen_range(0..WITHS.len()),
            noun: rng.gen_range(0..NOUNS.len()),
            emph: [
                rng.gen_range(0..EMPHS.len()),
                rng.gen_range(0..EMPHS.len()),
                rng.gen_range(0..EMPHS.len()),
            ],
            order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstructionWire", into = "InstructionWire")]
pub struct Instruction {
    pub id: String,
    pub room_type: String,
    pub target_object_count: u32,
    pub emphasis: Emphasis,
    pub text_tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InstructionWire {
    id: String,
    room_type: String,
    target_object_count: u32,
    emphasis: Emphasis,
    text_tokens: Vec<String>,
}

impl TryFrom<InstructionWire> for Instruction {
    type Error = Error;

    fn try_from(w: InstructionWire) -> Result<Self> {
        let instr = Instruction {
            id: w.id,
            room_type: w.room_type,
            target_object_count: w.target_object_count,
            emphasis: w.emphasis,
            text_tokens: w.text_tokens,
        };
        instr.validate()?;
        Ok(instr)
    }
}

impl From<Instruction> for InstructionWire {
    fn from(i: Instruction) -> Self {
        InstructionWire {
            id: i.id,
            room_type: i.room_type,
            target_object_count: i.target_object_count,
            emphasis: i.emphasis,
            text_tokens: i.text_tokens,
        }
    }
}

/// The structured part of an instruction, i.e. everything but id and phrasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    pub room_type: String,
    pub target_object_count: u32,
    pub emphasis: Emphasis,
}

impl Instruction {
    /// Builds an instruction with the canonical phrasing.
    pub fn new(
        id: impl Into<String>,
        room_type: &str,
        target_object_count: u32,
        emphasis: Emphasis,
    ) -> Result<Self> {
        let payload = Payload {
            room_type: room_type.to_string(),
            target_object_count,
            emphasis,
        };
        Self::with_phrasing(id, payload, &Phrasing::CANONICAL)
    }

    pub fn with_phrasing(id: impl Into<String>, payload: Payload, phrasing: &Phrasing) -> Result<Self> {
        validate_payload(&payload)?;
        let text_tokens = render(&payload, phrasing);
        Ok(Instruction {
            id: id.into(),
            room_type: payload.room_type,
            target_object_count: payload.target_object_count,
            emphasis: payload.emphasis,
            text_tokens,
        })
    }

    /// Builds an instruction from its token phrasing alone.
    pub fn from_text(id: impl Into<String>, text_tokens: Vec<String>) -> Result<Self> {
        let payload = parse_text(&text_tokens)?;
        validate_payload(&payload)?;
        Ok(Instruction {
            id: id.into(),
            room_type: payload.room_type,
            target_object_count: payload.target_object_count,
            emphasis: payload.emphasis,
            text_tokens,
        })
    }

    pub fn payload(&self) -> Payload {
        Payload {
            room_type: self.room_type.clone(),
            target_object_count: self.target_object_count,
            emphasis: self.emphasis,
        }
    }

    /// Checks field ranges and that the text decodes to the structured fields.
    pub fn validate(&self) -> Result<()> {
        let payload = self.payload();
        validate_payload(&payload)?;
        let parsed = parse_text(&self.text_tokens)?;
        if parsed != payload {
            return Err(Error::Instruction(format!(
                "text of `{}` decodes to {parsed:?}, fields say {payload:?}",
                self.id
            )));
        }
        Ok(())
    }
}

fn validate_payload(p: &Payload) -> Result<()> {
    if !ROOM_TYPES.contains(&p.room_type.as_str()) {
        return Err(Error::Instruction(format!("unknown room type `{}`", p.room_type)));
    }
    if p.target_object_count == 0 || p.target_object_count > MAX_TARGET {
        return Err(Error::Instruction(format!(
            "target_object_count {} outside 1..={MAX_TARGET}",
            p.target_object_count
        )));
    }
    Ok(())
}

pub fn room_token(room: &str) -> String {
    format!("room:{room}")
}

pub fn num_token(n: u32) -> String {
    format!("num:{n}")
}

pub fn level_token(l: u8) -> String {
    format!("lvl:{l}")
}

fn render(p: &Payload, ph: &Phrasing) -> Vec<String> {
    let clause = |idx: usize| -> Vec<String> {
        match idx {
            0 => vec![VERBS[ph.verb].to_string(), room_token(&p.room_type)],
            1 => vec![
                WITHS[ph.with].to_string(),
                num_token(p.target_object_count),
                NOUNS[ph.noun].to_string(),
            ],
            k => {
                let dim = Dimension::ALL[k - 2];
                vec![
                    EMPHS[ph.emph[k - 2]].to_string(),
                    dim.as_str().to_string(),
                    level_token(p.emphasis.level(dim)),
                ]
            }
        }
    };
    ph.order.iter().flat_map(|&i| clause(i)).collect()
}

/// Parses a token phrasing back into its payload.
pub fn parse_text(tokens: &[String]) -> Result<Payload> {
    let err = |pos: usize, msg: String| Error::Instruction(format!("token {pos}: {msg}"));
    let mut room: Option<String> = None;
    let mut count: Option<u32> = None;
    let mut levels: [Option<u8>; 3] = [None; 3];
    let mut i = 0;
    let at = |i: usize| tokens.get(i).map(String::as_str);

    while i < tokens.len() {
        let head = tokens[i].as_str();
        if VERBS.contains(&head) {
            let r = at(i + 1)
                .and_then(|t| t.strip_prefix("room:"))
                .ok_or_else(|| err(i + 1, "expected room token".into()))?;
            if room.replace(r.to_string()).is_some() {
                return Err(err(i, "duplicate room clause".into()));
            }
            i += 2;
        } else if WITHS.contains(&head) {
            let n = at(i + 1)
                .and_then(|t| t.strip_prefix("num:"))
                .and_then(|t| t.parse::<u32>().ok())
                .ok_or_else(|| err(i + 1, "expected count token".into()))?;
            if !at(i + 2).is_some_and(|t| NOUNS.contains(&t)) {
                return Err(err(i + 2, "expected object noun".into()));
            }
            if count.replace(n).is_some() {
                return Err(err(i, "duplicate count clause".into()));
            }
            i += 3;
        } else if EMPHS.contains(&head) {
            let dim = at(i + 1)
                .and_then(Dimension::parse)
                .ok_or_else(|| err(i + 1, "expected visual dimension".into()))?;
            let lvl = at(i + 2)
                .and_then(|t| t.strip_prefix("lvl:"))
                .and_then(|t| t.parse::<u8>().ok())
                .ok_or_else(|| err(i + 2, "expected emphasis level".into()))?;
            if levels[dim as usize].replace(lvl).is_some() {
                return Err(err(i, format!("duplicate emphasis for {}", dim.as_str())));
            }
            i += 3;
        } else {
            return Err(err(i, format!("unexpected token `{head}`")));
        }
    }

    let room = room.ok_or_else(|| Error::Instruction("missing room clause".into()))?;
    let count = count.ok_or_else(|| Error::Instruction("missing count clause".into()))?;
    let mut lv = [0u8; 3];
    for d in Dimension::ALL {
        lv[d as usize] = levels[d as usize].ok_or_else(|| {
            Error::Instruction(format!("missing emphasis clause for {}", d.as_str()))
        })?;
    }
    Ok(Payload {
        room_type: room,
        target_object_count: count,
        emphasis: Emphasis::from_levels(lv)?,
    })
}

/// Draws `n` instructions over the given room types, with ids `{prefix}-{k:03}`.
pub fn generate_instructions(
    prefix: &str,
    rooms: &[&str],
    n: usize,
    target_range: (u32, u32),
    seed: u64,
) -> Result<Vec<Instruction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let room = rooms[k % rooms.len()];
            let target = rng.gen_range(target_range.0..=target_range.1);
            let levels = [
                rng.gen_range(0..EMPHASIS_LEVELS),
                rng.gen_range(0..EMPHASIS_LEVELS),
                rng.gen_range(0..EMPHASIS_LEVELS),
            ];
            Instruction::new(
                format!("{prefix}-{k:03}"),
                room,
                target,
                Emphasis::from_levels(levels)?,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Instruction {
        Instruction::new("i0", "kitchen", 12, Emphasis::from_levels([4, 2, 0]).unwrap()).unwrap()
    }

    #[test]
    fn canonical_text_layout() {
        let i = sample();
        assert_eq!(
            i.text_tokens,
            [
                "design", "room:kitchen", "with", "num:12", "objects", "emphasize", "real",
                "lvl:4", "emphasize", "func", "lvl:2", "emphasize", "lay", "lvl:0"
            ]
        );
        assert_eq!(i.emphasis.weight(Dimension::Real), 1.0);
        assert_eq!(i.emphasis.weight(Dimension::Func), 0.5);
        i.validate().unwrap();
    }

    #[test]
    fn permuted_text_parses_to_same_payload() {
        let i = sample();
        let ph = Phrasing {
            verb: 2,
            with: 1,
            noun: 2,
            emph: [1, 2, 0],
            order: [4, 1, 0, 3, 2],
        };
        let v = Instruction::with_phrasing("i0~v1", i.payload(), &ph).unwrap();
        assert_ne!(v.text_tokens, i.text_tokens);
        assert_eq!(v.payload(), i.payload());
        let back = Instruction::from_text("x", v.text_tokens.clone()).unwrap();
        assert_eq!(back.payload(), i.payload());
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(Instruction::new("a", "kitchen", 0, Emphasis::default()).is_err());
        assert!(Instruction::new("a", "castle", 3, Emphasis::default()).is_err());
        assert!(Emphasis::from_levels([5, 0, 0]).is_err());
        let mut i = sample();
        i.target_object_count = 13;
        assert!(i.validate().is_err());
    }

    #[test]
    fn parse_errors() {
        let toks = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        assert!(parse_text(&toks("design room:kitchen")).is_err());
        assert!(parse_text(&toks(
            "design room:kitchen design room:gym with num:3 items emphasize real lvl:0 emphasize func lvl:0 emphasize lay lvl:0"
        ))
        .is_err());
        assert!(parse_text(&toks("hello")).is_err());
    }

    #[test]
    fn emphasis_weights_serde() {
        let i = sample();
        let json = serde_json::to_string(&i).unwrap();
        assert!(json.contains("\"real\":1.0"));
        let back: Instruction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, i);
        let bad = json.replace("\"func\":0.5", "\"func\":0.3");
        assert!(serde_json::from_str::<Instruction>(&bad).is_err());
    }

    #[test]
    fn generated_catalog_is_deterministic() {
        let a = generate_instructions("s1", SEEN_ROOMS, 20, (4, 32), 7).unwrap();
        let b = generate_instructions("s1", SEEN_ROOMS, 20, (4, 32), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|i| SEEN_ROOMS.contains(&i.room_type.as_str())));
    }
}
