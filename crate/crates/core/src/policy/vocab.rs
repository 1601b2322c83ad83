//! Token vocabulary and the sequence grammar shared by every model input.
//!
//! ```text
//! context   = <instruction text> <sep> <tool names...> <hist> <history calls...>
//! target    = <calls...> [<eos>]
//! candidate = <instruction text> <sep> <tool names...> <hist> <bot> <calls...> <eos>
//! call      = <tool> | <tool> <p:value>
//! ```
//!
//! History and target calls share the region after `<hist>`, so a stepwise
//! context is exactly a trajectory prefix.

use std::collections::HashMap;

use crate::env::instruction::{
    self, level_token, num_token, room_token, Instruction, Payload, EMPHASIS_LEVELS, EMPHS,
    MAX_TARGET, NOUNS, ROOM_TYPES, VERBS, WITHS,
};
use crate::env::{Dimension, ToolCall, ToolSpec};
use crate::error::{Error, Result};
use crate::io::sha256_hex;

pub type TokenId = u32;

pub const SEP: &str = "<sep>";
pub const HIST: &str = "<hist>";
pub const BOT: &str = "<bot>";
pub const EOS: &str = "<eos>";

pub fn param_token(v: u32) -> String {
    format!("p:{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// Tool names in registry order with their parameter ranges.
    tools: Vec<(String, Option<(u32, u32)>)>,
    pub sep: TokenId,
    pub hist: TokenId,
    pub bot: TokenId,
    pub eos: TokenId,
}

/// A token sequence decoded back into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text_tokens: Vec<String>,
    pub payload: Payload,
    pub calls: Vec<ToolCall>,
    pub terminated: bool,
}

impl Vocabulary {
    pub fn new(registry: &[ToolSpec]) -> Self {
        let mut tokens: Vec<String> = [SEP, HIST, BOT, EOS].iter().map(|s| s.to_string()).collect();
        tokens.extend(registry.iter().map(|t| t.name.clone()));
        let (mut lo, mut hi) = (u32::MAX, 0);
        for (a, b) in registry.iter().filter_map(|t| t.param_range) {
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if lo <= hi {
            tokens.extend((lo..=hi).map(param_token));
        }
        tokens.extend(ROOM_TYPES.iter().map(|r| room_token(r)));
        tokens.extend((1..=MAX_TARGET).map(num_token));
        tokens.extend((0..EMPHASIS_LEVELS).map(level_token));
        for group in [&VERBS[..], &WITHS[..], &NOUNS[..], &EMPHS[..]] {
            tokens.extend(group.iter().map(|s| s.to_string()));
        }
        tokens.extend(Dimension::ALL.iter().map(|d| d.as_str().to_string()));

        let ids: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        assert_eq!(ids.len(), tokens.len(), "vocabulary tokens must be unique");
        Self {
            sep: ids[SEP],
            hist: ids[HIST],
            bot: ids[BOT],
            eos: ids[EOS],
            tools: registry
                .iter()
                .map(|t| (t.name.clone(), t.param_range))
                .collect(),
            ids,
            tokens,
        }
    }

    /// A vocabulary of the four special tokens plus `extra` filler tokens and
    /// no tools. Used to build very small models for numerical checks.
    pub fn synthetic(extra: usize) -> Self {
        let tokens: Vec<String> = [SEP, HIST, BOT, EOS]
            .iter()
            .map(|s| s.to_string())
            .chain((0..extra).map(|i| format!("t{i}")))
            .collect();
        let ids: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            sep: 0,
            hist: 1,
            bot: 2,
            eos: 3,
            tools: Vec::new(),
            ids,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }

    fn tool_range(&self, name: &str) -> Option<Option<(u32, u32)>> {
        self.tools.iter().find(|(n, _)| n == name).map(|(_, r)| *r)
    }

    pub fn is_tool(&self, id: TokenId) -> bool {
        self.token(id).is_some_and(|t| self.tool_range(t).is_some())
    }

    fn id_for(&self, field: &str, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::Encode {
            field: field.into(),
            reason: format!("`{token}` is not in the vocabulary"),
        })
    }

    pub fn encode_instruction(&self, instr: &Instruction) -> Result<Vec<TokenId>> {
        instr
            .text_tokens
            .iter()
            .map(|t| self.id_for("text_tokens", t))
            .collect()
    }

    pub fn encode_call(&self, call: &ToolCall, out: &mut Vec<TokenId>) -> Result<()> {
        let range = self.tool_range(&call.tool).ok_or_else(|| Error::Encode {
            field: "tool".into(),
            reason: format!("unknown tool `{}`", call.tool),
        })?;
        out.push(self.id_for("tool", &call.tool)?);
        match (range, call.param) {
            (None, None) => Ok(()),
            (Some((lo, hi)), Some(p)) if (lo..=hi).contains(&p) => {
                out.push(self.id_for("param", &param_token(p))?);
                Ok(())
            }
            _ => Err(Error::Encode {
                field: "param".into(),
                reason: format!("call {call} does not match the tool's parameter range"),
            }),
        }
    }

    pub fn encode_calls(&self, calls: &[ToolCall]) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(calls.len() * 2);
        for c in calls {
            self.encode_call(c, &mut out)?;
        }
        Ok(out)
    }

    /// Instruction, tool list and history, ending with the history calls (or
    /// at `<hist>` when the history is empty).
    pub fn encode_context(&self, instr: &Instruction, history: &[ToolCall]) -> Result<Vec<TokenId>> {
        let mut out = self.encode_instruction(instr)?;
        out.push(self.sep);
        for (name, _) in &self.tools {
            out.push(self.ids[name]);
        }
        out.push(self.hist);
        for c in history {
            self.encode_call(c, &mut out)?;
        }
        Ok(out)
    }

    /// A full trajectory target: calls followed by `<eos>`.
    pub fn encode_trajectory(&self, calls: &[ToolCall]) -> Result<Vec<TokenId>> {
        let mut out = self.encode_calls(calls)?;
        out.push(self.eos);
        Ok(out)
    }

    /// Discriminator input for one candidate trajectory body.
    pub fn encode_candidate(&self, context: &[TokenId], body: &[TokenId]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(context.len() + body.len() + 2);
        out.extend_from_slice(context);
        out.push(self.bot);
        out.extend_from_slice(body);
        if body.last() != Some(&self.eos) {
            out.push(self.eos);
        }
        out
    }

    /// Parses a call region. Stops at `<eos>`; anything after it is an error.
    /// `offset` is added to reported positions.
    pub fn decode_calls(&self, tokens: &[TokenId], offset: usize) -> Result<(Vec<ToolCall>, bool)> {
        let mut calls = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let pos = offset + i;
            let tok = self.token(tokens[i]).ok_or_else(|| Error::Decode {
                position: pos,
                reason: format!("unknown token id {}", tokens[i]),
            })?;
            if tokens[i] == self.eos {
                if i + 1 != tokens.len() {
                    return Err(Error::Decode {
                        position: pos + 1,
                        reason: "tokens after <eos>".into(),
                    });
                }
                return Ok((calls, true));
            }
            let range = self.tool_range(tok).ok_or_else(|| Error::Decode {
                position: pos,
                reason: format!("expected a tool name, found `{tok}`"),
            })?;
            match range {
                None => {
                    calls.push(ToolCall::new(tok));
                    i += 1;
                }
                Some((lo, hi)) => {
                    let p = tokens
                        .get(i + 1)
                        .and_then(|&t| self.token(t))
                        .and_then(|t| t.strip_prefix("p:"))
                        .and_then(|v| v.parse::<u32>().ok())
                        .filter(|v| (lo..=hi).contains(v))
                        .ok_or_else(|| Error::Decode {
                            position: pos + 1,
                            reason: format!("`{tok}` needs a parameter in [{lo}, {hi}]"),
                        })?;
                    calls.push(ToolCall::with_param(tok, p));
                    i += 2;
                }
            }
        }
        Ok((calls, false))
    }

    /// Decodes a context (optionally followed by a target) back into the
    /// instruction payload and the calls after `<hist>`.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<Decoded> {
        let name = |i: usize| -> Result<&str> {
            self.token(tokens[i]).ok_or_else(|| Error::Decode {
                position: i,
                reason: format!("unknown token id {}", tokens[i]),
            })
        };
        let sep = tokens.iter().position(|&t| t == self.sep).ok_or_else(|| Error::Decode {
            position: tokens.len(),
            reason: "missing <sep>".into(),
        })?;
        let text_tokens = (0..sep)
            .map(|i| name(i).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let payload = instruction::parse_text(&text_tokens).map_err(|e| Error::Decode {
            position: 0,
            reason: e.to_string(),
        })?;
        let mut i = sep + 1;
        for (tool, _) in &self.tools {
            if i >= tokens.len() || name(i)? != tool {
                return Err(Error::Decode {
                    position: i,
                    reason: format!("expected tool list entry `{tool}`"),
                });
            }
            i += 1;
        }
        if tokens.get(i) != Some(&self.hist) {
            return Err(Error::Decode {
                position: i,
                reason: "expected <hist>".into(),
            });
        }
        let (calls, terminated) = self.decode_calls(&tokens[i + 1..], i + 1)?;
        Ok(Decoded {
            text_tokens,
            payload,
            calls,
            terminated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{default_registry, Emphasis, ADD_OBJECTS, INIT_ROOM, REFINE_LAY, RESOLVE_COLLISIONS};

    fn vocab() -> Vocabulary {
        Vocabulary::new(&default_registry())
    }

    fn instr() -> Instruction {
        Instruction::new("x", "studio", 9, Emphasis::from_levels([1, 2, 3]).unwrap()).unwrap()
    }

    #[test]
    fn vocabulary_is_a_bijection() {
        let v = vocab();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as TokenId));
        }
        assert!(v.token(v.len() as TokenId).is_none());
    }

    #[test]
    fn empty_history_context_ends_at_hist() {
        let v = vocab();
        let ctx = v.encode_context(&instr(), &[]).unwrap();
        assert_eq!(*ctx.last().unwrap(), v.hist);
    }

    #[test]
    fn trajectory_roundtrip() {
        let v = vocab();
        let calls = vec![
            ToolCall::new(INIT_ROOM),
            ToolCall::with_param(ADD_OBJECTS, 8),
            ToolCall::new(RESOLVE_COLLISIONS),
            ToolCall::with_param(ADD_OBJECTS, 1),
            ToolCall::new(REFINE_LAY),
        ];
        let mut seq = v.encode_context(&instr(), &[]).unwrap();
        seq.extend(v.encode_trajectory(&calls).unwrap());
        let d = v.decode(&seq).unwrap();
        assert_eq!(d.calls, calls);
        assert!(d.terminated);
        assert_eq!(d.payload, instr().payload());
    }

    #[test]
    fn unknown_token_id_reports_position() {
        let v = vocab();
        let mut seq = v.encode_context(&instr(), &[ToolCall::new(INIT_ROOM)]).unwrap();
        seq.push(9999);
        let pos = seq.len() - 1;
        match v.decode(&seq) {
            Err(Error::Decode { position, .. }) => assert_eq!(position, pos),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grammar_errors() {
        let v = vocab();
        let add = v.id(ADD_OBJECTS).unwrap();
        let init = v.id(INIT_ROOM).unwrap();
        assert!(v.decode_calls(&[init, add], 0).is_err());
        assert!(v.decode_calls(&[init, add, v.id("p:3").unwrap()], 0).is_ok());
        assert!(v.decode_calls(&[v.id("p:3").unwrap()], 0).is_err());
        assert!(v.decode_calls(&[init, v.eos, init], 0).is_err());
        assert!(v.decode_calls(&[v.id("room:gym").unwrap()], 0).is_err());
    }

    #[test]
    fn encode_rejects_out_of_vocabulary() {
        let v = vocab();
        let mut i = instr();
        i.text_tokens[1] = "room:castle".into();
        match v.encode_instruction(&i) {
            Err(Error::Encode { field, .. }) => assert_eq!(field, "text_tokens"),
            other => panic!("{other:?}"),
        }
        assert!(v.encode_calls(&[ToolCall::new("addCrowd")]).is_err());
        assert!(v.encode_calls(&[ToolCall::with_param(ADD_OBJECTS, 9)]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = vocab();
        assert_eq!(a.hash(), vocab().hash());
        let mut reg = default_registry();
        reg.pop();
        assert_ne!(a.hash(), Vocabulary::new(&reg).hash());
    }
}
