//! Instruction augmentation by rephrasing.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::instruction::Phrasing;
use crate::env::Instruction;
use crate::error::Result;
use crate::io::derive_seed;

/// Each input followed by `variants` rephrasings with ids `{id}~v{k}`.
///
/// Variants keep the payload and differ in text from the original and from
/// each other.
pub fn augment_instructions(instrs: &[Instruction], variants: usize, seed: u64) -> Result<Vec<Instruction>> {
    let mut out = Vec::with_capacity(instrs.len() * (variants + 1));
    for instr in instrs {
        let payload = instr.payload();
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        seen.insert(instr.text_tokens.clone());
        out.push(instr.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"augment", instr.id.as_bytes()]));
        for k in 1..=variants {
            let variant = loop {
                let v = Instruction::with_phrasing(format!("{}~v{k}", instr.id), payload.clone(), &Phrasing::random(&mut rng))?;
                if seen.insert(v.text_tokens.clone()) {
                    break v;
                }
            };
            out.push(variant);
        }
    }
    Ok(out)
}
