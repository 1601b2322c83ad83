//! Step through the simulated tool environment by hand and watch quality,
//! runtime and the composition score evolve.
//!
//! cargo run --example tool_environment

use trajforge::env::{Emphasis, Environment, Instruction, ToolCall};

fn main() -> trajforge::Result<()> {
    let env = Environment::default();
    let instr = Instruction::new("demo", "bedroom", 10, Emphasis::default())?;
    println!("instruction: {}", instr.text_tokens.join(" "));

    let calls = [
        ToolCall::new("init_room"),
        ToolCall::with_param("add_objects", 6),
        ToolCall::new("review"),
        ToolCall::new("resolve_collisions"),
        ToolCall::new("fit_to_boundary"),
        ToolCall::with_param("add_objects", 4),
        ToolCall::new("resolve_collisions"),
        ToolCall::new("refine_real"),
        ToolCall::new("refine_func"),
        ToolCall::new("refine_lay"),
    ];
    let r = env.execute_trajectory(&instr, &calls)?;
    println!("{:<22} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}", "call", "obj", "oob", "col", "Q", "T", "C");
    for s in &r.steps {
        let st = &s.post_state;
        println!(
            "{:<22} {:>4} {:>4} {:>4} {:>7.3} {:>7.2} {:>7.3}",
            s.call.to_string(),
            st.n_obj,
            st.n_oob,
            st.n_col,
            s.q.q_total,
            s.t_cum,
            s.c
        );
    }

    // Invalid calls flag the rollout rather than aborting it.
    let bad = env.execute_trajectory(&instr, &[ToolCall::new("init_room"), ToolCall::new("addCrowd")])?;
    println!("\nunknown tool -> valid={} failure_step={:?} ({})", bad.flags.valid, bad.flags.failure_step, bad.flags.failure.unwrap_or_default());
    Ok(())
}
