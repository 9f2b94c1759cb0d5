#![allow(dead_code)]

use hcmarl_harness::RunConfig;

/// A config small enough that an iteration takes milliseconds.
pub const TINY: &str = "\
format_version = 1
task = rendezvous
iterations = 3
seeds = 7
eval_episodes = 2
checkpoint_every = 1

[env]
step_limit = 20

[train]
hidden = 8
rollout_length = 40
minibatch = 32
epochs = 1
consensus_minibatch = 16

[hierarchy]
layers = 1:1,3:2
embed_dim = 4
heads = 2
categories = 4
hidden = 8
";

pub fn tiny() -> RunConfig {
    RunConfig::parse(TINY).unwrap()
}

pub fn tiny_with(edits: &[(&str, &str)]) -> RunConfig {
    let mut c = tiny();
    for (k, v) in edits {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}
