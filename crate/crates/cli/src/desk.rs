//! Desk-scale presets shared by the acceptance suite, the shipped configs and
//! the ablation command.

use sst_core::optim::Method;

use crate::config::RunConfig;

/// Synthetic recovery: 32×32 target of rank 8 (σ from 4 down to 0.5) plus a
/// tail of 0.2, observation noise 0.1, 2000 steps of batch 32.
pub const SYNTHETIC: &str = "\
[run]
steps = 2000
batch_size = 32

[task]
kind = synthetic
m = 32
n = 32
target_rank = 8
head = 4.0
tail = 0.2
noise = 0.1
eval_samples = 512

[schedule]
iteration_interval = 50
warmup_steps = 20
merge_interval = 50
merge_warmup = 20
galore_period = 200

[optim]
lr = 0.01
";

/// Reduced MLP run: 784-512-512-512-10, r = 16, 10 epochs on 10k images.
pub const MNIST: &str = "\
[run]
epochs = 10
batch_size = 128

[task]
kind = mnist
train_limit = 10000
hidden = 512, 512, 512

[schedule]
iteration_interval = 200
warmup_steps = 20
merge_interval = 200
merge_warmup = 20

[optim]
lr = 0.01
";

fn with_method(base: &str, method: Method, rank: usize, seed: u64) -> String {
    format!("{base}\n[method]\nname = {method}\nrank = {rank}\n").replacen("[run]\n", &format!("[run]\nseed = {seed}\n"), 1)
}

pub fn synthetic(method: Method, rank: usize, seed: u64) -> RunConfig {
    RunConfig::parse(&with_method(SYNTHETIC, method, rank, seed)).expect("preset parses")
}

/// Fails when no dataset root is configured.
pub fn mnist(method: Method, rank: usize, seed: u64) -> sst_core::Result<RunConfig> {
    RunConfig::parse(&with_method(MNIST, method, rank, seed))
}
