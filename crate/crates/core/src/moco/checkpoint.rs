//! Versioned binary checkpoint for the full trainer state.
//!
//! Layout: magic, a key=value metadata text block (integers only), the
//! architecture descriptor text block, then raw little-endian f64 sections:
//! query parameters, key parameters, Adam moments, queue entries (FIFO
//! order), and the scalar block (tau, momentum, corpus stats). Floats never
//! pass through text, so round trips are byte-identical.

use std::collections::BTreeMap;

use super::{KeyQueue, MoCoState, PretrainConfig, Pretrainer};
use crate::error::{Error, Result};
use crate::image::ChannelStats;
use crate::nn::serialize::{
    read_params, write_f64_slice, write_params, write_text_block, Reader,
};
use crate::nn::{AdamState, ArchDescriptor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCCK0001";

pub fn encode_checkpoint(trainer: &Pretrainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);

    let queue = &trainer.state.queue;
    // The worker count is a runtime concern, never part of the run's
    // identity, so it is not persisted.
    let meta = format!(
        "config_hash={:016x}\nepochs_done={}\nstep={}\nadam_t={}\nqueue_capacity={}\nqueue_len={}\n\
         epochs={}\nbatch_size={}\nqueue_size={}\nseed={}\n",
        trainer.config_hash,
        trainer.epochs_done,
        trainer.state.step,
        trainer.adam.t,
        queue.capacity(),
        queue.len(),
        trainer.config.epochs,
        trainer.config.batch_size,
        trainer.config.queue_size,
        trainer.config.seed,
    );
    write_text_block(&mut out, &meta);
    write_text_block(&mut out, &trainer.state.query.arch.to_text());

    write_params(&mut out, &trainer.state.query);
    write_params(&mut out, &trainer.state.key);
    for group in &trainer.adam.m {
        write_f64_slice(&mut out, group);
    }
    for group in &trainer.adam.v {
        write_f64_slice(&mut out, group);
    }
    for entry in queue.snapshot() {
        write_f64_slice(&mut out, &entry);
    }
    let scalars = [
        trainer.state.tau,
        trainer.state.momentum,
        trainer.config.learning_rate,
        trainer.config.tau,
        trainer.config.momentum,
        trainer.stats.mean[0],
        trainer.stats.mean[1],
        trainer.stats.mean[2],
        trainer.stats.std[0],
        trainer.stats.std[1],
        trainer.stats.std[2],
    ];
    write_f64_slice(&mut out, &scalars);
    out
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, u64>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("checkpoint metadata line without '=': {line}")))?;
        let parsed = if key == "config_hash" {
            u64::from_str_radix(value, 16)
        } else {
            value.parse()
        }
        .map_err(|_| Error::data(format!("bad checkpoint metadata value for {key}")))?;
        map.insert(key.to_string(), parsed);
    }
    Ok(map)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Pretrainer> {
    let mut reader = Reader::new(bytes);
    reader.expect_magic(CHECKPOINT_MAGIC)?;
    let meta = parse_meta(&reader.read_text_block("checkpoint metadata")?)?;
    let get = |key: &str| -> Result<u64> {
        meta.get(key)
            .copied()
            .ok_or_else(|| Error::data(format!("checkpoint metadata missing '{key}'")))
    };
    let arch = ArchDescriptor::parse(&reader.read_text_block("architecture descriptor")?)?;

    let query = read_params(&mut reader, &arch)?;
    let key = read_params(&mut reader, &arch)?;

    let group_sizes = query.group_sizes();
    let mut adam = AdamState::new(&group_sizes);
    adam.t = get("adam_t")?;
    for group in &mut adam.m {
        let values = reader.read_f64_slice("adam first moment")?;
        if values.len() != group.len() {
            return Err(Error::data("adam first-moment group size mismatch"));
        }
        group.copy_from_slice(&values);
    }
    for group in &mut adam.v {
        let values = reader.read_f64_slice("adam second moment")?;
        if values.len() != group.len() {
            return Err(Error::data("adam second-moment group size mismatch"));
        }
        group.copy_from_slice(&values);
    }

    let capacity = get("queue_capacity")? as usize;
    let len = get("queue_len")? as usize;
    let mut queue = KeyQueue::new(capacity, arch.feature_dim)?;
    let mut entries = Vec::with_capacity(len);
    for _ in 0..len {
        entries.push(reader.read_f64_slice("queue entry")?);
    }
    queue.push_batch(&entries)?;

    let scalars = reader.read_f64_slice("scalar block")?;
    if scalars.len() != 11 {
        return Err(Error::data(format!(
            "scalar block has {} entries, expected 11",
            scalars.len()
        )));
    }
    if !reader.done() {
        return Err(Error::data("trailing bytes after checkpoint payload"));
    }

    let state = MoCoState {
        query,
        key,
        queue,
        tau: scalars[0],
        momentum: scalars[1],
        step: get("step")?,
    };
    let config = PretrainConfig {
        epochs: get("epochs")? as usize,
        batch_size: get("batch_size")? as usize,
        queue_size: get("queue_size")? as usize,
        learning_rate: scalars[2],
        tau: scalars[3],
        momentum: scalars[4],
        seed: get("seed")?,
        threads: 0,
    };
    Ok(Pretrainer {
        state,
        adam,
        config,
        stats: ChannelStats {
            mean: [scalars[5], scalars[6], scalars[7]],
            std: [scalars[8], scalars[9], scalars[10]],
        },
        config_hash: get("config_hash")?,
        epochs_done: get("epochs_done")? as usize,
    })
}
