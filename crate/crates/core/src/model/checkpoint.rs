//! Checkpoint file: header with the scorer shape and token layout, then one
//! record per parameter block in fixed order.

use serde::{Deserialize, Serialize};

use super::{Layout, ScorerParams, ScorerShape};
use crate::artifact::{format_err, read_jsonl, to_jsonl_bytes};
use crate::error::Result;

pub const CHECKPOINT_FORMAT: &str = "sidgen-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    shape: ScorerShape,
    checkpoint_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockRecord {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScorerParams {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            shape: self.shape.clone(),
            checkpoint_id: self.id(),
        };
        let records: Vec<BlockRecord> = self
            .blocks()
            .into_iter()
            .map(|b| BlockRecord {
                values: self.data[b.range()].to_vec(),
                name: b.name,
                rows: b.rows,
                cols: b.cols,
            })
            .collect();
        to_jsonl_bytes(CHECKPOINT_FORMAT, &meta, &records)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (meta, records): (CheckpointMeta, Vec<BlockRecord>) = read_jsonl(bytes, CHECKPOINT_FORMAT)?;
        meta.shape.validate()?;
        let total = Layout::checked_total(&meta.shape)
            .ok_or_else(|| format_err(CHECKPOINT_FORMAT, 1, "scorer too large"))?;
        let present: usize = records.iter().map(|r| r.values.len()).sum();
        if present != total {
            return Err(format_err(CHECKPOINT_FORMAT, 1, format!(
                "expected {total} parameters, found {present}"
            )));
        }
        let mut params = Self::zeros(meta.shape)?;
        let blocks = params.blocks();
        if blocks.len() != records.len() {
            return Err(format_err(CHECKPOINT_FORMAT, 1, "wrong number of parameter blocks"));
        }
        for (i, (block, rec)) in blocks.iter().zip(records).enumerate() {
            let line = i + 2;
            if block.name != rec.name || block.rows != rec.rows || block.cols != rec.cols {
                return Err(format_err(CHECKPOINT_FORMAT, line, format!(
                    "expected block {} [{}x{}], found {} [{}x{}]",
                    block.name, block.rows, block.cols, rec.name, rec.rows, rec.cols
                )));
            }
            if rec.values.len() != block.rows * block.cols {
                return Err(format_err(CHECKPOINT_FORMAT, line, "block length does not match its shape"));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(format_err(CHECKPOINT_FORMAT, line, "non-finite parameter"));
            }
            params.data[block.range()].copy_from_slice(&rec.values);
        }
        if params.id() != meta.checkpoint_id {
            return Err(format_err(CHECKPOINT_FORMAT, 1, "checkpoint id does not match contents"));
        }
        Ok(params)
    }
}
