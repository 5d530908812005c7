//! Checkpoint wire format.
//!
//! ```text
//! bytes 0..4    magic "EXBC"
//! bytes 4..8    u32 LE format version (1)
//! bytes 8..16   u64 LE header length H
//! bytes 16..16+H JSON header (shapes, iteration, optimizer step, seed,
//!                config snapshot)
//! remainder     payload, little-endian f32 arrays in this order:
//!                 density          [nodes]
//!                 sh               [nodes * 27]
//!                 occupancy        [nodes] (u8, 0 or 1)
//!                 twists           [n_views * 6 * (order + 1)]
//!                 adam_m           same shape as twists
//!                 adam_v           same shape as twists
//!                 rms_density      [nodes]
//!                 rms_sh           [nodes * 27]
//! ```
//!
//! Training state is stored in f32, so encode/decode round-trips the exact
//! in-memory values: a reloaded state continues bitwise identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{TrainConfig, TrainState, TWIST_DOF};
use crate::voxel::{Bounds, VoxelGrid, SH_PER_NODE};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EXBC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    iteration: u64,
    adam_t: u64,
    seed: u64,
    dims: [usize; 3],
    bounds: Bounds,
    n_views: usize,
    bezier_order: usize,
    config: TrainConfig,
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        iteration: state.iteration,
        adam_t: state.adam_t,
        seed: state.seed,
        dims: state.grid.dims(),
        bounds: *state.grid.bounds(),
        n_views: state.twists.len(),
        bezier_order: state.config.bezier_order,
        config: state.config.clone(),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("checkpoint header encode: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(header_json.as_bytes());

    push_f32s(&mut out, state.grid.density());
    push_f32s(&mut out, state.grid.sh());
    out.extend(state.grid.occupancy().iter().map(|&b| b as u8));
    for v in &state.twists {
        push_f32s(&mut out, v);
    }
    for v in &state.adam_m {
        push_f32s(&mut out, v);
    }
    for v in &state.adam_v {
        push_f32s(&mut out, v);
    }
    push_f32s(&mut out, &state.rms_density);
    push_f32s(&mut out, &state.rms_sh);
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("checkpoint: size overflow".into()))?;
        if self.data.len() - self.pos < bytes {
            return Err(Error::Format("checkpoint: truncated payload".into()));
        }
        let out = self.data[self.pos..self.pos + bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += bytes;
        Ok(out)
    }

    fn bools(&mut self, count: usize) -> Result<Vec<bool>> {
        if self.data.len() - self.pos < count {
            return Err(Error::Format("checkpoint: truncated payload".into()));
        }
        let mut out = Vec::with_capacity(count);
        for &b in &self.data[self.pos..self.pos + count] {
            match b {
                0 => out.push(false),
                1 => out.push(true),
                _ => return Err(Error::Format("checkpoint: occupancy byte not 0/1".into())),
            }
        }
        self.pos += count;
        Ok(out)
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 || &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint: unsupported version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = 16usize
        .checked_add(usize::try_from(header_len).map_err(|_| Error::Format("checkpoint: header length overflow".into()))?)
        .ok_or_else(|| Error::Format("checkpoint: header length overflow".into()))?;
    if header_end > bytes.len() {
        return Err(Error::Format("checkpoint: header extends past the file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if header.bezier_order != header.config.bezier_order {
        return Err(Error::Format("checkpoint: order disagrees with config".into()));
    }

    let nodes = header.dims[0]
        .checked_mul(header.dims[1])
        .and_then(|v| v.checked_mul(header.dims[2]))
        .ok_or_else(|| Error::Format("checkpoint: dims overflow".into()))?;
    let coords_per_view = TWIST_DOF
        .checked_mul(header.bezier_order + 1)
        .ok_or_else(|| Error::Format("checkpoint: order overflow".into()))?;
    let twist_total = coords_per_view
        .checked_mul(header.n_views)
        .ok_or_else(|| Error::Format("checkpoint: view count overflow".into()))?;
    let payload_len = bytes.len() - header_end;
    let expected = nodes
        .checked_mul(SH_PER_NODE + 1)
        .and_then(|v| v.checked_mul(2)) // density+sh plus rms copies
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(nodes)) // occupancy bytes
        .and_then(|v| v.checked_add(twist_total.checked_mul(12)?)) // twists + m + v
        .ok_or_else(|| Error::Format("checkpoint: size overflow".into()))?;
    if payload_len != expected {
        return Err(Error::Format(format!(
            "checkpoint: payload is {payload_len} bytes, expected {expected}"
        )));
    }

    let mut r = Reader { data: bytes, pos: header_end };
    let density = r.f32s(nodes)?;
    let sh = r.f32s(nodes * SH_PER_NODE)?;
    let occupancy = r.bools(nodes)?;
    let mut twists = Vec::with_capacity(header.n_views);
    for _ in 0..header.n_views {
        twists.push(r.f32s(coords_per_view)?);
    }
    let mut adam_m = Vec::with_capacity(header.n_views);
    for _ in 0..header.n_views {
        adam_m.push(r.f32s(coords_per_view)?);
    }
    let mut adam_v = Vec::with_capacity(header.n_views);
    for _ in 0..header.n_views {
        adam_v.push(r.f32s(coords_per_view)?);
    }
    let rms_density = r.f32s(nodes)?;
    let rms_sh = r.f32s(nodes * SH_PER_NODE)?;

    let grid = VoxelGrid::from_parts(header.dims, header.bounds, density, sh, occupancy)?;
    if !twists
        .iter()
        .chain(&adam_m)
        .chain(&adam_v)
        .all(|v| v.iter().all(|x| x.is_finite()))
    {
        return Err(Error::Format("checkpoint: non-finite trajectory state".into()));
    }
    Ok(TrainState {
        config: header.config,
        iteration: header.iteration,
        grid,
        twists,
        adam_m,
        adam_v,
        adam_t: header.adam_t,
        rms_density,
        rms_sh,
        seed: header.seed,
    })
}

pub fn save(path: &std::path::Path, state: &TrainState) -> Result<()> {
    std::fs::write(path, encode(state)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<TrainState> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> TrainState {
        let config = TrainConfig {
            grid_dims: [3, 2, 2],
            bezier_order: 2,
            ..Default::default()
        };
        let grid = VoxelGrid::new([3, 2, 2], Bounds::new([-1.0; 3], [1.0; 3]).unwrap(), 0.1).unwrap();
        let coords = 6 * 3;
        TrainState {
            config,
            iteration: 42,
            grid,
            twists: vec![vec![0.25; coords]; 2],
            adam_m: vec![vec![0.5; coords]; 2],
            adam_v: vec![vec![0.75; coords]; 2],
            adam_t: 42,
            rms_density: vec![0.125; 12],
            rms_sh: vec![0.0625; 12 * SH_PER_NODE],
            seed: 7,
        }
    }

    #[test]
    fn encode_decode_roundtrip_is_exact() {
        let state = sample_state();
        let bytes = encode(&state).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let state = sample_state();
        let a = encode(&state).unwrap();
        let b = encode(&decode(&a).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = encode(&sample_state()).unwrap();
        assert!(decode(&[]).is_err());
        assert!(decode(b"EXBCxxxx").is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'Y';
        assert!(decode(&bad_magic).is_err());
        let mut bad_header_len = good.clone();
        bad_header_len[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bad_header_len).is_err());
        let mut bad_occupancy = good;
        // Occupancy block starts after density+sh floats.
        let header_len = u64::from_le_bytes(bad_occupancy[8..16].try_into().unwrap()) as usize;
        let occ_off = 16 + header_len + 12 * 4 + 12 * SH_PER_NODE * 4;
        bad_occupancy[occ_off] = 7;
        assert!(decode(&bad_occupancy).is_err());
    }
}
