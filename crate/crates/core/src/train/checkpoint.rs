//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"PYRF"
//! version u32 (currently 1)
//! then tagged, length-prefixed sections in order:
//!   tag [u8;4]  len u32  payload [u8; len]
//!     b"CFG "   JSON CheckpointMeta
//!     b"PAR "   parameter values, f32 array
//!     b"ADMM"   Adam first moments, f32 array
//!     b"ADMV"   Adam second moments, f32 array
//!     b"SUPR"   supervision grid: min i32 array then max i32 array
//!     b"OCCU"   occupancy estimates, f32 array
//! ```
//!
//! Parameters are stored as f32 regardless of the training scalar type, so
//! save/load round-trips are bit-exact for the default f32 pipeline.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::field::hashgrid::HashGridConfig;
use crate::field::PyramidField;
use crate::math::{Aabb, Real, Vec3};
use crate::pyramid::{PyramidConfig, SupervisionGrid};
use crate::sampling::OccupancyGrid;
use crate::train::{TrainConfig, TrainState};
use crate::Error;

pub const MAGIC: &[u8; 4] = b"PYRF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub grid_config: HashGridConfig,
    pub pyramid: PyramidConfig,
    pub shared_grid: bool,
    /// Scene bounds: [min_xyz..., max_xyz...].
    pub bounds: [f64; 6],
    pub train: TrainConfig,
    pub iteration: u64,
    pub adam_step: u64,
    pub train_seconds: f64,
    pub rng_seed_hex: String,
    /// ChaCha word position split into (low, high) 64-bit halves.
    pub rng_word_pos: [u64; 2],
}

impl CheckpointMeta {
    pub fn bounds_aabb(&self) -> Aabb<f64> {
        Aabb::new(
            Vec3::new(self.bounds[0], self.bounds[1], self.bounds[2]),
            Vec3::new(self.bounds[3], self.bounds[4], self.bounds[5]),
        )
    }
}

fn write_section(out: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> std::io::Result<()> {
    out.write_all(tag)?;
    out.write_all(&(payload.len() as u32).to_le_bytes())?;
    out.write_all(payload)
}

fn f32_bytes<F: Real>(values: &[F]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

fn i32_bytes(values: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_f32s(bytes: &[u8]) -> Result<Vec<f32>, Error> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("f32 section length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn parse_i32s(bytes: &[u8]) -> Result<Vec<i32>, Error> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("i32 section length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_checkpoint<F: Real>(state: &TrainState<F>, path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let b = state.field.bounds();
    let word_pos: u128 = state.rng.get_word_pos();
    let meta = CheckpointMeta {
        format_version: VERSION,
        grid_config: *state.field.grid_config(),
        pyramid: *state.field.pyramid(),
        shared_grid: state.field.shared_grid(),
        bounds: [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z],
        train: state.config.clone(),
        iteration: state.iteration,
        adam_step: state.adam.step_count(),
        train_seconds: state.train_seconds,
        rng_seed_hex: hex_encode(&state.rng.get_seed()),
        rng_word_pos: [word_pos as u64, (word_pos >> 64) as u64],
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let io_err = |e| Error::io(path, e);
    write_section(&mut out, b"CFG ", &meta_json).map_err(io_err)?;
    write_section(&mut out, b"PAR ", &f32_bytes(state.field.store().values())).map_err(io_err)?;
    let (m, v) = state.adam.moments();
    write_section(&mut out, b"ADMM", &f32_bytes(m)).map_err(io_err)?;
    write_section(&mut out, b"ADMV", &f32_bytes(v)).map_err(io_err)?;
    let (mins, maxs) = state.supervision.snapshot();
    let mut sup = i32_bytes(&mins);
    sup.extend(i32_bytes(&maxs));
    write_section(&mut out, b"SUPR", &sup).map_err(io_err)?;
    let occ: Vec<u8> = state
        .occupancy
        .estimates()
        .iter()
        .flat_map(|e| e.to_le_bytes())
        .collect();
    write_section(&mut out, b"OCCU", &occ).map_err(io_err)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Result<Vec<u8>, Error> {
    if s.len() % 2 != 0 {
        return Err(Error::Checkpoint("odd-length hex string".into()));
    }
    (0..s.len() / 2)
        .map(|i| {
            u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Checkpoint("invalid hex in rng seed".into()))
        })
        .collect()
}

struct SectionReader<'a> {
    data: &'a [u8],
}

impl<'a> SectionReader<'a> {
    fn next(&mut self, expect: &[u8; 4]) -> Result<&'a [u8], Error> {
        if self.data.len() < 8 {
            return Err(Error::Checkpoint(format!(
                "truncated before section {:?}",
                String::from_utf8_lossy(expect)
            )));
        }
        let (tag, rest) = self.data.split_at(4);
        if tag != expect {
            return Err(Error::Checkpoint(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(expect),
                String::from_utf8_lossy(tag)
            )));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(Error::Checkpoint("section payload truncated".into()));
        }
        let (payload, remaining) = rest.split_at(len);
        self.data = remaining;
        Ok(payload)
    }
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta, Error> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes([head[4], head[5], head[6], head[7]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    let mut reader = SectionReader { data: &rest };
    let meta_bytes = reader.next(b"CFG ")?;
    serde_json::from_slice(meta_bytes).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<TrainState<F>, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut reader = SectionReader { data: &bytes[8..] };
    let meta: CheckpointMeta = serde_json::from_slice(reader.next(b"CFG ")?)
        .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    let params = parse_f32s(reader.next(b"PAR ")?)?;
    let adam_m = parse_f32s(reader.next(b"ADMM")?)?;
    let adam_v = parse_f32s(reader.next(b"ADMV")?)?;
    let sup = parse_i32s(reader.next(b"SUPR")?)?;
    let occ = parse_f32s(reader.next(b"OCCU")?)?;

    let bounds = meta.bounds_aabb();
    let mut field = PyramidField::<F>::new(
        meta.grid_config,
        meta.pyramid,
        meta.shared_grid,
        bounds,
        meta.train.seed,
    )?;
    if params.len() != field.store().len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match configuration ({})",
            params.len(),
            field.store().len()
        )));
    }
    for (dst, src) in field.store_mut().values_mut().iter_mut().zip(&params) {
        *dst = F::c(*src as f64);
    }

    let mut state = TrainState::new(field, meta.train.clone())?;
    let m: Vec<F> = adam_m.iter().map(|v| F::c(*v as f64)).collect();
    let v: Vec<F> = adam_v.iter().map(|v| F::c(*v as f64)).collect();
    if m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Checkpoint("optimizer state length mismatch".into()));
    }
    state.adam.restore(m, v, meta.adam_step);
    state.iteration = meta.iteration;
    state.train_seconds = meta.train_seconds;

    let res = meta.train.supervision_resolution;
    let n = res * res * res;
    if sup.len() != 2 * n {
        return Err(Error::Checkpoint("supervision grid size mismatch".into()));
    }
    state.supervision = SupervisionGrid::from_snapshot(
        res,
        bounds,
        meta.pyramid.levels,
        sup[..n].to_vec(),
        sup[n..].to_vec(),
    );

    let ores = meta.train.occupancy_resolution;
    if occ.len() != ores * ores * ores {
        return Err(Error::Checkpoint("occupancy grid size mismatch".into()));
    }
    let mut grid = OccupancyGrid::new(ores, bounds);
    grid.set_estimates(occ);
    state.occupancy = grid;

    let seed_bytes = hex_decode(&meta.rng_seed_hex)?;
    if seed_bytes.len() != 32 {
        return Err(Error::Checkpoint("rng seed must be 32 bytes".into()));
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&seed_bytes);
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
    let word_pos = (meta.rng_word_pos[0] as u128) | ((meta.rng_word_pos[1] as u128) << 64);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    Ok(state)
}
