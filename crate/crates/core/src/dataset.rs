//! Dataset container: paired samples stored in one EXGN file.
//!
//! Entries per sample `i`: `s{i}/ego`, `s{i}/exo` (f32 `[N,3,R,R]`),
//! `s{i}/ego_mask`, `s{i}/exo_mask` (u8 `[N,R,R]`), `s{i}/tokens`,
//! `s{i}/action`, `s{i}/seed` (u8), plus one `meta` entry
//! `[count, frames, res, vocab]`.

use std::path::Path;

use crate::error::{data_err, Result};
use crate::world::{vocab_size, ActionId, Clip, MaskClip, PairedSample};
use crossview_tensor::io::Container;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub count: usize,
    pub frames: usize,
    pub res: usize,
    pub vocab: usize,
}

pub fn write_dataset(samples: &[PairedSample], path: impl AsRef<Path>) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| data_err("refusing to write an empty dataset"))?;
    let (n, res) = (first.ego.frames, first.ego.res);
    let mut c = Container::new();
    c.insert_f32(
        "meta",
        &[4],
        vec![samples.len() as f32, n as f32, res as f32, vocab_size() as f32],
    )?;
    for (i, s) in samples.iter().enumerate() {
        if s.ego.frames != n || s.ego.res != res {
            return Err(data_err(format!("sample {i} has inconsistent geometry")));
        }
        let clip_shape = [n, 3, res, res];
        let mask_shape = [n, res, res];
        c.insert_f32(&format!("s{i}/ego"), &clip_shape, s.ego.data.clone())?;
        c.insert_f32(&format!("s{i}/exo"), &clip_shape, s.exo.data.clone())?;
        c.insert_u8(&format!("s{i}/ego_mask"), &mask_shape, s.ego_masks.data.clone())?;
        c.insert_u8(&format!("s{i}/exo_mask"), &mask_shape, s.exo_masks.data.clone())?;
        c.insert_u8(
            &format!("s{i}/tokens"),
            &[s.tokens.len()],
            s.tokens.iter().map(|&t| t as u8).collect(),
        )?;
        c.insert_u8(&format!("s{i}/action"), &[1], vec![s.action.code()])?;
        c.insert_u8(&format!("s{i}/seed"), &[8], s.seed.to_le_bytes().to_vec())?;
    }
    c.write_to(path)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(Vec<PairedSample>, DatasetMeta)> {
    let c = Container::read_from(path)?;
    let (mshape, mdata) = c.require_f32("meta")?;
    if mshape != [4] {
        return Err(data_err(format!("meta entry has shape {mshape:?}, expected [4]")));
    }
    let meta = DatasetMeta {
        count: mdata[0] as usize,
        frames: mdata[1] as usize,
        res: mdata[2] as usize,
        vocab: mdata[3] as usize,
    };
    let clip_shape = [meta.frames, 3, meta.res, meta.res];
    let mask_shape = [meta.frames, meta.res, meta.res];

    let mut samples = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let clip = |name: &str| -> Result<Clip> {
            let (shape, data) = c.require_f32(name)?;
            if shape != clip_shape {
                return Err(data_err(format!("{name}: shape {shape:?}, expected {clip_shape:?}")));
            }
            Ok(Clip { frames: meta.frames, res: meta.res, data: data.to_vec() })
        };
        let mask = |name: &str, what: String| -> Result<MaskClip> {
            let (shape, data) = c.require_u8(name)?;
            if shape != mask_shape {
                return Err(data_err(format!("{name}: shape {shape:?}, expected {mask_shape:?}")));
            }
            let m = MaskClip { frames: meta.frames, res: meta.res, data: data.to_vec() };
            m.validate(&what)?;
            Ok(m)
        };
        let (_, tok) = c.require_u8(&format!("s{i}/tokens"))?;
        if let Some(&bad) = tok.iter().find(|&&t| t as usize >= meta.vocab) {
            return Err(data_err(format!("sample {i}: token {bad} outside vocab {}", meta.vocab)));
        }
        let (_, action) = c.require_u8(&format!("s{i}/action"))?;
        let (sshape, seed_bytes) = c.require_u8(&format!("s{i}/seed"))?;
        if sshape != [8] {
            return Err(data_err(format!("sample {i}: malformed seed entry")));
        }
        samples.push(PairedSample {
            ego: clip(&format!("s{i}/ego"))?,
            exo: clip(&format!("s{i}/exo"))?,
            ego_masks: mask(&format!("s{i}/ego_mask"), format!("sample {i} ego_mask"))?,
            exo_masks: mask(&format!("s{i}/exo_mask"), format!("sample {i} exo_mask"))?,
            tokens: tok.iter().map(|&t| t as u16).collect(),
            seed: u64::from_le_bytes(seed_bytes.try_into().unwrap()),
            action: ActionId::from_code(action[0])?,
        });
    }
    Ok((samples, meta))
}
